#include "km/ga.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <limits>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "km/errors.hpp"

namespace km::ga {

namespace {

using grammar::KernelExpr;

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

void collect_nodes(const KernelExpr& e, std::vector<const KernelExpr*>& out) {
  out.push_back(&e);
  for (const auto& c : e.children()) collect_nodes(c, out);
}

/// Rebuilds the tree with the preorder node `target` replaced by `repl`.
KernelExpr replace_at(const KernelExpr& e, int& cursor, int target, const KernelExpr& repl) {
  const int me = cursor++;
  if (me == target) return repl;
  if (e.op() == KernelExpr::Op::Leaf) return e;
  std::vector<KernelExpr> kids;
  kids.reserve(e.children().size());
  for (const auto& c : e.children()) kids.push_back(replace_at(c, cursor, target, repl));
  return e.op() == KernelExpr::Op::Sum ? KernelExpr::sum(std::move(kids))
                                       : KernelExpr::product(std::move(kids));
}

KernelExpr replace_at(const KernelExpr& e, int target, const KernelExpr& repl) {
  int cursor = 0;
  return replace_at(e, cursor, target, repl);
}

/// Depth clamp: descend into the child with the most leaves until the
/// expression fits the limit. Preserves a canonical subtree of the offspring.
KernelExpr clamp_depth(KernelExpr e, int max_depth) {
  while (e.depth() > max_depth) {
    const auto& kids = e.children();
    int pick = 0;
    for (int i = 1; i < static_cast<int>(kids.size()); ++i) {
      if (kids[static_cast<std::size_t>(i)].leaf_count() >
          kids[static_cast<std::size_t>(pick)].leaf_count()) {
        pick = i;
      }
    }
    e = kids[static_cast<std::size_t>(pick)];
  }
  return e;
}

KernelExpr random_tree(Rng& rng, const std::vector<grammar::BaseKind>& bases) {
  const int leaves = 1 + static_cast<int>(rng.below(4));
  KernelExpr e = KernelExpr::leaf(bases[static_cast<std::size_t>(rng.below(bases.size()))]);
  for (int i = 1; i < leaves; ++i) {
    KernelExpr l = KernelExpr::leaf(bases[static_cast<std::size_t>(rng.below(bases.size()))]);
    e = rng.below(2) == 0 ? KernelExpr::sum({e, l}) : KernelExpr::product({e, l});
  }
  return canonicalize(e);
}

bool starts_with_icase(const std::string& s, std::size_t at, const char* prefix) {
  for (std::size_t i = 0; prefix[i] != '\0'; ++i) {
    if (at + i >= s.size()) return false;
    if (std::tolower(static_cast<unsigned char>(s[at + i])) !=
        std::tolower(static_cast<unsigned char>(prefix[i]))) {
      return false;
    }
  }
  return true;
}

std::string trim_copy(const std::string& s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

/// Leading whitespace plus markdown bullets, quotes, headers and fences.
std::size_t skip_decoration(const std::string& line) {
  std::size_t b = 0;
  while (b < line.size()) {
    const char c = line[b];
    if (std::isspace(static_cast<unsigned char>(c)) || c == '>' || c == '*' || c == '#' ||
        c == '`' || c == '-') {
      ++b;
    } else {
      break;
    }
  }
  return b;
}

std::string strip_trailing_decoration(std::string s) {
  std::size_t e = s.size();
  while (e > 0) {
    const char c = s[e - 1];
    if (std::isspace(static_cast<unsigned char>(c)) || c == '`' || c == '*' || c == '\r') {
      --e;
    } else {
      break;
    }
  }
  s.resize(e);
  return s;
}

/// Markdown emphasis or fencing that hugs the expression itself, e.g. the
/// closing "**" of a bolded "**Kernel:**" label or backtick quoting. No valid
/// expression starts with these characters, so stripping them is lossless.
std::string strip_surrounding_decoration(std::string s) {
  std::size_t b = 0;
  while (b < s.size()) {
    const char c = s[b];
    if (std::isspace(static_cast<unsigned char>(c)) || c == '`' || c == '*') {
      ++b;
    } else {
      break;
    }
  }
  return strip_trailing_decoration(s.substr(b));
}

}  // namespace

void Config::validate() const {
  if (population < 2) throw std::invalid_argument("ga: population must be >= 2");
  if (!(mutation_p >= 0.0 && mutation_p <= 1.0)) {
    throw std::invalid_argument("ga: mutation probability must be in [0, 1]");
  }
  if (crossovers_per_iter < 0) throw std::invalid_argument("ga: crossovers_per_iter must be >= 0");
  if (iters < 0) throw std::invalid_argument("ga: iters must be >= 0");
  if (max_depth && *max_depth < 1) throw std::invalid_argument("ga: max_depth must be >= 1");
}

Proposal parse_proposal(const std::string& raw, std::optional<int> max_depth) {
  Proposal out;
  out.raw = raw;

  // Analysis: everything after the first "Analysis:" marker.
  {
    std::size_t at = 0;
    while (at < raw.size()) {
      std::size_t end = raw.find('\n', at);
      if (end == std::string::npos) end = raw.size();
      const std::string line = raw.substr(at, end - at);
      const std::size_t b = skip_decoration(line);
      if (starts_with_icase(line, b, "analysis:")) {
        out.analysis = trim_copy(raw.substr(at + b + 9));
        break;
      }
      at = end + 1;
    }
  }

  // Kernel: the first matching line decides the outcome.
  std::size_t at = 0;
  bool found = false;
  while (at < raw.size()) {
    std::size_t end = raw.find('\n', at);
    if (end == std::string::npos) end = raw.size();
    const std::string line = raw.substr(at, end - at);
    at = end + 1;
    const std::size_t b = skip_decoration(line);
    if (!starts_with_icase(line, b, "kernel:")) continue;
    found = true;
    const std::string candidate = strip_surrounding_decoration(trim_copy(line.substr(b + 7)));
    try {
      KernelExpr expr = grammar::parse_expr(candidate);
      if (max_depth && expr.depth() > *max_depth) {
        out.failure = "depth " + std::to_string(expr.depth()) + " exceeds limit " +
                      std::to_string(*max_depth);
      } else {
        out.expr = std::move(expr);
      }
    } catch (const ParseError& e) {
      out.failure = std::string("kernel line did not parse: ") + e.what();
    }
    break;
  }
  if (!found) out.failure = "no Kernel: line found";
  return out;
}

MockProposer::MockProposer(std::uint64_t seed) : rng_(derive_seed(seed, "mock-proposer")) {}

Proposal MockProposer::crossover(const KernelExpr& parent1, double /*fitness1*/,
                                 const KernelExpr& parent2, double /*fitness2*/,
                                 const Config& config) {
  std::vector<const KernelExpr*> nodes1;
  std::vector<const KernelExpr*> nodes2;
  collect_nodes(parent1, nodes1);
  collect_nodes(parent2, nodes2);

  const int target = static_cast<int>(rng_.below(nodes1.size()));
  const KernelExpr& donor = *nodes2[static_cast<std::size_t>(rng_.below(nodes2.size()))];
  KernelExpr offspring = canonicalize(replace_at(parent1, target, donor));
  if (config.max_depth) offspring = clamp_depth(std::move(offspring), *config.max_depth);

  const std::string raw = "Kernel: " + grammar::print_expr(offspring) +
                          "\nAnalysis: grafted a subtree of parent 2 into parent 1";
  Proposal p = parse_proposal(raw, config.max_depth);
  p.source = ProposerKind::mock;
  return p;
}

Proposal MockProposer::mutate(const KernelExpr& kernel, double /*fitness*/, const Config& config) {
  std::vector<const KernelExpr*> nodes;
  collect_nodes(kernel, nodes);
  std::vector<int> leaf_idx;
  std::vector<int> op_idx;
  for (int i = 0; i < static_cast<int>(nodes.size()); ++i) {
    if (nodes[static_cast<std::size_t>(i)]->op() == KernelExpr::Op::Leaf) {
      leaf_idx.push_back(i);
    } else {
      op_idx.push_back(i);
    }
  }

  KernelExpr mutant = kernel;
  std::string what;
  const bool flip_op = !op_idx.empty() && rng_.below(2) == 0;
  if (flip_op) {
    const int target = op_idx[static_cast<std::size_t>(rng_.below(op_idx.size()))];
    const KernelExpr& node = *nodes[static_cast<std::size_t>(target)];
    std::vector<KernelExpr> kids(node.children().begin(), node.children().end());
    const KernelExpr flipped = node.op() == KernelExpr::Op::Sum
                                   ? KernelExpr::product(std::move(kids))
                                   : KernelExpr::sum(std::move(kids));
    mutant = replace_at(kernel, target, flipped);
    what = "flipped an operator";
  } else {
    const int target = leaf_idx[static_cast<std::size_t>(rng_.below(leaf_idx.size()))];
    const grammar::BaseKind old = nodes[static_cast<std::size_t>(target)]->base();
    std::vector<grammar::BaseKind> options;
    for (const auto b : grammar::default_bases()) {
      if (b != old) options.push_back(b);
    }
    const grammar::BaseKind pick = options[static_cast<std::size_t>(rng_.below(options.size()))];
    mutant = replace_at(kernel, target, KernelExpr::leaf(pick));
    what = "substituted a base kernel";
  }
  mutant = canonicalize(mutant);
  if (config.max_depth) mutant = clamp_depth(std::move(mutant), *config.max_depth);

  const std::string raw =
      "Kernel: " + grammar::print_expr(mutant) + "\nAnalysis: " + what;
  Proposal p = parse_proposal(raw, config.max_depth);
  p.source = ProposerKind::mock;
  return p;
}

search::SearchTrace run_ga_objective(const grammar::KernelLibrary& library,
                                     const ExprObjective& objective, const Config& config,
                                     Proposer& proposer) {
  config.validate();

  search::SearchTrace trace;
  trace.method = "ga";
  trace.seed = config.seed;

  std::unordered_map<std::string, double> memo;
  double best = -std::numeric_limits<double>::infinity();
  int generation = 0;

  const auto evaluate = [&](const KernelExpr& e) -> double {
    const std::string key = e.canonical_string();
    if (const auto it = memo.find(key); it != memo.end()) return it->second;
    const double t0 = now_seconds();
    const double value = objective(e);
    const double t1 = now_seconds();
    memo.emplace(key, value);
    best = std::max(best, value);
    search::TraceRecord r;
    r.iteration = generation;
    r.kernel_index = library.index_of(key);
    r.expr = key;
    r.lml = value;
    r.best_lml = best;
    r.acquisition = 0.0;
    r.wall_clock_s = t1 - t0;
    trace.records.push_back(std::move(r));
    return value;
  };

  // Initial population: uniform library draws within the depth limit, or
  // random grammar trees when unrestricted.
  std::vector<KernelExpr> pop;
  std::vector<double> fitness;
  {
    Rng init_rng(derive_seed(config.seed, "ga-init"));
    const auto bases = library.bases.empty() ? grammar::default_bases() : library.bases;
    for (int i = 0; i < config.population; ++i) {
      if (config.max_depth) {
        std::vector<int> eligible;
        for (const auto& entry : library.entries) {
          if (entry.depth <= *config.max_depth) eligible.push_back(entry.index);
        }
        if (eligible.empty()) {
          throw std::invalid_argument("run_ga: library has no entries within the depth limit");
        }
        const int pick = eligible[static_cast<std::size_t>(init_rng.below(eligible.size()))];
        pop.push_back(library.entries[static_cast<std::size_t>(pick)].expr);
      } else {
        pop.push_back(random_tree(init_rng, bases));
      }
    }
    for (const auto& e : pop) fitness.push_back(evaluate(e));
  }

  try {
    for (generation = 1; generation <= config.iters; ++generation) {
      // Elite: lowest index among the current maxima, protected this round.
      int elite = 0;
      for (int m = 1; m < config.population; ++m) {
        if (fitness[static_cast<std::size_t>(m)] > fitness[static_cast<std::size_t>(elite)]) {
          elite = m;
        }
      }

      Rng iter_rng(derive_seed(config.seed, "ga-iter", static_cast<std::uint64_t>(generation)));

      for (int c = 0; c < config.crossovers_per_iter; ++c) {
        // Parents: best two of a seeded 3-tournament (rank-based).
        std::vector<int> order(static_cast<std::size_t>(config.population));
        std::iota(order.begin(), order.end(), 0);
        iter_rng.shuffle(order);
        std::vector<int> entrants(order.begin(),
                                  order.begin() + std::min<std::size_t>(3, order.size()));
        std::sort(entrants.begin(), entrants.end(), [&](int a, int b) {
          const double fa = fitness[static_cast<std::size_t>(a)];
          const double fb = fitness[static_cast<std::size_t>(b)];
          if (fa != fb) return fa > fb;
          return a < b;
        });
        const int p1 = entrants[0];
        const int p2 = entrants[1];

        Proposal prop =
            proposer.crossover(pop[static_cast<std::size_t>(p1)],
                               fitness[static_cast<std::size_t>(p1)],
                               pop[static_cast<std::size_t>(p2)],
                               fitness[static_cast<std::size_t>(p2)], config);
        if (!prop.expr) {
          ++trace.failed_proposals;
          continue;
        }
        const double value = evaluate(*prop.expr);
        int worst = -1;
        for (int m = 0; m < config.population; ++m) {
          if (m == elite) continue;
          if (worst < 0 ||
              fitness[static_cast<std::size_t>(m)] < fitness[static_cast<std::size_t>(worst)]) {
            worst = m;
          }
        }
        pop[static_cast<std::size_t>(worst)] = *prop.expr;
        fitness[static_cast<std::size_t>(worst)] = value;
      }

      for (int m = 0; m < config.population; ++m) {
        if (m == elite) continue;
        if (iter_rng.uniform() >= config.mutation_p) continue;
        Proposal prop = proposer.mutate(pop[static_cast<std::size_t>(m)],
                                        fitness[static_cast<std::size_t>(m)], config);
        if (!prop.expr) {
          ++trace.failed_proposals;
          continue;
        }
        const double value = evaluate(*prop.expr);
        pop[static_cast<std::size_t>(m)] = *prop.expr;
        fitness[static_cast<std::size_t>(m)] = value;
      }
    }
  } catch (const TransportError& e) {
    trace.abort_reason = e.what();
  }
  return trace;
}

search::SearchTrace run_ga(const grammar::KernelLibrary& library, const Dataset& data,
                           const Config& config, Proposer& proposer,
                           const gp::FitBudget& budget) {
  auto counter = std::make_shared<std::uint64_t>(0);
  const std::uint64_t seed = config.seed;
  const ExprObjective objective = [&data, budget, seed, counter](const KernelExpr& e) -> double {
    const std::uint64_t index = (*counter)++;
    try {
      return gp::fit_gp(e, data, budget, derive_seed(seed, "fit-gp", index)).lml;
    } catch (const FitError&) {
      return search::kFailedFitSentinel;
    } catch (const NumericalError&) {
      return search::kFailedFitSentinel;
    }
  };
  return run_ga_objective(library, objective, config, proposer);
}

}  // namespace km::ga
