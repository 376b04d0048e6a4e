#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>

#include "km/dataset.hpp"
#include "km/gp.hpp"
#include "km/grammar.hpp"
#include "km/rng.hpp"
#include "km/search.hpp"

namespace km::ga {

/// Default user-prompt slot values for {operators} and {base kernels}.
inline constexpr std::string_view kOperatorsSlot = "+, *";
inline constexpr std::string_view kBaseKernelsSlot = "SE, PER, RQ";

struct Config {
  int population = 6;
  int crossovers_per_iter = 1;
  double mutation_p = 0.7;
  std::optional<int> max_depth;  // absent = unrestricted grammar, no depth note
  double temperature = 0.7;
  int iters = 12;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument unless population >= 2, mutation_p in
  /// [0, 1], crossovers_per_iter >= 0 and iters >= 0.
  void validate() const;
};

enum class ProposerKind { mock, llm };

/// Outcome of one proposer call. Failures (unparseable text, depth
/// violations) are data, never exceptions: the GA keeps running.
struct Proposal {
  std::string raw;                          // full proposer output
  std::string analysis;                     // text after the "Analysis:" marker
  std::optional<grammar::KernelExpr> expr;  // canonical, within the depth limit
  std::string failure;                      // reason when expr is absent
  ProposerKind source = ProposerKind::mock;
};

/// Extracts the first "Kernel:" line (case-insensitive, tolerant of leading
/// whitespace and markdown decoration), parses it and enforces the depth
/// limit when one is declared.
[[nodiscard]] Proposal parse_proposal(const std::string& raw, std::optional<int> max_depth);

class Proposer {
 public:
  virtual ~Proposer() = default;
  [[nodiscard]] virtual Proposal crossover(const grammar::KernelExpr& parent1, double fitness1,
                                           const grammar::KernelExpr& parent2, double fitness2,
                                           const Config& config) = 0;
  [[nodiscard]] virtual Proposal mutate(const grammar::KernelExpr& kernel, double fitness,
                                        const Config& config) = 0;
};

/// Deterministic offline stand-in for the live proposer. Crossover grafts a
/// seeded random subtree of one parent into the other, canonicalizes and
/// clamps to the depth limit by descending into the largest child while the
/// limit is exceeded; mutation either substitutes a random leaf's base kernel
/// or flips a random operator node. Output is emitted in the same
/// "Kernel:/Analysis:" text format the live proposer returns, so the parsing
/// path is shared.
class MockProposer final : public Proposer {
 public:
  explicit MockProposer(std::uint64_t seed);

  [[nodiscard]] Proposal crossover(const grammar::KernelExpr& parent1, double fitness1,
                                   const grammar::KernelExpr& parent2, double fitness2,
                                   const Config& config) override;
  [[nodiscard]] Proposal mutate(const grammar::KernelExpr& kernel, double fitness,
                                const Config& config) override;

 private:
  Rng rng_;
};

/// Expression-keyed objective for harness experiments (the default fits a GP
/// and returns its LML, kFailedFitSentinel on failure).
using ExprObjective = std::function<double(const grammar::KernelExpr&)>;

/// Genetic algorithm over kernel expressions. The population initializes by
/// seeded uniform draws from `library` entries within the depth limit
/// (seeded random grammar trees of 1-4 leaves when unrestricted). Each
/// iteration: parents = best two of a seeded 3-tournament, one crossover
/// offspring per `crossovers_per_iter` replaces the worst non-elite member,
/// then every non-elite member independently mutates with probability
/// `mutation_p`. Invalid proposals retain the incumbent and increment
/// `failed_proposals`. Fitness is memoized by canonical string, so a repeated
/// expression is never refit and the trace records only new evaluations
/// (iteration field = generation, 0 for the initial population). A proposer
/// transport failure stops the run and returns the partial trace with
/// `abort_reason` set. Method name: "ga".
[[nodiscard]] search::SearchTrace run_ga(const grammar::KernelLibrary& library,
                                         const Dataset& data, const Config& config,
                                         Proposer& proposer, const gp::FitBudget& budget = {});
[[nodiscard]] search::SearchTrace run_ga_objective(const grammar::KernelLibrary& library,
                                                   const ExprObjective& objective,
                                                   const Config& config, Proposer& proposer);

}  // namespace km::ga
