#include "km/prompts.hpp"

#include <cstdio>
#include <stdexcept>
#include <string>

#include "km/errors.hpp"

namespace km::prompts {

namespace {

constexpr std::string_view kSystemUnrestricted =
    "You are an expert in Gaussian processes and kernel design.\n"
    "Available base kernels: SE (Squared Exponential/RBF), PER (Periodic), RQ (Rational "
    "Quadratic)\n"
    "Available operators: + (addition), * (multiplication)\n"
    "Your task is to propose kernel expressions that maximize the log marginal likelihood (LML) "
    "on the observed data.\n"
    "Higher LML values indicate better fit to the data.\n"
    "IMPORTANT: Output format must be:\n"
    "Kernel: <kernel_expression>\n"
    "Analysis: <your reasoning>\n"
    "Kernel expressions must use parentheses for compound operations, e.g., (SE + PER), (SE * "
    "RQ), ((SE + PER) * RQ)";

// The trailing space on the first line is part of the frozen text.
constexpr std::string_view kSystemDepth =
    "You are an expert in Gaussian processes and kernel design. \n"
    "Available base kernels: SE (Squared Exponential/RBF), PER (Periodic), RQ (Rational "
    "Quadratic)\n"
    "Available operators: + (addition), * (multiplication)\n"
    "Your task is to propose kernel expressions that maximize the log marginal likelihood (LML) "
    "on the observed data.\n"
    "Higher LML values indicate better fit to the data.\n"
    "CRITICAL CONSTRAINT: The kernel expression depth must not exceed {max depth}.\n"
    "- Depth 1: Single base kernel (e.g., SE, PER, RQ)\n"
    "- Depth 2: One operation (e.g., (SE + PER), (SE * RQ))\n"
    "- Depth 3: Two operations (e.g., ((SE + PER) * RQ), (SE + (PER * RQ)))\n"
    "IMPORTANT: Output format must be:\n"
    "Kernel: <kernel_expression>\n"
    "Analysis: <your reasoning>\n"
    "Kernel expressions must use parentheses for compound operations. Keep expressions simple "
    "and within the depth limit!";

constexpr std::string_view kCrossover =
    "You are given two parent kernels and their LML fitness scores:\n"
    "Parent 1: {parent1} (LML: {fitness1:.3f})\n"
    "Parent 2: {parent2} (LML: {fitness2:.3f})\n"
    "Please propose a new kernel that combines the strengths of both parents and may achieve "
    "higher LML.\n"
    "You can use operators: {operators}\n"
    "{depth constraint}\n"
    "Output format:\n"
    "Kernel: <your_kernel>\n"
    "Analysis: <brief explanation>";

constexpr std::string_view kMutation =
    "You are given a kernel and its LML fitness score:\n"
    "Current: {kernel} (LML: {fitness:.3f})\n"
    "Please propose a modified kernel that may achieve higher LML.\n"
    "You can replace base kernels with: {base kernels}\n"
    "Or add/modify operators: {operators}\n"
    "{depth constraint}\n"
    "Output format:\n"
    "Kernel: <your_kernel>\n"
    "Analysis: <brief explanation>";

constexpr std::string_view kDepthNote =
    "IMPORTANT: Keep kernel depth at most {max_depth}. Avoid deeply nested expressions!";

std::string format_fitness(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

void replace_all(std::string& text, std::string_view marker, const std::string& value) {
  std::size_t at = 0;
  while ((at = text.find(marker, at)) != std::string::npos) {
    text.replace(at, marker.size(), value);
    at += value.size();
  }
}

}  // namespace

std::string_view kind_name(Kind k) {
  switch (k) {
    case Kind::system_unrestricted:
      return "system_unrestricted";
    case Kind::system_depth:
      return "system_depth";
    case Kind::crossover:
      return "crossover";
    case Kind::mutation:
      return "mutation";
    case Kind::depth_note:
      return "depth_note";
  }
  throw std::invalid_argument("unknown prompt kind");
}

Kind kind_from_name(std::string_view name) {
  if (name == "system_unrestricted") return Kind::system_unrestricted;
  if (name == "system_depth") return Kind::system_depth;
  if (name == "crossover") return Kind::crossover;
  if (name == "mutation") return Kind::mutation;
  if (name == "depth_note") return Kind::depth_note;
  throw std::invalid_argument("unknown prompt kind: " + std::string(name));
}

std::string_view template_text(Kind kind) {
  switch (kind) {
    case Kind::system_unrestricted:
      return kSystemUnrestricted;
    case Kind::system_depth:
      return kSystemDepth;
    case Kind::crossover:
      return kCrossover;
    case Kind::mutation:
      return kMutation;
    case Kind::depth_note:
      return kDepthNote;
  }
  throw std::invalid_argument("unknown prompt kind");
}

std::string render_prompt(Kind kind, const Slots& slots) {
  std::string text{template_text(kind)};

  if (slots.parent1) replace_all(text, "{parent1}", *slots.parent1);
  if (slots.parent2) replace_all(text, "{parent2}", *slots.parent2);
  if (slots.kernel) replace_all(text, "{kernel}", *slots.kernel);
  if (slots.operators) replace_all(text, "{operators}", *slots.operators);
  if (slots.base_kernels) replace_all(text, "{base kernels}", *slots.base_kernels);
  if (slots.depth_constraint) replace_all(text, "{depth constraint}", *slots.depth_constraint);
  if (slots.fitness1) replace_all(text, "{fitness1:.3f}", format_fitness(*slots.fitness1));
  if (slots.fitness2) replace_all(text, "{fitness2:.3f}", format_fitness(*slots.fitness2));
  if (slots.fitness) replace_all(text, "{fitness:.3f}", format_fitness(*slots.fitness));
  if (slots.max_depth) {
    const std::string depth = std::to_string(*slots.max_depth);
    replace_all(text, "{max depth}", depth);
    replace_all(text, "{max_depth}", depth);
  }

  const std::size_t open = text.find('{');
  if (open != std::string::npos) {
    const std::size_t close = text.find('}', open);
    const std::string name = close == std::string::npos
                                 ? text.substr(open + 1)
                                 : text.substr(open + 1, close - open - 1);
    throw TemplateError("unfilled prompt slot {" + name + "} in template '" +
                        std::string(kind_name(kind)) + "'");
  }
  return text;
}

std::string depth_note(int max_depth) {
  Slots slots;
  slots.max_depth = max_depth;
  return render_prompt(Kind::depth_note, slots);
}

}  // namespace km::prompts
