#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace km::prompts {

/// The five fixed prompt templates used by the LLM-guided GA.
enum class Kind { system_unrestricted, system_depth, crossover, mutation, depth_note };

[[nodiscard]] std::string_view kind_name(Kind k);
[[nodiscard]] Kind kind_from_name(std::string_view name);

/// Raw template text with its {slot} markers intact. Templates are frozen
/// byte-for-byte (golden-file tested); edits here invalidate recorded runs.
[[nodiscard]] std::string_view template_text(Kind kind);

/// Values for the template slots. Only the slots a template mentions are
/// consumed; fitness values render with exactly three decimals. An engaged
/// but empty depth_constraint is valid and substitutes the empty string.
struct Slots {
  std::optional<std::string> parent1;
  std::optional<std::string> parent2;
  std::optional<std::string> kernel;
  std::optional<std::string> operators;
  std::optional<std::string> base_kernels;      // fills {base kernels}
  std::optional<std::string> depth_constraint;  // fills {depth constraint}
  std::optional<double> fitness1;
  std::optional<double> fitness2;
  std::optional<double> fitness;
  std::optional<int> max_depth;  // fills {max depth} and {max_depth}
};

/// Substitutes the slots into the template. Any marker left unfilled raises
/// TemplateError naming it; extra engaged slots are ignored.
[[nodiscard]] std::string render_prompt(Kind kind, const Slots& slots);

/// The depth note with the limit substituted.
[[nodiscard]] std::string depth_note(int max_depth);

}  // namespace km::prompts
