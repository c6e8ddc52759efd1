#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "corpus.hpp"

namespace icxlt {

enum class OverlongPolicy { Truncate, Error };

struct PromptTemplate {
  std::string example_sep = "\n###\n";
  std::string io_sep = "\n=>\n";
  std::string label_sep = "; ";
  std::string eos_marker = "</s>";
  std::size_t max_tokens = 1024;
  OverlongPolicy overlong = OverlongPolicy::Truncate;

  void validate() const;  // separators non-empty, pairwise distinct
};

struct RenderedInstance {
  std::string prompt;
  std::string target;
  std::size_t token_length = 0;   // tokenize(prompt).size()
  std::size_t dropped_demos = 0;  // demonstrations removed to fit max_tokens
};

// Gold label serialization: lexicographic order joined by label_sep.
std::string serialize_labels(const std::vector<std::string>& labels, const PromptTemplate& tmpl);

struct ParseDiagnostics {
  std::size_t hallucinated = 0;  // fragments that match no known label
  std::size_t duplicates = 0;    // known labels emitted more than once
  bool empty_output = false;     // no fragments at all
};

// Splits generated text on label_sep (anything past the first eos_marker is
// ignored), trims each fragment, and keeps exact matches against label_set.
// Returns the matched labels sorted and deduplicated.
std::vector<std::string> parse_labels(const std::string& text,
                                      const std::vector<std::string>& label_set,
                                      const PromptTemplate& tmpl, ParseDiagnostics* diag = nullptr);

// Rewrites text so that no template separator (or the eos marker) occurs as
// a substring: newlines inside an occurrence become spaces; occurrences that
// survive that are shrunk by dropping their first character. Idempotent on
// already-clean text.
std::string sanitize_text(const std::string& text, const PromptTemplate& tmpl);

// Prompt tokenization: separators are standalone tokens, everything between
// them splits on whitespace. This is the token stream the toy model consumes
// and the unit max_tokens is measured in.
std::vector<std::string> tokenize_prompt(const std::string& prompt, const PromptTemplate& tmpl);

// JSON round-trip for templates, shared by model bundles and experiment
// specs. Missing keys keep their defaults; the result is validated.
std::string template_to_json_text(const PromptTemplate& tmpl);
PromptTemplate template_from_json_text(const std::string& text);

// "text\n=>\n" with the gold labels as target.
RenderedInstance render_pft_instance(const Example& input, const PromptTemplate& tmpl);

// Demonstrations (in the given order), each as "text io_sep labels
// example_sep", followed by the input rendered like a plain instance. With
// an empty demo list this degenerates to render_pft_instance exactly.
RenderedInstance render_ict_instance(const Example& input, const std::vector<Example>& demos,
                                     const PromptTemplate& tmpl);

}  // namespace icxlt
