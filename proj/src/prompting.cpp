#include "prompting.hpp"

#include <algorithm>
#include <array>
#include <set>

#include <json.hpp>

#include "util.hpp"

namespace icxlt {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

void split_whitespace(const std::string& chunk, std::vector<std::string>& out) {
  std::size_t i = 0;
  while (i < chunk.size()) {
    while (i < chunk.size() && std::isspace(static_cast<unsigned char>(chunk[i]))) ++i;
    std::size_t start = i;
    while (i < chunk.size() && !std::isspace(static_cast<unsigned char>(chunk[i]))) ++i;
    if (i > start) out.push_back(chunk.substr(start, i - start));
  }
}

}  // namespace

void PromptTemplate::validate() const {
  std::array<const std::string*, 4> seps = {&example_sep, &io_sep, &label_sep, &eos_marker};
  for (const auto* s : seps)
    if (s->empty()) fail(ErrKind::Config, "prompt template separators must be non-empty");
  for (std::size_t i = 0; i < seps.size(); ++i)
    for (std::size_t j = i + 1; j < seps.size(); ++j)
      if (*seps[i] == *seps[j]) fail(ErrKind::Config, "prompt template separators must be pairwise distinct");
  if (max_tokens == 0) fail(ErrKind::Config, "max_tokens must be positive");
}

std::string serialize_labels(const std::vector<std::string>& labels, const PromptTemplate& tmpl) {
  std::vector<std::string> sorted = labels;
  std::sort(sorted.begin(), sorted.end());
  return join(sorted, tmpl.label_sep);
}

std::vector<std::string> parse_labels(const std::string& text,
                                      const std::vector<std::string>& label_set,
                                      const PromptTemplate& tmpl, ParseDiagnostics* diag) {
  ParseDiagnostics local;
  std::string body = text;
  if (auto pos = body.find(tmpl.eos_marker); pos != std::string::npos) body.resize(pos);

  std::vector<std::string> fragments;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = body.find(tmpl.label_sep, start);
    if (pos == std::string::npos) {
      fragments.push_back(body.substr(start));
      break;
    }
    fragments.push_back(body.substr(start, pos - start));
    start = pos + tmpl.label_sep.size();
  }

  std::set<std::string> known(label_set.begin(), label_set.end());
  std::set<std::string> found;
  std::size_t total_fragments = 0;
  for (const auto& raw : fragments) {
    std::string frag = trim(raw);
    if (frag.empty()) continue;
    ++total_fragments;
    if (known.count(frag)) {
      if (!found.insert(frag).second) ++local.duplicates;
    } else {
      ++local.hallucinated;
    }
  }
  local.empty_output = total_fragments == 0;
  if (diag) *diag = local;
  return {found.begin(), found.end()};
}

std::string sanitize_text(const std::string& text, const PromptTemplate& tmpl) {
  std::array<const std::string*, 4> seps = {&tmpl.example_sep, &tmpl.io_sep, &tmpl.label_sep,
                                            &tmpl.eos_marker};
  std::string out = text;
  for (int guard = 0; guard < 64; ++guard) {
    bool changed = false;
    for (const auto* sep : seps) {
      std::size_t pos;
      while ((pos = out.find(*sep)) != std::string::npos) {
        std::string repl = *sep;
        std::replace(repl.begin(), repl.end(), '\n', ' ');
        if (repl == *sep) repl = sep->substr(1);
        out.replace(pos, sep->size(), repl);
        changed = true;
      }
    }
    if (!changed) return out;
  }
  fail(ErrKind::Data, "sanitize_text did not converge for: " + text);
}

std::vector<std::string> tokenize_prompt(const std::string& prompt, const PromptTemplate& tmpl) {
  // Longer separators match first so a separator that contains another as a
  // prefix cannot be shadowed.
  std::vector<const std::string*> seps = {&tmpl.example_sep, &tmpl.io_sep, &tmpl.label_sep,
                                          &tmpl.eos_marker};
  std::sort(seps.begin(), seps.end(),
            [](const std::string* a, const std::string* b) { return a->size() > b->size(); });

  std::vector<std::string> tokens;
  std::string chunk;
  std::size_t i = 0;
  while (i < prompt.size()) {
    const std::string* hit = nullptr;
    for (const auto* sep : seps) {
      if (prompt.compare(i, sep->size(), *sep) == 0) {
        hit = sep;
        break;
      }
    }
    if (hit) {
      split_whitespace(chunk, tokens);
      chunk.clear();
      tokens.push_back(*hit);
      i += hit->size();
    } else {
      chunk.push_back(prompt[i]);
      ++i;
    }
  }
  split_whitespace(chunk, tokens);
  return tokens;
}

namespace {

std::string render_demo_piece(const Example& demo, const PromptTemplate& tmpl) {
  return sanitize_text(demo.text, tmpl) + tmpl.io_sep + serialize_labels(demo.labels, tmpl) +
         tmpl.example_sep;
}

}  // namespace

RenderedInstance render_pft_instance(const Example& input, const PromptTemplate& tmpl) {
  return render_ict_instance(input, {}, tmpl);
}

RenderedInstance render_ict_instance(const Example& input, const std::vector<Example>& demos,
                                     const PromptTemplate& tmpl) {
  tmpl.validate();
  RenderedInstance out;
  out.target = serialize_labels(input.labels, tmpl);

  const std::string tail = sanitize_text(input.text, tmpl) + tmpl.io_sep;
  const std::size_t tail_tokens = tokenize_prompt(tail, tmpl).size();

  std::vector<std::string> pieces;
  std::vector<std::size_t> piece_tokens;
  std::size_t total = tail_tokens;
  pieces.reserve(demos.size());
  for (const auto& demo : demos) {
    pieces.push_back(render_demo_piece(demo, tmpl));
    piece_tokens.push_back(tokenize_prompt(pieces.back(), tmpl).size());
    total += piece_tokens.back();
  }

  std::size_t first = 0;  // demos [first, n) survive
  while (total > tmpl.max_tokens && first < pieces.size()) {
    if (tmpl.overlong == OverlongPolicy::Error)
      fail(ErrKind::Data, "prompt exceeds max_tokens (" + std::to_string(total) + " > " +
                              std::to_string(tmpl.max_tokens) + ")");
    total -= piece_tokens[first];
    ++first;
    ++out.dropped_demos;
  }
  if (total > tmpl.max_tokens)
    fail(ErrKind::Data, "input alone exceeds max_tokens (" + std::to_string(total) + " > " +
                            std::to_string(tmpl.max_tokens) + ")");

  std::string prompt;
  for (std::size_t i = first; i < pieces.size(); ++i) prompt += pieces[i];
  prompt += tail;
  out.prompt = std::move(prompt);
  out.token_length = total;
  return out;
}

std::string template_to_json_text(const PromptTemplate& tmpl) {
  nlohmann::json j;
  j["example_sep"] = tmpl.example_sep;
  j["io_sep"] = tmpl.io_sep;
  j["label_sep"] = tmpl.label_sep;
  j["eos_marker"] = tmpl.eos_marker;
  j["max_tokens"] = tmpl.max_tokens;
  j["overlong"] = tmpl.overlong == OverlongPolicy::Truncate ? "truncate" : "error";
  return j.dump();
}

PromptTemplate template_from_json_text(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    fail(ErrKind::Config, "template must be a JSON object");
  PromptTemplate t;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    if (k != "example_sep" && k != "io_sep" && k != "label_sep" && k != "eos_marker" &&
        k != "max_tokens" && k != "overlong")
      fail(ErrKind::Config, "template: unknown key '" + k + "'");
  }
  auto str = [&](const char* k, std::string& out) {
    if (!j.contains(k)) return;
    if (!j[k].is_string()) fail(ErrKind::Config, std::string("template: ") + k + " must be a string");
    out = j[k].get<std::string>();
  };
  str("example_sep", t.example_sep);
  str("io_sep", t.io_sep);
  str("label_sep", t.label_sep);
  str("eos_marker", t.eos_marker);
  if (j.contains("max_tokens")) {
    if (!j["max_tokens"].is_number_unsigned() && !j["max_tokens"].is_number_integer())
      fail(ErrKind::Config, "template: max_tokens must be a positive integer");
    long long v = j["max_tokens"].get<long long>();
    if (v < 1) fail(ErrKind::Config, "template: max_tokens must be a positive integer");
    t.max_tokens = static_cast<std::size_t>(v);
  }
  if (j.contains("overlong")) {
    if (!j["overlong"].is_string()) fail(ErrKind::Config, "template: overlong must be a string");
    std::string p = j["overlong"].get<std::string>();
    if (p == "truncate")
      t.overlong = OverlongPolicy::Truncate;
    else if (p == "error")
      t.overlong = OverlongPolicy::Error;
    else
      fail(ErrKind::Config, "template: overlong policy must be 'truncate' or 'error'");
  }
  t.validate();
  return t;
}

}  // namespace icxlt
