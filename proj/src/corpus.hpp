#pragma once

#include <map>
#include <string>
#include <vector>

namespace icxlt {

// One labeled text. labels is kept sorted lexicographically; for multi-label
// tasks it can hold several entries, for single-label tasks exactly one.
struct Example {
  std::string text;
  std::vector<std::string> labels;
  std::string lang;

  bool operator==(const Example& other) const = default;
};

struct LanguageSplit {
  std::vector<Example> train;
  std::vector<Example> test;
  std::vector<Example> dev;  // optional, empty when the manifest names none
};

enum class TaskKind { SingleLabel, MultiLabel };

struct Dataset {
  std::string name;
  TaskKind task_kind = TaskKind::MultiLabel;
  std::string source_lang;
  // Canonical label order: lexicographic. All label indices in the harness
  // refer to positions in this vector.
  std::vector<std::string> label_set;
  std::map<std::string, LanguageSplit> splits;

  const LanguageSplit& split(const std::string& lang) const;
  bool has_language(const std::string& lang) const { return splits.count(lang) != 0; }
  std::vector<std::string> languages() const;
  int label_index(const std::string& label) const;  // -1 when unknown
};

// Reads a manifest plus the JSONL files it references and validates the lot:
// schema, label closure, single-label arity, and train/test disjointness.
// Duplicate rows inside one split are legal and kept.
Dataset load_dataset(const std::string& manifest_path);

// Parses one JSONL line (exposed for targeted tests).
Example parse_jsonl_record(const std::string& line, const std::string& expect_lang);

// Writes manifest + one JSONL file per (language, split) under dir. Returns
// the manifest path.
std::string save_dataset(const Dataset& ds, const std::string& dir);

std::string serialize_jsonl_record(const Example& ex);

}  // namespace icxlt
