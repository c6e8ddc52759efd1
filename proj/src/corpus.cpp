#include "corpus.hpp"

#include <algorithm>
#include <filesystem>
#include <set>
#include <sstream>

#include <json.hpp>

#include "util.hpp"

namespace icxlt {

using nlohmann::json;

namespace {

[[noreturn]] void schema_error(const std::string& msg) {
  fail(ErrKind::Data, "schema error: " + msg);
}

std::vector<std::string> parse_labels_field(const json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) schema_error(where + ": labels must be a non-empty array");
  std::vector<std::string> labels;
  for (const auto& item : j) {
    if (!item.is_string() || item.get<std::string>().empty())
      schema_error(where + ": labels must be non-empty strings");
    labels.push_back(item.get<std::string>());
  }
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  return labels;
}

std::vector<Example> load_jsonl(const std::string& path, const std::string& lang) {
  std::vector<Example> out;
  auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    try {
      out.push_back(parse_jsonl_record(lines[i], lang));
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      schema_error(path + ":" + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return out;
}

std::string example_identity(const Example& ex) {
  std::string id = ex.text;
  for (const auto& l : ex.labels) {
    id += '\x1f';
    id += l;
  }
  return id;
}

}  // namespace

const LanguageSplit& Dataset::split(const std::string& lang) const {
  auto it = splits.find(lang);
  if (it == splits.end()) fail(ErrKind::Data, "unknown language: " + lang);
  return it->second;
}

std::vector<std::string> Dataset::languages() const {
  std::vector<std::string> out;
  for (const auto& [lang, _] : splits) out.push_back(lang);
  return out;
}

int Dataset::label_index(const std::string& label) const {
  auto it = std::lower_bound(label_set.begin(), label_set.end(), label);
  if (it == label_set.end() || *it != label) return -1;
  return static_cast<int>(it - label_set.begin());
}

Example parse_jsonl_record(const std::string& line, const std::string& expect_lang) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    schema_error(std::string("invalid JSON record: ") + e.what());
  }
  if (!j.is_object()) schema_error("record is not a JSON object");
  if (!j.contains("text") || !j["text"].is_string()) schema_error("record missing string field 'text'");
  if (!j.contains("labels")) schema_error("record missing field 'labels'");
  if (!j.contains("lang") || !j["lang"].is_string()) schema_error("record missing string field 'lang'");

  Example ex;
  ex.text = j["text"].get<std::string>();
  if (ex.text.empty()) schema_error("record has empty 'text'");
  ex.labels = parse_labels_field(j["labels"], "record");
  ex.lang = j["lang"].get<std::string>();
  if (!expect_lang.empty() && ex.lang != expect_lang)
    schema_error("record lang '" + ex.lang + "' does not match split language '" + expect_lang + "'");
  return ex;
}

std::string serialize_jsonl_record(const Example& ex) {
  json j;
  j["text"] = ex.text;
  j["labels"] = ex.labels;
  j["lang"] = ex.lang;
  return j.dump();
}

Dataset load_dataset(const std::string& manifest_path) {
  json j;
  try {
    j = json::parse(read_text_file(manifest_path));
  } catch (const json::exception& e) {
    schema_error(std::string("manifest is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) schema_error("manifest is not a JSON object");

  Dataset ds;
  if (!j.contains("name") || !j["name"].is_string()) schema_error("manifest missing string field 'name'");
  ds.name = j["name"].get<std::string>();

  if (!j.contains("task_kind") || !j["task_kind"].is_string())
    schema_error("manifest missing string field 'task_kind'");
  std::string kind = j["task_kind"].get<std::string>();
  if (kind == "single_label") ds.task_kind = TaskKind::SingleLabel;
  else if (kind == "multi_label") ds.task_kind = TaskKind::MultiLabel;
  else schema_error("task_kind must be 'single_label' or 'multi_label', got '" + kind + "'");

  if (!j.contains("source_lang") || !j["source_lang"].is_string())
    schema_error("manifest missing string field 'source_lang'");
  ds.source_lang = j["source_lang"].get<std::string>();

  if (!j.contains("splits") || !j["splits"].is_object() || j["splits"].empty())
    fail(ErrKind::Data, "manifest declares no splits");

  std::filesystem::path base = std::filesystem::path(manifest_path).parent_path();
  auto resolve = [&](const std::string& rel) { return (base / rel).string(); };

  for (const auto& [lang, entry] : j["splits"].items()) {
    if (!entry.is_object()) schema_error("split entry for '" + lang + "' is not an object");
    LanguageSplit split;
    if (entry.contains("train")) {
      if (!entry["train"].is_string()) schema_error("split '" + lang + "': train must be a path string");
      split.train = load_jsonl(resolve(entry["train"].get<std::string>()), lang);
    }
    if (!entry.contains("test") || !entry["test"].is_string())
      schema_error("split '" + lang + "' missing test path");
    split.test = load_jsonl(resolve(entry["test"].get<std::string>()), lang);
    if (entry.contains("dev")) {
      if (!entry["dev"].is_string()) schema_error("split '" + lang + "': dev must be a path string");
      split.dev = load_jsonl(resolve(entry["dev"].get<std::string>()), lang);
    }
    ds.splits.emplace(lang, std::move(split));
  }

  if (!ds.has_language(ds.source_lang))
    schema_error("source_lang '" + ds.source_lang + "' has no split entry");

  // Label closure. An explicit label_set is authoritative; otherwise the set
  // is collected from the data.
  std::set<std::string> seen;
  for (const auto& [lang, split] : ds.splits)
    for (const auto* vec : {&split.train, &split.test, &split.dev})
      for (const auto& ex : *vec)
        for (const auto& l : ex.labels) seen.insert(l);

  if (j.contains("label_set")) {
    ds.label_set = parse_labels_field(j["label_set"], "manifest label_set");
    for (const auto& l : seen)
      if (std::find(ds.label_set.begin(), ds.label_set.end(), l) == ds.label_set.end())
        fail(ErrKind::Data, "label mismatch: record label '" + l + "' not in declared label_set");
  } else {
    ds.label_set.assign(seen.begin(), seen.end());
  }
  if (ds.label_set.empty()) fail(ErrKind::Data, "dataset has no labels");

  if (ds.task_kind == TaskKind::SingleLabel) {
    for (const auto& [lang, split] : ds.splits)
      for (const auto* vec : {&split.train, &split.test, &split.dev})
        for (const auto& ex : *vec)
          if (ex.labels.size() != 1)
            fail(ErrKind::Data, "single-label violation: '" + ex.text + "' (" + lang + ") has " +
                                    std::to_string(ex.labels.size()) + " labels");
  }

  // Train/test leakage check, per language, by (text, labels) identity.
  for (const auto& [lang, split] : ds.splits) {
    std::set<std::string> train_ids;
    for (const auto& ex : split.train) train_ids.insert(example_identity(ex));
    for (const auto& ex : split.test)
      if (train_ids.count(example_identity(ex)))
        fail(ErrKind::Data, "train/test overlap in '" + lang + "': '" + ex.text + "'");
  }

  return ds;
}

std::string save_dataset(const Dataset& ds, const std::string& dir) {
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["name"] = ds.name;
  manifest["task_kind"] = ds.task_kind == TaskKind::SingleLabel ? "single_label" : "multi_label";
  manifest["source_lang"] = ds.source_lang;
  manifest["label_set"] = ds.label_set;
  json splits = json::object();

  auto dump_split = [&](const std::string& lang, const std::vector<Example>& rows,
                        const std::string& suffix) {
    std::string fname = lang + "." + suffix + ".jsonl";
    std::ostringstream body;
    for (const auto& ex : rows) body << serialize_jsonl_record(ex) << "\n";
    write_text_file((std::filesystem::path(dir) / fname).string(), body.str());
    return fname;
  };

  for (const auto& [lang, split] : ds.splits) {
    json entry;
    entry["train"] = dump_split(lang, split.train, "train");
    entry["test"] = dump_split(lang, split.test, "test");
    if (!split.dev.empty()) entry["dev"] = dump_split(lang, split.dev, "dev");
    splits[lang] = entry;
  }
  manifest["splits"] = splits;

  std::string path = (std::filesystem::path(dir) / "manifest.json").string();
  write_text_file(path, manifest.dump(2) + "\n");
  return path;
}

}  // namespace icxlt
