#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "corpus.hpp"

namespace icxlt {

// Synthetic language family. Each class owns a disjoint pool of indicator
// token types; an example's gold labels are exactly the classes whose
// indicators appear in its text, so a rule reading the tokens scores a
// perfect F1. Target languages are bijective remappings of the source token
// inventory in which a rho-fraction of token types keeps its source surface
// form; parallel train/test splits are produced by remapping the source
// examples token by token (labels are shared across languages).
struct SynthConfig {
  std::string name = "synthlang";
  std::string source_lang = "src";
  // (language code, rho) pairs; rho in [0, 1]
  std::vector<std::pair<std::string, double>> target_languages;
  int n_classes = 6;
  int indicators_per_class = 4;    // indicator token types owned by a class
  int indicators_per_example = 2;  // distinct indicators drawn per gold class
  int noise_vocab = 40;            // class-free token types
  int noise_per_example = 3;
  double multi_label_prob = 0.3;   // chance of 2-3 gold classes
  int train_per_lang = 400;
  int test_per_lang = 200;
  std::uint64_t seed = 1;

  void validate() const;
  int content_vocab_size() const { return n_classes * indicators_per_class + noise_vocab; }
};

struct SynthFamily {
  Dataset dataset;
  std::string mapping_json;  // per-language token maps, indicator inventory, rho
};

// JSON form: {"name", "source_lang", "target_languages": [{"code", "rho"}],
// "n_classes", "indicators_per_class", "indicators_per_example",
// "noise_vocab", "noise_per_example", "multi_label_prob", "train_per_lang",
// "test_per_lang", "seed"}. Missing keys keep their defaults.
SynthConfig synth_config_from_json(const std::string& text);

SynthFamily generate_language_family(const SynthConfig& config);

// Writes manifest + JSONL via the corpus writer, plus mapping.json and a
// covariates.csv holding each target language's rho. Returns the manifest
// path.
std::string write_synth_corpus(const SynthConfig& config, const std::string& out_dir);

}  // namespace icxlt
