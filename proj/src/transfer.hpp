#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "backend.hpp"
#include "corpus.hpp"
#include "prompting.hpp"
#include "rng.hpp"
#include "toymodel.hpp"

namespace icxlt {

// How a source-trained model meets the target language.
//   zero:       no target data, no context
//   grad:       gradient fine-tuning on K_tgt shots per class
//   grad_macro: gradient fine-tuning with mixed loss beta*L_src + (1-beta)*L_tgt
//   ic:         K_tgt target demonstrations prepended at inference, no updates
//   ic_src:     like ic but demonstrations come from the source language
//   raw_1s:     no fine-tuned model at all; remote backend infills a span
enum class AdaptationMode { Zero, Grad, GradMacro, Ic, IcSrc, Raw1s };

AdaptationMode adaptation_mode_from_string(const std::string& name);
const char* adaptation_mode_name(AdaptationMode mode);

// Appended to raw_1s prompts so a pretrained infilling model knows where the
// answer goes.
inline constexpr const char* kMissingSpanMarker = "<extra_id_0>";

struct AdaptationConfig {
  AdaptationMode mode = AdaptationMode::Zero;
  int k_tgt = -1;      // -1 resolves by mode: zero -> 0, everything else -> 1
  double beta = 0.5;   // grad_macro loss mix
  double lr = -1.0;    // -1 resolves by k_tgt: 5e-5 for one shot, 1e-5 beyond
  int epochs = -1;     // -1 resolves by k_tgt and source budget, see below
  int batch_size = 8;
};

struct RegimeConfig {
  std::string kind = "ict";  // "ict" or "pft"
  int m = 10;                // context demonstrations per ict training instance
};

// k_src value meaning "train on the whole source train split".
inline constexpr int kFullSourceBudget = 0;

struct ExperimentSpec {
  std::string experiment_id;
  std::string dataset_path;  // manifest location
  RegimeConfig regime;
  int k_src = kFullSourceBudget;
  AdaptationConfig adaptation;
  std::vector<std::string> target_languages;  // empty: evaluate the source only
  std::vector<std::uint64_t> finetune_seeds{1};
  std::vector<std::uint64_t> shot_src_seeds{1};
  std::vector<std::uint64_t> shot_tgt_seeds{1};
  PromptTemplate tmpl;
  TrainConfig train;
  BackendConfig backend;
  std::string output_dir;
  int max_new_tokens = 16;
  bool evaluate_source = true;

  void validate() const;
  // Fills the -1 placeholders: k_tgt by mode; lr 5e-5 (k_tgt <= 1) or 1e-5;
  // epochs 1 for one-shot on a full source budget, 5 on a limited budget,
  // 10 beyond one shot.
  AdaptationConfig resolved_adaptation() const;
};

ExperimentSpec parse_experiment_spec(const std::string& json_text);
ExperimentSpec load_experiment_spec(const std::string& path);

// Canonical JSON: defaults resolved, keys sorted, output location omitted
// (where artifacts land is not part of what was run). Hash of this string is
// the identity a results file claims.
std::string spec_canonical_json(const ExperimentSpec& spec);
std::string spec_hash(const ExperimentSpec& spec);

// The streams an experiment draws from, one per role.
RngKey shot_selection_key(const ExperimentSpec& spec, std::uint64_t shot_src_seed);
RngKey training_key(const ExperimentSpec& spec, std::uint64_t finetune_seed);
RngKey context_selection_key(const ExperimentSpec& spec, std::uint64_t finetune_seed);
RngKey adaptation_key(const ExperimentSpec& spec, std::uint64_t shot_tgt_seed);

struct SeedTuple {
  std::uint64_t finetune = 0, shot_src = 0, shot_tgt = 0;

  bool operator==(const SeedTuple& o) const = default;
};

// Declared cross-product; zero mode has no shot_tgt axis (it is recorded
// as 0), so 2x2x2 declared seeds mean 4 zero-shot or 8 one-shot runs.
std::vector<SeedTuple> seed_cross_product(const ExperimentSpec& spec);

struct RunRow {
  std::string language;
  SeedTuple seeds;
  double f1 = 0.0;
  int n_instances = 0;
  int hallucinated = 0;
  int duplicates = 0;
  int parse_empty = 0;
  int failures = 0;
  long long dropped_demos = 0;
  double source_f1 = -1.0;  // -1 when source evaluation is disabled
};

struct ExperimentResults {
  int schema_version = 1;
  std::string experiment_id;
  std::string spec_hash;
  std::string mode;    // adaptation mode name
  std::string regime;  // "ict" or "pft"
  bool complete = false;
  std::vector<RunRow> rows;
  std::vector<std::string> rng_keys;  // every stream the experiment touched
};

std::string results_to_json(const ExperimentResults& results);
ExperimentResults results_from_json(const std::string& text);

// Rendered and encoded source-language training stream.
struct TrainingStream {
  std::vector<ModelInstance> instances;
  std::vector<std::size_t> shot_indices;  // positions into the source train split
  long long dropped_demos = 0;
};

TrainingStream build_training_stream(const Dataset& ds, const Vocab& vocab,
                                     const ExperimentSpec& spec, std::uint64_t finetune_seed,
                                     std::uint64_t shot_src_seed);

// Vocabulary build + shot selection + rendering + optimization. The returned
// model bundles the template and a metadata record of how it was produced.
Model run_training(const Dataset& ds, const ExperimentSpec& spec, std::uint64_t finetune_seed,
                   std::uint64_t shot_src_seed, TrainStats* stats = nullptr);

// In-place gradient adaptation for grad / grad_macro. Target shots come from
// the adaptation stream; macro mixes in source shots of the same per-class
// size drawn from the model's own training pool.
void adapt_gradient(Model& model, const Dataset& ds, const ExperimentSpec& spec,
                    const std::string& language, const SeedTuple& seeds);

// Demonstrations prepended at inference for ic / ic_src / raw_1s (empty for
// the other modes): K_tgt per class, shuffled once per run.
std::vector<Example> build_eval_context(const Dataset& ds, const ExperimentSpec& spec,
                                        const std::string& language, const SeedTuple& seeds);

struct EvalOutcome {
  double f1 = 0.0;
  int n_instances = 0;
  int hallucinated = 0;
  int duplicates = 0;
  int parse_empty = 0;
  int failures = 0;
  long long dropped_demos = 0;
  std::vector<std::string> prediction_lines;  // one JSON record per instance
};

// Renders every test instance (context prepended), generates through the
// backend, parses and scores. A failed generation counts as an empty
// prediction; a failure rate above the backend threshold aborts the run.
EvalOutcome evaluate_split(Backend& backend, const std::vector<Example>& test,
                           const std::vector<Example>& context, const Dataset& ds,
                           const ExperimentSpec& spec);

// The whole declared cross-product. Writes into spec.output_dir: config.json
// (canonical spec + hash), per-run prediction files, results.partial.json
// after every finished run, and results.json at the end. With resume = true,
// rows already present in a partial file from the same spec are kept and
// their runs skipped.
ExperimentResults run_experiment(const ExperimentSpec& spec, bool resume = false);

}  // namespace icxlt
