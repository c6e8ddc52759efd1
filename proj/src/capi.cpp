#include "icxlt/icxlt.h"

#include <cstdlib>
#include <cstring>
#include <memory>
#include <string>

#include <json.hpp>

#include "backend.hpp"
#include "corpus.hpp"
#include "report.hpp"
#include "synthlang.hpp"
#include "toymodel.hpp"
#include "transfer.hpp"
#include "util.hpp"

struct icxlt_dataset {
  icxlt::Dataset ds;
};

struct icxlt_model {
  icxlt::Model model;
};

namespace {

thread_local std::string g_last_error;

icxlt_status status_from_kind(icxlt::ErrKind kind) {
  switch (kind) {
    case icxlt::ErrKind::Config: return ICXLT_E_INVALID;
    case icxlt::ErrKind::Data: return ICXLT_E_DATA;
    case icxlt::ErrKind::Backend: return ICXLT_E_BACKEND;
    case icxlt::ErrKind::Io: return ICXLT_E_IO;
    case icxlt::ErrKind::Numeric: return ICXLT_E_DATA;
    case icxlt::ErrKind::Internal: return ICXLT_E_INTERNAL;
  }
  return ICXLT_E_INTERNAL;
}

template <typename F>
icxlt_status guarded(F&& f) {
  try {
    f();
    g_last_error.clear();
    return ICXLT_OK;
  } catch (const icxlt::Error& e) {
    g_last_error = e.what();
    return status_from_kind(e.kind());
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return ICXLT_E_INTERNAL;
  } catch (...) {
    g_last_error = "unknown failure";
    return ICXLT_E_INTERNAL;
  }
}

std::string need(const char* arg, const char* what) {
  if (!arg || !*arg) icxlt::fail(icxlt::ErrKind::Config, std::string(what) + " required");
  return arg;
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) icxlt::fail(icxlt::ErrKind::Internal, "out of memory");
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

icxlt::SeedTuple first_seeds(const icxlt::ExperimentSpec& spec) {
  return {spec.finetune_seeds.front(), spec.shot_src_seeds.front(), spec.shot_tgt_seeds.front()};
}

}  // namespace

extern "C" {

const char* icxlt_version(void) { return "0.1.0"; }

const char* icxlt_last_error(void) { return g_last_error.c_str(); }

icxlt_status icxlt_dataset_open(const char* manifest_path, icxlt_dataset** out) {
  return guarded([&] {
    need(manifest_path, "manifest path");
    if (!out) icxlt::fail(icxlt::ErrKind::Config, "output handle required");
    auto handle = std::make_unique<icxlt_dataset>();
    handle->ds = icxlt::load_dataset(manifest_path);
    *out = handle.release();
  });
}

void icxlt_dataset_free(icxlt_dataset* ds) { delete ds; }

size_t icxlt_dataset_label_count(const icxlt_dataset* ds) {
  return ds ? ds->ds.label_set.size() : 0;
}

const char* icxlt_dataset_label(const icxlt_dataset* ds, size_t index) {
  if (!ds || index >= ds->ds.label_set.size()) return nullptr;
  return ds->ds.label_set[index].c_str();
}

size_t icxlt_dataset_language_count(const icxlt_dataset* ds) {
  return ds ? ds->ds.splits.size() : 0;
}

const char* icxlt_dataset_language(const icxlt_dataset* ds, size_t index) {
  if (!ds) return nullptr;
  size_t i = 0;
  for (const auto& [lang, split] : ds->ds.splits) {
    if (i == index) return lang.c_str();
    ++i;
  }
  return nullptr;
}

const char* icxlt_dataset_source_language(const icxlt_dataset* ds) {
  return ds ? ds->ds.source_lang.c_str() : nullptr;
}

size_t icxlt_dataset_split_size(const icxlt_dataset* ds, const char* language, const char* split) {
  if (!ds || !language || !split || !ds->ds.has_language(language)) return 0;
  const icxlt::LanguageSplit& s = ds->ds.split(language);
  if (std::strcmp(split, "train") == 0) return s.train.size();
  if (std::strcmp(split, "test") == 0) return s.test.size();
  if (std::strcmp(split, "dev") == 0) return s.dev.size();
  return 0;
}

icxlt_status icxlt_synth_generate(const char* config_json, const char* out_dir) {
  return guarded([&] {
    icxlt::SynthConfig cfg = icxlt::synth_config_from_json(need(config_json, "synth config"));
    icxlt::write_synth_corpus(cfg, need(out_dir, "output directory"));
  });
}

icxlt_status icxlt_model_open(const char* model_dir, icxlt_model** out) {
  return guarded([&] {
    need(model_dir, "model directory");
    if (!out) icxlt::fail(icxlt::ErrKind::Config, "output handle required");
    auto handle = std::make_unique<icxlt_model>();
    handle->model = icxlt::load_model(model_dir);
    *out = handle.release();
  });
}

void icxlt_model_free(icxlt_model* model) { delete model; }

icxlt_status icxlt_model_generate(const icxlt_model* model, const char* prompt,
                                  int max_new_tokens, char** out) {
  return guarded([&] {
    if (!model) icxlt::fail(icxlt::ErrKind::Config, "model handle required");
    if (!out) icxlt::fail(icxlt::ErrKind::Config, "output pointer required");
    if (max_new_tokens < 1) icxlt::fail(icxlt::ErrKind::Config, "max_new_tokens must be >= 1");
    auto shared = std::make_shared<const icxlt::Model>(model->model);
    icxlt::ToyBackend backend(shared);
    icxlt::GenerationRequest req;
    req.prompt = need(prompt, "prompt");
    req.max_new_tokens = max_new_tokens;
    *out = dup_string(backend.generate(req));
  });
}

void icxlt_string_free(char* s) { std::free(s); }

icxlt_status icxlt_train(const char* spec_json, const char* model_out_dir) {
  return guarded([&] {
    icxlt::ExperimentSpec spec = icxlt::parse_experiment_spec(need(spec_json, "spec"));
    icxlt::Dataset ds = icxlt::load_dataset(spec.dataset_path);
    icxlt::Model model = icxlt::run_training(ds, spec, spec.finetune_seeds.front(),
                                             spec.shot_src_seeds.front());
    icxlt::save_model(model, need(model_out_dir, "model output directory"));
  });
}

icxlt_status icxlt_adapt(const char* spec_json, const char* model_in_dir, const char* language,
                         const char* model_out_dir) {
  return guarded([&] {
    icxlt::ExperimentSpec spec = icxlt::parse_experiment_spec(need(spec_json, "spec"));
    icxlt::Dataset ds = icxlt::load_dataset(spec.dataset_path);
    icxlt::Model model = icxlt::load_model(need(model_in_dir, "model directory"));
    icxlt::adapt_gradient(model, ds, spec, need(language, "language"), first_seeds(spec));
    icxlt::save_model(model, need(model_out_dir, "model output directory"));
  });
}

icxlt_status icxlt_evaluate(const char* spec_json, const char* model_dir, const char* language,
                            const char* results_out_path) {
  return guarded([&] {
    icxlt::ExperimentSpec spec = icxlt::parse_experiment_spec(need(spec_json, "spec"));
    icxlt::Dataset ds = icxlt::load_dataset(spec.dataset_path);
    const std::string lang = need(language, "language");
    if (!ds.has_language(lang))
      icxlt::fail(icxlt::ErrKind::Data, "language '" + lang + "' is not in the dataset");

    std::shared_ptr<const icxlt::Model> model;
    if (spec.backend.kind == "toy") {
      std::string dir = model_dir && *model_dir ? model_dir : spec.backend.model_dir;
      if (dir.empty())
        icxlt::fail(icxlt::ErrKind::Config, "toy backend evaluation needs a model directory");
      model = std::make_shared<const icxlt::Model>(icxlt::load_model(dir));
    }
    std::unique_ptr<icxlt::Backend> backend = icxlt::make_backend(spec.backend, model);

    const icxlt::SeedTuple seeds = first_seeds(spec);
    std::vector<icxlt::Example> ctx = icxlt::build_eval_context(ds, spec, lang, seeds);
    icxlt::EvalOutcome out =
        icxlt::evaluate_split(*backend, ds.split(lang).test, ctx, ds, spec);

    nlohmann::json j;
    j["schema_version"] = 1;
    j["experiment_id"] = spec.experiment_id;
    j["spec_hash"] = icxlt::spec_hash(spec);
    j["language"] = lang;
    j["mode"] = icxlt::adaptation_mode_name(spec.resolved_adaptation().mode);
    j["seeds"] = {{"finetune", seeds.finetune},
                  {"shot_src", seeds.shot_src},
                  {"shot_tgt", seeds.shot_tgt}};
    j["f1"] = out.f1;
    j["n_instances"] = out.n_instances;
    j["hallucinated"] = out.hallucinated;
    j["duplicates"] = out.duplicates;
    j["parse_empty"] = out.parse_empty;
    j["failures"] = out.failures;
    j["dropped_demos"] = out.dropped_demos;
    nlohmann::json preds = nlohmann::json::array();
    for (const auto& line : out.prediction_lines) preds.push_back(nlohmann::json::parse(line));
    j["predictions"] = std::move(preds);
    icxlt::write_text_file(need(results_out_path, "results path"), j.dump(2) + "\n");
  });
}

icxlt_status icxlt_run_experiment(const char* spec_path, int resume) {
  return guarded([&] {
    icxlt::ExperimentSpec spec = icxlt::load_experiment_spec(need(spec_path, "spec path"));
    icxlt::run_experiment(spec, resume != 0);
  });
}

icxlt_status icxlt_run_experiment_json(const char* spec_json, int resume) {
  return guarded([&] {
    icxlt::ExperimentSpec spec = icxlt::parse_experiment_spec(need(spec_json, "spec json"));
    icxlt::run_experiment(spec, resume != 0);
  });
}

icxlt_status icxlt_report(const char* options_json, const char* out_dir) {
  return guarded([&] {
    nlohmann::json j = nlohmann::json::parse(need(options_json, "report options"), nullptr, false);
    if (j.is_discarded() || !j.is_object())
      icxlt::fail(icxlt::ErrKind::Config, "report options: not a JSON object");
    icxlt::ReportOptions opt;
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& k = it.key();
      const nlohmann::json& v = it.value();
      if (k == "results") {
        if (!v.is_array() || v.empty())
          icxlt::fail(icxlt::ErrKind::Config, "report options: 'results' must be a non-empty array");
        for (const auto& p : v) opt.results_paths.push_back(p.get<std::string>());
      } else if (k == "covariates") opt.covariates_path = v.get<std::string>();
      else if (k == "per_run") opt.per_run = v.get<bool>();
      else if (k == "permutation_seed") opt.permutation_seed = v.get<std::uint64_t>();
      else if (k == "n_permutations") opt.n_permutations = v.get<int>();
      else icxlt::fail(icxlt::ErrKind::Config, "report options: unknown key '" + k + "'");
    }
    icxlt::ReportBundle bundle = icxlt::build_report(opt);
    icxlt::write_report(bundle, need(out_dir, "output directory"));
  });
}

icxlt_status icxlt_validate_dataset(const char* manifest_path) {
  return guarded([&] { icxlt::load_dataset(need(manifest_path, "manifest path")); });
}

icxlt_status icxlt_validate_spec(const char* spec_path) {
  return guarded([&] { icxlt::load_experiment_spec(need(spec_path, "spec path")); });
}

}  // extern "C"
