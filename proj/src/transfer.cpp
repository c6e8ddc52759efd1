#include "transfer.hpp"

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <set>
#include <utility>

#include <json.hpp>

#include "metrics.hpp"
#include "sampling.hpp"
#include "util.hpp"

namespace icxlt {

namespace fs = std::filesystem;
using nlohmann::json;

AdaptationMode adaptation_mode_from_string(const std::string& name) {
  if (name == "zero") return AdaptationMode::Zero;
  if (name == "grad") return AdaptationMode::Grad;
  if (name == "grad_macro") return AdaptationMode::GradMacro;
  if (name == "ic") return AdaptationMode::Ic;
  if (name == "ic_src") return AdaptationMode::IcSrc;
  if (name == "raw_1s") return AdaptationMode::Raw1s;
  fail(ErrKind::Config, "unknown adaptation mode '" + name + "'");
}

const char* adaptation_mode_name(AdaptationMode mode) {
  switch (mode) {
    case AdaptationMode::Zero: return "zero";
    case AdaptationMode::Grad: return "grad";
    case AdaptationMode::GradMacro: return "grad_macro";
    case AdaptationMode::Ic: return "ic";
    case AdaptationMode::IcSrc: return "ic_src";
    case AdaptationMode::Raw1s: return "raw_1s";
  }
  fail(ErrKind::Internal, "unhandled adaptation mode");
}

namespace {

bool is_gradient_mode(AdaptationMode m) {
  return m == AdaptationMode::Grad || m == AdaptationMode::GradMacro;
}

bool is_context_mode(AdaptationMode m) {
  return m == AdaptationMode::Ic || m == AdaptationMode::IcSrc || m == AdaptationMode::Raw1s;
}

template <typename T>
void check_unique(const std::vector<T>& v, const std::string& what) {
  std::set<T> seen;
  for (const T& x : v)
    if (!seen.insert(x).second) fail(ErrKind::Config, "spec: duplicate entry in " + what);
}

}  // namespace

void ExperimentSpec::validate() const {
  if (experiment_id.empty()) fail(ErrKind::Config, "spec: experiment_id required");
  if (dataset_path.empty()) fail(ErrKind::Config, "spec: dataset required");
  if (regime.kind != "ict" && regime.kind != "pft")
    fail(ErrKind::Config, "spec: regime.kind must be 'ict' or 'pft'");
  if (regime.m < 0) fail(ErrKind::Config, "spec: regime.m must be >= 0");
  if (k_src < 0) fail(ErrKind::Config, "spec: k_src must be a positive budget or 'full'");
  const AdaptationMode mode = adaptation.mode;
  if ((mode == AdaptationMode::Ic || mode == AdaptationMode::IcSrc) && regime.kind != "ict")
    fail(ErrKind::Config, "spec: in-context evaluation needs an ict training regime");
  if (mode == AdaptationMode::Zero && adaptation.k_tgt > 0)
    fail(ErrKind::Config, "spec: zero mode takes no target shots");
  if (adaptation.beta < 0.0 || adaptation.beta > 1.0)
    fail(ErrKind::Config, "spec: adaptation.beta must be in [0, 1]");
  if (adaptation.batch_size < 1) fail(ErrKind::Config, "spec: adaptation.batch_size must be >= 1");
  if (mode == AdaptationMode::Raw1s && backend.kind != "remote")
    fail(ErrKind::Config, "spec: raw_1s works only against a remote backend");
  if (is_gradient_mode(mode) && backend.kind != "toy")
    fail(ErrKind::Config, "spec: gradient adaptation needs the in-process model");
  if (backend.kind != "toy" && backend.kind != "remote")
    fail(ErrKind::Config, "spec: backend.kind must be 'toy' or 'remote'");
  if (backend.failure_rate_threshold < 0.0 || backend.failure_rate_threshold > 1.0)
    fail(ErrKind::Config, "spec: failure_rate_threshold must be in [0, 1]");
  if (finetune_seeds.empty() || shot_src_seeds.empty() || shot_tgt_seeds.empty())
    fail(ErrKind::Config, "spec: every seed list needs at least one entry");
  check_unique(finetune_seeds, "seeds.finetune");
  check_unique(shot_src_seeds, "seeds.shot_src");
  check_unique(shot_tgt_seeds, "seeds.shot_tgt");
  check_unique(target_languages, "target_languages");
  for (const auto& lang : target_languages)
    if (lang.empty()) fail(ErrKind::Config, "spec: empty target language code");
  if (max_new_tokens < 1) fail(ErrKind::Config, "spec: max_new_tokens must be >= 1");
  if (train.lr <= 0.0 || train.epochs < 0 || train.batch_size < 1 || train.d < 1 || train.d_ff < 1)
    fail(ErrKind::Config, "spec: bad train configuration");
  tmpl.validate();

  const AdaptationConfig r = resolved_adaptation();
  if (is_gradient_mode(mode) && r.k_tgt < 1)
    fail(ErrKind::Config, "spec: gradient adaptation needs k_tgt >= 1");
  if (r.k_tgt < 0) fail(ErrKind::Config, "spec: k_tgt must be >= 0");
  if (is_gradient_mode(mode) && (r.lr <= 0.0 || r.epochs < 1))
    fail(ErrKind::Config, "spec: gradient adaptation needs lr > 0 and epochs >= 1");
}

AdaptationConfig ExperimentSpec::resolved_adaptation() const {
  AdaptationConfig r = adaptation;
  if (r.k_tgt < 0) r.k_tgt = r.mode == AdaptationMode::Zero ? 0 : 1;
  if (r.lr < 0.0) r.lr = r.k_tgt <= 1 ? 5e-5 : 1e-5;
  if (r.epochs < 0) {
    if (r.k_tgt <= 1)
      r.epochs = k_src == kFullSourceBudget ? 1 : 5;
    else
      r.epochs = 10;
  }
  return r;
}

namespace {

void check_keys(const json& obj, const std::string& where,
                std::initializer_list<const char*> allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        known = true;
        break;
      }
    if (!known) fail(ErrKind::Config, "spec: unknown key '" + it.key() + "' in " + where);
  }
}

const json& require_key(const json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key)) fail(ErrKind::Config, "spec: " + where + " is missing '" + key + "'");
  return obj.at(key);
}

std::string as_string(const json& v, const std::string& what) {
  if (!v.is_string()) fail(ErrKind::Config, "spec: " + what + " must be a string");
  return v.get<std::string>();
}

long long as_int(const json& v, const std::string& what) {
  if (!v.is_number_integer() && !v.is_number_unsigned())
    fail(ErrKind::Config, "spec: " + what + " must be an integer");
  return v.get<long long>();
}

double as_double(const json& v, const std::string& what) {
  if (!v.is_number()) fail(ErrKind::Config, "spec: " + what + " must be a number");
  return v.get<double>();
}

bool as_bool(const json& v, const std::string& what) {
  if (!v.is_boolean()) fail(ErrKind::Config, "spec: " + what + " must be a boolean");
  return v.get<bool>();
}

std::vector<std::uint64_t> as_seed_list(const json& v, const std::string& what) {
  if (!v.is_array() || v.empty())
    fail(ErrKind::Config, "spec: " + what + " must be a non-empty array of seeds");
  std::vector<std::uint64_t> out;
  for (const auto& e : v) {
    if (!e.is_number_unsigned() && !(e.is_number_integer() && e.get<long long>() >= 0))
      fail(ErrKind::Config, "spec: " + what + " entries must be non-negative integers");
    out.push_back(e.get<std::uint64_t>());
  }
  return out;
}

}  // namespace

ExperimentSpec parse_experiment_spec(const std::string& json_text) {
  json j = json::parse(json_text, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    fail(ErrKind::Config, "spec: not a JSON object");
  check_keys(j, "the spec",
             {"experiment_id", "dataset", "regime", "k_src", "adaptation", "target_languages",
              "seeds", "template", "train", "backend", "output", "max_new_tokens",
              "evaluate_source"});

  ExperimentSpec s;
  s.experiment_id = as_string(require_key(j, "experiment_id", "the spec"), "experiment_id");
  s.dataset_path = as_string(require_key(j, "dataset", "the spec"), "dataset");

  if (j.contains("regime")) {
    const json& r = j["regime"];
    if (!r.is_object()) fail(ErrKind::Config, "spec: regime must be an object");
    check_keys(r, "regime", {"kind", "m"});
    if (r.contains("kind")) s.regime.kind = as_string(r["kind"], "regime.kind");
    if (r.contains("m")) s.regime.m = static_cast<int>(as_int(r["m"], "regime.m"));
  }

  if (j.contains("k_src")) {
    const json& k = j["k_src"];
    if (k.is_string()) {
      if (k.get<std::string>() != "full")
        fail(ErrKind::Config, "spec: k_src must be an integer or \"full\"");
      s.k_src = kFullSourceBudget;
    } else {
      long long v = as_int(k, "k_src");
      if (v < 0) fail(ErrKind::Config, "spec: k_src must be >= 0");
      s.k_src = static_cast<int>(v);
    }
  }

  if (j.contains("adaptation")) {
    const json& a = j["adaptation"];
    if (!a.is_object()) fail(ErrKind::Config, "spec: adaptation must be an object");
    check_keys(a, "adaptation", {"mode", "k_tgt", "beta", "lr", "epochs", "batch_size"});
    if (a.contains("mode"))
      s.adaptation.mode = adaptation_mode_from_string(as_string(a["mode"], "adaptation.mode"));
    if (a.contains("k_tgt"))
      s.adaptation.k_tgt = static_cast<int>(as_int(a["k_tgt"], "adaptation.k_tgt"));
    if (a.contains("beta")) s.adaptation.beta = as_double(a["beta"], "adaptation.beta");
    if (a.contains("lr")) s.adaptation.lr = as_double(a["lr"], "adaptation.lr");
    if (a.contains("epochs"))
      s.adaptation.epochs = static_cast<int>(as_int(a["epochs"], "adaptation.epochs"));
    if (a.contains("batch_size"))
      s.adaptation.batch_size = static_cast<int>(as_int(a["batch_size"], "adaptation.batch_size"));
  }

  if (j.contains("target_languages")) {
    const json& t = j["target_languages"];
    if (!t.is_array()) fail(ErrKind::Config, "spec: target_languages must be an array");
    for (const auto& e : t) s.target_languages.push_back(as_string(e, "target language"));
  }

  if (j.contains("seeds")) {
    const json& sd = j["seeds"];
    if (!sd.is_object()) fail(ErrKind::Config, "spec: seeds must be an object");
    check_keys(sd, "seeds", {"finetune", "shot_src", "shot_tgt"});
    if (sd.contains("finetune")) s.finetune_seeds = as_seed_list(sd["finetune"], "seeds.finetune");
    if (sd.contains("shot_src")) s.shot_src_seeds = as_seed_list(sd["shot_src"], "seeds.shot_src");
    if (sd.contains("shot_tgt")) s.shot_tgt_seeds = as_seed_list(sd["shot_tgt"], "seeds.shot_tgt");
  }

  if (j.contains("template")) {
    if (!j["template"].is_object()) fail(ErrKind::Config, "spec: template must be an object");
    s.tmpl = template_from_json_text(j["template"].dump());
  }

  if (j.contains("train")) {
    const json& t = j["train"];
    if (!t.is_object()) fail(ErrKind::Config, "spec: train must be an object");
    check_keys(t, "train", {"lr", "epochs", "batch_size", "linear_decay", "d", "d_ff",
                            "select_on_dev", "pretrain_epochs", "pretrain_lr",
                            "pretrain_negatives"});
    if (t.contains("lr")) s.train.lr = as_double(t["lr"], "train.lr");
    if (t.contains("epochs")) s.train.epochs = static_cast<int>(as_int(t["epochs"], "train.epochs"));
    if (t.contains("batch_size"))
      s.train.batch_size = static_cast<int>(as_int(t["batch_size"], "train.batch_size"));
    if (t.contains("linear_decay")) s.train.linear_decay = as_bool(t["linear_decay"], "train.linear_decay");
    if (t.contains("d")) s.train.d = static_cast<int>(as_int(t["d"], "train.d"));
    if (t.contains("d_ff")) s.train.d_ff = static_cast<int>(as_int(t["d_ff"], "train.d_ff"));
    if (t.contains("select_on_dev"))
      s.train.select_on_dev = as_bool(t["select_on_dev"], "train.select_on_dev");
    if (t.contains("pretrain_epochs"))
      s.train.pretrain_epochs = static_cast<int>(as_int(t["pretrain_epochs"], "train.pretrain_epochs"));
    if (t.contains("pretrain_lr"))
      s.train.pretrain_lr = as_double(t["pretrain_lr"], "train.pretrain_lr");
    if (t.contains("pretrain_negatives"))
      s.train.pretrain_negatives =
          static_cast<int>(as_int(t["pretrain_negatives"], "train.pretrain_negatives"));
  }

  if (j.contains("backend")) {
    const json& b = j["backend"];
    if (!b.is_object()) fail(ErrKind::Config, "spec: backend must be an object");
    check_keys(b, "backend", {"kind", "model_dir", "base_url", "timeout_ms", "max_retries",
                              "backoff_base_ms", "failure_rate_threshold"});
    if (b.contains("kind")) s.backend.kind = as_string(b["kind"], "backend.kind");
    if (b.contains("model_dir")) s.backend.model_dir = as_string(b["model_dir"], "backend.model_dir");
    if (b.contains("base_url")) s.backend.remote.base_url = as_string(b["base_url"], "backend.base_url");
    if (b.contains("timeout_ms"))
      s.backend.remote.timeout_ms = static_cast<int>(as_int(b["timeout_ms"], "backend.timeout_ms"));
    if (b.contains("max_retries"))
      s.backend.remote.max_retries = static_cast<int>(as_int(b["max_retries"], "backend.max_retries"));
    if (b.contains("backoff_base_ms"))
      s.backend.remote.backoff_base_ms =
          static_cast<int>(as_int(b["backoff_base_ms"], "backend.backoff_base_ms"));
    if (b.contains("failure_rate_threshold"))
      s.backend.failure_rate_threshold =
          as_double(b["failure_rate_threshold"], "backend.failure_rate_threshold");
  }

  if (j.contains("output")) s.output_dir = as_string(j["output"], "output");
  if (j.contains("max_new_tokens"))
    s.max_new_tokens = static_cast<int>(as_int(j["max_new_tokens"], "max_new_tokens"));
  if (j.contains("evaluate_source")) s.evaluate_source = as_bool(j["evaluate_source"], "evaluate_source");

  s.validate();
  return s;
}

ExperimentSpec load_experiment_spec(const std::string& path) {
  return parse_experiment_spec(read_text_file(path));
}

std::string spec_canonical_json(const ExperimentSpec& spec) {
  const AdaptationConfig a = spec.resolved_adaptation();
  json j;
  j["experiment_id"] = spec.experiment_id;
  j["dataset"] = spec.dataset_path;
  j["regime"] = {{"kind", spec.regime.kind}, {"m", spec.regime.m}};
  if (spec.k_src == kFullSourceBudget)
    j["k_src"] = "full";
  else
    j["k_src"] = spec.k_src;
  j["adaptation"] = {{"mode", adaptation_mode_name(a.mode)}, {"k_tgt", a.k_tgt},
                     {"beta", a.beta},       {"lr", a.lr},
                     {"epochs", a.epochs},   {"batch_size", a.batch_size}};
  j["target_languages"] = spec.target_languages;
  j["seeds"] = {{"finetune", spec.finetune_seeds},
                {"shot_src", spec.shot_src_seeds},
                {"shot_tgt", spec.shot_tgt_seeds}};
  j["template"] = json::parse(template_to_json_text(spec.tmpl));
  j["train"] = {{"lr", spec.train.lr},
                {"epochs", spec.train.epochs},
                {"batch_size", spec.train.batch_size},
                {"linear_decay", spec.train.linear_decay},
                {"d", spec.train.d},
                {"d_ff", spec.train.d_ff},
                {"select_on_dev", spec.train.select_on_dev}};
  j["backend"] = {{"kind", spec.backend.kind},
                  {"model_dir", spec.backend.model_dir},
                  {"base_url", spec.backend.remote.base_url},
                  {"timeout_ms", spec.backend.remote.timeout_ms},
                  {"max_retries", spec.backend.remote.max_retries},
                  {"backoff_base_ms", spec.backend.remote.backoff_base_ms},
                  {"failure_rate_threshold", spec.backend.failure_rate_threshold}};
  // The output location is run metadata, not experiment identity: the same
  // spec written to two directories must claim the same hash.
  j["max_new_tokens"] = spec.max_new_tokens;
  j["evaluate_source"] = spec.evaluate_source;
  return j.dump(2) + "\n";
}

std::string spec_hash(const ExperimentSpec& spec) {
  return hex64(fnv1a64(spec_canonical_json(spec)));
}

RngKey shot_selection_key(const ExperimentSpec& spec, std::uint64_t shot_src_seed) {
  return RngKey{spec.experiment_id, RngRole::ShotSelection, shot_src_seed};
}
RngKey training_key(const ExperimentSpec& spec, std::uint64_t finetune_seed) {
  return RngKey{spec.experiment_id, RngRole::Training, finetune_seed};
}
RngKey context_selection_key(const ExperimentSpec& spec, std::uint64_t finetune_seed) {
  return RngKey{spec.experiment_id, RngRole::ContextSelection, finetune_seed};
}
RngKey adaptation_key(const ExperimentSpec& spec, std::uint64_t shot_tgt_seed) {
  return RngKey{spec.experiment_id, RngRole::Adaptation, shot_tgt_seed};
}

std::vector<SeedTuple> seed_cross_product(const ExperimentSpec& spec) {
  std::vector<SeedTuple> out;
  const bool no_target_shots = spec.adaptation.mode == AdaptationMode::Zero;
  for (std::uint64_t f : spec.finetune_seeds)
    for (std::uint64_t s : spec.shot_src_seeds) {
      if (no_target_shots) {
        out.push_back({f, s, 0});
      } else {
        for (std::uint64_t t : spec.shot_tgt_seeds) out.push_back({f, s, t});
      }
    }
  return out;
}

std::string results_to_json(const ExperimentResults& results) {
  json j;
  j["schema_version"] = results.schema_version;
  j["experiment_id"] = results.experiment_id;
  j["spec_hash"] = results.spec_hash;
  j["mode"] = results.mode;
  j["regime"] = results.regime;
  j["complete"] = results.complete;
  j["rng_keys"] = results.rng_keys;
  json rows = json::array();
  for (const RunRow& r : results.rows) {
    json o;
    o["language"] = r.language;
    o["seeds"] = {{"finetune", r.seeds.finetune},
                  {"shot_src", r.seeds.shot_src},
                  {"shot_tgt", r.seeds.shot_tgt}};
    o["f1"] = r.f1;
    o["n_instances"] = r.n_instances;
    o["hallucinated"] = r.hallucinated;
    o["duplicates"] = r.duplicates;
    o["parse_empty"] = r.parse_empty;
    o["failures"] = r.failures;
    o["dropped_demos"] = r.dropped_demos;
    if (r.source_f1 >= 0.0) o["source_f1"] = r.source_f1;
    rows.push_back(std::move(o));
  }
  j["rows"] = std::move(rows);
  return j.dump(2) + "\n";
}

ExperimentResults results_from_json(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) fail(ErrKind::Data, "results: not a JSON object");
  if (!j.contains("schema_version") || !j["schema_version"].is_number_integer())
    fail(ErrKind::Data, "results: missing schema_version");
  ExperimentResults r;
  r.schema_version = j["schema_version"].get<int>();
  if (r.schema_version != 1)
    fail(ErrKind::Data, "results: unsupported schema_version " + std::to_string(r.schema_version));
  try {
    r.experiment_id = j.at("experiment_id").get<std::string>();
    r.spec_hash = j.at("spec_hash").get<std::string>();
    r.mode = j.at("mode").get<std::string>();
    r.regime = j.at("regime").get<std::string>();
    r.complete = j.at("complete").get<bool>();
    if (j.contains("rng_keys")) r.rng_keys = j["rng_keys"].get<std::vector<std::string>>();
    for (const auto& o : j.at("rows")) {
      RunRow row;
      row.language = o.at("language").get<std::string>();
      const auto& s = o.at("seeds");
      row.seeds.finetune = s.at("finetune").get<std::uint64_t>();
      row.seeds.shot_src = s.at("shot_src").get<std::uint64_t>();
      row.seeds.shot_tgt = s.at("shot_tgt").get<std::uint64_t>();
      row.f1 = o.at("f1").get<double>();
      row.n_instances = o.at("n_instances").get<int>();
      row.hallucinated = o.value("hallucinated", 0);
      row.duplicates = o.value("duplicates", 0);
      row.parse_empty = o.value("parse_empty", 0);
      row.failures = o.value("failures", 0);
      row.dropped_demos = o.value("dropped_demos", 0LL);
      row.source_f1 = o.contains("source_f1") ? o["source_f1"].get<double>() : -1.0;
      r.rows.push_back(std::move(row));
    }
  } catch (const json::exception& e) {
    fail(ErrKind::Data, std::string("results: schema error: ") + e.what());
  }
  return r;
}

TrainingStream build_training_stream(const Dataset& ds, const Vocab& vocab,
                                     const ExperimentSpec& spec, std::uint64_t finetune_seed,
                                     std::uint64_t shot_src_seed) {
  const LanguageSplit& src = ds.split(ds.source_lang);
  if (src.train.empty()) fail(ErrKind::Data, "source train split is empty");

  TrainingStream out;
  if (spec.k_src == kFullSourceBudget) {
    out.shot_indices.resize(src.train.size());
    std::iota(out.shot_indices.begin(), out.shot_indices.end(), std::size_t{0});
  } else {
    ShotSet shots =
        sample_k_shot(src.train, ds.label_set, static_cast<std::size_t>(spec.k_src),
                      shot_selection_key(spec, shot_src_seed));
    out.shot_indices = shots.indices;
  }

  std::vector<Example> sel;
  sel.reserve(out.shot_indices.size());
  for (std::size_t idx : out.shot_indices) sel.push_back(src.train[idx]);

  const std::size_t m =
      spec.regime.kind == "ict" ? static_cast<std::size_t>(spec.regime.m) : std::size_t{0};
  Rng ctx_base(context_selection_key(spec, finetune_seed));
  const bool reuse = !sel.empty() && sel.size() - 1 < m;

  for (std::size_t i = 0; i < sel.size(); ++i) {
    RenderedInstance ri;
    if (m > 0) {
      Rng r = ctx_base.split(i);
      Demonstrations demos = sample_context(sel, m, i, reuse, r);
      std::vector<Example> ctx;
      ctx.reserve(demos.indices.size());
      for (std::size_t d : demos.indices) ctx.push_back(sel[d]);
      ri = render_ict_instance(sel[i], ctx, spec.tmpl);
    } else {
      ri = render_pft_instance(sel[i], spec.tmpl);
    }
    out.dropped_demos += static_cast<long long>(ri.dropped_demos);
    out.instances.push_back(encode_instance(ri, vocab, spec.tmpl));
  }
  return out;
}

Model run_training(const Dataset& ds, const ExperimentSpec& spec, std::uint64_t finetune_seed,
                   std::uint64_t shot_src_seed, TrainStats* stats) {
  spec.validate();
  Model model;
  model.tmpl = spec.tmpl;
  model.vocab = Vocab::build(ds, spec.tmpl);

  TrainingStream stream = build_training_stream(ds, model.vocab, spec, finetune_seed, shot_src_seed);
  if (stream.instances.empty()) fail(ErrKind::Data, "no training instances selected");

  std::vector<ModelInstance> dev;
  if (spec.train.select_on_dev) {
    const auto& dev_split = ds.split(ds.source_lang).dev;
    if (dev_split.empty())
      fail(ErrKind::Config, "dev selection requested but the source dev split is empty");
    // Dev loss is measured without context so the same yardstick applies to
    // both regimes.
    for (const Example& ex : dev_split)
      dev.push_back(encode_instance(render_pft_instance(ex, spec.tmpl), model.vocab, spec.tmpl));
  }

  const RngKey tkey = training_key(spec, finetune_seed);
  if (spec.train.pretrain_epochs > 0) {
    // Multilingual warm-up on raw train-split text from every language in the
    // dataset (labels never enter); supervised training then continues from
    // the warmed table, touching only the tokens its instances contain.
    std::vector<std::vector<int>> corpus;
    for (const auto& [lang, split] : ds.splits)
      for (const Example& ex : split.train)
        corpus.push_back(encode_prompt(ex.text, model.vocab, spec.tmpl));
    ModelParams warm =
        init_params(model.vocab.size(), static_cast<int>(model.vocab.label_vocab.size()),
                    spec.train.d, spec.train.d_ff, tkey);
    pretrain_embeddings(warm, model.vocab, corpus, spec.train, tkey);
    model.params =
        train_from(std::move(warm), stream.instances, model.vocab, spec.train, tkey, dev, stats);
  } else {
    model.params = train(stream.instances, model.vocab, spec.train, tkey, dev, stats);
  }

  json meta;
  meta["experiment_id"] = spec.experiment_id;
  meta["spec_hash"] = spec_hash(spec);
  meta["regime"] = spec.regime.kind;
  meta["m"] = spec.regime.m;
  meta["k_src"] = spec.k_src == kFullSourceBudget ? json("full") : json(spec.k_src);
  meta["seeds"] = {{"finetune", finetune_seed}, {"shot_src", shot_src_seed}};
  meta["n_train_instances"] = stream.instances.size();
  meta["dropped_demos"] = stream.dropped_demos;
  model.meta_json = meta.dump();
  return model;
}

void adapt_gradient(Model& model, const Dataset& ds, const ExperimentSpec& spec,
                    const std::string& language, const SeedTuple& seeds) {
  const AdaptationConfig a = spec.resolved_adaptation();
  if (!is_gradient_mode(a.mode)) fail(ErrKind::Config, "adapt_gradient: mode is not gradient-based");

  const LanguageSplit& tgt = ds.split(language);
  if (tgt.train.empty()) fail(ErrKind::Data, "no target train data for '" + language + "'");

  const RngKey akey = adaptation_key(spec, seeds.shot_tgt);
  ShotSet shots = sample_k_shot(tgt.train, ds.label_set, static_cast<std::size_t>(a.k_tgt), akey);
  std::vector<ModelInstance> target;
  target.reserve(shots.indices.size());
  for (std::size_t idx : shots.indices)
    target.push_back(
        encode_instance(render_pft_instance(tgt.train[idx], model.tmpl), model.vocab, model.tmpl));

  std::vector<ModelInstance> aux;
  double beta = 0.0;
  if (a.mode == AdaptationMode::GradMacro) {
    // Source shots for the mixed loss come from the model's own training
    // pool, so the mixing never leaks source data the model has not seen.
    const LanguageSplit& src = ds.split(ds.source_lang);
    std::vector<Example> pool;
    if (spec.k_src == kFullSourceBudget) {
      pool = src.train;
    } else {
      ShotSet training_shots =
          sample_k_shot(src.train, ds.label_set, static_cast<std::size_t>(spec.k_src),
                        shot_selection_key(spec, seeds.shot_src));
      for (std::size_t idx : training_shots.indices) pool.push_back(src.train[idx]);
    }
    ShotSet source_shots = sample_k_shot(pool, ds.label_set, static_cast<std::size_t>(a.k_tgt),
                                         shot_selection_key(spec, seeds.shot_src));
    for (std::size_t idx : source_shots.indices)
      aux.push_back(
          encode_instance(render_pft_instance(pool[idx], model.tmpl), model.vocab, model.tmpl));
    beta = a.beta;
  }

  TrainConfig cfg;
  cfg.lr = a.lr;
  cfg.epochs = a.epochs;
  cfg.batch_size = a.batch_size;
  cfg.linear_decay = false;
  fine_tune(model.params, model.vocab, target, aux, beta, cfg, akey);
}

std::vector<Example> build_eval_context(const Dataset& ds, const ExperimentSpec& spec,
                                        const std::string& language, const SeedTuple& seeds) {
  const AdaptationConfig a = spec.resolved_adaptation();
  if (!is_context_mode(a.mode) || a.k_tgt == 0) return {};

  const std::string pool_lang = a.mode == AdaptationMode::IcSrc ? ds.source_lang : language;
  const std::vector<Example>& pool = ds.split(pool_lang).train;
  if (pool.empty())
    fail(ErrKind::Data, "no demonstrations available: train split of '" + pool_lang + "' is empty");

  const RngKey akey = adaptation_key(spec, seeds.shot_tgt);
  ShotSet shots = sample_k_shot(pool, ds.label_set, static_cast<std::size_t>(a.k_tgt), akey);
  std::vector<Example> demos;
  demos.reserve(shots.indices.size());
  for (std::size_t idx : shots.indices) demos.push_back(pool[idx]);

  Rng order = Rng(akey).split("context-order").split(language);
  order.shuffle(demos);
  return demos;
}

EvalOutcome evaluate_split(Backend& backend, const std::vector<Example>& test,
                           const std::vector<Example>& context, const Dataset& ds,
                           const ExperimentSpec& spec) {
  if (test.empty()) fail(ErrKind::Data, "evaluate: empty test split");
  const AdaptationConfig a = spec.resolved_adaptation();

  EvalOutcome out;
  out.n_instances = static_cast<int>(test.size());

  std::vector<GenerationRequest> requests;
  requests.reserve(test.size());
  for (const Example& ex : test) {
    RenderedInstance ri = render_ict_instance(ex, context, spec.tmpl);
    out.dropped_demos += static_cast<long long>(ri.dropped_demos);
    GenerationRequest req;
    req.prompt = a.mode == AdaptationMode::Raw1s ? ri.prompt + kMissingSpanMarker : ri.prompt;
    req.max_new_tokens = spec.max_new_tokens;
    requests.push_back(std::move(req));
  }

  std::vector<GenerationResult> generated =
      generate_many(backend, requests, backend_worker_count());

  std::vector<std::vector<std::string>> gold, pred;
  gold.reserve(test.size());
  pred.reserve(test.size());
  for (std::size_t i = 0; i < test.size(); ++i) {
    gold.push_back(test[i].labels);
    std::vector<std::string> labels;
    json line;
    line["text"] = test[i].text;
    line["gold"] = test[i].labels;
    if (generated[i].ok) {
      ParseDiagnostics diag;
      labels = parse_labels(generated[i].text, ds.label_set, spec.tmpl, &diag);
      out.hallucinated += static_cast<int>(diag.hallucinated);
      out.duplicates += static_cast<int>(diag.duplicates);
      if (labels.empty()) ++out.parse_empty;
      line["raw"] = generated[i].text;
      line["ok"] = true;
    } else {
      ++out.failures;
      std::cerr << "generation failed for instance " << i << ": " << generated[i].error << "\n";
      line["raw"] = nullptr;
      line["error"] = generated[i].error;
      line["ok"] = false;
    }
    line["pred"] = labels;
    pred.push_back(std::move(labels));
    out.prediction_lines.push_back(line.dump());
  }

  const double failure_rate = static_cast<double>(out.failures) / static_cast<double>(test.size());
  if (failure_rate > spec.backend.failure_rate_threshold)
    fail(ErrKind::Backend,
         "aborting: " + std::to_string(out.failures) + " of " + std::to_string(test.size()) +
             " generations failed (rate above " +
             std::to_string(spec.backend.failure_rate_threshold) + ")");

  out.f1 = f1_micro(gold, pred);
  return out;
}

namespace {

std::string safe_filename(const std::string& s) {
  std::string out;
  for (char c : s)
    out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
  return out;
}

std::string row_key(const std::string& language, const SeedTuple& t) {
  return language + "|" + std::to_string(t.finetune) + "|" + std::to_string(t.shot_src) + "|" +
         std::to_string(t.shot_tgt);
}

void sort_rows(std::vector<RunRow>& rows) {
  std::sort(rows.begin(), rows.end(), [](const RunRow& x, const RunRow& y) {
    if (x.language != y.language) return x.language < y.language;
    if (x.seeds.finetune != y.seeds.finetune) return x.seeds.finetune < y.seeds.finetune;
    if (x.seeds.shot_src != y.seeds.shot_src) return x.seeds.shot_src < y.seeds.shot_src;
    return x.seeds.shot_tgt < y.seeds.shot_tgt;
  });
}

}  // namespace

ExperimentResults run_experiment(const ExperimentSpec& spec, bool resume) {
  spec.validate();
  if (spec.output_dir.empty()) fail(ErrKind::Config, "spec: output path required");
  const AdaptationConfig a = spec.resolved_adaptation();
  const bool uses_toy_model = spec.backend.kind == "toy";

  Dataset ds = load_dataset(spec.dataset_path);
  for (const auto& lang : spec.target_languages)
    if (!ds.has_language(lang))
      fail(ErrKind::Data, "target language '" + lang + "' is not in the dataset");

  const std::string hash = spec_hash(spec);
  const fs::path out_dir(spec.output_dir);
  const fs::path pred_dir = out_dir / "predictions";
  fs::create_directories(pred_dir);

  {
    json cfg;
    cfg["spec"] = json::parse(spec_canonical_json(spec));
    cfg["spec_hash"] = hash;
    cfg["output"] = spec.output_dir;
    write_text_file((out_dir / "config.json").string(), cfg.dump(2) + "\n");
  }

  ExperimentResults results;
  results.experiment_id = spec.experiment_id;
  results.spec_hash = hash;
  results.mode = adaptation_mode_name(a.mode);
  results.regime = spec.regime.kind;

  {
    std::set<std::string> keys;
    if (uses_toy_model) {
      for (std::uint64_t f : spec.finetune_seeds) {
        keys.insert(training_key(spec, f).describe());
        if (spec.regime.kind == "ict") keys.insert(context_selection_key(spec, f).describe());
      }
      if (spec.k_src != kFullSourceBudget || a.mode == AdaptationMode::GradMacro)
        for (std::uint64_t s : spec.shot_src_seeds)
          keys.insert(shot_selection_key(spec, s).describe());
    }
    if (a.mode != AdaptationMode::Zero)
      for (std::uint64_t t : spec.shot_tgt_seeds) keys.insert(adaptation_key(spec, t).describe());
    results.rng_keys.assign(keys.begin(), keys.end());
  }

  const std::string partial_path = (out_dir / "results.partial.json").string();
  const std::string final_path = (out_dir / "results.json").string();
  std::map<std::string, RunRow> done;
  if (resume) {
    if (fs::exists(final_path)) {
      ExperimentResults prev = results_from_json(read_text_file(final_path));
      if (prev.complete && prev.spec_hash == hash) return prev;
    }
    if (fs::exists(partial_path)) {
      ExperimentResults prev = results_from_json(read_text_file(partial_path));
      if (prev.spec_hash != hash)
        fail(ErrKind::Config, "partial results belong to a different spec (" + prev.spec_hash +
                                  " vs " + hash + "); refusing to resume");
      for (const RunRow& row : prev.rows) done.emplace(row_key(row.language, row.seeds), row);
    }
  }

  const std::vector<std::string> langs = spec.target_languages.empty()
                                             ? std::vector<std::string>{ds.source_lang}
                                             : spec.target_languages;

  std::map<std::pair<std::uint64_t, std::uint64_t>, std::shared_ptr<const Model>> model_cache;
  std::map<std::string, double> source_cache;

  for (const SeedTuple& t : seed_cross_product(spec)) {
    std::shared_ptr<const Model> base;
    if (uses_toy_model) {
      const auto cache_key = std::make_pair(t.finetune, t.shot_src);
      auto it = model_cache.find(cache_key);
      if (it == model_cache.end()) {
        // A resumed experiment whose remaining runs all hit `done` should not
        // pay for training, so the model is built lazily below.
        it = model_cache.emplace(cache_key, nullptr).first;
      }
      base = it->second;
    }

    for (const std::string& lang : langs) {
      const std::string key = row_key(lang, t);
      if (auto it = done.find(key); it != done.end()) {
        results.rows.push_back(it->second);
        continue;
      }

      if (uses_toy_model && !base) {
        base = std::make_shared<const Model>(run_training(ds, spec, t.finetune, t.shot_src));
        model_cache[std::make_pair(t.finetune, t.shot_src)] = base;
      }

      std::shared_ptr<const Model> eval_model = base;
      if (is_gradient_mode(a.mode)) {
        auto adapted = std::make_shared<Model>(*base);
        adapt_gradient(*adapted, ds, spec, lang, t);
        eval_model = std::move(adapted);
      }

      std::unique_ptr<Backend> backend = make_backend(spec.backend, eval_model);

      std::vector<Example> ctx = build_eval_context(ds, spec, lang, t);
      EvalOutcome outcome = evaluate_split(*backend, ds.split(lang).test, ctx, ds, spec);

      const std::string pred_name = "pred." + safe_filename(lang) + ".f" +
                                    std::to_string(t.finetune) + ".s" + std::to_string(t.shot_src) +
                                    ".t" + std::to_string(t.shot_tgt) + ".jsonl";
      write_text_file((pred_dir / pred_name).string(),
                      join(outcome.prediction_lines, "\n") + "\n");

      RunRow row;
      row.language = lang;
      row.seeds = t;
      row.f1 = outcome.f1;
      row.n_instances = outcome.n_instances;
      row.hallucinated = outcome.hallucinated;
      row.duplicates = outcome.duplicates;
      row.parse_empty = outcome.parse_empty;
      row.failures = outcome.failures;
      row.dropped_demos = outcome.dropped_demos;

      if (spec.evaluate_source) {
        if (lang == ds.source_lang) {
          row.source_f1 = outcome.f1;
        } else {
          std::string disc = "f" + std::to_string(t.finetune) + ".s" + std::to_string(t.shot_src);
          if (is_context_mode(a.mode)) disc += ".t" + std::to_string(t.shot_tgt);
          if (is_gradient_mode(a.mode))
            disc += ".t" + std::to_string(t.shot_tgt) + "." + safe_filename(lang);
          auto it = source_cache.find(disc);
          if (it == source_cache.end()) {
            std::vector<Example> sctx = build_eval_context(ds, spec, ds.source_lang, t);
            EvalOutcome s = evaluate_split(*backend, ds.split(ds.source_lang).test, sctx, ds, spec);
            write_text_file((pred_dir / ("pred-src." + disc + ".jsonl")).string(),
                            join(s.prediction_lines, "\n") + "\n");
            it = source_cache.emplace(disc, s.f1).first;
          }
          row.source_f1 = it->second;
        }
      }

      results.rows.push_back(row);

      ExperimentResults partial = results;
      partial.complete = false;
      sort_rows(partial.rows);
      write_text_file(partial_path, results_to_json(partial));
    }
  }

  sort_rows(results.rows);
  results.complete = true;
  write_text_file(final_path, results_to_json(results));
  std::error_code ec;
  fs::remove(partial_path, ec);
  return results;
}

}  // namespace icxlt
