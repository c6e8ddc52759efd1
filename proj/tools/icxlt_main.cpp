// Command-line front end. Everything goes through the public C API; the only
// logic here is flag handling and merging overrides into spec JSON before the
// call. Precedence: command-line flags beat spec-file values, which beat the
// library's built-in defaults.

#include <icxlt/icxlt.h>

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

using nlohmann::json;

namespace {

bool g_json_output = false;

int exit_code_for(icxlt_status st) {
  switch (st) {
    case ICXLT_OK:
      return 0;
    case ICXLT_E_INVALID:
      return 1;  // usage / bad configuration
    case ICXLT_E_BACKEND:
      return 3;
    default:
      return 2;  // data, io, internal
  }
}

int report_failure(icxlt_status st) {
  std::string msg = icxlt_last_error();
  if (msg.empty()) msg = "unknown error";
  if (g_json_output) {
    json e;
    e["status"] = "error";
    e["code"] = static_cast<int>(st);
    e["message"] = msg;
    std::cout << e.dump() << "\n";
  }
  std::cerr << "error: " << msg << "\n";
  return exit_code_for(st);
}

int report_success(const json& payload, const std::string& human) {
  if (g_json_output) {
    json p = payload;
    p["status"] = "ok";
    std::cout << p.dump() << "\n";
  } else if (!human.empty()) {
    std::cout << human << "\n";
  }
  return 0;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json load_json_file(const std::string& path) {
  json j = json::parse(slurp(path), nullptr, false);
  if (j.is_discarded() || !j.is_object())
    throw std::runtime_error(path + ": not a JSON object");
  return j;
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
  if (!out) throw std::runtime_error("short write to " + path);
}

// Persist the merged configuration next to whatever the command produced so a
// result directory is self-describing.
void persist_cli_config(const std::string& dir, const json& merged) {
  write_file(dir + "/cli_config.json", merged.dump(2) + "\n");
}

// App::count throws on options a subcommand never registered; the merge
// below probes a superset of flags, so look up defensively.
std::size_t flag_count(const CLI::App& sub, const std::string& name) {
  const CLI::Option* opt = sub.get_option_no_throw(name);
  return opt ? opt->count() : 0;
}

// CLI spellings use hyphens; the spec schema uses underscores.
std::string mode_token(std::string m) {
  for (char& c : m) {
    if (c == '-') c = '_';
  }
  if (m == "macro") return "grad_macro";
  return m;
}

json k_src_value(const std::string& s) {
  if (s == "full") return json("full");
  std::size_t pos = 0;
  long v = -1;
  try {
    v = std::stol(s, &pos);
  } catch (...) {
    pos = 0;
  }
  if (pos != s.size() || v < 0)
    throw CLI::ValidationError("--k-src", "expects a non-negative integer or 'full'");
  return json(v);
}

// "code:rho" pairs from --target flags.
json target_language_entry(const std::string& s) {
  auto colon = s.find(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == s.size())
    throw CLI::ValidationError("--target", "expects code:rho, e.g. sw:0.25");
  json e;
  e["code"] = s.substr(0, colon);
  std::size_t pos = 0;
  double rho = 0.0;
  std::string tail = s.substr(colon + 1);
  try {
    rho = std::stod(tail, &pos);
  } catch (...) {
    pos = 0;
  }
  if (pos != tail.size())
    throw CLI::ValidationError("--target", "rho in '" + s + "' is not a number");
  e["rho"] = rho;
  return e;
}

struct SynthArgs {
  std::string config_path;
  std::string out_dir;
  std::string name;
  std::string source_lang;
  std::vector<std::string> targets;
  std::uint64_t seed = 0;
  int n_classes = 0;
  int indicators_per_class = 0;
  int indicators_per_example = 0;
  int noise_vocab = 0;
  int noise_per_example = 0;
  double multi_label_prob = 0.0;
  int train_per_lang = 0;
  int test_per_lang = 0;
};

int run_synth(const CLI::App& sub, const SynthArgs& a) {
  json cfg = a.config_path.empty() ? json::object() : load_json_file(a.config_path);
  if (flag_count(sub, "--name")) cfg["name"] = a.name;
  if (flag_count(sub, "--source-lang")) cfg["source_lang"] = a.source_lang;
  if (flag_count(sub, "--seed")) cfg["seed"] = a.seed;
  if (flag_count(sub, "--classes")) cfg["n_classes"] = a.n_classes;
  if (flag_count(sub, "--indicators-per-class")) cfg["indicators_per_class"] = a.indicators_per_class;
  if (flag_count(sub, "--indicators-per-example"))
    cfg["indicators_per_example"] = a.indicators_per_example;
  if (flag_count(sub, "--noise-vocab")) cfg["noise_vocab"] = a.noise_vocab;
  if (flag_count(sub, "--noise-per-example")) cfg["noise_per_example"] = a.noise_per_example;
  if (flag_count(sub, "--multi-label-prob")) cfg["multi_label_prob"] = a.multi_label_prob;
  if (flag_count(sub, "--train-per-lang")) cfg["train_per_lang"] = a.train_per_lang;
  if (flag_count(sub, "--test-per-lang")) cfg["test_per_lang"] = a.test_per_lang;
  if (!a.targets.empty()) {
    json arr = json::array();
    for (const auto& t : a.targets) arr.push_back(target_language_entry(t));
    cfg["target_languages"] = arr;
  }

  icxlt_status st = icxlt_synth_generate(cfg.dump().c_str(), a.out_dir.c_str());
  if (st != ICXLT_OK) return report_failure(st);
  persist_cli_config(a.out_dir, cfg);
  json payload;
  payload["out"] = a.out_dir;
  payload["manifest"] = a.out_dir + "/manifest.json";
  return report_success(payload, "dataset written to " + a.out_dir);
}

// Shared spec-override surface for train / adapt / eval / run. Each field is
// only merged when its flag was actually given.
struct SpecArgs {
  std::string spec_path;
  std::string experiment_id;
  std::string dataset;
  std::string regime;
  int m = 0;
  std::string k_src;
  std::string mode;
  int k_tgt = 0;
  double beta = 0.0;
  double adapt_lr = 0.0;
  int adapt_epochs = 0;
  int adapt_batch = 0;
  double lr = 0.0;
  int epochs = 0;
  int batch_size = 0;
  int d = 0;
  int d_ff = 0;
  std::string backend;
  std::string base_url;
  std::string model_dir;
  std::string output;
  int max_new_tokens = 0;
  bool no_source_eval = false;
  std::vector<std::string> languages;
  std::vector<std::uint64_t> seeds_finetune;
  std::vector<std::uint64_t> seeds_shot_src;
  std::vector<std::uint64_t> seeds_shot_tgt;
};

void add_train_overrides(CLI::App* sub, SpecArgs& a) {
  sub->add_option("--dataset", a.dataset, "Dataset manifest path");
  sub->add_option("--experiment-id", a.experiment_id, "Experiment identifier");
  sub->add_option("--regime", a.regime, "Training regime")
      ->check(CLI::IsMember({"ict", "pft"}));
  sub->add_option("--m", a.m, "Demonstrations per training instance (ict only)");
  sub->add_option("--k-src", a.k_src, "Source shots per class, or 'full'");
  sub->add_option("--lr", a.lr, "Training learning rate");
  sub->add_option("--epochs", a.epochs, "Training epochs");
  sub->add_option("--batch-size", a.batch_size, "Training batch size");
  sub->add_option("--d", a.d, "Model width");
  sub->add_option("--d-ff", a.d_ff, "Feed-forward width");
  sub->add_option("--seeds-finetune", a.seeds_finetune, "Training seeds (comma separated)")
      ->delimiter(',');
  sub->add_option("--seeds-shot-src", a.seeds_shot_src, "Source shot-selection seeds")
      ->delimiter(',');
}

void add_adapt_overrides(CLI::App* sub, SpecArgs& a, const std::vector<std::string>& modes) {
  sub->add_option("--mode", a.mode, "Adaptation mode")->check(CLI::IsMember(modes));
  sub->add_option("--k-tgt", a.k_tgt, "Target shots per class");
  sub->add_option("--beta", a.beta, "Source loss weight for macro adaptation");
  sub->add_option("--adapt-lr", a.adapt_lr, "Adaptation learning rate");
  sub->add_option("--adapt-epochs", a.adapt_epochs, "Adaptation epochs");
  sub->add_option("--adapt-batch-size", a.adapt_batch, "Adaptation batch size");
  sub->add_option("--seeds-shot-tgt", a.seeds_shot_tgt, "Target shot-selection seeds")
      ->delimiter(',');
}

void add_backend_overrides(CLI::App* sub, SpecArgs& a) {
  sub->add_option("--backend", a.backend, "Generation backend")
      ->check(CLI::IsMember({"toy", "remote"}));
  sub->add_option("--base-url", a.base_url,
                  "Remote backend URL (env ICXLT_BACKEND_URL also honored)");
  sub->add_option("--max-new-tokens", a.max_new_tokens, "Generation length cap");
}

json merge_spec(const CLI::App& sub, const SpecArgs& a) {
  json spec = a.spec_path.empty() ? json::object() : load_json_file(a.spec_path);
  if (flag_count(sub, "--experiment-id")) spec["experiment_id"] = a.experiment_id;
  if (flag_count(sub, "--dataset")) spec["dataset"] = a.dataset;
  if (flag_count(sub, "--regime")) spec["regime"]["kind"] = a.regime;
  if (flag_count(sub, "--m")) spec["regime"]["m"] = a.m;
  if (flag_count(sub, "--k-src")) spec["k_src"] = k_src_value(a.k_src);
  if (flag_count(sub, "--mode")) spec["adaptation"]["mode"] = mode_token(a.mode);
  if (flag_count(sub, "--k-tgt")) spec["adaptation"]["k_tgt"] = a.k_tgt;
  if (flag_count(sub, "--beta")) spec["adaptation"]["beta"] = a.beta;
  if (flag_count(sub, "--adapt-lr")) spec["adaptation"]["lr"] = a.adapt_lr;
  if (flag_count(sub, "--adapt-epochs")) spec["adaptation"]["epochs"] = a.adapt_epochs;
  if (flag_count(sub, "--adapt-batch-size")) spec["adaptation"]["batch_size"] = a.adapt_batch;
  if (flag_count(sub, "--lr")) spec["train"]["lr"] = a.lr;
  if (flag_count(sub, "--epochs")) spec["train"]["epochs"] = a.epochs;
  if (flag_count(sub, "--batch-size")) spec["train"]["batch_size"] = a.batch_size;
  if (flag_count(sub, "--d")) spec["train"]["d"] = a.d;
  if (flag_count(sub, "--d-ff")) spec["train"]["d_ff"] = a.d_ff;
  if (flag_count(sub, "--backend")) spec["backend"]["kind"] = a.backend;
  if (flag_count(sub, "--base-url")) spec["backend"]["base_url"] = a.base_url;
  if (flag_count(sub, "--model-dir")) spec["backend"]["model_dir"] = a.model_dir;
  if (flag_count(sub, "--output")) spec["output"] = a.output;
  if (flag_count(sub, "--max-new-tokens")) spec["max_new_tokens"] = a.max_new_tokens;
  if (flag_count(sub, "--no-source-eval")) spec["evaluate_source"] = false;
  if (flag_count(sub, "--languages")) spec["target_languages"] = a.languages;
  if (flag_count(sub, "--seeds-finetune")) spec["seeds"]["finetune"] = a.seeds_finetune;
  if (flag_count(sub, "--seeds-shot-src")) spec["seeds"]["shot_src"] = a.seeds_shot_src;
  if (flag_count(sub, "--seeds-shot-tgt")) spec["seeds"]["shot_tgt"] = a.seeds_shot_tgt;
  if (!spec.contains("experiment_id")) spec["experiment_id"] = "cli";
  return spec;
}

int run_train(const CLI::App& sub, const SpecArgs& a, const std::string& out_dir) {
  json spec = merge_spec(sub, a);
  icxlt_status st = icxlt_train(spec.dump().c_str(), out_dir.c_str());
  if (st != ICXLT_OK) return report_failure(st);
  persist_cli_config(out_dir, spec);
  json payload;
  payload["model"] = out_dir;
  return report_success(payload, "model written to " + out_dir);
}

int run_adapt(const CLI::App& sub, const SpecArgs& a, const std::string& model_in,
              const std::string& language, const std::string& out_dir) {
  json spec = merge_spec(sub, a);
  if (!spec.contains("adaptation") || !spec["adaptation"].contains("mode"))
    spec["adaptation"]["mode"] = "grad";
  icxlt_status st =
      icxlt_adapt(spec.dump().c_str(), model_in.c_str(), language.c_str(), out_dir.c_str());
  if (st != ICXLT_OK) return report_failure(st);
  persist_cli_config(out_dir, spec);
  json payload;
  payload["model"] = out_dir;
  payload["language"] = language;
  return report_success(payload, "adapted model written to " + out_dir);
}

int run_eval(const CLI::App& sub, const SpecArgs& a, const std::string& model_dir,
             const std::string& language, const std::string& out_path) {
  json spec = merge_spec(sub, a);
  icxlt_status st = icxlt_evaluate(spec.dump().c_str(),
                                   model_dir.empty() ? nullptr : model_dir.c_str(),
                                   language.c_str(), out_path.c_str());
  if (st != ICXLT_OK) return report_failure(st);

  json results = load_json_file(out_path);
  json payload;
  payload["results"] = out_path;
  payload["language"] = language;
  if (results.contains("f1")) payload["f1"] = results["f1"];
  std::ostringstream human;
  human << "f1";
  if (results.contains("f1")) human << " " << results["f1"].dump();
  human << " on " << language << ", details in " << out_path;
  return report_success(payload, human.str());
}

int run_run(const CLI::App& sub, const SpecArgs& a, bool resume) {
  json spec = merge_spec(sub, a);
  icxlt_status st = icxlt_run_experiment_json(spec.dump().c_str(), resume ? 1 : 0);
  if (st != ICXLT_OK) return report_failure(st);
  std::string out = spec.value("output", "");
  json payload;
  payload["results"] = out + "/results.json";
  return report_success(payload, "results written to " + out + "/results.json");
}

struct ReportArgs {
  std::vector<std::string> results;
  std::string covariates;
  std::string out_dir = "report";
  bool per_run = false;
  std::uint64_t permutation_seed = 1;
  int n_permutations = 20000;
};

int run_report(const CLI::App& sub, const ReportArgs& a) {
  json opts;
  opts["results"] = a.results;
  if (!a.covariates.empty()) opts["covariates"] = a.covariates;
  opts["per_run"] = a.per_run;
  if (flag_count(sub, "--permutation-seed")) opts["permutation_seed"] = a.permutation_seed;
  if (flag_count(sub, "--n-permutations")) opts["n_permutations"] = a.n_permutations;
  icxlt_status st = icxlt_report(opts.dump().c_str(), a.out_dir.c_str());
  if (st != ICXLT_OK) return report_failure(st);
  json payload;
  payload["report"] = a.out_dir + "/report.json";
  payload["tables"] = a.out_dir + "/tables";
  return report_success(payload, "report written to " + a.out_dir);
}

int run_validate(const std::string& manifest, const std::string& spec) {
  if (manifest.empty() == spec.empty())
    throw CLI::ValidationError("validate", "pass exactly one of --manifest or --spec");
  icxlt_status st = manifest.empty() ? icxlt_validate_spec(spec.c_str())
                                     : icxlt_validate_dataset(manifest.c_str());
  if (st != ICXLT_OK) return report_failure(st);
  return report_success(json::object(), "ok");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-lingual in-context transfer harness"};
  app.set_version_flag("--version", std::string(icxlt_version()));
  app.add_flag("--json", g_json_output, "Machine-readable JSON on stdout");
  app.require_subcommand(1);

  // synth
  SynthArgs sy;
  CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic multilingual corpus");
  synth->fallthrough();
  synth->add_option("--config", sy.config_path, "Generator config JSON");
  synth->add_option("--out", sy.out_dir, "Output directory")->required();
  synth->add_option("--name", sy.name, "Corpus name");
  synth->add_option("--source-lang", sy.source_lang, "Source language code");
  synth->add_option("--seed", sy.seed, "Generator seed");
  synth->add_option("--classes", sy.n_classes, "Number of classes");
  synth->add_option("--indicators-per-class", sy.indicators_per_class,
                    "Indicator tokens owned by each class");
  synth->add_option("--indicators-per-example", sy.indicators_per_example,
                    "Indicator tokens emitted per gold class");
  synth->add_option("--noise-vocab", sy.noise_vocab, "Size of the noise token pool");
  synth->add_option("--noise-per-example", sy.noise_per_example, "Noise tokens per example");
  synth->add_option("--multi-label-prob", sy.multi_label_prob,
                    "Probability an example carries multiple labels");
  synth->add_option("--train-per-lang", sy.train_per_lang, "Training examples per language");
  synth->add_option("--test-per-lang", sy.test_per_lang, "Test examples per language");
  synth->add_option("--target", sy.targets, "Target language as code:rho (repeatable)");

  // train
  SpecArgs tr;
  std::string train_out;
  CLI::App* train = app.add_subcommand("train", "Train a model (ict or pft regime)");
  train->fallthrough();
  train->add_option("--spec", tr.spec_path, "Experiment spec JSON");
  train->add_option("--out", train_out, "Model output directory")->required();
  add_train_overrides(train, tr);

  // adapt
  SpecArgs ad;
  std::string adapt_model, adapt_lang, adapt_out;
  CLI::App* adapt = app.add_subcommand("adapt", "Gradient-adapt a trained model (grad or macro)");
  adapt->fallthrough();
  adapt->add_option("--spec", ad.spec_path, "Experiment spec JSON");
  adapt->add_option("--model", adapt_model, "Trained model directory")->required();
  adapt->add_option("--language", adapt_lang, "Target language")->required();
  adapt->add_option("--out", adapt_out, "Adapted model output directory")->required();
  adapt->add_option("--dataset", ad.dataset, "Dataset manifest path");
  adapt->add_option("--experiment-id", ad.experiment_id, "Experiment identifier");
  add_adapt_overrides(adapt, ad, {"grad", "macro"});

  // eval
  SpecArgs ev;
  std::string eval_model, eval_lang, eval_out;
  CLI::App* eval = app.add_subcommand("eval", "Evaluate one language split");
  eval->fallthrough();
  eval->add_option("--spec", ev.spec_path, "Experiment spec JSON");
  eval->add_option("--model", eval_model, "Model directory (toy backend)");
  eval->add_option("--language", eval_lang, "Language to evaluate")->required();
  eval->add_option("--out", eval_out, "Results JSON path")->required();
  add_adapt_overrides(eval, ev, {"zero", "ic", "ic-src", "raw-1s"});
  add_backend_overrides(eval, ev);
  eval->add_option("--dataset", ev.dataset, "Dataset manifest path");
  eval->add_option("--experiment-id", ev.experiment_id, "Experiment identifier");

  // run
  SpecArgs ru;
  bool resume = false;
  CLI::App* run = app.add_subcommand("run", "Run a full experiment spec");
  run->fallthrough();
  run->add_option("--spec", ru.spec_path, "Experiment spec JSON")->required();
  run->add_flag("--resume", resume, "Continue a partial run");
  run->add_option("--output", ru.output, "Output directory override");
  run->add_option("--model-dir", ru.model_dir, "Backend model directory");
  run->add_option("--languages", ru.languages, "Target languages (comma separated)")
      ->delimiter(',');
  run->add_flag("--no-source-eval", ru.no_source_eval, "Skip source-language scoring");
  add_train_overrides(run, ru);
  add_adapt_overrides(run, ru, {"zero", "ic", "ic-src", "raw-1s", "grad", "macro"});
  add_backend_overrides(run, ru);

  // report
  ReportArgs rp;
  CLI::App* report = app.add_subcommand("report", "Aggregate results into tables and metrics");
  report->fallthrough();
  report->add_option("results", rp.results, "results.json files")->required()->expected(-1);
  report->add_option("--covariates", rp.covariates, "Language covariate CSV");
  report->add_flag("--per-run", rp.per_run, "Pair improvement deltas per run, not per language");
  report->add_option("--out", rp.out_dir, "Report output directory");
  report->add_option("--permutation-seed", rp.permutation_seed, "Permutation test seed");
  report->add_option("--n-permutations", rp.n_permutations, "Permutation count");

  // validate
  std::string val_manifest, val_spec;
  CLI::App* validate = app.add_subcommand("validate", "Lint a dataset manifest or experiment spec");
  validate->fallthrough();
  CLI::Option* vm = validate->add_option("--manifest", val_manifest, "Dataset manifest path");
  CLI::Option* vs = validate->add_option("--spec", val_spec, "Experiment spec path");
  vm->excludes(vs);

  try {
    app.parse(argc, argv);
    if (app.got_subcommand(synth)) return run_synth(*synth, sy);
    if (app.got_subcommand(train)) return run_train(*train, tr, train_out);
    if (app.got_subcommand(adapt)) return run_adapt(*adapt, ad, adapt_model, adapt_lang, adapt_out);
    if (app.got_subcommand(eval)) return run_eval(*eval, ev, eval_model, eval_lang, eval_out);
    if (app.got_subcommand(run)) return run_run(*run, ru, resume);
    if (app.got_subcommand(report)) return run_report(*report, rp);
    if (app.got_subcommand(validate)) return run_validate(val_manifest, val_spec);
    return 1;
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  } catch (const std::exception& e) {
    if (g_json_output) {
      json err;
      err["status"] = "error";
      err["code"] = static_cast<int>(ICXLT_E_IO);
      err["message"] = e.what();
      std::cout << err.dump() << "\n";
    }
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
