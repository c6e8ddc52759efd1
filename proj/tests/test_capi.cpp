#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <icxlt/icxlt.h>

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

// This suite exercises the shared-library boundary only: every fixture is
// written to disk as raw JSON and every behavior is observed through the
// exported functions. No core headers are included on purpose.

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("icxlt_capi_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void put(const fs::path& p, const std::string& body) {
  std::ofstream out(p);
  REQUIRE(out.good());
  out << body;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

std::string last_error() { return icxlt_last_error() ? icxlt_last_error() : "<null>"; }

json record(const std::string& text, const std::string& label, const std::string& lang) {
  return json{{"text", text}, {"labels", json::array({label})}, {"lang", lang}};
}

// Three languages, two labels, a dev split only for the source.
std::string tiny_corpus(const fs::path& dir) {
  auto jsonl = [&](const char* name, const std::vector<json>& rows) {
    std::string body;
    for (const auto& r : rows) body += r.dump() + "\n";
    put(dir / name, body);
  };

  jsonl("src.train.jsonl",
        {record("alpha one", "neg", "src"), record("bravo one", "pos", "src"),
         record("alpha two", "neg", "src"), record("bravo two", "pos", "src"),
         record("alpha three", "neg", "src"), record("bravo three", "pos", "src"),
         record("alpha four", "neg", "src"), record("bravo four", "pos", "src"),
         record("alpha five", "neg", "src"), record("bravo five", "pos", "src"),
         record("alpha six", "neg", "src"), record("bravo six", "pos", "src")});
  jsonl("src.test.jsonl", {record("alpha seven", "neg", "src"), record("bravo seven", "pos", "src"),
                           record("alpha eight", "neg", "src")});
  jsonl("src.dev.jsonl", {record("alpha nine", "neg", "src"), record("bravo nine", "pos", "src")});
  jsonl("tt.train.jsonl", {record("anka bir", "neg", "tt"), record("bravu bir", "pos", "tt"),
                           record("anka iki", "neg", "tt"), record("bravu iki", "pos", "tt")});
  jsonl("tt.test.jsonl", {record("anka yedi", "neg", "tt"), record("bravu yedi", "pos", "tt"),
                          record("anka sekiz", "neg", "tt")});
  jsonl("zz.train.jsonl", {record("zalu jeden", "neg", "zz"), record("zbra jeden", "pos", "zz"),
                           record("zalu dwa", "neg", "zz"), record("zbra dwa", "pos", "zz")});
  jsonl("zz.test.jsonl", {record("zalu siedem", "neg", "zz"), record("zbra siedem", "pos", "zz"),
                          record("zalu osiem", "neg", "zz")});

  json manifest = {
      {"name", "tiny"},
      {"task_kind", "single_label"},
      {"source_lang", "src"},
      {"label_set", json::array({"neg", "pos"})},
      {"splits",
       {{"src",
         {{"train", "src.train.jsonl"}, {"test", "src.test.jsonl"}, {"dev", "src.dev.jsonl"}}},
        {"tt", {{"train", "tt.train.jsonl"}, {"test", "tt.test.jsonl"}}},
        {"zz", {{"train", "zz.train.jsonl"}, {"test", "zz.test.jsonl"}}}}}};
  const fs::path p = dir / "manifest.json";
  put(p, manifest.dump(2) + "\n");
  return p.string();
}

json base_spec(const std::string& id, const std::string& manifest, const fs::path& out_dir) {
  return json{{"experiment_id", id},
              {"dataset", manifest},
              {"regime", {{"kind", "ict"}, {"m", 2}}},
              {"k_src", "full"},
              {"adaptation", {{"mode", "zero"}}},
              {"target_languages", json::array({"tt"})},
              {"seeds",
               {{"finetune", json::array({1})},
                {"shot_src", json::array({1})},
                {"shot_tgt", json::array({1})}}},
              {"train", {{"lr", 0.01}, {"epochs", 2}, {"batch_size", 4}, {"d", 4}, {"d_ff", 8}}},
              {"backend", {{"kind", "toy"}}},
              {"output", (out_dir / "runs").string()},
              {"max_new_tokens", 4}};
}

// Loopback generation server speaking the remote protocol.
struct MockServer {
  httplib::Server svr;
  std::thread th;
  int port = -1;

  explicit MockServer(httplib::Server::Handler handler) {
    svr.Post("/generate", std::move(handler));
    port = svr.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    th = std::thread([this] { svr.listen_after_bind(); });
    svr.wait_until_ready();
  }
  ~MockServer() {
    svr.stop();
    th.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port); }
};

}  // namespace

TEST_CASE("version and error state lifecycle") {
  // Nothing has been called on this thread yet: the error slot starts empty.
  REQUIRE(icxlt_last_error() != nullptr);
  CHECK(std::string(icxlt_last_error()).empty());

  const char* v = icxlt_version();
  REQUIRE(v != nullptr);
  REQUIRE(std::strlen(v) > 0);
  CHECK(std::isdigit(static_cast<unsigned char>(v[0])));

  // A failing call fills the slot...
  icxlt_dataset* ds = nullptr;
  CHECK(icxlt_dataset_open(nullptr, &ds) == ICXLT_E_INVALID);
  CHECK(last_error().find("manifest path") != std::string::npos);

  // ...a different failure replaces it...
  CHECK(icxlt_dataset_open("/nonexistent/icxlt/manifest.json", &ds) == ICXLT_E_IO);
  CHECK(last_error().find("cannot open") != std::string::npos);

  // ...and the next success clears it.
  const fs::path dir = scratch("lifecycle");
  const std::string manifest = tiny_corpus(dir);
  REQUIRE(icxlt_dataset_open(manifest.c_str(), &ds) == ICXLT_OK);
  CHECK(std::string(icxlt_last_error()).empty());
  icxlt_dataset_free(ds);
}

TEST_CASE("status codes classify the failure families") {
  const fs::path dir = scratch("status");

  // Empty strings are rejected like null pointers.
  icxlt_dataset* ds = nullptr;
  CHECK(icxlt_dataset_open("", &ds) == ICXLT_E_INVALID);

  const std::string manifest = tiny_corpus(dir);
  CHECK(icxlt_dataset_open(manifest.c_str(), nullptr) == ICXLT_E_INVALID);
  CHECK(last_error().find("output handle") != std::string::npos);

  // Unreadable file vs unparseable file vs semantically broken file.
  CHECK(icxlt_validate_dataset((dir / "missing.json").string().c_str()) == ICXLT_E_IO);

  put(dir / "garbage.json", "not json at all");
  CHECK(icxlt_validate_dataset((dir / "garbage.json").string().c_str()) == ICXLT_E_DATA);
  CHECK(last_error().find("not valid JSON") != std::string::npos);

  // Train/test overlap is a data error even though the file parses.
  put(dir / "overlap.train.jsonl", record("same text", "neg", "ov").dump() + "\n");
  put(dir / "overlap.test.jsonl", record("same text", "neg", "ov").dump() + "\n");
  json bad = {{"name", "ov"},
              {"task_kind", "single_label"},
              {"source_lang", "ov"},
              {"splits",
               {{"ov", {{"train", "overlap.train.jsonl"}, {"test", "overlap.test.jsonl"}}}}}};
  put(dir / "overlap.json", bad.dump());
  CHECK(icxlt_validate_dataset((dir / "overlap.json").string().c_str()) == ICXLT_E_DATA);
  CHECK(last_error().find("overlap") != std::string::npos);

  // Spec validation: config problems come back as invalid-argument.
  json spec = base_spec("bad", manifest, dir);
  spec["adaptation"] = {{"mode", "zero"}, {"k_tgt", 2}};
  put(dir / "bad_spec.json", spec.dump());
  CHECK(icxlt_validate_spec((dir / "bad_spec.json").string().c_str()) == ICXLT_E_INVALID);

  put(dir / "broken_spec.json", "{nope");
  CHECK(icxlt_validate_spec((dir / "broken_spec.json").string().c_str()) == ICXLT_E_INVALID);

  CHECK(icxlt_validate_spec((dir / "no_such_spec.json").string().c_str()) == ICXLT_E_IO);

  // And a good spec passes.
  put(dir / "good_spec.json", base_spec("good", manifest, dir).dump());
  CHECK(icxlt_validate_spec((dir / "good_spec.json").string().c_str()) == ICXLT_OK);
}

TEST_CASE("dataset handles expose the corpus") {
  const fs::path dir = scratch("dataset");
  const std::string manifest = tiny_corpus(dir);

  icxlt_dataset* ds = nullptr;
  REQUIRE(icxlt_dataset_open(manifest.c_str(), &ds) == ICXLT_OK);
  REQUIRE(ds != nullptr);

  CHECK(icxlt_dataset_label_count(ds) == 2);
  CHECK(std::string(icxlt_dataset_label(ds, 0)) == "neg");
  CHECK(std::string(icxlt_dataset_label(ds, 1)) == "pos");
  CHECK(icxlt_dataset_label(ds, 2) == nullptr);

  CHECK(icxlt_dataset_language_count(ds) == 3);
  CHECK(std::string(icxlt_dataset_language(ds, 0)) == "src");
  CHECK(std::string(icxlt_dataset_language(ds, 1)) == "tt");
  CHECK(std::string(icxlt_dataset_language(ds, 2)) == "zz");
  CHECK(icxlt_dataset_language(ds, 3) == nullptr);

  CHECK(std::string(icxlt_dataset_source_language(ds)) == "src");

  CHECK(icxlt_dataset_split_size(ds, "src", "train") == 12);
  CHECK(icxlt_dataset_split_size(ds, "src", "test") == 3);
  CHECK(icxlt_dataset_split_size(ds, "src", "dev") == 2);
  CHECK(icxlt_dataset_split_size(ds, "tt", "train") == 4);
  CHECK(icxlt_dataset_split_size(ds, "tt", "dev") == 0);
  CHECK(icxlt_dataset_split_size(ds, "qq", "train") == 0);
  CHECK(icxlt_dataset_split_size(ds, "tt", "validation") == 0);
  CHECK(icxlt_dataset_split_size(ds, nullptr, "train") == 0);
  CHECK(icxlt_dataset_split_size(ds, "tt", nullptr) == 0);

  // Null handles are inert across the whole accessor surface.
  CHECK(icxlt_dataset_label_count(nullptr) == 0);
  CHECK(icxlt_dataset_label(nullptr, 0) == nullptr);
  CHECK(icxlt_dataset_language_count(nullptr) == 0);
  CHECK(icxlt_dataset_language(nullptr, 0) == nullptr);
  CHECK(icxlt_dataset_source_language(nullptr) == nullptr);
  CHECK(icxlt_dataset_split_size(nullptr, "src", "train") == 0);

  icxlt_dataset_free(ds);
  icxlt_dataset_free(nullptr);
}

TEST_CASE("synthetic corpus generation round-trips") {
  const fs::path dir = scratch("synth");
  const fs::path out = dir / "family";

  json cfg = {{"name", "fam"},
              {"target_languages",
               json::array({json{{"code", "aa"}, {"rho", 0.25}}, json{{"code", "bb"}, {"rho", 0.75}}})},
              {"n_classes", 3},
              {"indicators_per_class", 2},
              {"indicators_per_example", 1},
              {"noise_vocab", 6},
              {"noise_per_example", 2},
              {"multi_label_prob", 0.0},
              {"train_per_lang", 20},
              {"test_per_lang", 10},
              {"seed", 7}};
  REQUIRE(icxlt_synth_generate(cfg.dump().c_str(), out.string().c_str()) == ICXLT_OK);

  CHECK(fs::exists(out / "mapping.json"));
  CHECK(fs::exists(out / "covariates.csv"));

  icxlt_dataset* ds = nullptr;
  REQUIRE(icxlt_dataset_open((out / "manifest.json").string().c_str(), &ds) == ICXLT_OK);
  CHECK(icxlt_dataset_label_count(ds) == 3);
  CHECK(icxlt_dataset_language_count(ds) == 3);
  CHECK(std::string(icxlt_dataset_source_language(ds)) == "src");
  CHECK(icxlt_dataset_split_size(ds, "aa", "train") == 20);
  CHECK(icxlt_dataset_split_size(ds, "bb", "test") == 10);
  icxlt_dataset_free(ds);

  // Config problems are invalid-argument failures.
  CHECK(icxlt_synth_generate("[]", out.string().c_str()) == ICXLT_E_INVALID);
  CHECK(icxlt_synth_generate(json{{"bogus", 1}}.dump().c_str(), out.string().c_str()) ==
        ICXLT_E_INVALID);
  CHECK(last_error().find("unknown key") != std::string::npos);
  CHECK(icxlt_synth_generate(cfg.dump().c_str(), nullptr) == ICXLT_E_INVALID);
  CHECK(icxlt_synth_generate(nullptr, out.string().c_str()) == ICXLT_E_INVALID);
}

TEST_CASE("training produces a model the handle API can drive") {
  const fs::path dir = scratch("train");
  const std::string manifest = tiny_corpus(dir);
  const fs::path model_dir = dir / "model";

  const std::string spec = base_spec("capi-train", manifest, dir).dump();
  REQUIRE(icxlt_train(spec.c_str(), model_dir.string().c_str()) == ICXLT_OK);
  CHECK(fs::exists(model_dir / "params.bin"));
  CHECK(fs::exists(model_dir / "vocab.json"));

  icxlt_model* model = nullptr;
  REQUIRE(icxlt_model_open(model_dir.string().c_str(), &model) == ICXLT_OK);
  REQUIRE(model != nullptr);

  char* text = nullptr;
  REQUIRE(icxlt_model_generate(model, "alpha one\n=>\n", 4, &text) == ICXLT_OK);
  REQUIRE(text != nullptr);
  icxlt_string_free(text);
  icxlt_string_free(nullptr);

  CHECK(icxlt_model_generate(nullptr, "x", 4, &text) == ICXLT_E_INVALID);
  CHECK(icxlt_model_generate(model, nullptr, 4, &text) == ICXLT_E_INVALID);
  CHECK(icxlt_model_generate(model, "x", 0, &text) == ICXLT_E_INVALID);
  CHECK(last_error().find("max_new_tokens") != std::string::npos);
  CHECK(icxlt_model_generate(model, "x", 4, nullptr) == ICXLT_E_INVALID);

  icxlt_model_free(model);
  icxlt_model_free(nullptr);

  icxlt_model* missing = nullptr;
  CHECK(icxlt_model_open((dir / "no_model").string().c_str(), &missing) == ICXLT_E_IO);
  CHECK(icxlt_train(spec.c_str(), nullptr) == ICXLT_E_INVALID);
  CHECK(icxlt_train("{nope", model_dir.string().c_str()) == ICXLT_E_INVALID);
}

TEST_CASE("gradient adaptation writes a new bundle") {
  const fs::path dir = scratch("adapt");
  const std::string manifest = tiny_corpus(dir);
  const fs::path before = dir / "model_a";
  const fs::path after = dir / "model_b";

  json spec = base_spec("capi-adapt", manifest, dir);
  spec["adaptation"] = {{"mode", "grad"}, {"k_tgt", 2}, {"lr", 0.01}, {"epochs", 1},
                        {"batch_size", 8}};
  const std::string spec_text = spec.dump();

  REQUIRE(icxlt_train(spec_text.c_str(), before.string().c_str()) == ICXLT_OK);
  REQUIRE(icxlt_adapt(spec_text.c_str(), before.string().c_str(), "tt",
                      after.string().c_str()) == ICXLT_OK);

  // The optimizer moved the weights; everything else carries over.
  CHECK(slurp(after / "params.bin") != slurp(before / "params.bin"));
  CHECK(slurp(after / "vocab.json") == slurp(before / "vocab.json"));

  icxlt_model* adapted = nullptr;
  REQUIRE(icxlt_model_open(after.string().c_str(), &adapted) == ICXLT_OK);
  icxlt_model_free(adapted);

  // In-context modes have no gradient step to run.
  json ic = base_spec("capi-adapt-ic", manifest, dir);
  ic["adaptation"] = {{"mode", "ic"}};
  CHECK(icxlt_adapt(ic.dump().c_str(), before.string().c_str(), "tt",
                    after.string().c_str()) == ICXLT_E_INVALID);
  CHECK(last_error().find("gradient") != std::string::npos);

  CHECK(icxlt_adapt(spec_text.c_str(), before.string().c_str(), "qq",
                    after.string().c_str()) == ICXLT_E_DATA);
  CHECK(icxlt_adapt(spec_text.c_str(), "", "tt", after.string().c_str()) == ICXLT_E_INVALID);
}

TEST_CASE("evaluation emits a scored results file") {
  const fs::path dir = scratch("evaluate");
  const std::string manifest = tiny_corpus(dir);
  const fs::path model_dir = dir / "model";

  json spec = base_spec("capi-eval", manifest, dir);
  const std::string spec_text = spec.dump();
  REQUIRE(icxlt_train(spec_text.c_str(), model_dir.string().c_str()) == ICXLT_OK);

  const fs::path out = dir / "eval.json";
  REQUIRE(icxlt_evaluate(spec_text.c_str(), model_dir.string().c_str(), "tt",
                         out.string().c_str()) == ICXLT_OK);

  json r = json::parse(slurp(out));
  CHECK(r["schema_version"] == 1);
  CHECK(r["experiment_id"] == "capi-eval");
  CHECK(r["spec_hash"].get<std::string>().size() == 16);
  CHECK(r["language"] == "tt");
  CHECK(r["mode"] == "zero");
  CHECK(r["seeds"]["finetune"] == 1);
  CHECK(r["f1"].get<double>() >= 0.0);
  CHECK(r["f1"].get<double>() <= 1.0);
  CHECK(r["n_instances"] == 3);
  CHECK(r["failures"] == 0);
  REQUIRE(r["predictions"].size() == 3);
  CHECK(r["predictions"][0].contains("gold"));
  CHECK(r["predictions"][0].contains("pred"));

  // The spec itself may carry the model location instead.
  json with_dir = spec;
  with_dir["backend"] = {{"kind", "toy"}, {"model_dir", model_dir.string()}};
  const fs::path out2 = dir / "eval2.json";
  REQUIRE(icxlt_evaluate(with_dir.dump().c_str(), nullptr, "tt", out2.string().c_str()) ==
          ICXLT_OK);
  CHECK(json::parse(slurp(out2))["f1"] == r["f1"]);

  // No model anywhere: refused up front.
  CHECK(icxlt_evaluate(spec_text.c_str(), nullptr, "tt", out.string().c_str()) ==
        ICXLT_E_INVALID);
  CHECK(last_error().find("model directory") != std::string::npos);

  CHECK(icxlt_evaluate(spec_text.c_str(), model_dir.string().c_str(), "qq",
                       out.string().c_str()) == ICXLT_E_DATA);
  CHECK(last_error().find("not in the dataset") != std::string::npos);
  CHECK(icxlt_evaluate(spec_text.c_str(), model_dir.string().c_str(), "tt", nullptr) ==
        ICXLT_E_INVALID);
}

TEST_CASE("remote evaluation needs no model and surfaces backend failures") {
  unsetenv("ICXLT_BACKEND_URL");
  const fs::path dir = scratch("remote");
  const std::string manifest = tiny_corpus(dir);

  MockServer server([](const httplib::Request& req, httplib::Response& res) {
    // Echo protocol check: the request carries prompt and decoding fields.
    json body = json::parse(req.body);
    REQUIRE(body.contains("prompt"));
    REQUIRE(body.contains("max_new_tokens"));
    res.set_content(json{{"text", "neg"}}.dump(), "application/json");
  });

  json spec = base_spec("capi-remote", manifest, dir);
  spec["backend"] = {{"kind", "remote"},
                     {"base_url", server.url()},
                     {"timeout_ms", 2000},
                     {"max_retries", 2},
                     {"backoff_base_ms", 5}};

  const fs::path out = dir / "remote.json";
  REQUIRE(icxlt_evaluate(spec.dump().c_str(), nullptr, "tt", out.string().c_str()) == ICXLT_OK);

  // tt test split is neg/pos/neg and the server always answers neg.
  json r = json::parse(slurp(out));
  CHECK(r["f1"].get<double>() == doctest::Approx(2.0 / 3.0));
  CHECK(r["n_instances"] == 3);

  // A server that only errors pushes the failure rate over threshold.
  MockServer broken([](const httplib::Request&, httplib::Response& res) { res.status = 500; });
  spec["backend"] = {{"kind", "remote"},
                     {"base_url", broken.url()},
                     {"timeout_ms", 2000},
                     {"max_retries", 0},
                     {"backoff_base_ms", 5},
                     {"failure_rate_threshold", 0.5}};
  CHECK(icxlt_evaluate(spec.dump().c_str(), nullptr, "tt", out.string().c_str()) ==
        ICXLT_E_BACKEND);
  CHECK(last_error().find("aborting") != std::string::npos);
}

TEST_CASE("experiment runner handles files, json, and the resume flag") {
  const fs::path dir = scratch("runner");
  const std::string manifest = tiny_corpus(dir);
  const fs::path run_out = dir / "runs";

  json spec = base_spec("capi-run", manifest, dir);
  spec["output"] = run_out.string();
  const fs::path spec_path = dir / "spec.json";
  put(spec_path, spec.dump(2) + "\n");

  REQUIRE(icxlt_run_experiment(spec_path.string().c_str(), 0) == ICXLT_OK);
  const fs::path results_path = run_out / "results.json";
  REQUIRE(fs::exists(results_path));
  CHECK(fs::exists(run_out / "config.json"));

  json results = json::parse(slurp(results_path));
  CHECK(results["complete"] == true);
  CHECK(results["experiment_id"] == "capi-run");
  REQUIRE(results["rows"].size() == 1);
  CHECK(results["rows"][0]["language"] == "tt");
  CHECK(results["rows"][0]["f1"].get<double>() >= 0.0);

  // Resuming a finished run is a no-op that leaves the file untouched.
  const std::string before = slurp(results_path);
  REQUIRE(icxlt_run_experiment(spec_path.string().c_str(), 1) == ICXLT_OK);
  CHECK(slurp(results_path) == before);

  // The JSON entry point does the same work from an in-memory spec.
  json spec2 = base_spec("capi-run-json", manifest, dir);
  spec2["output"] = (dir / "runs2").string();
  REQUIRE(icxlt_run_experiment_json(spec2.dump().c_str(), 0) == ICXLT_OK);
  CHECK(fs::exists(dir / "runs2" / "results.json"));

  CHECK(icxlt_run_experiment((dir / "missing_spec.json").string().c_str(), 0) == ICXLT_E_IO);
  CHECK(icxlt_run_experiment(nullptr, 0) == ICXLT_E_INVALID);
  CHECK(icxlt_run_experiment_json("{nope", 0) == ICXLT_E_INVALID);
}

TEST_CASE("report options drive the aggregation") {
  const fs::path dir = scratch("report");

  auto rrow = [](const std::string& lang, int f, double f1) {
    return json{{"language", lang},
                {"seeds", {{"finetune", f}, {"shot_src", 1}, {"shot_tgt", 1}}},
                {"f1", f1},
                {"n_instances", 10},
                {"source_f1", 0.9}};
  };
  auto results_doc = [](const std::string& id, const std::string& mode, json rows) {
    return json{{"schema_version", 1}, {"experiment_id", id},
                {"spec_hash", "0000000000000000"}, {"mode", mode},
                {"regime", "ict"},          {"complete", true},
                {"rows", std::move(rows)}};
  };

  const fs::path few_path = dir / "few.json";
  const fs::path zero_path = dir / "zero.json";
  put(few_path, results_doc("fewX", "ic",
                            json::array({rrow("tt", 1, 0.66), rrow("tt", 2, 0.60),
                                         rrow("zz", 1, 0.50), rrow("zz", 2, 0.50)}))
                    .dump());
  put(zero_path, results_doc("zeroX", "ic_src",
                             json::array({rrow("tt", 1, 0.60), rrow("tt", 2, 0.60),
                                          rrow("zz", 1, 0.40), rrow("zz", 2, 0.40)}))
                     .dump());

  json options = {{"results", json::array({few_path.string(), zero_path.string()})},
                  {"per_run", false},
                  {"permutation_seed", 7},
                  {"n_permutations", 50}};
  const fs::path out = dir / "report";
  REQUIRE(icxlt_report(options.dump().c_str(), out.string().c_str()) == ICXLT_OK);

  json rep = json::parse(slurp(out / "report.json"));
  REQUIRE(rep["improvements_pct"].size() == 1);
  const json& imp = rep["improvements_pct"][0];
  CHECK(imp["few"] == "fewX");
  CHECK(imp["zero"] == "zeroX");
  CHECK(imp["per_language"]["tt"].get<double>() == doctest::Approx(5.0));
  CHECK(imp["per_language"]["zz"].get<double>() == doctest::Approx(25.0));
  CHECK(imp["target_avg"].get<double>() == doctest::Approx(13.0));
  CHECK(fs::exists(out / "tables" / "scores.csv"));
  CHECK(fs::exists(out / "tables" / "improvement.csv"));

  // Option hygiene.
  CHECK(icxlt_report("[]", out.string().c_str()) == ICXLT_E_INVALID);
  CHECK(last_error().find("not a JSON object") != std::string::npos);
  CHECK(icxlt_report(json{{"results", json::array()}}.dump().c_str(), out.string().c_str()) ==
        ICXLT_E_INVALID);
  json unknown = options;
  unknown["bogus"] = 1;
  CHECK(icxlt_report(unknown.dump().c_str(), out.string().c_str()) == ICXLT_E_INVALID);
  CHECK(last_error().find("unknown key") != std::string::npos);
  CHECK(icxlt_report(options.dump().c_str(), nullptr) == ICXLT_E_INVALID);
}
