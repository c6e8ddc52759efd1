#include "synthlang.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>

#include <json.hpp>

#include "rng.hpp"
#include "util.hpp"

namespace icxlt {

using nlohmann::json;

void SynthConfig::validate() const {
  if (name.empty() || source_lang.empty()) fail(ErrKind::Config, "synth: name and source_lang required");
  if (n_classes < 2) fail(ErrKind::Config, "synth: need at least 2 classes");
  if (n_classes > 99) fail(ErrKind::Config, "synth: at most 99 classes");
  if (indicators_per_class < 1) fail(ErrKind::Config, "synth: indicators_per_class must be >= 1");
  if (indicators_per_example < 1 || indicators_per_example > indicators_per_class)
    fail(ErrKind::Config, "synth: indicators_per_example must be in [1, indicators_per_class]");
  if (noise_vocab < 0 || noise_per_example < 0 || noise_per_example > std::max(noise_vocab, 0))
    fail(ErrKind::Config, "synth: bad noise configuration");
  if (multi_label_prob < 0.0 || multi_label_prob > 1.0)
    fail(ErrKind::Config, "synth: multi_label_prob must be in [0, 1]");
  if (train_per_lang < 1 || test_per_lang < 1) fail(ErrKind::Config, "synth: empty splits requested");
  std::set<std::string> langs = {source_lang};
  for (const auto& [code, rho] : target_languages) {
    if (code.empty()) fail(ErrKind::Config, "synth: empty target language code");
    if (!langs.insert(code).second) fail(ErrKind::Config, "synth: duplicate language code '" + code + "'");
    if (rho < 0.0 || rho > 1.0) fail(ErrKind::Config, "synth: rho must be in [0, 1] for '" + code + "'");
  }
}

namespace {

std::string class_label(int c) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "cat%02d", c);
  return buf;
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

SynthConfig synth_config_from_json(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) fail(ErrKind::Config, "synth config: not a JSON object");
  SynthConfig cfg;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const json& v = it.value();
    auto want_int = [&]() {
      if (!v.is_number_integer() && !v.is_number_unsigned())
        fail(ErrKind::Config, "synth config: '" + k + "' must be an integer");
      return static_cast<int>(v.get<long long>());
    };
    if (k == "name") cfg.name = v.get<std::string>();
    else if (k == "source_lang") cfg.source_lang = v.get<std::string>();
    else if (k == "target_languages") {
      if (!v.is_array()) fail(ErrKind::Config, "synth config: target_languages must be an array");
      cfg.target_languages.clear();
      for (const auto& e : v) {
        if (!e.is_object() || !e.contains("code") || !e.contains("rho"))
          fail(ErrKind::Config, "synth config: each target language needs 'code' and 'rho'");
        cfg.target_languages.emplace_back(e["code"].get<std::string>(), e["rho"].get<double>());
      }
    } else if (k == "n_classes") cfg.n_classes = want_int();
    else if (k == "indicators_per_class") cfg.indicators_per_class = want_int();
    else if (k == "indicators_per_example") cfg.indicators_per_example = want_int();
    else if (k == "noise_vocab") cfg.noise_vocab = want_int();
    else if (k == "noise_per_example") cfg.noise_per_example = want_int();
    else if (k == "multi_label_prob") cfg.multi_label_prob = v.get<double>();
    else if (k == "train_per_lang") cfg.train_per_lang = want_int();
    else if (k == "test_per_lang") cfg.test_per_lang = want_int();
    else if (k == "seed") cfg.seed = v.get<std::uint64_t>();
    else fail(ErrKind::Config, "synth config: unknown key '" + k + "'");
  }
  cfg.validate();
  return cfg;
}

SynthFamily generate_language_family(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(fnv1a64("synthlang/" + cfg.name + "/" + std::to_string(cfg.seed)));

  const int vs = cfg.content_vocab_size();
  const int n_ind = cfg.n_classes * cfg.indicators_per_class;

  // Source surface forms by slot. Slot k < n_ind is an indicator owned by
  // class k / indicators_per_class; the rest is the noise pool.
  std::vector<std::string> source_form(static_cast<std::size_t>(vs));
  for (int k = 0; k < vs; ++k)
    source_form[static_cast<std::size_t>(k)] = cfg.source_lang + "w" + std::to_string(k);

  // ---- source examples ----
  Rng ex_rng = rng.split("examples");
  auto gen_example = [&](Rng& r) {
    Example ex;
    ex.lang = cfg.source_lang;
    int n_gold = 1;
    if (cfg.n_classes >= 2 && r.uniform_double() < cfg.multi_label_prob)
      n_gold = 2 + static_cast<int>(r.uniform_int(cfg.n_classes >= 3 ? 2 : 1));
    auto class_picks = r.sample_indices(static_cast<std::size_t>(cfg.n_classes),
                                        static_cast<std::size_t>(n_gold));
    std::vector<std::string> tokens;
    for (std::size_t c : class_picks) {
      ex.labels.push_back(class_label(static_cast<int>(c)));
      auto ind = r.sample_indices(static_cast<std::size_t>(cfg.indicators_per_class),
                                  static_cast<std::size_t>(cfg.indicators_per_example));
      for (std::size_t i : ind)
        tokens.push_back(source_form[c * static_cast<std::size_t>(cfg.indicators_per_class) + i]);
    }
    auto noise = r.sample_indices(static_cast<std::size_t>(cfg.noise_vocab),
                                  static_cast<std::size_t>(cfg.noise_per_example));
    for (std::size_t i : noise) tokens.push_back(source_form[static_cast<std::size_t>(n_ind) + i]);
    r.shuffle(tokens);
    ex.text = join(tokens, " ");
    std::sort(ex.labels.begin(), ex.labels.end());
    return ex;
  };

  LanguageSplit source;
  std::set<std::string> test_ids;
  for (int i = 0; i < cfg.test_per_lang; ++i) {
    source.test.push_back(gen_example(ex_rng));
    test_ids.insert(example_identity(source.test.back()));
  }
  for (int i = 0; i < cfg.train_per_lang; ++i) {
    Example ex;
    int guard = 0;
    do {
      ex = gen_example(ex_rng);
      if (++guard > 10000)
        fail(ErrKind::Data, "synth: cannot draw train examples disjoint from test; enlarge the vocabulary");
    } while (test_ids.count(example_identity(ex)));
    source.train.push_back(std::move(ex));
  }

  // ---- target languages ----
  SynthFamily fam;
  fam.dataset.name = cfg.name;
  fam.dataset.task_kind = cfg.multi_label_prob > 0.0 ? TaskKind::MultiLabel : TaskKind::SingleLabel;
  fam.dataset.source_lang = cfg.source_lang;
  for (int c = 0; c < cfg.n_classes; ++c) fam.dataset.label_set.push_back(class_label(c));

  json mapping;
  mapping["schema_version"] = 1;
  mapping["name"] = cfg.name;
  mapping["source_lang"] = cfg.source_lang;
  json indicators = json::object();
  {
    json per_class = json::object();
    for (int c = 0; c < cfg.n_classes; ++c) {
      json forms = json::array();
      for (int i = 0; i < cfg.indicators_per_class; ++i)
        forms.push_back(source_form[static_cast<std::size_t>(c * cfg.indicators_per_class + i)]);
      per_class[class_label(c)] = forms;
    }
    indicators[cfg.source_lang] = per_class;
  }
  json languages = json::object();

  for (const auto& [code, rho] : cfg.target_languages) {
    Rng lang_rng = rng.split("lang").split(code);

    // Shared slots, stratified: each class pool shares round(rho * pool),
    // noise tops the total up to round(rho * vocab).
    std::vector<char> shared(static_cast<std::size_t>(vs), 0);
    const int want_total = static_cast<int>(std::lround(rho * vs));
    int picked = 0;
    const int per_class_share =
        std::min(cfg.indicators_per_class,
                 static_cast<int>(std::lround(rho * cfg.indicators_per_class)));
    for (int c = 0; c < cfg.n_classes; ++c) {
      auto picks = lang_rng.sample_indices(static_cast<std::size_t>(cfg.indicators_per_class),
                                           static_cast<std::size_t>(per_class_share));
      for (std::size_t i : picks) {
        shared[static_cast<std::size_t>(c * cfg.indicators_per_class) + i] = 1;
        ++picked;
      }
    }
    int noise_share = std::clamp(want_total - picked, 0, cfg.noise_vocab);
    auto noise_picks = lang_rng.sample_indices(static_cast<std::size_t>(cfg.noise_vocab),
                                               static_cast<std::size_t>(noise_share));
    for (std::size_t i : noise_picks) shared[static_cast<std::size_t>(n_ind) + i] = 1;
    picked += noise_share;

    std::vector<std::string> target_form(static_cast<std::size_t>(vs));
    json map = json::object();
    for (int k = 0; k < vs; ++k) {
      target_form[static_cast<std::size_t>(k)] =
          shared[static_cast<std::size_t>(k)] ? source_form[static_cast<std::size_t>(k)]
                                              : code + "w" + std::to_string(k);
      map[source_form[static_cast<std::size_t>(k)]] = target_form[static_cast<std::size_t>(k)];
    }

    auto remap_example = [&](const Example& src_ex) {
      Example ex;
      ex.lang = code;
      ex.labels = src_ex.labels;
      std::vector<std::string> tokens;
      std::istringstream in(src_ex.text);
      std::string tok;
      while (in >> tok) {
        bool found = false;
        for (int k = 0; k < vs; ++k)
          if (source_form[static_cast<std::size_t>(k)] == tok) {
            tokens.push_back(target_form[static_cast<std::size_t>(k)]);
            found = true;
            break;
          }
        if (!found) fail(ErrKind::Internal, "synth: token outside inventory: " + tok);
      }
      ex.text = join(tokens, " ");
      return ex;
    };

    LanguageSplit split;
    for (const auto& ex : source.train) split.train.push_back(remap_example(ex));
    for (const auto& ex : source.test) split.test.push_back(remap_example(ex));
    fam.dataset.splits.emplace(code, std::move(split));

    json lang_info;
    lang_info["rho"] = rho;
    lang_info["shared_fraction"] = static_cast<double>(picked) / static_cast<double>(vs);
    lang_info["map"] = map;
    languages[code] = lang_info;

    json per_class = json::object();
    for (int c = 0; c < cfg.n_classes; ++c) {
      json forms = json::array();
      for (int i = 0; i < cfg.indicators_per_class; ++i)
        forms.push_back(target_form[static_cast<std::size_t>(c * cfg.indicators_per_class + i)]);
      per_class[class_label(c)] = forms;
    }
    indicators[code] = per_class;
  }

  fam.dataset.splits.emplace(cfg.source_lang, std::move(source));
  mapping["languages"] = languages;
  mapping["indicators"] = indicators;
  fam.mapping_json = mapping.dump(2) + "\n";
  return fam;
}

std::string write_synth_corpus(const SynthConfig& cfg, const std::string& out_dir) {
  SynthFamily fam = generate_language_family(cfg);
  std::string manifest_path = save_dataset(fam.dataset, out_dir);
  write_text_file((std::filesystem::path(out_dir) / "mapping.json").string(), fam.mapping_json);

  std::ostringstream cov;
  cov << "lang,value\n";
  for (const auto& [code, rho] : cfg.target_languages) cov << code << "," << rho << "\n";
  write_text_file((std::filesystem::path(out_dir) / "covariates.csv").string(), cov.str());
  return manifest_path;
}

}  // namespace icxlt
