#include "report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>
#include <sstream>

#include <json.hpp>

#include "metrics.hpp"
#include "util.hpp"

namespace icxlt {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string csv_cell(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

}  // namespace

MethodSummary summarize_method(const ExperimentResults& results) {
  MethodSummary s;
  s.id = results.experiment_id;
  s.mode = results.mode;
  s.regime = results.regime;

  std::map<std::string, std::vector<double>> by_lang;
  std::vector<double> source_scores;
  for (const RunRow& row : results.rows) {
    by_lang[row.language].push_back(row.f1);
    if (row.source_f1 >= 0.0) source_scores.push_back(row.source_f1);
  }
  if (by_lang.empty()) fail(ErrKind::Data, "results '" + s.id + "' contain no rows");

  double avg = 0.0;
  for (const auto& [lang, scores] : by_lang) {
    s.languages.push_back(lang);
    s.lang_mean[lang] = mean_of(scores);
    s.lang_std[lang] = sample_std(scores);
    s.lang_n[lang] = static_cast<int>(scores.size());
    avg += s.lang_mean[lang];
  }
  s.target_avg = avg / static_cast<double>(s.languages.size());

  if (!source_scores.empty()) {
    s.has_source = true;
    s.source_mean = mean_of(source_scores);
    s.source_std = sample_std(source_scores);
    s.source_n = static_cast<int>(source_scores.size());
  }

  if (s.has_source && s.source_mean > 0.0) {
    std::vector<double> target;
    for (const auto& lang : s.languages) target.push_back(s.lang_mean[lang]);
    std::vector<double> gaps = transfer_gap_per_language(target, s.source_mean);
    for (std::size_t i = 0; i < s.languages.size(); ++i)
      s.gap_per_language[s.languages[i]] = gaps[i];
    s.gap_avg = transfer_gap(target, s.source_mean);
    s.has_gap = true;
  }
  return s;
}

DeltaSummary improvement_summary(const ExperimentResults& few, const ExperimentResults& zero,
                                 bool per_run) {
  DeltaSummary d;
  d.few_id = few.experiment_id;
  d.zero_id = zero.experiment_id;

  MethodSummary fs_few = summarize_method(few);
  MethodSummary fs_zero = summarize_method(zero);

  std::vector<std::string> missing;
  for (const auto& lang : fs_few.languages)
    if (!fs_zero.lang_mean.count(lang)) missing.push_back(lang);
  if (!missing.empty())
    fail(ErrKind::Data,
         "zero-shot results '" + d.zero_id + "' lack languages: " + join(missing, ", "));

  if (!per_run) {
    double few_avg = 0.0, zero_avg = 0.0;
    for (const auto& lang : fs_few.languages) {
      d.per_language[lang] = improvement_delta(fs_few.lang_mean[lang], fs_zero.lang_mean[lang]);
      few_avg += fs_few.lang_mean[lang];
      zero_avg += fs_zero.lang_mean[lang];
    }
    few_avg /= static_cast<double>(fs_few.languages.size());
    zero_avg /= static_cast<double>(fs_few.languages.size());
    d.target_avg = improvement_delta(few_avg, zero_avg);
    return d;
  }

  // Per-run pairing: same language and finetune/shot_src seeds; the shot_tgt
  // seed too when the zero side has one (zero-mode rows record 0 there).
  std::map<std::string, std::vector<double>> exact, loose;
  auto key3 = [](const RunRow& r) {
    return r.language + "|" + std::to_string(r.seeds.finetune) + "|" +
           std::to_string(r.seeds.shot_src);
  };
  for (const RunRow& r : zero.rows) {
    exact[key3(r) + "|" + std::to_string(r.seeds.shot_tgt)].push_back(r.f1);
    loose[key3(r)].push_back(r.f1);
  }

  std::map<std::string, std::vector<double>> deltas_by_lang;
  for (const RunRow& r : few.rows) {
    const std::string k4 = key3(r) + "|" + std::to_string(r.seeds.shot_tgt);
    const std::vector<double>* match = nullptr;
    if (auto it = exact.find(k4); it != exact.end()) match = &it->second;
    else if (auto it2 = loose.find(key3(r)); it2 != loose.end()) match = &it2->second;
    if (!match)
      fail(ErrKind::Data, "no zero-shot counterpart run for " + r.language + " seeds " +
                              std::to_string(r.seeds.finetune) + "/" +
                              std::to_string(r.seeds.shot_src));
    const double delta = improvement_delta(r.f1, mean_of(*match));
    d.point_langs.push_back(r.language);
    d.point_values.push_back(delta);
    deltas_by_lang[r.language].push_back(delta);
  }

  double avg = 0.0;
  for (const auto& [lang, v] : deltas_by_lang) {
    d.per_language[lang] = mean_of(v);
    avg += d.per_language[lang];
  }
  d.target_avg = avg / static_cast<double>(deltas_by_lang.size());
  return d;
}

ReportBundle build_report(const ReportOptions& options) {
  if (options.results_paths.empty()) fail(ErrKind::Config, "report: no results files given");
  if (options.n_permutations < 1) fail(ErrKind::Config, "report: n_permutations must be >= 1");

  std::vector<ExperimentResults> all;
  for (const auto& path : options.results_paths) {
    ExperimentResults r = results_from_json(read_text_file(path));
    if (!r.complete)
      fail(ErrKind::Data, "results file '" + path + "' is incomplete; resume the run first");
    all.push_back(std::move(r));
  }
  {
    std::set<std::string> ids;
    for (const auto& r : all)
      if (!ids.insert(r.experiment_id).second)
        fail(ErrKind::Config, "duplicate experiment_id '" + r.experiment_id + "' across results");
  }

  std::vector<MethodSummary> summaries;
  summaries.reserve(all.size());
  for (const auto& r : all) summaries.push_back(summarize_method(r));

  std::vector<std::string> notes;

  auto find_counterpart = [&](const ExperimentResults& few,
                              const char* want_mode) -> const ExperimentResults* {
    const ExperimentResults* same_regime = nullptr;
    const ExperimentResults* any = nullptr;
    for (const auto& cand : all) {
      if (cand.mode != want_mode || &cand == &few) continue;
      if (!any) any = &cand;
      if (!same_regime && cand.regime == few.regime) same_regime = &cand;
    }
    return same_regime ? same_regime : any;
  };

  std::vector<DeltaSummary> deltas;
  for (const auto& r : all) {
    const char* want = nullptr;
    if (r.mode == "ic") want = "ic_src";
    else if (r.mode == "grad" || r.mode == "grad_macro") want = "zero";
    if (!want) continue;
    const ExperimentResults* zero = find_counterpart(r, want);
    if (!zero) {
      notes.push_back("no " + std::string(want) + " counterpart for '" + r.experiment_id +
                      "'; improvement skipped");
      continue;
    }
    deltas.push_back(improvement_summary(r, *zero, options.per_run));
  }

  std::map<std::string, double> covariates;
  const bool have_cov = !options.covariates_path.empty();
  if (have_cov) covariates = load_covariates_csv(options.covariates_path);

  struct CorrRow {
    std::string few_id, zero_id;
    int n = 0;
    double rho = 0.0, p_value = 1.0;
  };
  std::vector<CorrRow> correlations;
  if (have_cov) {
    for (const auto& d : deltas) {
      std::vector<double> xs, ys;
      std::vector<std::string> missing;
      if (options.per_run) {
        for (std::size_t i = 0; i < d.point_langs.size(); ++i) {
          auto it = covariates.find(d.point_langs[i]);
          if (it == covariates.end()) {
            missing.push_back(d.point_langs[i]);
            continue;
          }
          ys.push_back(d.point_values[i]);
          xs.push_back(it->second);
        }
      } else {
        for (const auto& [lang, delta] : d.per_language) {
          auto it = covariates.find(lang);
          if (it == covariates.end()) {
            missing.push_back(lang);
            continue;
          }
          ys.push_back(delta);
          xs.push_back(it->second);
        }
      }
      if (!missing.empty()) {
        std::sort(missing.begin(), missing.end());
        missing.erase(std::unique(missing.begin(), missing.end()), missing.end());
        fail(ErrKind::Data, "covariate table is missing languages: " + join(missing, ", "));
      }
      if (xs.size() < 3) {
        notes.push_back("correlation for '" + d.few_id + "' skipped: needs at least 3 points");
        continue;
      }
      RngKey key{"report:" + d.few_id + "|" + d.zero_id, RngRole::Adaptation,
                 options.permutation_seed};
      CorrRow row;
      row.few_id = d.few_id;
      row.zero_id = d.zero_id;
      row.n = static_cast<int>(xs.size());
      try {
        SpearmanResult sr = spearman(ys, xs, key, options.n_permutations);
        row.rho = sr.rho;
        row.p_value = sr.p_value;
      } catch (const Error& e) {
        if (e.kind() != ErrKind::Numeric) throw;
        notes.push_back("correlation for '" + d.few_id + "' skipped: " + e.what());
        continue;
      }
      correlations.push_back(row);
    }
  }

  // ---- report.json ----
  json rep;
  rep["schema_version"] = 1;
  rep["per_run"] = options.per_run;
  rep["permutation_seed"] = options.permutation_seed;
  rep["n_permutations"] = options.n_permutations;

  json methods = json::array();
  for (const auto& s : summaries) {
    json m;
    m["id"] = s.id;
    m["mode"] = s.mode;
    m["regime"] = s.regime;
    json langs = json::object();
    for (const auto& lang : s.languages) {
      json cell;
      cell["mean"] = s.lang_mean.at(lang);
      cell["n"] = s.lang_n.at(lang);
      if (s.lang_n.at(lang) >= 2) cell["std"] = s.lang_std.at(lang);
      langs[lang] = cell;
    }
    m["languages"] = langs;
    m["target_avg"] = s.target_avg;
    if (s.has_source) {
      json src;
      src["mean"] = s.source_mean;
      src["n"] = s.source_n;
      if (s.source_n >= 2) src["std"] = s.source_std;
      m["source"] = src;
    }
    if (s.has_gap) {
      json gap;
      gap["per_language"] = s.gap_per_language;
      gap["avg"] = s.gap_avg;
      m["transfer_gap_pct"] = gap;
    }
    bool single_seed = true;
    for (const auto& [lang, n] : s.lang_n) single_seed = single_seed && n < 2;
    if (single_seed) notes.push_back("method '" + s.id + "': single seed, std omitted");
    methods.push_back(std::move(m));
  }
  rep["methods"] = std::move(methods);

  json improvements = json::array();
  for (const auto& d : deltas) {
    json e;
    e["few"] = d.few_id;
    e["zero"] = d.zero_id;
    e["per_language"] = d.per_language;
    e["target_avg"] = d.target_avg;
    improvements.push_back(std::move(e));
  }
  rep["improvements_pct"] = std::move(improvements);

  if (have_cov) {
    json corr = json::array();
    for (const auto& c : correlations) {
      json e;
      e["few"] = c.few_id;
      e["zero"] = c.zero_id;
      e["n"] = c.n;
      e["rho"] = c.rho;
      e["p_value"] = c.p_value;
      corr.push_back(std::move(e));
    }
    rep["correlations"] = std::move(corr);
    rep["covariates"] = options.covariates_path;
  }
  rep["notes"] = notes;

  ReportBundle bundle;
  bundle.report_json = rep.dump(2) + "\n";

  // ---- tables ----
  {
    std::ostringstream csv;
    csv << "method,language,mean,std,n\n";
    for (const auto& s : summaries)
      for (const auto& lang : s.languages) {
        csv << csv_cell(s.id) << "," << csv_cell(lang) << "," << fmt6(s.lang_mean.at(lang)) << ",";
        if (s.lang_n.at(lang) >= 2) csv << fmt6(s.lang_std.at(lang));
        csv << "," << s.lang_n.at(lang) << "\n";
      }
    bundle.tables.emplace_back("scores.csv", csv.str());
  }
  {
    std::ostringstream csv;
    csv << "method,mean,std,n\n";
    for (const auto& s : summaries) {
      if (!s.has_source) continue;
      csv << csv_cell(s.id) << "," << fmt6(s.source_mean) << ",";
      if (s.source_n >= 2) csv << fmt6(s.source_std);
      csv << "," << s.source_n << "\n";
    }
    bundle.tables.emplace_back("source_scores.csv", csv.str());
  }
  {
    std::ostringstream csv;
    csv << "method,language,gap_pct\n";
    for (const auto& s : summaries) {
      if (!s.has_gap) continue;
      for (const auto& [lang, gap] : s.gap_per_language)
        csv << csv_cell(s.id) << "," << csv_cell(lang) << "," << fmt6(gap) << "\n";
      csv << csv_cell(s.id) << ",(avg)," << fmt6(s.gap_avg) << "\n";
    }
    bundle.tables.emplace_back("transfer_gap.csv", csv.str());
  }
  {
    std::ostringstream csv;
    csv << "few_method,zero_method,language,delta_pct\n";
    for (const auto& d : deltas) {
      for (const auto& [lang, delta] : d.per_language)
        csv << csv_cell(d.few_id) << "," << csv_cell(d.zero_id) << "," << csv_cell(lang) << ","
            << fmt6(delta) << "\n";
      csv << csv_cell(d.few_id) << "," << csv_cell(d.zero_id) << ",(avg)," << fmt6(d.target_avg)
          << "\n";
    }
    bundle.tables.emplace_back("improvement.csv", csv.str());
  }
  if (have_cov) {
    std::ostringstream csv;
    csv << "few_method,zero_method,n,rho,p_value\n";
    for (const auto& c : correlations)
      csv << csv_cell(c.few_id) << "," << csv_cell(c.zero_id) << "," << c.n << "," << fmt6(c.rho)
          << "," << fmt6(c.p_value) << "\n";
    bundle.tables.emplace_back("correlations.csv", csv.str());
  }
  return bundle;
}

void write_report(const ReportBundle& bundle, const std::string& out_dir) {
  const fs::path dir(out_dir);
  fs::create_directories(dir / "tables");
  write_text_file((dir / "report.json").string(), bundle.report_json);
  for (const auto& [name, body] : bundle.tables)
    write_text_file((dir / "tables" / name).string(), body);
}

}  // namespace icxlt
