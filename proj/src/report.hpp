#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "transfer.hpp"

namespace icxlt {

// Per-method score roll-up over one results file: per-language mean and
// spread over seeds, the target average (languages weighted equally), the
// source-language score, and the relative source-to-target gap.
struct MethodSummary {
  std::string id;
  std::string mode;
  std::string regime;
  std::vector<std::string> languages;  // sorted
  std::map<std::string, double> lang_mean;
  std::map<std::string, double> lang_std;  // sample std, 0 for a single seed
  std::map<std::string, int> lang_n;
  double target_avg = 0.0;
  bool has_source = false;
  double source_mean = 0.0, source_std = 0.0;
  int source_n = 0;
  bool has_gap = false;
  std::map<std::string, double> gap_per_language;  // percent
  double gap_avg = 0.0;
};

MethodSummary summarize_method(const ExperimentResults& results);

// Few-shot gain over the zero-shot counterpart. Per-language values divide
// seed-mean scores; the target average divides the two target averages. With
// per_run, each few-shot run is divided by its matching zero-shot run first
// (matched on language and seeds), and the raw per-run points are kept for
// correlation analysis.
struct DeltaSummary {
  std::string few_id, zero_id;
  std::map<std::string, double> per_language;  // percent
  double target_avg = 0.0;
  std::vector<std::string> point_langs;  // filled in per_run mode
  std::vector<double> point_values;
};

DeltaSummary improvement_summary(const ExperimentResults& few, const ExperimentResults& zero,
                                 bool per_run);

struct ReportOptions {
  std::vector<std::string> results_paths;
  std::string covariates_path;  // empty: skip the correlation section
  bool per_run = false;
  std::uint64_t permutation_seed = 1;
  int n_permutations = 20000;
};

struct ReportBundle {
  std::string report_json;
  std::vector<std::pair<std::string, std::string>> tables;  // filename -> csv body
};

// Loads every results file, summarizes each method, pairs few-shot methods
// with their zero-shot counterparts (ic with ic_src, gradient modes with
// zero), and correlates per-language gains against covariates when a table
// is given. Deterministic: rerunning on the same inputs reproduces the
// bundle byte for byte.
ReportBundle build_report(const ReportOptions& options);

// report.json plus tables/*.csv under out_dir.
void write_report(const ReportBundle& bundle, const std::string& out_dir);

}  // namespace icxlt
