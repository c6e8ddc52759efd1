#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rng.hpp"

namespace icxlt {

// Micro-averaged F1 over label sets: 2TP / (2TP + FP + FN), 0 when the
// denominator is 0. gold[i] and pred[i] are label sets for instance i; every
// gold set must be non-empty, predictions may be empty.
double f1_micro(const std::vector<std::vector<std::string>>& gold,
                const std::vector<std::vector<std::string>>& pred);

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0;
};
ConfusionCounts confusion_counts(const std::vector<std::vector<std::string>>& gold,
                                 const std::vector<std::vector<std::string>>& pred);

// Relative source-to-target drop, in percent: the mean over target languages
// of 100 * (P_TL / P_SL - 1). P_SL must be positive.
double transfer_gap(const std::vector<double>& target_scores, double source_score);
std::vector<double> transfer_gap_per_language(const std::vector<double>& target_scores,
                                              double source_score);

// Relative few-shot gain over the zero-shot baseline of the same model
// family, in percent: 100 * (few / zero - 1). zero must be positive.
double improvement_delta(double few_shot, double zero_shot);

// Spearman rank correlation with average ranks on ties, plus a two-sided
// permutation p-value (n_permutations draws from the key's stream). Inputs
// must have equal length >= 3 and neither may be constant.
struct SpearmanResult {
  double rho = 0.0;
  double p_value = 1.0;
};
SpearmanResult spearman(const std::vector<double>& a, const std::vector<double>& b,
                        const RngKey& key, int n_permutations = 20000);

// Exposed for tests: average ranks (1-based) with ties sharing their mean.
std::vector<double> average_ranks(const std::vector<double>& v);

// Covariate table: language -> numeric value, read from a CSV with header
// "lang,value". Every language the caller asks about must be present.
std::map<std::string, double> load_covariates_csv(const std::string& path);

}  // namespace icxlt
