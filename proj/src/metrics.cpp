#include "metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "util.hpp"

namespace icxlt {

ConfusionCounts confusion_counts(const std::vector<std::vector<std::string>>& gold,
                                 const std::vector<std::vector<std::string>>& pred) {
  if (gold.size() != pred.size())
    fail(ErrKind::Numeric, "confusion_counts: gold and pred lengths differ (" +
                               std::to_string(gold.size()) + " vs " + std::to_string(pred.size()) + ")");
  ConfusionCounts c;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i].empty()) fail(ErrKind::Numeric, "confusion_counts: empty gold set at " + std::to_string(i));
    std::set<std::string> g(gold[i].begin(), gold[i].end());
    std::set<std::string> p(pred[i].begin(), pred[i].end());
    for (const auto& l : p)
      if (g.count(l)) ++c.tp;
      else ++c.fp;
    for (const auto& l : g)
      if (!p.count(l)) ++c.fn;
  }
  return c;
}

double f1_micro(const std::vector<std::vector<std::string>>& gold,
                const std::vector<std::vector<std::string>>& pred) {
  ConfusionCounts c = confusion_counts(gold, pred);
  const double denom = static_cast<double>(2 * c.tp + c.fp + c.fn);
  if (denom == 0.0) return 0.0;
  return static_cast<double>(2 * c.tp) / denom;
}

std::vector<double> transfer_gap_per_language(const std::vector<double>& target_scores,
                                              double source_score) {
  if (source_score <= 0.0) fail(ErrKind::Numeric, "transfer_gap: source score must be positive");
  if (target_scores.empty()) fail(ErrKind::Numeric, "transfer_gap: no target scores");
  std::vector<double> out;
  out.reserve(target_scores.size());
  for (double t : target_scores) out.push_back(100.0 * (t / source_score - 1.0));
  return out;
}

double transfer_gap(const std::vector<double>& target_scores, double source_score) {
  auto per_lang = transfer_gap_per_language(target_scores, source_score);
  return std::accumulate(per_lang.begin(), per_lang.end(), 0.0) /
         static_cast<double>(per_lang.size());
}

double improvement_delta(double few_shot, double zero_shot) {
  if (zero_shot <= 0.0) fail(ErrKind::Numeric, "improvement_delta: zero-shot score must be positive");
  return 100.0 * (few_shot / zero_shot - 1.0);
}

std::vector<double> average_ranks(const std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double mean_rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = mean_rank;
    i = j + 1;
  }
  return ranks;
}

namespace {

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t n = a.size();
  double ma = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(n);
  double mb = std::accumulate(b.begin(), b.end(), 0.0) / static_cast<double>(n);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) fail(ErrKind::Numeric, "spearman: constant input vector");
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

SpearmanResult spearman(const std::vector<double>& a, const std::vector<double>& b,
                        const RngKey& key, int n_permutations) {
  if (a.size() != b.size())
    fail(ErrKind::Numeric, "spearman: input lengths differ");
  if (a.size() < 3) fail(ErrKind::Numeric, "spearman: need at least 3 points");
  if (n_permutations <= 0) fail(ErrKind::Config, "spearman: n_permutations must be positive");

  const std::vector<double> ra = average_ranks(a);
  const std::vector<double> rb = average_ranks(b);
  SpearmanResult res;
  res.rho = pearson(ra, rb);

  Rng rng = Rng(key).split("spearman-permutation");
  std::vector<double> shuffled = rb;
  long hits = 0;
  const double threshold = std::abs(res.rho) - 1e-12;
  for (int it = 0; it < n_permutations; ++it) {
    rng.shuffle(shuffled);
    if (std::abs(pearson(ra, shuffled)) >= threshold) ++hits;
  }
  res.p_value = static_cast<double>(hits + 1) / static_cast<double>(n_permutations + 1);
  return res;
}

std::map<std::string, double> load_covariates_csv(const std::string& path) {
  auto lines = read_lines(path);
  if (lines.empty()) fail(ErrKind::Data, "covariates file is empty: " + path);
  if (lines[0] != "lang,value")
    fail(ErrKind::Data, "covariates file must start with header 'lang,value', got '" + lines[0] + "'");
  std::map<std::string, double> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    auto comma = lines[i].find(',');
    if (comma == std::string::npos)
      fail(ErrKind::Data, path + ":" + std::to_string(i + 1) + ": expected 'lang,value'");
    std::string lang = lines[i].substr(0, comma);
    std::string value = lines[i].substr(comma + 1);
    try {
      std::size_t used = 0;
      double v = std::stod(value, &used);
      if (used != value.size()) throw std::invalid_argument(value);
      if (!out.emplace(lang, v).second)
        fail(ErrKind::Data, "duplicate covariate row for language '" + lang + "'");
    } catch (const Error&) {
      throw;
    } catch (const std::exception&) {
      fail(ErrKind::Data, path + ":" + std::to_string(i + 1) + ": bad numeric value '" + value + "'");
    }
  }
  return out;
}

}  // namespace icxlt
