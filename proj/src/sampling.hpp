#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "corpus.hpp"
#include "rng.hpp"

namespace icxlt {

// Result of k-shot selection over one split. indices refer to positions in
// the source vector of examples; per_class_counts records, for each label,
// how many selected examples carry it.
struct ShotSet {
  std::vector<std::size_t> indices;
  std::map<std::string, std::size_t> per_class_counts;
  std::size_t k = 0;
};

// Per-class bucket filling: classes are visited in canonical (lexicographic)
// label order; each class with N_i available examples gets a quota of
// min(K, N_i). Examples already selected for earlier classes count toward a
// bucket before anything new is drawn; new draws are uniform without
// replacement among the not-yet-selected examples carrying the class.
//
// Guarantees: every class ends with at least its quota covered (multi-label
// picks for a later class can push an earlier bucket past its quota, which
// is the only way coverage exceeds min(K, N_i)), and the total number of
// selected examples is at most K * |label_set|, at least K when
// K <= min_i N_i. K = 0 selects nothing.
ShotSet sample_k_shot(const std::vector<Example>& pool, const std::vector<std::string>& label_set,
                      std::size_t k, const RngKey& key);

// Demonstrations for one training instance: m examples drawn uniformly from
// the pool, never including exclude_index, without replacement unless
// allow_reuse is set (needed when the pool minus the excluded example is
// smaller than m).
struct Demonstrations {
  std::vector<std::size_t> indices;
};

constexpr std::size_t kNoExclusion = static_cast<std::size_t>(-1);

Demonstrations sample_context(const std::vector<Example>& pool, std::size_t m,
                              std::size_t exclude_index, bool allow_reuse, Rng& rng);

}  // namespace icxlt
