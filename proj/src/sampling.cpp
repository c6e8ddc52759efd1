#include "sampling.hpp"

#include <algorithm>

#include "util.hpp"

namespace icxlt {

ShotSet sample_k_shot(const std::vector<Example>& pool, const std::vector<std::string>& label_set,
                      std::size_t k, const RngKey& key) {
  if (key.role != RngRole::ShotSelection && key.role != RngRole::Adaptation)
    fail(ErrKind::Config, "sample_k_shot: key role must be shot-selection or adaptation");

  ShotSet out;
  out.k = k;
  for (const auto& label : label_set) out.per_class_counts[label] = 0;
  if (k == 0) return out;
  if (pool.empty()) fail(ErrKind::Data, "sample_k_shot: empty split");

  Rng rng(key);
  std::vector<char> selected(pool.size(), 0);

  for (const auto& label : label_set) {
    std::vector<std::size_t> candidates;  // examples of this class, not yet taken
    std::size_t bucket = 0;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      const auto& labels = pool[i].labels;
      if (!std::binary_search(labels.begin(), labels.end(), label)) continue;
      if (selected[i]) ++bucket;
      else candidates.push_back(i);
    }
    const std::size_t quota = std::min(k, bucket + candidates.size());
    while (bucket < quota) {
      std::size_t pick = static_cast<std::size_t>(rng.uniform_int(candidates.size()));
      std::size_t idx = candidates[pick];
      candidates.erase(candidates.begin() + static_cast<std::ptrdiff_t>(pick));
      selected[idx] = 1;
      out.indices.push_back(idx);
      ++bucket;
    }
  }

  std::sort(out.indices.begin(), out.indices.end());
  for (std::size_t idx : out.indices)
    for (const auto& label : pool[idx].labels) out.per_class_counts[label] += 1;
  return out;
}

Demonstrations sample_context(const std::vector<Example>& pool, std::size_t m,
                              std::size_t exclude_index, bool allow_reuse, Rng& rng) {
  Demonstrations out;
  if (m == 0) return out;
  if (pool.empty()) fail(ErrKind::Data, "sample_context: empty split");

  std::vector<std::size_t> eligible;
  eligible.reserve(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i)
    if (i != exclude_index) eligible.push_back(i);

  if (eligible.empty())
    fail(ErrKind::Data, "sample_context: no eligible examples after exclusion");

  if (m <= eligible.size()) {
    auto picks = rng.sample_indices(eligible.size(), m);
    for (std::size_t p : picks) out.indices.push_back(eligible[p]);
    return out;
  }

  if (!allow_reuse)
    fail(ErrKind::Data, "sample_context: requested " + std::to_string(m) + " demonstrations from " +
                            std::to_string(eligible.size()) + " eligible examples (allow_reuse off)");

  // Pool exhausted: cycle through fresh full passes so repeats are as even as
  // possible, matching the behavior at very small source budgets.
  std::vector<std::size_t> order = eligible;
  std::size_t cursor = order.size();
  for (std::size_t produced = 0; produced < m; ++produced) {
    if (cursor == order.size()) {
      rng.shuffle(order);
      cursor = 0;
    }
    out.indices.push_back(order[cursor++]);
  }
  return out;
}

}  // namespace icxlt
