#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace icxlt {

// Every stochastic step in the harness draws from a stream identified by
// (experiment_id, role, seed). Streams for different roles never interact,
// so e.g. re-running with a new shot-selection seed cannot perturb training.
enum class RngRole { ShotSelection, ContextSelection, Training, Adaptation };

const char* rng_role_name(RngRole role);

struct RngKey {
  std::string experiment_id;
  RngRole role = RngRole::Training;
  std::uint64_t seed = 0;

  std::uint64_t hash() const;
  std::string describe() const;
};

// Counter-based stream: output i is a fixed avalanche of key + i * gamma
// (splitmix64). Pure integer arithmetic, so the sequence is identical on any
// platform. Sub-streams are derived by hashing a tag into the key, which
// keeps per-instance / per-language streams independent of draw order.
class Rng {
 public:
  explicit Rng(const RngKey& key);
  explicit Rng(std::uint64_t raw_key);

  std::uint64_t next_u64();
  // Unbiased draw in [0, bound) via rejection; bound must be > 0.
  std::uint64_t uniform_int(std::uint64_t bound);
  double uniform_double();  // [0, 1)
  double uniform_range(double lo, double hi);

  Rng split(std::uint64_t tag) const;
  Rng split(const std::string& tag) const;

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // k distinct indices from [0, n), in selection order.
  std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k);

 private:
  std::uint64_t state_;
};

}  // namespace icxlt
