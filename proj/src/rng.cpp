#include "rng.hpp"

#include <limits>

#include "util.hpp"

namespace icxlt {

namespace {

constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ull;

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace

const char* rng_role_name(RngRole role) {
  switch (role) {
    case RngRole::ShotSelection: return "shot-selection";
    case RngRole::ContextSelection: return "context-selection";
    case RngRole::Training: return "training";
    case RngRole::Adaptation: return "adaptation";
  }
  return "?";
}

std::uint64_t RngKey::hash() const {
  std::uint64_t h = fnv1a64(experiment_id);
  h = fnv1a64("\x1f", 1, h);
  const char* name = rng_role_name(role);
  h = fnv1a64(name, std::char_traits<char>::length(name), h);
  h = fnv1a64("\x1f", 1, h);
  std::uint64_t s = seed;
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>((s >> (8 * i)) & 0xff);
  return fnv1a64(bytes, 8, h);
}

std::string RngKey::describe() const {
  return experiment_id + "/" + rng_role_name(role) + "/" + std::to_string(seed);
}

Rng::Rng(const RngKey& key) : state_(key.hash()) {}
Rng::Rng(std::uint64_t raw_key) : state_(raw_key) {}

std::uint64_t Rng::next_u64() {
  state_ += kGamma;
  return mix64(state_);
}

std::uint64_t Rng::uniform_int(std::uint64_t bound) {
  if (bound == 0) fail(ErrKind::Internal, "uniform_int: zero bound");
  // Classic rejection against the largest multiple of bound.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - (std::numeric_limits<std::uint64_t>::max() % bound + 1) % bound;
  for (;;) {
    std::uint64_t x = next_u64();
    if (bound == 1) return 0;
    if (x <= limit || limit == std::numeric_limits<std::uint64_t>::max()) return x % bound;
  }
}

double Rng::uniform_double() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform_range(double lo, double hi) {
  return lo + (hi - lo) * uniform_double();
}

Rng Rng::split(std::uint64_t tag) const {
  return Rng(mix64(state_ ^ mix64(tag + kGamma)));
}

Rng Rng::split(const std::string& tag) const {
  return split(fnv1a64(tag));
}

std::vector<std::size_t> Rng::sample_indices(std::size_t n, std::size_t k) {
  if (k > n) fail(ErrKind::Internal, "sample_indices: k > n");
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  std::vector<std::size_t> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t j = i + static_cast<std::size_t>(uniform_int(n - i));
    std::swap(pool[i], pool[j]);
    out.push_back(pool[i]);
  }
  return out;
}

}  // namespace icxlt
