#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace icxlt {

// Error taxonomy shared by every module. The kind survives the trip through
// the C API boundary, where it is mapped onto a coarse status code.
enum class ErrKind {
  Config,        // bad arguments, malformed experiment spec, usage-level
  Data,          // dataset/manifest/label problems
  Backend,       // generation backend failures
  Io,            // file system trouble
  Numeric,       // non-finite loss, shape mismatch, degenerate metric input
  Internal,
};

class Error : public std::runtime_error {
 public:
  Error(ErrKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrKind kind() const { return kind_; }

 private:
  ErrKind kind_;
};

[[noreturn]] inline void fail(ErrKind kind, const std::string& msg) { throw Error(kind, msg); }

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);
std::vector<std::string> read_lines(const std::string& path);

// 64-bit FNV-1a. Used for rng key derivation and for content hashes that only
// need to be stable, not cryptographic.
std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t seed = 0xcbf29ce484222325ull);
std::uint64_t fnv1a64(const std::string& s, std::uint64_t seed = 0xcbf29ce484222325ull);
std::string hex64(std::uint64_t v);

std::string join(const std::vector<std::string>& parts, const std::string& sep);

}  // namespace icxlt
