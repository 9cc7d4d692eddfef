#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace topodp {

/// Raised when a caller-supplied parameter violates an operation's precondition.
class InvalidParameter : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a randomised generator cannot satisfy its output contract.
class GenerationFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NonConvergence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Configuration validation error; `path` names the offending field.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string path, const std::string& what)
      : std::runtime_error(path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

using Rng = std::mt19937_64;

// splitmix64 finaliser; used to derive independent sub-streams from a base seed.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Sub-seed for a tagged stream, e.g. derive_seed(seed, kNoise, client, round).
template <typename... Tags>
constexpr std::uint64_t derive_seed(std::uint64_t base, Tags... tags) noexcept {
  std::uint64_t s = mix64(base);
  ((s = mix64(s ^ static_cast<std::uint64_t>(tags))), ...);
  return s;
}

// Stream tags. Values are arbitrary but fixed; changing them changes every result.
enum StreamTag : std::uint64_t {
  kTopology = 0x7101,
  kDirichlet = 0x7102,
  kSample = 0x7103,
  kBatch = 0x7104,
  kNoise = 0x7105,
  kInit = 0x7106,
  kTestSet = 0x7107,
  kShadow = 0x7108,
  kBootstrap = 0x7109,
};

}  // namespace topodp
