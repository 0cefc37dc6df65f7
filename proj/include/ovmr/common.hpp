#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ovmr {

// Error taxonomy. The CLI maps these onto process exit codes:
// contract/shape -> 2, format -> 3, numeric -> 4.
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& what) : std::runtime_error(what) {}
};

struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

#define OVMR_CHECK_SHAPE(cond, msg) \
  do { if (!(cond)) throw ::ovmr::ShapeError(msg); } while (0)
#define OVMR_CHECK_CONTRACT(cond, msg) \
  do { if (!(cond)) throw ::ovmr::ContractError(msg); } while (0)
#define OVMR_CHECK_NUMERIC(cond, msg) \
  do { if (!(cond)) throw ::ovmr::NumericError(msg); } while (0)

// FNV-1a, 64-bit. Used for config hashes and artifact fingerprints.
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s) {
  return fnv1a64(s.data(), s.size());
}

}  // namespace ovmr
