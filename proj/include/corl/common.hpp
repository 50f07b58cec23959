#pragma once

#include <cstdint>
#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>

namespace corl {

struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

[[noreturn]] void fail(const std::string& msg);

// Precondition / invariant check. Message text should say what was violated,
// not where; call sites are short.
#define CORL_CHECK(cond, msg)                                \
  do {                                                       \
    if (!(cond)) ::corl::fail((msg));                        \
  } while (0)

// ----------------------------- hashing -----------------------------

inline constexpr uint64_t kFnvBasis = 1469598103934665603ull;
inline constexpr uint64_t kFnvPrime = 1099511628211ull;

uint64_t fnv1a(const void* data, size_t n, uint64_t h = kFnvBasis);
uint64_t fnv1a_str(const std::string& s, uint64_t h = kFnvBasis);

// Combines integer path segments into a stream seed. Used to derive all
// per-purpose RNG streams so that resume can re-derive them statelessly.
uint64_t stream_seed(uint64_t base, std::initializer_list<uint64_t> path);
uint64_t stream_seed(uint64_t base, const std::string& tag,
                     std::initializer_list<uint64_t> path = {});

std::string hex64(uint64_t v);

// ----------------------------- formatting -----------------------------

// Shortest decimal form that round-trips a double (used by CSV writers so
// reports are byte-stable across runs).
std::string fmt_double(double v);
std::string fmt_fixed(double v, int digits);

}  // namespace corl
