#include "corl/common.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>

namespace corl {

void fail(const std::string& msg) { throw Error(msg); }

uint64_t fnv1a(const void* data, size_t n, uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

uint64_t fnv1a_str(const std::string& s, uint64_t h) {
  return fnv1a(s.data(), s.size(), h);
}

uint64_t stream_seed(uint64_t base, std::initializer_list<uint64_t> path) {
  uint64_t h = fnv1a(&base, sizeof(base));
  for (uint64_t v : path) h = fnv1a(&v, sizeof(v), h);
  return h;
}

uint64_t stream_seed(uint64_t base, const std::string& tag,
                     std::initializer_list<uint64_t> path) {
  uint64_t h = fnv1a(&base, sizeof(base));
  h = fnv1a_str(tag, h);
  for (uint64_t v : path) h = fnv1a(&v, sizeof(v), h);
  return h;
}

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  // 17 significant digits always round-trip; prefer the shortest form that does.
  char buf[64];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    double back = 0.0;
    std::sscanf(buf, "%lf", &back);
    if (back == v) return buf;
  }
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

}  // namespace corl
