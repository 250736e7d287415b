#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace ato {

using VecI = std::vector<std::int64_t>;
using VecD = std::vector<double>;

// Error categories map onto CLI exit codes (config=2, solver=3, audit=4).
class AtoError : public std::runtime_error {
 public:
  explicit AtoError(const std::string& what) : std::runtime_error(what) {}
};

class ValidationError : public AtoError {
 public:
  explicit ValidationError(const std::string& what) : AtoError(what) {}
};

class ConfigError : public AtoError {
 public:
  explicit ConfigError(const std::string& what) : AtoError(what) {}
};

class SolverError : public AtoError {
 public:
  explicit SolverError(const std::string& what) : AtoError(what) {}
};

class AuditError : public AtoError {
 public:
  explicit AuditError(const std::string& what) : AtoError(what) {}
};

inline double dot(const VecD& a, const VecD& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double dot(const VecD& a, const VecI& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * static_cast<double>(b[i]);
  return s;
}

inline std::int64_t idot(const VecI& a, const VecI& b) {
  std::int64_t s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double l1_norm(const VecD& v) {
  double s = 0.0;
  for (double x : v) s += x < 0 ? -x : x;
  return s;
}

inline double l1_norm(const VecI& v) {
  double s = 0.0;
  for (auto x : v) s += static_cast<double>(x < 0 ? -x : x);
  return s;
}

inline VecI& iadd(VecI& a, const VecI& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

inline VecI& isub(VecI& a, const VecI& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] -= b[i];
  return a;
}

inline VecD to_double(const VecI& v) {
  VecD out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<double>(v[i]);
  return out;
}

// Nearest integer, ties to even, as a 64-bit value.
std::int64_t round_half_even(double x);

VecI round_half_even(const VecD& v);

}  // namespace ato
