#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace mavlkit {

// Input/config problems the caller can fix (bad files, bad shapes, bad flags).
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

class ShapeError : public ValidationError {
 public:
  explicit ShapeError(const std::string& msg) : ValidationError(msg) {}
};

class ConfigError : public ValidationError {
 public:
  explicit ConfigError(const std::string& msg) : ValidationError(msg) {}
};

// Dense row-major f64 array. All model math runs in doubles.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<int> s, std::vector<double> d);

  static Tensor zeros(const std::vector<int>& shape);
  static Tensor full(const std::vector<int>& shape, double value);
  // 2-D literal, e.g. Tensor::matrix({{1,2},{3,4}})
  static Tensor matrix(const std::vector<std::vector<double>>& rows);
  static Tensor vector(const std::vector<double>& values);

  int64_t numel() const;
  int rank() const { return static_cast<int>(shape.size()); }
  int rows() const;
  int cols() const;

  double& operator()(int i, int j);
  double operator()(int i, int j) const;

  bool all_finite() const;
  std::string shape_str() const;

  Tensor reshaped(const std::vector<int>& new_shape) const;
};

int64_t shape_numel(const std::vector<int>& shape);
void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

// Deterministic xoshiro256**-based generator. Identical sequences on every
// platform; never touches OS entropy.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t next_u64();
  double uniform();                       // [0, 1)
  double uniform(double lo, double hi);   // [lo, hi)
  double normal();                        // standard normal, Box-Muller
  int uniform_int(int n);                 // [0, n)
  // Derive an independent stream, e.g. one per image id.
  Rng fork(uint64_t salt) const;

 private:
  uint64_t s_[4];
  bool have_cached_normal_ = false;
  double cached_normal_ = 0.0;
};

}  // namespace mavlkit
