#include "mavlkit/tensor.hpp"

#include <cmath>
#include <sstream>

namespace mavlkit {

Tensor::Tensor(std::vector<int> s, std::vector<double> d)
    : shape(std::move(s)), data(std::move(d)) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str());
  }
}

Tensor Tensor::zeros(const std::vector<int>& shape) {
  Tensor t;
  t.shape = shape;
  t.data.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
  return t;
}

Tensor Tensor::full(const std::vector<int>& shape, double value) {
  Tensor t = zeros(shape);
  for (double& v : t.data) v = value;
  return t;
}

Tensor Tensor::matrix(const std::vector<std::vector<double>>& rows) {
  const int n = static_cast<int>(rows.size());
  const int m = n > 0 ? static_cast<int>(rows[0].size()) : 0;
  Tensor t = zeros({n, m});
  for (int i = 0; i < n; ++i) {
    if (static_cast<int>(rows[i].size()) != m) {
      throw ShapeError("ragged matrix literal");
    }
    for (int j = 0; j < m; ++j) t.data[static_cast<size_t>(i) * m + j] = rows[i][j];
  }
  return t;
}

Tensor Tensor::vector(const std::vector<double>& values) {
  Tensor t;
  t.shape = {static_cast<int>(values.size())};
  t.data = values;
  return t;
}

int64_t Tensor::numel() const { return static_cast<int64_t>(data.size()); }

int Tensor::rows() const {
  if (rank() != 2) throw ShapeError("rows() on tensor of shape " + shape_str());
  return shape[0];
}

int Tensor::cols() const {
  if (rank() != 2) throw ShapeError("cols() on tensor of shape " + shape_str());
  return shape[1];
}

double& Tensor::operator()(int i, int j) {
  return data[static_cast<size_t>(i) * shape[1] + j];
}

double Tensor::operator()(int i, int j) const {
  return data[static_cast<size_t>(i) * shape[1] + j];
}

bool Tensor::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor Tensor::reshaped(const std::vector<int>& new_shape) const {
  if (shape_numel(new_shape) != numel()) {
    throw ShapeError("cannot reshape " + shape_str() + " to new element count");
  }
  Tensor t;
  t.shape = new_shape;
  t.data = data;
  return t;
}

int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("non-positive dimension " + std::to_string(d));
    n *= d;
  }
  return n;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape != b.shape) {
    throw ShapeError(std::string(what) + ": shape " + a.shape_str() + " vs " +
                     b.shape_str());
  }
}

namespace {
uint64_t splitmix64(uint64_t& x) {
  x += 0x9e3779b97f4a7c15ULL;
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
}  // namespace

Rng::Rng(uint64_t seed) {
  uint64_t x = seed;
  for (int i = 0; i < 4; ++i) s_[i] = splitmix64(x);
}

uint64_t Rng::next_u64() {
  const uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  if (have_cached_normal_) {
    have_cached_normal_ = false;
    return cached_normal_;
  }
  double u1, u2;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * M_PI * u2;
  cached_normal_ = r * std::sin(a);
  have_cached_normal_ = true;
  return r * std::cos(a);
}

int Rng::uniform_int(int n) {
  // Modulo bias is irrelevant at these ranges.
  return static_cast<int>(next_u64() % static_cast<uint64_t>(n));
}

Rng Rng::fork(uint64_t salt) const {
  uint64_t x = s_[0] ^ (salt * 0x9e3779b97f4a7c15ULL + 0x632be59bd9b4e019ULL);
  return Rng(splitmix64(x));
}

}  // namespace mavlkit
