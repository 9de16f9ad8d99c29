#include "srdd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace srdd {

namespace {

void validate_shape(const std::vector<int>& shape) {
  if (shape.empty() || shape.size() > 4) {
    throw std::invalid_argument("tensor rank must be 1..4, got rank " +
                                std::to_string(shape.size()));
  }
  for (size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] < 1) {
      throw std::invalid_argument("tensor extent " + std::to_string(i) +
                                  " must be >= 1, got " + std::to_string(shape[i]));
    }
  }
}

}  // namespace

size_t shape_numel(const std::vector<int>& shape) {
  size_t n = 1;
  for (int d : shape) n *= static_cast<size_t>(d);
  return n;
}

std::string shape_to_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void check_shape(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_.assign(shape_numel(shape_), 0.0f);
}

Tensor::Tensor(std::vector<int> shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  validate_shape(shape_);
  if (data_.size() != shape_numel(shape_)) {
    throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape_to_string(shape_));
  }
}

Tensor Tensor::full(std::vector<int> shape, float v) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), v);
  return t;
}

bool Tensor::equals(const Tensor& o) const {
  if (shape_ != o.shape_) return false;
  return std::memcmp(data_.data(), o.data_.data(), data_.size() * sizeof(float)) == 0;
}

float Tensor::min_value() const {
  return *std::min_element(data_.begin(), data_.end());
}

float Tensor::max_value() const {
  return *std::max_element(data_.begin(), data_.end());
}

double Tensor::sum() const {
  double acc = 0.0;
  for (float v : data_) acc += v;
  return acc;
}

std::string Tensor::shape_str() const { return shape_to_string(shape_); }

// splitmix64 (Steele, Lea, Flood; used by Java SplittableRandom). One u64 of
// state, trivially serializable into checkpoints.
uint64_t Rng::next_u64() {
  ++draws_;
  uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

double Rng::uniform() {
  // 53 random bits into [0, 1).
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

uint64_t Rng::uniform_int(uint64_t n) {
  // Rejection sampling to stay unbiased.
  uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  uint64_t v;
  do {
    v = next_u64();
  } while (v >= limit);
  return v % n;
}

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
  double r = std::sqrt(-2.0 * std::log(u1));
  double theta = 2.0 * std::numbers::pi * u2;
  cached_normal_ = r * std::sin(theta);
  have_cached_normal_ = true;
  return r * std::cos(theta);
}

void Rng::fill_normal(Tensor& t) {
  for (size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(normal());
}

void Rng::fill_uniform(Tensor& t, float lo, float hi) {
  for (size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(uniform(lo, hi));
}

std::vector<int> Rng::permutation(int n) {
  std::vector<int> p(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) p[static_cast<size_t>(i)] = i;
  for (int i = n - 1; i > 0; --i) {
    int j = static_cast<int>(uniform_int(static_cast<uint64_t>(i) + 1));
    std::swap(p[static_cast<size_t>(i)], p[static_cast<size_t>(j)]);
  }
  return p;
}

Rng Rng::substream(uint64_t seed, uint64_t iteration, uint64_t tag) {
  // Fold the triple through the splitmix finalizer so streams are unrelated.
  Rng mixer(seed);
  mixer.state_ ^= 0x6a09e667f3bcc909ull * (iteration + 1);
  mixer.state_ ^= 0xbb67ae8584caa73bull * (tag + 1);
  uint64_t s = mixer.next_u64();
  return Rng(s);
}

}  // namespace srdd
