#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace srdd {

// Dense rank-1..4 float tensor, row-major, innermost dimension last.
// Network activations use [batch, channels, height, width]; rank-3 values
// are treated as a single [channels, height, width] sample where ops allow.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);
  Tensor(std::vector<int> shape, std::vector<float> data);

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int> shape, float v);
  static Tensor scalar(float v) { return Tensor({1}, {v}); }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }

  float& operator[](size_t i) { return data_[i]; }
  float operator[](size_t i) const { return data_[i]; }

  // Rank-specific accessors; bounds are the caller's responsibility.
  float& at(int c, int y, int x) {
    return data_[(static_cast<size_t>(c) * shape_[1] + y) * shape_[2] + x];
  }
  float at(int c, int y, int x) const {
    return data_[(static_cast<size_t>(c) * shape_[1] + y) * shape_[2] + x];
  }
  float& at(int b, int c, int y, int x) {
    return data_[((static_cast<size_t>(b) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }
  float at(int b, int c, int y, int x) const {
    return data_[((static_cast<size_t>(b) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  // Exact elementwise equality (bitwise on the float values).
  bool equals(const Tensor& o) const;

  float min_value() const;
  float max_value() const;
  double sum() const;  // fixed-order serial accumulation in double

  std::string shape_str() const;

 private:
  std::vector<int> shape_;
  std::vector<float> data_;
};

size_t shape_numel(const std::vector<int>& shape);
std::string shape_to_string(const std::vector<int>& shape);

// Throws std::invalid_argument with a message naming the offending dimension.
void check_shape(bool cond, const std::string& msg);

// Deterministic random source: std::mt19937_64 engine (bit-exact per the
// standard) with hand-rolled uniform/normal transforms so draws are pinned
// independent of the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64();
  // Uniform in [0, 1).
  double uniform();
  // Uniform in [lo, hi).
  double uniform(double lo, double hi);
  // Uniform integer in [0, n).
  uint64_t uniform_int(uint64_t n);
  // Standard normal via Box-Muller.
  double normal();

  void fill_normal(Tensor& t);
  void fill_uniform(Tensor& t, float lo, float hi);

  // Uniform random permutation of {0..n-1} (Fisher-Yates).
  std::vector<int> permutation(int n);

  // Number of engine draws so far; lets tests assert a code path never
  // consumed randomness.
  uint64_t draw_count() const { return draws_; }

  // Derive an independent stream for (seed, iteration, tag) triples.
  static Rng substream(uint64_t seed, uint64_t iteration, uint64_t tag);

 private:
  uint64_t state_;
  uint64_t draws_ = 0;
  bool have_cached_normal_ = false;
  double cached_normal_ = 0.0;
};

}  // namespace srdd
