#pragma once

#include <cstdint>
#include <memory>
#include <cstring>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace rt {

namespace detail {

// Thread-local size-bucketed free list. Training builds and frees the same
// graph shapes every step; recycling buffers avoids the malloc + page-fault +
// zero-fill churn that otherwise dominates small-model steps.
double* pool_acquire(size_t n);     // uninitialized storage
void pool_release(double* p, size_t n);

struct PoolDeleter {
  size_t n = 0;
  void operator()(double* p) const { pool_release(p, n); }
};

}  // namespace detail

// Dense row-major double tensor, rank 0..4. Value semantics (copies copy the
// buffer). All neural compute in this project runs in float64.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int64_t> shape) : Tensor(uninit(std::move(shape))) {
    std::memset(data_.get(), 0, sizeof(double) * size_t(numel_));
  }

  Tensor(std::vector<int64_t> shape, std::vector<double> data)
      : Tensor(uninit(std::move(shape))) {
    if (int64_t(data.size()) != numel_)
      throw std::invalid_argument("Tensor: data size does not match shape");
    std::memcpy(data_.get(), data.data(), sizeof(double) * data.size());
  }

  Tensor(const Tensor& o) : shape_(o.shape_), numel_(o.numel_) {
    if (o.data_) {
      data_ = Ptr(detail::pool_acquire(size_t(numel_)),
                  detail::PoolDeleter{size_t(numel_)});
      std::memcpy(data_.get(), o.data_.get(), sizeof(double) * size_t(numel_));
    }
  }
  Tensor& operator=(const Tensor& o) {
    if (this == &o) return *this;
    if (!o.data_) {
      data_.reset();
      shape_ = o.shape_;
      numel_ = o.numel_;
      return *this;
    }
    if (numel_ != o.numel_ || !data_) {
      data_ = Ptr(detail::pool_acquire(size_t(o.numel_)),
                  detail::PoolDeleter{size_t(o.numel_)});
    }
    shape_ = o.shape_;
    numel_ = o.numel_;
    std::memcpy(data_.get(), o.data_.get(), sizeof(double) * size_t(numel_));
    return *this;
  }
  Tensor(Tensor&&) = default;
  Tensor& operator=(Tensor&&) = default;

  // Uninitialized storage for outputs every element of which is written.
  static Tensor uninit(std::vector<int64_t> shape) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.numel_ = checked_numel(t.shape_);
    t.data_ = Ptr(detail::pool_acquire(size_t(t.numel_)),
                  detail::PoolDeleter{size_t(t.numel_)});
    return t;
  }

  static Tensor zeros(std::vector<int64_t> shape) {
    return Tensor(std::move(shape));
  }
  static Tensor full(std::vector<int64_t> shape, double v) {
    Tensor t = uninit(std::move(shape));
    t.fill(v);
    return t;
  }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  const std::vector<int64_t>& shape() const { return shape_; }
  int64_t dim(size_t i) const { return shape_.at(i); }
  int ndim() const { return int(shape_.size()); }
  int64_t numel() const { return numel_; }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  double* data() { return data_.get(); }
  const double* data() const { return data_.get(); }

  double& operator[](int64_t i) { return data_[size_t(i)]; }
  double operator[](int64_t i) const { return data_[size_t(i)]; }

  double& at(int64_t i, int64_t j) { return data_[size_t(i * shape_[1] + j)]; }
  double at(int64_t i, int64_t j) const {
    return data_[size_t(i * shape_[1] + j)];
  }
  double& at(int64_t n, int64_t c, int64_t y, int64_t x) {
    return data_[size_t(((n * shape_[1] + c) * shape_[2] + y) * shape_[3] +
                        x)];
  }
  double at(int64_t n, int64_t c, int64_t y, int64_t x) const {
    return data_[size_t(((n * shape_[1] + c) * shape_[2] + y) * shape_[3] +
                        x)];
  }

  Tensor reshaped(std::vector<int64_t> shape) const {
    if (checked_numel(shape) != numel_)
      throw std::invalid_argument("reshaped: element count mismatch");
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
  }

  void fill(double v) {
    for (int64_t i = 0; i < numel_; ++i) data_[size_t(i)] = v;
  }

  std::string shape_str() const {
    std::string s = "[";
    for (size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += ", ";
      s += std::to_string(shape_[i]);
    }
    return s + "]";
  }

  static int64_t checked_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
      if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
      n *= d;
    }
    return n;
  }

 private:
  using Ptr = std::unique_ptr<double[], detail::PoolDeleter>;
  std::vector<int64_t> shape_;
  int64_t numel_ = 0;
  Ptr data_;
};

}  // namespace rt
