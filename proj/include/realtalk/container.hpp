#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "realtalk/tensor.hpp"

// Array container file format:
//   magic "RTA1" | dtype u8 (0=f32 1=f64 2=i64 3=u8) | ndim u8 |
//   shape as little-endian u64 per dim | raw little-endian payload.

namespace rt::io {

struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

enum class Dtype : uint8_t { f32 = 0, f64 = 1, i64 = 2, u8 = 3 };

struct Array {
  Dtype dtype = Dtype::f64;
  std::vector<int64_t> shape;
  std::vector<float> f32;
  std::vector<double> f64;
  std::vector<int64_t> i64;
  std::vector<uint8_t> u8;

  int64_t numel() const {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
  }
};

void write_array(const std::string& path, const Array& a);
Array read_array(const std::string& path);

// f64 convenience wrappers used for tensors and index lists.
void write_tensor(const std::string& path, const Tensor& t);
Tensor read_tensor(const std::string& path);
void write_indices(const std::string& path, const std::vector<int64_t>& idx);
std::vector<int64_t> read_indices(const std::string& path);

}  // namespace rt::io
