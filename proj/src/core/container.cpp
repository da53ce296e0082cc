#include "realtalk/container.hpp"

#include <cstdio>
#include <cstring>
#include <memory>

namespace rt::io {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

void put_u64le(std::FILE* f, uint64_t v) {
  uint8_t buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = uint8_t(v >> (8 * i));
  if (std::fwrite(buf, 1, 8, f) != 8) throw FormatError("write failed");
}

uint64_t get_u64le(std::FILE* f) {
  uint8_t buf[8];
  if (std::fread(buf, 1, 8, f) != 8)
    throw FormatError("truncated container: missing shape bytes");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= uint64_t(buf[i]) << (8 * i);
  return v;
}

size_t elem_size(Dtype d) {
  switch (d) {
    case Dtype::f32: return 4;
    case Dtype::f64: return 8;
    case Dtype::i64: return 8;
    case Dtype::u8: return 1;
  }
  throw FormatError("unknown dtype code");
}

}  // namespace

void write_array(const std::string& path, const Array& a) {
  File f(std::fopen(path.c_str(), "wb"));
  if (!f) throw FormatError("cannot open for write: " + path);
  if (std::fwrite("RTA1", 1, 4, f.get()) != 4)
    throw FormatError("write failed: " + path);
  const uint8_t dtype = uint8_t(a.dtype);
  const uint8_t ndim = uint8_t(a.shape.size());
  std::fwrite(&dtype, 1, 1, f.get());
  std::fwrite(&ndim, 1, 1, f.get());
  for (int64_t d : a.shape) put_u64le(f.get(), uint64_t(d));
  const int64_t n = a.numel();
  // This project only runs on little-endian hosts; payloads are written raw.
  size_t written = 0;
  switch (a.dtype) {
    case Dtype::f32: written = std::fwrite(a.f32.data(), 4, size_t(n), f.get()); break;
    case Dtype::f64: written = std::fwrite(a.f64.data(), 8, size_t(n), f.get()); break;
    case Dtype::i64: written = std::fwrite(a.i64.data(), 8, size_t(n), f.get()); break;
    case Dtype::u8: written = std::fwrite(a.u8.data(), 1, size_t(n), f.get()); break;
  }
  if (written != size_t(n)) throw FormatError("write failed: " + path);
}

Array read_array(const std::string& path) {
  File f(std::fopen(path.c_str(), "rb"));
  if (!f) throw FormatError("cannot open: " + path);
  char magic[4];
  if (std::fread(magic, 1, 4, f.get()) != 4)
    throw FormatError("truncated container: missing magic in " + path);
  if (std::memcmp(magic, "RTA1", 4) != 0)
    throw FormatError("bad magic in " + path);
  uint8_t dtype_code = 0, ndim = 0;
  if (std::fread(&dtype_code, 1, 1, f.get()) != 1 ||
      std::fread(&ndim, 1, 1, f.get()) != 1)
    throw FormatError("truncated container: missing header in " + path);
  if (dtype_code > 3) throw FormatError("unknown dtype code in " + path);
  Array a;
  a.dtype = Dtype(dtype_code);
  a.shape.resize(ndim);
  for (int i = 0; i < ndim; ++i) {
    a.shape[i] = int64_t(get_u64le(f.get()));
    if (a.shape[i] < 0 || a.shape[i] > (int64_t(1) << 40))
      throw FormatError("implausible dimension in " + path);
  }
  const int64_t n = a.numel();
  size_t got = 0;
  switch (a.dtype) {
    case Dtype::f32:
      a.f32.resize(size_t(n));
      got = std::fread(a.f32.data(), 4, size_t(n), f.get());
      break;
    case Dtype::f64:
      a.f64.resize(size_t(n));
      got = std::fread(a.f64.data(), 8, size_t(n), f.get());
      break;
    case Dtype::i64:
      a.i64.resize(size_t(n));
      got = std::fread(a.i64.data(), 8, size_t(n), f.get());
      break;
    case Dtype::u8:
      a.u8.resize(size_t(n));
      got = std::fread(a.u8.data(), 1, size_t(n), f.get());
      break;
  }
  if (got != size_t(n))
    throw FormatError("truncated container: payload short in " + path);
  // trailing bytes are a format violation too
  uint8_t extra;
  if (std::fread(&extra, 1, 1, f.get()) == 1)
    throw FormatError("trailing bytes in " + path);
  return a;
}

void write_tensor(const std::string& path, const Tensor& t) {
  Array a;
  a.dtype = Dtype::f64;
  a.shape = t.shape();
  a.f64.assign(t.data(), t.data() + t.numel());
  write_array(path, a);
}

Tensor read_tensor(const std::string& path) {
  Array a = read_array(path);
  if (a.dtype != Dtype::f64)
    throw FormatError("expected f64 array in " + path);
  return Tensor(a.shape, std::move(a.f64));
}

void write_indices(const std::string& path, const std::vector<int64_t>& idx) {
  Array a;
  a.dtype = Dtype::i64;
  a.shape = {int64_t(idx.size())};
  a.i64 = idx;
  write_array(path, a);
}

std::vector<int64_t> read_indices(const std::string& path) {
  Array a = read_array(path);
  if (a.dtype != Dtype::i64)
    throw FormatError("expected i64 array in " + path);
  return std::move(a.i64);
}

}  // namespace rt::io
