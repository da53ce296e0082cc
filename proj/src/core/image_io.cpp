#include "realtalk/image_io.hpp"

#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <vector>

#include "realtalk/container.hpp"

namespace rt::io {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

uint8_t quantize(double v) {
  const double c = std::min(1.0, std::max(0.0, v));
  return uint8_t(std::lround(c * 255.0));
}

int read_pnm_int(std::FILE* f) {
  int c = std::fgetc(f);
  while (c == '#' || std::isspace(c)) {
    if (c == '#')
      while (c != '\n' && c != EOF) c = std::fgetc(f);
    c = std::fgetc(f);
  }
  int v = 0;
  bool any = false;
  while (std::isdigit(c)) {
    v = v * 10 + (c - '0');
    any = true;
    c = std::fgetc(f);
  }
  if (!any) throw FormatError("malformed PNM header");
  return v;
}

}  // namespace

void write_ppm(const std::string& path, const Tensor& chw) {
  if (chw.ndim() != 3 || chw.dim(0) != 3)
    throw std::invalid_argument("write_ppm: expected [3,H,W]");
  const int64_t H = chw.dim(1), W = chw.dim(2);
  File f(std::fopen(path.c_str(), "wb"));
  if (!f) throw FormatError("cannot open for write: " + path);
  std::fprintf(f.get(), "P6\n%lld %lld\n255\n", (long long)W, (long long)H);
  // tensor row 0 is the bottom of the scene; files store top row first
  std::vector<uint8_t> row(size_t(W) * 3);
  for (int64_t y = H - 1; y >= 0; --y) {
    for (int64_t x = 0; x < W; ++x)
      for (int64_t c = 0; c < 3; ++c)
        row[size_t(x) * 3 + size_t(c)] =
            quantize(chw[(c * H + y) * W + x]);
    std::fwrite(row.data(), 1, row.size(), f.get());
  }
}

Tensor read_ppm(const std::string& path) {
  File f(std::fopen(path.c_str(), "rb"));
  if (!f) throw FormatError("cannot open: " + path);
  if (std::fgetc(f.get()) != 'P' || std::fgetc(f.get()) != '6')
    throw FormatError("not a P6 PPM: " + path);
  const int W = read_pnm_int(f.get());
  const int H = read_pnm_int(f.get());
  const int maxval = read_pnm_int(f.get());
  if (maxval != 255) throw FormatError("unsupported maxval in " + path);
  std::vector<uint8_t> buf(size_t(W) * H * 3);
  if (std::fread(buf.data(), 1, buf.size(), f.get()) != buf.size())
    throw FormatError("truncated PPM: " + path);
  Tensor t({3, H, W});
  for (int64_t fy = 0; fy < H; ++fy) {
    const int64_t y = H - 1 - fy;
    for (int64_t x = 0; x < W; ++x)
      for (int64_t c = 0; c < 3; ++c)
        t[(c * H + y) * W + x] =
            double(buf[(size_t(fy) * W + x) * 3 + size_t(c)]) / 255.0;
  }
  return t;
}

void write_pgm(const std::string& path, const Tensor& hw) {
  if (hw.ndim() != 2) throw std::invalid_argument("write_pgm: expected [H,W]");
  const int64_t H = hw.dim(0), W = hw.dim(1);
  File f(std::fopen(path.c_str(), "wb"));
  if (!f) throw FormatError("cannot open for write: " + path);
  std::fprintf(f.get(), "P5\n%lld %lld\n255\n", (long long)W, (long long)H);
  std::vector<uint8_t> row(size_t(W), 0);
  for (int64_t y = H - 1; y >= 0; --y) {
    for (int64_t x = 0; x < W; ++x) row[size_t(x)] = quantize(hw[y * W + x]);
    std::fwrite(row.data(), 1, row.size(), f.get());
  }
}

Tensor read_pgm(const std::string& path) {
  File f(std::fopen(path.c_str(), "rb"));
  if (!f) throw FormatError("cannot open: " + path);
  if (std::fgetc(f.get()) != 'P' || std::fgetc(f.get()) != '5')
    throw FormatError("not a P5 PGM: " + path);
  const int W = read_pnm_int(f.get());
  const int H = read_pnm_int(f.get());
  const int maxval = read_pnm_int(f.get());
  if (maxval != 255) throw FormatError("unsupported maxval in " + path);
  std::vector<uint8_t> buf(size_t(W) * H);
  if (std::fread(buf.data(), 1, buf.size(), f.get()) != buf.size())
    throw FormatError("truncated PGM: " + path);
  Tensor t({H, W});
  for (int64_t fy = 0; fy < H; ++fy) {
    const int64_t y = H - 1 - fy;
    for (int64_t x = 0; x < W; ++x)
      t[y * W + x] = double(buf[size_t(fy) * W + size_t(x)]) / 255.0;
  }
  return t;
}

}  // namespace rt::io
