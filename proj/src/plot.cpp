// Copyright 2026 The gleak Authors
// SPDX-License-Identifier: Apache-2.0

#include "gleak/plot.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <memory>

#include "gleak/error.hpp"

namespace gleak {

void Image::set(long x, long y, std::uint32_t c) {
  if (x < 0 || y < 0 || x >= static_cast<long>(width) || y >= static_cast<long>(height)) return;
  auto* p = &rgb[(static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x)) * 3];
  p[0] = static_cast<std::uint8_t>(c >> 16);
  p[1] = static_cast<std::uint8_t>(c >> 8);
  p[2] = static_cast<std::uint8_t>(c);
}

std::uint32_t Image::at(std::size_t x, std::size_t y) const {
  const auto* p = &rgb.at((y * width + x) * 3);
  return (std::uint32_t{p[0]} << 16) | (std::uint32_t{p[1]} << 8) | p[2];
}

namespace {

constexpr std::uint32_t kAxis = 0x202020, kGrid = 0xe0e0e0, kThreshold = 0xd03030;
constexpr std::array<std::uint32_t, 8> kPalette{0x1f77b4, 0xff7f0e, 0x2ca02c, 0x9467bd,
                                                0x8c564b, 0xe377c2, 0x7f7f7f, 0x17becf};

// 3x5 glyphs, one row per nibble (bit 2 = left column).
struct Glyph {
  char c;
  std::array<std::uint8_t, 5> rows;
};
constexpr std::array<Glyph, 16> kFont{{
    {'0', {7, 5, 5, 5, 7}}, {'1', {2, 6, 2, 2, 7}}, {'2', {7, 1, 7, 4, 7}}, {'3', {7, 1, 7, 1, 7}},
    {'4', {5, 5, 7, 1, 1}}, {'5', {7, 4, 7, 1, 7}}, {'6', {7, 4, 7, 5, 7}}, {'7', {7, 1, 1, 1, 1}},
    {'8', {7, 5, 7, 5, 7}}, {'9', {7, 5, 7, 1, 7}}, {'.', {0, 0, 0, 0, 2}}, {'-', {0, 0, 7, 0, 0}},
    {'+', {0, 2, 7, 2, 0}}, {'e', {0, 7, 7, 4, 7}}, {' ', {0, 0, 0, 0, 0}}, {'x', {0, 5, 2, 5, 0}},
}};

void draw_text(Image& img, long x, long y, const std::string& s, std::uint32_t color) {
  for (char c : s) {
    const auto g = std::find_if(kFont.begin(), kFont.end(), [c](const Glyph& f) { return f.c == c; });
    if (g != kFont.end())
      for (long r = 0; r < 5; ++r)
        for (long b = 0; b < 3; ++b)
          if (g->rows[static_cast<std::size_t>(r)] & (4 >> b)) img.set(x + b, y + r, color);
    x += 4;
  }
}

void draw_line(Image& img, long x0, long y0, long x1, long y1, std::uint32_t color, long dash = 0) {
  const long dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const long sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  long err = dx + dy, step = 0;
  for (;;) {
    if (dash == 0 || (step / dash) % 2 == 0) img.set(x0, y0, color);
    ++step;
    if (x0 == x1 && y0 == y1) break;
    const long e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", std::abs(v) < 1e-12 ? 0.0 : v);
  return buf;
}

std::pair<double, double> padded(double lo, double hi) {
  if (!(lo <= hi)) return {0.0, 1.0};
  if (hi - lo < 1e-12) {
    const double m = std::max(std::abs(lo) * 0.1, 0.5);
    return {lo - m, hi + m};
  }
  const double m = 0.05 * (hi - lo);
  return {lo - m, hi + m};
}

}  // namespace

Image render_plot(const PlotSpec& spec) {
  if (spec.width < 80 || spec.height < 60) fail(ErrorCode::kInvalidArgument, "render_plot", "canvas too small");
  Image img(spec.width, spec.height);
  double xlo = INFINITY, xhi = -INFINITY, ylo = INFINITY, yhi = -INFINITY;
  for (const auto& s : spec.series) {
    if (s.x.size() != s.y.size()) fail(ErrorCode::kShapeMismatch, "render_plot", "series '" + s.name + "' x/y lengths differ");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      xlo = std::min(xlo, s.x[i]);
      xhi = std::max(xhi, s.x[i]);
      ylo = std::min(ylo, s.y[i]);
      yhi = std::max(yhi, s.y[i]);
    }
  }
  if (spec.threshold && xlo <= xhi) {
    ylo = std::min(ylo, *spec.threshold);
    yhi = std::max(yhi, *spec.threshold);
  }
  std::tie(xlo, xhi) = padded(xlo, xhi);
  std::tie(ylo, yhi) = padded(ylo, yhi);
  if (spec.threshold && !(ylo <= *spec.threshold && *spec.threshold <= yhi)) {
    ylo = std::min(ylo, *spec.threshold - 1.0);
    yhi = std::max(yhi, *spec.threshold + 1.0);
  }

  const long left = 44, right = static_cast<long>(spec.width) - 12;
  const long top = 12, bottom = static_cast<long>(spec.height) - 24;
  auto px = [&](double x) { return left + std::lround((x - xlo) / (xhi - xlo) * static_cast<double>(right - left)); };
  auto py = [&](double y) { return bottom - std::lround((y - ylo) / (yhi - ylo) * static_cast<double>(bottom - top)); };

  constexpr int kTicks = 5;
  for (int t = 0; t < kTicks; ++t) {
    const double fx = xlo + (xhi - xlo) * t / (kTicks - 1), fy = ylo + (yhi - ylo) * t / (kTicks - 1);
    const long gx = px(fx), gy = py(fy);
    draw_line(img, gx, top, gx, bottom, kGrid);
    draw_line(img, left, gy, right, gy, kGrid);
    const std::string lx = tick_label(fx), ly = tick_label(fy);
    draw_text(img, gx - static_cast<long>(lx.size()) * 2, bottom + 6, lx, kAxis);
    draw_text(img, left - 4 - static_cast<long>(ly.size()) * 4, gy - 2, ly, kAxis);
  }
  draw_line(img, left, bottom, right, bottom, kAxis);
  draw_line(img, left, top, left, bottom, kAxis);

  if (spec.threshold) draw_line(img, left, py(*spec.threshold), right, py(*spec.threshold), kThreshold, 4);

  for (std::size_t k = 0; k < spec.series.size(); ++k) {
    const auto& s = spec.series[k];
    const std::uint32_t color = kPalette[k % kPalette.size()];
    long lx = 0, ly = 0;
    bool have = false;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      const long x = px(s.x[i]), y = py(s.y[i]);
      if (have) draw_line(img, lx, ly, x, y, color);
      for (long a = -1; a <= 1; ++a)
        for (long b = -1; b <= 1; ++b) img.set(x + a, y + b, color);
      lx = x;
      ly = y;
      have = true;
    }
  }
  return img;
}

Image render_grid(const Tensor& batch, std::size_t cols, std::size_t scale) {
  if (batch.ndim() != 4 || (batch.dim(1) != 1 && batch.dim(1) != 3))
    fail(ErrorCode::kShapeMismatch, "render_grid", "expected [n, 1|3, H, W]");
  if (cols == 0 || scale == 0) fail(ErrorCode::kInvalidArgument, "render_grid", "cols and scale must be positive");
  const std::size_t n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  const std::size_t rows = std::max<std::size_t>(1, (n + cols - 1) / cols), gap = 2;
  Image img(cols * (w * scale + gap) + gap, rows * (h * scale + gap) + gap, 255);
  auto level = [](double v) { return static_cast<std::uint32_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); };
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t ox = gap + (i % cols) * (w * scale + gap), oy = gap + (i / cols) * (h * scale + gap);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        auto ch = [&](std::size_t k) { return batch[((i * c + k) * h + y) * w + x]; };
        const std::uint32_t r = level(ch(0)), g = level(ch(c == 3 ? 1 : 0)), b = level(ch(c == 3 ? 2 : 0));
        for (std::size_t sy = 0; sy < scale; ++sy)
          for (std::size_t sx = 0; sx < scale; ++sx)
            img.set(static_cast<long>(ox + x * scale + sx), static_cast<long>(oy + y * scale + sy), (r << 16) | (g << 8) | b);
      }
  }
  return img;
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_error_fn(png_structp, png_const_charp msg) { throw Error(ErrorCode::kIo, "png", msg); }
void png_warning_fn(png_structp, png_const_charp) {}

}  // namespace

void write_png(const std::filesystem::path& path, const Image& img,
               const std::vector<std::pair<std::string, std::string>>& text) {
  if (img.width == 0 || img.height == 0) fail(ErrorCode::kInvalidArgument, "write_png", "empty image");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  File f(std::fopen(path.c_str(), "wb"));
  if (!f) fail(ErrorCode::kIo, path.string(), "cannot open for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warning_fn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail(ErrorCode::kIo, "write_png", "libpng init failed");
  }
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_write_struct(p, i); }
  } guard{&png, &info};

  png_init_io(png, f.get());
  png_set_compression_level(png, 9);
  png_set_filter(png, PNG_FILTER_TYPE_BASE, PNG_FILTER_NONE);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_BASE, PNG_FILTER_TYPE_BASE);
  std::vector<png_text> chunks(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    chunks[i].compression = PNG_TEXT_COMPRESSION_NONE;
    chunks[i].key = const_cast<char*>(text[i].first.c_str());
    chunks[i].text = const_cast<char*>(text[i].second.c_str());
    chunks[i].text_length = text[i].second.size();
  }
  if (!chunks.empty()) png_set_text(png, info, chunks.data(), static_cast<int>(chunks.size()));
  png_write_info(png, info);
  for (std::size_t y = 0; y < img.height; ++y)
    png_write_row(png, const_cast<png_bytep>(img.rgb.data() + y * img.width * 3));
  png_write_end(png, nullptr);
}

Image read_png(const std::filesystem::path& path) {
  File f(std::fopen(path.c_str(), "rb"));
  if (!f) fail(ErrorCode::kIo, path.string(), "cannot open for reading");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warning_fn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail(ErrorCode::kIo, "read_png", "libpng init failed");
  }
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_read_struct(p, i, nullptr); }
  } guard{&png, &info};
  png_init_io(png, f.get());
  png_read_info(png, info);
  if (png_get_color_type(png, info) != PNG_COLOR_TYPE_RGB || png_get_bit_depth(png, info) != 8)
    fail(ErrorCode::kIo, path.string(), "expected 8-bit RGB");
  Image img(png_get_image_width(png, info), png_get_image_height(png, info));
  for (std::size_t y = 0; y < img.height; ++y) png_read_row(png, img.rgb.data() + y * img.width * 3, nullptr);
  png_read_end(png, nullptr);
  return img;
}

}  // namespace gleak
