// Copyright 2026 The gleak Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gleak/tensor.hpp"

namespace gleak {

struct Image {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel

  Image() = default;
  Image(std::size_t w, std::size_t h, std::uint8_t fill = 255) : width(w), height(h), rgb(w * h * 3, fill) {}
  void set(long x, long y, std::uint32_t color);  // 0xRRGGBB, clipped
  std::uint32_t at(std::size_t x, std::size_t y) const;
};

struct Series {
  std::string name;
  std::vector<double> x, y;  // non-finite points are skipped
};

struct PlotSpec {
  std::string title, x_label, y_label;
  std::vector<Series> series;
  std::optional<double> threshold;  // dashed horizontal line
  std::size_t width = 480, height = 320;
};

/// Axes, ticks with numeric labels, one coloured polyline with markers per
/// series. With no finite points the axes span [0, 1].
Image render_plot(const PlotSpec& spec);

/// Tiles a batch [n, C, H, W] (C = 1 or 3, values clamped to [0, 1]) into
/// `cols` columns, each pixel scaled by `scale`.
Image render_grid(const Tensor& batch, std::size_t cols, std::size_t scale = 2);

/// 8-bit RGB PNG with fixed compression settings and no timestamp, so equal
/// images give equal bytes. `text` goes into tEXt chunks.
void write_png(const std::filesystem::path& path, const Image& image,
               const std::vector<std::pair<std::string, std::string>>& text = {});

/// Width, height and pixels of an 8-bit RGB PNG written by write_png.
Image read_png(const std::filesystem::path& path);

}  // namespace gleak
