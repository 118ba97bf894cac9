// Copyright 2026 The gleak Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "gleak/dataset.hpp"
#include "gleak/tensor.hpp"

namespace gleak {

// CIFAR-10 binary layout: each record is one label byte followed by C*H*W
// pixel bytes in channel-major order. The default sample shape is 3x32x32.

/// Pixels are scaled by 1/255. A file whose size is not a whole number of
/// records fails with the byte offset of the truncated record.
ClientDataset load_cifar_binary(const std::filesystem::path& path, const Shape& sample_shape = {3, 32, 32});

/// Inverse of load_cifar_binary: pixels are rounded to the nearest of 256
/// levels after clamping to [0, 1]. Labels must fit in a byte.
void write_cifar_binary(const std::filesystem::path& path, const ClientDataset& data);

// GLKT tensor dump, little-endian:
//   "GLKT"  u32 version (1)  u32 rank  u64 dims[rank]  f64 data[prod(dims)]
inline constexpr std::uint32_t kTensorFormatVersion = 1;

void write_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor(const std::filesystem::path& path);

// CSV files open with one comment line carrying the schema version,
//   # schema=gleak-csv/1 scenario=<name>
// then a header row and data rows. Fields never contain commas.
inline constexpr int kCsvSchemaVersion = 1;

struct CsvTable {
  std::string scenario;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  /// Index of a column; kConfig error naming the column when absent.
  std::size_t column(const std::string& name) const;
  std::vector<double> numeric(const std::string& name) const;
};

void write_csv(const std::filesystem::path& path, const CsvTable& table);
CsvTable read_csv(const std::filesystem::path& path);

/// Whole-file helpers; kIo errors name the path.
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& content);

/// Shortest decimal that parses back to the same double.
std::string format_number(double v);

/// 64-bit FNV-1a.
std::uint64_t fnv1a(const std::string& bytes);

}  // namespace gleak
