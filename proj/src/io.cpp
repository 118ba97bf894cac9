// Copyright 2026 The gleak Authors
// SPDX-License-Identifier: Apache-2.0

#include "gleak/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "gleak/error.hpp"

namespace gleak {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {

std::size_t product(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <class T>
T take(const std::string& in, std::size_t& pos, const std::string& ctx) {
  if (in.size() - pos < sizeof(T))
    fail(ErrorCode::kIo, ctx, "truncated at byte " + std::to_string(pos));
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, path.string(), "cannot open for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, path.string(), "cannot open for writing");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) fail(ErrorCode::kIo, path.string(), "write failed");
}

ClientDataset load_cifar_binary(const std::filesystem::path& path, const Shape& sample_shape) {
  const std::string ctx = path.string();
  if (sample_shape.empty() || product(sample_shape) == 0)
    fail(ErrorCode::kInvalidArgument, ctx, "sample shape must be non-empty");
  const std::string bytes = read_file(path);
  const std::size_t pixels = product(sample_shape), record = pixels + 1;
  const std::size_t n = bytes.size() / record;
  if (bytes.size() % record != 0)
    fail(ErrorCode::kIo, ctx,
         "truncated record at byte offset " + std::to_string(n * record) + " (record size " +
             std::to_string(record) + ", file size " + std::to_string(bytes.size()) + ")");
  Shape shape{n};
  shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
  ClientDataset d;
  d.x = Tensor(shape);
  d.y.resize(n);
  d.source = ctx;
  for (std::size_t i = 0; i < n; ++i) {
    const auto* r = reinterpret_cast<const unsigned char*>(bytes.data() + i * record);
    d.y[i] = r[0];
    for (std::size_t p = 0; p < pixels; ++p) d.x[i * pixels + p] = r[1 + p] / 255.0;
  }
  return d;
}

void write_cifar_binary(const std::filesystem::path& path, const ClientDataset& data) {
  const std::string ctx = path.string();
  const std::size_t n = data.size();
  if (data.x.ndim() < 2 || data.x.dim(0) != n) fail(ErrorCode::kShapeMismatch, ctx, "x must be [N, ...] with N labels");
  const std::size_t pixels = data.x.size() / std::max<std::size_t>(n, 1);
  std::string out;
  out.reserve(n * (pixels + 1));
  for (std::size_t i = 0; i < n; ++i) {
    if (data.y[i] < 0 || data.y[i] > 255) fail(ErrorCode::kOutOfRange, ctx, "label does not fit in a byte");
    out.push_back(static_cast<char>(data.y[i]));
    for (std::size_t p = 0; p < pixels; ++p) {
      const double v = std::clamp(data.x[i * pixels + p], 0.0, 1.0);
      out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
  }
  write_file(path, out);
}

void write_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::string out = "GLKT";
  put<std::uint32_t>(out, kTensorFormatVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.ndim()));
  for (auto d : t.shape()) put<std::uint64_t>(out, d);
  for (double v : t.data()) put<double>(out, v);
  write_file(path, out);
}

Tensor read_tensor(const std::filesystem::path& path) {
  const std::string ctx = path.string();
  const std::string in = read_file(path);
  if (in.compare(0, 4, "GLKT") != 0) fail(ErrorCode::kIo, ctx, "bad magic");
  std::size_t pos = 4;
  const auto version = take<std::uint32_t>(in, pos, ctx);
  if (version != kTensorFormatVersion) fail(ErrorCode::kIo, ctx, "unsupported version " + std::to_string(version));
  const auto rank = take<std::uint32_t>(in, pos, ctx);
  Shape shape(rank);
  for (auto& d : shape) d = take<std::uint64_t>(in, pos, ctx);
  const std::size_t n = product(shape);
  if ((in.size() - pos) != n * sizeof(double))
    fail(ErrorCode::kIo, ctx, "payload is " + std::to_string(in.size() - pos) + " bytes, expected " +
                                  std::to_string(n * sizeof(double)));
  std::vector<double> data(n);
  if (n) std::memcpy(data.data(), in.data() + pos, n * sizeof(double));
  return Tensor(std::move(shape), std::move(data));
}

std::size_t CsvTable::column(const std::string& name) const {
  const auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) fail(ErrorCode::kConfig, "csv", "missing column '" + name + "'");
  return static_cast<std::size_t>(it - columns.begin());
}

std::vector<double> CsvTable::numeric(const std::string& name) const {
  const std::size_t c = column(name);
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& r : rows) {
    const std::string& s = r.at(c);
    double v = std::nan("");
    if (!s.empty() && s != "nan") {
      const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
      if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        fail(ErrorCode::kConfig, "csv", "column '" + name + "' has non-numeric value '" + s + "'");
    }
    out.push_back(v);
  }
  return out;
}

void write_csv(const std::filesystem::path& path, const CsvTable& t) {
  std::string out = "# schema=gleak-csv/" + std::to_string(kCsvSchemaVersion) + " scenario=" + t.scenario + "\n";
  auto line = [&](const std::vector<std::string>& f) {
    for (std::size_t i = 0; i < f.size(); ++i) {
      if (f[i].find_first_of(",\n") != std::string::npos)
        fail(ErrorCode::kInvalidArgument, path.string(), "csv field contains a separator: " + f[i]);
      if (i) out += ',';
      out += f[i];
    }
    out += '\n';
  };
  line(t.columns);
  for (const auto& r : t.rows) {
    if (r.size() != t.columns.size()) fail(ErrorCode::kShapeMismatch, path.string(), "row width differs from header");
    line(r);
  }
  write_file(path, out);
}

CsvTable read_csv(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  std::istringstream in(text);
  std::string line;
  CsvTable t;
  auto split = [](const std::string& s) {
    std::vector<std::string> f;
    std::size_t start = 0;
    for (;;) {
      const auto comma = s.find(',', start);
      f.push_back(s.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    return f;
  };
  bool header = false, schema = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      const std::string tag = "schema=gleak-csv/";
      const auto p = line.find(tag);
      if (p != std::string::npos) {
        const int v = std::atoi(line.c_str() + p + tag.size());
        if (v != kCsvSchemaVersion) fail(ErrorCode::kIo, path.string(), "unsupported csv schema " + std::to_string(v));
        schema = true;
        const auto sc = line.find("scenario=");
        if (sc != std::string::npos) t.scenario = line.substr(sc + 9);
      }
      continue;
    }
    if (!header) {
      t.columns = split(line);
      header = true;
      continue;
    }
    auto f = split(line);
    if (f.size() != t.columns.size()) fail(ErrorCode::kIo, path.string(), "ragged row: " + line);
    t.rows.push_back(std::move(f));
  }
  if (!schema) fail(ErrorCode::kIo, path.string(), "missing schema line");
  return t;
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace gleak
