// Copyright 2026 The gleak Authors
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <random>

#include "doctest.h"
#include "gleak/error.hpp"
#include "gleak/io.hpp"
#include "test_util.hpp"

using namespace gleak;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "gleak_unit_io" / name;
  fs::create_directories(p.parent_path());
  return p;
}

std::string record(std::uint8_t label, std::uint8_t fill, std::size_t pixels) {
  std::string r(1, static_cast<char>(label));
  r.append(pixels, static_cast<char>(fill));
  return r;
}

}  // namespace

TEST_CASE("cifar binary") {
  // Two 3x2x2 records written byte by byte, not through write_cifar_binary.
  const fs::path f = scratch("two.bin");
  write_file(f, record(3, 255, 12) + record(7, 0, 12));
  const ClientDataset d = load_cifar_binary(f, {3, 2, 2});
  CHECK(d.y == Labels{3, 7});
  CHECK(d.x.shape() == Shape{2, 3, 2, 2});
  CHECK(d.x[0] == 1.0);
  CHECK(d.x[12] == 0.0);

  SUBCASE("truncated file names the offset") {
    const fs::path bad = scratch("short.bin");
    write_file(bad, record(1, 9, 12) + record(2, 9, 5));
    try {
      load_cifar_binary(bad, {3, 2, 2});
      FAIL("no error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kIo);
      CHECK(std::string(e.what()).find("offset 13") != std::string::npos);
    }
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_cifar_binary(scratch("nope.bin")), Error); }
  SUBCASE("write then read is exact on the 256-level grid") {
    ClientDataset w;
    w.x = Tensor({3, 1, 2, 2});
    for (std::size_t i = 0; i < w.x.size(); ++i) w.x[i] = static_cast<double>(i * 20) / 255.0;
    w.y = {0, 9, 255};
    write_cifar_binary(scratch("rt.bin"), w);
    const ClientDataset r = load_cifar_binary(scratch("rt.bin"), {1, 2, 2});
    CHECK(r.y == w.y);
    CHECK(r.x == w.x);
    CHECK(fs::file_size(scratch("rt.bin")) == 15);
  }
}

TEST_CASE("tensor dump") {
  std::mt19937_64 rng(1);
  const Tensor t = gleak::testing::random_tensor({2, 3, 4}, rng);
  write_tensor(scratch("t.glkt"), t);
  CHECK(read_tensor(scratch("t.glkt")) == t);
  CHECK(fs::file_size(scratch("t.glkt")) == 4 + 4 + 4 + 3 * 8 + 24 * 8);
  const std::string bytes = read_file(scratch("t.glkt"));
  write_file(scratch("bad.glkt"), "GLKX" + bytes.substr(4));
  CHECK_THROWS_AS(read_tensor(scratch("bad.glkt")), Error);
  write_file(scratch("cut.glkt"), bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(read_tensor(scratch("cut.glkt")), Error);
}

TEST_CASE("csv") {
  CsvTable t{"update_sweep", {"updates", "psnr"}, {{"1", "30.5"}, {"2", "nan"}}};
  write_csv(scratch("a.csv"), t);
  CHECK(read_file(scratch("a.csv")).starts_with("# schema=gleak-csv/1 scenario=update_sweep\n"));
  const CsvTable r = read_csv(scratch("a.csv"));
  CHECK(r.scenario == "update_sweep");
  CHECK(r.rows == t.rows);
  CHECK(r.numeric("psnr")[0] == 30.5);
  CHECK(std::isnan(r.numeric("psnr")[1]));
  try {
    r.column("mse");
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kConfig);
    CHECK(std::string(e.what()).find("mse") != std::string::npos);
  }
  write_file(scratch("noschema.csv"), "updates,psnr\n1,2\n");
  CHECK_THROWS_AS(read_csv(scratch("noschema.csv")), Error);
}

TEST_CASE("format_number round-trips") {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 1e22, 0.0})
    CHECK(std::stod(format_number(v)) == v);
  CHECK(format_number(INFINITY) == "inf");
}
