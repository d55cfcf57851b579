// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <vector>

#include "bnrank/datasets.hpp"
#include "bnrank/errors.hpp"
#include "oracles.hpp"

using namespace bnrank;
namespace fs = std::filesystem;

namespace {

void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& b) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

fs::path tmp(const std::string& name) { return fs::temp_directory_path() / ("bnrank_unit_" + name); }

std::vector<std::uint8_t> images_fixture() {
  std::vector<std::uint8_t> b;
  put_u32(b, 0x00000803);
  put_u32(b, 2);
  put_u32(b, 2);
  put_u32(b, 2);
  for (std::uint8_t v : {0, 51, 102, 255, 255, 0, 17, 34}) b.push_back(v);
  return b;
}

std::vector<std::uint8_t> labels_fixture(std::uint32_t count) {
  std::vector<std::uint8_t> b;
  put_u32(b, 0x00000801);
  put_u32(b, count);
  for (std::uint32_t i = 0; i < count; ++i) b.push_back(static_cast<std::uint8_t>(i % 10));
  return b;
}

}  // namespace

TEST_CASE("Gaussian matrix of full rank") {
  DatasetSpec spec;
  spec.d = spec.n = 16;
  spec.require_full_rank = true;
  RngHandle rng(1, 0);
  const Dataset ds = generate(spec, rng);
  CHECK(hard_rank(SingularSpectrum::from_matrix(ds.x)) == 16);
  CHECK(oracle::exact_rank(ds.x) == 16);
  CHECK(ds.labels.empty());
}

TEST_CASE("near-collinear input at eps 0 is rank one") {
  DatasetSpec spec;
  spec.kind = DatasetKind::near_collinear;
  spec.d = 12;
  spec.n = 20;
  spec.epsilon = 0.0;
  RngHandle rng(2, 0);
  const Dataset ds = generate(spec, rng);
  CHECK(hard_rank(SingularSpectrum::from_matrix(ds.x)) == 1);
  for (Index i = 0; i < 12; ++i) CHECK(ds.x.row(i).norm() == doctest::Approx(std::sqrt(20.0)));
  spec.epsilon = 0.01;
  CHECK(hard_rank(SingularSpectrum::from_matrix(generate(spec, rng).x)) == 12);
}

TEST_CASE("blobs are separable by a least-squares linear classifier") {
  DatasetSpec spec;
  spec.kind = DatasetKind::gaussian_blobs;
  spec.d = 16;
  spec.n = 400;
  spec.num_classes = 2;
  spec.separation = 6.0;
  RngHandle rng(3, 0);
  const Dataset ds = generate(spec, rng);
  REQUIRE(ds.labels.size() == 400);
  Matrix a(ds.x.rows() + 1, ds.x.cols());
  a.topRows(ds.x.rows()) = ds.x;
  a.row(ds.x.rows()).setOnes();
  Vector t(ds.x.cols());
  for (Index i = 0; i < t.size(); ++i) t[i] = ds.labels[static_cast<std::size_t>(i)] == 1 ? 1.0 : -1.0;
  const Vector coef = a.transpose().colPivHouseholderQr().solve(t);
  const Vector pred = a.transpose() * coef;
  int correct = 0;
  for (Index i = 0; i < t.size(); ++i) correct += (pred[i] > 0) == (t[i] > 0);
  CHECK(correct >= 396);
}

TEST_CASE("blob labels cycle through the classes") {
  DatasetSpec spec;
  spec.kind = DatasetKind::gaussian_blobs;
  spec.d = 4;
  spec.n = 9;
  spec.num_classes = 3;
  RngHandle rng(4, 0);
  const Dataset ds = generate(spec, rng);
  for (std::size_t i = 0; i < 9; ++i) CHECK(ds.labels[i] == static_cast<int>(i % 3));
}

TEST_CASE("handcrafted IDX fixture") {
  const fs::path im = tmp("img.idx"), lb = tmp("lab.idx");
  write_bytes(im, images_fixture());
  write_bytes(lb, labels_fixture(2));
  const Dataset ds = load_idx(im, lb);
  REQUIRE(ds.x.rows() == 4);
  REQUIRE(ds.x.cols() == 2);
  const double first[] = {0, 51, 102, 255}, second[] = {255, 0, 17, 34};
  for (Index i = 0; i < 4; ++i) {
    CHECK(ds.x(i, 0) == doctest::Approx(first[i] / 255.0));
    CHECK(ds.x(i, 1) == doctest::Approx(second[i] / 255.0));
  }
  CHECK(ds.labels == std::vector<int>{0, 1});
  fs::remove(im);
  fs::remove(lb);
}

TEST_CASE("IDX errors") {
  const fs::path im = tmp("img2.idx"), lb = tmp("lab2.idx");
  write_bytes(im, images_fixture());
  SUBCASE("images passed as labels") {
    CHECK_THROWS_AS(load_idx(im, im), FormatError);
  }
  SUBCASE("count mismatch") {
    write_bytes(lb, labels_fixture(3));
    CHECK_THROWS_AS(load_idx(im, lb), FormatError);
  }
  SUBCASE("truncated images") {
    auto b = images_fixture();
    b.pop_back();
    write_bytes(im, b);
    write_bytes(lb, labels_fixture(2));
    try {
      load_idx(im, lb);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(e.offset().has_value());
    }
  }
  fs::remove(im);
  fs::remove(lb);
}

TEST_CASE("IDX writer round-trip") {
  const fs::path im = tmp("img3.idx"), lb = tmp("lab3.idx");
  std::vector<std::uint8_t> pixels(3 * 4 * 5), labels{7, 1, 9};
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = static_cast<std::uint8_t>(i * 4);
  write_idx(im, lb, 4, 5, pixels, labels);
  const Dataset ds = load_idx(im, lb);
  CHECK(ds.x.rows() == 20);
  CHECK(ds.x.cols() == 3);
  CHECK(ds.x(19, 2) == doctest::Approx(pixels[59] / 255.0));
  CHECK(ds.labels == std::vector<int>{7, 1, 9});
  fs::remove(im);
  fs::remove(lb);
}

TEST_CASE("DatasetSpec validation") {
  DatasetSpec spec;
  spec.kind = DatasetKind::near_collinear;
  spec.epsilon = 1.5;
  RngHandle rng(5, 0);
  CHECK_THROWS_AS(generate(spec, rng), InvalidInput);
  CHECK(parse_dataset_kind(to_string(DatasetKind::gaussian_blobs)) == DatasetKind::gaussian_blobs);
}
