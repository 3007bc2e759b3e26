#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <fstream>
#include <set>
#include <utility>
#include <vector>

#include "ensel/data.hpp"
#include "support/fixtures.hpp"
#include "support/synth.hpp"

using namespace ensel;

namespace {

void write_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void push_be32(std::vector<unsigned char>& v, std::uint32_t x) {
  v.push_back(static_cast<unsigned char>(x >> 24));
  v.push_back(static_cast<unsigned char>(x >> 16));
  v.push_back(static_cast<unsigned char>(x >> 8));
  v.push_back(static_cast<unsigned char>(x));
}

Dataset byte_aligned_dataset(std::size_t n, std::size_t side, std::uint64_t seed) {
  Rng rng(seed);
  Dataset ds;
  ds.image_side = side;
  for (std::size_t i = 0; i < n; ++i) {
    Vector img(side * side);
    for (double& v : img) v = static_cast<double>(rng.index(256)) / 255.0;
    ds.images.push_back(std::move(img));
    ds.labels.push_back(static_cast<int>(rng.index(10)));
  }
  return ds;
}

}  // namespace

TEST_CASE("idx round-trip preserves byte-aligned pixels and labels") {
  fixtures::TempDir dir("idx");
  const Dataset ds = byte_aligned_dataset(17, 5, 3);
  save_idx(ds, dir.file("i.idx"), dir.file("l.idx"));
  const Dataset back = load_idx(dir.file("i.idx"), dir.file("l.idx"));
  REQUIRE(back.size() == ds.size());
  CHECK(back.image_side == 5);
  CHECK(back.images == ds.images);
  CHECK(back.labels == ds.labels);
}

TEST_CASE("pixel bytes normalize to exact fractions of 255") {
  fixtures::TempDir dir("idx-norm");
  std::vector<unsigned char> img;
  push_be32(img, kIdxImagesMagic);
  push_be32(img, 1);
  push_be32(img, 2);
  push_be32(img, 2);
  img.insert(img.end(), {0, 255, 51, 102});
  std::vector<unsigned char> lab;
  push_be32(lab, kIdxLabelsMagic);
  push_be32(lab, 1);
  lab.push_back(7);
  write_bytes(dir.file("i.idx"), img);
  write_bytes(dir.file("l.idx"), lab);

  const Dataset ds = load_idx(dir.file("i.idx"), dir.file("l.idx"));
  CHECK(ds.images[0] == Vector{0.0, 1.0, 0.2, 0.4});
  CHECK(ds.labels[0] == 7);
}

TEST_CASE("idx loader validates magic numbers") {
  fixtures::TempDir dir("idx-magic");
  std::vector<unsigned char> img;
  push_be32(img, 0x00000804);
  push_be32(img, 0);
  push_be32(img, 2);
  push_be32(img, 2);
  write_bytes(dir.file("i.idx"), img);
  std::vector<unsigned char> lab;
  push_be32(lab, kIdxLabelsMagic);
  push_be32(lab, 0);
  write_bytes(dir.file("l.idx"), lab);
  CHECK_THROWS_WITH(load_idx(dir.file("i.idx"), dir.file("l.idx")),
                    Catch::Matchers::ContainsSubstring("magic"));
}

TEST_CASE("idx loader reports truncation and count mismatches") {
  fixtures::TempDir dir("idx-trunc");
  std::vector<unsigned char> img;
  push_be32(img, kIdxImagesMagic);
  push_be32(img, 2);
  push_be32(img, 2);
  push_be32(img, 2);
  img.insert(img.end(), {1, 2, 3, 4, 5});  // 3 bytes short
  std::vector<unsigned char> lab;
  push_be32(lab, kIdxLabelsMagic);
  push_be32(lab, 2);
  lab.insert(lab.end(), {0, 1});
  write_bytes(dir.file("i.idx"), img);
  write_bytes(dir.file("l.idx"), lab);
  CHECK_THROWS_WITH(load_idx(dir.file("i.idx"), dir.file("l.idx")),
                    Catch::Matchers::ContainsSubstring("truncated"));

  std::vector<unsigned char> lab1;
  push_be32(lab1, kIdxLabelsMagic);
  push_be32(lab1, 3);
  lab1.insert(lab1.end(), {0, 1, 2});
  write_bytes(dir.file("l3.idx"), lab1);
  std::vector<unsigned char> img2;
  push_be32(img2, kIdxImagesMagic);
  push_be32(img2, 2);
  push_be32(img2, 1);
  push_be32(img2, 1);
  img2.insert(img2.end(), {9, 9});
  write_bytes(dir.file("i2.idx"), img2);
  CHECK_THROWS_WITH(load_idx(dir.file("i2.idx"), dir.file("l3.idx")),
                    Catch::Matchers::ContainsSubstring("labels"));
}

TEST_CASE("idx loader rejects non-square images") {
  fixtures::TempDir dir("idx-sq");
  std::vector<unsigned char> img;
  push_be32(img, kIdxImagesMagic);
  push_be32(img, 1);
  push_be32(img, 2);
  push_be32(img, 3);
  img.insert(img.end(), {0, 0, 0, 0, 0, 0});
  std::vector<unsigned char> lab;
  push_be32(lab, kIdxLabelsMagic);
  push_be32(lab, 1);
  lab.push_back(0);
  write_bytes(dir.file("i.idx"), img);
  write_bytes(dir.file("l.idx"), lab);
  CHECK_THROWS_WITH(load_idx(dir.file("i.idx"), dir.file("l.idx")),
                    Catch::Matchers::ContainsSubstring("non-square"));
}

TEST_CASE("validation count follows the rounding rule") {
  CHECK(validation_count(120, 1.0 / 12.0) == 10);
  CHECK(validation_count(60000, 1.0 / 12.0) == 5000);
  CHECK(validation_count(10, 0.25) == 3);  // llround rounds half away from zero
  CHECK(validation_count(100, 0.001) == 1);  // clamped to leave at least one sample
  CHECK_THROWS_AS(validation_count(100, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(validation_count(100, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(validation_count(100, -0.5), std::invalid_argument);
}

TEST_CASE("splits partition the dataset exactly") {
  const Dataset ds = byte_aligned_dataset(40, 3, 11);
  const Splits s = make_splits(ds, 0.25, 99);
  CHECK(s.validation.size() == 10);
  CHECK(s.train.size() == 30);

  std::multiset<std::pair<std::vector<double>, int>> original, reunited;
  for (std::size_t i = 0; i < ds.size(); ++i) original.insert({ds.images[i], ds.labels[i]});
  for (std::size_t i = 0; i < s.train.size(); ++i) reunited.insert({s.train.images[i], s.train.labels[i]});
  for (std::size_t i = 0; i < s.validation.size(); ++i)
    reunited.insert({s.validation.images[i], s.validation.labels[i]});
  CHECK(original == reunited);
}

TEST_CASE("splits are reproducible by seed") {
  const Dataset ds = byte_aligned_dataset(30, 3, 17);
  const Splits a = make_splits(ds, 0.2, 5);
  const Splits b = make_splits(ds, 0.2, 5);
  CHECK(a.train.images == b.train.images);
  CHECK(a.validation.images == b.validation.images);
  const Splits c = make_splits(ds, 0.2, 6);
  CHECK(a.validation.images != c.validation.images);
}

TEST_CASE("attaching a test set checks the image side") {
  const Dataset ds = byte_aligned_dataset(10, 3, 21);
  const Dataset good = byte_aligned_dataset(4, 3, 22);
  const Splits with_test = make_splits(ds, good, 0.3, 0);
  CHECK(with_test.test.size() == 4);
  Dataset bad = byte_aligned_dataset(4, 2, 23);
  CHECK_THROWS_WITH(make_splits(ds, bad, 0.3, 0), Catch::Matchers::ContainsSubstring("test image side"));
}

TEST_CASE("downscale averages blocks") {
  Dataset ds;
  ds.image_side = 2;
  ds.images.push_back({0.0, 1.0, 1.0, 0.0});
  ds.labels.push_back(3);
  const Dataset out = downscale(ds, 2);
  CHECK(out.image_side == 1);
  CHECK(out.images[0] == Vector{0.5});
  CHECK(out.labels == std::vector<int>{3});
}

TEST_CASE("downscale keeps a constant image constant") {
  Dataset ds;
  ds.image_side = 28;
  ds.images.push_back(Vector(28 * 28, 0.5));
  ds.labels.push_back(0);
  const Dataset out = downscale(ds, 2);
  CHECK(out.image_side == 14);
  for (const double v : out.images[0]) CHECK(v == 0.5);
}

TEST_CASE("downscale rejects indivisible sides") {
  Dataset ds;
  ds.image_side = 3;
  ds.images.push_back(Vector(9, 0.0));
  ds.labels.push_back(0);
  CHECK_THROWS_WITH(downscale(ds, 2), Catch::Matchers::ContainsSubstring("divisible"));
}

TEST_CASE("downscale commutes with a pointwise affine map") {
  Rng rng(31);
  Dataset ds;
  ds.image_side = 6;
  Vector img(36);
  for (double& v : img) v = static_cast<double>(rng.index(256)) / 256.0;  // dyadic, exact arithmetic
  ds.images.push_back(img);
  ds.labels.push_back(1);

  auto remap = [](Dataset d) {
    for (Vector& im : d.images)
      for (double& v : im) v = 0.5 * v + 0.25;
    return d;
  };
  const Dataset a = downscale(remap(ds), 2);
  const Dataset b = remap(downscale(ds, 2));
  REQUIRE(a.images[0].size() == b.images[0].size());
  for (std::size_t i = 0; i < a.images[0].size(); ++i)
    CHECK(a.images[0][i] == Catch::Approx(b.images[0][i]).margin(1e-15));
}

TEST_CASE("synthetic dataset fixture is seeded and byte-aligned") {
  fixtures::SynthConfig cfg;
  cfg.per_class = 10;
  const Dataset a = fixtures::synthetic_dataset(cfg);
  const Dataset b = fixtures::synthetic_dataset(cfg);
  CHECK(a.images == b.images);
  CHECK(a.size() == cfg.classes * cfg.per_class);

  fixtures::TempDir dir("synth");
  save_idx(a, dir.file("i.idx"), dir.file("l.idx"));
  const Dataset back = load_idx(dir.file("i.idx"), dir.file("l.idx"));
  CHECK(back.images == a.images);
  CHECK(back.labels == a.labels);
}
