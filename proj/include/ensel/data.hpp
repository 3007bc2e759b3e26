#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ensel/linalg.hpp"
#include "ensel/rng.hpp"

namespace ensel {

// Square grayscale images with pixels normalized to [0, 1], plus labels.
struct Dataset {
  std::size_t image_side = 0;
  std::vector<Vector> images;
  std::vector<int> labels;

  std::size_t size() const { return images.size(); }
  std::size_t dim() const { return image_side * image_side; }
};

struct Splits {
  Dataset train;
  Dataset validation;
  Dataset test;
};

namespace detail {

inline std::uint32_t read_be32(std::ifstream& in, const std::string& path, const std::string& what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw std::runtime_error(path + ": truncated while reading " + what);
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

inline void write_be32(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace detail

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

// IDX binary pair (big-endian headers, one unsigned byte per pixel/label).
// Pixels are divided by 255 on load.
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw std::runtime_error("load_idx: cannot open " + images_path);
  const std::uint32_t img_magic = detail::read_be32(img, images_path, "magic");
  if (img_magic != kIdxImagesMagic)
    throw std::runtime_error(images_path + ": bad image magic " + std::to_string(img_magic) + ", expected " +
                             std::to_string(kIdxImagesMagic));
  const std::uint32_t count = detail::read_be32(img, images_path, "image count");
  const std::uint32_t rows = detail::read_be32(img, images_path, "row count");
  const std::uint32_t cols = detail::read_be32(img, images_path, "column count");
  if (rows != cols) throw std::runtime_error(images_path + ": non-square images are not supported");
  if (rows == 0) throw std::runtime_error(images_path + ": zero image side");

  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw std::runtime_error("load_idx: cannot open " + labels_path);
  const std::uint32_t lab_magic = detail::read_be32(lab, labels_path, "magic");
  if (lab_magic != kIdxLabelsMagic)
    throw std::runtime_error(labels_path + ": bad label magic " + std::to_string(lab_magic) + ", expected " +
                             std::to_string(kIdxLabelsMagic));
  const std::uint32_t lab_count = detail::read_be32(lab, labels_path, "label count");
  if (lab_count != count)
    throw std::runtime_error("load_idx: " + images_path + " has " + std::to_string(count) + " images but " +
                             labels_path + " has " + std::to_string(lab_count) + " labels");

  Dataset ds;
  ds.image_side = rows;
  ds.images.reserve(count);
  ds.labels.reserve(count);
  const std::size_t pixels = std::size_t(rows) * cols;
  std::vector<unsigned char> buf(pixels);
  for (std::uint32_t i = 0; i < count; ++i) {
    if (!img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(pixels)))
      throw std::runtime_error(images_path + ": truncated at image " + std::to_string(i));
    Vector v(pixels);
    for (std::size_t p = 0; p < pixels; ++p) v[p] = buf[p] / 255.0;
    ds.images.push_back(std::move(v));
    unsigned char l = 0;
    if (!lab.read(reinterpret_cast<char*>(&l), 1))
      throw std::runtime_error(labels_path + ": truncated at label " + std::to_string(i));
    ds.labels.push_back(static_cast<int>(l));
  }
  return ds;
}

// Writes the same IDX pair format; pixels are rounded to bytes, so values
// that are multiples of 1/255 round-trip exactly.
inline void save_idx(const Dataset& ds, const std::string& images_path, const std::string& labels_path) {
  std::ofstream img(images_path, std::ios::binary);
  if (!img) throw std::runtime_error("save_idx: cannot open " + images_path);
  detail::write_be32(img, kIdxImagesMagic);
  detail::write_be32(img, static_cast<std::uint32_t>(ds.size()));
  detail::write_be32(img, static_cast<std::uint32_t>(ds.image_side));
  detail::write_be32(img, static_cast<std::uint32_t>(ds.image_side));
  std::vector<unsigned char> buf;
  for (const Vector& v : ds.images) {
    buf.resize(v.size());
    for (std::size_t p = 0; p < v.size(); ++p) {
      double scaled = std::llround(v[p] * 255.0);
      if (scaled < 0) scaled = 0;
      if (scaled > 255) scaled = 255;
      buf[p] = static_cast<unsigned char>(scaled);
    }
    img.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  }
  if (!img) throw std::runtime_error("save_idx: write failed for " + images_path);

  std::ofstream lab(labels_path, std::ios::binary);
  if (!lab) throw std::runtime_error("save_idx: cannot open " + labels_path);
  detail::write_be32(lab, kIdxLabelsMagic);
  detail::write_be32(lab, static_cast<std::uint32_t>(ds.size()));
  for (const int l : ds.labels) {
    const unsigned char b = static_cast<unsigned char>(l);
    lab.write(reinterpret_cast<const char*>(&b), 1);
  }
  if (!lab) throw std::runtime_error("save_idx: write failed for " + labels_path);
}

// Rounding rule for the validation carve-out, clamped to leave at least one
// sample on each side.
inline std::size_t validation_count(std::size_t total, double val_fraction) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0))
    throw std::invalid_argument("validation fraction must lie strictly between 0 and 1");
  if (total < 2) throw std::invalid_argument("cannot split fewer than two samples");
  long long v = std::llround(static_cast<double>(total) * val_fraction);
  if (v < 1) v = 1;
  if (v > static_cast<long long>(total) - 1) v = static_cast<long long>(total) - 1;
  return static_cast<std::size_t>(v);
}

// Seeded shuffle, then partition: the first validation_count shuffled samples
// become the validation set, the rest the training set.
inline Splits make_splits(const Dataset& ds, double val_fraction, std::uint64_t seed) {
  const std::size_t val = validation_count(ds.size(), val_fraction);
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order);

  Splits s;
  s.train.image_side = s.validation.image_side = ds.image_side;
  for (std::size_t i = 0; i < order.size(); ++i) {
    Dataset& target = i < val ? s.validation : s.train;
    target.images.push_back(ds.images[order[i]]);
    target.labels.push_back(ds.labels[order[i]]);
  }
  return s;
}

inline Splits make_splits(const Dataset& ds, Dataset test, double val_fraction, std::uint64_t seed) {
  Splits s = make_splits(ds, val_fraction, seed);
  if (test.image_side != ds.image_side)
    throw std::invalid_argument("make_splits: test image side differs from train");
  s.test = std::move(test);
  return s;
}

inline Vector downscale_image(const Vector& img, std::size_t side, std::size_t factor) {
  if (factor == 0) throw std::invalid_argument("downscale: factor must be positive");
  if (side % factor != 0)
    throw std::invalid_argument("downscale: image side " + std::to_string(side) +
                                " is not divisible by factor " + std::to_string(factor));
  const std::size_t out_side = side / factor;
  Vector out(out_side * out_side);
  const double denom = static_cast<double>(factor * factor);
  for (std::size_t r = 0; r < out_side; ++r)
    for (std::size_t c = 0; c < out_side; ++c) {
      double sum = 0.0;
      for (std::size_t dr = 0; dr < factor; ++dr)
        for (std::size_t dc = 0; dc < factor; ++dc) sum += img[(r * factor + dr) * side + (c * factor + dc)];
      out[r * out_side + c] = sum / denom;
    }
  return out;
}

// Average pooling with a factor x factor window.
inline Dataset downscale(const Dataset& ds, std::size_t factor) {
  Dataset out;
  out.image_side = ds.image_side / factor;
  if (factor == 0 || ds.image_side % factor != 0)
    throw std::invalid_argument("downscale: image side " + std::to_string(ds.image_side) +
                                " is not divisible by factor " + std::to_string(factor));
  out.labels = ds.labels;
  out.images.reserve(ds.size());
  for (const Vector& img : ds.images) out.images.push_back(downscale_image(img, ds.image_side, factor));
  return out;
}

}  // namespace ensel
