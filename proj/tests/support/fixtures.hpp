#pragma once

#include <unistd.h>

#include <cstddef>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "ensel/nn.hpp"
#include "ensel/rng.hpp"

namespace fixtures {

// Hand-checkable 2-2-2 net used throughout the suite. Forward of [1, -5]:
// affine -> [-8, 1], relu -> [0, 1], affine -> [6, 3].
inline ensel::Network tiny_demo_net() {
  using ensel::Layer;
  using ensel::Matrix;
  std::vector<Layer> layers;
  layers.push_back(Layer::affine(Matrix(2, 2, {1, 2, -3, -1}), {1, -1}));
  layers.push_back(Layer::relu());
  layers.push_back(Layer::affine(Matrix(2, 2, {4, 6, -1, 3}), {0, 0}));
  return ensel::make_network(2, std::move(layers));
}

// Fully-connected affine/relu/.../affine net with uniform weights in
// [-scale, scale]. dims = {input, hidden..., output}.
inline ensel::Network random_net(ensel::Rng& rng, const std::vector<std::size_t>& dims, double scale = 1.0) {
  using ensel::Layer;
  using ensel::Matrix;
  std::vector<Layer> layers;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    Matrix w(dims[i + 1], dims[i]);
    for (double& v : w.data) v = rng.uniform(-scale, scale);
    ensel::Vector b(dims[i + 1]);
    for (double& v : b) v = rng.uniform(-scale, scale);
    layers.push_back(Layer::affine(std::move(w), std::move(b)));
    if (i + 2 < dims.size()) layers.push_back(Layer::relu());
  }
  return ensel::make_network(dims.front(), std::move(layers));
}

inline ensel::Vector random_point(ensel::Rng& rng, std::size_t dim, double lo = -1.0, double hi = 1.0) {
  ensel::Vector x(dim);
  for (double& v : x) v = rng.uniform(lo, hi);
  return x;
}

// Unique scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("ensel-test-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace fixtures
