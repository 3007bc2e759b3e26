#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "ensel/data.hpp"
#include "ensel/rng.hpp"

namespace ensel {

struct SynthConfig {
  std::size_t classes = 4;
  std::size_t side = 4;
  std::size_t per_class = 200;
  // Class template pixels are drawn from 0.5 +- separation; samples add
  // uniform noise of +-noise and clamp to [0, 1].
  double separation = 0.25;
  double noise = 0.18;
  std::uint64_t seed = 7;
};

// Seeded synthetic classification task: one template per class, samples are
// noisy copies. Pixels are quantized to multiples of 1/255 so a dataset
// written through save_idx loads back bit-identically.
inline Dataset synthetic_dataset(const SynthConfig& cfg) {
  if (cfg.classes < 2 || cfg.classes > 255) throw std::invalid_argument("synthetic_dataset: bad class count");
  Rng rng(cfg.seed);
  const std::size_t dim = cfg.side * cfg.side;
  std::vector<Vector> templates(cfg.classes);
  for (auto& t : templates) {
    t.resize(dim);
    for (double& v : t) v = 0.5 + rng.uniform(-cfg.separation, cfg.separation);
  }
  Dataset ds;
  ds.image_side = cfg.side;
  ds.images.reserve(cfg.classes * cfg.per_class);
  ds.labels.reserve(cfg.classes * cfg.per_class);
  for (std::size_t i = 0; i < cfg.per_class; ++i) {
    for (std::size_t c = 0; c < cfg.classes; ++c) {
      Vector img(dim);
      for (std::size_t p = 0; p < dim; ++p) {
        double v = templates[c][p] + rng.uniform(-cfg.noise, cfg.noise);
        if (v < 0.0) v = 0.0;
        if (v > 1.0) v = 1.0;
        img[p] = static_cast<double>(static_cast<int>(v * 255.0 + 0.5)) / 255.0;
      }
      ds.images.push_back(std::move(img));
      ds.labels.push_back(static_cast<int>(c));
    }
  }
  return ds;
}

}  // namespace ensel
