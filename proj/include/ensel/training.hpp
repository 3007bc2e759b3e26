#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "ensel/data.hpp"
#include "ensel/linalg.hpp"
#include "ensel/nn.hpp"
#include "ensel/rng.hpp"

namespace ensel {

// Plain minibatch SGD on the softmax cross-entropy loss. All randomness
// (parameter init, per-epoch example order) flows from one seeded generator,
// so a given (data, config) pair always produces the same bits.
struct TrainConfig {
  std::vector<std::size_t> hidden = {8};
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  double learning_rate = 0.5;
  std::uint64_t seed = 1;
};

struct TrainResult {
  Network net;
  std::vector<double> epoch_losses;  // mean per-example loss seen in each epoch
};

inline void validate_train_config(const TrainConfig& cfg) {
  if (cfg.batch_size == 0) throw std::invalid_argument("training: batch size must be positive");
  if (!(cfg.learning_rate > 0.0)) throw std::invalid_argument("training: learning rate must be positive");
  for (std::size_t h : cfg.hidden)
    if (h == 0) throw std::invalid_argument("training: hidden layer of width zero");
}

// Fully-connected relu classifier with uniform +-1/sqrt(fan_in) init for both
// weights and biases, drawn row-major in layer order.
inline Network init_network(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                            std::size_t classes, Rng& rng) {
  if (input_dim == 0) throw std::invalid_argument("init_network: input dimension must be positive");
  if (classes < 2) throw std::invalid_argument("init_network: need at least two classes");
  for (std::size_t h : hidden)
    if (h == 0) throw std::invalid_argument("init_network: hidden layer of width zero");

  std::vector<std::size_t> dims;
  dims.reserve(hidden.size() + 2);
  dims.push_back(input_dim);
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(classes);

  std::vector<Layer> layers;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(dims[i]));
    Matrix w(dims[i + 1], dims[i]);
    for (double& v : w.data) v = rng.uniform(-bound, bound);
    Vector b(dims[i + 1]);
    for (double& v : b) v = rng.uniform(-bound, bound);
    layers.push_back(Layer::affine(std::move(w), std::move(b)));
    if (i + 2 < dims.size()) layers.push_back(Layer::relu());
  }
  return make_network(input_dim, std::move(layers));
}

inline void validate_labels(const Dataset& data, std::size_t classes) {
  for (std::size_t i = 0; i < data.labels.size(); ++i) {
    const int l = data.labels[i];
    if (l < 0 || static_cast<std::size_t>(l) >= classes)
      throw std::invalid_argument("training: label " + std::to_string(l) + " of example " +
                                  std::to_string(i) + " is outside the " + std::to_string(classes) +
                                  "-class range");
  }
}

inline TrainResult train_classifier(const Dataset& data, std::size_t classes, const TrainConfig& cfg) {
  validate_train_config(cfg);
  if (data.size() == 0) throw std::invalid_argument("training: empty dataset");
  validate_labels(data, classes);

  Rng rng(cfg.seed);
  TrainResult res;
  res.net = init_network(data.dim(), cfg.hidden, classes, rng);

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::vector<Matrix> sum_dw(res.net.layers.size());
  std::vector<Vector> sum_db(res.net.layers.size());

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, order.size() - start);
      for (std::size_t li = 0; li < res.net.layers.size(); ++li) {
        const Layer& l = res.net.layers[li];
        if (l.kind != LayerKind::affine) continue;
        sum_dw[li] = Matrix(l.w.rows, l.w.cols);
        sum_db[li] = Vector(l.b.size(), 0.0);
      }
      for (std::size_t k = 0; k < count; ++k) {
        const std::size_t idx = order[start + k];
        const ParameterGradients g = parameter_gradients(res.net, data.images[idx], data.labels[idx]);
        loss_sum += g.loss;
        for (std::size_t li = 0; li < res.net.layers.size(); ++li) {
          if (res.net.layers[li].kind != LayerKind::affine) continue;
          for (std::size_t t = 0; t < sum_dw[li].data.size(); ++t) sum_dw[li].data[t] += g.dw[li].data[t];
          for (std::size_t t = 0; t < sum_db[li].size(); ++t) sum_db[li][t] += g.db[li][t];
        }
      }
      const double step = cfg.learning_rate / static_cast<double>(count);
      for (std::size_t li = 0; li < res.net.layers.size(); ++li) {
        Layer& l = res.net.layers[li];
        if (l.kind != LayerKind::affine) continue;
        for (std::size_t t = 0; t < l.w.data.size(); ++t) l.w.data[t] -= step * sum_dw[li].data[t];
        for (std::size_t t = 0; t < l.b.size(); ++t) l.b[t] -= step * sum_db[li][t];
      }
    }
    res.epoch_losses.push_back(loss_sum / static_cast<double>(data.size()));
  }
  return res;
}

// Fraction of examples whose argmax matches the label.
inline double accuracy(const Network& net, const Dataset& data) {
  if (data.size() == 0) throw std::invalid_argument("accuracy: empty dataset");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (classify(net, data.images[i]) == data.labels[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

// Pool of independently seeded members: member i trains exactly like a
// single classifier with seed cfg.seed + i.
inline std::vector<TrainResult> train_pool(const Dataset& data, std::size_t classes,
                                           std::size_t members, const TrainConfig& cfg) {
  if (members == 0) throw std::invalid_argument("train_pool: need at least one member");
  std::vector<TrainResult> out;
  out.reserve(members);
  for (std::size_t i = 0; i < members; ++i) {
    TrainConfig c = cfg;
    c.seed = cfg.seed + i;
    out.push_back(train_classifier(data, classes, c));
  }
  return out;
}

}  // namespace ensel
