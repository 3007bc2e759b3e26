#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ensel/linalg.hpp"
#include "ensel/text.hpp"

namespace ensel {

enum class LayerKind { affine, relu };

struct Layer {
  LayerKind kind = LayerKind::relu;
  Matrix w;  // affine only
  Vector b;  // affine only

  static Layer affine(Matrix w, Vector b) {
    if (b.size() != w.rows) throw std::invalid_argument("Layer::affine: bias size does not match rows");
    Layer l;
    l.kind = LayerKind::affine;
    l.w = std::move(w);
    l.b = std::move(b);
    return l;
  }
  static Layer relu() { return Layer{}; }
};

// Feed-forward network: an arbitrary sequence of affine and ReLU layers.
// Stored weights always end at the logits; softmax exists only inside the
// training loss.
struct Network {
  std::size_t input_dim = 0;
  std::size_t output_dim = 0;
  std::vector<Layer> layers;
};

inline void validate_network(const Network& net) {
  if (net.input_dim == 0) throw std::invalid_argument("network: input_dim must be positive");
  if (net.output_dim == 0) throw std::invalid_argument("network: output_dim must be positive");
  std::size_t dim = net.input_dim;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const Layer& l = net.layers[i];
    if (l.kind == LayerKind::affine) {
      if (l.w.cols != dim)
        throw std::invalid_argument("network: layer " + std::to_string(i) + " expects input of size " +
                                    std::to_string(l.w.cols) + ", got " + std::to_string(dim));
      if (l.b.size() != l.w.rows)
        throw std::invalid_argument("network: layer " + std::to_string(i) + " bias size mismatch");
      dim = l.w.rows;
    }
  }
  if (dim != net.output_dim)
    throw std::invalid_argument("network: layers produce dimension " + std::to_string(dim) +
                                " but output_dim is " + std::to_string(net.output_dim));
}

inline Network make_network(std::size_t input_dim, std::vector<Layer> layers) {
  Network net;
  net.input_dim = input_dim;
  net.layers = std::move(layers);
  std::size_t dim = input_dim;
  for (const Layer& l : net.layers)
    if (l.kind == LayerKind::affine) dim = l.w.rows;
  net.output_dim = dim;
  validate_network(net);
  return net;
}

// Total number of ReLU application sites (one per neuron per ReLU layer).
inline std::size_t relu_count(const Network& net) {
  std::size_t dim = net.input_dim;
  std::size_t count = 0;
  for (const Layer& l : net.layers) {
    if (l.kind == LayerKind::affine)
      dim = l.w.rows;
    else
      count += dim;
  }
  return count;
}

// values[0] is the input; values[i + 1] is the output of layers[i].
struct ActivationTrace {
  std::vector<Vector> values;
  const Vector& output() const { return values.back(); }
};

inline ActivationTrace forward_trace(const Network& net, const Vector& x) {
  if (x.size() != net.input_dim) throw std::invalid_argument("forward: input dimension mismatch");
  ActivationTrace trace;
  trace.values.reserve(net.layers.size() + 1);
  trace.values.push_back(x);
  for (const Layer& l : net.layers) {
    const Vector& in = trace.values.back();
    if (l.kind == LayerKind::affine) {
      Vector out = matvec(l.w, in);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] += l.b[i];
      trace.values.push_back(std::move(out));
    } else {
      Vector out = in;
      for (double& v : out)
        if (v < 0.0) v = 0.0;
      trace.values.push_back(std::move(out));
    }
  }
  return trace;
}

inline Vector forward(const Network& net, const Vector& x) { return forward_trace(net, x).output(); }

inline int argmax_lowest(const Vector& v) {
  if (v.empty()) throw std::invalid_argument("argmax: empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return static_cast<int>(best);
}

// Second place under the same ordering as argmax_lowest: sort by value
// descending, index ascending.
inline int runner_up_label(const Vector& v) {
  if (v.size() < 2) throw std::invalid_argument("runner_up: need at least two outputs");
  const std::size_t top = static_cast<std::size_t>(argmax_lowest(v));
  std::size_t second = top == 0 ? 1 : 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i == top) continue;
    if (v[i] > v[second] || (v[i] == v[second] && i < second)) second = i;
  }
  return static_cast<int>(second);
}

inline int classify(const Network& net, const Vector& x) { return argmax_lowest(forward(net, x)); }

// d(c . N(x)) / dx. ReLU uses subgradient 0 at exactly 0.
inline Vector input_gradient(const Network& net, const Vector& x, const Vector& c) {
  if (c.size() != net.output_dim) throw std::invalid_argument("input_gradient: functional dimension mismatch");
  const ActivationTrace trace = forward_trace(net, x);
  Vector delta = c;
  for (std::size_t i = net.layers.size(); i > 0; --i) {
    const Layer& l = net.layers[i - 1];
    const Vector& in = trace.values[i - 1];
    if (l.kind == LayerKind::affine) {
      Vector prev(l.w.cols, 0.0);
      for (std::size_t r = 0; r < l.w.rows; ++r) {
        const double d = delta[r];
        if (d == 0.0) continue;
        const double* row = l.w.row(r);
        for (std::size_t cidx = 0; cidx < l.w.cols; ++cidx) prev[cidx] += d * row[cidx];
      }
      delta = std::move(prev);
    } else {
      for (std::size_t j = 0; j < delta.size(); ++j)
        if (in[j] <= 0.0) delta[j] = 0.0;
    }
  }
  return delta;
}

inline Vector softmax(const Vector& logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  Vector p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

inline double cross_entropy_loss(const Vector& logits, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size())
    throw std::invalid_argument("cross_entropy_loss: label out of range");
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (const double v : logits) sum += std::exp(v - m);
  return -(logits[static_cast<std::size_t>(label)] - m) + std::log(sum);
}

// Gradients of the softmax cross-entropy loss for one sample, per layer.
// dw/db entries for ReLU layers stay empty.
struct ParameterGradients {
  double loss = 0.0;
  std::vector<Matrix> dw;
  std::vector<Vector> db;
};

inline ParameterGradients parameter_gradients(const Network& net, const Vector& x, int label) {
  const ActivationTrace trace = forward_trace(net, x);
  const Vector& logits = trace.output();
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size())
    throw std::invalid_argument("parameter_gradients: label out of range");

  ParameterGradients g;
  g.loss = cross_entropy_loss(logits, label);
  g.dw.resize(net.layers.size());
  g.db.resize(net.layers.size());

  Vector delta = softmax(logits);
  delta[static_cast<std::size_t>(label)] -= 1.0;

  for (std::size_t i = net.layers.size(); i > 0; --i) {
    const Layer& l = net.layers[i - 1];
    const Vector& in = trace.values[i - 1];
    if (l.kind == LayerKind::affine) {
      Matrix dw(l.w.rows, l.w.cols);
      for (std::size_t r = 0; r < l.w.rows; ++r)
        for (std::size_t cidx = 0; cidx < l.w.cols; ++cidx) dw.at(r, cidx) = delta[r] * in[cidx];
      g.dw[i - 1] = std::move(dw);
      g.db[i - 1] = delta;
      Vector prev(l.w.cols, 0.0);
      for (std::size_t r = 0; r < l.w.rows; ++r) {
        const double d = delta[r];
        if (d == 0.0) continue;
        const double* row = l.w.row(r);
        for (std::size_t cidx = 0; cidx < l.w.cols; ++cidx) prev[cidx] += d * row[cidx];
      }
      delta = std::move(prev);
    } else {
      for (std::size_t j = 0; j < delta.size(); ++j)
        if (in[j] <= 0.0) delta[j] = 0.0;
    }
  }
  return g;
}

// Text format:
//   nn v1 <input_dim> <output_dim> <layer_count>
//   affine <out_dim> <in_dim>
//   <out_dim weight rows, one per line>
//   <bias row>
//   relu
// Weights use the shortest decimal form that round-trips exactly.
inline void save_network(const Network& net, std::ostream& out) {
  validate_network(net);
  out << "nn v1 " << net.input_dim << ' ' << net.output_dim << ' ' << net.layers.size() << '\n';
  for (const Layer& l : net.layers) {
    if (l.kind == LayerKind::relu) {
      out << "relu\n";
      continue;
    }
    out << "affine " << l.w.rows << ' ' << l.w.cols << '\n';
    for (std::size_t r = 0; r < l.w.rows; ++r) {
      for (std::size_t c = 0; c < l.w.cols; ++c) {
        if (c) out << ' ';
        out << format_double(l.w.at(r, c));
      }
      out << '\n';
    }
    for (std::size_t c = 0; c < l.b.size(); ++c) {
      if (c) out << ' ';
      out << format_double(l.b[c]);
    }
    out << '\n';
  }
}

inline void save_network(const Network& net, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_network: cannot open " + path);
  save_network(net, out);
  if (!out) throw std::runtime_error("save_network: write failed for " + path);
}

inline Network load_network(std::istream& in, const std::string& origin = "<stream>") {
  TokenReader reader(in);
  const std::string ctx = "network '" + origin + "'";
  const std::string magic = reader.word(ctx + " header");
  const std::string version = reader.word(ctx + " header");
  if (magic != "nn" || version != "v1")
    throw std::runtime_error(ctx + ": bad header, expected 'nn v1', got '" + magic + " " + version + "'");
  Network net;
  net.input_dim = reader.count(ctx + " input_dim");
  net.output_dim = reader.count(ctx + " output_dim");
  const std::size_t layer_count = reader.count(ctx + " layer_count");
  for (std::size_t i = 0; i < layer_count; ++i) {
    const std::string lctx = ctx + " layer " + std::to_string(i);
    const std::string kind = reader.word(lctx + " kind");
    if (kind == "relu") {
      net.layers.push_back(Layer::relu());
    } else if (kind == "affine") {
      const std::size_t rows = reader.count(lctx + " rows");
      const std::size_t cols = reader.count(lctx + " cols");
      if (rows == 0 || cols == 0) throw std::runtime_error(lctx + ": empty affine layer");
      Matrix w(rows, cols);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) w.at(r, c) = reader.number(lctx + " weights");
      Vector b(rows);
      for (std::size_t r = 0; r < rows; ++r) b[r] = reader.number(lctx + " bias");
      net.layers.push_back(Layer::affine(std::move(w), std::move(b)));
    } else {
      throw std::runtime_error(lctx + ": unknown layer kind '" + kind + "'");
    }
  }
  if (!reader.at_end()) throw std::runtime_error(ctx + ": trailing content after last layer");
  validate_network(net);
  return net;
}

inline Network load_network(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_network: cannot open " + path);
  return load_network(in, path);
}

}  // namespace ensel
