#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ensel/nn.hpp"

namespace ensel {

// A network assembled from members, with bookkeeping for which slice of the
// output vector (side-by-side) belongs to which member. For averaging
// composites the output is the ensemble logit vector itself and a single
// slice covers it.
struct CompositeNetwork {
  Network net;
  std::vector<std::pair<std::size_t, std::size_t>> output_slices;  // (offset, length) per member
  std::size_t member_count = 0;
};

namespace detail {

inline void check_composable(const std::vector<const Network*>& members) {
  if (members.size() < 2) throw std::invalid_argument("compose: need at least two members");
  const Network& first = *members[0];
  for (std::size_t i = 1; i < members.size(); ++i) {
    const Network& m = *members[i];
    if (m.input_dim != first.input_dim)
      throw std::invalid_argument("compose: member " + std::to_string(i) + " input dimension " +
                                  std::to_string(m.input_dim) + " differs from " +
                                  std::to_string(first.input_dim));
    if (m.layers.size() != first.layers.size())
      throw std::invalid_argument("compose: member " + std::to_string(i) + " has " +
                                  std::to_string(m.layers.size()) + " layers, expected " +
                                  std::to_string(first.layers.size()) + "; differing depths are not supported");
    for (std::size_t l = 0; l < m.layers.size(); ++l)
      if (m.layers[l].kind != first.layers[l].kind)
        throw std::invalid_argument("compose: member " + std::to_string(i) + " layer " + std::to_string(l) +
                                    " kind differs; layer-type sequences must match");
  }
  bool has_affine = false;
  for (const Layer& l : first.layers)
    if (l.kind == LayerKind::affine) has_affine = true;
  if (!has_affine) throw std::invalid_argument("compose: members need at least one affine layer");
}

}  // namespace detail

// Runs all members on the same input; outputs are concatenated in member
// order. Affine layers merge block-diagonally, so each member's computation
// stays exactly the member's own.
inline CompositeNetwork compose_side_by_side(const std::vector<const Network*>& members) {
  detail::check_composable(members);
  for (const Network* m : members) validate_network(*m);

  CompositeNetwork comp;
  comp.member_count = members.size();
  comp.net.input_dim = members[0]->input_dim;

  const std::size_t layer_count = members[0]->layers.size();
  // Width of each member's value vector entering layer l.
  std::vector<std::size_t> dims(members.size());
  for (std::size_t i = 0; i < members.size(); ++i) dims[i] = members[i]->input_dim;

  // The value vector stays the shared input until the first affine layer
  // runs; only after that is it a concatenation of per-member blocks.
  bool concatenated = false;
  for (std::size_t l = 0; l < layer_count; ++l) {
    if (members[0]->layers[l].kind == LayerKind::relu) {
      comp.net.layers.push_back(Layer::relu());
      continue;
    }
    std::size_t total_rows = 0, total_cols = 0;
    for (std::size_t i = 0; i < members.size(); ++i) {
      total_rows += members[i]->layers[l].w.rows;
      total_cols += dims[i];
    }
    const bool reads_input = !concatenated;
    const std::size_t in_cols = reads_input ? comp.net.input_dim : total_cols;
    Matrix w(total_rows, in_cols);
    Vector b(total_rows);
    std::size_t row_off = 0, col_off = 0;
    for (std::size_t i = 0; i < members.size(); ++i) {
      const Matrix& mw = members[i]->layers[l].w;
      const Vector& mb = members[i]->layers[l].b;
      const std::size_t base_col = reads_input ? 0 : col_off;
      for (std::size_t r = 0; r < mw.rows; ++r)
        for (std::size_t c = 0; c < mw.cols; ++c) w.at(row_off + r, base_col + c) = mw.at(r, c);
      for (std::size_t r = 0; r < mw.rows; ++r) b[row_off + r] = mb[r];
      row_off += mw.rows;
      col_off += dims[i];
      dims[i] = mw.rows;
    }
    comp.net.layers.push_back(Layer::affine(std::move(w), std::move(b)));
    concatenated = true;
  }

  std::size_t off = 0;
  for (std::size_t i = 0; i < members.size(); ++i) {
    const std::size_t len = dims[i];
    comp.output_slices.emplace_back(off, len);
    off += len;
  }
  comp.net.output_dim = off;
  validate_network(comp.net);
  return comp;
}

inline CompositeNetwork compose_side_by_side(const std::vector<Network>& members) {
  std::vector<const Network*> ptrs;
  ptrs.reserve(members.size());
  for (const Network& m : members) ptrs.push_back(&m);
  return compose_side_by_side(ptrs);
}

inline CompositeNetwork pair_composite(const Network& a, const Network& b) {
  return compose_side_by_side(std::vector<const Network*>{&a, &b});
}

// Side-by-side composition followed by one affine layer that averages the
// member logits: weights exactly 1/k, bias exactly zero.
inline CompositeNetwork compose_average_ensemble(const std::vector<const Network*>& members) {
  CompositeNetwork comp = compose_side_by_side(members);
  const std::size_t r = comp.output_slices[0].second;
  for (const auto& slice : comp.output_slices)
    if (slice.second != r)
      throw std::invalid_argument("compose_average_ensemble: members must share the output dimension");

  const double inv_k = 1.0 / static_cast<double>(members.size());
  Matrix w(r, comp.net.output_dim);
  for (std::size_t i = 0; i < members.size(); ++i)
    for (std::size_t j = 0; j < r; ++j) w.at(j, comp.output_slices[i].first + j) = inv_k;
  comp.net.layers.push_back(Layer::affine(std::move(w), Vector(r, 0.0)));
  comp.net.output_dim = r;
  comp.output_slices.assign(1, {0, r});
  validate_network(comp.net);
  return comp;
}

inline CompositeNetwork compose_average_ensemble(const std::vector<Network>& members) {
  std::vector<const Network*> ptrs;
  ptrs.reserve(members.size());
  for (const Network& m : members) ptrs.push_back(&m);
  return compose_average_ensemble(ptrs);
}

}  // namespace ensel
