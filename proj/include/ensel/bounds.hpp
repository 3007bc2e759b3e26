#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "ensel/linalg.hpp"
#include "ensel/nn.hpp"

namespace ensel {

// Axis-aligned input region.
struct Box {
  Vector lo;
  Vector hi;

  std::size_t dim() const { return lo.size(); }
  bool contains(const Vector& x, double slack = 0.0) const {
    if (x.size() != lo.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i)
      if (x[i] < lo[i] - slack || x[i] > hi[i] + slack) return false;
    return true;
  }
  Vector clamp(Vector x) const {
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i] < lo[i]) x[i] = lo[i];
      if (x[i] > hi[i]) x[i] = hi[i];
    }
    return x;
  }
};

inline void validate_box(const Box& box) {
  if (box.lo.size() != box.hi.size()) throw std::invalid_argument("box: bound dimension mismatch");
  if (box.lo.empty()) throw std::invalid_argument("box: empty");
  for (std::size_t i = 0; i < box.lo.size(); ++i)
    if (box.lo[i] > box.hi[i]) throw std::invalid_argument("box: lower bound exceeds upper at coordinate " + std::to_string(i));
}

// Branch-and-bound phase state of one ReLU site.
enum class Phase : unsigned char { unknown, active, inactive };

// Network folded into alternating affine stages and relu blocks:
//   v0 = x; pre_k = stages[k](v_{k-1}); v_k = relu(pre_k)  for k < K;
//   y = stages[K](v_{K-1}..)  -- the last stage has no relu after it.
// Consecutive affine layers are composed; a leading relu gets an identity
// stage in front; a trailing relu gets an identity stage behind.
struct AffineStage {
  Matrix w;
  Vector b;
};

struct FoldedNetwork {
  std::size_t input_dim = 0;
  std::size_t output_dim = 0;
  std::vector<AffineStage> stages;        // relu blocks sit between consecutive stages
  std::vector<std::size_t> relu_offset;   // flat id of each relu block's first site
  std::size_t relu_total = 0;

  std::size_t relu_blocks() const { return stages.empty() ? 0 : stages.size() - 1; }
  std::size_t block_width(std::size_t k) const { return stages[k].w.rows; }
};

namespace detail {

inline AffineStage identity_stage(std::size_t dim) {
  AffineStage s;
  s.w = Matrix(dim, dim);
  for (std::size_t i = 0; i < dim; ++i) s.w.at(i, i) = 1.0;
  s.b = Vector(dim, 0.0);
  return s;
}

// second(first(x)) as one stage.
inline AffineStage compose_stages(const AffineStage& second, const AffineStage& first) {
  AffineStage out;
  out.w = matmul(second.w, first.w);
  out.b = matvec(second.w, first.b);
  for (std::size_t i = 0; i < out.b.size(); ++i) out.b[i] += second.b[i];
  return out;
}

}  // namespace detail

inline FoldedNetwork fold_network(const Network& net) {
  validate_network(net);
  FoldedNetwork f;
  f.input_dim = net.input_dim;
  f.output_dim = net.output_dim;

  AffineStage current = detail::identity_stage(net.input_dim);
  std::size_t dim = net.input_dim;
  for (const Layer& l : net.layers) {
    if (l.kind == LayerKind::affine) {
      current = detail::compose_stages(AffineStage{l.w, l.b}, current);
      dim = l.w.rows;
    } else {
      f.stages.push_back(std::move(current));
      current = detail::identity_stage(dim);
    }
  }
  f.stages.push_back(std::move(current));

  f.relu_offset.resize(f.relu_blocks());
  std::size_t off = 0;
  for (std::size_t k = 0; k < f.relu_blocks(); ++k) {
    f.relu_offset[k] = off;
    off += f.block_width(k);
  }
  f.relu_total = off;
  return f;
}

// Per-site concretized bounds. pre holds the phase-clipped pre-activation
// range, post the range after the (possibly forced) relu. A forced phase that
// contradicts the bounds marks the whole region empty.
struct BoundsResult {
  Vector pre_lo, pre_hi;
  Vector post_lo, post_hi;
  Vector out_lo, out_hi;
  bool empty = false;
};

namespace detail {

// Applies the relu/phase clamp for one site. Returns false when the forced
// phase is impossible on [lo, hi].
inline bool clamp_site(Phase phase, double& lo, double& hi, double& post_lo, double& post_hi) {
  switch (phase) {
    case Phase::active:
      if (hi < 0.0) return false;
      lo = std::max(lo, 0.0);
      post_lo = lo;
      post_hi = hi;
      return true;
    case Phase::inactive:
      if (lo > 0.0) return false;
      hi = std::min(hi, 0.0);
      post_lo = 0.0;
      post_hi = 0.0;
      return true;
    case Phase::unknown:
    default:
      post_lo = std::max(lo, 0.0);
      post_hi = std::max(hi, 0.0);
      return true;
  }
}

}  // namespace detail

// Signed-coefficient interval propagation through the folded network.
// phases may be null (all unknown) or hold one Phase per relu site.
inline BoundsResult interval_bounds(const FoldedNetwork& f, const Box& box,
                                    const std::vector<Phase>* phases = nullptr) {
  validate_box(box);
  if (box.dim() != f.input_dim) throw std::invalid_argument("interval_bounds: box dimension mismatch");
  if (phases && phases->size() != f.relu_total)
    throw std::invalid_argument("interval_bounds: phase vector size mismatch");

  BoundsResult r;
  r.pre_lo.resize(f.relu_total);
  r.pre_hi.resize(f.relu_total);
  r.post_lo.resize(f.relu_total);
  r.post_hi.resize(f.relu_total);

  Vector lo = box.lo, hi = box.hi;
  for (std::size_t k = 0; k < f.stages.size(); ++k) {
    const AffineStage& s = f.stages[k];
    Vector nlo(s.w.rows), nhi(s.w.rows);
    for (std::size_t i = 0; i < s.w.rows; ++i) {
      double a = s.b[i], b = s.b[i];
      const double* row = s.w.row(i);
      for (std::size_t j = 0; j < s.w.cols; ++j) {
        const double w = row[j];
        if (w >= 0.0) {
          a += w * lo[j];
          b += w * hi[j];
        } else {
          a += w * hi[j];
          b += w * lo[j];
        }
      }
      nlo[i] = a;
      nhi[i] = b;
    }
    if (k + 1 == f.stages.size()) {
      r.out_lo = std::move(nlo);
      r.out_hi = std::move(nhi);
      break;
    }
    const std::size_t base = f.relu_offset[k];
    lo.resize(s.w.rows);
    hi.resize(s.w.rows);
    for (std::size_t i = 0; i < s.w.rows; ++i) {
      const Phase ph = phases ? (*phases)[base + i] : Phase::unknown;
      double plo = nlo[i], phi = nhi[i], qlo = 0.0, qhi = 0.0;
      if (!detail::clamp_site(ph, plo, phi, qlo, qhi)) {
        r.empty = true;
        return r;
      }
      r.pre_lo[base + i] = plo;
      r.pre_hi[base + i] = phi;
      r.post_lo[base + i] = qlo;
      r.post_hi[base + i] = qhi;
      lo[i] = qlo;
      hi[i] = qhi;
    }
  }
  return r;
}

inline BoundsResult interval_bounds(const Network& net, const Box& box) {
  return interval_bounds(fold_network(net), box);
}

// One linear form over the input variables: w . x + c.
struct SymbolicForm {
  Vector w;
  double c = 0.0;
};

inline double concretize_low(const SymbolicForm& form, const Box& box) {
  double v = form.c;
  for (std::size_t i = 0; i < form.w.size(); ++i)
    v += form.w[i] >= 0.0 ? form.w[i] * box.lo[i] : form.w[i] * box.hi[i];
  return v;
}

inline double concretize_high(const SymbolicForm& form, const Box& box) {
  double v = form.c;
  for (std::size_t i = 0; i < form.w.size(); ++i)
    v += form.w[i] >= 0.0 ? form.w[i] * box.hi[i] : form.w[i] * box.lo[i];
  return v;
}

struct SymbolicResult {
  // Linear envelopes of each relu site's pre-activation and of each output.
  std::vector<SymbolicForm> pre_low, pre_high;
  std::vector<SymbolicForm> out_low, out_high;
  Vector pre_lo, pre_hi;    // concretized, phase-clipped
  Vector post_lo, post_hi;  // concretized, clipped at zero
  Vector out_lo, out_hi;
  bool empty = false;
};

// Symbolic bound propagation with the standard triangle relaxation: an
// unstable site's upper envelope is the chord of relu over [l, u]; the lower
// envelope keeps the pre-activation form when u > -l and drops to zero
// otherwise. Stable and forced sites pass through exactly. Concrete interval
// bounds ride along and every concretization intersects with them, so the
// result is never looser than plain interval propagation.
inline SymbolicResult symbolic_bounds(const FoldedNetwork& f, const Box& box,
                                      const std::vector<Phase>* phases = nullptr) {
  validate_box(box);
  if (box.dim() != f.input_dim) throw std::invalid_argument("symbolic_bounds: box dimension mismatch");
  if (phases && phases->size() != f.relu_total)
    throw std::invalid_argument("symbolic_bounds: phase vector size mismatch");

  SymbolicResult r;
  r.pre_low.resize(f.relu_total);
  r.pre_high.resize(f.relu_total);
  r.pre_lo.resize(f.relu_total);
  r.pre_hi.resize(f.relu_total);
  r.post_lo.resize(f.relu_total);
  r.post_hi.resize(f.relu_total);

  const std::size_t d = f.input_dim;
  std::vector<SymbolicForm> low(d), high(d);
  for (std::size_t i = 0; i < d; ++i) {
    low[i].w = Vector(d, 0.0);
    low[i].w[i] = 1.0;
    high[i] = low[i];
  }
  Vector run_lo = box.lo, run_hi = box.hi;  // concrete companion bounds

  auto affine_combine = [&](const AffineStage& s, const std::vector<SymbolicForm>& lo_in,
                            const std::vector<SymbolicForm>& hi_in, std::vector<SymbolicForm>& lo_out,
                            std::vector<SymbolicForm>& hi_out) {
    lo_out.assign(s.w.rows, SymbolicForm{Vector(d, 0.0), 0.0});
    hi_out.assign(s.w.rows, SymbolicForm{Vector(d, 0.0), 0.0});
    for (std::size_t i = 0; i < s.w.rows; ++i) {
      SymbolicForm& flo = lo_out[i];
      SymbolicForm& fhi = hi_out[i];
      flo.c = fhi.c = s.b[i];
      const double* row = s.w.row(i);
      for (std::size_t j = 0; j < s.w.cols; ++j) {
        const double w = row[j];
        if (w == 0.0) continue;
        const SymbolicForm& pick_lo = w > 0.0 ? lo_in[j] : hi_in[j];
        const SymbolicForm& pick_hi = w > 0.0 ? hi_in[j] : lo_in[j];
        for (std::size_t t = 0; t < d; ++t) {
          flo.w[t] += w * pick_lo.w[t];
          fhi.w[t] += w * pick_hi.w[t];
        }
        flo.c += w * pick_lo.c;
        fhi.c += w * pick_hi.c;
      }
    }
  };

  auto interval_step = [](const AffineStage& s, const Vector& vlo, const Vector& vhi, std::size_t i) {
    double a = s.b[i], b = s.b[i];
    const double* row = s.w.row(i);
    for (std::size_t j = 0; j < s.w.cols; ++j) {
      const double w = row[j];
      if (w >= 0.0) {
        a += w * vlo[j];
        b += w * vhi[j];
      } else {
        a += w * vhi[j];
        b += w * vlo[j];
      }
    }
    return std::pair<double, double>{a, b};
  };

  for (std::size_t k = 0; k < f.stages.size(); ++k) {
    std::vector<SymbolicForm> plow, phigh;
    affine_combine(f.stages[k], low, high, plow, phigh);
    if (k + 1 == f.stages.size()) {
      r.out_low = std::move(plow);
      r.out_high = std::move(phigh);
      break;
    }
    const std::size_t base = f.relu_offset[k];
    const std::size_t width = f.block_width(k);
    low.assign(width, {});
    high.assign(width, {});
    Vector next_lo(width), next_hi(width);
    for (std::size_t i = 0; i < width; ++i) {
      const std::size_t site = base + i;
      double l = concretize_low(plow[i], box);
      double u = concretize_high(phigh[i], box);
      const auto [il, iu] = interval_step(f.stages[k], run_lo, run_hi, i);
      if (il > l && il <= u) l = il;
      if (iu < u && iu >= l) u = iu;
      const Phase ph = phases ? (*phases)[site] : Phase::unknown;

      r.pre_low[site] = plow[i];
      r.pre_high[site] = phigh[i];

      if (ph == Phase::active) {
        if (u < 0.0) {
          r.empty = true;
          return r;
        }
        l = std::max(l, 0.0);
        low[i] = plow[i];
        high[i] = phigh[i];
      } else if (ph == Phase::inactive) {
        if (l > 0.0) {
          r.empty = true;
          return r;
        }
        u = std::min(u, 0.0);
        low[i] = SymbolicForm{Vector(d, 0.0), 0.0};
        high[i] = low[i];
      } else if (l >= 0.0) {
        low[i] = plow[i];
        high[i] = phigh[i];
      } else if (u <= 0.0) {
        low[i] = SymbolicForm{Vector(d, 0.0), 0.0};
        high[i] = low[i];
      } else {
        // Unstable: chord above, identity-or-zero below.
        const double slope = u / (u - l);
        SymbolicForm upper = phigh[i];
        for (double& wv : upper.w) wv *= slope;
        upper.c = slope * (upper.c - l);
        high[i] = std::move(upper);
        if (u > -l)
          low[i] = plow[i];
        else
          low[i] = SymbolicForm{Vector(d, 0.0), 0.0};
      }

      r.pre_lo[site] = l;
      r.pre_hi[site] = u;
      double post_l = ph == Phase::inactive ? 0.0 : std::max(concretize_low(low[i], box), 0.0);
      double post_u = ph == Phase::inactive ? 0.0 : concretize_high(high[i], box);
      if (post_u < 0.0) post_u = 0.0;
      // Exact relu image of the (phase-clipped) pre interval, as the concrete fallback.
      const double exact_post_l = ph == Phase::inactive ? 0.0 : std::max(l, 0.0);
      const double exact_post_u = ph == Phase::inactive ? 0.0 : std::max(u, 0.0);
      if (exact_post_l > post_l) post_l = exact_post_l;
      if (exact_post_u < post_u) post_u = exact_post_u;
      r.post_lo[site] = post_l;
      r.post_hi[site] = std::max(post_u, post_l);
      next_lo[i] = r.post_lo[site];
      next_hi[i] = r.post_hi[site];
    }
    run_lo = std::move(next_lo);
    run_hi = std::move(next_hi);
  }

  r.out_lo.resize(f.output_dim);
  r.out_hi.resize(f.output_dim);
  for (std::size_t i = 0; i < f.output_dim; ++i) {
    double l = concretize_low(r.out_low[i], box);
    double u = concretize_high(r.out_high[i], box);
    const auto [il, iu] = interval_step(f.stages.back(), run_lo, run_hi, i);
    if (il > l && il <= u) l = il;
    if (iu < u && iu >= l) u = iu;
    r.out_lo[i] = l;
    r.out_hi[i] = u;
  }
  return r;
}

inline SymbolicResult symbolic_bounds(const Network& net, const Box& box) {
  return symbolic_bounds(fold_network(net), box);
}

}  // namespace ensel
