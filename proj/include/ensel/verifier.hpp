#pragma once

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ensel/bounds.hpp"
#include "ensel/composition.hpp"
#include "ensel/linalg.hpp"
#include "ensel/lp.hpp"
#include "ensel/nn.hpp"

namespace ensel {

// One linear condition over the network outputs: coeffs . y >= 0.
// When the condition states "label adv beats label ref" the tie rule mirrors
// classify(): an exact tie counts only when adv wins the argmax tie-break,
// i.e. adv < ref. Without a label pair, ties satisfy.
struct LinearConstraint {
  std::vector<std::pair<std::size_t, double>> terms;  // sparse over outputs
  bool has_label_pair = false;
  std::size_t adv = 0;
  std::size_t ref = 0;

  static LinearConstraint label_pair(std::size_t adv, std::size_t ref) {
    LinearConstraint c;
    c.terms = {{adv, 1.0}, {ref, -1.0}};
    c.has_label_pair = true;
    c.adv = adv;
    c.ref = ref;
    return c;
  }
};

inline bool constraint_satisfied(const LinearConstraint& c, const Vector& y) {
  const double v = sparse_dot(c.terms, y);
  if (v > 0.0) return true;
  if (v < 0.0) return false;
  return !c.has_label_pair || c.adv < c.ref;
}

// Disjunction of conjunctions over the exact network outputs.
struct Postcondition {
  std::vector<std::vector<LinearConstraint>> conjuncts;
};

inline bool conjunct_satisfied(const std::vector<LinearConstraint>& conjunct, const Vector& y) {
  for (const LinearConstraint& c : conjunct)
    if (!constraint_satisfied(c, y)) return false;
  return true;
}

inline bool postcondition_satisfied(const Postcondition& post, const Vector& y) {
  for (const auto& conj : post.conjuncts)
    if (conjunct_satisfied(conj, y)) return true;
  return false;
}

inline void validate_postcondition(const Postcondition& post, std::size_t output_dim) {
  if (post.conjuncts.empty()) throw std::invalid_argument("postcondition: no conjuncts");
  for (const auto& conj : post.conjuncts) {
    if (conj.empty()) throw std::invalid_argument("postcondition: empty conjunct");
    for (const LinearConstraint& c : conj) {
      if (c.terms.empty()) throw std::invalid_argument("postcondition: constraint with no terms");
      for (const auto& [idx, w] : c.terms) {
        (void)w;
        if (idx >= output_dim)
          throw std::invalid_argument("postcondition: output index " + std::to_string(idx) +
                                      " out of range for " + std::to_string(output_dim) + " outputs");
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Query encodings
// ---------------------------------------------------------------------------

enum class QueryMode { full, runner_up };

inline std::string query_mode_name(QueryMode m) { return m == QueryMode::full ? "full" : "runner_up"; }

inline QueryMode parse_query_mode(const std::string& s) {
  if (s == "full") return QueryMode::full;
  if (s == "runner_up") return QueryMode::runner_up;
  throw std::invalid_argument("unknown query mode '" + s + "' (expected full or runner_up)");
}

// A solver-ready question: does some point of `region` drive `network`'s
// exact outputs into `post`?
struct VerificationQuery {
  Network network;
  Box region;
  Postcondition post;
  Vector origin;  // the center the ball was grown from
  double epsilon = 0.0;
  QueryMode mode = QueryMode::full;
  int label = 0;  // classification being contradicted
};

// The l-inf ball of radius eps around x0, optionally intersected with the
// unit hypercube (pixel domain).
inline Box epsilon_ball(const Vector& x0, double eps, bool clip_unit = true) {
  if (!(eps > 0.0)) throw std::invalid_argument("epsilon_ball: radius must be positive");
  if (x0.empty()) throw std::invalid_argument("epsilon_ball: empty center");
  Box b;
  b.lo.resize(x0.size());
  b.hi.resize(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) {
    double lo = x0[i] - eps;
    double hi = x0[i] + eps;
    if (clip_unit) {
      lo = std::max(lo, 0.0);
      hi = std::min(hi, 1.0);
    }
    if (lo > hi)
      throw std::invalid_argument("epsilon_ball: ball misses the unit domain at coordinate " + std::to_string(i));
    b.lo[i] = lo;
    b.hi[i] = hi;
  }
  return b;
}

// Adversarial-example search for one classifier: SAT means some point of the
// ball is classified differently from `label`. In full mode every wrong label
// gets its own conjunct; in runner_up mode only the runner-up label at x0 is
// tried (an under-approximation that can only miss, never invent, errors).
inline VerificationQuery encode_robustness_query(const Network& net, const Vector& x0, int label,
                                                 double eps, QueryMode mode, bool clip_unit = true) {
  validate_network(net);
  if (x0.size() != net.input_dim) throw std::invalid_argument("robustness query: center dimension mismatch");
  if (net.output_dim < 2) throw std::invalid_argument("robustness query: need at least two classes");
  if (label < 0 || static_cast<std::size_t>(label) >= net.output_dim)
    throw std::invalid_argument("robustness query: label out of range");
  if (classify(net, x0) != label)
    throw std::invalid_argument("robustness query: center is not classified with the stated label");

  VerificationQuery q;
  q.network = net;
  q.region = epsilon_ball(x0, eps, clip_unit);
  q.origin = x0;
  q.epsilon = eps;
  q.mode = mode;
  q.label = label;

  const std::size_t l = static_cast<std::size_t>(label);
  if (mode == QueryMode::full) {
    for (std::size_t i = 0; i < net.output_dim; ++i)
      if (i != l) q.post.conjuncts.push_back({LinearConstraint::label_pair(i, l)});
  } else {
    const std::size_t u = static_cast<std::size_t>(runner_up_label(forward(net, x0)));
    q.post.conjuncts.push_back({LinearConstraint::label_pair(u, l)});
  }
  return q;
}

// Mutual-error search for a pair: SAT means some point of the ball around an
// agreement point is misclassified by BOTH members (any wrong labels in full
// mode; their respective runner-up labels at x0 in runner_up mode). The pair
// is analysed as one side-by-side composite so a single verdict covers both.
inline VerificationQuery encode_mutual_error_query(const Network& a, const Network& b, const Vector& x0,
                                                   double eps, QueryMode mode, bool clip_unit = true) {
  if (a.output_dim != b.output_dim)
    throw std::invalid_argument("mutual error query: members have different label counts");
  if (a.output_dim < 2) throw std::invalid_argument("mutual error query: need at least two classes");
  const int la = classify(a, x0);
  const int lb = classify(b, x0);
  if (la != lb)
    throw std::invalid_argument("mutual error query: members disagree at the center point (" +
                                std::to_string(la) + " vs " + std::to_string(lb) + ")");

  CompositeNetwork comp = pair_composite(a, b);
  const std::size_t off_a = comp.output_slices[0].first;
  const std::size_t off_b = comp.output_slices[1].first;
  const std::size_t r = a.output_dim;
  const std::size_t l = static_cast<std::size_t>(la);

  VerificationQuery q;
  q.network = std::move(comp.net);
  q.region = epsilon_ball(x0, eps, clip_unit);
  q.origin = x0;
  q.epsilon = eps;
  q.mode = mode;
  q.label = la;

  if (mode == QueryMode::full) {
    for (std::size_t i = 0; i < r; ++i) {
      if (i == l) continue;
      for (std::size_t j = 0; j < r; ++j) {
        if (j == l) continue;
        q.post.conjuncts.push_back({LinearConstraint::label_pair(off_a + i, off_a + l),
                                    LinearConstraint::label_pair(off_b + j, off_b + l)});
      }
    }
  } else {
    const std::size_t ua = static_cast<std::size_t>(runner_up_label(forward(a, x0)));
    const std::size_t ub = static_cast<std::size_t>(runner_up_label(forward(b, x0)));
    q.post.conjuncts.push_back({LinearConstraint::label_pair(off_a + ua, off_a + l),
                                LinearConstraint::label_pair(off_b + ub, off_b + l)});
  }
  return q;
}

// ---------------------------------------------------------------------------
// Complete solver: branch and bound over relu phases
// ---------------------------------------------------------------------------

enum class VerdictStatus { sat, unsat, timeout };

inline std::string verdict_name(VerdictStatus s) {
  switch (s) {
    case VerdictStatus::sat: return "sat";
    case VerdictStatus::unsat: return "unsat";
    default: return "timeout";
  }
}

struct SolveStats {
  std::size_t nodes = 0;
  std::size_t lp_calls = 0;
  double wall_ms = 0.0;
};

struct SolveConfig {
  double timeout_seconds = 300.0;  // <= 0 disables the clock
  std::size_t max_nodes = 0;       // 0 disables the cap
};

struct Verdict {
  VerdictStatus status = VerdictStatus::unsat;
  Vector witness;  // a point of the region, set when status == sat
  SolveStats stats;
};

namespace detail {

constexpr double kMarginCap = 1e9;

// Working per-node bounds: the intersection of interval and symbolic
// propagation under the node's forced phases. A crossing deeper than the
// round-off slack means the region holds no real point.
struct NodeBounds {
  Vector pre_lo, pre_hi;
  Vector out_lo, out_hi;
  bool empty = false;
};

inline bool intersect_interval(double& lo, double& hi, double other_lo, double other_hi) {
  lo = std::max(lo, other_lo);
  hi = std::min(hi, other_hi);
  if (lo > hi) {
    const double slack = 1e-9 * (1.0 + std::max(std::abs(lo), std::abs(hi)));
    if (lo > hi + slack) return false;
    std::swap(lo, hi);  // collapse a round-off crossing to its tiny core
  }
  return true;
}

inline NodeBounds node_bounds(const FoldedNetwork& f, const Box& box, const std::vector<Phase>& phases) {
  NodeBounds nb;
  const BoundsResult ib = interval_bounds(f, box, &phases);
  if (ib.empty) {
    nb.empty = true;
    return nb;
  }
  const SymbolicResult sb = symbolic_bounds(f, box, &phases);
  if (sb.empty) {
    nb.empty = true;
    return nb;
  }
  nb.pre_lo = ib.pre_lo;
  nb.pre_hi = ib.pre_hi;
  for (std::size_t s = 0; s < f.relu_total; ++s)
    if (!intersect_interval(nb.pre_lo[s], nb.pre_hi[s], sb.pre_lo[s], sb.pre_hi[s])) {
      nb.empty = true;
      return nb;
    }
  nb.out_lo = ib.out_lo;
  nb.out_hi = ib.out_hi;
  for (std::size_t o = 0; o < f.output_dim; ++o)
    if (!intersect_interval(nb.out_lo[o], nb.out_hi[o], sb.out_lo[o], sb.out_hi[o])) {
      nb.empty = true;
      return nb;
    }
  return nb;
}

// Upper bound of coeffs . y over the output box; below zero the constraint
// (and with it the whole conjunct) is unreachable in this region.
inline double constraint_upper_bound(const LinearConstraint& c, const NodeBounds& nb) {
  double v = 0.0;
  for (const auto& [idx, w] : c.terms) v += w >= 0.0 ? w * nb.out_hi[idx] : w * nb.out_lo[idx];
  return v;
}

// One affine expression over the LP variables.
struct AffineExpr {
  Vector coef;
  double cst = 0.0;
};

// Relaxation LP for one conjunct on one node. Variables: the inputs, one
// post-activation variable per unstable site, and a margin t in [0, 1e9].
// Fixed sites (forced by the node or stable under `nb`) are substituted as
// affine expressions; forced sites additionally contribute their sign row so
// sibling nodes partition the region. Unstable sites get the triangle rows
// (post >= pre, post <= chord, pre within its working range). The objective
// maximizes t subject to coeffs . y >= t for every constraint, so an optimal
// point is the relaxation's best margin candidate. `nb` may be null only when
// every phase is forced (no stability or chord data is needed then).
inline LpResult conjunct_lp(const FoldedNetwork& f, const Box& box, const std::vector<Phase>& phases,
                            const NodeBounds* nb, const std::vector<LinearConstraint>& conjunct) {
  const std::size_t d = f.input_dim;

  std::vector<std::ptrdiff_t> site_var(f.relu_total, -1);
  std::size_t unstable = 0;
  for (std::size_t s = 0; s < f.relu_total; ++s)
    if (phases[s] == Phase::unknown && nb && nb->pre_lo[s] < 0.0 && nb->pre_hi[s] > 0.0)
      site_var[s] = static_cast<std::ptrdiff_t>(d + unstable++);
  const std::size_t nvars = d + unstable + 1;
  const std::size_t t_var = nvars - 1;

  LpProblem p;
  p.num_vars = nvars;
  p.objective = Vector(nvars, 0.0);
  p.objective[t_var] = 1.0;
  p.lower = Vector(nvars, 0.0);
  p.upper = Vector(nvars, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    p.lower[i] = box.lo[i];
    p.upper[i] = box.hi[i];
  }
  for (std::size_t s = 0; s < f.relu_total; ++s)
    if (site_var[s] >= 0) {
      p.lower[static_cast<std::size_t>(site_var[s])] = 0.0;
      p.upper[static_cast<std::size_t>(site_var[s])] = std::max(0.0, nb->pre_hi[s]);
    }
  p.lower[t_var] = 0.0;
  p.upper[t_var] = kMarginCap;

  // expr . vars REL rhs  with the expression's constant moved to the right.
  auto add_row = [&](const AffineExpr& e, Relation rel, double rhs) {
    LpRow row;
    row.coeffs = e.coef;
    row.rel = rel;
    row.rhs = rhs - e.cst;
    p.rows.push_back(std::move(row));
  };

  std::vector<AffineExpr> cur(d);
  for (std::size_t i = 0; i < d; ++i) {
    cur[i].coef = Vector(nvars, 0.0);
    cur[i].coef[i] = 1.0;
  }

  std::vector<AffineExpr> out;
  for (std::size_t k = 0; k < f.stages.size(); ++k) {
    const AffineStage& st = f.stages[k];
    std::vector<AffineExpr> pre(st.w.rows);
    for (std::size_t i = 0; i < st.w.rows; ++i) {
      pre[i].coef = Vector(nvars, 0.0);
      pre[i].cst = st.b[i];
      const double* row = st.w.row(i);
      for (std::size_t j = 0; j < st.w.cols; ++j) {
        const double w = row[j];
        if (w == 0.0) continue;
        for (std::size_t t = 0; t < nvars; ++t) pre[i].coef[t] += w * cur[j].coef[t];
        pre[i].cst += w * cur[j].cst;
      }
    }
    if (k + 1 == f.stages.size()) {
      out = std::move(pre);
      break;
    }
    const std::size_t base = f.relu_offset[k];
    std::vector<AffineExpr> post(st.w.rows);
    for (std::size_t i = 0; i < st.w.rows; ++i) {
      const std::size_t site = base + i;
      const Phase ph = phases[site];
      if (ph == Phase::active) {
        add_row(pre[i], Relation::ge, 0.0);
        post[i] = std::move(pre[i]);
      } else if (ph == Phase::inactive) {
        add_row(pre[i], Relation::le, 0.0);
        post[i].coef = Vector(nvars, 0.0);
      } else if (site_var[site] < 0) {
        // stable under the working bounds: substitute exactly
        if (nb->pre_lo[site] >= 0.0)
          post[i] = std::move(pre[i]);
        else
          post[i].coef = Vector(nvars, 0.0);
      } else {
        const std::size_t v = static_cast<std::size_t>(site_var[site]);
        const double l = nb->pre_lo[site];
        const double u = nb->pre_hi[site];
        const double slope = u / (u - l);
        // post >= pre
        AffineExpr gap = pre[i];
        for (double& c : gap.coef) c = -c;
        gap.coef[v] += 1.0;
        gap.cst = -gap.cst;
        add_row(gap, Relation::ge, 0.0);
        // post <= slope * (pre - l)
        AffineExpr chord = pre[i];
        for (double& c : chord.coef) c *= slope;
        chord.cst = slope * (chord.cst - l);
        for (double& c : chord.coef) c = -c;
        chord.coef[v] += 1.0;
        chord.cst = -chord.cst;
        add_row(chord, Relation::le, 0.0);
        // keep pre inside its working range
        add_row(pre[i], Relation::ge, l);
        add_row(pre[i], Relation::le, u);
        post[i].coef = Vector(nvars, 0.0);
        post[i].coef[v] = 1.0;
      }
    }
    cur = std::move(post);
  }

  for (const LinearConstraint& c : conjunct) {
    AffineExpr g;
    g.coef = Vector(nvars, 0.0);
    for (const auto& [idx, w] : c.terms) {
      for (std::size_t t = 0; t < nvars; ++t) g.coef[t] += w * out[idx].coef[t];
      g.cst += w * out[idx].cst;
    }
    add_row(g, Relation::ge, 0.0);  // coeffs . y >= 0
    g.coef[t_var] -= 1.0;
    add_row(g, Relation::ge, 0.0);  // coeffs . y >= t
  }

  return lp_solve(p);
}

inline double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

// Complete search: SAT with a validated witness, UNSAT, or TIMEOUT. Conjuncts
// are decided in order, each by depth-first branch and bound over relu
// phases. At every node the working bounds may close the node (empty region
// or an out-of-reach constraint); otherwise the relaxation LP either proves
// the conjunct locally infeasible, or yields a max-margin candidate that is
// re-validated by an exact forward pass. A candidate that fails validation in
// a region with unstable sites forces a split on the widest such site (ties
// to the lowest index), exploring the active child first; with nothing left
// to split the conjunct is closed at that node. Every returned witness
// satisfies the postcondition under exact evaluation.
inline Verdict solve(const Network& net, const Box& box, const Postcondition& post,
                     const SolveConfig& cfg = {}) {
  validate_network(net);
  validate_box(box);
  if (box.dim() != net.input_dim) throw std::invalid_argument("solve: region dimension mismatch");
  validate_postcondition(post, net.output_dim);

  const FoldedNetwork f = fold_network(net);
  const auto t0 = std::chrono::steady_clock::now();
  Verdict v;

  auto out_of_budget = [&]() {
    if (cfg.timeout_seconds > 0.0 && detail::elapsed_ms(t0) > cfg.timeout_seconds * 1000.0) return true;
    if (cfg.max_nodes > 0 && v.stats.nodes >= cfg.max_nodes) return true;
    return false;
  };

  for (const auto& conjunct : post.conjuncts) {
    std::vector<std::vector<Phase>> stack;
    stack.emplace_back(f.relu_total, Phase::unknown);
    while (!stack.empty()) {
      if (out_of_budget()) {
        v.status = VerdictStatus::timeout;
        v.stats.wall_ms = detail::elapsed_ms(t0);
        return v;
      }
      std::vector<Phase> phases = std::move(stack.back());
      stack.pop_back();
      ++v.stats.nodes;

      const detail::NodeBounds nb = detail::node_bounds(f, box, phases);
      if (nb.empty) continue;

      bool unreachable = false;
      for (const LinearConstraint& c : conjunct)
        if (detail::constraint_upper_bound(c, nb) < 0.0) {
          unreachable = true;
          break;
        }
      if (unreachable) continue;

      ++v.stats.lp_calls;
      const LpResult lr = detail::conjunct_lp(f, box, phases, &nb, conjunct);
      if (lr.status == LpStatus::infeasible) continue;
      if (lr.status == LpStatus::optimal) {
        Vector x(lr.point.begin(), lr.point.begin() + static_cast<std::ptrdiff_t>(f.input_dim));
        x = box.clamp(std::move(x));
        const Vector y = forward(net, x);
        if (conjunct_satisfied(conjunct, y)) {
          v.status = VerdictStatus::sat;
          v.witness = std::move(x);
          v.stats.wall_ms = detail::elapsed_ms(t0);
          return v;
        }
      }
      // Degenerate/unsettled numerics or a non-validating candidate: split.
      std::size_t split = f.relu_total;
      double widest = -1.0;
      for (std::size_t s = 0; s < f.relu_total; ++s) {
        if (phases[s] != Phase::unknown) continue;
        if (!(nb.pre_lo[s] < 0.0 && nb.pre_hi[s] > 0.0)) continue;
        const double w = nb.pre_hi[s] - nb.pre_lo[s];
        if (w > widest) {
          widest = w;
          split = s;
        }
      }
      if (split == f.relu_total) continue;  // fully fixed: the conjunct is closed here
      std::vector<Phase> inact = phases;
      inact[split] = Phase::inactive;
      phases[split] = Phase::active;
      stack.push_back(std::move(inact));
      stack.push_back(std::move(phases));  // active child explored first
    }
  }

  v.status = VerdictStatus::unsat;
  v.stats.wall_ms = detail::elapsed_ms(t0);
  return v;
}

inline Verdict solve(const VerificationQuery& q, const SolveConfig& cfg = {}) {
  return solve(q.network, q.region, q.post, cfg);
}

// Exhaustive reference solver: enumerates every full phase assignment (so it
// never relies on bound propagation or on branching heuristics), solves the
// exact cell LP for each, and validates candidates with the same exact
// forward semantics as solve(). Intended for cross-checking on small nets;
// refuses more than 16 relu sites.
inline Verdict oracle_solve(const Network& net, const Box& box, const Postcondition& post,
                            const SolveConfig& cfg = {}) {
  validate_network(net);
  validate_box(box);
  if (box.dim() != net.input_dim) throw std::invalid_argument("oracle_solve: region dimension mismatch");
  validate_postcondition(post, net.output_dim);

  const FoldedNetwork f = fold_network(net);
  if (f.relu_total > 16)
    throw std::invalid_argument("oracle_solve: " + std::to_string(f.relu_total) +
                                " relu sites exceed the exhaustive budget of 16");

  const auto t0 = std::chrono::steady_clock::now();
  Verdict v;
  const std::size_t cells = static_cast<std::size_t>(1) << f.relu_total;

  for (const auto& conjunct : post.conjuncts) {
    for (std::size_t mask = 0; mask < cells; ++mask) {
      if (cfg.timeout_seconds > 0.0 && detail::elapsed_ms(t0) > cfg.timeout_seconds * 1000.0) {
        v.status = VerdictStatus::timeout;
        v.stats.wall_ms = detail::elapsed_ms(t0);
        return v;
      }
      ++v.stats.nodes;
      std::vector<Phase> phases(f.relu_total, Phase::inactive);
      for (std::size_t s = 0; s < f.relu_total; ++s)
        if (mask & (static_cast<std::size_t>(1) << s)) phases[s] = Phase::active;

      ++v.stats.lp_calls;
      const LpResult lr = detail::conjunct_lp(f, box, phases, nullptr, conjunct);
      if (lr.status != LpStatus::optimal) continue;
      Vector x(lr.point.begin(), lr.point.begin() + static_cast<std::ptrdiff_t>(f.input_dim));
      x = box.clamp(std::move(x));
      const Vector y = forward(net, x);
      if (conjunct_satisfied(conjunct, y)) {
        v.status = VerdictStatus::sat;
        v.witness = std::move(x);
        v.stats.wall_ms = detail::elapsed_ms(t0);
        return v;
      }
    }
  }

  v.status = VerdictStatus::unsat;
  v.stats.wall_ms = detail::elapsed_ms(t0);
  return v;
}

inline Verdict oracle_solve(const VerificationQuery& q, const SolveConfig& cfg = {}) {
  return oracle_solve(q.network, q.region, q.post, cfg);
}

}  // namespace ensel
