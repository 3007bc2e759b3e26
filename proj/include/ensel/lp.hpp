#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "ensel/linalg.hpp"

namespace ensel {

// Feasibility tolerance for the simplex core. Pinned: callers (and the
// branch-and-bound loop) reason about verdicts at this tolerance.
constexpr double kLpTol = 1e-7;

enum class Relation { le, ge, eq };

struct LpRow {
  Vector coeffs;
  Relation rel = Relation::le;
  double rhs = 0.0;
};

// Maximize objective . x subject to rows and per-variable bounds.
// Lower bounds must be finite; upper bounds may be +infinity.
struct LpProblem {
  std::size_t num_vars = 0;
  Vector objective;
  std::vector<LpRow> rows;
  Vector lower;
  Vector upper;
};

enum class LpStatus { optimal, infeasible, unbounded, degenerate };

struct LpResult {
  LpStatus status = LpStatus::degenerate;
  Vector point;  // original variable space, set when optimal
  double value = 0.0;
};

namespace detail {

// Dense two-phase tableau simplex with Bland's anti-cycling rule throughout:
// entering = lowest improving column index, leaving = minimum ratio with ties
// broken toward the lowest basic variable index. Bland guarantees finite
// termination; the iteration cap only backstops numerical trouble, which is
// surfaced as LpStatus::degenerate rather than a wrong verdict.
class SimplexTableau {
 public:
  static constexpr double kEnterTol = 1e-9;
  static constexpr double kPivotTol = 1e-9;
  static constexpr std::size_t kMaxIterations = 50000;

  SimplexTableau(std::size_t structural, std::size_t total_cols, std::size_t rows)
      : n_struct_(structural), cols_(total_cols), rows_(rows), cells_(rows * (total_cols + 1), 0.0),
        basis_(rows, 0), allowed_(total_cols, true) {}

  double& at(std::size_t r, std::size_t c) { return cells_[r * (cols_ + 1) + c]; }
  double at(std::size_t r, std::size_t c) const { return cells_[r * (cols_ + 1) + c]; }
  double& rhs(std::size_t r) { return cells_[r * (cols_ + 1) + cols_]; }
  double rhs(std::size_t r) const { return cells_[r * (cols_ + 1) + cols_]; }
  void set_basis(std::size_t r, std::size_t col) { basis_[r] = col; }
  std::size_t basis(std::size_t r) const { return basis_[r]; }
  void forbid(std::size_t col) { allowed_[col] = false; }
  std::size_t structural() const { return n_struct_; }
  std::size_t num_rows() const { return rows_; }

  // Runs simplex for the given maximization cost vector (length cols_).
  // Returns optimal, unbounded, or degenerate.
  LpStatus optimize(const Vector& cost) {
    Vector z(cols_ + 1, 0.0);
    for (std::size_t j = 0; j <= cols_; ++j) {
      double v = j < cols_ ? -cost[j] : 0.0;
      for (std::size_t r = 0; r < rows_; ++r) {
        const double cb = cost[basis_[r]];
        if (cb != 0.0) v += cb * cells_[r * (cols_ + 1) + j];
      }
      z[j] = v;
    }

    for (std::size_t iter = 0; iter < kMaxIterations; ++iter) {
      std::size_t enter = cols_;
      for (std::size_t j = 0; j < cols_; ++j)
        if (allowed_[j] && z[j] < -kEnterTol) {
          enter = j;
          break;
        }
      if (enter == cols_) {
        objective_value_ = z[cols_];
        return LpStatus::optimal;
      }

      std::size_t leave = rows_;
      double best_ratio = 0.0;
      for (std::size_t r = 0; r < rows_; ++r) {
        const double a = at(r, enter);
        if (a <= kPivotTol) continue;
        const double ratio = rhs(r) / a;
        if (leave == rows_ || ratio < best_ratio - 1e-12 ||
            (std::abs(ratio - best_ratio) <= 1e-12 && basis_[r] < basis_[leave])) {
          leave = r;
          best_ratio = ratio;
        }
      }
      if (leave == rows_) return LpStatus::unbounded;

      pivot(leave, enter, z);
    }
    return LpStatus::degenerate;
  }

  double objective_value() const { return objective_value_; }

  double basic_value(std::size_t col) const {
    for (std::size_t r = 0; r < rows_; ++r)
      if (basis_[r] == col) return rhs(r);
    return 0.0;
  }

  // After phase 1, pivot artificial variables out of the basis where a
  // non-artificial pivot element exists; rows without one are redundant and
  // stay inert (their artificial remains basic at zero).
  void drive_out(std::size_t first_artificial) {
    Vector dummy;  // no z-row maintenance needed here
    for (std::size_t r = 0; r < rows_; ++r) {
      if (basis_[r] < first_artificial) continue;
      for (std::size_t j = 0; j < first_artificial; ++j) {
        if (std::abs(at(r, j)) > kPivotTol) {
          pivot(r, j, dummy);
          break;
        }
      }
    }
  }

 private:
  void pivot(std::size_t prow, std::size_t pcol, Vector& z) {
    const double p = at(prow, pcol);
    const double inv = 1.0 / p;
    for (std::size_t j = 0; j <= cols_; ++j) at(prow, j) *= inv;
    at(prow, pcol) = 1.0;
    for (std::size_t r = 0; r < rows_; ++r) {
      if (r == prow) continue;
      const double f = at(r, pcol);
      if (f == 0.0) continue;
      for (std::size_t j = 0; j <= cols_; ++j) at(r, j) -= f * at(prow, j);
      at(r, pcol) = 0.0;
    }
    if (!z.empty()) {
      const double f = z[pcol];
      if (f != 0.0) {
        for (std::size_t j = 0; j <= cols_; ++j) z[j] -= f * at(prow, j);
        z[pcol] = 0.0;
      }
    }
    basis_[prow] = pcol;
  }

  std::size_t n_struct_, cols_, rows_;
  std::vector<double> cells_;
  std::vector<std::size_t> basis_;
  std::vector<char> allowed_;
  double objective_value_ = 0.0;
};

}  // namespace detail

inline LpResult lp_solve(const LpProblem& p) {
  const std::size_t n = p.num_vars;
  if (p.objective.size() != n || p.lower.size() != n || p.upper.size() != n)
    throw std::invalid_argument("lp_solve: inconsistent problem dimensions");
  for (const LpRow& row : p.rows)
    if (row.coeffs.size() != n) throw std::invalid_argument("lp_solve: row dimension mismatch");
  for (std::size_t j = 0; j < n; ++j) {
    if (!std::isfinite(p.lower[j])) throw std::invalid_argument("lp_solve: lower bounds must be finite");
    if (p.lower[j] > p.upper[j] + kLpTol) return {LpStatus::infeasible, {}, 0.0};
  }

  // Shift to y = x - lower >= 0; finite upper bounds become rows.
  struct WorkRow {
    Vector a;
    Relation rel;
    double rhs;
  };
  std::vector<WorkRow> work;
  work.reserve(p.rows.size() + n);
  for (const LpRow& row : p.rows) {
    double shifted = row.rhs;
    for (std::size_t j = 0; j < n; ++j) shifted -= row.coeffs[j] * p.lower[j];
    work.push_back({row.coeffs, row.rel, shifted});
  }
  for (std::size_t j = 0; j < n; ++j) {
    if (!std::isfinite(p.upper[j])) continue;
    Vector a(n, 0.0);
    a[j] = 1.0;
    work.push_back({std::move(a), Relation::le, p.upper[j] - p.lower[j]});
  }
  for (WorkRow& row : work) {
    if (row.rhs < 0.0) {
      for (double& v : row.a) v = -v;
      row.rhs = -row.rhs;
      if (row.rel == Relation::le)
        row.rel = Relation::ge;
      else if (row.rel == Relation::ge)
        row.rel = Relation::le;
    }
  }

  const std::size_t m = work.size();
  std::size_t n_slack = 0, n_art = 0;
  for (const WorkRow& row : work) {
    if (row.rel != Relation::eq) ++n_slack;
    if (row.rel != Relation::le) ++n_art;
  }
  const std::size_t first_slack = n;
  const std::size_t first_art = n + n_slack;
  const std::size_t total = n + n_slack + n_art;

  detail::SimplexTableau tab(n, total, m);
  std::size_t slack_at = first_slack, art_at = first_art;
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t j = 0; j < n; ++j) tab.at(r, j) = work[r].a[j];
    tab.rhs(r) = work[r].rhs;
    if (work[r].rel == Relation::le) {
      tab.at(r, slack_at) = 1.0;
      tab.set_basis(r, slack_at++);
    } else if (work[r].rel == Relation::ge) {
      tab.at(r, slack_at) = -1.0;
      ++slack_at;
      tab.at(r, art_at) = 1.0;
      tab.set_basis(r, art_at++);
    } else {
      tab.at(r, art_at) = 1.0;
      tab.set_basis(r, art_at++);
    }
  }

  if (n_art > 0) {
    Vector phase1(total, 0.0);
    for (std::size_t j = first_art; j < total; ++j) phase1[j] = -1.0;
    const LpStatus s1 = tab.optimize(phase1);
    if (s1 == LpStatus::degenerate) return {LpStatus::degenerate, {}, 0.0};
    if (s1 == LpStatus::unbounded) return {LpStatus::degenerate, {}, 0.0};  // cannot happen; treat as numeric trouble
    if (tab.objective_value() < -kLpTol) return {LpStatus::infeasible, {}, 0.0};
    tab.drive_out(first_art);
    for (std::size_t j = first_art; j < total; ++j) tab.forbid(j);
  }

  Vector phase2(total, 0.0);
  for (std::size_t j = 0; j < n; ++j) phase2[j] = p.objective[j];
  const LpStatus s2 = tab.optimize(phase2);
  if (s2 != LpStatus::optimal) return {s2, {}, 0.0};

  LpResult res;
  res.status = LpStatus::optimal;
  res.point.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    double y = tab.basic_value(j);
    if (y < 0.0) y = 0.0;
    res.point[j] = p.lower[j] + y;
  }
  res.value = 0.0;
  for (std::size_t j = 0; j < n; ++j) res.value += p.objective[j] * res.point[j];

  // Final audit: a crafted pivot sequence can drift; report degenerate rather
  // than hand back an infeasible "optimum".
  for (const LpRow& row : p.rows) {
    double v = 0.0;
    for (std::size_t j = 0; j < n; ++j) v += row.coeffs[j] * res.point[j];
    const double scale = 1.0 + std::abs(row.rhs);
    if (row.rel == Relation::le && v > row.rhs + 100 * kLpTol * scale) return {LpStatus::degenerate, {}, 0.0};
    if (row.rel == Relation::ge && v < row.rhs - 100 * kLpTol * scale) return {LpStatus::degenerate, {}, 0.0};
    if (row.rel == Relation::eq && std::abs(v - row.rhs) > 100 * kLpTol * scale)
      return {LpStatus::degenerate, {}, 0.0};
  }
  for (std::size_t j = 0; j < n; ++j) {
    if (res.point[j] < p.lower[j] - 100 * kLpTol) return {LpStatus::degenerate, {}, 0.0};
    if (std::isfinite(p.upper[j]) && res.point[j] > p.upper[j] + 100 * kLpTol) {
      if (res.point[j] > p.upper[j] + 1000 * kLpTol) return {LpStatus::degenerate, {}, 0.0};
      res.point[j] = p.upper[j];
    }
  }
  return res;
}

}  // namespace ensel
