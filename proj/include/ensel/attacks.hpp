#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "ensel/nn.hpp"
#include "ensel/verifier.hpp"

namespace ensel {

// Smooth hinge used to aggregate per-member margins: members that already
// misclassify contribute a vanishing (but never zero) pull, so the joint
// gradient keeps working on the members that still classify correctly.
inline double elu(double v) { return v >= 0.0 ? v : std::expm1(v); }
inline double elu_grad(double v) { return v >= 0.0 ? 1.0 : std::exp(v); }

inline double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Margin of the clean label over a target label: positive while the member
// still prefers `label`, negative once `target` has taken over.
inline double spec_loss(const Vector& y, int label, int target) {
  return y[static_cast<std::size_t>(label)] - y[static_cast<std::size_t>(target)];
}

enum class AttackKind { ga1, ga2, ga3 };

inline std::string attack_kind_name(AttackKind k) {
  switch (k) {
    case AttackKind::ga1: return "ga1";
    case AttackKind::ga2: return "ga2";
    default: return "ga3";
  }
}

inline AttackKind parse_attack_kind(const std::string& s) {
  if (s == "ga1") return AttackKind::ga1;
  if (s == "ga2") return AttackKind::ga2;
  if (s == "ga3") return AttackKind::ga3;
  throw std::invalid_argument("unknown attack kind '" + s + "' (expected ga1, ga2 or ga3)");
}

struct AttackConfig {
  double epsilon = 0.1;
  std::size_t steps = 10;  // iterative budget for ga2/ga3 (ga1 always takes one)
  bool clip_unit = true;
};

struct AttackResult {
  bool success = false;   // every member misclassifies at `point`
  Vector point;           // final iterate, always inside the search ball
  std::size_t steps_taken = 0;
};

namespace detail {

inline void check_attack_inputs(const std::vector<Network>& nets, const Vector& x0, int label,
                                const AttackConfig& cfg) {
  if (nets.empty()) throw std::invalid_argument("attack: no members given");
  if (cfg.steps == 0) throw std::invalid_argument("attack: need a positive step budget");
  for (std::size_t i = 0; i < nets.size(); ++i) {
    if (nets[i].input_dim != x0.size())
      throw std::invalid_argument("attack: member " + std::to_string(i) + " input dimension mismatch");
    if (classify(nets[i], x0) != label)
      throw std::invalid_argument("attack: member " + std::to_string(i) +
                                  " does not classify the start point as label " + std::to_string(label));
  }
}

// Gradient of sum_i elu(y_label - y_target_i) at x.
inline Vector joint_margin_gradient(const std::vector<Network>& nets, const std::vector<int>& targets,
                                    const Vector& x, int label) {
  Vector g(x.size(), 0.0);
  for (std::size_t i = 0; i < nets.size(); ++i) {
    const Vector y = forward(nets[i], x);
    const double weight = elu_grad(spec_loss(y, label, targets[i]));
    Vector c(y.size(), 0.0);
    c[static_cast<std::size_t>(label)] = 1.0;
    c[static_cast<std::size_t>(targets[i])] -= 1.0;
    const Vector gi = input_gradient(nets[i], x, c);
    for (std::size_t d = 0; d < g.size(); ++d) g[d] += weight * gi[d];
  }
  return g;
}

inline bool all_misclassify(const std::vector<Network>& nets, const Vector& x, int label) {
  for (const Network& net : nets)
    if (classify(net, x) == label) return false;
  return true;
}

}  // namespace detail

// GA1: one signed-gradient step of the full radius, taken against the joint
// margin with every member's target frozen to its runner-up at the start point.
inline AttackResult attack_ga1(const std::vector<Network>& nets, const Vector& x0, int label,
                               const AttackConfig& cfg) {
  detail::check_attack_inputs(nets, x0, label, cfg);
  const Box ball = epsilon_ball(x0, cfg.epsilon, cfg.clip_unit);

  std::vector<int> targets(nets.size());
  for (std::size_t i = 0; i < nets.size(); ++i) targets[i] = runner_up_label(forward(nets[i], x0));

  const Vector g = detail::joint_margin_gradient(nets, targets, x0, label);
  Vector x = x0;
  for (std::size_t d = 0; d < x.size(); ++d) x[d] -= cfg.epsilon * sign_of(g[d]);
  x = ball.clamp(std::move(x));

  AttackResult res;
  res.point = std::move(x);
  res.steps_taken = 1;
  res.success = detail::all_misclassify(nets, res.point, label);
  return res;
}

namespace detail {

// Shared loop of the iterative attacks: step size epsilon/steps, projection
// onto the ball after every step, early stop on success. `retarget` selects
// GA3's per-evaluation runner-up refresh.
inline AttackResult iterative_attack(const std::vector<Network>& nets, const Vector& x0, int label,
                                     const AttackConfig& cfg, bool retarget) {
  check_attack_inputs(nets, x0, label, cfg);
  const Box ball = epsilon_ball(x0, cfg.epsilon, cfg.clip_unit);
  const double alpha = cfg.epsilon / static_cast<double>(cfg.steps);

  std::vector<int> targets(nets.size());
  for (std::size_t i = 0; i < nets.size(); ++i) targets[i] = runner_up_label(forward(nets[i], x0));

  AttackResult res;
  res.point = x0;
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    if (retarget)
      for (std::size_t i = 0; i < nets.size(); ++i)
        targets[i] = runner_up_label(forward(nets[i], res.point));
    const Vector g = joint_margin_gradient(nets, targets, res.point, label);
    for (std::size_t d = 0; d < res.point.size(); ++d) res.point[d] -= alpha * sign_of(g[d]);
    res.point = ball.clamp(std::move(res.point));
    res.steps_taken = step;
    if (all_misclassify(nets, res.point, label)) {
      res.success = true;
      break;
    }
  }
  return res;
}

}  // namespace detail

// GA2: iterative targeted descent, targets frozen at the start point.
inline AttackResult attack_ga2(const std::vector<Network>& nets, const Vector& x0, int label,
                               const AttackConfig& cfg) {
  return detail::iterative_attack(nets, x0, label, cfg, false);
}

// GA3: iterative untargeted descent, every member's target re-derived from
// its current runner-up before each gradient evaluation.
inline AttackResult attack_ga3(const std::vector<Network>& nets, const Vector& x0, int label,
                               const AttackConfig& cfg) {
  return detail::iterative_attack(nets, x0, label, cfg, true);
}

inline AttackResult run_attack(AttackKind kind, const std::vector<Network>& nets, const Vector& x0,
                               int label, const AttackConfig& cfg) {
  switch (kind) {
    case AttackKind::ga1: return attack_ga1(nets, x0, label, cfg);
    case AttackKind::ga2: return attack_ga2(nets, x0, label, cfg);
    default: return attack_ga3(nets, x0, label, cfg);
  }
}

}  // namespace ensel
