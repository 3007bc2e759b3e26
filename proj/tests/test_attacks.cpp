#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "ensel/attacks.hpp"
#include "support/fixtures.hpp"

using namespace ensel;

namespace {

// y = [x, c]: one input, boundary at x = c (see the verifier suite).
Network ramp_vs_const(double c) {
  std::vector<Layer> ls;
  ls.push_back(Layer::affine(Matrix(2, 1, {1, 0}), {0, c}));
  return make_network(1, std::move(ls));
}

Network perturb(const Network& src, ensel::Rng& rng, double jitter) {
  Network out = src;
  for (Layer& l : out.layers) {
    if (l.kind != LayerKind::affine) continue;
    for (double& v : l.w.data) v += rng.uniform(-jitter, jitter);
    for (double& v : l.b) v += rng.uniform(-jitter, jitter);
  }
  return out;
}

double top_gap(const Vector& y) {
  Vector s = y;
  std::sort(s.begin(), s.end());
  return s[s.size() - 1] - s[s.size() - 2];
}

}  // namespace

TEST_CASE("elu hinge values and slope") {
  CHECK(elu(0.0) == 0.0);
  CHECK(elu(2.5) == 2.5);
  CHECK(elu(-1.0) == Catch::Approx(std::exp(-1.0) - 1.0));
  CHECK(elu(-30.0) > -1.0);  // saturates but never reaches -1
  CHECK(elu_grad(0.0) == 1.0);
  CHECK(elu_grad(1.7) == 1.0);
  CHECK(elu_grad(-1.0) == Catch::Approx(std::exp(-1.0)));
  // slope matches a central difference away from the kink
  const double h = 1e-6;
  CHECK(elu_grad(-0.5) == Catch::Approx((elu(-0.5 + h) - elu(-0.5 - h)) / (2 * h)).epsilon(1e-6));

  CHECK(sign_of(0.0) == 0.0);
  CHECK(sign_of(3.0) == 1.0);
  CHECK(sign_of(-0.2) == -1.0);
}

TEST_CASE("spec loss is the label-over-target margin") {
  const Vector y = {0.9, 0.5, 0.2};
  CHECK(spec_loss(y, 0, 1) == Catch::Approx(0.4));
  CHECK(spec_loss(y, 0, 2) == Catch::Approx(0.7));
  CHECK(spec_loss(y, 2, 0) == Catch::Approx(-0.7));
}

TEST_CASE("ga1 takes exactly one full-radius signed step") {
  // y = [x, 0.5] at x0 = 0.9: the margin gradient is +1, so the step lands
  // at 0.3 and flips the label.
  const Network net = ramp_vs_const(0.5);
  AttackConfig cfg;
  cfg.epsilon = 0.6;
  const AttackResult res = attack_ga1({net}, {0.9}, 0, cfg);
  CHECK(res.success);
  CHECK(res.steps_taken == 1);
  REQUIRE(res.point.size() == 1);
  CHECK(res.point[0] == Catch::Approx(0.3));
  CHECK(classify(net, res.point) == 1);

  // too small a radius cannot cross the boundary at 0.5
  AttackConfig narrow;
  narrow.epsilon = 0.3;
  const AttackResult miss = attack_ga1({net}, {0.9}, 0, narrow);
  CHECK_FALSE(miss.success);
  CHECK(miss.point[0] == Catch::Approx(0.6));
  CHECK(classify(net, miss.point) == 0);
}

TEST_CASE("ga2 walks in epsilon/steps increments and stops early") {
  const Network net = ramp_vs_const(0.5);
  AttackConfig cfg;
  cfg.epsilon = 0.6;
  cfg.steps = 10;  // alpha = 0.06; crossing 0.5 from 0.9 needs seven steps
  const AttackResult res = attack_ga2({net}, {0.9}, 0, cfg);
  CHECK(res.success);
  CHECK(res.steps_taken == 7);
  CHECK(res.point[0] == Catch::Approx(0.9 - 7 * 0.06));
  CHECK(classify(net, res.point) == 1);

  AttackConfig narrow;
  narrow.epsilon = 0.3;
  const AttackResult miss = attack_ga2({net}, {0.9}, 0, narrow);
  CHECK_FALSE(miss.success);
  CHECK(miss.steps_taken == narrow.steps);  // exhausted the budget
  CHECK(miss.point[0] == Catch::Approx(0.6).margin(1e-12));
}

TEST_CASE("ga3 retargeting finds errors a frozen target misses") {
  // Three classes over (u, v): y0 = 1 constant; y1 creeps up along u but
  // stays below 1 in the ball; y2 starts third, overtakes y1 along u and can
  // then be driven over y0 along v. A frozen-target walk only ever moves u,
  // so it fails; the retargeting walk switches to label 2 mid-path and wins.
  std::vector<Layer> ls;
  ls.push_back(Layer::affine(Matrix(3, 2, {0.0, 0.0, 0.2, 0.0, 0.6, 3.0}), {1.0, 0.8, -0.95}));
  const Network net = make_network(2, std::move(ls));
  const Vector x0 = {0.5, 0.5};
  const Vector y0 = forward(net, x0);
  REQUIRE(y0[0] == Catch::Approx(1.0).margin(1e-12));
  REQUIRE(y0[1] == Catch::Approx(0.9).margin(1e-12));
  REQUIRE(y0[2] == Catch::Approx(0.85).margin(1e-12));
  REQUIRE(classify(net, x0) == 0);
  REQUIRE(runner_up_label(forward(net, x0)) == 1);

  AttackConfig cfg;
  cfg.epsilon = 0.2;
  cfg.steps = 6;

  const AttackResult frozen = attack_ga2({net}, x0, 0, cfg);
  CHECK_FALSE(frozen.success);
  CHECK(frozen.point[1] == Catch::Approx(0.5));  // v never moved

  const AttackResult adaptive = attack_ga3({net}, x0, 0, cfg);
  CHECK(adaptive.success);
  CHECK(classify(net, adaptive.point) == 2);
  CHECK(adaptive.point[1] > 0.5);  // the switch unlocked the v direction
}

TEST_CASE("attack iterates stay inside the ball and the unit domain") {
  ensel::Rng rng(1703);
  for (int trial = 0; trial < 40; ++trial) {
    const Network net = fixtures::random_net(rng, {3, 5, 4}, 1.2);
    const Vector x0 = fixtures::random_point(rng, 3, 0.05, 0.95);
    const int label = classify(net, x0);
    AttackConfig cfg;
    cfg.epsilon = rng.uniform(0.05, 0.4);
    cfg.steps = 5;
    const Box ball = epsilon_ball(x0, cfg.epsilon, true);

    for (const AttackKind kind : {AttackKind::ga1, AttackKind::ga2, AttackKind::ga3}) {
      const AttackResult res = run_attack(kind, {net}, x0, label, cfg);
      CAPTURE(trial, attack_kind_name(kind), cfg.epsilon);
      CHECK(ball.contains(res.point, 1e-12));
      for (double v : res.point) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
      // the flag always reports the exact classify() outcome at the point
      bool flipped = classify(net, res.point) != label;
      CHECK(res.success == flipped);
    }
  }
}

TEST_CASE("joint attacks only succeed when every member is fooled") {
  ensel::Rng rng(5099);
  std::size_t successes = 0;
  for (int trial = 0; trial < 50; ++trial) {
    Network a, b;
    Vector x0;
    for (;;) {
      a = fixtures::random_net(rng, {2, 3, 3}, 1.2);
      b = perturb(a, rng, 0.25);
      x0 = fixtures::random_point(rng, 2, 0.1, 0.9);
      if (classify(a, x0) != classify(b, x0)) continue;
      if (top_gap(forward(a, x0)) > 0.3) continue;
      break;
    }
    const int label = classify(a, x0);
    AttackConfig cfg;
    cfg.epsilon = rng.uniform(0.1, 0.4);
    for (const AttackKind kind : {AttackKind::ga1, AttackKind::ga2, AttackKind::ga3}) {
      const AttackResult res = run_attack(kind, {a, b}, x0, label, cfg);
      const bool both = classify(a, res.point) != label && classify(b, res.point) != label;
      CAPTURE(trial, attack_kind_name(kind));
      CHECK(res.success == both);
      if (res.success) ++successes;
    }
  }
  CHECK(successes >= 15);  // the generator must actually produce joint errors
}

TEST_CASE("attack successes are conservative evidence for the complete search") {
  ensel::Rng rng(61409);
  std::size_t confirmed = 0;
  for (int trial = 0; trial < 30; ++trial) {
    Network a, b;
    Vector x0;
    for (;;) {
      a = fixtures::random_net(rng, {2, 3, 3}, 1.2);
      b = perturb(a, rng, 0.25);
      x0 = fixtures::random_point(rng, 2, 0.1, 0.9);
      if (classify(a, x0) != classify(b, x0)) continue;
      if (top_gap(forward(a, x0)) > 0.3) continue;
      break;
    }
    const int label = classify(a, x0);
    AttackConfig cfg;
    cfg.epsilon = rng.uniform(0.1, 0.4);
    for (const AttackKind kind : {AttackKind::ga1, AttackKind::ga2, AttackKind::ga3}) {
      const AttackResult res = run_attack(kind, {a, b}, x0, label, cfg);
      if (!res.success) continue;
      ++confirmed;
      const Verdict v = solve(encode_mutual_error_query(a, b, x0, cfg.epsilon, QueryMode::full));
      CAPTURE(trial, attack_kind_name(kind), cfg.epsilon);
      REQUIRE(v.status == VerdictStatus::sat);
    }
  }
  CHECK(confirmed >= 8);
}

TEST_CASE("attacks validate their inputs") {
  const Network net = ramp_vs_const(0.5);
  AttackConfig cfg;
  cfg.epsilon = 0.2;

  CHECK_THROWS_AS(attack_ga1({}, {0.9}, 0, cfg), std::invalid_argument);
  CHECK_THROWS_AS(attack_ga1({net}, {0.9, 0.1}, 0, cfg), std::invalid_argument);
  CHECK_THROWS_AS(attack_ga1({net}, {0.9}, 1, cfg), std::invalid_argument);  // wrong label

  AttackConfig bad = cfg;
  bad.steps = 0;
  CHECK_THROWS_AS(attack_ga2({net}, {0.9}, 0, bad), std::invalid_argument);
  AttackConfig neg = cfg;
  neg.epsilon = 0.0;
  CHECK_THROWS_AS(attack_ga2({net}, {0.9}, 0, neg), std::invalid_argument);

  CHECK(parse_attack_kind("ga1") == AttackKind::ga1);
  CHECK(parse_attack_kind("ga3") == AttackKind::ga3);
  CHECK_THROWS_AS(parse_attack_kind("ga4"), std::invalid_argument);
}
