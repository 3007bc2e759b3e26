#include <cstddef>
#include <map>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "ensel/selection.hpp"
#include "ensel/training.hpp"
#include "support/fixtures.hpp"
#include "support/published.hpp"
#include "support/synth.hpp"

using namespace ensel;

namespace {

// A pool of constant classifiers (always predict class 0) for scripted
// scenarios where the verdicts come from a quota map, not from the networks.
std::vector<Network> constant_pool(std::size_t count) {
  std::vector<Network> pool;
  for (std::size_t n = 0; n < count; ++n) {
    std::vector<Layer> ls;
    ls.push_back(Layer::affine(Matrix(3, 2, std::vector<double>(6, 0.0)), {1.0, 0.0, 0.0}));
    pool.push_back(make_network(2, std::move(ls)));
  }
  return pool;
}

AgreementSet zero_label_points(std::size_t m) {
  AgreementSet set;
  set.label_filter = 0;
  for (std::size_t i = 0; i < m; ++i)
    set.points.push_back({{0.1 + 0.8 * static_cast<double>(i) / static_cast<double>(m), 0.5}, 0, i});
  return set;
}

// Backend whose verdict is sat exactly when the point index is below the
// pair's quota, so a pair's sat count per epsilon equals its quota.
BackendConfig quota_backend(std::map<PairKey, std::size_t> quotas) {
  BackendConfig be;
  be.scripted = [quotas = std::move(quotas)](const MutualQuery& q) {
    const auto it = quotas.find(make_pair_key(q.a, q.b));
    const std::size_t quota = it == quotas.end() ? 0 : it->second;
    return q.point < quota ? VerdictStatus::sat : VerdictStatus::unsat;
  };
  return be;
}

// A trained pool whose first two members are identical twins: {A, A, B, C, D}.
struct TwinWorld {
  Dataset validation;
  std::vector<Network> pool;
};

const TwinWorld& twin_world() {
  static const TwinWorld w = [] {
    fixtures::SynthConfig sc;
    sc.classes = 3;
    sc.side = 3;
    sc.per_class = 60;
    sc.separation = 0.3;
    sc.noise = 0.15;
    sc.seed = 21;
    const Dataset full = fixtures::synthetic_dataset(sc);
    const Splits splits = make_splits(full, 0.25, 5);

    TrainConfig tc;
    tc.hidden = {6};
    tc.epochs = 40;
    tc.batch_size = 16;
    tc.learning_rate = 0.5;
    tc.seed = 31;

    std::vector<Network> base;
    for (auto& res : train_pool(splits.train, sc.classes, 4, tc)) base.push_back(std::move(res.net));

    TwinWorld out;
    out.validation = splits.validation;
    out.pool = {base[0], base[0], base[1], base[2], base[3]};
    return out;
  }();
  return w;
}

}  // namespace

TEST_CASE("the weakest member has the lowest averaged uniqueness score") {
  SECTION("published five-member table singles out member 1") {
    CHECK(weakest_member(fixtures::published_table()) == 1);
  }

  SECTION("plain argmin over three members") {
    // row sums {20, 40, 30} over m=100 give US 0.9 / 0.8 / 0.85
    MutualErrorTable t;
    t.members = {0, 1, 2};
    t.eps_list = {0.1};
    t.m = 100;
    t.counts[make_pair_key(0, 1)] = {PairCounts{15, 85, 0}};
    t.counts[make_pair_key(0, 2)] = {PairCounts{5, 95, 0}};
    t.counts[make_pair_key(1, 2)] = {PairCounts{25, 75, 0}};
    REQUIRE(uniqueness_score(t, 0, 0) == Catch::Approx(0.9));
    REQUIRE(uniqueness_score(t, 1, 0) == Catch::Approx(0.8));
    REQUIRE(uniqueness_score(t, 2, 0) == Catch::Approx(0.85));
    CHECK(weakest_member(t) == 1);
  }

  SECTION("full ties break to the lowest member id") {
    MutualErrorTable t;
    t.members = {3, 1, 2};  // listing order must not matter
    t.eps_list = {0.1};
    t.m = 10;
    t.counts[make_pair_key(1, 2)] = {PairCounts{2, 8, 0}};
    t.counts[make_pair_key(1, 3)] = {PairCounts{2, 8, 0}};
    t.counts[make_pair_key(2, 3)] = {PairCounts{2, 8, 0}};
    CHECK(weakest_member(t) == 1);
  }
}

TEST_CASE("replacement search scores candidates inside the prospective ensemble") {
  // Remaining members {0,2,3,4} need a fifth; candidates 5..9 carry scripted
  // pair quotas whose totals are 45, 41, 29, 17, and 22 sat results out of
  // 800 queries each. Candidate 8 must win with US 1 - 17/800 = 97.88%,
  // beating an incumbent at 1 - 93/800 = 88.38%.
  const std::vector<Network> pool = constant_pool(10);
  const AgreementSet set = zero_label_points(200);
  const std::vector<std::size_t> remaining = {0, 2, 3, 4};
  const double incumbent_us = 1.0 - 93.0 / 800.0;

  std::map<PairKey, std::size_t> quotas = {
      {{0, 5}, 12}, {{2, 5}, 11}, {{3, 5}, 11}, {{4, 5}, 11},  // 45
      {{0, 6}, 11}, {{2, 6}, 10}, {{3, 6}, 10}, {{4, 6}, 10},  // 41
      {{0, 7}, 8},  {{2, 7}, 7},  {{3, 7}, 7},  {{4, 7}, 7},   // 29
      {{0, 8}, 5},  {{2, 8}, 4},  {{3, 8}, 4},  {{4, 8}, 4},   // 17
      {{0, 9}, 6},  {{2, 9}, 6},  {{3, 9}, 5},  {{4, 9}, 5},   // 22
      {{0, 2}, 10}, {{0, 3}, 10}, {{0, 4}, 10}, {{2, 3}, 10}, {{2, 4}, 10}, {{3, 4}, 10},
  };
  const BackendConfig backend = quota_backend(quotas);

  SECTION("the best candidate wins and clears the incumbent") {
    const auto choice =
        best_replacement(pool, remaining, {5, 6, 7, 8, 9}, incumbent_us, set, {0.02}, backend);
    REQUIRE(choice.has_value());
    CHECK(choice->candidate == 8);
    CHECK(choice->us == Catch::Approx(1.0 - 17.0 / 800.0));
    CHECK(100.0 * choice->us == Catch::Approx(97.88).margin(0.0051));
  }

  SECTION("an error-free candidate scores a full 1.0") {
    BackendConfig all_unsat;
    all_unsat.scripted = [](const MutualQuery&) { return VerdictStatus::unsat; };
    const auto choice = best_replacement(pool, remaining, {5}, 0.99, set, {0.02}, all_unsat);
    REQUIRE(choice.has_value());
    CHECK(choice->candidate == 5);
    CHECK(choice->us == 1.0);
  }

  SECTION("nobody beats a perfect incumbent, and that ends the loop") {
    BackendConfig all_unsat;
    all_unsat.scripted = [](const MutualQuery&) { return VerdictStatus::unsat; };
    CHECK_FALSE(best_replacement(pool, remaining, {5, 6}, 1.0, set, {0.02}, all_unsat).has_value());
  }

  SECTION("no candidates, no replacement") {
    CHECK_FALSE(best_replacement(pool, remaining, {}, 0.5, set, {0.02}, backend).has_value());
  }

  SECTION("candidates must be disjoint from the ensemble") {
    CHECK_THROWS_AS(best_replacement(pool, remaining, {2}, 0.5, set, {0.02}, backend),
                    std::invalid_argument);
  }
}

TEST_CASE("greedy selection walks through scripted swaps and stops") {
  // Quotas (m=10) are laid out so the loop accepts exactly two swaps:
  // {0,1,2} -> evict 0, admit 4 -> {1,2,4} -> evict 1, admit 3 -> {2,4,3},
  // after which the best candidate (US 0.8) no longer beats the weakest
  // remaining member (US 0.9).
  const std::vector<Network> pool = constant_pool(6);
  const AgreementSet set = zero_label_points(10);
  const std::map<PairKey, std::size_t> quotas = {
      {{0, 1}, 6}, {{0, 2}, 5}, {{0, 3}, 5}, {{0, 4}, 5}, {{0, 5}, 5},
      {{1, 2}, 4}, {{1, 3}, 1}, {{1, 4}, 0}, {{1, 5}, 5},
      {{2, 3}, 1}, {{2, 4}, 0}, {{2, 5}, 3},
      {{3, 4}, 1}, {{3, 5}, 5},
      {{4, 5}, 3},
  };
  SelectionConfig cfg;
  cfg.backend = quota_backend(quotas);

  SECTION("two accepted swaps, then no candidate clears the bar") {
    const EnsembleState state = iterate_selection(pool, 3, set, {0.1}, cfg);
    CHECK(state.members == std::vector<std::size_t>{2, 4, 3});
    CHECK(state.notes.empty());
    REQUIRE(state.history.size() == 2);
    REQUIRE(state.tables.size() == 3);

    const SwapRecord& first = state.history[0];
    CHECK(first.removed == 0);
    CHECK(first.inserted == 4);
    CHECK(first.us_before == Catch::Approx(0.45));
    CHECK(first.us_after == Catch::Approx(1.0));
    CHECK(first.joint_errors_before == 15);
    CHECK(first.joint_errors_after == 4);

    const SwapRecord& second = state.history[1];
    CHECK(second.removed == 1);
    CHECK(second.inserted == 3);
    CHECK(second.us_before == Catch::Approx(0.8));
    CHECK(second.us_after == Catch::Approx(0.9));
    CHECK(second.joint_errors_before == 4);
    CHECK(second.joint_errors_after == 2);

    for (const SwapRecord& rec : state.history) {
      CHECK(rec.us_after > rec.us_before);
      CHECK(rec.joint_errors_after < rec.joint_errors_before);
    }

    // the recorded tables trace the examined ensembles
    CHECK(state.tables[0].members == std::vector<std::size_t>{0, 1, 2});
    CHECK(state.tables[1].members == std::vector<std::size_t>{1, 2, 4});
    CHECK(state.tables[2].members == std::vector<std::size_t>{2, 4, 3});

    // replay reproduces the identical run
    const EnsembleState again = iterate_selection(pool, 3, set, {0.1}, cfg);
    CHECK(again.members == state.members);
    CHECK(again.history == state.history);
  }

  SECTION("max_iters truncates the walk") {
    SelectionConfig one = cfg;
    one.max_iters = 1;
    const EnsembleState state = iterate_selection(pool, 3, set, {0.1}, one);
    CHECK(state.members == std::vector<std::size_t>{1, 2, 4});
    CHECK(state.history.size() == 1);

    SelectionConfig zero = cfg;
    zero.max_iters = 0;
    const EnsembleState untouched = iterate_selection(pool, 3, set, {0.1}, zero);
    CHECK(untouched.members == std::vector<std::size_t>{0, 1, 2});
    CHECK(untouched.history.empty());
    CHECK(untouched.tables.empty());
  }

  SECTION("an exhausted global budget stops the loop and says so") {
    SelectionConfig strapped = cfg;
    strapped.timeout_seconds = 1e-12;
    const EnsembleState state = iterate_selection(pool, 3, set, {0.1}, strapped);
    CHECK(state.members == std::vector<std::size_t>{0, 1, 2});
    CHECK(state.history.empty());
    REQUIRE(state.notes.size() == 1);
    CHECK(state.notes[0].find("budget") != std::string::npos);
  }

  SECTION("joint errors count sat verdicts across pairs, points, and epsilons") {
    CHECK(joint_error_count(pool, {0, 1, 2}, set, {0.1}, cfg.backend) == 15);
    CHECK(joint_error_count(pool, {2, 3, 4}, set, {0.1}, cfg.backend) == 2);
    BackendConfig all_unsat;
    all_unsat.scripted = [](const MutualQuery&) { return VerdictStatus::unsat; };
    CHECK(joint_error_count(pool, {0, 1, 2}, set, {0.1}, all_unsat) == 0);
  }

  SECTION("degenerate pools are rejected") {
    CHECK_THROWS_AS(iterate_selection(pool, 1, set, {0.1}, cfg), std::invalid_argument);
    CHECK_THROWS_AS(iterate_selection(constant_pool(3), 3, set, {0.1}, cfg),
                    std::invalid_argument);
  }
}

TEST_CASE("a twin member is evicted first under the real verifier") {
  const TwinWorld& w = twin_world();
  const AgreementSet set = find_agreement_points(w.pool, w.validation, 6);
  const std::vector<double> eps = {0.08};

  BackendConfig backend;
  backend.kind = BackendKind::verifier;
  backend.mode = QueryMode::runner_up;

  // the twin pair shares every error one twin has, so its mutual-error count
  // tops every cross-network pair
  const MutualErrorTable table = compute_mutual_error_table(w.pool, set, eps, backend);
  REQUIRE(table_timeout_total(table) == 0);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = i + 1; j < 5; ++j)
      CHECK(table.at(0, 1, 0).sat >= table.at(i, j, 0).sat);

  SelectionConfig cfg;
  cfg.backend = backend;
  cfg.max_iters = 4;
  const EnsembleState state = iterate_selection(w.pool, 3, set, eps, cfg);

  REQUIRE(!state.history.empty());
  CHECK(state.history[0].removed == 0);  // the twin with the lower id goes first
  CHECK(state.notes.empty());
  for (const std::size_t id : state.members) CHECK(id != 0);
  for (const SwapRecord& rec : state.history) {
    CHECK(rec.us_after > rec.us_before);
    CHECK(rec.joint_errors_after < rec.joint_errors_before);
  }

  // the run is reproducible end to end
  const EnsembleState again = iterate_selection(w.pool, 3, set, eps, cfg);
  CHECK(again.members == state.members);
  CHECK(again.history == state.history);
}
