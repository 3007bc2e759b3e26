#pragma once

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ensel/scoring.hpp"

namespace ensel {

// ---------------------------------------------------------------------------
// Greedy ensemble improvement
// ---------------------------------------------------------------------------

// The member with the minimal epsilon-averaged uniqueness score; ties go to
// the lowest member id.
inline std::size_t weakest_member(const MutualErrorTable& table) {
  validate_table(table);
  std::size_t weakest = *std::min_element(table.members.begin(), table.members.end());
  double lowest = uniqueness_score_avg(table, weakest);
  for (const std::size_t id : table.members) {
    const double us = uniqueness_score_avg(table, id);
    if (us < lowest || (us == lowest && id < weakest)) {
      weakest = id;
      lowest = us;
    }
  }
  return weakest;
}

struct ReplacementChoice {
  std::size_t candidate = 0;
  double us = 0.0;  // the candidate's epsilon-averaged US in the prospective ensemble
};

// Scores every candidate inside the prospective ensemble (remaining members
// plus the candidate) and returns the one with the maximal epsilon-averaged
// uniqueness score, provided it strictly exceeds the incumbent's score.
// Ties go to the lowest candidate id. Returns nothing when no candidate
// clears the bar, which terminates the greedy loop.
inline std::optional<ReplacementChoice> best_replacement(
    const std::vector<Network>& pool, const std::vector<std::size_t>& remaining,
    const std::vector<std::size_t>& candidates, double incumbent_us,
    const AgreementSet& agreement, const std::vector<double>& eps_list,
    const BackendConfig& backend, std::size_t workers = 1, QueryCache* cache = nullptr) {
  if (remaining.empty())
    throw std::invalid_argument("best_replacement: no remaining members");
  for (const std::size_t cand : candidates)
    if (std::find(remaining.begin(), remaining.end(), cand) != remaining.end())
      throw std::invalid_argument("best_replacement: candidates must be disjoint from the ensemble");

  std::vector<std::size_t> order = candidates;
  std::sort(order.begin(), order.end());

  std::optional<ReplacementChoice> best;
  for (const std::size_t cand : order) {
    std::vector<std::size_t> prospective = remaining;
    prospective.push_back(cand);
    const MutualErrorTable table =
        compute_mutual_error_table(pool, prospective, agreement, eps_list, backend, workers, cache);
    const double us = uniqueness_score_avg(table, cand);
    if (us > incumbent_us && (!best || us > best->us)) best = ReplacementChoice{cand, us};
  }
  return best;
}

// Total number of joint errors an ensemble commits over the agreement set:
// the sum of sat verdicts across all pairs, points, and epsilons.
inline std::size_t joint_error_count(const std::vector<Network>& pool,
                                     const std::vector<std::size_t>& members,
                                     const AgreementSet& agreement,
                                     const std::vector<double>& eps_list,
                                     const BackendConfig& backend, std::size_t workers = 1,
                                     QueryCache* cache = nullptr) {
  return table_sat_total(
      compute_mutual_error_table(pool, members, agreement, eps_list, backend, workers, cache));
}

struct SwapRecord {
  std::size_t removed = 0;
  std::size_t inserted = 0;
  double us_before = 0.0;  // the removed member's averaged US in the old ensemble
  double us_after = 0.0;   // the inserted member's averaged US in the new ensemble
  std::size_t joint_errors_before = 0;
  std::size_t joint_errors_after = 0;

  friend bool operator==(const SwapRecord&, const SwapRecord&) = default;
};

struct EnsembleState {
  std::vector<std::size_t> members;
  std::vector<MutualErrorTable> tables;  // one per examined ensemble: initial, then after each swap
  std::vector<SwapRecord> history;
  std::vector<std::string> notes;  // audit remarks (timeout caveats, budget stops)
};

struct SelectionConfig {
  std::size_t max_iters = 16;
  double timeout_seconds = 0.0;  // global wall-clock budget; <= 0 disables
  BackendConfig backend{};
  std::size_t workers = 1;
};

// The greedy improvement loop: start from the first k pool members, then
// repeatedly evict the member with the lowest averaged uniqueness score and
// admit the best strictly-improving replacement from the rest of the pool.
// Stops when no candidate improves, on max_iters, or on the global budget.
//
// Every decided query is cached for the whole run, so each verdict is
// computed exactly once and reused consistently; under that regime an
// accepted swap provably lowers the joint-error count (the entering member
// contributes strictly fewer sat results than the evicted one did, and all
// other pairs keep their cached verdicts). The audit still recomputes the
// count after every swap and throws if the decrease ever fails, since that
// would mean the bookkeeping is broken. Tables containing timeouts get a
// note: a rerun with a different wall clock could decide borderline queries
// differently and replay a different history.
inline EnsembleState iterate_selection(const std::vector<Network>& pool, std::size_t k,
                                       const AgreementSet& agreement,
                                       const std::vector<double>& eps_list,
                                       const SelectionConfig& config = {}) {
  if (k < 2) throw std::invalid_argument("iterate_selection: k must be >= 2");
  if (pool.size() <= k)
    throw std::invalid_argument("iterate_selection: pool must be larger than the ensemble");

  EnsembleState state;
  state.members.resize(k);
  for (std::size_t i = 0; i < k; ++i) state.members[i] = i;
  if (config.max_iters == 0) return state;

  QueryCache cache;
  const auto t0 = std::chrono::steady_clock::now();
  const auto out_of_budget = [&] {
    if (config.timeout_seconds <= 0.0) return false;
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - t0;
    return elapsed.count() > config.timeout_seconds;
  };
  const auto note_timeouts = [&state](const MutualErrorTable& table) {
    const std::size_t undecided = table_timeout_total(table);
    if (undecided == 0) return;
    std::ostringstream os;
    os << "table " << state.tables.size() << " holds " << undecided
       << " timeout verdicts; replays near the budget boundary may diverge";
    state.notes.push_back(os.str());
  };

  MutualErrorTable table = compute_mutual_error_table(pool, state.members, agreement, eps_list,
                                                      config.backend, config.workers, &cache);
  note_timeouts(table);
  state.tables.push_back(table);

  for (std::size_t iter = 0; iter < config.max_iters; ++iter) {
    if (out_of_budget()) {
      state.notes.push_back("global budget exhausted; selection stopped early");
      break;
    }

    const std::size_t weakest = weakest_member(table);
    const double incumbent_us = uniqueness_score_avg(table, weakest);

    std::vector<std::size_t> remaining;
    remaining.reserve(k - 1);
    for (const std::size_t id : state.members)
      if (id != weakest) remaining.push_back(id);

    std::vector<std::size_t> candidates;
    for (std::size_t id = 0; id < pool.size(); ++id)
      if (std::find(state.members.begin(), state.members.end(), id) == state.members.end())
        candidates.push_back(id);

    const std::optional<ReplacementChoice> choice =
        best_replacement(pool, remaining, candidates, incumbent_us, agreement, eps_list,
                         config.backend, config.workers, &cache);
    if (!choice) break;

    std::vector<std::size_t> next_members = remaining;
    next_members.push_back(choice->candidate);
    const MutualErrorTable next_table = compute_mutual_error_table(
        pool, next_members, agreement, eps_list, config.backend, config.workers, &cache);

    SwapRecord record;
    record.removed = weakest;
    record.inserted = choice->candidate;
    record.us_before = incumbent_us;
    record.us_after = uniqueness_score_avg(next_table, choice->candidate);
    record.joint_errors_before = table_sat_total(table);
    record.joint_errors_after = table_sat_total(next_table);
    if (record.joint_errors_after >= record.joint_errors_before) {
      std::ostringstream os;
      os << "joint-error audit failed: swap " << record.removed << " -> " << record.inserted
         << " moved the count from " << record.joint_errors_before << " to "
         << record.joint_errors_after;
      throw std::logic_error(os.str());
    }

    state.members = std::move(next_members);
    table = next_table;
    note_timeouts(table);
    state.tables.push_back(table);
    state.history.push_back(record);
  }
  return state;
}

}  // namespace ensel
