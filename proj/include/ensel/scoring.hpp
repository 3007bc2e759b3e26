#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "ensel/attacks.hpp"
#include "ensel/data.hpp"
#include "ensel/nn.hpp"
#include "ensel/parallel.hpp"
#include "ensel/verifier.hpp"

namespace ensel {

// ---------------------------------------------------------------------------
// Agreement points
// ---------------------------------------------------------------------------

// A validation point on which every pool member predicts the same label.
struct AgreementPoint {
  Vector x;
  int label = 0;           // the shared prediction (consensus label)
  std::size_t source = 0;  // index of the point in the source dataset
};

struct AgreementSet {
  std::vector<AgreementPoint> points;
  int label_filter = -1;  // -1 when no label filter was applied
  bool require_correct = true;

  std::size_t size() const { return points.size(); }
};

// Thrown when a dataset runs out before m qualifying points are found.
class AgreementShortageError : public std::runtime_error {
 public:
  AgreementShortageError(std::size_t found, std::size_t requested)
      : std::runtime_error(format(found, requested)), found_(found), requested_(requested) {}

  std::size_t found() const { return found_; }
  std::size_t requested() const { return requested_; }

 private:
  static std::string format(std::size_t found, std::size_t requested) {
    std::ostringstream os;
    os << "agreement-point shortage: only " << found << " qualifying points for a request of "
       << requested;
    return os.str();
  }

  std::size_t found_;
  std::size_t requested_;
};

// Scans `data` in order and keeps the first m points on which every pool
// member predicts the same label. require_correct additionally demands that
// the shared prediction match the dataset label; label_filter (when >= 0)
// keeps only points whose consensus label equals the filter.
inline AgreementSet find_agreement_points(const std::vector<Network>& pool, const Dataset& data,
                                          std::size_t m, int label_filter = -1,
                                          bool require_correct = true) {
  if (pool.empty()) throw std::invalid_argument("find_agreement_points: empty pool");
  if (m == 0) throw std::invalid_argument("find_agreement_points: m must be >= 1");
  AgreementSet set;
  set.label_filter = label_filter;
  set.require_correct = require_correct;
  for (std::size_t idx = 0; idx < data.size() && set.points.size() < m; ++idx) {
    const Vector& x = data.images[idx];
    const int consensus = classify(pool.front(), x);
    if (require_correct && consensus != data.labels[idx]) continue;
    if (label_filter >= 0 && consensus != label_filter) continue;
    bool unanimous = true;
    for (std::size_t n = 1; n < pool.size() && unanimous; ++n)
      unanimous = classify(pool[n], x) == consensus;
    if (!unanimous) continue;
    set.points.push_back({x, consensus, idx});
  }
  if (set.points.size() < m) throw AgreementShortageError(set.points.size(), m);
  return set;
}

// ---------------------------------------------------------------------------
// Query backends
// ---------------------------------------------------------------------------

enum class BackendKind { verifier, ga1, ga2, ga3 };

inline const char* backend_kind_name(BackendKind kind) {
  switch (kind) {
    case BackendKind::verifier: return "verifier";
    case BackendKind::ga1: return "ga1";
    case BackendKind::ga2: return "ga2";
    case BackendKind::ga3: return "ga3";
  }
  throw std::invalid_argument("backend_kind_name: unknown kind");
}

inline BackendKind parse_backend_kind(const std::string& name) {
  if (name == "verifier") return BackendKind::verifier;
  if (name == "ga1") return BackendKind::ga1;
  if (name == "ga2") return BackendKind::ga2;
  if (name == "ga3") return BackendKind::ga3;
  throw std::invalid_argument("parse_backend_kind: unknown backend '" + name + "'");
}

// One mutual-error query: does the member pair (a, b) share an error inside
// the epsilon-ball around an agreement point?
struct MutualQuery {
  std::size_t a = 0;       // member ids with a < b
  std::size_t b = 0;
  std::size_t point = 0;   // index into the agreement set
  double epsilon = 0.0;

  friend bool operator==(const MutualQuery&, const MutualQuery&) = default;
};

struct BackendConfig {
  BackendKind kind = BackendKind::verifier;
  QueryMode mode = QueryMode::runner_up;  // adversarial-label restriction for verifier queries
  SolveConfig solve{};                    // verifier budget per query
  std::size_t attack_steps = 10;          // iteration budget for ga2/ga3
  // Test seam: when set, consulted instead of the verifier or attack.
  // Must be a pure function of the query.
  std::function<VerdictStatus(const MutualQuery&)> scripted;
};

inline std::string backend_tag(const BackendConfig& backend) {
  return backend.scripted ? "scripted" : backend_kind_name(backend.kind);
}

// Decides a single mutual-error query with the configured backend. The
// verifier gives a definite verdict (or a timeout); attack backends report
// sat when the attack finds a joint misclassification and unsat otherwise,
// so their unsat verdicts are best-effort rather than proofs.
inline Verdict decide_mutual(const std::vector<Network>& pool, const AgreementSet& agreement,
                             const MutualQuery& query, const BackendConfig& backend) {
  if (backend.scripted) {
    Verdict v;
    v.status = backend.scripted(query);
    return v;
  }
  const AgreementPoint& pt = agreement.points.at(query.point);
  const Network& a = pool.at(query.a);
  const Network& b = pool.at(query.b);
  if (backend.kind == BackendKind::verifier)
    return solve(encode_mutual_error_query(a, b, pt.x, query.epsilon, backend.mode), backend.solve);

  AttackConfig cfg;
  cfg.epsilon = query.epsilon;
  cfg.steps = backend.attack_steps;
  const AttackKind kind = backend.kind == BackendKind::ga1   ? AttackKind::ga1
                          : backend.kind == BackendKind::ga2 ? AttackKind::ga2
                                                             : AttackKind::ga3;
  const AttackResult res = run_attack(kind, {a, b}, pt.x, pt.label, cfg);
  Verdict v;
  v.status = res.success ? VerdictStatus::sat : VerdictStatus::unsat;
  if (res.success) v.witness = res.point;
  return v;
}

// ---------------------------------------------------------------------------
// Mutual-error tables
// ---------------------------------------------------------------------------

struct PairCounts {
  std::size_t sat = 0;
  std::size_t unsat = 0;
  std::size_t timeout = 0;

  std::size_t total() const { return sat + unsat + timeout; }

  friend bool operator==(const PairCounts&, const PairCounts&) = default;
};

using PairKey = std::pair<std::size_t, std::size_t>;

inline PairKey make_pair_key(std::size_t i, std::size_t j) {
  if (i == j) throw std::invalid_argument("make_pair_key: a pair needs two distinct members");
  return i < j ? PairKey{i, j} : PairKey{j, i};
}

// Verdict counts for every unordered member pair at every epsilon, over a
// fixed agreement set of size m. Counts for each (pair, epsilon) cell sum
// to m.
struct MutualErrorTable {
  std::vector<std::size_t> members;  // member ids, as passed to the builder
  std::vector<double> eps_list;
  std::size_t m = 0;
  std::string backend;  // tag of the backend that produced the verdicts
  QueryMode mode = QueryMode::runner_up;
  std::map<PairKey, std::vector<PairCounts>> counts;  // per pair, indexed like eps_list

  const PairCounts& at(std::size_t i, std::size_t j, std::size_t eps_index) const {
    const auto it = counts.find(make_pair_key(i, j));
    if (it == counts.end()) throw std::out_of_range("MutualErrorTable::at: pair not in table");
    return it->second.at(eps_index);
  }

  PairCounts& at(std::size_t i, std::size_t j, std::size_t eps_index) {
    const auto it = counts.find(make_pair_key(i, j));
    if (it == counts.end()) throw std::out_of_range("MutualErrorTable::at: pair not in table");
    return it->second.at(eps_index);
  }

  bool has_member(std::size_t id) const {
    for (const std::size_t mid : members)
      if (mid == id) return true;
    return false;
  }

  friend bool operator==(const MutualErrorTable&, const MutualErrorTable&) = default;
};

// Exact-match epsilon lookup. Tables are always addressed with the same
// epsilon values they were built from, so exact comparison is safe.
inline std::size_t eps_index(const MutualErrorTable& table, double epsilon) {
  for (std::size_t e = 0; e < table.eps_list.size(); ++e)
    if (table.eps_list[e] == epsilon) return e;
  throw std::out_of_range("eps_index: epsilon not in table");
}

inline void validate_table(const MutualErrorTable& table) {
  if (table.members.size() < 2) throw std::invalid_argument("table: need at least two members");
  if (table.eps_list.empty()) throw std::invalid_argument("table: empty epsilon list");
  if (table.m == 0) throw std::invalid_argument("table: m must be >= 1");
  for (std::size_t i = 0; i < table.members.size(); ++i)
    for (std::size_t j = i + 1; j < table.members.size(); ++j) {
      const auto it = table.counts.find(make_pair_key(table.members[i], table.members[j]));
      if (it == table.counts.end()) throw std::invalid_argument("table: missing pair counts");
      if (it->second.size() != table.eps_list.size())
        throw std::invalid_argument("table: pair counts do not cover the epsilon list");
      for (const PairCounts& c : it->second)
        if (c.total() != table.m) throw std::invalid_argument("table: cell counts do not sum to m");
    }
}

// Number of queries needed to fill a table: one per unordered pair, per
// agreement point, per epsilon.
inline std::size_t query_plan_count(std::size_t k, std::size_t m, std::size_t eps_count) {
  return k * (k - 1) / 2 * m * eps_count;
}

// Cache of decided queries. Epsilons are compared exactly, which is sound
// because callers address queries with the same epsilon-list values
// throughout a run. The backend tag and mode are part of the key so verdicts
// from different decision procedures never alias.
struct QueryKey {
  std::size_t a = 0;
  std::size_t b = 0;
  std::size_t point = 0;
  double epsilon = 0.0;
  QueryMode mode = QueryMode::runner_up;
  std::string backend;

  bool operator<(const QueryKey& o) const {
    return std::tie(a, b, point, epsilon, mode, backend) <
           std::tie(o.a, o.b, o.point, o.epsilon, o.mode, o.backend);
  }
};

using QueryCache = std::map<QueryKey, VerdictStatus>;

namespace detail {

inline void check_members(const std::vector<Network>& pool, const std::vector<std::size_t>& members) {
  if (members.size() < 2)
    throw std::invalid_argument("mutual-error table: need at least two members");
  for (std::size_t i = 0; i < members.size(); ++i) {
    if (members[i] >= pool.size())
      throw std::invalid_argument("mutual-error table: member id out of range");
    for (std::size_t j = i + 1; j < members.size(); ++j)
      if (members[i] == members[j])
        throw std::invalid_argument("mutual-error table: duplicate member id");
  }
}

inline void check_eps_list(const std::vector<double>& eps_list) {
  if (eps_list.empty()) throw std::invalid_argument("mutual-error table: empty epsilon list");
  for (std::size_t i = 0; i < eps_list.size(); ++i) {
    if (!(eps_list[i] > 0.0))
      throw std::invalid_argument("mutual-error table: epsilon must be positive");
    for (std::size_t j = i + 1; j < eps_list.size(); ++j)
      if (eps_list[i] == eps_list[j])
        throw std::invalid_argument("mutual-error table: duplicate epsilon");
  }
}

inline void check_agreement(const std::vector<Network>& pool, const std::vector<std::size_t>& members,
                            const AgreementSet& agreement) {
  if (agreement.points.empty())
    throw std::invalid_argument("mutual-error table: empty agreement set");
  for (const std::size_t id : members)
    for (std::size_t p = 0; p < agreement.points.size(); ++p)
      if (classify(pool[id], agreement.points[p].x) != agreement.points[p].label) {
        std::ostringstream os;
        os << "mutual-error table: member " << id << " disagrees with agreement point " << p;
        throw std::invalid_argument(os.str());
      }
}

}  // namespace detail

// Fills a verdict table for every unordered pair of `members` (ids into
// `pool`), every agreement point, and every epsilon. Queries are independent
// and dispatched in parallel over `workers`. When a cache is supplied,
// previously decided queries are reused and fresh verdicts are added; the
// result is identical to a cache-less run because queries are deterministic.
inline MutualErrorTable compute_mutual_error_table(const std::vector<Network>& pool,
                                                   const std::vector<std::size_t>& members,
                                                   const AgreementSet& agreement,
                                                   const std::vector<double>& eps_list,
                                                   const BackendConfig& backend,
                                                   std::size_t workers = 1,
                                                   QueryCache* cache = nullptr) {
  detail::check_members(pool, members);
  detail::check_eps_list(eps_list);
  detail::check_agreement(pool, members, agreement);
  if (workers == 0) throw std::invalid_argument("mutual-error table: workers must be >= 1");

  const std::string tag = backend_tag(backend);
  MutualErrorTable table;
  table.members = members;
  table.eps_list = eps_list;
  table.m = agreement.size();
  table.backend = tag;
  table.mode = backend.mode;

  std::vector<MutualQuery> jobs;
  jobs.reserve(query_plan_count(members.size(), agreement.size(), eps_list.size()));
  for (std::size_t i = 0; i < members.size(); ++i)
    for (std::size_t j = i + 1; j < members.size(); ++j) {
      const PairKey key = make_pair_key(members[i], members[j]);
      table.counts[key] = std::vector<PairCounts>(eps_list.size());
      for (std::size_t p = 0; p < agreement.size(); ++p)
        for (const double eps : eps_list) jobs.push_back({key.first, key.second, p, eps});
    }

  std::vector<VerdictStatus> verdicts(jobs.size());
  std::vector<std::size_t> pending;
  pending.reserve(jobs.size());
  for (std::size_t q = 0; q < jobs.size(); ++q) {
    const MutualQuery& job = jobs[q];
    if (cache) {
      const auto hit = cache->find({job.a, job.b, job.point, job.epsilon, backend.mode, tag});
      if (hit != cache->end()) {
        verdicts[q] = hit->second;
        continue;
      }
    }
    pending.push_back(q);
  }

  parallel_for(pending.size(), workers, [&](std::size_t n) {
    const std::size_t q = pending[n];
    verdicts[q] = decide_mutual(pool, agreement, jobs[q], backend).status;
  });

  if (cache)
    for (const std::size_t q : pending) {
      const MutualQuery& job = jobs[q];
      (*cache)[{job.a, job.b, job.point, job.epsilon, backend.mode, tag}] = verdicts[q];
    }

  for (std::size_t q = 0; q < jobs.size(); ++q) {
    const MutualQuery& job = jobs[q];
    PairCounts& cell = table.at(job.a, job.b, eps_index(table, job.epsilon));
    switch (verdicts[q]) {
      case VerdictStatus::sat: ++cell.sat; break;
      case VerdictStatus::unsat: ++cell.unsat; break;
      case VerdictStatus::timeout: ++cell.timeout; break;
    }
  }
  return table;
}

// Convenience overload: the whole pool, ids 0..k-1.
inline MutualErrorTable compute_mutual_error_table(const std::vector<Network>& pool,
                                                   const AgreementSet& agreement,
                                                   const std::vector<double>& eps_list,
                                                   const BackendConfig& backend,
                                                   std::size_t workers = 1,
                                                   QueryCache* cache = nullptr) {
  std::vector<std::size_t> members(pool.size());
  for (std::size_t i = 0; i < members.size(); ++i) members[i] = i;
  return compute_mutual_error_table(pool, members, agreement, eps_list, backend, workers, cache);
}

// ---------------------------------------------------------------------------
// Scores
// ---------------------------------------------------------------------------

// Fraction of agreement balls in which the pair shares an error. Timeouts
// count as no-mutual-error-found: they stay out of the numerator and m is
// not rescaled, so undecided queries can only make a pair look safer, never
// more error-prone.
inline double me_score(const MutualErrorTable& table, std::size_t i, std::size_t j,
                       std::size_t eps_idx) {
  return static_cast<double>(table.at(i, j, eps_idx).sat) / static_cast<double>(table.m);
}

// Total sat count across the member's pairs at one epsilon.
inline std::size_t member_sat_total(const MutualErrorTable& table, std::size_t member,
                                    std::size_t eps_idx) {
  if (!table.has_member(member))
    throw std::out_of_range("member_sat_total: member not in table");
  std::size_t total = 0;
  for (const std::size_t other : table.members)
    if (other != member) total += table.at(member, other, eps_idx).sat;
  return total;
}

// US = 1 - (sum of the member's pair sat counts) / (m * (n - 1)).
inline double uniqueness_score(const MutualErrorTable& table, std::size_t member,
                               std::size_t eps_idx) {
  const std::size_t partners = table.members.size() - 1;
  return 1.0 - static_cast<double>(member_sat_total(table, member, eps_idx)) /
                   (static_cast<double>(table.m) * static_cast<double>(partners));
}

// Arithmetic mean of the per-epsilon uniqueness scores.
inline double uniqueness_score_avg(const MutualErrorTable& table, std::size_t member) {
  double sum = 0.0;
  for (std::size_t e = 0; e < table.eps_list.size(); ++e)
    sum += uniqueness_score(table, member, e);
  return sum / static_cast<double>(table.eps_list.size());
}

inline std::size_t table_sat_total(const MutualErrorTable& table) {
  std::size_t total = 0;
  for (const auto& [key, cells] : table.counts)
    for (const PairCounts& c : cells) total += c.sat;
  return total;
}

inline std::size_t table_timeout_total(const MutualErrorTable& table) {
  std::size_t total = 0;
  for (const auto& [key, cells] : table.counts)
    for (const PairCounts& c : cells) total += c.timeout;
  return total;
}

}  // namespace ensel
