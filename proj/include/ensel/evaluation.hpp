#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ensel/composition.hpp"
#include "ensel/data.hpp"
#include "ensel/io.hpp"
#include "ensel/parallel.hpp"
#include "ensel/rng.hpp"
#include "ensel/scoring.hpp"
#include "ensel/selection.hpp"
#include "ensel/verifier.hpp"

namespace ensel {

// ---------------------------------------------------------------------------
// Held-out sampling
// ---------------------------------------------------------------------------

struct SamplePoint {
  Vector x;
  int label = 0;
  std::size_t source = 0;  // dataset index

  friend bool operator==(const SamplePoint&, const SamplePoint&) = default;
};

// Draws `count` distinct points from the dataset, seed-controlled and with no
// label or agreement filtering. Sources come back in ascending dataset order
// so reports are stable.
inline std::vector<SamplePoint> sample_test_points(const Dataset& data, std::size_t count,
                                                   std::uint64_t seed) {
  if (count == 0) throw std::invalid_argument("sample_test_points: count must be >= 1");
  if (count > data.size())
    throw std::invalid_argument("sample_test_points: asked for " + std::to_string(count) +
                                " points, dataset holds " + std::to_string(data.size()));
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = 0; i < count; ++i)
    std::swap(idx[i], idx[i + rng.index(idx.size() - i)]);
  idx.resize(count);
  std::sort(idx.begin(), idx.end());

  std::vector<SamplePoint> sample;
  sample.reserve(count);
  for (const std::size_t s : idx) sample.push_back({data.images[s], data.labels[s], s});
  return sample;
}

// ---------------------------------------------------------------------------
// Robust accuracy of an averaging ensemble
// ---------------------------------------------------------------------------

struct EpsOutcomes {
  std::size_t robust = 0;      // unsat
  std::size_t non_robust = 0;  // sat, including points the ensemble misclassifies outright
  std::size_t timeout = 0;

  std::size_t total() const { return robust + non_robust + timeout; }

  friend bool operator==(const EpsOutcomes&, const EpsOutcomes&) = default;
};

struct RobustAccuracyReport {
  std::string ensemble_id;
  std::vector<std::size_t> members;
  QueryMode mode = QueryMode::runner_up;
  std::vector<double> eps_list;
  std::vector<std::size_t> sources;                  // sampled dataset indices
  std::vector<bool> misclassified;                   // per sample: wrong at the point itself
  std::vector<std::vector<VerdictStatus>> statuses;  // [sample][eps]
  std::vector<EpsOutcomes> counts;                   // [eps]

  friend bool operator==(const RobustAccuracyReport&, const RobustAccuracyReport&) = default;
};

// Fraction of decided queries that were robust; timeouts stay out of both
// numerator and denominator. NaN when nothing was decided.
inline double robust_fraction(const RobustAccuracyReport& report, std::size_t eps_idx) {
  const EpsOutcomes& c = report.counts.at(eps_idx);
  const std::size_t decided = c.robust + c.non_robust;
  if (decided == 0) return std::numeric_limits<double>::quiet_NaN();
  return static_cast<double>(c.robust) / static_cast<double>(decided);
}

inline std::string ensemble_label(const std::vector<std::size_t>& members) {
  std::string id;
  for (std::size_t i = 0; i < members.size(); ++i) {
    if (i) id += '+';
    id += std::to_string(members[i]);
  }
  return id;
}

// Certifies each sampled point at each epsilon against the logit-averaging
// composite of the listed members. A point the averaged ensemble already
// misclassifies is recorded as non-robust at every epsilon and flagged, with
// no queries spent on it. Single-member lists evaluate the member directly,
// which is the same network the one-block average would be.
inline RobustAccuracyReport robust_accuracy(const std::vector<Network>& pool,
                                            const std::vector<std::size_t>& members,
                                            const std::vector<SamplePoint>& sample,
                                            const std::vector<double>& eps_list, QueryMode mode,
                                            const SolveConfig& solve_cfg = {},
                                            std::size_t workers = 1, std::string ensemble_id = "") {
  if (members.empty()) throw std::invalid_argument("robust_accuracy: empty member list");
  for (std::size_t i = 0; i < members.size(); ++i) {
    if (members[i] >= pool.size())
      throw std::invalid_argument("robust_accuracy: member id out of range");
    for (std::size_t j = i + 1; j < members.size(); ++j)
      if (members[i] == members[j])
        throw std::invalid_argument("robust_accuracy: duplicate member id");
  }
  if (sample.empty()) throw std::invalid_argument("robust_accuracy: empty sample");
  detail::check_eps_list(eps_list);

  CompositeNetwork composite;
  const Network* net = nullptr;
  if (members.size() == 1) {
    net = &pool[members[0]];
  } else {
    std::vector<const Network*> ptrs;
    for (const std::size_t id : members) ptrs.push_back(&pool[id]);
    composite = compose_average_ensemble(ptrs);
    net = &composite.net;
  }

  RobustAccuracyReport report;
  report.ensemble_id = ensemble_id.empty() ? ensemble_label(members) : std::move(ensemble_id);
  report.members = members;
  report.mode = mode;
  report.eps_list = eps_list;
  report.misclassified.resize(sample.size(), false);
  report.statuses.assign(sample.size(), std::vector<VerdictStatus>(eps_list.size()));

  std::vector<std::pair<std::size_t, std::size_t>> jobs;  // (sample, eps) pending solves
  for (std::size_t s = 0; s < sample.size(); ++s) {
    report.sources.push_back(sample[s].source);
    if (classify(*net, sample[s].x) != sample[s].label) {
      report.misclassified[s] = true;
      for (std::size_t e = 0; e < eps_list.size(); ++e)
        report.statuses[s][e] = VerdictStatus::sat;
    } else {
      for (std::size_t e = 0; e < eps_list.size(); ++e) jobs.emplace_back(s, e);
    }
  }

  parallel_for(jobs.size(), workers, [&](std::size_t j) {
    const auto [s, e] = jobs[j];
    const Verdict v =
        solve(encode_robustness_query(*net, sample[s].x, sample[s].label, eps_list[e], mode),
              solve_cfg);
    report.statuses[s][e] = v.status;
  });

  report.counts.resize(eps_list.size());
  for (std::size_t s = 0; s < sample.size(); ++s)
    for (std::size_t e = 0; e < eps_list.size(); ++e) {
      EpsOutcomes& c = report.counts[e];
      switch (report.statuses[s][e]) {
        case VerdictStatus::unsat: ++c.robust; break;
        case VerdictStatus::sat: ++c.non_robust; break;
        case VerdictStatus::timeout: ++c.timeout; break;
      }
    }
  return report;
}

// ---------------------------------------------------------------------------
// Backend comparison on a shared query set
// ---------------------------------------------------------------------------

struct BackendComparison {
  std::vector<std::size_t> members;
  std::vector<double> eps_list;
  std::size_t m = 0;
  std::size_t query_count = 0;              // queries dispatched per backend
  std::vector<std::string> backend_tags;    // one per backend, input order
  std::vector<MutualErrorTable> tables;     // one per backend
  std::vector<std::size_t> sat_totals;      // one per backend
  std::vector<std::size_t> timeout_totals;  // one per backend
  bool audited = false;                     // attack verdicts checked against a complete verifier
  std::size_t audit_checked = 0;     // attack sat verdicts the verifier decided
  std::size_t audit_violations = 0;  // attack sat where the verifier proved unsat
};

// Runs the identical query grid (every pair x point x epsilon) through every
// backend and tallies sat counts. When the backend list holds both attacks
// and a verifier, each attack success is audited against the verifier: a
// found counterexample is a constructive proof, so a verifier unsat on the
// same query is a violation. The audit only makes sense against a verifier
// that searches all adversarial labels, hence the full-mode requirement.
inline BackendComparison compare_backends(const std::vector<Network>& pool,
                                          const std::vector<std::size_t>& members,
                                          const AgreementSet& agreement,
                                          const std::vector<double>& eps_list,
                                          const std::vector<BackendConfig>& backends,
                                          std::size_t workers = 1) {
  detail::check_members(pool, members);
  detail::check_eps_list(eps_list);
  detail::check_agreement(pool, members, agreement);
  if (backends.empty()) throw std::invalid_argument("compare_backends: no backends");

  bool attacks_present = false;
  std::optional<std::size_t> full_verifier;
  for (std::size_t b = 0; b < backends.size(); ++b) {
    if (backends[b].kind != BackendKind::verifier) {
      attacks_present = true;
    } else if (!full_verifier && backends[b].mode == QueryMode::full) {
      full_verifier = b;
    }
  }
  bool any_verifier = false;
  for (const BackendConfig& b : backends) any_verifier |= b.kind == BackendKind::verifier;
  if (attacks_present && any_verifier && !full_verifier)
    throw std::invalid_argument(
        "compare_backends: auditing attacks needs a full-mode verifier backend");

  std::vector<PairKey> pairs;
  for (std::size_t i = 0; i < members.size(); ++i)
    for (std::size_t j = i + 1; j < members.size(); ++j)
      pairs.push_back(make_pair_key(members[i], members[j]));
  std::sort(pairs.begin(), pairs.end());

  const std::size_t m = agreement.points.size();
  const std::size_t per_pair = m * eps_list.size();
  const std::size_t query_count = pairs.size() * per_pair;
  auto query_at = [&](std::size_t flat) {
    MutualQuery q;
    const PairKey& pk = pairs[flat / per_pair];
    q.a = pk.first;
    q.b = pk.second;
    q.point = (flat % per_pair) / eps_list.size();
    q.epsilon = eps_list[flat % eps_list.size()];
    return q;
  };

  BackendComparison cmp;
  cmp.members = members;
  cmp.eps_list = eps_list;
  cmp.m = m;
  cmp.query_count = query_count;

  std::vector<std::vector<VerdictStatus>> statuses(backends.size());
  for (std::size_t b = 0; b < backends.size(); ++b) {
    statuses[b].resize(query_count);
    parallel_for(query_count, workers, [&](std::size_t q) {
      statuses[b][q] = decide_mutual(pool, agreement, query_at(q), backends[b]).status;
    });

    MutualErrorTable table;
    table.members = members;
    table.eps_list = eps_list;
    table.m = m;
    table.backend = backend_tag(backends[b]);
    table.mode = backends[b].mode;
    for (const PairKey& pk : pairs) table.counts[pk].resize(eps_list.size());
    for (std::size_t q = 0; q < query_count; ++q) {
      const MutualQuery mq = query_at(q);
      PairCounts& cell = table.at(mq.a, mq.b, q % eps_list.size());
      switch (statuses[b][q]) {
        case VerdictStatus::sat: ++cell.sat; break;
        case VerdictStatus::unsat: ++cell.unsat; break;
        case VerdictStatus::timeout: ++cell.timeout; break;
      }
    }
    validate_table(table);
    cmp.backend_tags.push_back(table.backend);
    cmp.sat_totals.push_back(table_sat_total(table));
    cmp.timeout_totals.push_back(table_timeout_total(table));
    cmp.tables.push_back(std::move(table));
  }

  if (attacks_present && full_verifier) {
    cmp.audited = true;
    const std::vector<VerdictStatus>& ref = statuses[*full_verifier];
    for (std::size_t b = 0; b < backends.size(); ++b) {
      if (backends[b].kind == BackendKind::verifier) continue;
      for (std::size_t q = 0; q < query_count; ++q) {
        if (statuses[b][q] != VerdictStatus::sat) continue;
        if (ref[q] == VerdictStatus::timeout) continue;
        ++cmp.audit_checked;
        if (ref[q] == VerdictStatus::unsat) ++cmp.audit_violations;
      }
    }
  }
  return cmp;
}

// ---------------------------------------------------------------------------
// Report emission
// ---------------------------------------------------------------------------

struct ReportInputs {
  std::vector<MutualErrorTable> tables;
  std::vector<RobustAccuracyReport> robustness;
  std::vector<SwapRecord> history;
  std::vector<std::string> notes;  // free-form caveats, e.g. from selection
  std::optional<BackendComparison> comparison;
};

inline constexpr const char* kRobustSeriesHeader = "ensemble_id,epsilon,robust,non_robust,timeout";

inline void write_robust_series_csv(std::ostream& out,
                                    const std::vector<RobustAccuracyReport>& reports) {
  out << kRobustSeriesHeader << '\n';
  for (const RobustAccuracyReport& r : reports)
    for (std::size_t e = 0; e < r.eps_list.size(); ++e)
      out << csv_join({r.ensemble_id, format_double(r.eps_list[e]),
                       std::to_string(r.counts[e].robust), std::to_string(r.counts[e].non_robust),
                       std::to_string(r.counts[e].timeout)})
          << '\n';
}

inline void save_robust_series_csv(const std::string& path,
                                   const std::vector<RobustAccuracyReport>& reports) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_robust_series_csv: cannot open " + path);
  write_robust_series_csv(out, reports);
  if (!out) throw std::runtime_error("save_robust_series_csv: write failed for " + path);
}

// Rebuilds the aggregate half of the reports (ids, epsilons, counts); the
// per-sample verdicts are not stored in the series CSV and stay empty.
inline std::vector<RobustAccuracyReport> read_robust_series_csv(std::istream& in,
                                                                const std::string& origin = "<stream>") {
  const auto rows = detail::read_csv(in, kRobustSeriesHeader, origin);
  std::vector<RobustAccuracyReport> reports;
  for (const auto& row : rows) {
    if (reports.empty() || reports.back().ensemble_id != row[0]) {
      for (const RobustAccuracyReport& r : reports)
        if (r.ensemble_id == row[0])
          throw std::runtime_error(origin + ": ensemble rows are not grouped");
      reports.emplace_back();
      reports.back().ensemble_id = row[0];
    }
    RobustAccuracyReport& r = reports.back();
    r.eps_list.push_back(parse_double(row[1], origin + " epsilon"));
    EpsOutcomes c;
    c.robust = detail::row_count(row, 2, origin);
    c.non_robust = detail::row_count(row, 3, origin);
    c.timeout = detail::row_count(row, 4, origin);
    r.counts.push_back(c);
  }
  return reports;
}

inline std::vector<RobustAccuracyReport> load_robust_series_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_robust_series_csv: cannot open " + path);
  return read_robust_series_csv(in, path);
}

namespace detail {

inline void write_uniqueness_csv(std::ostream& out, const MutualErrorTable& table) {
  out << "member,epsilon,sat,us\n";
  for (const std::size_t member : table.members)
    for (std::size_t e = 0; e < table.eps_list.size(); ++e)
      out << csv_join({std::to_string(member), format_double(table.eps_list[e]),
                       std::to_string(member_sat_total(table, member, e)),
                       format_double(uniqueness_score(table, member, e))})
          << '\n';
}

inline std::string fixed2(double v) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(2);
  os << v;
  return os.str();
}

inline std::string fixed4(double v) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(4);
  os << v;
  return os.str();
}

// Grouped bar chart: one group per epsilon, one bar per ensemble, bar height
// = robust fraction over decided queries.
inline void write_robustness_svg(std::ostream& out,
                                 const std::vector<RobustAccuracyReport>& reports) {
  static const char* palette[] = {"#4472c4", "#ed7d31", "#70ad47", "#ffc000", "#7030a0", "#c00000"};
  const std::size_t palette_size = sizeof(palette) / sizeof(palette[0]);
  const std::vector<double>& eps = reports.at(0).eps_list;

  const double bar_w = 22.0, gap = 28.0, plot_h = 200.0, left = 60.0, top = 30.0;
  const double group_w = bar_w * static_cast<double>(reports.size()) + gap;
  const double width = left + group_w * static_cast<double>(eps.size()) + 40.0;
  const double legend_h = 22.0 * static_cast<double>(reports.size());
  const double height = top + plot_h + 60.0 + legend_h;

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << left << "\" y=\"18\" font-family=\"sans-serif\" font-size=\"13\">"
      << "robust accuracy (decided queries)</text>\n";

  // axes and horizontal grid lines at 0, 0.25, ..., 1
  for (int g = 0; g <= 4; ++g) {
    const double frac = 0.25 * g;
    const double y = top + plot_h * (1.0 - frac);
    out << "<line x1=\"" << left << "\" y1=\"" << y << "\" x2=\"" << (width - 20.0) << "\" y2=\""
        << y << "\" stroke=\"#dddddd\"/>\n";
    out << "<text x=\"" << (left - 8.0) << "\" y=\"" << (y + 4.0)
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << fixed2(frac)
        << "</text>\n";
  }

  for (std::size_t e = 0; e < eps.size(); ++e) {
    const double gx = left + group_w * static_cast<double>(e) + gap / 2.0;
    for (std::size_t r = 0; r < reports.size(); ++r) {
      const double frac = robust_fraction(reports[r], e);
      const double h = std::isnan(frac) ? 0.0 : plot_h * frac;
      const double x = gx + bar_w * static_cast<double>(r);
      out << "<rect x=\"" << x << "\" y=\"" << (top + plot_h - h) << "\" width=\"" << (bar_w - 3.0)
          << "\" height=\"" << h << "\" fill=\"" << palette[r % palette_size] << "\"/>\n";
    }
    out << "<text x=\"" << (gx + bar_w * static_cast<double>(reports.size()) / 2.0) << "\" y=\""
        << (top + plot_h + 18.0)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">eps "
        << format_double(eps[e]) << "</text>\n";
  }

  for (std::size_t r = 0; r < reports.size(); ++r) {
    const double y = top + plot_h + 40.0 + 22.0 * static_cast<double>(r);
    out << "<rect x=\"" << left << "\" y=\"" << (y - 10.0)
        << "\" width=\"12\" height=\"12\" fill=\"" << palette[r % palette_size] << "\"/>\n";
    out << "<text x=\"" << (left + 18.0) << "\" y=\"" << y
        << "\" font-family=\"sans-serif\" font-size=\"12\">ensemble " << reports[r].ensemble_id
        << "</text>\n";
  }
  out << "</svg>\n";
}

inline void write_summary(std::ostream& out, const ReportInputs& in) {
  out << "verification-aided ensemble report\n";
  out << "==================================\n\n";

  out << "score tables: " << in.tables.size() << '\n';
  for (std::size_t i = 0; i < in.tables.size(); ++i) {
    const MutualErrorTable& t = in.tables[i];
    out << "  table " << i << ": members " << ensemble_label(t.members) << ", m=" << t.m
        << ", backend " << t.backend << ", mode " << query_mode_name(t.mode) << ", sat "
        << table_sat_total(t) << ", timeouts " << table_timeout_total(t) << '\n';
  }

  out << "\nselection history: ";
  if (in.history.empty()) {
    out << "no swaps accepted\n";
  } else {
    out << in.history.size() << " swap(s)\n";
    for (std::size_t i = 0; i < in.history.size(); ++i) {
      const SwapRecord& r = in.history[i];
      out << "  swap " << (i + 1) << ": removed " << r.removed << ", inserted " << r.inserted
          << ", uniqueness " << fixed4(r.us_before) << " -> " << fixed4(r.us_after)
          << ", joint errors " << r.joint_errors_before << " -> " << r.joint_errors_after << '\n';
    }
  }
  for (const std::string& note : in.notes) out << "  note: " << note << '\n';

  if (!in.robustness.empty()) {
    out << "\nrobust accuracy (decided queries):\n";
    for (const RobustAccuracyReport& r : in.robustness) {
      std::size_t flagged = 0;
      for (const bool b : r.misclassified) flagged += b ? 1 : 0;
      const std::size_t points = r.counts.empty() ? r.sources.size() : r.counts[0].total();
      out << "  ensemble " << r.ensemble_id << " (" << points << " points";
      if (flagged) out << ", " << flagged << " misclassified outright";
      out << "):\n";
      for (std::size_t e = 0; e < r.eps_list.size(); ++e) {
        const EpsOutcomes& c = r.counts[e];
        out << "    eps " << format_double(r.eps_list[e]) << ": robust " << c.robust << "/"
            << (c.robust + c.non_robust);
        if (c.timeout) out << " (+" << c.timeout << " timeouts)";
        const double frac = robust_fraction(r, e);
        if (!std::isnan(frac)) out << " = " << fixed4(frac);
        out << '\n';
      }
    }
  }

  if (in.comparison) {
    const BackendComparison& c = *in.comparison;
    out << "\nbackend comparison over " << c.query_count << " queries:\n";
    for (std::size_t b = 0; b < c.backend_tags.size(); ++b) {
      out << "  " << c.backend_tags[b] << ": sat " << c.sat_totals[b];
      if (c.timeout_totals[b]) out << ", timeouts " << c.timeout_totals[b];
      out << '\n';
    }
    if (c.audited)
      out << "  conservativity audit: " << c.audit_violations << " violation(s) over "
          << c.audit_checked << " decided attack successes\n";
  }
}

inline std::string emit_file(const std::filesystem::path& dir, const std::string& name,
                             const std::function<void(std::ostream&)>& body) {
  const std::filesystem::path path = dir / name;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("emit_report: cannot open " + path.string());
  body(out);
  if (!out) throw std::runtime_error("emit_report: write failed for " + path.string());
  return path.string();
}

}  // namespace detail

// Writes every artifact as deterministic text into out_dir (created if
// missing) and returns the paths written. With plot=true a bar chart of the
// robustness series is rendered as an SVG alongside the CSVs.
inline std::vector<std::string> emit_report(const ReportInputs& in, const std::string& out_dir,
                                            bool plot = false) {
  const std::filesystem::path dir(out_dir);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("emit_report: cannot create " + out_dir + ": " + ec.message());

  std::vector<std::string> written;
  for (std::size_t i = 0; i < in.tables.size(); ++i) {
    const MutualErrorTable& t = in.tables[i];
    written.push_back(detail::emit_file(dir, "score_table_" + std::to_string(i) + ".csv",
                                        [&](std::ostream& o) { write_score_table_csv(o, t); }));
    written.push_back(detail::emit_file(dir, "uniqueness_" + std::to_string(i) + ".csv",
                                        [&](std::ostream& o) { detail::write_uniqueness_csv(o, t); }));
  }
  written.push_back(detail::emit_file(dir, "robust_accuracy.csv", [&](std::ostream& o) {
    write_robust_series_csv(o, in.robustness);
  }));
  written.push_back(detail::emit_file(
      dir, "selection_history.csv", [&](std::ostream& o) { write_history_csv(o, in.history); }));
  if (in.comparison) {
    written.push_back(detail::emit_file(dir, "backend_comparison.csv", [&](std::ostream& o) {
      const BackendComparison& c = *in.comparison;
      o << "backend,sat,timeout,queries\n";
      for (std::size_t b = 0; b < c.backend_tags.size(); ++b)
        o << csv_join({c.backend_tags[b], std::to_string(c.sat_totals[b]),
                       std::to_string(c.timeout_totals[b]), std::to_string(c.query_count)})
          << '\n';
    }));
  }
  written.push_back(
      detail::emit_file(dir, "summary.txt", [&](std::ostream& o) { detail::write_summary(o, in); }));
  if (plot && !in.robustness.empty()) {
    written.push_back(detail::emit_file(dir, "robust_accuracy.svg", [&](std::ostream& o) {
      detail::write_robustness_svg(o, in.robustness);
    }));
  }
  return written;
}

}  // namespace ensel
