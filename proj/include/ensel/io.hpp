#pragma once

#include <cstddef>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ensel/composition.hpp"
#include "ensel/scoring.hpp"
#include "ensel/selection.hpp"
#include "ensel/text.hpp"

// File formats shared by the library and the command-line tools. Every
// number is written in shortest round-trip decimal form (format_double), so
// re-parsing a file reproduces the exact doubles that were written.

namespace ensel {

// ---------------------------------------------------------------------------
// Vector files: one value per line
// ---------------------------------------------------------------------------

inline void write_vector_file(std::ostream& out, const Vector& v) {
  for (const double x : v) out << format_double(x) << '\n';
}

inline void save_vector_file(const std::string& path, const Vector& v) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_vector_file: cannot open " + path);
  write_vector_file(out, v);
  if (!out) throw std::runtime_error("save_vector_file: write failed for " + path);
}

inline Vector read_vector_file(std::istream& in, const std::string& origin = "<stream>") {
  Vector v;
  std::string tok;
  while (in >> tok) v.push_back(parse_double(tok, origin));
  return v;
}

inline Vector load_vector_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_vector_file: cannot open " + path);
  return read_vector_file(in, path);
}

// ---------------------------------------------------------------------------
// CSV primitives (plain fields, no quoting — fields must stay comma-free)
// ---------------------------------------------------------------------------

inline std::string csv_join(const std::vector<std::string>& fields) {
  std::string line;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    const std::string& f = fields[i];
    if (f.find_first_of(",\n\r") != std::string::npos)
      throw std::runtime_error("csv_join: field '" + f + "' contains a delimiter");
    if (i) line += ',';
    line += f;
  }
  return line;
}

inline std::vector<std::string> csv_split(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (const char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

namespace detail {

// Reads a whole CSV stream, insisting on the exact expected header.
inline std::vector<std::vector<std::string>> read_csv(std::istream& in, const std::string& header,
                                                      const std::string& origin) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(origin + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != header)
    throw std::runtime_error(origin + ": expected header '" + header + "', got '" + line + "'");
  const std::size_t columns = csv_split(header).size();
  std::vector<std::vector<std::string>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    rows.push_back(csv_split(line));
    if (rows.back().size() != columns)
      throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": expected " +
                               std::to_string(columns) + " fields, got " +
                               std::to_string(rows.back().size()));
  }
  return rows;
}

inline std::size_t row_count(const std::vector<std::string>& row, std::size_t col,
                             const std::string& origin) {
  const long long v = parse_int(row[col], origin);
  if (v < 0) throw std::runtime_error(origin + ": negative count " + row[col]);
  return static_cast<std::size_t>(v);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Mutual-error table CSV
// ---------------------------------------------------------------------------
//
// One row per (pair, epsilon), grouped by pair with epsilons in list order:
//   pair_a,pair_b,epsilon,sat,unsat,timeout,backend,mode
// Pairs are stored normalized (pair_a < pair_b), so parsing recovers the
// member list in ascending order; tables built over ascending member lists
// round-trip exactly.

inline constexpr const char* kScoreTableHeader = "pair_a,pair_b,epsilon,sat,unsat,timeout,backend,mode";

inline void write_score_table_csv(std::ostream& out, const MutualErrorTable& table) {
  validate_table(table);
  out << kScoreTableHeader << '\n';
  for (const auto& [pair, cells] : table.counts) {
    for (std::size_t e = 0; e < table.eps_list.size(); ++e) {
      const PairCounts& c = cells[e];
      out << csv_join({std::to_string(pair.first), std::to_string(pair.second),
                       format_double(table.eps_list[e]), std::to_string(c.sat),
                       std::to_string(c.unsat), std::to_string(c.timeout), table.backend,
                       query_mode_name(table.mode)})
          << '\n';
    }
  }
}

inline void save_score_table_csv(const std::string& path, const MutualErrorTable& table) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_score_table_csv: cannot open " + path);
  write_score_table_csv(out, table);
  if (!out) throw std::runtime_error("save_score_table_csv: write failed for " + path);
}

inline MutualErrorTable read_score_table_csv(std::istream& in, const std::string& origin = "<stream>") {
  const auto rows = detail::read_csv(in, kScoreTableHeader, origin);
  if (rows.empty()) throw std::runtime_error(origin + ": table has no rows");

  MutualErrorTable table;
  table.backend = rows[0][6];
  table.mode = parse_query_mode(rows[0][7]);

  std::set<std::size_t> member_set;
  PairKey current{0, 0};
  bool have_pair = false;
  for (const auto& row : rows) {
    const std::size_t a = detail::row_count(row, 0, origin);
    const std::size_t b = detail::row_count(row, 1, origin);
    const PairKey key = make_pair_key(a, b);
    if (key != PairKey{a, b}) throw std::runtime_error(origin + ": pair not normalized");
    member_set.insert(a);
    member_set.insert(b);

    const double eps = parse_double(row[2], origin + " epsilon");
    PairCounts c;
    c.sat = detail::row_count(row, 3, origin);
    c.unsat = detail::row_count(row, 4, origin);
    c.timeout = detail::row_count(row, 5, origin);
    if (row[6] != table.backend || parse_query_mode(row[7]) != table.mode)
      throw std::runtime_error(origin + ": rows disagree on backend or mode");

    if (!have_pair || key != current) {
      if (table.counts.count(key)) throw std::runtime_error(origin + ": pair rows are not grouped");
      current = key;
      have_pair = true;
    }
    auto& cells = table.counts[key];
    if (table.counts.size() == 1) {
      table.eps_list.push_back(eps);
    } else {
      if (cells.size() >= table.eps_list.size() || table.eps_list[cells.size()] != eps)
        throw std::runtime_error(origin + ": pair epsilon sequences disagree");
    }
    cells.push_back(c);
  }

  for (const std::size_t id : member_set) table.members.push_back(id);
  if (table.eps_list.empty()) throw std::runtime_error(origin + ": no cells");
  table.m = table.counts.begin()->second[0].total();
  validate_table(table);
  return table;
}

inline MutualErrorTable load_score_table_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_score_table_csv: cannot open " + path);
  return read_score_table_csv(in, path);
}

// ---------------------------------------------------------------------------
// Selection history CSV
// ---------------------------------------------------------------------------

inline constexpr const char* kHistoryHeader =
    "iteration,removed,inserted,us_before,us_after,joint_errors_before,joint_errors_after";

inline void write_history_csv(std::ostream& out, const std::vector<SwapRecord>& history) {
  out << kHistoryHeader << '\n';
  for (std::size_t i = 0; i < history.size(); ++i) {
    const SwapRecord& r = history[i];
    out << csv_join({std::to_string(i + 1), std::to_string(r.removed), std::to_string(r.inserted),
                     format_double(r.us_before), format_double(r.us_after),
                     std::to_string(r.joint_errors_before), std::to_string(r.joint_errors_after)})
        << '\n';
  }
}

inline void save_history_csv(const std::string& path, const std::vector<SwapRecord>& history) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_history_csv: cannot open " + path);
  write_history_csv(out, history);
  if (!out) throw std::runtime_error("save_history_csv: write failed for " + path);
}

inline std::vector<SwapRecord> read_history_csv(std::istream& in, const std::string& origin = "<stream>") {
  const auto rows = detail::read_csv(in, kHistoryHeader, origin);
  std::vector<SwapRecord> history;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& row = rows[i];
    if (detail::row_count(row, 0, origin) != i + 1)
      throw std::runtime_error(origin + ": iteration column must run 1..n");
    SwapRecord r;
    r.removed = detail::row_count(row, 1, origin);
    r.inserted = detail::row_count(row, 2, origin);
    r.us_before = parse_double(row[3], origin + " us_before");
    r.us_after = parse_double(row[4], origin + " us_after");
    r.joint_errors_before = detail::row_count(row, 5, origin);
    r.joint_errors_after = detail::row_count(row, 6, origin);
    history.push_back(r);
  }
  return history;
}

inline std::vector<SwapRecord> load_history_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_history_csv: cannot open " + path);
  return read_history_csv(in, path);
}

// ---------------------------------------------------------------------------
// Agreement-set files (whitespace-delimited text)
// ---------------------------------------------------------------------------
//
//   agreement v1
//   count N dim D label_filter F require_correct {0|1}
//   point <source> <label> <D values>      (N lines)

inline void write_agreement_file(std::ostream& out, const AgreementSet& set) {
  const std::size_t dim = set.points.empty() ? 0 : set.points[0].x.size();
  out << "agreement v1\n";
  out << "count " << set.points.size() << " dim " << dim << " label_filter " << set.label_filter
      << " require_correct " << (set.require_correct ? 1 : 0) << '\n';
  for (const AgreementPoint& p : set.points) {
    if (p.x.size() != dim)
      throw std::runtime_error("write_agreement_file: points disagree on dimension");
    out << "point " << p.source << ' ' << p.label;
    for (const double v : p.x) out << ' ' << format_double(v);
    out << '\n';
  }
}

inline void save_agreement_file(const std::string& path, const AgreementSet& set) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_agreement_file: cannot open " + path);
  write_agreement_file(out, set);
  if (!out) throw std::runtime_error("save_agreement_file: write failed for " + path);
}

inline AgreementSet read_agreement_file(std::istream& in, const std::string& origin = "<stream>") {
  TokenReader reader(in);
  const std::string ctx = origin + ": agreement file";
  if (reader.word(ctx) != "agreement" || reader.word(ctx) != "v1")
    throw std::runtime_error(ctx + ": bad header");

  auto keyword = [&](const char* want) {
    const std::string got = reader.word(ctx);
    if (got != want)
      throw std::runtime_error(ctx + ": expected '" + want + "', got '" + got + "'");
  };

  keyword("count");
  const std::size_t count = reader.count(ctx + " count");
  keyword("dim");
  const std::size_t dim = reader.count(ctx + " dim");
  keyword("label_filter");
  const long long filter = parse_int(reader.word(ctx), ctx + " label_filter");
  keyword("require_correct");
  const std::size_t rc = reader.count(ctx + " require_correct");
  if (rc > 1) throw std::runtime_error(ctx + ": require_correct must be 0 or 1");

  AgreementSet set;
  set.label_filter = static_cast<int>(filter);
  set.require_correct = rc == 1;
  for (std::size_t i = 0; i < count; ++i) {
    keyword("point");
    AgreementPoint p;
    p.source = reader.count(ctx + " source");
    p.label = static_cast<int>(parse_int(reader.word(ctx), ctx + " label"));
    p.x.resize(dim);
    for (std::size_t d = 0; d < dim; ++d) p.x[d] = reader.number(ctx + " coordinate");
    set.points.push_back(std::move(p));
  }
  if (!reader.at_end()) throw std::runtime_error(ctx + ": trailing content");
  return set;
}

inline AgreementSet load_agreement_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_agreement_file: cannot open " + path);
  return read_agreement_file(in, path);
}

// ---------------------------------------------------------------------------
// Composite sidecar manifests (member ids and output slices)
// ---------------------------------------------------------------------------
//
//   composite v1
//   members N
//   slice <offset> <length>                (N lines)

inline void write_composite_manifest(std::ostream& out, const CompositeNetwork& comp) {
  out << "composite v1\nmembers " << comp.member_count << '\n';
  for (const auto& [off, len] : comp.output_slices) out << "slice " << off << ' ' << len << '\n';
}

inline void save_composite(const CompositeNetwork& comp, const std::string& net_path,
                           const std::string& manifest_path) {
  save_network(comp.net, net_path);
  std::ofstream out(manifest_path);
  if (!out) throw std::runtime_error("save_composite: cannot open " + manifest_path);
  write_composite_manifest(out, comp);
  if (!out) throw std::runtime_error("save_composite: write failed for " + manifest_path);
}

inline CompositeNetwork read_composite_manifest(std::istream& in, Network net,
                                                const std::string& origin = "<stream>") {
  TokenReader reader(in);
  const std::string ctx = origin + ": composite manifest";
  if (reader.word(ctx) != "composite" || reader.word(ctx) != "v1")
    throw std::runtime_error(ctx + ": bad header");
  if (reader.word(ctx) != "members") throw std::runtime_error(ctx + ": expected 'members'");
  const std::size_t members = reader.count(ctx + " members");

  CompositeNetwork comp;
  comp.net = std::move(net);
  comp.member_count = members;
  for (std::size_t i = 0; i < members; ++i) {
    if (reader.word(ctx) != "slice") throw std::runtime_error(ctx + ": expected 'slice'");
    const std::size_t off = reader.count(ctx + " offset");
    const std::size_t len = reader.count(ctx + " length");
    comp.output_slices.emplace_back(off, len);
  }
  if (!reader.at_end()) throw std::runtime_error(ctx + ": trailing content");

  std::size_t covered = 0;
  for (const auto& [off, len] : comp.output_slices) {
    if (off != covered) throw std::runtime_error(ctx + ": slices must tile the output");
    covered += len;
  }
  if (covered != comp.net.output_dim)
    throw std::runtime_error(ctx + ": slices do not cover the network output");
  return comp;
}

inline CompositeNetwork load_composite(const std::string& net_path, const std::string& manifest_path) {
  Network net = load_network(net_path);
  std::ifstream in(manifest_path);
  if (!in) throw std::runtime_error("load_composite: cannot open " + manifest_path);
  return read_composite_manifest(in, std::move(net), manifest_path);
}

// ---------------------------------------------------------------------------
// Verification batch files
// ---------------------------------------------------------------------------
//
// One record per query against a fixed pool and agreement set:
//   member_a,member_b,point,epsilon,mode

inline constexpr const char* kQueryBatchHeader = "member_a,member_b,point,epsilon,mode";

struct BatchQuery {
  MutualQuery query;
  QueryMode mode = QueryMode::runner_up;

  friend bool operator==(const BatchQuery&, const BatchQuery&) = default;
};

inline void write_query_batch_csv(std::ostream& out, const std::vector<BatchQuery>& batch) {
  out << kQueryBatchHeader << '\n';
  for (const BatchQuery& q : batch)
    out << csv_join({std::to_string(q.query.a), std::to_string(q.query.b),
                     std::to_string(q.query.point), format_double(q.query.epsilon),
                     query_mode_name(q.mode)})
        << '\n';
}

inline void save_query_batch_csv(const std::string& path, const std::vector<BatchQuery>& batch) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_query_batch_csv: cannot open " + path);
  write_query_batch_csv(out, batch);
  if (!out) throw std::runtime_error("save_query_batch_csv: write failed for " + path);
}

inline std::vector<BatchQuery> read_query_batch_csv(std::istream& in,
                                                    const std::string& origin = "<stream>") {
  const auto rows = detail::read_csv(in, kQueryBatchHeader, origin);
  std::vector<BatchQuery> batch;
  for (const auto& row : rows) {
    BatchQuery q;
    q.query.a = detail::row_count(row, 0, origin);
    q.query.b = detail::row_count(row, 1, origin);
    if (q.query.a == q.query.b) throw std::runtime_error(origin + ": a pair needs two distinct members");
    q.query.point = detail::row_count(row, 2, origin);
    q.query.epsilon = parse_double(row[3], origin + " epsilon");
    q.mode = parse_query_mode(row[4]);
    batch.push_back(q);
  }
  return batch;
}

inline std::vector<BatchQuery> load_query_batch_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_query_batch_csv: cannot open " + path);
  return read_query_batch_csv(in, path);
}

}  // namespace ensel
