// ensel: end-to-end toolkit for verification-aided ensemble selection.
//
// Subcommands cover the whole experiment pipeline: dataset preparation,
// pool training, agreement-point mining, mutual-error scoring (verifier or
// gradient-attack backends), single and batched verification, greedy member
// selection, robust-accuracy evaluation, and report emission. Stages talk to
// each other only through files under the configured output directory; each
// stage reads the manifests of its predecessors and fails loudly (exit 2)
// when one is missing. Exit codes: 0 success, 1 usage error, 2 stage
// failure, 3 completed with timeout verdicts present.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "ensel/attacks.hpp"
#include "ensel/composition.hpp"
#include "ensel/config.hpp"
#include "ensel/data.hpp"
#include "ensel/evaluation.hpp"
#include "ensel/io.hpp"
#include "ensel/nn.hpp"
#include "ensel/parallel.hpp"
#include "ensel/scoring.hpp"
#include "ensel/selection.hpp"
#include "ensel/synth.hpp"
#include "ensel/text.hpp"
#include "ensel/training.hpp"
#include "ensel/verifier.hpp"

namespace fs = std::filesystem;
using namespace ensel;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kStageFailure = 2;
constexpr int kTimeouts = 3;

// ---------------------------------------------------------------------------
// Shared configuration
// ---------------------------------------------------------------------------

QueryMode parse_mode_flag(std::string s) {
  for (char& c : s)
    if (c == '-') c = '_';
  return parse_query_mode(s);
}

std::vector<std::string> split_words(std::string v) {
  for (char& c : v)
    if (c == ',') c = ' ';
  std::istringstream in(v);
  std::vector<std::string> words;
  std::string w;
  while (in >> w) words.push_back(w);
  return words;
}

struct RunConfig {
  ConfigDoc doc;
  fs::path out;
  std::size_t workers = 1;

  // data
  std::string data_kind;  // synth | idx
  SynthConfig synth;
  double test_fraction = 0.2;
  std::string idx_train_images, idx_train_labels, idx_test_images, idx_test_labels;
  std::size_t downscale_factor = 1;
  double val_fraction = 0.25;
  std::uint64_t split_seed = 5;

  // training
  std::size_t n = 10;
  std::vector<std::size_t> hidden = {6};
  std::size_t epochs = 40;
  std::size_t batch = 16;
  double lr = 0.5;
  std::uint64_t train_seed = 31;

  // agreement
  std::size_t m = 200;
  std::string agreement_split = "validation";
  int label_filter = -1;
  bool require_correct = true;

  // queries
  std::vector<double> eps_list;
  QueryMode mode = QueryMode::runner_up;
  BackendKind backend = BackendKind::verifier;
  double solver_timeout = 60.0;
  std::size_t attack_steps = 10;
  std::vector<std::string> attack_kinds;

  // selection
  std::size_t k = 5;
  std::size_t max_iters = 16;
  double select_budget = 0.0;

  // evaluation
  std::size_t sample = 20;
  std::uint64_t sample_seed = 97;
  std::string eval_split = "test";
  std::vector<std::string> eval_backends;
};

RunConfig parse_run_config(ConfigDoc doc) {
  RunConfig rc;
  rc.out = fs::path(doc.get("out"));
  rc.workers = config_count_or(doc, "workers", 1);
  if (rc.workers == 0) throw std::runtime_error("config: workers must be >= 1");

  rc.data_kind = doc.get_or("data.kind", "synth");
  if (rc.data_kind != "synth" && rc.data_kind != "idx")
    throw std::runtime_error("config: data.kind must be synth or idx");
  rc.synth.classes = config_count_or(doc, "data.classes", 3);
  rc.synth.side = config_count_or(doc, "data.side", 3);
  rc.synth.per_class = config_count_or(doc, "data.per_class", 60);
  rc.synth.separation = config_double_or(doc, "data.separation", 0.3);
  rc.synth.noise = config_double_or(doc, "data.noise", 0.15);
  rc.synth.seed = config_count_or(doc, "data.seed", 21);
  rc.test_fraction = config_double_or(doc, "data.test_fraction", 0.2);
  rc.idx_train_images = doc.get_or("data.train_images", "");
  rc.idx_train_labels = doc.get_or("data.train_labels", "");
  rc.idx_test_images = doc.get_or("data.test_images", "");
  rc.idx_test_labels = doc.get_or("data.test_labels", "");
  rc.downscale_factor = config_count_or(doc, "data.downscale", 1);
  rc.val_fraction = config_double_or(doc, "data.val_fraction", 0.25);
  rc.split_seed = config_count_or(doc, "data.split_seed", 5);

  rc.n = config_count_or(doc, "train.count", 10);
  if (doc.has("train.hidden")) rc.hidden = config_counts(doc, "train.hidden");
  rc.epochs = config_count_or(doc, "train.epochs", 40);
  rc.batch = config_count_or(doc, "train.batch", 16);
  rc.lr = config_double_or(doc, "train.lr", 0.5);
  rc.train_seed = config_count_or(doc, "train.seed", 31);

  rc.m = config_count_or(doc, "agreement.m", 200);
  rc.agreement_split = doc.get_or("agreement.split", "validation");
  rc.label_filter = static_cast<int>(config_int_or(doc, "agreement.label", -1));
  rc.require_correct = config_bool_or(doc, "agreement.require_correct", true);

  rc.eps_list = doc.has("eps_list") ? config_doubles(doc, "eps_list")
                                    : std::vector<double>{0.01, 0.02, 0.03, 0.04, 0.05, 0.06};
  rc.mode = parse_mode_flag(doc.get_or("mode", "runner_up"));
  rc.backend = parse_backend_kind(doc.get_or("backend", "verifier"));
  rc.solver_timeout = config_double_or(doc, "solver.timeout", 60.0);
  rc.attack_steps = config_count_or(doc, "attack.steps", 10);
  rc.attack_kinds = split_words(doc.get_or("attack.kinds", ""));

  rc.k = config_count_or(doc, "select.k", 5);
  rc.max_iters = config_count_or(doc, "select.max_iters", 16);
  rc.select_budget = config_double_or(doc, "select.budget", 0.0);

  rc.sample = config_count_or(doc, "eval.sample", 20);
  rc.sample_seed = config_count_or(doc, "eval.sample_seed", 97);
  rc.eval_split = doc.get_or("eval.split", "test");
  rc.eval_backends = split_words(doc.get_or("eval.backends", ""));

  // shared invariants
  if (rc.k < 2) throw std::runtime_error("config: select.k must be >= 2");
  if (rc.n <= rc.k) throw std::runtime_error("config: train.count must exceed select.k");
  if (rc.m == 0) throw std::runtime_error("config: agreement.m must be >= 1");
  if (rc.eps_list.empty()) throw std::runtime_error("config: eps_list must be non-empty");
  for (const double e : rc.eps_list)
    if (!(e > 0.0)) throw std::runtime_error("config: eps_list entries must be positive");
  if (rc.sample == 0) throw std::runtime_error("config: eval.sample must be >= 1");

  rc.doc = std::move(doc);
  return rc;
}

struct CommonFlags {
  std::string config;
  std::vector<std::string> sets;
  unsigned workers = 0;
  bool dry_run = false;
};

RunConfig load_run(const CommonFlags& f) {
  ConfigDoc doc = load_config(f.config);
  for (const std::string& s : f.sets) apply_override(doc, s);
  if (f.workers) doc.set("workers", std::to_string(f.workers));
  return parse_run_config(std::move(doc));
}

// ---------------------------------------------------------------------------
// Output-directory layout
// ---------------------------------------------------------------------------

struct Layout {
  fs::path out;

  explicit Layout(fs::path o) : out(std::move(o)) {}

  fs::path data_dir() const { return out / "data"; }
  fs::path data_manifest() const { return data_dir() / "data_manifest.txt"; }
  fs::path idx_file(const std::string& split, const std::string& what) const {
    return data_dir() / (split + "-" + what + ".idx");
  }

  fs::path pool_dir() const { return out / "pool"; }
  fs::path pool_manifest() const { return pool_dir() / "pool_manifest.txt"; }
  fs::path member_net(std::size_t i) const {
    return pool_dir() / ("member_" + std::to_string(i) + ".nn");
  }

  fs::path agreement_dir() const { return out / "agreement"; }
  fs::path agreement_file() const { return agreement_dir() / "agreement.txt"; }
  fs::path agreement_manifest() const { return agreement_dir() / "agreement_manifest.txt"; }

  fs::path score_dir() const { return out / "score"; }
  fs::path score_table() const { return score_dir() / "table.csv"; }
  fs::path score_manifest() const { return score_dir() / "score_manifest.txt"; }

  fs::path attack_dir() const { return out / "attack"; }
  fs::path attack_table(const std::string& kind) const {
    return attack_dir() / ("table_" + kind + ".csv");
  }
  fs::path attack_manifest() const { return attack_dir() / "attack_manifest.txt"; }

  fs::path verify_dir() const { return out / "verify"; }
  fs::path verify_results() const { return verify_dir() / "results.csv"; }
  fs::path witness_dir() const { return verify_dir() / "witnesses"; }

  fs::path select_dir() const { return out / "select"; }
  fs::path ensemble_manifest() const { return select_dir() / "ensemble_manifest.txt"; }
  fs::path history_csv() const { return select_dir() / "history.csv"; }
  fs::path table_initial() const { return select_dir() / "table_initial.csv"; }
  fs::path table_final() const { return select_dir() / "table_final.csv"; }

  fs::path eval_dir() const { return out / "eval"; }
  fs::path robust_csv() const { return eval_dir() / "robust_accuracy.csv"; }
  fs::path eval_manifest() const { return eval_dir() / "eval_manifest.txt"; }
  fs::path comparison_table(const std::string& tag) const {
    return eval_dir() / ("comparison_" + tag + ".csv");
  }

  fs::path report_dir() const { return out / "report"; }

  std::string rel(const fs::path& p) const { return fs::relative(p, out).generic_string(); }
  fs::path abs(const std::string& stored) const { return out / stored; }
};

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw std::runtime_error("missing " + what + ": " + p.string());
}

void make_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw std::runtime_error("cannot create " + p.string() + ": " + ec.message());
}

ConfigDoc load_manifest(const fs::path& p, const std::string& what, const std::string& format) {
  require_file(p, what);
  const ConfigDoc doc = load_config(p.string());
  if (doc.get_or("format", "") != format)
    throw std::runtime_error(p.string() + ": expected format=" + format);
  return doc;
}

// ---------------------------------------------------------------------------
// Manifest-backed loaders
// ---------------------------------------------------------------------------

struct DataBundle {
  Splits splits;
  std::size_t classes = 0;
};

DataBundle load_data(const Layout& lay) {
  const ConfigDoc man = load_manifest(lay.data_manifest(), "data manifest", "data-manifest-v1");
  DataBundle d;
  d.classes = config_count(man, "classes");
  d.splits.train = load_idx(lay.abs(man.get("train.images")).string(),
                            lay.abs(man.get("train.labels")).string());
  d.splits.validation = load_idx(lay.abs(man.get("validation.images")).string(),
                                 lay.abs(man.get("validation.labels")).string());
  d.splits.test = load_idx(lay.abs(man.get("test.images")).string(),
                           lay.abs(man.get("test.labels")).string());
  return d;
}

const Dataset& pick_split(const Splits& s, const std::string& name) {
  if (name == "train") return s.train;
  if (name == "validation") return s.validation;
  if (name == "test") return s.test;
  throw std::runtime_error("unknown split '" + name + "' (want train, validation, or test)");
}

struct PoolBundle {
  std::vector<Network> nets;
  std::size_t classes = 0;
};

PoolBundle load_pool(const Layout& lay) {
  const ConfigDoc man = load_manifest(lay.pool_manifest(), "pool manifest", "pool-manifest-v1");
  PoolBundle p;
  p.classes = config_count(man, "classes");
  const std::size_t count = config_count(man, "count");
  for (std::size_t i = 0; i < count; ++i) {
    const std::string key = "member_" + std::to_string(i) + ".path";
    p.nets.push_back(load_network(lay.abs(man.get(key)).string()));
  }
  return p;
}

AgreementSet load_agreement(const Layout& lay) {
  const ConfigDoc man =
      load_manifest(lay.agreement_manifest(), "agreement manifest", "agreement-manifest-v1");
  return load_agreement_file(lay.abs(man.get("path")).string());
}

BackendConfig make_backend(const RunConfig& rc, BackendKind kind, QueryMode mode) {
  BackendConfig be;
  be.kind = kind;
  be.mode = mode;
  be.solve.timeout_seconds = rc.solver_timeout;
  be.attack_steps = rc.attack_steps;
  return be;
}

std::string join_ids(const std::vector<std::size_t>& ids) {
  std::string s;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(ids[i]);
  }
  return s;
}

std::string join_eps(const std::vector<double>& eps) {
  std::string s;
  for (std::size_t i = 0; i < eps.size(); ++i) {
    if (i) s += ",";
    s += format_double(eps[i]);
  }
  return s;
}

std::string join_names(const std::vector<std::string>& names) {
  std::string s;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (i) s += ",";
    s += names[i];
  }
  return s;
}

std::vector<std::size_t> first_k(std::size_t k) {
  std::vector<std::size_t> ids(k);
  for (std::size_t i = 0; i < k; ++i) ids[i] = i;
  return ids;
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

int stage_prepare(const RunConfig& rc) {
  const Layout lay(rc.out);
  make_dir(lay.data_dir());

  Splits splits;
  std::size_t classes = 0;
  if (rc.data_kind == "synth") {
    const Dataset full = synthetic_dataset(rc.synth);
    // carve the held-out test split first, then validation from the rest
    Splits outer = make_splits(full, rc.test_fraction, rc.split_seed + 1);
    splits = make_splits(outer.train, rc.val_fraction, rc.split_seed);
    splits.test = std::move(outer.validation);
    classes = rc.synth.classes;
  } else {
    for (const auto& [value, name] :
         {std::pair{rc.idx_train_images, "data.train_images"},
          std::pair{rc.idx_train_labels, "data.train_labels"},
          std::pair{rc.idx_test_images, "data.test_images"},
          std::pair{rc.idx_test_labels, "data.test_labels"}})
      if (value.empty()) throw std::runtime_error(std::string("config: ") + name + " is required for data.kind=idx");
    Dataset train_full = load_idx(rc.idx_train_images, rc.idx_train_labels);
    Dataset test = load_idx(rc.idx_test_images, rc.idx_test_labels);
    if (rc.downscale_factor > 1) {
      train_full = downscale(train_full, rc.downscale_factor);
      test = downscale(test, rc.downscale_factor);
    }
    splits = make_splits(train_full, std::move(test), rc.val_fraction, rc.split_seed);
    int max_label = 0;
    for (const int l : splits.train.labels) max_label = std::max(max_label, l);
    for (const int l : splits.test.labels) max_label = std::max(max_label, l);
    classes = static_cast<std::size_t>(max_label) + 1;
  }

  ConfigDoc man;
  man.set("format", "data-manifest-v1");
  man.set("kind", rc.data_kind);
  man.set("classes", std::to_string(classes));
  man.set("side", std::to_string(splits.train.image_side));
  man.set("dim", std::to_string(splits.train.dim()));
  for (const auto& [name, ds] : {std::pair<std::string, const Dataset*>{"train", &splits.train},
                                 {"validation", &splits.validation},
                                 {"test", &splits.test}}) {
    const fs::path images = lay.idx_file(name, "images");
    const fs::path labels = lay.idx_file(name, "labels");
    save_idx(*ds, images.string(), labels.string());
    man.set(name + ".images", lay.rel(images));
    man.set(name + ".labels", lay.rel(labels));
    man.set(name + ".count", std::to_string(ds->size()));
  }
  save_config(lay.data_manifest().string(), man);

  std::cout << "prepared " << rc.data_kind << " dataset: " << splits.train.size() << " train / "
            << splits.validation.size() << " validation / " << splits.test.size() << " test, "
            << classes << " classes, dim " << splits.train.dim() << "\n";
  return kOk;
}

int stage_train(const RunConfig& rc) {
  const Layout lay(rc.out);
  const DataBundle data = load_data(lay);
  make_dir(lay.pool_dir());

  TrainConfig tc;
  tc.hidden = rc.hidden;
  tc.epochs = rc.epochs;
  tc.batch_size = rc.batch;
  tc.learning_rate = rc.lr;
  tc.seed = rc.train_seed;
  const std::vector<TrainResult> results = train_pool(data.splits.train, data.classes, rc.n, tc);

  ConfigDoc man;
  man.set("format", "pool-manifest-v1");
  man.set("count", std::to_string(rc.n));
  man.set("classes", std::to_string(data.classes));
  man.set("input_dim", std::to_string(data.splits.train.dim()));
  std::string hidden;
  for (std::size_t i = 0; i < rc.hidden.size(); ++i)
    hidden += (i ? "," : "") + std::to_string(rc.hidden[i]);
  man.set("hidden", hidden);
  man.set("epochs", std::to_string(rc.epochs));
  man.set("batch", std::to_string(rc.batch));
  man.set("lr", format_double(rc.lr));
  man.set("seed", std::to_string(rc.train_seed));

  double lo = 1.0, hi = 0.0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const fs::path path = lay.member_net(i);
    save_network(results[i].net, path.string());
    const double val_acc = accuracy(results[i].net, data.splits.validation);
    const double test_acc = accuracy(results[i].net, data.splits.test);
    lo = std::min(lo, val_acc);
    hi = std::max(hi, val_acc);
    const std::string prefix = "member_" + std::to_string(i);
    man.set(prefix + ".path", lay.rel(path));
    man.set(prefix + ".seed", std::to_string(rc.train_seed + i));
    man.set(prefix + ".val_accuracy", format_double(val_acc));
    man.set(prefix + ".test_accuracy", format_double(test_acc));
  }
  save_config(lay.pool_manifest().string(), man);

  std::cout << "trained " << rc.n << " members; validation accuracy " << detail::fixed2(lo)
            << " to " << detail::fixed2(hi) << "\n";
  return kOk;
}

int stage_agreement(const RunConfig& rc) {
  const Layout lay(rc.out);
  const DataBundle data = load_data(lay);
  const PoolBundle pool = load_pool(lay);
  make_dir(lay.agreement_dir());

  const Dataset& split = pick_split(data.splits, rc.agreement_split);
  const AgreementSet set =
      find_agreement_points(pool.nets, split, rc.m, rc.label_filter, rc.require_correct);
  save_agreement_file(lay.agreement_file().string(), set);

  ConfigDoc man;
  man.set("format", "agreement-manifest-v1");
  man.set("path", lay.rel(lay.agreement_file()));
  man.set("m", std::to_string(set.points.size()));
  man.set("split", rc.agreement_split);
  man.set("label_filter", std::to_string(rc.label_filter));
  man.set("require_correct", rc.require_correct ? "true" : "false");
  save_config(lay.agreement_manifest().string(), man);

  std::cout << "collected " << set.points.size() << " agreement points from the "
            << rc.agreement_split << " split\n";
  return kOk;
}

int stage_score(const RunConfig& rc, bool dry_run) {
  const Layout lay(rc.out);
  if (dry_run) {
    const std::size_t plan = query_plan_count(rc.k, rc.m, rc.eps_list.size());
    std::cout << "score would dispatch " << plan << " queries (" << rc.k << " members, m=" << rc.m
              << ", " << rc.eps_list.size() << " epsilons)\n";
    return kOk;
  }
  const PoolBundle pool = load_pool(lay);
  const AgreementSet agreement = load_agreement(lay);
  make_dir(lay.score_dir());

  const std::vector<std::size_t> members = first_k(rc.k);
  const BackendConfig backend = make_backend(rc, rc.backend, rc.mode);
  const MutualErrorTable table = compute_mutual_error_table(pool.nets, members, agreement,
                                                            rc.eps_list, backend, rc.workers);
  save_score_table_csv(lay.score_table().string(), table);

  ConfigDoc man;
  man.set("format", "score-manifest-v1");
  man.set("table", lay.rel(lay.score_table()));
  man.set("backend", table.backend);
  man.set("mode", query_mode_name(table.mode));
  man.set("members", join_ids(members));
  man.set("m", std::to_string(table.m));
  man.set("eps_list", join_eps(rc.eps_list));
  man.set("query_count",
          std::to_string(query_plan_count(rc.k, table.m, rc.eps_list.size())));
  man.set("sat_total", std::to_string(table_sat_total(table)));
  man.set("timeout_total", std::to_string(table_timeout_total(table)));
  for (const std::size_t id : members)
    man.set("us_avg_" + std::to_string(id), format_double(uniqueness_score_avg(table, id)));
  save_config(lay.score_manifest().string(), man);

  const std::size_t timeouts = table_timeout_total(table);
  std::cout << "scored " << members.size() << " members over " << table.m << " points and "
            << rc.eps_list.size() << " epsilons with the " << table.backend << " backend: "
            << table_sat_total(table) << " sat, " << timeouts << " timeouts\n";
  return timeouts ? kTimeouts : kOk;
}

int stage_attack(const RunConfig& rc, bool dry_run) {
  if (rc.attack_kinds.empty())
    throw std::runtime_error("config: attack.kinds is empty; nothing to run");
  std::vector<BackendKind> kinds;
  for (const std::string& name : rc.attack_kinds) {
    const BackendKind kind = parse_backend_kind(name);
    if (kind == BackendKind::verifier)
      throw std::runtime_error("config: attack.kinds must name gradient attacks only");
    kinds.push_back(kind);
  }
  if (dry_run) {
    const std::size_t plan = query_plan_count(rc.k, rc.m, rc.eps_list.size());
    std::cout << "attack-batch would dispatch " << plan << " queries per backend, "
              << plan * kinds.size() << " in total\n";
    return kOk;
  }

  const Layout lay(rc.out);
  const PoolBundle pool = load_pool(lay);
  const AgreementSet agreement = load_agreement(lay);
  make_dir(lay.attack_dir());

  const std::vector<std::size_t> members = first_k(rc.k);
  ConfigDoc man;
  man.set("format", "attack-manifest-v1");
  man.set("kinds", join_names(rc.attack_kinds));
  man.set("steps", std::to_string(rc.attack_steps));
  man.set("members", join_ids(members));
  man.set("eps_list", join_eps(rc.eps_list));

  for (std::size_t i = 0; i < kinds.size(); ++i) {
    const BackendConfig backend = make_backend(rc, kinds[i], rc.mode);
    const MutualErrorTable table = compute_mutual_error_table(pool.nets, members, agreement,
                                                              rc.eps_list, backend, rc.workers);
    const fs::path path = lay.attack_table(rc.attack_kinds[i]);
    save_score_table_csv(path.string(), table);
    man.set("table_" + rc.attack_kinds[i], lay.rel(path));
    man.set("sat_total_" + rc.attack_kinds[i], std::to_string(table_sat_total(table)));
    std::cout << rc.attack_kinds[i] << ": " << table_sat_total(table) << " sat over "
              << query_plan_count(rc.k, table.m, rc.eps_list.size()) << " queries\n";
  }
  save_config(lay.attack_manifest().string(), man);
  return kOk;  // attacks always return a definite answer
}

int stage_select(const RunConfig& rc, bool dry_run) {
  if (dry_run) {
    const std::size_t initial = query_plan_count(rc.k, rc.m, rc.eps_list.size());
    const std::size_t per_candidate = (rc.k - 1) * rc.m * rc.eps_list.size();
    std::cout << "select would dispatch " << initial << " queries for the initial table, then "
              << per_candidate << " per candidate (" << (rc.n - rc.k)
              << " candidates per iteration; previously decided pairs come from the cache)\n";
    return kOk;
  }
  const Layout lay(rc.out);
  const PoolBundle pool = load_pool(lay);
  const AgreementSet agreement = load_agreement(lay);
  make_dir(lay.select_dir());

  SelectionConfig cfg;
  cfg.max_iters = rc.max_iters;
  cfg.timeout_seconds = rc.select_budget;
  cfg.backend = make_backend(rc, rc.backend, rc.mode);
  cfg.workers = rc.workers;
  const EnsembleState state = iterate_selection(pool.nets, rc.k, agreement, rc.eps_list, cfg);

  save_history_csv(lay.history_csv().string(), state.history);
  std::size_t timeouts = 0;
  for (const MutualErrorTable& t : state.tables) timeouts += table_timeout_total(t);
  if (!state.tables.empty()) {
    save_score_table_csv(lay.table_initial().string(), state.tables.front());
    save_score_table_csv(lay.table_final().string(), state.tables.back());
  }

  ConfigDoc man;
  man.set("format", "ensemble-manifest-v1");
  man.set("k", std::to_string(rc.k));
  man.set("initial_members", join_ids(first_k(rc.k)));
  man.set("members", join_ids(state.members));
  man.set("swaps", std::to_string(state.history.size()));
  man.set("history", lay.rel(lay.history_csv()));
  if (!state.tables.empty()) {
    man.set("table_initial", lay.rel(lay.table_initial()));
    man.set("table_final", lay.rel(lay.table_final()));
  }
  man.set("timeout_total", std::to_string(timeouts));
  for (std::size_t i = 0; i < state.members.size(); ++i)
    man.set("member_" + std::to_string(i) + ".path", lay.rel(lay.member_net(state.members[i])));
  for (std::size_t i = 0; i < state.notes.size(); ++i)
    man.set("note_" + std::to_string(i), state.notes[i]);
  save_config(lay.ensemble_manifest().string(), man);

  std::cout << "selection accepted " << state.history.size() << " swap(s); final ensemble "
            << join_ids(state.members) << "\n";
  for (const SwapRecord& r : state.history)
    std::cout << "  removed " << r.removed << ", inserted " << r.inserted << ": uniqueness "
              << detail::fixed4(r.us_before) << " -> " << detail::fixed4(r.us_after)
              << ", joint errors " << r.joint_errors_before << " -> " << r.joint_errors_after
              << "\n";
  for (const std::string& note : state.notes) std::cout << "  note: " << note << "\n";
  return (timeouts || !state.notes.empty()) ? kTimeouts : kOk;
}

int stage_evaluate(const RunConfig& rc, bool dry_run) {
  const Layout lay(rc.out);
  const bool have_selection = fs::exists(lay.ensemble_manifest());
  if (dry_run) {
    const std::size_t ensembles = have_selection ? 2 : 1;
    std::size_t plan = ensembles * rc.sample * rc.eps_list.size();
    if (!rc.eval_backends.empty())
      plan += rc.eval_backends.size() * query_plan_count(rc.k, rc.m, rc.eps_list.size());
    std::cout << "evaluate would dispatch " << plan << " queries\n";
    return kOk;
  }

  const DataBundle data = load_data(lay);
  const PoolBundle pool = load_pool(lay);
  make_dir(lay.eval_dir());

  const Dataset& split = pick_split(data.splits, rc.eval_split);
  const std::vector<SamplePoint> sample = sample_test_points(split, rc.sample, rc.sample_seed);
  SolveConfig solve_cfg;
  solve_cfg.timeout_seconds = rc.solver_timeout;

  std::vector<std::vector<std::size_t>> ensembles = {first_k(rc.k)};
  if (have_selection) {
    const ConfigDoc sel = load_manifest(lay.ensemble_manifest(), "ensemble manifest",
                                        "ensemble-manifest-v1");
    std::vector<std::size_t> members;
    for (const std::string& w : split_words(sel.get("members")))
      members.push_back(static_cast<std::size_t>(parse_int(w, "ensemble manifest members")));
    if (members != ensembles[0]) ensembles.push_back(members);
  }

  std::size_t timeouts = 0;
  std::vector<RobustAccuracyReport> reports;
  for (const auto& members : ensembles) {
    reports.push_back(robust_accuracy(pool.nets, members, sample, rc.eps_list, rc.mode, solve_cfg,
                                      rc.workers));
    for (const EpsOutcomes& c : reports.back().counts) timeouts += c.timeout;
  }
  save_robust_series_csv(lay.robust_csv().string(), reports);

  ConfigDoc man;
  man.set("format", "eval-manifest-v1");
  man.set("series", lay.rel(lay.robust_csv()));
  man.set("sample", std::to_string(rc.sample));
  man.set("sample_seed", std::to_string(rc.sample_seed));
  man.set("split", rc.eval_split);
  man.set("mode", query_mode_name(rc.mode));
  man.set("eps_list", join_eps(rc.eps_list));
  std::string ids;
  for (std::size_t i = 0; i < reports.size(); ++i)
    ids += (i ? " " : "") + reports[i].ensemble_id;
  man.set("ensembles", ids);

  for (const RobustAccuracyReport& r : reports) {
    std::cout << "ensemble " << r.ensemble_id << ":";
    for (std::size_t e = 0; e < r.eps_list.size(); ++e) {
      const EpsOutcomes& c = r.counts[e];
      std::cout << " eps " << format_double(r.eps_list[e]) << " robust " << c.robust << "/"
                << (c.robust + c.non_robust);
      if (c.timeout) std::cout << " (+" << c.timeout << " t/o)";
    }
    std::cout << "\n";
  }

  man.set("comparison", rc.eval_backends.empty() ? "false" : "true");
  if (!rc.eval_backends.empty()) {
    const AgreementSet agreement = load_agreement(lay);
    std::vector<BackendConfig> backends;
    for (const std::string& name : rc.eval_backends) {
      const BackendKind kind = parse_backend_kind(name);
      // the audit compares attack successes against a complete search, so the
      // verifier entry always runs with the full postcondition
      backends.push_back(make_backend(rc, kind,
                                      kind == BackendKind::verifier ? QueryMode::full : rc.mode));
    }
    const BackendComparison cmp = compare_backends(pool.nets, first_k(rc.k), agreement,
                                                   rc.eps_list, backends, rc.workers);
    man.set("cmp.backends", join_names(rc.eval_backends));
    man.set("cmp.query_count", std::to_string(cmp.query_count));
    man.set("cmp.audited", cmp.audited ? "true" : "false");
    man.set("cmp.audit_checked", std::to_string(cmp.audit_checked));
    man.set("cmp.audit_violations", std::to_string(cmp.audit_violations));
    for (std::size_t b = 0; b < cmp.tables.size(); ++b) {
      const std::string tag = rc.eval_backends[b];
      const fs::path path = lay.comparison_table(tag);
      save_score_table_csv(path.string(), cmp.tables[b]);
      man.set("cmp.table_" + tag, lay.rel(path));
      man.set("cmp.sat_" + tag, std::to_string(cmp.sat_totals[b]));
      man.set("cmp.timeout_" + tag, std::to_string(cmp.timeout_totals[b]));
      timeouts += cmp.timeout_totals[b];
      std::cout << "backend " << tag << ": " << cmp.sat_totals[b] << " sat over "
                << cmp.query_count << " queries\n";
    }
    if (cmp.audited)
      std::cout << "conservativity audit: " << cmp.audit_violations << " violation(s) over "
                << cmp.audit_checked << " decided attack successes\n";
  }
  man.set("timeout_total", std::to_string(timeouts));
  save_config(lay.eval_manifest().string(), man);
  return timeouts ? kTimeouts : kOk;
}

int stage_report(const RunConfig& rc, bool plot) {
  const Layout lay(rc.out);
  ReportInputs inputs;

  const ConfigDoc score = load_manifest(lay.score_manifest(), "score manifest", "score-manifest-v1");
  inputs.tables.push_back(load_score_table_csv(lay.abs(score.get("table")).string()));

  if (fs::exists(lay.attack_manifest())) {
    const ConfigDoc attack =
        load_manifest(lay.attack_manifest(), "attack manifest", "attack-manifest-v1");
    for (const std::string& kind : split_words(attack.get("kinds")))
      inputs.tables.push_back(load_score_table_csv(lay.abs(attack.get("table_" + kind)).string()));
  }

  if (fs::exists(lay.ensemble_manifest())) {
    const ConfigDoc sel =
        load_manifest(lay.ensemble_manifest(), "ensemble manifest", "ensemble-manifest-v1");
    inputs.history = load_history_csv(lay.abs(sel.get("history")).string());
    if (sel.has("table_final"))
      inputs.tables.push_back(load_score_table_csv(lay.abs(sel.get("table_final")).string()));
    for (std::size_t i = 0; sel.has("note_" + std::to_string(i)); ++i)
      inputs.notes.push_back(sel.get("note_" + std::to_string(i)));
  }

  if (fs::exists(lay.eval_manifest())) {
    const ConfigDoc eval_man =
        load_manifest(lay.eval_manifest(), "eval manifest", "eval-manifest-v1");
    inputs.robustness = load_robust_series_csv(lay.abs(eval_man.get("series")).string());
    if (config_bool_or(eval_man, "cmp.audited", false) || eval_man.has("cmp.backends")) {
      BackendComparison cmp;
      cmp.query_count = config_count(eval_man, "cmp.query_count");
      cmp.audited = config_bool(eval_man, "cmp.audited");
      cmp.audit_checked = config_count(eval_man, "cmp.audit_checked");
      cmp.audit_violations = config_count(eval_man, "cmp.audit_violations");
      for (const std::string& tag : split_words(eval_man.get("cmp.backends"))) {
        cmp.backend_tags.push_back(tag);
        cmp.sat_totals.push_back(config_count(eval_man, "cmp.sat_" + tag));
        cmp.timeout_totals.push_back(config_count(eval_man, "cmp.timeout_" + tag));
      }
      inputs.comparison = std::move(cmp);
    }
  }

  const std::vector<std::string> written = emit_report(inputs, lay.report_dir().string(), plot);
  std::cout << "report written:\n";
  for (const std::string& path : written) std::cout << "  " << path << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// Single and batched verification
// ---------------------------------------------------------------------------

struct VerifyFlags {
  std::vector<std::string> nets;
  std::string point;
  int label = 0;
  double eps = 0.0;
  std::string mode = "runner_up";
  double timeout = 60.0;
  std::string witness_out;
};

int cmd_verify(const VerifyFlags& f) {
  if (f.nets.empty() || f.nets.size() > 2)
    throw std::runtime_error("verify: pass --net once (robustness) or twice (mutual error)");
  const QueryMode mode = parse_mode_flag(f.mode);
  const Vector x0 = load_vector_file(f.point);

  VerificationQuery query;
  if (f.nets.size() == 1) {
    const Network net = load_network(f.nets[0]);
    if (classify(net, x0) != f.label)
      throw std::runtime_error("verify: the network classifies the point as " +
                               std::to_string(classify(net, x0)) + ", not --label " +
                               std::to_string(f.label));
    query = encode_robustness_query(net, x0, f.label, f.eps, mode);
  } else {
    const Network a = load_network(f.nets[0]);
    const Network b = load_network(f.nets[1]);
    for (const Network* net : {&a, &b})
      if (classify(*net, x0) != f.label)
        throw std::runtime_error(
            "verify: the point is not an agreement point of both networks for --label " +
            std::to_string(f.label));
    query = encode_mutual_error_query(a, b, x0, f.eps, mode);
  }

  SolveConfig cfg;
  cfg.timeout_seconds = f.timeout;
  const Verdict v = solve(query, cfg);
  std::cout << verdict_name(v.status);
  if (v.status == VerdictStatus::sat && f.witness_out.empty())
    for (const double x : v.witness) std::cout << ' ' << format_double(x);
  std::cout << "\n";
  if (v.status == VerdictStatus::sat && !f.witness_out.empty())
    save_vector_file(f.witness_out, v.witness);
  return v.status == VerdictStatus::timeout ? kTimeouts : kOk;
}

int cmd_verify_batch(const RunConfig& rc, const std::string& queries_path, bool dry_run) {
  require_file(queries_path, "query batch file");
  const std::vector<BatchQuery> batch = load_query_batch_csv(queries_path);
  if (dry_run) {
    std::cout << "verify-batch would dispatch " << batch.size() << " queries\n";
    return kOk;
  }

  const Layout lay(rc.out);
  const PoolBundle pool = load_pool(lay);
  const AgreementSet agreement = load_agreement(lay);
  make_dir(lay.witness_dir());

  for (std::size_t i = 0; i < batch.size(); ++i) {
    const MutualQuery& q = batch[i].query;
    if (q.a >= pool.nets.size() || q.b >= pool.nets.size())
      throw std::runtime_error("query " + std::to_string(i) + ": member id out of range");
    if (q.point >= agreement.points.size())
      throw std::runtime_error("query " + std::to_string(i) + ": point id out of range");
    if (!(q.epsilon > 0.0))
      throw std::runtime_error("query " + std::to_string(i) + ": epsilon must be positive");
    const AgreementPoint& pt = agreement.points[q.point];
    for (const std::size_t id : {q.a, q.b})
      if (classify(pool.nets[id], pt.x) != pt.label)
        throw std::runtime_error("query " + std::to_string(i) + ": point " +
                                 std::to_string(q.point) + " is not an agreement point of member " +
                                 std::to_string(id));
  }

  std::vector<Verdict> verdicts(batch.size());
  parallel_for(batch.size(), rc.workers, [&](std::size_t i) {
    const MutualQuery& q = batch[i].query;
    SolveConfig cfg;
    cfg.timeout_seconds = rc.solver_timeout;
    verdicts[i] = solve(encode_mutual_error_query(pool.nets[q.a], pool.nets[q.b],
                                                  agreement.points[q.point].x, q.epsilon,
                                                  batch[i].mode),
                        cfg);
  });

  std::ofstream out(lay.verify_results());
  if (!out) throw std::runtime_error("cannot open " + lay.verify_results().string());
  out << "member_a,member_b,point,epsilon,mode,status,witness,nodes,lp_calls,wall_ms\n";
  std::size_t timeouts = 0, sats = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Verdict& v = verdicts[i];
    std::string witness;
    if (v.status == VerdictStatus::sat) {
      ++sats;
      const fs::path wpath = lay.witness_dir() / ("witness_" + std::to_string(i) + ".vec");
      save_vector_file(wpath.string(), v.witness);
      witness = lay.rel(wpath);
    }
    if (v.status == VerdictStatus::timeout) ++timeouts;
    const MutualQuery& q = batch[i].query;
    out << csv_join({std::to_string(q.a), std::to_string(q.b), std::to_string(q.point),
                     format_double(q.epsilon), query_mode_name(batch[i].mode),
                     verdict_name(v.status), witness, std::to_string(v.stats.nodes),
                     std::to_string(v.stats.lp_calls), format_double(v.stats.wall_ms)})
        << '\n';
  }
  out.close();
  std::cout << "verified " << batch.size() << " queries: " << sats << " sat, " << timeouts
            << " timeouts; results in " << lay.verify_results().string() << "\n";
  return timeouts ? kTimeouts : kOk;
}

int stage_pipeline(const RunConfig& rc, bool plot) {
  int worst = kOk;
  const auto run = [&](const char* name, const std::function<int()>& stage) {
    std::cout << "== " << name << " ==\n";
    const int code = stage();
    if (code == kTimeouts) worst = kTimeouts;
    return code;
  };
  for (const auto& [name, stage] : std::vector<std::pair<const char*, std::function<int()>>>{
           {"prepare-data", [&] { return stage_prepare(rc); }},
           {"train-pool", [&] { return stage_train(rc); }},
           {"agreement", [&] { return stage_agreement(rc); }},
           {"score", [&] { return stage_score(rc, false); }},
           {"attack-batch", [&] {
              return rc.attack_kinds.empty() ? kOk : stage_attack(rc, false);
            }},
           {"select", [&] { return stage_select(rc, false); }},
           {"evaluate", [&] { return stage_evaluate(rc, false); }},
           {"report", [&] { return stage_report(rc, plot); }},
       }) {
    const int code = run(name, stage);
    if (code != kOk && code != kTimeouts) return code;
  }
  return worst;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"verification-aided deep ensemble selection toolkit"};
  app.require_subcommand(1);

  CommonFlags common;
  bool plot = false;
  VerifyFlags verify_flags;
  std::string queries_path;

  const auto add_common = [&](CLI::App* sub, bool with_dry) {
    sub->add_option("--config", common.config, "experiment config file")->required();
    sub->add_option("--set", common.sets, "override a config key (key=value, repeatable)");
    sub->add_option("--workers", common.workers, "worker threads for batch stages");
    if (with_dry)
      sub->add_flag("--dry-run", common.dry_run, "print the query count and exit without solving");
  };

  std::function<int()> action;

  add_common(app.add_subcommand("prepare-data", "synthesize or convert the dataset and write splits"), false);
  app.get_subcommand("prepare-data")->callback([&] { action = [&] { return stage_prepare(load_run(common)); }; });

  add_common(app.add_subcommand("train-pool", "train the classifier pool"), false);
  app.get_subcommand("train-pool")->callback([&] { action = [&] { return stage_train(load_run(common)); }; });

  add_common(app.add_subcommand("agreement", "collect agreement points for the pool"), false);
  app.get_subcommand("agreement")->callback([&] { action = [&] { return stage_agreement(load_run(common)); }; });

  add_common(app.add_subcommand("score", "fill the ensemble's mutual-error table"), true);
  app.get_subcommand("score")->callback([&] { action = [&] { return stage_score(load_run(common), common.dry_run); }; });

  add_common(app.add_subcommand("attack-batch", "fill mutual-error tables with gradient attacks"), true);
  app.get_subcommand("attack-batch")->callback([&] { action = [&] { return stage_attack(load_run(common), common.dry_run); }; });

  add_common(app.add_subcommand("select", "greedily swap weak members for unique candidates"), true);
  app.get_subcommand("select")->callback([&] { action = [&] { return stage_select(load_run(common), common.dry_run); }; });

  add_common(app.add_subcommand("evaluate", "certify robust accuracy of the ensembles"), true);
  app.get_subcommand("evaluate")->callback([&] { action = [&] { return stage_evaluate(load_run(common), common.dry_run); }; });

  {
    CLI::App* sub = app.add_subcommand("report", "gather stage outputs into CSVs, a summary, and plots");
    add_common(sub, false);
    sub->add_flag("--plot", plot, "also render an SVG bar chart");
    sub->callback([&] { action = [&] { return stage_report(load_run(common), plot); }; });
  }

  {
    CLI::App* sub = app.add_subcommand("verify", "decide a single robustness or mutual-error query");
    sub->add_option("--net", verify_flags.nets, "network file (once or twice)")->required();
    sub->add_option("--point", verify_flags.point, "vector file with the center point")->required();
    sub->add_option("--label", verify_flags.label, "agreed label at the point")->required();
    sub->add_option("--eps", verify_flags.eps, "ball radius")->required();
    sub->add_option("--mode", verify_flags.mode, "full or runner-up (default runner-up)");
    sub->add_option("--timeout", verify_flags.timeout, "solver budget in seconds");
    sub->add_option("--witness-out", verify_flags.witness_out, "write a sat witness to this file");
    sub->callback([&] { action = [&] { return cmd_verify(verify_flags); }; });
  }

  {
    CLI::App* sub = app.add_subcommand("verify-batch", "decide a CSV of mutual-error queries");
    add_common(sub, true);
    sub->add_option("--queries", queries_path, "query batch CSV")->required();
    sub->callback([&] { action = [&] { return cmd_verify_batch(load_run(common), queries_path, common.dry_run); }; });
  }

  {
    CLI::App* sub = app.add_subcommand("pipeline", "run every stage in order");
    add_common(sub, false);
    sub->add_flag("--plot", plot, "also render an SVG bar chart");
    sub->callback([&] { action = [&] { return stage_pipeline(load_run(common), plot); }; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    return action();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kStageFailure;
  }
}
