#include <unistd.h>

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "ensel/config.hpp"
#include "ensel/io.hpp"
#include "support/published.hpp"

using namespace ensel;

namespace {

// A unique scratch directory per use, removed on scope exit.
struct TempDir {
  std::filesystem::path path;

  TempDir() {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("ensel_io_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("config documents parse, override, and round-trip in order") {
  SECTION("parsing skips comments and trims whitespace") {
    std::istringstream in(
        "# experiment setup\n"
        "\n"
        "pool_size = 10\n"
        "eps_list=0.01, 0.02 0.03\n"
        "  mode =  runner_up  \n"
        "out = results/run one\n");
    const ConfigDoc doc = parse_config(in, "test");
    REQUIRE(doc.entries.size() == 4);
    CHECK(config_count(doc, "pool_size") == 10);
    CHECK(config_doubles(doc, "eps_list") == std::vector<double>{0.01, 0.02, 0.03});
    CHECK(doc.get("mode") == "runner_up");
    CHECK(doc.get("out") == "results/run one");  // values may hold spaces
  }

  SECTION("typed getters validate and fall back") {
    ConfigDoc doc;
    doc.set("k", "3");
    doc.set("flag", "true");
    doc.set("neg", "-4");
    CHECK(config_count(doc, "k") == 3);
    CHECK(config_bool(doc, "flag"));
    CHECK(config_int(doc, "neg") == -4);
    CHECK_THROWS_WITH(config_count(doc, "neg"), Catch::Matchers::ContainsSubstring("negative"));
    CHECK_THROWS_WITH(doc.get("missing"), Catch::Matchers::ContainsSubstring("missing"));
    CHECK(doc.get_or("missing", "dflt") == "dflt");
    CHECK(config_count_or(doc, "absent", 7) == 7);
    CHECK(config_double_or(doc, "absent", 0.5) == 0.5);
    CHECK_FALSE(config_bool_or(doc, "absent", false));
    CHECK_THROWS_WITH(config_bool(doc, "k"), Catch::Matchers::ContainsSubstring("true/false"));
  }

  SECTION("malformed input is rejected with the line named") {
    std::istringstream dup("a=1\na=2\n");
    CHECK_THROWS_WITH(parse_config(dup, "f"), Catch::Matchers::ContainsSubstring("f:2"));
    std::istringstream noeq("a=1\njust words\n");
    CHECK_THROWS_WITH(parse_config(noeq, "f"), Catch::Matchers::ContainsSubstring("key=value"));
    std::istringstream nokey("=5\n");
    CHECK_THROWS_AS(parse_config(nokey, "f"), std::runtime_error);
  }

  SECTION("overrides replace in place and keep insertion order") {
    ConfigDoc doc;
    doc.set("first", "1");
    doc.set("second", "2");
    apply_override(doc, "second=20");
    apply_override(doc, "third = 3");
    REQUIRE(doc.entries.size() == 3);
    CHECK(doc.entries[1] == std::pair<std::string, std::string>{"second", "20"});
    CHECK(doc.entries[2].first == "third");
    CHECK_THROWS_AS(apply_override(doc, "no-equals"), std::runtime_error);

    std::ostringstream out;
    write_config(out, doc);
    CHECK(out.str() == "first=1\nsecond=20\nthird=3\n");

    // writing and re-parsing reproduces the document byte for byte
    std::istringstream back(out.str());
    const ConfigDoc again = parse_config(back, "round");
    std::ostringstream out2;
    write_config(out2, again);
    CHECK(out2.str() == out.str());
  }
}

TEST_CASE("vector files round-trip exact doubles") {
  TempDir dir;
  const Vector v = {1.0 / 3.0, 3.141592653589793, 1e-300, -123456789.123456789, 0.0};
  save_vector_file(dir.file("w.vec"), v);
  CHECK(load_vector_file(dir.file("w.vec")) == v);
  CHECK_THROWS_AS(load_vector_file(dir.file("absent.vec")), std::runtime_error);
}

TEST_CASE("score-table CSVs round-trip and reject malformed input") {
  const MutualErrorTable table = fixtures::published_table();

  SECTION("write then read gives the identical table") {
    std::ostringstream out;
    write_score_table_csv(out, table);
    std::istringstream in(out.str());
    const MutualErrorTable back = read_score_table_csv(in, "round");
    REQUIRE(back == table);
  }

  SECTION("file-based round-trip") {
    TempDir dir;
    save_score_table_csv(dir.file("t.csv"), table);
    CHECK(load_score_table_csv(dir.file("t.csv")) == table);
  }

  SECTION("malformed tables are rejected") {
    auto parse = [](const std::string& text) {
      std::istringstream in(text);
      return read_score_table_csv(in, "bad");
    };
    const std::string header = std::string(kScoreTableHeader) + "\n";
    CHECK_THROWS_WITH(parse("pair_a,pair_b\n"), Catch::Matchers::ContainsSubstring("header"));
    CHECK_THROWS_WITH(parse(header), Catch::Matchers::ContainsSubstring("no rows"));
    CHECK_THROWS_WITH(parse(header + "1,0,0.1,2,8,0,verifier,runner_up\n"),
                      Catch::Matchers::ContainsSubstring("normalized"));
    CHECK_THROWS_WITH(parse(header + "0,1,0.1,2,8,0,verifier,runner_up,9\n"),
                      Catch::Matchers::ContainsSubstring("fields"));
    CHECK_THROWS_WITH(parse(header + "0,1,0.1,2,8,0,verifier,runner_up\n" +
                            "0,2,0.1,2,8,0,ga2,runner_up\n"),
                      Catch::Matchers::ContainsSubstring("backend or mode"));
    CHECK_THROWS_WITH(parse(header + "0,1,0.1,2,8,0,verifier,runner_up\n" +
                            "0,2,0.2,2,8,0,verifier,runner_up\n"),
                      Catch::Matchers::ContainsSubstring("epsilon sequences"));
    CHECK_THROWS_WITH(parse(header + "0,1,0.1,2,8,0,verifier,runner_up\n" +
                            "0,2,0.1,2,8,0,verifier,runner_up\n" +
                            "0,1,0.2,2,8,0,verifier,runner_up\n"),
                      Catch::Matchers::ContainsSubstring("grouped"));
    // a pair missing one epsilon row fails table validation
    CHECK_THROWS_WITH(parse(header + "0,1,0.1,2,8,0,verifier,runner_up\n" +
                            "0,1,0.2,2,8,0,verifier,runner_up\n" +
                            "0,2,0.1,2,8,0,verifier,runner_up\n" +
                            "0,2,0.2,2,8,0,verifier,runner_up\n" +
                            "1,2,0.1,2,8,0,verifier,runner_up\n"),
                      Catch::Matchers::ContainsSubstring("epsilon"));
    // cells disagreeing on m fail table validation
    CHECK_THROWS_WITH(parse(header + "0,1,0.1,2,8,0,verifier,runner_up\n" +
                            "0,2,0.1,2,8,0,verifier,runner_up\n" +
                            "1,2,0.1,2,9,0,verifier,runner_up\n"),
                      Catch::Matchers::ContainsSubstring("sum to m"));
  }
}

TEST_CASE("history CSVs round-trip swap records") {
  std::vector<SwapRecord> history;
  SwapRecord a;
  a.removed = 0;
  a.inserted = 4;
  a.us_before = 0.45;
  a.us_after = 1.0 / 3.0;
  a.joint_errors_before = 15;
  a.joint_errors_after = 4;
  SwapRecord b;
  b.removed = 1;
  b.inserted = 3;
  b.us_before = 0.8;
  b.us_after = 0.9;
  b.joint_errors_before = 4;
  b.joint_errors_after = 2;
  history = {a, b};

  std::ostringstream out;
  write_history_csv(out, history);
  std::istringstream in(out.str());
  CHECK(read_history_csv(in, "round") == history);

  std::ostringstream empty;
  write_history_csv(empty, {});
  std::istringstream ein(empty.str());
  CHECK(read_history_csv(ein, "round").empty());

  std::istringstream bad(std::string(kHistoryHeader) + "\n2,0,4,0.45,1,15,4\n");
  CHECK_THROWS_WITH(read_history_csv(bad, "bad"),
                    Catch::Matchers::ContainsSubstring("iteration"));
}

TEST_CASE("agreement files round-trip points and flags") {
  AgreementSet set;
  set.label_filter = -1;
  set.require_correct = true;
  set.points.push_back({{0.25, 1.0 / 3.0, 0.75}, 2, 17});
  set.points.push_back({{0.0, 0.5, 1.0}, 0, 33});

  TempDir dir;
  save_agreement_file(dir.file("a.txt"), set);
  const AgreementSet back = load_agreement_file(dir.file("a.txt"));
  REQUIRE(back.points.size() == 2);
  CHECK(back.label_filter == -1);
  CHECK(back.require_correct);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back.points[i].x == set.points[i].x);
    CHECK(back.points[i].label == set.points[i].label);
    CHECK(back.points[i].source == set.points[i].source);
  }

  set.label_filter = 1;
  set.require_correct = false;
  save_agreement_file(dir.file("b.txt"), set);
  const AgreementSet filtered = load_agreement_file(dir.file("b.txt"));
  CHECK(filtered.label_filter == 1);
  CHECK_FALSE(filtered.require_correct);

  auto parse = [](const std::string& text) {
    std::istringstream in(text);
    return read_agreement_file(in, "bad");
  };
  CHECK_THROWS_WITH(parse("wrong v1\n"), Catch::Matchers::ContainsSubstring("header"));
  CHECK_THROWS_WITH(
      parse("agreement v1\ncount 0 dim 2 label_filter -1 require_correct 1\nextra\n"),
      Catch::Matchers::ContainsSubstring("trailing"));
  CHECK_THROWS_WITH(parse("agreement v1\ncount 1 dim 2 label_filter -1 require_correct 1\n"),
                    Catch::Matchers::ContainsSubstring("end of input"));
}

TEST_CASE("composite sidecars restore the network and its slices") {
  std::vector<Layer> la;
  la.push_back(Layer::affine(Matrix(2, 2, {1.0, 0.5, -0.25, 2.0}), {0.1, -0.2}));
  la.push_back(Layer::relu());
  la.push_back(Layer::affine(Matrix(3, 2, {1.0, 0.0, 0.0, 1.0, 0.5, 0.5}), {0.0, 0.25, -0.5}));
  const Network a = make_network(2, std::move(la));
  std::vector<Layer> lb;
  lb.push_back(Layer::affine(Matrix(2, 2, {-1.0, 0.75, 0.3, -0.6}), {0.0, 0.4}));
  lb.push_back(Layer::relu());
  lb.push_back(Layer::affine(Matrix(3, 2, {0.2, -0.1, 1.0, 1.0, -0.7, 0.0}), {0.1, 0.0, 0.3}));
  const Network b = make_network(2, std::move(lb));

  const CompositeNetwork comp = pair_composite(a, b);
  TempDir dir;
  save_composite(comp, dir.file("pair.nn"), dir.file("pair.manifest"));
  const CompositeNetwork back = load_composite(dir.file("pair.nn"), dir.file("pair.manifest"));

  CHECK(back.member_count == 2);
  CHECK(back.output_slices == comp.output_slices);
  const Vector probe = {0.3, -0.8};
  CHECK(forward(back.net, probe) == forward(comp.net, probe));

  // a manifest whose slices do not tile the output is rejected
  std::ofstream tampered(dir.file("pair.manifest"));
  tampered << "composite v1\nmembers 2\nslice 0 3\nslice 4 2\n";
  tampered.close();
  CHECK_THROWS_WITH(load_composite(dir.file("pair.nn"), dir.file("pair.manifest")),
                    Catch::Matchers::ContainsSubstring("tile"));
}

TEST_CASE("query batches round-trip with per-row modes") {
  std::vector<BatchQuery> batch;
  BatchQuery q1;
  q1.query = {0, 3, 12, 0.02};
  q1.mode = QueryMode::runner_up;
  BatchQuery q2;
  q2.query = {1, 2, 0, 0.1};
  q2.mode = QueryMode::full;
  batch = {q1, q2};

  std::ostringstream out;
  write_query_batch_csv(out, batch);
  std::istringstream in(out.str());
  CHECK(read_query_batch_csv(in, "round") == batch);

  std::istringstream bad(std::string(kQueryBatchHeader) + "\n2,2,0,0.1,full\n");
  CHECK_THROWS_WITH(read_query_batch_csv(bad, "bad"),
                    Catch::Matchers::ContainsSubstring("distinct"));
}

TEST_CASE("csv fields refuse embedded delimiters") {
  CHECK(csv_join({"a", "b", "c"}) == "a,b,c");
  CHECK(csv_split("a,,c") == std::vector<std::string>{"a", "", "c"});
  CHECK_THROWS_AS(csv_join({"a,b"}), std::runtime_error);
}
