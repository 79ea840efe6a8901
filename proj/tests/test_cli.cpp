#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

#include "mvsum/cli.hpp"

using namespace mvsum;
using namespace mvsum::cli;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("mvsum_cli_" + std::to_string(::getpid())) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path write_config(const fs::path& dir, const json& j, const std::string& name = "config.json") {
  const auto p = dir / name;
  write_file(p, j.dump(2));
  return p;
}

int run(const std::string& args) {
  const char* bin = std::getenv("MVSUM_BIN");
  REQUIRE(bin != nullptr);
  const auto cmd = std::string(bin) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::size_t data_rows(const fs::path& csv) {
  std::ifstream in(csv);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line))
    if (!line.empty() && line[0] != '#') ++n;
  return n - 1;
}

json small_fit_config() {
  return {{"family", {{"kind", "negbin"}, {"r", 50}, {"alpha", 2}, {"beta", 2}}},
          {"scenario", {{"T", 200}, {"tau", {101}}, {"m", {0, 2}}, {"theta", {0.3, 0.7}}}},
          {"sampler", {{"iterations", 2000}, {"burn_in", 500}, {"n_chains", 2}, {"init_iterations", 500}}},
          {"seed", 5},
          {"input", "out/series.csv"},
          {"output_dir", "out"},
          {"evaluate", {{"truth", "out/truth.json"}, {"estimates", {"out/estimate.json"}}, {"traces", {"out/trace.jsonl"}}}}};
}

} // namespace

TEST_CASE("minimal simulation writes one row per time point") {
  const auto dir = scratch("minimal");
  const auto cfg = write_config(dir, {{"family", {{"kind", "normal"}}}, {"scenario", {{"T", 10}}}, {"output_dir", "out"}});
  REQUIRE(run("simulate --config " + cfg.string()) == 0);
  CHECK(data_rows(dir / "out/series.csv") == 10);
  const auto truth = parse_json_file(dir / "out/truth.json");
  CHECK(truth.at("tau").empty());
  CHECK(truth.at("segments").size() == 1);
}

TEST_CASE("repeated runs are byte-identical") {
  const auto dir = scratch("repeat");
  const auto cfg = write_config(dir, small_fit_config());
  REQUIRE(run("simulate --config " + cfg.string()) == 0);
  REQUIRE(run("fit --config " + cfg.string()) == 0);
  const auto series = read_file(dir / "out/series.csv"), trace = read_file(dir / "out/trace.jsonl"),
             estimate = read_file(dir / "out/estimate.json"), meta = read_file(dir / "out/metadata.json");
  REQUIRE(run("simulate --config " + cfg.string()) == 0);
  REQUIRE(run("fit --config " + cfg.string()) == 0);
  CHECK(read_file(dir / "out/series.csv") == series);
  CHECK(read_file(dir / "out/trace.jsonl") == trace);
  CHECK(read_file(dir / "out/estimate.json") == estimate);
  CHECK(read_file(dir / "out/metadata.json") == meta);

  REQUIRE(run("simulate --config " + cfg.string() + " --seed 6") == 0);
  CHECK(read_file(dir / "out/series.csv") != series);
}

TEST_CASE("three-changepoint scenario yields k = 3") {
  const auto dir = scratch("k3");
  const auto cfg = write_config(
      dir, {{"family", {{"kind", "normal"}}}, {"scenario", {{"T", 1200}, {"tau", {300, 600, 900}}, {"nu", 0.2}}}, {"output_dir", "out"}});
  REQUIRE(run("simulate --config " + cfg.string()) == 0);
  const auto truth = parse_json_file(dir / "out/truth.json");
  CHECK(truth.at("tau").size() == 3);
  CHECK(truth.at("segments").size() == 4);
  CHECK(truth.at("T") == 1200);
}

TEST_CASE("simulate, fit and evaluate round trip") {
  const auto dir = scratch("roundtrip");
  const auto cfg = write_config(dir, small_fit_config());
  REQUIRE(run("simulate --config " + cfg.string()) == 0);
  REQUIRE(run("fit --config " + cfg.string()) == 0);
  REQUIRE(run("evaluate --config " + cfg.string()) == 0);

  const auto est = parse_json_file(dir / "out/estimate.json");
  const auto meta = parse_json_file(dir / "out/metadata.json");
  CHECK(est.at("config_hash") == meta.at("config_hash"));
  CHECK(est.at("seed") == 5);
  CHECK(est.at("chains").size() == 2);
  CHECK(meta.at("acceptance").size() == 2);

  std::ifstream trace(dir / "out/trace.jsonl");
  std::string line;
  std::getline(trace, line);
  CHECK(json::parse(line).at("type") == "header");
  std::size_t samples = 0;
  while (std::getline(trace, line)) {
    const auto r = json::parse(line);
    CHECK(r.at("m").size() == r.at("tau").size() + 1);
    CHECK(r.at("gamma").size() == r.at("m").size());
    ++samples;
  }
  CHECK(samples == 2 * 2000);

  CHECK(read_file(dir / "out/f1.csv").rfind("# config_hash=", 0) == 0);
  const auto summary = read_file(dir / "out/f1_summary.csv");
  CHECK(summary.find("f1_variance") != std::string::npos);
  const auto conv = parse_json_file(dir / "out/convergence.json");
  CHECK(conv.contains("f1_variance"));
  CHECK(conv.at("traces").at("chains").size() == 2);
}

TEST_CASE("perfect and partial estimates score 1 and 0.8") {
  const auto dir = scratch("score");
  write_file(dir / "truth.json", json{{"T", 1200}, {"tau", {300, 600, 900}}}.dump());
  write_file(dir / "same.json", json{{"T", 1200}, {"k_hat", 3}, {"tau_hat", {300, 600, 900}}}.dump());
  write_file(dir / "two.json", json{{"T", 1200}, {"k_hat", 2}, {"tau_hat", {302, 598}}}.dump());
  const auto cfg = write_config(dir, {{"evaluate", {{"truth", "truth.json"}, {"estimates", {"same.json", "two.json"}}}}, {"output_dir", "out"}});
  REQUIRE(run("evaluate --config " + cfg.string()) == 0);
  const auto csv = read_file(dir / "out/f1.csv");
  CHECK(csv.find("0,pooled,3,1,1,1\n") != std::string::npos);
  CHECK(csv.find("1,pooled,2,0.80000000000000004,1,0.66666666666666663\n") != std::string::npos);

  write_file(dir / "short.json", json{{"T", 1000}, {"k_hat", 0}, {"tau_hat", json::array()}}.dump());
  const auto bad = write_config(dir, {{"evaluate", {{"truth", "truth.json"}, {"estimates", {"short.json"}}}}}, "bad.json");
  CHECK(run("evaluate --config " + bad.string()) == 3);
}

TEST_CASE("constant series in standard mode has no changepoints") {
  const auto dir = scratch("constant");
  std::string csv = "value\n";
  for (int t = 0; t < 60; ++t) csv += "4\n";
  write_file(dir / "series.csv", csv);
  const auto cfg = write_config(dir, {{"family", {{"kind", "negbin"}, {"r", 20}}},
                                      {"sampler", {{"iterations", 3000}, {"burn_in", 1000}, {"init", "cold"}}},
                                      {"input", "series.csv"},
                                      {"output_dir", "out"}});
  REQUIRE(run("fit --standard --config " + cfg.string()) == 0);
  const auto est = parse_json_file(dir / "out/estimate.json");
  CHECK(est.at("k_hat") == 0);
  CHECK(est.at("m_hat") == json::array({0}));
}

TEST_CASE("exit codes") {
  const auto dir = scratch("codes");
  CHECK(run("fit --config " + (dir / "missing.json").string()) == 2);

  const auto unknown = write_config(dir, {{"family", {{"kind", "normal"}}}, {"sampler", {{"iteratons", 10}}}}, "unknown.json");
  CHECK(run("fit --config " + unknown.string()) == 2);
  CHECK_THROWS_AS(parse_config(json{{"colour", 1}}, {}), ConfigError);
  CHECK_THROWS_AS(parse_config(json{{"family", {{"kind", "poisson"}}}}, {}), ConfigError);
  CHECK_THROWS_AS(parse_config(json{{"sampler", {{"rho", 1.5}}}}, {}), ConfigError);

  write_file(dir / "neg.csv", "x\n1\n2\n-3\n4\n");
  const auto neg = write_config(dir, {{"family", {{"kind", "negbin"}}}, {"input", "neg.csv"}, {"output_dir", "out"}}, "neg.json");
  CHECK(run("fit --config " + neg.string()) == 3);
  try {
    read_series_csv(dir / "neg.csv", SupportClass::nonneg_discrete);
    FAIL("expected a data error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("row 4") != std::string::npos);
  }
  write_file(dir / "frac.csv", "1\n2.5\n");
  CHECK_THROWS_AS(read_series_csv(dir / "frac.csv", SupportClass::nonneg_discrete), DataError);
  write_file(dir / "nan.csv", "1\nnan\n");
  CHECK_THROWS_AS(read_series_csv(dir / "nan.csv", SupportClass::unbounded_continuous), DataError);
  CHECK(run("") == 2);
  CHECK(run("frobnicate --config x") == 2);
}

TEST_CASE("series reader accepts headers, index columns and comments") {
  const auto dir = scratch("reader");
  write_file(dir / "a.csv", "# produced elsewhere\nt,x\n1,3\n2,4.5\r\n3,-1\n");
  CHECK(read_series_csv(dir / "a.csv", SupportClass::unbounded_continuous) == std::vector<double>{3, 4.5, -1});
  write_file(dir / "b.csv", "7\n8\n");
  CHECK(read_series_csv(dir / "b.csv", SupportClass::nonneg_discrete) == std::vector<double>{7, 8});
}

TEST_CASE("config hash tracks the effective configuration") {
  const json j = small_fit_config();
  const auto a = parse_config(j, {});
  CHECK(parse_config(j, {}).hash == a.hash);
  Overrides ov;
  ov.seed = 99;
  const auto b = parse_config(j, ov);
  CHECK(b.hash != a.hash);
  CHECK(b.seed == 99);
  CHECK(b.sampler.seed == 99);
  ov = {};
  ov.standard = true;
  CHECK(parse_config(j, ov).sampler.standard);
  const auto rel = parse_config(j, {}, "/data/run");
  CHECK(rel.input == "/data/run/out/series.csv");
}

TEST_CASE("order-space study command") {
  const auto dir = scratch("mspace");
  const auto cfg = write_config(dir, {{"family", {{"kind", "negbin"}, {"r", 300}}},
                                      {"mspace", {{"m", {0, 1, 2, 3, 4}}, {"n", {100}}, {"theta", {0.4}}, {"replicates", 10}, {"m_prime_max", 4}}},
                                      {"output_dir", "out"}});
  REQUIRE(run("mspace-study --config " + cfg.string()) == 0);
  std::ifstream in(dir / "out/mspace.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line.rfind("# config_hash=", 0) == 0);
  std::getline(in, line);
  CHECK(line == "n,m,theta,m_prime,Q");
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    int n = 0, m = 0, mp = 0;
    double th = 0, q = 0;
    REQUIRE(std::sscanf(line.c_str(), "%d,%d,%lf,%d,%lf", &n, &m, &th, &mp, &q) == 5);
    CHECK(q >= 0);
    CHECK(q <= 1);
    const auto d = divisor_orders(m);
    if (std::find(d.begin(), d.end(), mp) != d.end()) CHECK(q == 1.0);
    ++rows;
  }
  CHECK(rows == 25);

  const auto bad = write_config(dir, {{"family", {{"kind", "negbin"}}}, {"mspace", {{"theta", {1.5}}}}}, "bad.json");
  CHECK(run("mspace-study --config " + bad.string()) == 2);
}
