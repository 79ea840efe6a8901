#pragma once

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "mvsum/errors.hpp"
#include "mvsum/evaluation.hpp"
#include "mvsum/families.hpp"
#include "mvsum/rng.hpp"
#include "mvsum/sampler.hpp"
#include "mvsum/simulator.hpp"

namespace mvsum::cli {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline constexpr const char* kVersion = "1.0.0";

struct EvaluateOptions {
  std::string truth;
  std::vector<std::string> estimates;
  std::vector<std::string> traces;
  int epsilon = 5;
  double threshold = 0.1;
};

struct MSpaceOptions {
  std::vector<int> m{0, 1, 2, 3, 4};
  std::vector<int> n{100};
  std::vector<double> theta{0.4};
  int replicates = 50;
  int m_prime_max = 30;
};

struct Overrides {
  std::optional<std::uint64_t> seed;
  bool standard = false;
  std::optional<std::string> out;
};

struct RunConfig {
  json effective;
  FamilySpec family{NormalFamily{}};
  SamplerConfig sampler;
  ScenarioSpec scenario;
  bool has_scenario = false;
  std::uint64_t seed = 1;
  std::string input;
  fs::path output_dir = "out";
  EvaluateOptions evaluate;
  MSpaceOptions mspace;
  std::string hash;
};

// --- small utilities --------------------------------------------------------

inline std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return buf;
}

inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& p, const std::string& content) {
  std::error_code ec;
  if (p.has_parent_path()) fs::create_directories(p.parent_path(), ec);
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  out << content;
  if (!out) throw IoError("failed writing " + p.string());
}

inline json parse_json_file(const fs::path& p) {
  const auto text = read_file(p);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError(p.string() + ": invalid JSON: " + e.what());
  }
}

// --- config validation ------------------------------------------------------

namespace detail {

inline void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [k, v] : obj.items())
    if (!allowed.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
}

inline double num(const json& obj, const char* key, double def, const std::string& where) {
  if (!obj.contains(key)) return def;
  const auto& v = obj.at(key);
  if (!v.is_number()) throw ConfigError(where + "." + key + " must be a number");
  return v.get<double>();
}

inline long long integer(const json& obj, const char* key, long long def, const std::string& where) {
  if (!obj.contains(key)) return def;
  const auto& v = obj.at(key);
  if (!v.is_number_integer()) throw ConfigError(where + "." + key + " must be an integer");
  return v.get<long long>();
}

inline std::uint64_t unsigned_integer(const json& obj, const char* key, std::uint64_t def, const std::string& where) {
  if (!obj.contains(key)) return def;
  const auto& v = obj.at(key);
  if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<long long>() < 0))
    throw ConfigError(where + "." + key + " must be a non-negative integer");
  return v.get<std::uint64_t>();
}

inline std::size_t count(const json& obj, const char* key, std::size_t def, const std::string& where) {
  const auto v = integer(obj, key, static_cast<long long>(def), where);
  if (v < 0) throw ConfigError(where + "." + key + " must be non-negative");
  return static_cast<std::size_t>(v);
}

inline bool boolean(const json& obj, const char* key, bool def, const std::string& where) {
  if (!obj.contains(key)) return def;
  const auto& v = obj.at(key);
  if (!v.is_boolean()) throw ConfigError(where + "." + key + " must be a boolean");
  return v.get<bool>();
}

inline std::string string(const json& obj, const char* key, const std::string& def, const std::string& where) {
  if (!obj.contains(key)) return def;
  const auto& v = obj.at(key);
  if (!v.is_string()) throw ConfigError(where + "." + key + " must be a string");
  return v.get<std::string>();
}

template <class T>
std::vector<T> list(const json& obj, const char* key, std::vector<T> def, const std::string& where) {
  if (!obj.contains(key)) return def;
  const auto& v = obj.at(key);
  if (!v.is_array()) throw ConfigError(where + "." + key + " must be an array");
  std::vector<T> out;
  for (const auto& e : v) {
    if constexpr (std::is_same_v<T, std::string>) {
      if (!e.is_string()) throw ConfigError(where + "." + key + " must hold strings");
    } else if constexpr (std::is_integral_v<T>) {
      if (!e.is_number_integer()) throw ConfigError(where + "." + key + " must hold integers");
    } else {
      if (!e.is_number()) throw ConfigError(where + "." + key + " must hold numbers");
    }
    out.push_back(e.get<T>());
  }
  return out;
}

inline FamilySpec parse_family(const json& j) {
  const std::string where = "family";
  if (!j.is_object()) throw ConfigError("family must be an object");
  const auto kind = string(j, "kind", "", where);
  try {
    if (kind == "normal") {
      check_keys(j, {"kind", "mu0", "lambda", "alpha", "beta"}, where);
      return NormalFamily({num(j, "mu0", 0, where), num(j, "lambda", 1, where), num(j, "alpha", 1, where), num(j, "beta", 1, where)});
    }
    if (kind == "gamma") {
      check_keys(j, {"kind", "lambda", "alpha", "beta"}, where);
      return GammaFamily({num(j, "lambda", 1, where), num(j, "alpha", 1, where), num(j, "beta", 1, where)});
    }
    if (kind == "negbin") {
      check_keys(j, {"kind", "r", "alpha", "beta"}, where);
      return NegBinFamily({num(j, "r", 1, where), num(j, "alpha", 1, where), num(j, "beta", 1, where)});
    }
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
  throw ConfigError("family.kind must be one of normal, gamma, negbin");
}

inline SamplerConfig parse_sampler(const json& j) {
  const std::string where = "sampler";
  SamplerConfig c;
  check_keys(j, {"moves", "p", "rho", "m_max", "N", "eta", "iterations", "burn_in", "thin", "n_chains", "init",
                 "init_iterations", "random_init_k_max", "record_path", "audit_every"},
             where);
  if (j.contains("moves")) {
    const auto& mv = j.at("moves");
    check_keys(mv, {"shift", "param", "birth", "death"}, "sampler.moves");
    c.moves = {num(mv, "shift", 0.3, "sampler.moves"), num(mv, "param", 0.4, "sampler.moves"),
               num(mv, "birth", 0.15, "sampler.moves"), num(mv, "death", 0.15, "sampler.moves")};
  }
  if (j.contains("p")) c.p = num(j, "p", 0, where);
  c.rho = num(j, "rho", c.rho, where);
  c.m_max = static_cast<int>(integer(j, "m_max", c.m_max, where));
  c.grid_size = static_cast<int>(integer(j, "N", c.grid_size, where));
  c.eta = num(j, "eta", c.eta, where);
  c.iterations = count(j, "iterations", c.iterations, where);
  c.burn_in = count(j, "burn_in", c.burn_in, where);
  c.thin = count(j, "thin", c.thin, where);
  c.n_chains = static_cast<int>(integer(j, "n_chains", c.n_chains, where));
  const auto init = string(j, "init", "standard", where);
  if (init == "standard") c.init = InitMode::standard;
  else if (init == "cold") c.init = InitMode::cold;
  else if (init == "random") c.init = InitMode::random;
  else throw ConfigError("sampler.init must be one of standard, cold, random");
  c.init_iterations = count(j, "init_iterations", c.init_iterations, where);
  c.random_init_k_max = static_cast<int>(integer(j, "random_init_k_max", c.random_init_k_max, where));
  c.record_path = boolean(j, "record_path", c.record_path, where);
  c.audit_every = count(j, "audit_every", c.audit_every, where);
  return c;
}

inline ScenarioSpec parse_scenario(const json& j) {
  const std::string where = "scenario";
  check_keys(j, {"T", "tau", "nu", "mu", "alpha0", "precision_rate", "m", "theta"}, where);
  ScenarioSpec s;
  s.T = static_cast<int>(integer(j, "T", s.T, where));
  s.tau = list<int>(j, "tau", {}, where);
  s.nu = num(j, "nu", s.nu, where);
  s.mu = num(j, "mu", s.mu, where);
  s.alpha0 = num(j, "alpha0", s.alpha0, where);
  s.precision_rate = num(j, "precision_rate", s.precision_rate, where);
  s.m = list<int>(j, "m", {}, where);
  s.theta = list<double>(j, "theta", {}, where);
  s.validate();
  return s;
}

} // namespace detail

/// Validates a parsed config and applies command-line overrides. Relative
/// paths inside the config resolve against `base`. The hash covers the
/// effective config except the output directory.
inline RunConfig parse_config(json j, const Overrides& ov, const fs::path& base = {}) {
  using namespace detail;
  check_keys(j, {"family", "sampler", "scenario", "seed", "standard", "input", "output_dir", "evaluate", "mspace"}, "config");
  if (ov.seed) j["seed"] = *ov.seed;
  if (ov.standard) j["standard"] = true;
  if (ov.out) j["output_dir"] = *ov.out;
  RunConfig rc;
  rc.seed = unsigned_integer(j, "seed", 1, "config");
  if (j.contains("family")) rc.family = parse_family(j.at("family"));
  rc.sampler = parse_sampler(j.value("sampler", json::object()));
  rc.sampler.seed = rc.seed;
  rc.sampler.standard = boolean(j, "standard", false, "config");
  rc.sampler.validate(2);
  if (j.contains("scenario")) {
    rc.scenario = parse_scenario(j.at("scenario"));
    rc.scenario.seed = rc.seed;
    rc.has_scenario = true;
  }
  auto resolve = [&](const std::string& p) { return p.empty() || fs::path(p).is_absolute() ? p : (base / p).string(); };
  rc.input = resolve(string(j, "input", "", "config"));
  const auto out = string(j, "output_dir", "out", "config");
  rc.output_dir = ov.out ? fs::path(*ov.out) : fs::path(resolve(out));
  if (j.contains("evaluate")) {
    const auto& e = j.at("evaluate");
    check_keys(e, {"truth", "estimates", "traces", "epsilon", "threshold"}, "evaluate");
    rc.evaluate.truth = resolve(string(e, "truth", "", "evaluate"));
    for (const auto& p : list<std::string>(e, "estimates", {}, "evaluate")) rc.evaluate.estimates.push_back(resolve(p));
    for (const auto& p : list<std::string>(e, "traces", {}, "evaluate")) rc.evaluate.traces.push_back(resolve(p));
    rc.evaluate.epsilon = static_cast<int>(integer(e, "epsilon", 5, "evaluate"));
    rc.evaluate.threshold = num(e, "threshold", 0.1, "evaluate");
    if (rc.evaluate.epsilon < 0) throw ConfigError("evaluate.epsilon must be non-negative");
  }
  if (j.contains("mspace")) {
    const auto& s = j.at("mspace");
    check_keys(s, {"m", "n", "theta", "replicates", "m_prime_max"}, "mspace");
    rc.mspace.m = list<int>(s, "m", rc.mspace.m, "mspace");
    rc.mspace.n = list<int>(s, "n", rc.mspace.n, "mspace");
    rc.mspace.theta = list<double>(s, "theta", rc.mspace.theta, "mspace");
    rc.mspace.replicates = static_cast<int>(integer(s, "replicates", rc.mspace.replicates, "mspace"));
    rc.mspace.m_prime_max = static_cast<int>(integer(s, "m_prime_max", rc.mspace.m_prime_max, "mspace"));
    if (rc.mspace.m.empty() || rc.mspace.n.empty() || rc.mspace.theta.empty()) throw ConfigError("mspace grids must be non-empty");
    for (int v : rc.mspace.m)
      if (v < 0) throw ConfigError("mspace.m entries must be non-negative");
    for (int v : rc.mspace.n)
      if (v < 1) throw ConfigError("mspace.n entries must be >= 1");
    if (rc.mspace.replicates < 1) throw ConfigError("mspace.replicates must be >= 1");
    if (rc.mspace.m_prime_max < 0) throw ConfigError("mspace.m_prime_max must be non-negative");
  }
  rc.effective = j;
  json hashed = j;
  hashed.erase("output_dir");
  rc.hash = fnv1a_hex(hashed.dump());
  return rc;
}

inline RunConfig load_config(const fs::path& path, const Overrides& ov) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  return parse_config(std::move(j), ov, path.parent_path());
}

// --- data files -------------------------------------------------------------

/// Reads a value column from CSV: optional header, optional leading index
/// column, '#' comment lines ignored. Row numbers in errors are file lines.
inline std::vector<double> read_series_csv(const fs::path& path, SupportClass support) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<double> values;
  std::string line;
  std::size_t lineno = 0;
  bool seen_data = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto comma = line.rfind(',');
    std::string cell = comma == std::string::npos ? line : line.substr(comma + 1);
    const auto b = cell.find_first_not_of(" \t\"");
    const auto e = cell.find_last_not_of(" \t\"");
    cell = b == std::string::npos ? "" : cell.substr(b, e - b + 1);
    double v = 0;
    std::size_t used = 0;
    bool ok = true;
    try {
      v = std::stod(cell, &used);
    } catch (const std::exception&) {
      ok = false;
    }
    if (!ok || used != cell.size()) {
      if (!seen_data && values.empty()) {
        seen_data = true; // header line
        continue;
      }
      throw DataError(path.string() + ": unparseable value '" + cell + "' at row " + std::to_string(lineno));
    }
    seen_data = true;
    const auto where = " at row " + std::to_string(lineno);
    if (!std::isfinite(v)) throw DataError(path.string() + ": non-finite value" + where);
    if (is_bounded(support) && v < 0) throw DataError(path.string() + ": negative value violates " + to_string(support) + " support" + where);
    if (is_discrete(support) && !is_integral(v))
      throw DataError(path.string() + ": non-integer value violates " + to_string(support) + " support" + where);
    values.push_back(v);
  }
  if (values.empty()) throw DataError(path.string() + ": no data rows");
  return values;
}

inline std::string series_csv(std::span<const double> x, const RunConfig& rc) {
  std::string s = "# config_hash=" + rc.hash + ",seed=" + std::to_string(rc.seed) + "\nt,x\n";
  for (std::size_t t = 0; t < x.size(); ++t) s += std::to_string(t + 1) + "," + fmt_double(x[t]) + "\n";
  return s;
}

template <class Theta>
json theta_json(const Theta& th) {
  if constexpr (std::is_same_v<Theta, NormalTheta>) return {{"mu", th.mu}, {"sigma", th.sigma}};
  else if constexpr (std::is_same_v<Theta, GammaTheta>) return {{"rate", th.rate}};
  else return {{"prob", th.prob}};
}

inline json stamp(const RunConfig& rc, const char* command) {
  return {{"command", command}, {"config_hash", rc.hash}, {"seed", rc.seed}, {"version", kVersion}};
}

inline json estimate_json(const ChangepointEstimate& e) {
  return {{"k_hat", e.k_hat}, {"tau_hat", e.tau_hat}, {"m_hat", e.m_hat}};
}

inline ChangepointEstimate estimate_from_json(const json& j, const std::string& where) {
  try {
    ChangepointEstimate e;
    e.k_hat = j.at("k_hat").get<int>();
    e.tau_hat = j.at("tau_hat").get<std::vector<int>>();
    if (j.contains("m_hat")) e.m_hat = j.at("m_hat").get<std::vector<int>>();
    if (static_cast<int>(e.tau_hat.size()) != e.k_hat) throw DataError(where + ": k_hat does not match tau_hat");
    return e;
  } catch (const json::exception& ex) {
    throw DataError(where + ": malformed estimate: " + ex.what());
  }
}

// --- commands ---------------------------------------------------------------

inline void cmd_simulate(const RunConfig& rc) {
  if (!rc.has_scenario) throw ConfigError("simulate requires a scenario section");
  std::visit(
      [&](const auto& f) {
        CounterRng rng(rc.seed, 0x51u);
        const auto sim = simulate_changepoint_series(rc.scenario, f, rng);
        write_file(rc.output_dir / "series.csv", series_csv(sim.x, rc));
        json truth = stamp(rc, "simulate");
        truth["T"] = rc.scenario.T;
        truth["family"] = std::decay_t<decltype(f)>::name;
        truth["tau"] = sim.tau;
        json segs = json::array();
        for (const auto& s : sim.segments)
          segs.push_back({{"start", s.start}, {"end", s.end}, {"m", s.m}, {"theta", theta_json(s.theta)}, {"gamma", s.gamma}});
        truth["segments"] = segs;
        write_file(rc.output_dir / "truth.json", truth.dump(2) + "\n");
      },
      rc.family);
}

inline void cmd_fit(const RunConfig& rc) {
  if (rc.input.empty()) throw ConfigError("fit requires an input path");
  std::visit(
      [&](const auto& f) {
        using F = std::decay_t<decltype(f)>;
        const auto x = read_series_csv(rc.input, F::support);
        const auto traces = run_chains<F>(x, f, rc.sampler);

        std::string lines = json{{"type", "header"}, {"config_hash", rc.hash}, {"seed", rc.seed}, {"T", x.size()}}.dump() + "\n";
        std::vector<ChainState> pooled;
        json chains = json::array(), rates = json::array();
        for (std::size_t c = 0; c < traces.size(); ++c) {
          const auto& tr = traces[c];
          for (std::size_t i = 0; i < tr.samples.size(); ++i) {
            const auto& s = tr.samples[i];
            json ms = json::array(), gs = json::array();
            for (const auto& seg : s.segments) {
              ms.push_back(seg.m);
              gs.push_back(seg.gamma);
            }
            lines += json{{"type", "sample"}, {"chain", c}, {"iter", tr.sample_iterations[i]}, {"k", s.k()}, {"tau", s.tau},
                          {"m", ms}, {"gamma", gs}, {"log_target", s.log_target}}
                         .dump() +
                     "\n";
          }
          pooled.insert(pooled.end(), tr.samples.begin(), tr.samples.end());
          auto e = estimate_json(map_estimate(tr));
          e["chain"] = c;
          chains.push_back(e);
          json r = {{"chain", c}};
          for (std::size_t t = 0; t < kMoveTypes; ++t) {
            const auto& mc = tr.counts[t];
            r[to_string(static_cast<MoveType>(t))] = {
                {"proposed", mc.proposed}, {"unavailable", mc.unavailable}, {"accepted", mc.accepted}, {"rate", mc.acceptance_rate()}};
          }
          rates.push_back(r);
        }
        write_file(rc.output_dir / "trace.jsonl", lines);

        json est = stamp(rc, "fit");
        est.update(estimate_json(map_estimate(pooled)));
        est["T"] = x.size();
        est["chains"] = chains;
        write_file(rc.output_dir / "estimate.json", est.dump(2) + "\n");

        json meta = stamp(rc, "fit");
        meta["family"] = F::name;
        meta["standard"] = rc.sampler.standard;
        meta["T"] = x.size();
        meta["iterations"] = rc.sampler.iterations;
        meta["burn_in"] = rc.sampler.burn_in;
        meta["thin"] = rc.sampler.thin;
        meta["n_chains"] = rc.sampler.n_chains;
        meta["acceptance"] = rates;
        meta["config"] = rc.effective;
        write_file(rc.output_dir / "metadata.json", meta.dump(2) + "\n");
      },
      rc.family);
}

/// Chain traces rebuilt from a trace file (samples only).
inline std::vector<ChainTrace> read_traces(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<ChainTrace> out;
  std::string line;
  std::size_t lineno = 0;
  int T = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
      if (j.at("type") == "header") {
        T = j.at("T").get<int>();
        continue;
      }
      const auto c = j.at("chain").get<std::size_t>();
      if (out.size() <= c) out.resize(c + 1);
      ChainState s;
      s.tau = j.at("tau").get<std::vector<int>>();
      const auto ms = j.at("m").get<std::vector<int>>();
      const auto gs = j.at("gamma").get<std::vector<std::vector<double>>>();
      for (std::size_t i = 0; i < ms.size(); ++i) s.segments.push_back({ms[i], gs.at(i), 0});
      s.log_target = j.at("log_target").get<double>();
      auto& tr = out[c];
      tr.T = T;
      tr.sample_iterations.push_back(j.at("iter").get<std::size_t>());
      tr.k_path.push_back(s.k());
      tr.tau_path.push_back(s.tau);
      tr.samples.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw DataError(path.string() + ": malformed record at line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline void cmd_evaluate(const RunConfig& rc) {
  const auto& ev = rc.evaluate;
  if (ev.truth.empty() || ev.estimates.empty()) throw ConfigError("evaluate requires truth and estimates");
  const json truth = parse_json_file(ev.truth);
  std::vector<int> tau;
  int T = 0;
  try {
    tau = truth.at("tau").get<std::vector<int>>();
    T = truth.at("T").get<int>();
  } catch (const json::exception& e) {
    throw DataError(ev.truth + ": malformed truth file: " + e.what());
  }
  std::string csv = "# config_hash=" + rc.hash + ",seed=" + std::to_string(rc.seed) +
                    "\nestimate,chain,k_hat,f1,precision,recall\n";
  std::vector<double> chain_f1;
  json per_chain = json::array();
  for (std::size_t i = 0; i < ev.estimates.size(); ++i) {
    const json est = parse_json_file(ev.estimates[i]);
    if (!est.contains("T") || est.at("T").get<int>() != T)
      throw DataError(ev.estimates[i] + ": series length does not match " + ev.truth);
    auto row = [&](const ChangepointEstimate& e, const std::string& chain) {
      const auto s = f1_score(tau, e.tau_hat, ev.epsilon);
      csv += std::to_string(i) + "," + chain + "," + std::to_string(e.k_hat) + "," + fmt_double(s.f1) + "," +
             fmt_double(s.precision) + "," + fmt_double(s.recall) + "\n";
      return s.f1;
    };
    row(estimate_from_json(est, ev.estimates[i]), "pooled");
    if (est.contains("chains"))
      for (const auto& c : est.at("chains")) {
        const auto e = estimate_from_json(c, ev.estimates[i]);
        const double f = row(e, std::to_string(c.value("chain", 0)));
        chain_f1.push_back(f);
        per_chain.push_back({{"estimate", i}, {"chain", c.value("chain", 0)}, {"f1", f}, {"k_hat", e.k_hat}, {"tau_hat", e.tau_hat}});
      }
  }
  write_file(rc.output_dir / "f1.csv", csv);

  json conv = stamp(rc, "evaluate");
  conv["epsilon"] = ev.epsilon;
  conv["threshold"] = ev.threshold;
  conv["chains"] = per_chain;
  double mean = 0, var = 0;
  if (!chain_f1.empty()) {
    for (double v : chain_f1) mean += v / static_cast<double>(chain_f1.size());
    for (double v : chain_f1) var += (v - mean) * (v - mean);
    var = chain_f1.size() > 1 ? var / static_cast<double>(chain_f1.size() - 1) : 0.0;
  }
  std::string summary = "# config_hash=" + rc.hash + ",seed=" + std::to_string(rc.seed) + "\nchains,f1_mean,f1_variance,flagged\n";
  summary += std::to_string(chain_f1.size()) + "," + fmt_double(mean) + "," + fmt_double(var) + "," +
             (var > ev.threshold ? "true" : "false") + "\n";
  write_file(rc.output_dir / "f1_summary.csv", summary);
  conv["f1_mean"] = mean;
  conv["f1_variance"] = var;
  conv["flagged"] = var > ev.threshold;

  std::vector<ChainTrace> traces;
  for (const auto& p : ev.traces) {
    auto t = read_traces(p);
    for (auto& tr : t) {
      if (tr.T != T) throw DataError(p + ": series length does not match " + ev.truth);
      traces.push_back(std::move(tr));
    }
  }
  if (traces.size() >= 2) {
    const auto rep = convergence_report(traces, tau, ev.epsilon, ev.threshold);
    json tj = json::array();
    for (std::size_t c = 0; c < traces.size(); ++c) {
      const auto hit = rep.first_consensus[c];
      tj.push_back({{"chain", c},
                    {"map", estimate_json(rep.estimates[c])},
                    {"f1", rep.f1[c]},
                    {"first_consensus_iteration", hit < 0 ? json(nullptr) : json(traces[c].sample_iterations[static_cast<std::size_t>(hit)])},
                    {"iterations", traces[c].sample_iterations},
                    {"k", traces[c].k_path}});
    }
    conv["traces"] = {{"f1_mean", rep.f1_mean}, {"f1_variance", rep.f1_variance}, {"flagged", rep.flagged}, {"chains", tj}};
  }
  write_file(rc.output_dir / "convergence.json", conv.dump(2) + "\n");
}

inline void cmd_mspace_study(const RunConfig& rc) {
  std::visit(
      [&](const auto& f) {
        using F = std::decay_t<decltype(f)>;
        const auto& o = rc.mspace;
        std::vector<MSpaceRow> rows;
        try {
          for (double th : o.theta) F::check(F::scalar_theta(th));
          rows = mspace_study(f, o.m, o.n, o.theta, o.replicates, o.m_prime_max, rc.seed);
        } catch (const DomainError& e) {
          throw ConfigError(std::string("mspace: ") + e.what());
        }
        std::string csv = "# config_hash=" + rc.hash + ",seed=" + std::to_string(rc.seed) + "\nn,m,theta,m_prime,Q\n";
        for (const auto& r : rows)
          csv += std::to_string(r.n) + "," + std::to_string(r.m) + "," + fmt_double(r.theta) + "," + std::to_string(r.m_prime) +
                 "," + fmt_double(r.q) + "\n";
        write_file(rc.output_dir / "mspace.csv", csv);
        json meta = stamp(rc, "mspace-study");
        meta["family"] = F::name;
        meta["rows"] = rows.size();
        write_file(rc.output_dir / "metadata.json", meta.dump(2) + "\n");
      },
      rc.family);
}

/// Maps library errors to process exit codes.
inline int exit_code(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const DataError*>(&e)) return 3;
  if (dynamic_cast<const InvariantError*>(&e)) return 4;
  return 1;
}

} // namespace mvsum::cli
