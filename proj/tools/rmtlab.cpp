// rmtlab command-line runner: `run` executes a configured experiment and
// writes <out>.json and <out>.csv; `plot` re-projects a stored result.
//
// Exit codes: 0 all gating criteria pass, 1 a criterion failed,
// 2 invalid configuration or arguments, 3 numerical failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "experiments.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace rmtlab;
using namespace rmtlab::cli;

namespace {

constexpr int kExitPass = 0, kExitFail = 1, kExitConfig = 2, kExitNumerical = 3;

std::string csv_cell(double v) {
  if (std::isnan(v)) return "nan";
  return format_number(v);
}

std::string to_csv(const Table& t) {
  std::string out;
  for (std::size_t i = 0; i < t.columns.size(); ++i) out += (i ? "," : "") + t.columns[i];
  out += "\n";
  for (const auto& row : t.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out += (i ? "," : "") + csv_cell(row[i]);
    out += "\n";
  }
  return out;
}

void write_file(const fs::path& p, const std::string& content) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw ConfigError("cannot write '" + p.string() + "'");
  f << content;
  if (!f) throw ConfigError("failed writing '" + p.string() + "'");
}

fs::path output_base(std::string out) {
  for (const char* ext : {".json", ".csv"})
    if (out.size() > std::strlen(ext) && out.ends_with(ext)) out.resize(out.size() - std::strlen(ext));
  return out;
}

json config_json(const Config& c) {
  json j = json::object();
  for (const auto& k : kKeys) {
    const auto it = c.entries().find(std::string(k.name));
    if (it == c.entries().end()) continue;
    std::visit(
        [&](const auto& v) {
          using V = std::decay_t<decltype(v)>;
          if constexpr (std::is_same_v<V, std::vector<cplx>>) {
            json a = json::array();
            for (auto z : v) a.push_back(format_complex(z));
            j[std::string(k.name)] = a;
          } else {
            j[std::string(k.name)] = v;
          }
        },
        it->second.value);
  }
  return j;
}

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

int cmd_run(const std::string& config_path, const std::optional<std::uint64_t>& seed,
            const std::optional<std::string>& out) {
  Config cfg = Config::load(config_path);
  if (seed) cfg.set("seed", *seed);
  if (!cfg.has("seed")) cfg.set("seed", std::uint64_t{0});
  const auto start = std::chrono::steady_clock::now();
  const Result r = run(cfg);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  const fs::path base = output_base(out ? *out : cfg.get<std::string>("output", r.experiment));
  json doc;
  doc["artifact_version"] = RMTLAB_VERSION;
  doc["experiment"] = r.experiment;
  doc["config"] = config_json(cfg);
  doc["config_text"] = cfg.echo();
  doc["columns"] = r.table.columns;
  json rows = json::array();
  for (const auto& row : r.table.rows) {
    json jr = json::array();
    for (double v : row) jr.push_back(std::isnan(v) ? json(nullptr) : json(v));
    rows.push_back(std::move(jr));
  }
  doc["rows"] = std::move(rows);
  json crit = json::array();
  for (const auto& k : r.criteria)
    crit.push_back({{"name", k.name}, {"pass", k.pass}, {"worst", k.worst}, {"gating", k.gating},
                    {"detail", k.detail}});
  doc["summary"] = {{"pass", r.pass()}, {"criteria", crit}};
  doc["wall_clock_seconds"] = wall;
  doc["timestamp"] = utc_timestamp();

  write_file(base.string() + ".csv", to_csv(r.table));
  write_file(base.string() + ".json", doc.dump(2) + "\n");

  for (const auto& k : r.criteria)
    std::printf("%-22s %s%s  worst=%s  %s\n", k.name.c_str(), k.pass ? "PASS" : "FAIL", k.gating ? "" : " (reported)",
                format_number(k.worst).c_str(), k.detail.c_str());
  std::printf("wrote %s.json and %s.csv\n", base.string().c_str(), base.string().c_str());
  return r.pass() ? kExitPass : kExitFail;
}

// ---------------------------------------------------------------------------
// Plot views: pure projections of stored rows.

struct Stored {
  std::string experiment;
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  [[nodiscard]] std::size_t col(const std::string& name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == name) return i;
    throw ConfigError("result file has no column '" + name + "'");
  }
};

Stored load_result(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open result file '" + path + "'");
  json doc;
  try {
    in >> doc;
    Stored s;
    s.experiment = doc.at("experiment").get<std::string>();
    s.columns = doc.at("columns").get<std::vector<std::string>>();
    for (const auto& row : doc.at("rows")) {
      std::vector<double> r;
      for (const auto& v : row) r.push_back(v.is_null() ? kNaN : v.get<double>());
      if (r.size() != s.columns.size()) throw ConfigError("row width does not match the header");
      s.rows.push_back(std::move(r));
    }
    return s;
  } catch (const json::exception& e) {
    throw ConfigError("invalid result file '" + path + "': " + e.what());
  }
}

void expect_experiment(const Stored& s, const std::string& view, const std::string& exp) {
  if (s.experiment != exp)
    throw ConfigError("view '" + view + "' needs a " + exp + " result, got " + s.experiment);
}

Table view_rho_vs_eta(const Stored& s) {
  expect_experiment(s, "rho-vs-eta", "mde-scan");
  Table t{{"abs_z", "eta", "rho"}, {}};
  const auto z = s.col("abs_z"), e = s.col("eta"), r = s.col("rho");
  for (const auto& row : s.rows) t.rows.push_back({row[z], row[e], row[r]});
  std::stable_sort(t.rows.begin(), t.rows.end(), [](const auto& a, const auto& b) {
    return a[0] != b[0] ? a[0] < b[0] : a[1] < b[1];
  });
  return t;
}

Table view_stat_vs_n(const Stored& s) {
  expect_experiment(s, "stat-vs-N", "deloc");
  const auto n = s.col("N"), h = s.col("haar"), st = s.col("statistic");
  std::map<double, std::vector<double>> coord, haar;
  for (const auto& row : s.rows) (row[h] != 0.0 ? haar : coord)[row[n]].push_back(row[st]);
  Table t{{"N", "trials", "median_coordinate", "median_haar", "max_statistic"}, {}};
  for (const auto& [size, vals] : coord) {
    const auto& hv = haar[size];
    double mx = 0.0;
    for (double v : vals) mx = std::max(mx, v);
    for (double v : hv) mx = std::max(mx, v);
    t.rows.push_back({size, double(vals.size()), stats::median(vals), hv.empty() ? kNaN : stats::median(hv), mx});
  }
  return t;
}

Table view_x1_vs_t(const Stored& s) {
  expect_experiment(s, "X1-vs-t", "flow-drift");
  Table t{{"t", "X1_re", "X1_im", "mean_drift_re", "mean_drift_im"}, {}};
  const std::size_t c[] = {s.col("t"), s.col("X1_re"), s.col("X1_im"), s.col("mean_drift_re"), s.col("mean_drift_im")};
  for (const auto& row : s.rows) t.rows.push_back({row[c[0]], row[c[1]], row[c[2]], row[c[3]], row[c[4]]});
  return t;
}

int cmd_plot(const std::string& result, const std::string& view, const std::optional<std::string>& out) {
  static const std::map<std::string, Table (*)(const Stored&)> views{
      {"rho-vs-eta", view_rho_vs_eta}, {"stat-vs-N", view_stat_vs_n}, {"X1-vs-t", view_x1_vs_t}};
  const auto it = views.find(view);
  if (it == views.end()) {
    std::string list;
    for (const auto& [k, v] : views) list += (list.empty() ? "" : ", ") + k;
    throw ConfigError("unknown view '" + view + "' (available: " + list + ")");
  }
  const Table t = it->second(load_result(result));
  fs::path target = out ? fs::path(*out) : fs::path(output_base(result).string() + "." + view + ".csv");
  write_file(target, to_csv(t));
  std::printf("wrote %s (%zu rows)\n", target.string().c_str(), t.rows.size());
  return kExitPass;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rmtlab experiment runner"};
  app.set_version_flag("--version", std::string(RMTLAB_VERSION));
  app.require_subcommand(1);

  std::string config_path, result_path, view;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> run_out, plot_out;

  auto* run_cmd = app.add_subcommand("run", "Run the experiment described by a config file");
  run_cmd->add_option("config", config_path, "Config file (key = value lines)")->required();
  run_cmd->add_option("--seed", seed, "Override the config seed");
  run_cmd->add_option("--out", run_out, "Output base path; .json and .csv are appended");

  auto* plot_cmd = app.add_subcommand("plot", "Project a stored result into a plot-ready table");
  plot_cmd->add_option("result", result_path, "Result JSON written by run")->required();
  plot_cmd->add_option("--view", view, "rho-vs-eta, stat-vs-N or X1-vs-t")->required();
  plot_cmd->add_option("--out", plot_out, "Output CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitPass : kExitConfig;
  }

  try {
    if (*run_cmd) return cmd_run(config_path, seed, run_out);
    return cmd_plot(result_path, view, plot_out);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const ModuleError& e) {
    std::fprintf(stderr, "numerical error in %s\n", e.what());
    return kExitNumerical;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return kExitNumerical;
  } catch (const Error& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitNumerical;
  }
}
