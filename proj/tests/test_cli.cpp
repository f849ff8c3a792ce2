#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "doctest.h"
#include "feddap/cli.hpp"
#include "feddap/data.hpp"
#include "feddap/serialize.hpp"

using namespace feddap;
namespace fs = std::filesystem;

namespace {

// Tiny but complete setup so every verb finishes in well under a second.
const char* kTinyConfig =
    "[run]\n"
    "rounds = 2\n"
    "local_epochs = 2\n"
    "batch_size = 8\n"
    "seed = 3\n"
    "\n"
    "[model]\n"
    "hidden_dims = 8\n"
    "feature_dim = 6\n"
    "\n"
    "[data]\n"
    "domains = 2\n"
    "classes = 3\n"
    "raw_dim = 6\n"
    "samples_per_class_per_domain = 12\n";

struct CliResult {
  int code = 0;
  std::string out;
  std::string err;
};

CliResult cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  CliResult r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

// Fresh scratch directory per test case, cleaned up on destruction.
struct Scratch {
  fs::path dir;
  fs::path config;

  explicit Scratch(const std::string& tag) {
    dir = fs::temp_directory_path() / ("feddap_cli_" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    config = dir / "tiny.ini";
    write_text_file(config.string(), kTinyConfig);
  }
  ~Scratch() { fs::remove_all(dir); }

  std::string root() const { return (dir / "out").string(); }
};

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ls(line);
    while (std::getline(ls, field, ',')) fields.push_back(field);
    // Keep a trailing empty field: "a,b," has three columns.
    if (!line.empty() && line.back() == ',') fields.push_back("");
    rows.push_back(fields);
  }
  return rows;
}

}  // namespace

TEST_CASE("help and bad invocations") {
  auto none = cli({});
  CHECK(none.code == kExitUsage);
  CHECK(none.err.find("usage:") != std::string::npos);

  auto help = cli({"help"});
  CHECK(help.code == kExitOk);
  CHECK(help.out.find("usage:") != std::string::npos);
  CHECK(help.out.find("feddap") != std::string::npos);

  auto unknown = cli({"frobnicate"});
  CHECK(unknown.code == kExitUsage);
  CHECK(unknown.err.find("frobnicate") != std::string::npos);
}

TEST_CASE("run reports a missing config as a config error") {
  auto r = cli({"run", "/no/such/file.ini"});
  CHECK(r.code == kExitConfig);
  CHECK(r.err.find("/no/such/file.ini") != std::string::npos);
}

TEST_CASE("run rejects bad overrides with a config error") {
  Scratch s("badoverride");
  auto r = cli({"run", s.config.string(), "--out", s.root(), "--lr", "-1"});
  CHECK(r.code == kExitConfig);
  CHECK(r.err.find("lr") != std::string::npos);
}

TEST_CASE("run writes the full artifact set and honors overrides") {
  Scratch s("artifacts");
  auto r = cli({"run", s.config.string(), "--out", s.root(), "--name", "a",
                "--rounds", "3"});
  REQUIRE(r.code == kExitOk);
  CHECK(r.out.find("final avg accuracy") != std::string::npos);

  fs::path dir = fs::path(s.root()) / "a";
  CHECK(fs::exists(dir / "metrics.csv"));
  CHECK(fs::exists(dir / "summary.json"));
  CHECK(fs::exists(dir / "checkpoint_3.json"));
  CHECK(fs::exists(dir / "manifest.json"));

  auto manifest = read_json_file((dir / "manifest.json").string());
  CHECK(manifest["config"]["rounds"] == "3");  // the override, not the file
  CHECK(manifest["config"]["domains"] == "2");
  CHECK(manifest["strategy"] == "feddap");
  CHECK(manifest["outputs"].size() >= 3);

  auto summary = read_json_file((dir / "summary.json").string());
  CHECK(summary["rounds"] == 3);
  double acc = summary["final_avg_accuracy"];
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);

  // metrics.csv: header + (rounds + 1) x (D + 1) rows.
  auto rows = parse_csv(read_text_file((dir / "metrics.csv").string()));
  REQUIRE(rows.size() == 1 + 4 * 3);
  CHECK(rows[0] == std::vector<std::string>{"round", "strategy", "domain",
                                            "accuracy", "ce", "dpa", "cpcl",
                                            "total"});
}

TEST_CASE("reruns produce byte-identical metrics") {
  Scratch s("rerun");
  auto a = cli({"run", s.config.string(), "--out", s.root(), "--name", "a"});
  auto b = cli({"run", s.config.string(), "--out", s.root(), "--name", "b"});
  REQUIRE(a.code == kExitOk);
  REQUIRE(b.code == kExitOk);

  auto ma = read_text_file((fs::path(s.root()) / "a/metrics.csv").string());
  auto mb = read_text_file((fs::path(s.root()) / "b/metrics.csv").string());
  CHECK(ma == mb);

  auto sa = read_text_file((fs::path(s.root()) / "a/summary.json").string());
  auto sb = read_text_file((fs::path(s.root()) / "b/summary.json").string());
  CHECK(sa == sb);
}

TEST_CASE("compare covers all strategies and its avg column re-derives") {
  Scratch s("compare");
  auto r = cli({"compare", s.config.string(), "--out", s.root(), "--name",
                "cmp"});
  REQUIRE(r.code == kExitOk);

  fs::path dir = fs::path(s.root()) / "cmp";
  auto rows = parse_csv(read_text_file((dir / "compare.csv").string()));
  REQUIRE(rows.size() == 1 + 4 * (2 + 2));  // header + strategies x (D + 2)
  CHECK(rows[0] == std::vector<std::string>{"strategy", "metric", "value"});

  std::map<std::string, std::map<std::string, double>> table;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    REQUIRE(rows[i].size() == 3);
    table[rows[i][0]][rows[i][1]] = std::stod(rows[i][2]);
  }
  REQUIRE(table.size() == 4);
  for (const char* name :
       {"fedavg", "fedproto_single", "uniform_domain_avg", "feddap"}) {
    REQUIRE(table.count(name));
    auto& m = table[name];
    double mean = (m.at("domain_0") + m.at("domain_1")) / 2.0;
    CHECK(std::abs(m.at("avg") - mean) < 1e-9);
  }
  CHECK(table["fedavg"]["delta_vs_fedavg"] == 0.0);
  CHECK(table["feddap"]["delta_vs_fedavg"] ==
        doctest::Approx(table["feddap"]["avg"] - table["fedavg"]["avg"])
            .epsilon(1e-12));

  // Member runs carry their own artifacts.
  CHECK(fs::exists(dir / "fedavg/metrics.csv"));
  CHECK(fs::exists(dir / "feddap/manifest.json"));
}

TEST_CASE("ablate walks the 2x2 grid and matches standalone runs") {
  Scratch s("ablate");
  auto r = cli({"ablate", s.config.string(), "--out", s.root(), "--name",
                "abl"});
  REQUIRE(r.code == kExitOk);

  fs::path dir = fs::path(s.root()) / "abl";
  auto rows = parse_csv(read_text_file((dir / "ablation.csv").string()));
  CHECK(rows[0] == std::vector<std::string>{"use_dpa", "use_cpcl", "metric",
                                            "value"});
  // 4 variants x (D domains + avg).
  REQUIRE(rows.size() == 1 + 4 * 3);

  std::map<std::pair<std::string, std::string>, double> avg;
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (rows[i][2] == "avg")
      avg[{rows[i][0], rows[i][1]}] = std::stod(rows[i][3]);
  REQUIRE(avg.size() == 4);

  // off/off is plain FedAvg by construction: same trajectory, same number.
  auto fedavg = cli({"run", s.config.string(), "--out", s.root(), "--name",
                     "favg", "--strategy", "fedavg"});
  REQUIRE(fedavg.code == kExitOk);
  auto summary =
      read_json_file((fs::path(s.root()) / "favg/summary.json").string());
  CHECK(avg.at({"false", "false"}) ==
        summary["final_avg_accuracy"].get<double>());

  // The grid re-derives from four standalone runs with explicit toggles.
  for (const char* dpa : {"false", "true"}) {
    for (const char* cpcl : {"false", "true"}) {
      std::string name = std::string("re_") + dpa + "_" + cpcl;
      auto rerun = cli({"run", s.config.string(), "--out", s.root(), "--name",
                        name, "--use_dpa", dpa, "--use_cpcl", cpcl});
      REQUIRE(rerun.code == kExitOk);
      auto sj = read_json_file(
          (fs::path(s.root()) / name / "summary.json").string());
      CHECK(avg.at({dpa, cpcl}) == sj["final_avg_accuracy"].get<double>());
    }
  }

  CHECK(fs::exists(dir / "dpa_off_cpcl_off/metrics.csv"));
  CHECK(fs::exists(dir / "dpa_on_cpcl_on/metrics.csv"));
}

TEST_CASE("sweep runs each value and rejects unknown parameters") {
  Scratch s("sweep");
  auto bad = cli({"sweep", s.config.string(), "momentum", "0.9", "--out",
                  s.root()});
  CHECK(bad.code == kExitConfig);
  // The error teaches the sweepable set.
  CHECK(bad.err.find("lambda1") != std::string::npos);
  CHECK(bad.err.find("tau_cross") != std::string::npos);

  auto r = cli({"sweep", s.config.string(), "lambda1", "0", "10", "--out",
                s.root(), "--name", "sw"});
  REQUIRE(r.code == kExitOk);

  fs::path dir = fs::path(s.root()) / "sw";
  auto rows = parse_csv(read_text_file((dir / "sweep.csv").string()));
  CHECK(rows[0] == std::vector<std::string>{"param", "param_value", "metric",
                                            "value"});
  REQUIRE(rows.size() == 1 + 2 * 3);  // 2 values x (D + avg)

  std::map<std::string, double> avg;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    CHECK(rows[i][0] == "lambda1");
    if (rows[i][2] == "avg") avg[rows[i][1]] = std::stod(rows[i][3]);
  }
  REQUIRE(avg.size() == 2);

  // lambda1 = 0 silences the intra-domain term exactly like use_dpa = false.
  auto off = cli({"run", s.config.string(), "--out", s.root(), "--name",
                  "dpaoff", "--use_dpa", "false"});
  REQUIRE(off.code == kExitOk);
  auto sj =
      read_json_file((fs::path(s.root()) / "dpaoff/summary.json").string());
  CHECK(avg.at("0") == sj["final_avg_accuracy"].get<double>());

  CHECK(fs::exists(dir / "lambda1_0/metrics.csv"));
  CHECK(fs::exists(dir / "lambda1_10/metrics.csv"));
}

TEST_CASE("lodo holds each domain out of training entirely") {
  Scratch s("lodo");
  auto r = cli({"lodo", s.config.string(), "--out", s.root(), "--name",
                "ld"});
  REQUIRE(r.code == kExitOk);

  fs::path dir = fs::path(s.root()) / "ld";
  auto rows = parse_csv(read_text_file((dir / "lodo.csv").string()));
  CHECK(rows[0] == std::vector<std::string>{"holdout_domain", "metric",
                                            "value"});
  REQUIRE(rows.size() == 1 + 2 + 1);  // one per domain + the average
  CHECK(rows[1][0] == "0");
  CHECK(rows[2][0] == "1");
  CHECK(rows[3][0] == "avg");
  double mean = (std::stod(rows[1][2]) + std::stod(rows[2][2])) / 2.0;
  CHECK(std::stod(rows[3][2]) == doctest::Approx(mean).epsilon(1e-12));

  // In the holdout-0 member, domain 0 must never log a training loss.
  auto metrics = parse_csv(
      read_text_file((dir / "holdout_0/metrics.csv").string()));
  bool saw_domain0 = false;
  for (std::size_t i = 1; i < metrics.size(); ++i) {
    REQUIRE(metrics[i].size() == 8);
    if (metrics[i][2] == "0") {
      saw_domain0 = true;
      CHECK(metrics[i][4] == "");  // ce
      CHECK(metrics[i][7] == "");  // total
    }
    if (metrics[i][2] == "1" && metrics[i][0] != "0")
      CHECK(metrics[i][4] != "");
  }
  CHECK(saw_domain0);
}

TEST_CASE("gen-data writes a loadable dataset") {
  Scratch s("gendata");
  fs::path csv = s.dir / "data.csv";
  auto r = cli({"gen-data", s.config.string(), csv.string()});
  REQUIRE(r.code == kExitOk);

  auto samples = load_csv(csv.string());
  CHECK(samples.size() == 2u * 3u * 12u);
  for (const auto& sample : samples) {
    CHECK(sample.x.size() == 6);
    CHECK(sample.d < 2);
    CHECK(sample.y < 3);
  }
}

TEST_CASE("check-grads verb") {
  auto ok = cli({"check-grads", "--instances", "4", "--seed", "2"});
  CHECK(ok.code == kExitOk);
  CHECK(ok.out.find("PASS") != std::string::npos);
  CHECK(ok.out.find("cpcl") != std::string::npos);

  auto impossible = cli({"check-grads", "--instances", "2", "--tol", "1e-18"});
  CHECK(impossible.code != kExitOk);
  CHECK(impossible.out.find("FAIL") != std::string::npos);

  auto bad = cli({"check-grads", "--step", "tiny"});
  CHECK(bad.code == kExitUsage);
}
