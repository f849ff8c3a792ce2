#include "feddap/cli.hpp"

#include <cctype>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include "feddap/config.hpp"
#include "feddap/federation.hpp"
#include "feddap/grad_check.hpp"
#include "feddap/serialize.hpp"
#include "feddap/version.hpp"

namespace feddap {

namespace {

namespace fs = std::filesystem;

const char kUsage[] = R"(usage: feddap <verb> [args]

verbs:
  run <config> [--key value ...]          single experiment
  compare <config> [--key value ...]      all four strategies on shared data
  ablate <config> [--key value ...]       2x2 DPA/CPCL toggle grid
  sweep <config> <param> <v1> [v2 ...]    one run per value of a hyperparameter
  lodo <config> [--key value ...]         leave-one-domain-out protocol
  gen-data <config> <out.csv>             write the synthetic dataset as CSV
  check-grads [--instances N] [--step H] [--tol T] [--seed S]
                                          finite-difference gradient audit

common flags:
  --out DIR    output root (else $FEDDAP_OUT, else ./runs)
  --name NAME  run directory name under the output root
  --key value  override any config key (e.g. --rounds 10 --strategy fedavg)
)";

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ParsedArgs {
  std::vector<std::string> positionals;
  std::vector<std::pair<std::string, std::string>> overrides;
  std::string out_root;
  std::string name;
};

ParsedArgs parse_args(const std::vector<std::string>& args) {
  ParsedArgs parsed;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a.rfind("--", 0) == 0) {
      const std::string key = a.substr(2);
      if (key.empty()) throw UsageError("empty flag name");
      if (i + 1 >= args.size())
        throw UsageError("flag --" + key + " needs a value");
      const std::string& value = args[++i];
      if (key == "out") parsed.out_root = value;
      else if (key == "name") parsed.name = value;
      else parsed.overrides.emplace_back(key, value);
    } else {
      parsed.positionals.push_back(a);
    }
  }
  return parsed;
}

// `normalize` keeps the loaded toggles untouched for grid commands that
// re-assign the strategy per member; range errors are still reported early.
ExperimentConfig load_merged(const std::string& path, const ParsedArgs& parsed,
                             bool normalize = true) {
  ExperimentConfig cfg = load_config(path);
  for (const auto& [key, value] : parsed.overrides)
    apply_override(cfg, key, value);
  if (normalize) {
    validate(cfg);
  } else {
    ExperimentConfig probe = cfg;
    validate(probe);
  }
  return cfg;
}

fs::path resolve_root(const ParsedArgs& parsed, const ExperimentConfig& cfg) {
  if (!parsed.out_root.empty()) return parsed.out_root;
  if (const char* env = std::getenv("FEDDAP_OUT"); env && *env) return env;
  if (!cfg.out_dir.empty()) return cfg.out_dir;
  return "runs";
}

fs::path run_dir(const ParsedArgs& parsed, const ExperimentConfig& cfg,
                 const std::string& fallback) {
  std::string name = !parsed.name.empty()
                         ? parsed.name
                         : (!cfg.run_name.empty() ? cfg.run_name : fallback);
  return resolve_root(parsed, cfg) / fs::path(name);
}

std::string default_name(const ExperimentConfig& cfg,
                         const std::string& prefix) {
  return prefix + "-seed" + std::to_string(cfg.seed);
}

std::string sanitize(const std::string& s) {
  std::string out;
  for (char c : s)
    out += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' ||
            c == '-' || c == '_')
               ? c
               : '_';
  return out;
}

/// Runs one experiment and writes its artifacts into `dir`.
ExperimentResult run_and_write(const ExperimentConfig& cfg,
                               const fs::path& dir, std::ostream& out) {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentResult result = run_experiment(cfg);
  fs::create_directories(dir);

  std::vector<std::string> outputs;
  auto emit = [&](const std::string& file, const std::string& content) {
    write_text_file((dir / file).string(), content);
    outputs.push_back(file);
  };

  emit("metrics.csv", render_metrics_csv(result.rows));
  emit("summary.json", summary_json(result).dump(2) + "\n");
  for (const Checkpoint& ckpt : result.checkpoints)
    emit("checkpoint_" + std::to_string(ckpt.round) + ".json",
         checkpoint_to_json(ckpt).dump(2) + "\n");

  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  outputs.push_back("manifest.json");
  write_json_file((dir / "manifest.json").string(),
                  manifest_json(result, outputs, wall));

  out << strategy_name(result.config.strategy) << " seed "
      << result.config.seed << ": final avg accuracy "
      << render_real(result.final_avg_accuracy) << " -> " << dir.string()
      << "\n";
  return result;
}

std::string csv_accuracy_rows(const std::string& prefix,
                              const ExperimentResult& r) {
  std::string out;
  for (std::size_t d = 0; d < r.final_per_domain.size(); ++d)
    out += prefix + "domain_" + std::to_string(d) + "," +
           render_real(r.final_per_domain[d]) + "\n";
  out += prefix + "avg," + render_real(r.final_avg_accuracy) + "\n";
  return out;
}

int cmd_run(const ParsedArgs& parsed, std::ostream& out) {
  if (parsed.positionals.size() != 1)
    throw UsageError("run expects exactly one config path");
  ExperimentConfig cfg = load_merged(parsed.positionals[0], parsed);
  const fs::path dir =
      run_dir(parsed, cfg, default_name(cfg, strategy_name(cfg.strategy)));
  run_and_write(cfg, dir, out);
  return kExitOk;
}

int cmd_compare(const ParsedArgs& parsed, std::ostream& out) {
  if (parsed.positionals.size() != 1)
    throw UsageError("compare expects exactly one config path");
  ExperimentConfig base =
      load_merged(parsed.positionals[0], parsed, /*normalize=*/false);
  const fs::path dir = run_dir(parsed, base, default_name(base, "compare"));

  const Strategy order[] = {Strategy::kFedAvg, Strategy::kFedProtoSingle,
                            Strategy::kUniformDomainAvg, Strategy::kFedDap};
  std::vector<ExperimentResult> results;
  for (Strategy s : order) {
    ExperimentConfig cfg = base;
    cfg.strategy = s;
    results.push_back(run_and_write(cfg, dir / strategy_name(s), out));
  }

  const double fedavg = results[0].final_avg_accuracy;
  std::string csv = "strategy,metric,value\n";
  for (const ExperimentResult& r : results) {
    const std::string name = strategy_name(r.config.strategy);
    csv += csv_accuracy_rows(name + ",", r);
    csv += name + ",delta_vs_fedavg," +
           render_real(r.final_avg_accuracy - fedavg) + "\n";
  }
  fs::create_directories(dir);
  write_text_file((dir / "compare.csv").string(), csv);
  out << "wrote " << (dir / "compare.csv").string() << "\n";
  return kExitOk;
}

int cmd_ablate(const ParsedArgs& parsed, std::ostream& out) {
  if (parsed.positionals.size() != 1)
    throw UsageError("ablate expects exactly one config path");
  ExperimentConfig base =
      load_merged(parsed.positionals[0], parsed, /*normalize=*/false);
  base.strategy = Strategy::kFedDap;  // the toggles only exist here
  const fs::path dir = run_dir(parsed, base, default_name(base, "ablate"));

  std::string csv = "use_dpa,use_cpcl,metric,value\n";
  for (int dpa = 0; dpa <= 1; ++dpa) {
    for (int cpcl = 0; cpcl <= 1; ++cpcl) {
      ExperimentConfig cfg = base;
      cfg.use_dpa = dpa != 0;
      cfg.use_cpcl = cpcl != 0;
      const std::string member = std::string("dpa_") + (dpa ? "on" : "off") +
                                 "_cpcl_" + (cpcl ? "on" : "off");
      ExperimentResult r = run_and_write(cfg, dir / member, out);
      csv += csv_accuracy_rows(std::string(dpa ? "true" : "false") + "," +
                                   (cpcl ? "true" : "false") + ",",
                               r);
    }
  }
  fs::create_directories(dir);
  write_text_file((dir / "ablation.csv").string(), csv);
  out << "wrote " << (dir / "ablation.csv").string() << "\n";
  return kExitOk;
}

int cmd_sweep(const ParsedArgs& parsed, std::ostream& out) {
  if (parsed.positionals.size() < 3)
    throw UsageError("sweep expects a config path, a parameter, and values");
  const std::string& param = parsed.positionals[1];
  const bool sweepable = param == "lambda1" || param == "lambda2" ||
                         param == "tau_agg" || param == "tau_cross";
  if (!sweepable)
    throw ConfigError("'" + param +
                      "' is not sweepable (choose one of lambda1, lambda2, "
                      "tau_agg, tau_cross)");

  ExperimentConfig base = load_merged(parsed.positionals[0], parsed);
  const fs::path dir =
      run_dir(parsed, base, default_name(base, "sweep-" + param));

  std::string csv = "param,param_value,metric,value\n";
  for (std::size_t i = 2; i < parsed.positionals.size(); ++i) {
    const std::string& value = parsed.positionals[i];
    ExperimentConfig cfg = base;
    apply_override(cfg, param, value);
    validate(cfg);
    ExperimentResult r =
        run_and_write(cfg, dir / (param + "_" + sanitize(value)), out);
    csv += csv_accuracy_rows(param + "," + value + ",", r);
  }
  fs::create_directories(dir);
  write_text_file((dir / "sweep.csv").string(), csv);
  out << "wrote " << (dir / "sweep.csv").string() << "\n";
  return kExitOk;
}

int cmd_lodo(const ParsedArgs& parsed, std::ostream& out) {
  if (parsed.positionals.size() != 1)
    throw UsageError("lodo expects exactly one config path");
  ExperimentConfig base = load_merged(parsed.positionals[0], parsed);
  if (base.data.domains < 2)
    throw ConfigError("lodo needs at least 2 domains");
  const fs::path dir = run_dir(parsed, base, default_name(base, "lodo"));

  std::string csv = "holdout_domain,metric,value\n";
  double sum = 0.0;
  for (std::size_t d = 0; d < base.data.domains; ++d) {
    ExperimentConfig cfg = base;
    cfg.holdout_domain = static_cast<int>(d);
    ExperimentResult r =
        run_and_write(cfg, dir / ("holdout_" + std::to_string(d)), out);
    const double heldout = r.final_per_domain[d];
    sum += heldout;
    csv += std::to_string(d) + ",heldout_accuracy," + render_real(heldout) +
           "\n";
  }
  csv += "avg,heldout_accuracy," +
         render_real(sum / static_cast<double>(base.data.domains)) + "\n";
  fs::create_directories(dir);
  write_text_file((dir / "lodo.csv").string(), csv);
  out << "wrote " << (dir / "lodo.csv").string() << "\n";
  return kExitOk;
}

int cmd_gen_data(const ParsedArgs& parsed, std::ostream& out) {
  if (parsed.positionals.size() != 2)
    throw UsageError("gen-data expects a config path and an output CSV path");
  ExperimentConfig cfg = load_merged(parsed.positionals[0], parsed);
  const std::vector<DomainSpec> specs =
      make_shifted_domains(cfg.domain_shift_params(), cfg.data.data_seed);
  const std::vector<Sample> samples = generate(
      specs, static_cast<int>(cfg.data.samples_per_class_per_domain),
      cfg.data.data_seed);
  write_csv(parsed.positionals[1], samples);
  out << "wrote " << samples.size() << " samples ("
      << cfg.data.domains << " domains x " << cfg.data.classes
      << " classes) to " << parsed.positionals[1] << "\n";
  return kExitOk;
}

int cmd_check_grads(const ParsedArgs& parsed, std::ostream& out) {
  if (!parsed.positionals.empty())
    throw UsageError("check-grads takes only flags");
  std::size_t instances = 20;
  double step = 1e-5, tol = 1e-4;
  std::uint64_t seed = 1;
  for (const auto& [key, value] : parsed.overrides) {
    try {
      if (key == "instances") instances = std::stoul(value);
      else if (key == "step") step = std::stod(value);
      else if (key == "tol") tol = std::stod(value);
      else if (key == "seed") seed = std::stoull(value);
      else throw UsageError("check-grads does not understand --" + key);
    } catch (const std::invalid_argument&) {
      throw UsageError("bad value for --" + key + ": '" + value + "'");
    } catch (const std::out_of_range&) {
      throw UsageError("bad value for --" + key + ": '" + value + "'");
    }
  }
  const GradCheckReport report = check_gradients(instances, step, tol, seed);
  out << format_report(report);
  return report.pass ? kExitOk : kExitUsage;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err) {
  if (args.empty()) {
    err << kUsage;
    return kExitUsage;
  }
  const std::string& verb = args[0];
  if (verb == "help" || verb == "--help" || verb == "-h") {
    out << kVersion << "\n" << kUsage;
    return kExitOk;
  }

  try {
    const ParsedArgs parsed =
        parse_args({args.begin() + 1, args.end()});
    if (verb == "run") return cmd_run(parsed, out);
    if (verb == "compare") return cmd_compare(parsed, out);
    if (verb == "ablate") return cmd_ablate(parsed, out);
    if (verb == "sweep") return cmd_sweep(parsed, out);
    if (verb == "lodo") return cmd_lodo(parsed, out);
    if (verb == "gen-data") return cmd_gen_data(parsed, out);
    if (verb == "check-grads") return cmd_check_grads(parsed, out);
    err << "unknown verb '" << verb << "'\n" << kUsage;
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n" << kUsage;
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace feddap
