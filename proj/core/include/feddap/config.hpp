#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "feddap/data.hpp"
#include "feddap/model.hpp"

namespace feddap {

enum class Strategy { kFedDap, kFedAvg, kFedProtoSingle, kUniformDomainAvg };

std::string strategy_name(Strategy s);
Strategy strategy_from_string(const std::string& name);

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// The [data] section: synthetic benchmark construction and partitioning.
struct DataConfig {
  std::size_t domains = 4;
  std::size_t classes = 5;
  std::size_t raw_dim = 16;
  std::size_t samples_per_class_per_domain = 200;
  double noise_sigma = 0.7;
  double mean_radius = 2.0;
  double domain_rotation_deg = 60.0;
  double domain_scale_spread = 0.25;
  double domain_shift = 0.8;
  std::size_t clients_per_domain = 2;
  std::vector<std::size_t> client_allocation;  // optional per-domain counts
  double test_fraction = 0.2;
  std::size_t outlier_clients_per_domain = 0;
  double outlier_noise_factor = 5.0;
  std::uint64_t data_seed = 42;
};

/// Everything a run needs; defaults give the standard benchmark.
struct ExperimentConfig {
  Strategy strategy = Strategy::kFedDap;
  std::size_t rounds = 50;
  std::size_t local_epochs = 10;
  std::size_t batch_size = 32;
  double lr = 0.1;
  double lambda1 = 10.0;
  double lambda2 = 1.0;
  double tau_agg = 0.001;
  double tau_cross = 0.07;
  bool use_dpa = true;
  bool use_cpcl = true;
  bool dpa_normalize = true;
  bool dpa_per_sample = false;
  bool negatives_include_own_domain = false;
  std::uint64_t seed = 1;
  std::size_t eval_every = 1;
  std::size_t checkpoint_every = 0;  // 0 = final checkpoint only
  int holdout_domain = -1;           // -1 = train on all domains
  bool dp_noise = false;
  double dp_q = 0.1;
  double dp_s = 0.05;

  std::vector<std::size_t> hidden_dims = {48};
  std::size_t feature_dim = 24;

  DataConfig data;

  std::string out_dir;   // empty: resolved by the CLI (flag, env, ./runs)
  std::string run_name;  // empty: derived from strategy and seed

  /// Loss weights with the strategy toggles applied: a disabled term
  /// contributes zero weight, so its gradient path is skipped entirely.
  LossOptions loss_options() const;

  /// The [data] knobs repackaged for make_shifted_domains.
  DomainShiftParams domain_shift_params() const;
};

/// Parses the sectioned key=value format. `origin` names the source in
/// error messages. Unknown sections, unknown keys, duplicate keys, and
/// malformed values are all hard errors.
ExperimentConfig parse_config_text(const std::string& text,
                                   const std::string& origin = "<config>");

/// Reads and parses a config file; a missing file is a ConfigError naming
/// the path.
ExperimentConfig load_config(const std::string& path);

/// Applies one `--key value` override. Keys are globally unique across
/// sections, so no section qualifier is needed.
void apply_override(ExperimentConfig& cfg, const std::string& key,
                    const std::string& value);

/// Normalizes (FedAvg forces both loss toggles off) and range-checks every
/// field. Throws ConfigError with the offending key.
void validate(ExperimentConfig& cfg);

/// Every config key with its canonical value rendering, sorted by key.
std::vector<std::pair<std::string, std::string>> config_entries(
    const ExperimentConfig& cfg);

/// FNV-1a over the sorted key=value lines; stable under reordering in the
/// source file by construction.
std::uint64_t config_hash(const ExperimentConfig& cfg);

}  // namespace feddap
