#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "feddap/config.hpp"
#include "feddap/data.hpp"
#include "feddap/model.hpp"
#include "feddap/prototypes.hpp"

namespace feddap {

/// A client is fully described by its training shard.
using ClientState = ClientDataset;

/// Server-side state carried between rounds. The prototype table is empty
/// before the first aggregation, so the alignment losses are inactive in
/// round 0 and switch on from round 1.
struct RoundState {
  std::size_t round = 0;
  ModelParams model;
  PrototypeTable prototypes;
};

/// Raised when local training produces a non-finite loss or gradient.
struct DivergenceError : std::runtime_error {
  DivergenceError(std::size_t round, int client, std::size_t epoch,
                  const std::string& detail);
  std::size_t round;
  int client;
  std::size_t epoch;
};

/// Per-client training record for one round. Losses are means over every
/// batch the client processed this round.
struct ClientRoundMetrics {
  int client_id = 0;
  int domain_id = 0;
  std::size_t batches = 0;
  double ce = 0.0;
  double dpa = 0.0;
  double cpcl = 0.0;
  double total = 0.0;
  std::size_t upload_reals = 0;
  // Batches in which no class of the batch had a prototype for this domain.
  std::size_t dpa_inactive_batches = 0;
  // Samples with no positive prototype in any other domain.
  std::size_t cpcl_flagged_samples = 0;
};

struct RoundMetrics {
  std::size_t round = 0;
  std::vector<ClientRoundMetrics> clients;
  std::size_t download_reals = 0;  // broadcast volume of the fused table
  double wall_ms = 0.0;            // timing lives here, never in the CSV
};

struct LocalUpdateResult {
  ModelParams params;
  LocalPrototypeSet prototypes;
  ClientRoundMetrics metrics;
};

/// One client's round: copy the global model, run E epochs of seeded
/// mini-batch SGD on the dual-alignment objective, then compute local
/// prototypes with the post-training extractor.
LocalUpdateResult local_update(const ClientState& client,
                               const ModelParams& global,
                               const PrototypeTable& table,
                               const ExperimentConfig& cfg, std::size_t round);

/// Sample-count-weighted parameter average.
ModelParams aggregate_models(
    const std::vector<std::pair<ModelParams, std::size_t>>& updates);

/// One synchronous round over all clients. When uploads_out is given it
/// receives the prototype sets exactly as the server saw them (after DP
/// noise, when enabled).
RoundMetrics run_round(RoundState& state,
                       const std::vector<ClientState>& clients,
                       const ExperimentConfig& cfg,
                       std::vector<LocalPrototypeSet>* uploads_out = nullptr);

/// One metrics record: a (round, domain) cell or the per-round "avg" row.
/// Unmeasured values (accuracy off the eval cadence, losses for rounds or
/// domains that did not train) stay empty.
struct MetricsRow {
  std::size_t round = 0;
  std::string strategy;
  std::string domain;  // "0".."D-1" or "avg"
  std::optional<double> accuracy;
  std::optional<double> ce;
  std::optional<double> dpa;
  std::optional<double> cpcl;
  std::optional<double> total;
};

/// Training clients plus per-domain test shards. Holdout clients are
/// excluded from `clients`; their domain keeps its test shard so the global
/// model can still be scored on it.
struct FederationData {
  std::vector<ClientState> clients;
  std::vector<std::vector<Sample>> test_by_domain;
};

/// Builds the synthetic benchmark for a config: domain specs, generation,
/// stratified split, partitioning, outlier inflation, holdout exclusion.
FederationData build_federation(const ExperimentConfig& cfg);

struct Checkpoint {
  std::size_t round = 0;
  ModelParams model;
  PrototypeTable prototypes;
};

struct ExperimentResult {
  ExperimentConfig config;  // normalized, as actually run
  std::vector<MetricsRow> rows;
  std::vector<RoundMetrics> rounds;
  ModelParams final_model;
  PrototypeTable final_prototypes;
  std::vector<Checkpoint> checkpoints;
  std::vector<std::size_t> eval_rounds;
  std::vector<double> eval_avg_accuracy;        // parallel to eval_rounds
  std::vector<std::vector<double>> eval_per_domain;  // parallel, size D each
  // Mean over the last (up to) 5 evaluation rounds.
  double final_avg_accuracy = 0.0;
  std::vector<double> final_per_domain;
};

/// Top-1 accuracy of the model on each domain's test shard. Domains with an
/// empty shard score 0.
std::vector<double> evaluate_per_domain(
    const ModelParams& params,
    const std::vector<std::vector<Sample>>& test_by_domain);

/// Runs the full T-round experiment: round-0 evaluation of the initial
/// model, then training rounds with evaluation at the configured cadence
/// (and always after the final round).
ExperimentResult run_experiment(const ExperimentConfig& cfg);

}  // namespace feddap
