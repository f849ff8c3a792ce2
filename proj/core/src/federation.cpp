#include "feddap/federation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "feddap/rng.hpp"

namespace feddap {

DivergenceError::DivergenceError(std::size_t round_, int client_,
                                 std::size_t epoch_, const std::string& detail)
    : std::runtime_error("training diverged at round " +
                         std::to_string(round_) + ", client " +
                         std::to_string(client_) + ", epoch " +
                         std::to_string(epoch_) + ": " + detail),
      round(round_),
      client(client_),
      epoch(epoch_) {}

LocalUpdateResult local_update(const ClientState& client,
                               const ModelParams& global,
                               const PrototypeTable& table,
                               const ExperimentConfig& cfg,
                               std::size_t round) {
  if (client.samples.empty())
    throw std::invalid_argument("local_update: client " +
                                std::to_string(client.client_id) +
                                " has no samples");

  LocalUpdateResult out;
  out.params = global;
  out.metrics.client_id = client.client_id;
  out.metrics.domain_id = client.domain_id;

  const LossOptions opt = cfg.loss_options();
  const std::size_t n = client.samples.size();

  // The batching stream depends only on (seed, round, client), never on the
  // strategy or loss weights, so ablated runs see identical batch orders.
  Rng batch_rng(cfg.seed, StreamPurpose::kBatching, round,
                static_cast<std::uint64_t>(client.client_id));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    batch_rng.shuffle(order);
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t stop = std::min(n, start + cfg.batch_size);
      BatchView batch;
      batch.reserve(stop - start);
      for (std::size_t i = start; i < stop; ++i)
        batch.push_back(&client.samples[order[i]]);

      BackwardResult step;
      try {
        step = backward(out.params, batch, table, client.domain_id, opt);
      } catch (const std::runtime_error& e) {
        throw DivergenceError(round, client.client_id, epoch, e.what());
      }
      if (!std::isfinite(step.loss.total))
        throw DivergenceError(round, client.client_id, epoch,
                              "non-finite loss");

      out.metrics.ce += step.loss.ce;
      out.metrics.dpa += step.loss.dpa;
      out.metrics.cpcl += step.loss.cpcl;
      out.metrics.total += step.loss.total;
      out.metrics.batches += 1;
      if (!table.empty() && step.dpa_contributing == 0)
        out.metrics.dpa_inactive_batches += 1;
      out.metrics.cpcl_flagged_samples += step.cpcl_flagged;

      out.params = sgd_step(out.params, step.grads, cfg.lr);
    }
  }

  if (out.metrics.batches > 0) {
    const double inv = 1.0 / static_cast<double>(out.metrics.batches);
    out.metrics.ce *= inv;
    out.metrics.dpa *= inv;
    out.metrics.cpcl *= inv;
    out.metrics.total *= inv;
  }

  // Alg.-order: prototypes come from the post-training extractor.
  out.prototypes = compute_local_prototypes(out.params, client);
  out.metrics.upload_reals = out.prototypes.upload_reals();
  return out;
}

ModelParams aggregate_models(
    const std::vector<std::pair<ModelParams, std::size_t>>& updates) {
  if (updates.empty())
    throw std::invalid_argument("aggregate_models: no updates");
  double total = 0.0;
  for (const auto& [params, count] : updates) {
    (void)params;
    total += static_cast<double>(count);
  }
  if (total <= 0.0)
    throw std::invalid_argument("aggregate_models: zero total sample count");

  ModelParams out = updates.front().first;
  auto scale_layer = [](LayerParams& l, double w) {
    for (double& v : l.weight.values) v *= w;
    for (double& v : l.bias) v *= w;
  };
  auto add_layer = [](LayerParams& l, const LayerParams& o, double w) {
    if (l.weight.rows != o.weight.rows || l.weight.cols != o.weight.cols ||
        l.bias.size() != o.bias.size())
      throw std::invalid_argument("aggregate_models: shape mismatch");
    for (std::size_t i = 0; i < l.weight.values.size(); ++i)
      l.weight.values[i] += w * o.weight.values[i];
    for (std::size_t i = 0; i < l.bias.size(); ++i) l.bias[i] += w * o.bias[i];
  };

  const double w0 = static_cast<double>(updates.front().second) / total;
  for (LayerParams& l : out.extractor) scale_layer(l, w0);
  scale_layer(out.classifier, w0);

  for (std::size_t m = 1; m < updates.size(); ++m) {
    const auto& [params, count] = updates[m];
    if (params.extractor.size() != out.extractor.size())
      throw std::invalid_argument("aggregate_models: shape mismatch");
    const double w = static_cast<double>(count) / total;
    for (std::size_t l = 0; l < out.extractor.size(); ++l)
      add_layer(out.extractor[l], params.extractor[l], w);
    add_layer(out.classifier, params.classifier, w);
  }
  return out;
}

RoundMetrics run_round(RoundState& state,
                       const std::vector<ClientState>& clients,
                       const ExperimentConfig& cfg,
                       std::vector<LocalPrototypeSet>* uploads_out) {
  if (clients.empty())
    throw std::invalid_argument("run_round: no clients");
  const auto t0 = std::chrono::steady_clock::now();

  RoundMetrics metrics;
  metrics.round = state.round;

  std::vector<std::pair<ModelParams, std::size_t>> model_updates;
  std::vector<LocalPrototypeSet> uploads;
  model_updates.reserve(clients.size());
  uploads.reserve(clients.size());

  for (const ClientState& client : clients) {
    LocalUpdateResult r =
        local_update(client, state.model, state.prototypes, cfg, state.round);
    LocalPrototypeSet up = std::move(r.prototypes);
    if (cfg.dp_noise)
      up = dp_noise(up, cfg.dp_q, cfg.dp_s,
                    splitmix64(cfg.seed + state.round));
    if (cfg.strategy == Strategy::kFedAvg) r.metrics.upload_reals = 0;
    metrics.clients.push_back(r.metrics);
    model_updates.emplace_back(std::move(r.params), client.samples.size());
    uploads.push_back(std::move(up));
  }

  state.model = aggregate_models(model_updates);

  switch (cfg.strategy) {
    case Strategy::kFedAvg:
      state.prototypes = PrototypeTable();  // never built, never broadcast
      break;
    case Strategy::kFedDap:
      state.prototypes = aggregate_domain_specific(
          uploads, cfg.data.domains, cfg.data.classes, cfg.tau_agg);
      break;
    case Strategy::kFedProtoSingle:
      state.prototypes =
          aggregate_single_global(uploads, cfg.data.domains, cfg.data.classes);
      break;
    case Strategy::kUniformDomainAvg:
      state.prototypes =
          aggregate_uniform(uploads, cfg.data.domains, cfg.data.classes);
      break;
  }
  metrics.download_reals = state.prototypes.download_reals();

  if (uploads_out) *uploads_out = std::move(uploads);
  state.round += 1;

  metrics.wall_ms = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
  return metrics;
}

FederationData build_federation(const ExperimentConfig& cfg) {
  const std::vector<DomainSpec> specs =
      make_shifted_domains(cfg.domain_shift_params(), cfg.data.data_seed);
  const std::vector<Sample> all = generate(
      specs, static_cast<int>(cfg.data.samples_per_class_per_domain),
      cfg.data.data_seed);
  auto [train, test] =
      train_test_split(all, cfg.data.test_fraction, cfg.data.data_seed);

  std::map<int, int> allocation;
  for (std::size_t d = 0; d < cfg.data.domains; ++d)
    allocation[static_cast<int>(d)] = static_cast<int>(
        cfg.data.client_allocation.empty() ? cfg.data.clients_per_domain
                                           : cfg.data.client_allocation[d]);

  FederationData fed;
  fed.clients = partition(train, allocation, cfg.data.data_seed);

  // The last k clients of each domain become outlier contributors.
  if (cfg.data.outlier_clients_per_domain > 0) {
    std::map<int, std::vector<std::size_t>> by_domain;
    for (std::size_t i = 0; i < fed.clients.size(); ++i)
      by_domain[fed.clients[i].domain_id].push_back(i);
    for (const auto& [d, idx] : by_domain) {
      const std::size_t k =
          std::min(cfg.data.outlier_clients_per_domain, idx.size());
      for (std::size_t j = idx.size() - k; j < idx.size(); ++j) {
        ClientState& c = fed.clients[idx[j]];
        inflate_noise(c.samples, specs[static_cast<std::size_t>(d)],
                      cfg.data.outlier_noise_factor, cfg.data.data_seed,
                      static_cast<std::uint64_t>(c.client_id), 0);
      }
    }
  }

  if (cfg.holdout_domain >= 0) {
    std::vector<ClientState> kept;
    for (ClientState& c : fed.clients)
      if (c.domain_id != cfg.holdout_domain) kept.push_back(std::move(c));
    fed.clients = std::move(kept);
  }

  fed.test_by_domain.assign(cfg.data.domains, {});
  for (const Sample& s : test)
    fed.test_by_domain[static_cast<std::size_t>(s.d)].push_back(s);
  return fed;
}

std::vector<double> evaluate_per_domain(
    const ModelParams& params,
    const std::vector<std::vector<Sample>>& test_by_domain) {
  std::vector<double> acc(test_by_domain.size(), 0.0);
  for (std::size_t d = 0; d < test_by_domain.size(); ++d) {
    const std::vector<Sample>& shard = test_by_domain[d];
    if (shard.empty()) continue;
    std::size_t correct = 0;
    for (const Sample& s : shard) {
      const Vec logits =
          forward_logits(params, forward_features(params, s.x));
      const std::size_t pred = static_cast<std::size_t>(
          std::max_element(logits.begin(), logits.end()) - logits.begin());
      if (pred == static_cast<std::size_t>(s.y)) ++correct;
    }
    acc[d] = static_cast<double>(correct) / static_cast<double>(shard.size());
  }
  return acc;
}

namespace {

// Domains that actually train (holdout excluded).
std::vector<bool> training_domains(const ExperimentConfig& cfg) {
  std::vector<bool> active(cfg.data.domains, true);
  if (cfg.holdout_domain >= 0)
    active[static_cast<std::size_t>(cfg.holdout_domain)] = false;
  return active;
}

void append_round_rows(std::vector<MetricsRow>& rows,
                       const ExperimentConfig& cfg, std::size_t round,
                       const RoundMetrics* trained,
                       const std::vector<double>* accuracy) {
  const std::string strategy = strategy_name(cfg.strategy);
  const std::vector<bool> active = training_domains(cfg);

  // Per-domain training-loss means for this round.
  std::vector<double> ce(cfg.data.domains, 0.0), dpa(cfg.data.domains, 0.0),
      cpcl(cfg.data.domains, 0.0), total(cfg.data.domains, 0.0);
  std::vector<std::size_t> clients(cfg.data.domains, 0);
  if (trained) {
    for (const ClientRoundMetrics& m : trained->clients) {
      const std::size_t d = static_cast<std::size_t>(m.domain_id);
      ce[d] += m.ce;
      dpa[d] += m.dpa;
      cpcl[d] += m.cpcl;
      total[d] += m.total;
      clients[d] += 1;
    }
  }

  double acc_sum = 0.0, ce_sum = 0.0, dpa_sum = 0.0, cpcl_sum = 0.0,
         total_sum = 0.0;
  std::size_t acc_n = 0, loss_n = 0;

  for (std::size_t d = 0; d < cfg.data.domains; ++d) {
    MetricsRow row;
    row.round = round;
    row.strategy = strategy;
    row.domain = std::to_string(d);
    if (accuracy) {
      row.accuracy = (*accuracy)[d];
      acc_sum += (*accuracy)[d];
      ++acc_n;
    }
    if (trained && active[d] && clients[d] > 0) {
      const double inv = 1.0 / static_cast<double>(clients[d]);
      row.ce = ce[d] * inv;
      row.dpa = dpa[d] * inv;
      row.cpcl = cpcl[d] * inv;
      row.total = total[d] * inv;
      ce_sum += *row.ce;
      dpa_sum += *row.dpa;
      cpcl_sum += *row.cpcl;
      total_sum += *row.total;
      ++loss_n;
    }
    rows.push_back(std::move(row));
  }

  MetricsRow avg;
  avg.round = round;
  avg.strategy = strategy;
  avg.domain = "avg";
  if (acc_n > 0) avg.accuracy = acc_sum / static_cast<double>(acc_n);
  if (loss_n > 0) {
    const double inv = 1.0 / static_cast<double>(loss_n);
    avg.ce = ce_sum * inv;
    avg.dpa = dpa_sum * inv;
    avg.cpcl = cpcl_sum * inv;
    avg.total = total_sum * inv;
  }
  rows.push_back(std::move(avg));
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& raw_cfg) {
  ExperimentConfig cfg = raw_cfg;
  validate(cfg);

  ExperimentResult result;
  result.config = cfg;

  FederationData fed = build_federation(cfg);

  std::vector<std::size_t> dims;
  dims.push_back(cfg.data.raw_dim);
  for (std::size_t h : cfg.hidden_dims) dims.push_back(h);
  dims.push_back(cfg.feature_dim);

  RoundState state;
  state.model = init_params(dims, cfg.data.classes, cfg.seed);

  auto record_eval = [&](std::size_t round) {
    const std::vector<double> acc =
        evaluate_per_domain(state.model, fed.test_by_domain);
    double sum = 0.0;
    for (double a : acc) sum += a;
    result.eval_rounds.push_back(round);
    result.eval_per_domain.push_back(acc);
    result.eval_avg_accuracy.push_back(sum /
                                       static_cast<double>(acc.size()));
    return acc;
  };

  // Round 0: evaluate the initial model before any training.
  {
    const std::vector<double> acc = record_eval(0);
    append_round_rows(result.rows, cfg, 0, nullptr, &acc);
  }

  for (std::size_t t = 0; t < cfg.rounds; ++t) {
    RoundMetrics rm = run_round(state, fed.clients, cfg);
    const std::size_t round = state.round;  // t + 1

    const bool eval_now =
        (round % cfg.eval_every == 0) || (round == cfg.rounds);
    if (eval_now) {
      const std::vector<double> acc = record_eval(round);
      append_round_rows(result.rows, cfg, round, &rm, &acc);
    } else {
      append_round_rows(result.rows, cfg, round, &rm, nullptr);
    }

    if (cfg.checkpoint_every > 0 && round % cfg.checkpoint_every == 0 &&
        round != cfg.rounds)
      result.checkpoints.push_back({round, state.model, state.prototypes});

    result.rounds.push_back(std::move(rm));
  }

  result.final_model = state.model;
  result.final_prototypes = state.prototypes;
  result.checkpoints.push_back(
      {cfg.rounds, state.model, state.prototypes});

  // Headline number: mean over the last (up to) 5 evaluation rounds.
  const std::size_t evals = result.eval_rounds.size();
  const std::size_t window = std::min<std::size_t>(5, evals);
  result.final_per_domain.assign(cfg.data.domains, 0.0);
  for (std::size_t i = evals - window; i < evals; ++i) {
    result.final_avg_accuracy += result.eval_avg_accuracy[i];
    for (std::size_t d = 0; d < cfg.data.domains; ++d)
      result.final_per_domain[d] += result.eval_per_domain[i][d];
  }
  result.final_avg_accuracy /= static_cast<double>(window);
  for (double& v : result.final_per_domain)
    v /= static_cast<double>(window);

  return result;
}

}  // namespace feddap
