#include "feddap/serialize.hpp"

#include <charconv>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "feddap/version.hpp"

namespace feddap {

std::string render_real(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw std::logic_error("render_real failed");
  return std::string(buf, end);
}

nlohmann::json mat_to_json(const Mat& m) {
  return {{"rows", m.rows}, {"cols", m.cols}, {"values", m.values}};
}

Mat mat_from_json(const nlohmann::json& j) {
  Mat m(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
  m.values = j.at("values").get<std::vector<double>>();
  if (m.values.size() != m.rows * m.cols)
    throw std::invalid_argument("mat_from_json: values size mismatch");
  return m;
}

namespace {

nlohmann::json layer_to_json(const LayerParams& l) {
  return {{"weight", mat_to_json(l.weight)}, {"bias", l.bias}};
}

LayerParams layer_from_json(const nlohmann::json& j) {
  LayerParams l;
  l.weight = mat_from_json(j.at("weight"));
  l.bias = j.at("bias").get<Vec>();
  if (l.bias.size() != l.weight.rows)
    throw std::invalid_argument("layer_from_json: bias size mismatch");
  return l;
}

}  // namespace

nlohmann::json model_to_json(const ModelParams& params) {
  nlohmann::json extractor = nlohmann::json::array();
  for (const LayerParams& l : params.extractor)
    extractor.push_back(layer_to_json(l));
  return {{"extractor", std::move(extractor)},
          {"classifier", layer_to_json(params.classifier)}};
}

ModelParams model_from_json(const nlohmann::json& j) {
  ModelParams params;
  for (const auto& l : j.at("extractor"))
    params.extractor.push_back(layer_from_json(l));
  params.classifier = layer_from_json(j.at("classifier"));
  if (params.extractor.empty())
    throw std::invalid_argument("model_from_json: empty extractor");
  return params;
}

std::string render_metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string out = "round,strategy,domain,accuracy,ce,dpa,cpcl,total\n";
  auto cell = [](const std::optional<double>& v) {
    return v ? render_real(*v) : std::string();
  };
  for (const MetricsRow& r : rows) {
    out += std::to_string(r.round);
    out += ',';
    out += r.strategy;
    out += ',';
    out += r.domain;
    out += ',';
    out += cell(r.accuracy);
    out += ',';
    out += cell(r.ce);
    out += ',';
    out += cell(r.dpa);
    out += ',';
    out += cell(r.cpcl);
    out += ',';
    out += cell(r.total);
    out += '\n';
  }
  return out;
}

namespace {

std::string hash_hex(std::uint64_t h) {
  char buf[19];
  std::snprintf(buf, sizeof(buf), "0x%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

nlohmann::json summary_json(const ExperimentResult& result) {
  nlohmann::json per_domain = nlohmann::json::array();
  for (double v : result.final_per_domain) per_domain.push_back(v);
  return {{"strategy", strategy_name(result.config.strategy)},
          {"config_hash", hash_hex(config_hash(result.config))},
          {"seed", result.config.seed},
          {"data_seed", result.config.data.data_seed},
          {"rounds", result.config.rounds},
          {"eval_rounds", result.eval_rounds},
          {"eval_avg_accuracy", result.eval_avg_accuracy},
          {"final_avg_accuracy", result.final_avg_accuracy},
          {"final_per_domain_accuracy", std::move(per_domain)}};
}

nlohmann::json checkpoint_to_json(const Checkpoint& ckpt) {
  return {{"round", ckpt.round},
          {"model", model_to_json(ckpt.model)},
          {"prototypes", ckpt.prototypes.to_json()}};
}

Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  Checkpoint ckpt;
  ckpt.round = j.at("round").get<std::size_t>();
  ckpt.model = model_from_json(j.at("model"));
  ckpt.prototypes = PrototypeTable::from_json(j.at("prototypes"));
  return ckpt;
}

nlohmann::json manifest_json(const ExperimentResult& result,
                             const std::vector<std::string>& outputs,
                             double wall_seconds) {
  nlohmann::json config = nlohmann::json::object();
  for (const auto& [key, value] : config_entries(result.config))
    config[key] = value;

  const std::time_t now =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[32];
  std::tm tm_utc{};
  gmtime_r(&now, &tm_utc);
  std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);

  return {{"version", kVersion},
          {"strategy", strategy_name(result.config.strategy)},
          {"config_hash", hash_hex(config_hash(result.config))},
          {"seed", result.config.seed},
          {"data_seed", result.config.data.data_seed},
          {"config", std::move(config)},
          {"outputs", outputs},
          {"wall_seconds", wall_seconds},
          {"created_utc", stamp}};
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << content;
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_json_file(const std::string& path, const nlohmann::json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

nlohmann::json read_json_file(const std::string& path) {
  return nlohmann::json::parse(read_text_file(path));
}

}  // namespace feddap
