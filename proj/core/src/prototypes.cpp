#include "feddap/prototypes.hpp"

#include <map>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "feddap/model.hpp"
#include "feddap/rng.hpp"

namespace feddap {

std::size_t LocalPrototypeSet::upload_reals() const {
  std::size_t total = 0;
  for (const auto& [cls, entry] : entries) {
    (void)cls;
    total += entry.prototype.size();
  }
  return total;
}

PrototypeTable::PrototypeTable(std::size_t domains, std::size_t classes,
                               std::size_t feature_dim)
    : domains_(domains), classes_(classes), feature_dim_(feature_dim) {
  if (domains == 0 || classes == 0 || feature_dim == 0)
    throw std::invalid_argument("PrototypeTable: dimensions must be positive");
  cells_.resize(domains * classes);
  mask_.assign(domains * classes, 0);
}

std::size_t PrototypeTable::index(int cls, int domain) const {
  if (cls < 0 || static_cast<std::size_t>(cls) >= classes_)
    throw std::out_of_range("PrototypeTable: class " + std::to_string(cls) +
                            " out of range");
  if (domain < 0 || static_cast<std::size_t>(domain) >= domains_)
    throw std::out_of_range("PrototypeTable: domain " + std::to_string(domain) +
                            " out of range");
  return static_cast<std::size_t>(domain) * classes_ +
         static_cast<std::size_t>(cls);
}

bool PrototypeTable::has(int cls, int domain) const {
  return mask_[index(cls, domain)] != 0;
}

const Vec& PrototypeTable::at(int cls, int domain) const {
  const std::size_t i = index(cls, domain);
  if (!mask_[i])
    throw std::out_of_range("PrototypeTable: cell (class " +
                            std::to_string(cls) + ", domain " +
                            std::to_string(domain) + ") is absent");
  return cells_[i];
}

void PrototypeTable::set(int cls, int domain, Vec value) {
  if (value.size() != feature_dim_)
    throw std::invalid_argument("PrototypeTable::set: expected " +
                                std::to_string(feature_dim_) + " reals, got " +
                                std::to_string(value.size()));
  const std::size_t i = index(cls, domain);
  if (!mask_[i]) {
    mask_[i] = 1;
    ++present_;
  }
  cells_[i] = std::move(value);
}

nlohmann::json PrototypeTable::to_json() const {
  nlohmann::json cells = nlohmann::json::array();
  for (std::size_t d = 0; d < domains_; ++d)
    for (std::size_t c = 0; c < classes_; ++c)
      if (mask_[d * classes_ + c])
        cells.push_back({{"class", c},
                         {"domain", d},
                         {"values", cells_[d * classes_ + c]}});
  return {{"domains", domains_},
          {"classes", classes_},
          {"feature_dim", feature_dim_},
          {"cells", std::move(cells)}};
}

PrototypeTable PrototypeTable::from_json(const nlohmann::json& j) {
  PrototypeTable table(j.at("domains").get<std::size_t>(),
                       j.at("classes").get<std::size_t>(),
                       j.at("feature_dim").get<std::size_t>());
  for (const auto& cell : j.at("cells")) {
    const int cls = cell.at("class").get<int>();
    const int domain = cell.at("domain").get<int>();
    if (table.has(cls, domain))
      throw std::invalid_argument("PrototypeTable: duplicate cell in JSON");
    table.set(cls, domain, cell.at("values").get<Vec>());
  }
  return table;
}

bool PrototypeTable::operator==(const PrototypeTable& o) const {
  return domains_ == o.domains_ && classes_ == o.classes_ &&
         feature_dim_ == o.feature_dim_ && mask_ == o.mask_ &&
         cells_ == o.cells_;
}

LocalPrototypeSet compute_local_prototypes(const ModelParams& params,
                                           const ClientDataset& dataset) {
  LocalPrototypeSet set;
  set.client_id = dataset.client_id;
  set.domain_id = dataset.domain_id;

  std::map<int, std::vector<Vec>> by_class;
  for (const Sample& s : dataset.samples)
    by_class[s.y].push_back(forward_features(params, s.x));

  for (auto& [cls, zs] : by_class) {
    LocalPrototypeSet::Entry entry;
    entry.count = zs.size();
    entry.prototype = vec_mean(zs);
    set.entries.emplace(cls, std::move(entry));
  }
  return set;
}

std::vector<double> attention_weights(const std::vector<Vec>& protos,
                                      double tau_agg) {
  if (protos.empty())
    throw std::invalid_argument("attention_weights: empty prototype list");
  if (!(tau_agg > 0.0))
    throw std::invalid_argument("attention_weights: tau_agg must be > 0");
  if (protos.size() == 1) return {1.0};

  Vec scores(protos.size(), 0.0);
  for (std::size_t j = 0; j < protos.size(); ++j)
    for (std::size_t k = 0; k < protos.size(); ++k)
      if (k != j) scores[j] += cosine(protos[j], protos[k]);
  return softmax_temp(scores, tau_agg);
}

namespace {

// Gathers per-cell contributor lists in the order the sets were passed,
// validating ids and feature dimensions along the way.
struct CellGroups {
  std::size_t feature_dim = 0;
  // cell index (domain * classes + class) -> contributing entries
  std::map<std::size_t, std::vector<const LocalPrototypeSet::Entry*>> cells;
};

CellGroups group_by_cell(const std::vector<LocalPrototypeSet>& sets,
                         std::size_t domains, std::size_t classes) {
  CellGroups groups;
  for (const LocalPrototypeSet& set : sets) {
    if (set.domain_id < 0 ||
        static_cast<std::size_t>(set.domain_id) >= domains)
      throw std::invalid_argument("aggregate: client " +
                                  std::to_string(set.client_id) +
                                  " has domain out of range");
    for (const auto& [cls, entry] : set.entries) {
      if (cls < 0 || static_cast<std::size_t>(cls) >= classes)
        throw std::invalid_argument("aggregate: client " +
                                    std::to_string(set.client_id) +
                                    " has class out of range");
      if (groups.feature_dim == 0)
        groups.feature_dim = entry.prototype.size();
      if (entry.prototype.size() != groups.feature_dim ||
          groups.feature_dim == 0)
        throw std::invalid_argument(
            "aggregate: inconsistent prototype dimensions");
      const std::size_t idx =
          static_cast<std::size_t>(set.domain_id) * classes +
          static_cast<std::size_t>(cls);
      groups.cells[idx].push_back(&entry);
    }
  }
  if (groups.feature_dim == 0)
    throw std::invalid_argument("aggregate: no prototypes to aggregate");
  return groups;
}

}  // namespace

PrototypeTable aggregate_domain_specific(
    const std::vector<LocalPrototypeSet>& sets, std::size_t domains,
    std::size_t classes, double tau_agg) {
  CellGroups groups = group_by_cell(sets, domains, classes);
  PrototypeTable table(domains, classes, groups.feature_dim);
  for (const auto& [idx, members] : groups.cells) {
    std::vector<Vec> protos;
    protos.reserve(members.size());
    for (const auto* entry : members) protos.push_back(entry->prototype);
    const std::vector<double> alpha = attention_weights(protos, tau_agg);
    Vec fused(groups.feature_dim, 0.0);
    for (std::size_t j = 0; j < protos.size(); ++j)
      for (std::size_t k = 0; k < fused.size(); ++k)
        fused[k] += alpha[j] * protos[j][k];
    table.set(static_cast<int>(idx % classes), static_cast<int>(idx / classes),
              std::move(fused));
  }
  return table;
}

PrototypeTable aggregate_uniform(const std::vector<LocalPrototypeSet>& sets,
                                 std::size_t domains, std::size_t classes) {
  CellGroups groups = group_by_cell(sets, domains, classes);
  PrototypeTable table(domains, classes, groups.feature_dim);
  for (const auto& [idx, members] : groups.cells) {
    Vec fused(groups.feature_dim, 0.0);
    for (const auto* entry : members)
      for (std::size_t k = 0; k < fused.size(); ++k)
        fused[k] += entry->prototype[k];
    fused = vec_scale(fused, 1.0 / static_cast<double>(members.size()));
    table.set(static_cast<int>(idx % classes), static_cast<int>(idx / classes),
              std::move(fused));
  }
  return table;
}

PrototypeTable aggregate_single_global(
    const std::vector<LocalPrototypeSet>& sets, std::size_t domains,
    std::size_t classes) {
  CellGroups groups = group_by_cell(sets, domains, classes);

  // Collapse across domains: count-weighted mean per class.
  std::map<int, std::pair<Vec, double>> per_class;  // class -> (sum, weight)
  for (const auto& [idx, members] : groups.cells) {
    const int cls = static_cast<int>(idx % classes);
    auto& [sum, weight] = per_class
                              .try_emplace(cls, Vec(groups.feature_dim, 0.0),
                                           0.0)
                              .first->second;
    for (const auto* entry : members) {
      const double w = static_cast<double>(entry->count);
      for (std::size_t k = 0; k < sum.size(); ++k)
        sum[k] += w * entry->prototype[k];
      weight += w;
    }
  }

  PrototypeTable table(domains, classes, groups.feature_dim);
  for (auto& [cls, acc] : per_class) {
    auto& [sum, weight] = acc;
    if (weight <= 0.0)
      throw std::invalid_argument(
          "aggregate_single_global: zero total count for class " +
          std::to_string(cls));
    sum = vec_scale(sum, 1.0 / weight);
    for (std::size_t d = 0; d < domains; ++d)
      table.set(cls, static_cast<int>(d), sum);
  }
  return table;
}

LocalPrototypeSet dp_noise(const LocalPrototypeSet& set, double q, double s,
                           std::uint64_t seed) {
  if (q < 0.0 || s < 0.0)
    throw std::invalid_argument("dp_noise: q and s must be non-negative");
  LocalPrototypeSet out = set;
  if (q == 0.0 || s == 0.0) return out;
  Rng rng(seed, StreamPurpose::kDpNoise,
          static_cast<std::uint64_t>(set.client_id));
  const double std_dev = q * s;
  for (auto& [cls, entry] : out.entries) {
    (void)cls;
    for (double& v : entry.prototype) v += std_dev * rng.normal();
  }
  return out;
}

}  // namespace feddap
