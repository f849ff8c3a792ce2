#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "feddap/data.hpp"
#include "feddap/numerics.hpp"

namespace feddap {

struct ModelParams;  // model.hpp

/// A client's per-class mean features under the current extractor. Only
/// locally present classes appear; sample counts ride along for the
/// single-global baseline's weighting.
struct LocalPrototypeSet {
  struct Entry {
    Vec prototype;
    std::size_t count = 0;
  };

  int client_id = 0;
  int domain_id = 0;
  std::map<int, Entry> entries;  // class id -> entry

  /// Number of reals a client uploads for this set.
  std::size_t upload_reals() const;
};

/// The D x C table of domain-specific global prototypes with a presence
/// mask. Cells nobody contributed to stay absent; they are never imputed.
class PrototypeTable {
 public:
  PrototypeTable() = default;
  PrototypeTable(std::size_t domains, std::size_t classes,
                 std::size_t feature_dim);

  std::size_t domains() const { return domains_; }
  std::size_t classes() const { return classes_; }
  std::size_t feature_dim() const { return feature_dim_; }

  bool empty() const { return present_ == 0; }
  std::size_t present_cells() const { return present_; }

  bool has(int cls, int domain) const;
  const Vec& at(int cls, int domain) const;
  void set(int cls, int domain, Vec value);

  /// Total reals a client downloads when the server broadcasts the table.
  std::size_t download_reals() const { return present_ * feature_dim_; }

  nlohmann::json to_json() const;
  static PrototypeTable from_json(const nlohmann::json& j);

  bool operator==(const PrototypeTable& o) const;

 private:
  std::size_t index(int cls, int domain) const;

  std::size_t domains_ = 0;
  std::size_t classes_ = 0;
  std::size_t feature_dim_ = 0;
  std::size_t present_ = 0;
  std::vector<Vec> cells_;       // row-major: domain * classes + class
  std::vector<char> mask_;
};

/// Local prototype computation: for each class with samples, the mean of
/// forward_features over those samples.
LocalPrototypeSet compute_local_prototypes(const ModelParams& params,
                                           const ClientDataset& dataset);

/// Consistency-weighted fusion weights for one (class, domain) cell:
/// S_j = sum of cosines to all other members, alpha = softmax(S / tau_agg).
/// A singleton list degenerates to [1.0].
std::vector<double> attention_weights(const std::vector<Vec>& protos,
                                      double tau_agg);

/// Similarity-weighted fusion per (class, domain) cell.
PrototypeTable aggregate_domain_specific(
    const std::vector<LocalPrototypeSet>& sets, std::size_t domains,
    std::size_t classes, double tau_agg);

/// Unweighted per-cell mean, still domain-specific.
PrototypeTable aggregate_uniform(const std::vector<LocalPrototypeSet>& sets,
                                 std::size_t domains, std::size_t classes);

/// Single global prototype per class: sample-count-weighted mean across all
/// domains, replicated into every domain row so downstream losses keep their
/// shape.
PrototypeTable aggregate_single_global(
    const std::vector<LocalPrototypeSet>& sets, std::size_t domains,
    std::size_t classes);

/// Perturbs every prototype elementwise with seeded Gaussian noise of
/// std q * s. q == 0 or s == 0 returns the set unchanged.
LocalPrototypeSet dp_noise(const LocalPrototypeSet& set, double q, double s,
                           std::uint64_t seed);

}  // namespace feddap
