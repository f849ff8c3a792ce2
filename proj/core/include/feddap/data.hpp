#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "feddap/numerics.hpp"

namespace feddap {

/// One synthetic domain: class means in raw space plus an affine map
/// (transform, offset) applied to every sample of the domain. Distinct
/// transforms are what make the same class occupy different feature regions
/// per domain.
struct DomainSpec {
  int domain_id = 0;
  std::vector<Vec> class_means;  // C vectors of length raw_dim
  Mat transform;                 // raw_dim x raw_dim
  Vec offset;                    // raw_dim
  double noise_sigma = 0.0;
};

struct Sample {
  Vec x;
  int y = 0;  // class id in [0, C)
  int d = 0;  // domain id in [0, D)

  bool operator==(const Sample& o) const {
    return y == o.y && d == o.d && x == o.x;
  }
};

/// A client's private shard. Single domain per client; every sample carries
/// d == domain_id.
struct ClientDataset {
  int client_id = 0;
  int domain_id = 0;
  std::vector<Sample> samples;

  std::map<int, std::size_t> class_counts() const;
};

/// Draws samples_per_class_per_domain samples for every (class, domain) as
/// transform * (mean_c + eps) + offset with eps ~ N(0, sigma^2 I).
/// Deterministic for a fixed seed. All specs must agree on C and raw_dim.
std::vector<Sample> generate(const std::vector<DomainSpec>& specs,
                             int samples_per_class_per_domain,
                             std::uint64_t seed);

/// Splits each domain's samples uniformly at random across that domain's
/// clients. Every sample is assigned exactly once, and each client ends up
/// with at least one sample of every class present in its domain. Client ids
/// are assigned 0..M-1 in ascending domain order.
std::vector<ClientDataset> partition(const std::vector<Sample>& samples,
                                     const std::map<int, int>& allocation,
                                     std::uint64_t seed);

/// Stratified split per (class, domain): each stratum contributes
/// round(test_fraction * count) samples to the test set.
std::pair<std::vector<Sample>, std::vector<Sample>> train_test_split(
    const std::vector<Sample>& samples, double test_fraction,
    std::uint64_t seed);

/// CSV with header x0..x{raw_dim-1},y,d. Malformed rows raise an error that
/// names the offending row.
std::vector<Sample> load_csv(const std::string& path);
void write_csv(const std::string& path, const std::vector<Sample>& samples);

/// Parameters for the default benchmark construction: per-domain
/// rotation + scale + shift so a class genuinely moves between domains.
struct DomainShiftParams {
  int domains = 4;
  int classes = 5;
  int raw_dim = 16;
  double mean_radius = 2.0;        // scale of class means
  double rotation_deg = 60.0;      // max Givens angle per plane
  double scale_spread = 0.25;      // per-domain scale in [1-s, 1+s]
  double shift = 0.8;              // std of the per-domain offset
  double noise_sigma = 0.7;
};

/// Builds D DomainSpecs sharing one set of class means, each with its own
/// seeded rotation/scale/shift. Domain 0 keeps the identity transform as the
/// reference frame.
std::vector<DomainSpec> make_shifted_domains(const DomainShiftParams& p,
                                             std::uint64_t seed);

/// Adds extra generation-level noise (transform * eps) to every sample,
/// raising the effective sigma to noise_factor * the spec's sigma. Used to
/// turn selected clients into outlier contributors.
void inflate_noise(std::vector<Sample>& samples, const DomainSpec& spec,
                   double noise_factor, std::uint64_t seed,
                   std::uint64_t stream_a, std::uint64_t stream_b);

}  // namespace feddap
