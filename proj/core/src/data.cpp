#include "feddap/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "feddap/rng.hpp"

namespace feddap {

std::map<int, std::size_t> ClientDataset::class_counts() const {
  std::map<int, std::size_t> counts;
  for (const Sample& s : samples) counts[s.y]++;
  return counts;
}

namespace {

void check_specs(const std::vector<DomainSpec>& specs) {
  if (specs.empty()) throw std::invalid_argument("generate: no domain specs");
  const std::size_t classes = specs.front().class_means.size();
  const std::size_t dim =
      classes ? specs.front().class_means.front().size() : 0;
  if (classes < 2)
    throw std::invalid_argument("generate: need at least 2 classes");
  for (const DomainSpec& spec : specs) {
    if (spec.class_means.size() != classes)
      throw std::invalid_argument(
          "generate: inconsistent class count across domains");
    for (const Vec& m : spec.class_means)
      if (m.size() != dim)
        throw std::invalid_argument("generate: inconsistent raw_dim");
    if (spec.transform.rows != dim || spec.transform.cols != dim)
      throw std::invalid_argument("generate: transform must be raw_dim x raw_dim");
    if (spec.offset.size() != dim)
      throw std::invalid_argument("generate: offset length mismatch");
    if (spec.noise_sigma < 0.0)
      throw std::invalid_argument("generate: noise_sigma must be >= 0");
  }
}

Vec draw_sample(const DomainSpec& spec, const Vec& mean, Rng& rng) {
  Vec raw(mean.size());
  for (std::size_t i = 0; i < raw.size(); ++i)
    raw[i] = mean[i] + spec.noise_sigma * rng.normal();
  return vec_add(matvec(spec.transform, raw), spec.offset);
}

}  // namespace

std::vector<Sample> generate(const std::vector<DomainSpec>& specs,
                             int samples_per_class_per_domain,
                             std::uint64_t seed) {
  check_specs(specs);
  if (samples_per_class_per_domain < 0)
    throw std::invalid_argument("generate: negative sample count");
  std::vector<Sample> out;
  out.reserve(specs.size() * specs.front().class_means.size() *
              static_cast<std::size_t>(samples_per_class_per_domain));
  for (const DomainSpec& spec : specs) {
    for (std::size_t c = 0; c < spec.class_means.size(); ++c) {
      Rng rng(seed, StreamPurpose::kDataGen,
              static_cast<std::uint64_t>(spec.domain_id), c);
      for (int i = 0; i < samples_per_class_per_domain; ++i) {
        out.push_back(Sample{draw_sample(spec, spec.class_means[c], rng),
                             static_cast<int>(c), spec.domain_id});
      }
    }
  }
  return out;
}

std::vector<ClientDataset> partition(const std::vector<Sample>& samples,
                                     const std::map<int, int>& allocation,
                                     std::uint64_t seed) {
  std::map<int, std::vector<std::size_t>> by_domain;
  for (std::size_t i = 0; i < samples.size(); ++i)
    by_domain[samples[i].d].push_back(i);

  for (const auto& [d, count] : allocation) {
    if (count < 1)
      throw std::invalid_argument("partition: client_count must be >= 1");
    if (!by_domain.count(d))
      throw std::invalid_argument("partition: allocation references domain " +
                                  std::to_string(d) + " with no samples");
  }
  for (const auto& [d, idx] : by_domain) {
    (void)idx;
    if (!allocation.count(d))
      throw std::invalid_argument("partition: samples of domain " +
                                  std::to_string(d) + " have no allocation");
  }

  std::vector<ClientDataset> clients;
  int next_id = 0;
  for (const auto& [d, count] : allocation) {
    std::vector<std::size_t> idx = by_domain[d];
    Rng rng(seed, StreamPurpose::kPartition, static_cast<std::uint64_t>(d));
    rng.shuffle(idx);

    const std::size_t n = idx.size();
    const std::size_t k = static_cast<std::size_t>(count);
    std::size_t offset = 0;
    std::vector<ClientDataset> domain_clients;
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t share = n / k + (j < n % k ? 1 : 0);
      ClientDataset cd;
      cd.client_id = next_id++;
      cd.domain_id = d;
      for (std::size_t t = 0; t < share; ++t)
        cd.samples.push_back(samples[idx[offset + t]]);
      offset += share;
      domain_clients.push_back(std::move(cd));
    }

    // Rebalance: every client should hold at least one sample of each class
    // present in its domain. Move singles from the richest donor.
    std::map<int, std::size_t> domain_classes;
    for (std::size_t i : idx) domain_classes[samples[i].y]++;
    for (const auto& [cls, total] : domain_classes) {
      (void)total;
      for (ClientDataset& needy : domain_clients) {
        auto has_class = [&](const ClientDataset& cd) {
          for (const Sample& s : cd.samples)
            if (s.y == cls) return true;
          return false;
        };
        if (has_class(needy)) continue;
        ClientDataset* donor = nullptr;
        std::size_t donor_count = 1;  // donor must keep at least one
        for (ClientDataset& cand : domain_clients) {
          std::size_t cnt = 0;
          for (const Sample& s : cand.samples)
            if (s.y == cls) cnt++;
          if (cnt > donor_count) {
            donor = &cand;
            donor_count = cnt;
          }
        }
        if (!donor) continue;  // class too scarce to cover everyone
        for (std::size_t t = 0; t < donor->samples.size(); ++t) {
          if (donor->samples[t].y == cls) {
            needy.samples.push_back(donor->samples[t]);
            donor->samples.erase(donor->samples.begin() +
                                 static_cast<std::ptrdiff_t>(t));
            break;
          }
        }
      }
    }

    for (ClientDataset& cd : domain_clients) {
      if (cd.samples.empty())
        throw std::invalid_argument(
            "partition: domain " + std::to_string(d) +
            " has fewer samples than clients");
      clients.push_back(std::move(cd));
    }
  }
  return clients;
}

std::pair<std::vector<Sample>, std::vector<Sample>> train_test_split(
    const std::vector<Sample>& samples, double test_fraction,
    std::uint64_t seed) {
  if (test_fraction < 0.0 || test_fraction > 1.0)
    throw std::invalid_argument("train_test_split: fraction out of [0, 1]");
  std::map<std::pair<int, int>, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < samples.size(); ++i)
    strata[{samples[i].d, samples[i].y}].push_back(i);

  std::vector<Sample> train, test;
  for (auto& [key, idx] : strata) {
    Rng rng(seed, StreamPurpose::kSplit, static_cast<std::uint64_t>(key.first),
            static_cast<std::uint64_t>(key.second));
    rng.shuffle(idx);
    const std::size_t n_test = static_cast<std::size_t>(
        std::llround(test_fraction * static_cast<double>(idx.size())));
    for (std::size_t t = 0; t < idx.size(); ++t) {
      (t < n_test ? test : train).push_back(samples[idx[t]]);
    }
  }
  return {std::move(train), std::move(test)};
}

std::vector<Sample> load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_csv: cannot open " + path);

  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("load_csv: " + path + ": missing header");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) header.push_back(field);
  }
  if (header.size() < 3 || header[header.size() - 2] != "y" ||
      header.back() != "d")
    throw std::runtime_error("load_csv: " + path +
                             ": header must be x0..x{n-1},y,d");
  const std::size_t dim = header.size() - 2;
  for (std::size_t i = 0; i < dim; ++i) {
    if (header[i] != "x" + std::to_string(i))
      throw std::runtime_error("load_csv: " + path + ": bad header column " +
                               header[i]);
  }

  std::vector<Sample> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != dim + 2)
      throw std::runtime_error("load_csv: " + path + ": row " +
                               std::to_string(lineno) + ": expected " +
                               std::to_string(dim + 2) + " fields, got " +
                               std::to_string(fields.size()));
    Sample s;
    s.x.resize(dim);
    try {
      std::size_t pos = 0;
      for (std::size_t i = 0; i < dim; ++i) {
        s.x[i] = std::stod(fields[i], &pos);
        if (pos != fields[i].size()) throw std::invalid_argument(fields[i]);
      }
      s.y = std::stoi(fields[dim], &pos);
      if (pos != fields[dim].size()) throw std::invalid_argument(fields[dim]);
      s.d = std::stoi(fields[dim + 1], &pos);
      if (pos != fields[dim + 1].size())
        throw std::invalid_argument(fields[dim + 1]);
    } catch (const std::exception&) {
      throw std::runtime_error("load_csv: " + path + ": row " +
                               std::to_string(lineno) + ": malformed value");
    }
    if (s.y < 0 || s.d < 0)
      throw std::runtime_error("load_csv: " + path + ": row " +
                               std::to_string(lineno) +
                               ": negative class or domain id");
    out.push_back(std::move(s));
  }
  return out;
}

void write_csv(const std::string& path, const std::vector<Sample>& samples) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_csv: cannot open " + path);
  const std::size_t dim = samples.empty() ? 0 : samples.front().x.size();
  for (std::size_t i = 0; i < dim; ++i) out << "x" << i << ",";
  out << "y,d\n";
  char buf[40];
  for (const Sample& s : samples) {
    if (s.x.size() != dim)
      throw std::invalid_argument("write_csv: ragged sample dimensions");
    for (double v : s.x) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out << buf << ",";
    }
    out << s.y << "," << s.d << "\n";
  }
}

std::vector<DomainSpec> make_shifted_domains(const DomainShiftParams& p,
                                             std::uint64_t seed) {
  if (p.domains < 1 || p.classes < 2 || p.raw_dim < 1)
    throw std::invalid_argument("make_shifted_domains: bad dimensions");

  Rng mean_rng(seed, StreamPurpose::kDomainSpec, 0);
  std::vector<Vec> means(static_cast<std::size_t>(p.classes));
  const double mean_scale =
      p.mean_radius / std::sqrt(static_cast<double>(p.raw_dim));
  for (Vec& m : means) {
    m.resize(static_cast<std::size_t>(p.raw_dim));
    for (double& v : m) v = mean_scale * mean_rng.normal();
  }

  const std::size_t n = static_cast<std::size_t>(p.raw_dim);
  std::vector<DomainSpec> specs;
  for (int d = 0; d < p.domains; ++d) {
    DomainSpec spec;
    spec.domain_id = d;
    spec.class_means = means;
    spec.noise_sigma = p.noise_sigma;
    spec.offset.assign(n, 0.0);
    if (d == 0) {
      spec.transform = Mat::identity(n);
    } else {
      Rng rng(seed, StreamPurpose::kDomainSpec,
              static_cast<std::uint64_t>(d));
      // Compose Givens rotations over random coordinate planes.
      Mat rot = Mat::identity(n);
      const double max_angle = p.rotation_deg * std::numbers::pi / 180.0;
      const std::size_t planes = n / 2;
      for (std::size_t k = 0; k < planes; ++k) {
        std::size_t i = static_cast<std::size_t>(rng.uniform_int(n));
        std::size_t j = static_cast<std::size_t>(rng.uniform_int(n - 1));
        if (j >= i) ++j;
        const double angle = (2.0 * rng.uniform() - 1.0) * max_angle;
        const double c = std::cos(angle);
        const double s = std::sin(angle);
        // rot <- G(i, j, angle) * rot, touching rows i and j only.
        for (std::size_t col = 0; col < n; ++col) {
          const double ri = rot.at(i, col);
          const double rj = rot.at(j, col);
          rot.at(i, col) = c * ri - s * rj;
          rot.at(j, col) = s * ri + c * rj;
        }
      }
      const double scale = 1.0 + p.scale_spread * (2.0 * rng.uniform() - 1.0);
      for (double& v : rot.values) v *= scale;
      spec.transform = std::move(rot);
      for (double& v : spec.offset) v = p.shift * rng.normal();
    }
    specs.push_back(std::move(spec));
  }
  return specs;
}

void inflate_noise(std::vector<Sample>& samples, const DomainSpec& spec,
                   double noise_factor, std::uint64_t seed,
                   std::uint64_t stream_a, std::uint64_t stream_b) {
  if (noise_factor < 1.0)
    throw std::invalid_argument("inflate_noise: factor must be >= 1");
  // Adding transform * N(0, sigma^2 (f^2 - 1)) on top of the base draw makes
  // the total generation-level noise sigma * f.
  const double extra =
      spec.noise_sigma * std::sqrt(noise_factor * noise_factor - 1.0);
  if (extra == 0.0) return;
  Rng rng(seed, StreamPurpose::kOutlier, stream_a, stream_b);
  Vec eps(spec.offset.size());
  for (Sample& s : samples) {
    for (double& e : eps) e = extra * rng.normal();
    s.x = vec_add(s.x, matvec(spec.transform, eps));
  }
}

}  // namespace feddap
