#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "doctest.h"
#include "feddap/data.hpp"

using namespace feddap;

namespace {

std::vector<DomainSpec> tiny_domains() {
  DomainShiftParams p;
  p.domains = 3;
  p.classes = 4;
  p.raw_dim = 6;
  p.noise_sigma = 0.5;
  return make_shifted_domains(p, 42);
}

std::string temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "feddap_data_tests";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

}  // namespace

TEST_CASE("make_shifted_domains shares class means, domain 0 is the frame") {
  auto specs = tiny_domains();
  REQUIRE(specs.size() == 3);
  for (int d = 0; d < 3; ++d) {
    CHECK(specs[d].domain_id == d);
    REQUIRE(specs[d].class_means.size() == 4);
    CHECK(specs[d].class_means == specs[0].class_means);
    CHECK(specs[d].transform.rows == 6);
    CHECK(specs[d].transform.cols == 6);
    REQUIRE(specs[d].offset.size() == 6);
  }

  // Reference frame: identity transform, zero offset.
  Mat id = Mat::identity(6);
  CHECK(specs[0].transform.values == id.values);
  for (double v : specs[0].offset) CHECK(v == 0.0);

  // Shifted domains actually differ from the frame.
  CHECK(specs[1].transform.values != id.values);
  bool any_offset = false;
  for (double v : specs[1].offset) any_offset = any_offset || v != 0.0;
  CHECK(any_offset);
}

TEST_CASE("generate is deterministic and labels every sample") {
  auto specs = tiny_domains();
  auto a = generate(specs, 10, 7);
  auto b = generate(specs, 10, 7);
  CHECK(a == b);

  auto c = generate(specs, 10, 8);
  CHECK(a != c);

  REQUIRE(a.size() == 3u * 4u * 10u);
  std::map<std::pair<int, int>, int> counts;
  for (const auto& s : a) {
    REQUIRE(s.x.size() == 6);
    CHECK(s.y >= 0);
    CHECK(s.y < 4);
    CHECK(s.d >= 0);
    CHECK(s.d < 3);
    counts[{s.d, s.y}]++;
  }
  for (auto& [key, n] : counts) CHECK(n == 10);
  CHECK(counts.size() == 12);
}

TEST_CASE("domain transforms move the same class apart") {
  auto specs = tiny_domains();
  auto samples = generate(specs, 40, 7);

  // Mean of class 0 in domain 0 vs domain 1 should differ well beyond noise.
  Vec m0(6, 0.0), m1(6, 0.0);
  int n0 = 0, n1 = 0;
  for (const auto& s : samples) {
    if (s.y != 0) continue;
    if (s.d == 0) { m0 = vec_add(m0, s.x); n0++; }
    if (s.d == 1) { m1 = vec_add(m1, s.x); n1++; }
  }
  m0 = vec_scale(m0, 1.0 / n0);
  m1 = vec_scale(m1, 1.0 / n1);
  CHECK(norm(vec_sub(m0, m1)) > 0.5);
}

TEST_CASE("partition assigns every sample once and covers local classes") {
  auto specs = tiny_domains();
  auto samples = generate(specs, 12, 7);

  std::map<int, int> allocation{{0, 2}, {1, 3}, {2, 2}};
  auto clients = partition(samples, allocation, 5);
  REQUIRE(clients.size() == 7);

  // Ids ascend with domain blocks.
  int expected_id = 0;
  for (const auto& c : clients) {
    CHECK(c.client_id == expected_id++);
    for (const auto& s : c.samples) CHECK(s.d == c.domain_id);
  }
  CHECK(clients[0].domain_id == 0);
  CHECK(clients[2].domain_id == 1);
  CHECK(clients[5].domain_id == 2);

  std::size_t total = 0;
  for (const auto& c : clients) {
    total += c.samples.size();
    auto counts = c.class_counts();
    REQUIRE(counts.size() == 4);  // every class present on every client
    for (auto& [cls, n] : counts) CHECK(n >= 1);
  }
  CHECK(total == samples.size());

  // Deterministic under the same seed.
  auto again = partition(samples, allocation, 5);
  for (std::size_t i = 0; i < clients.size(); ++i)
    CHECK(clients[i].samples == again[i].samples);
}

TEST_CASE("train_test_split is stratified per class-domain cell") {
  auto specs = tiny_domains();
  auto samples = generate(specs, 20, 7);
  auto [train, test] = train_test_split(samples, 0.25, 11);

  CHECK(train.size() + test.size() == samples.size());

  std::map<std::pair<int, int>, int> test_counts;
  for (const auto& s : test) test_counts[{s.d, s.y}]++;
  REQUIRE(test_counts.size() == 12);
  for (auto& [key, n] : test_counts) CHECK(n == 5);  // round(0.25 * 20)

  // Disjoint: each original sample lands on exactly one side. Compare via
  // multiset-like sorted vectors of the x payloads.
  auto key = [](const Sample& s) { return std::make_tuple(s.d, s.y, s.x); };
  std::vector<std::tuple<int, int, Vec>> all, parts;
  for (const auto& s : samples) all.push_back(key(s));
  for (const auto& s : train) parts.push_back(key(s));
  for (const auto& s : test) parts.push_back(key(s));
  std::sort(all.begin(), all.end());
  std::sort(parts.begin(), parts.end());
  CHECK(all == parts);
}

TEST_CASE("csv round trip preserves samples exactly") {
  auto specs = tiny_domains();
  auto samples = generate(specs, 5, 7);
  auto path = temp_path("roundtrip.csv");
  write_csv(path, samples);
  auto loaded = load_csv(path);
  REQUIRE(loaded.size() == samples.size());
  // Bit-exact: the writer uses round-trip formatting.
  CHECK(loaded == samples);
  std::remove(path.c_str());
}

TEST_CASE("load_csv reports the offending row") {
  auto path = temp_path("bad.csv");
  {
    std::string text = "x0,x1,y,d\n1.0,2.0,0,0\n1.0,oops,1,0\n";
    FILE* f = std::fopen(path.c_str(), "wb");
    REQUIRE(f != nullptr);
    std::fwrite(text.data(), 1, text.size(), f);
    std::fclose(f);
  }
  CHECK_THROWS_WITH_AS(load_csv(path), doctest::Contains("row 3"),
                       std::runtime_error);
  std::remove(path.c_str());
}

TEST_CASE("load_csv on a missing file names the path") {
  CHECK_THROWS_WITH_AS(load_csv("/nonexistent/feddap.csv"),
                       doctest::Contains("/nonexistent/feddap.csv"),
                       std::runtime_error);
}

TEST_CASE("inflate_noise perturbs in-place, deterministically") {
  auto specs = tiny_domains();
  auto samples = generate(specs, 6, 7);
  std::vector<Sample> noisy = samples;
  inflate_noise(noisy, specs[0], 5.0, 3, 1, 0);

  REQUIRE(noisy.size() == samples.size());
  bool changed = false;
  for (std::size_t i = 0; i < noisy.size(); ++i) {
    CHECK(noisy[i].y == samples[i].y);
    CHECK(noisy[i].d == samples[i].d);
    changed = changed || noisy[i].x != samples[i].x;
  }
  CHECK(changed);

  std::vector<Sample> again = samples;
  inflate_noise(again, specs[0], 5.0, 3, 1, 0);
  CHECK(again == noisy);

  // Different stream coordinates give a different perturbation.
  std::vector<Sample> other = samples;
  inflate_noise(other, specs[0], 5.0, 3, 2, 0);
  CHECK(other != noisy);
}

TEST_CASE("class_counts tallies labels") {
  ClientDataset c;
  c.samples = {{{0.0}, 1, 0}, {{0.0}, 1, 0}, {{0.0}, 0, 0}};
  auto counts = c.class_counts();
  CHECK(counts.at(0) == 1);
  CHECK(counts.at(1) == 2);
}
