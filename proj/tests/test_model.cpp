#include <algorithm>
#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "doctest.h"
#include "feddap/model.hpp"
#include "feddap/numerics.hpp"
#include "feddap/prototypes.hpp"
#include "feddap/rng.hpp"

using namespace feddap;

namespace {

// Small fixed architecture used throughout: 3 -> 4 -> 2 features, 3 classes.
ModelParams small_model(std::uint64_t seed = 11) {
  return init_params({3, 4, 2}, 3, seed);
}

BatchView view_of(const std::vector<Sample>& samples) {
  BatchView v;
  for (const auto& s : samples) v.push_back(&s);
  return v;
}

std::vector<Sample> small_batch(std::uint64_t seed, int domain,
                                std::size_t n = 6) {
  Rng rng(seed, StreamPurpose::kDataGen, 77, 0);
  std::vector<Sample> batch(n);
  for (std::size_t i = 0; i < n; ++i) {
    batch[i].x = {rng.normal(), rng.normal(), rng.normal()};
    batch[i].y = static_cast<int>(rng.uniform_int(3));
    batch[i].d = domain;
  }
  return batch;
}

// Two domains, three classes, feature dim 2, with one absent cell so the
// missing-prototype paths get exercised.
PrototypeTable small_table(bool leave_gap = true) {
  PrototypeTable t(2, 3, 2);
  Rng rng(31, StreamPurpose::kDataGen, 5, 0);
  for (int d = 0; d < 2; ++d) {
    for (int c = 0; c < 3; ++c) {
      if (leave_gap && d == 1 && c == 2) continue;
      t.set(c, d, Vec{rng.normal(), rng.normal()});
    }
  }
  return t;
}

// Flat view over every trainable parameter for the finite-difference oracle.
std::vector<double*> param_refs(ModelParams& p) {
  std::vector<double*> refs;
  for (auto& layer : p.extractor) {
    for (auto& v : layer.weight.values) refs.push_back(&v);
    for (auto& v : layer.bias) refs.push_back(&v);
  }
  for (auto& v : p.classifier.weight.values) refs.push_back(&v);
  for (auto& v : p.classifier.bias) refs.push_back(&v);
  return refs;
}

std::vector<double> grad_flat(const Gradients& g) {
  Gradients copy = g;
  std::vector<double> out;
  for (double* v : param_refs(copy)) out.push_back(*v);
  return out;
}

}  // namespace

TEST_CASE("init_params shapes, bounds, determinism") {
  auto p = init_params({5, 7, 3}, 4, 9);
  REQUIRE(p.extractor.size() == 2);
  CHECK(p.extractor[0].weight.rows == 7);
  CHECK(p.extractor[0].weight.cols == 5);
  CHECK(p.extractor[1].weight.rows == 3);
  CHECK(p.extractor[1].weight.cols == 7);
  CHECK(p.classifier.weight.rows == 4);
  CHECK(p.classifier.weight.cols == 3);
  CHECK(p.input_dim() == 5);
  CHECK(p.feature_dim() == 3);
  CHECK(p.num_classes() == 4);

  for (double b : p.extractor[0].bias) CHECK(b == 0.0);
  for (double b : p.classifier.bias) CHECK(b == 0.0);

  double bound0 = 1.0 / std::sqrt(5.0);
  for (double w : p.extractor[0].weight.values) {
    CHECK(w >= -bound0);
    CHECK(w <= bound0);
  }

  auto q = init_params({5, 7, 3}, 4, 9);
  CHECK(p.extractor[0].weight.values == q.extractor[0].weight.values);
  auto r = init_params({5, 7, 3}, 4, 10);
  CHECK(p.extractor[0].weight.values != r.extractor[0].weight.values);
}

TEST_CASE("forward_features applies tanh between layers, affine at the end") {
  ModelParams p;
  p.extractor.resize(2);
  p.extractor[0].weight = Mat(2, 1);
  p.extractor[0].weight.at(0, 0) = 1.0;
  p.extractor[0].weight.at(1, 0) = -2.0;
  p.extractor[0].bias = {0.5, 0.0};
  p.extractor[1].weight = Mat(1, 2);
  p.extractor[1].weight.at(0, 0) = 3.0;
  p.extractor[1].weight.at(0, 1) = 1.0;
  p.extractor[1].bias = {-1.0};
  p.classifier.weight = Mat(2, 1, 1.0);
  p.classifier.bias = {0.0, 1.0};

  Vec z = forward_features(p, {2.0});
  REQUIRE(z.size() == 1);
  double h0 = std::tanh(2.5);
  double h1 = std::tanh(-4.0);
  // Final layer stays affine: values outside [-1, 1] must be possible.
  CHECK(z[0] == doctest::Approx(3.0 * h0 + h1 - 1.0).epsilon(1e-15));

  Vec logits = forward_logits(p, z);
  REQUIRE(logits.size() == 2);
  CHECK(logits[0] == doctest::Approx(z[0]));
  CHECK(logits[1] == doctest::Approx(z[0] + 1.0));
}

TEST_CASE("loss_ce against the closed form") {
  Vec logits{1.0, 2.0, 0.5};
  double z = std::exp(1.0) + std::exp(2.0) + std::exp(0.5);
  CHECK(loss_ce(logits, 1) ==
        doctest::Approx(-std::log(std::exp(2.0) / z)).epsilon(1e-12));

  // Max subtraction: giant logits stay finite.
  Vec huge{5000.0, 4999.0};
  double l = loss_ce(huge, 0);
  CHECK(std::isfinite(l));
  CHECK(l == doctest::Approx(std::log(1.0 + std::exp(-1.0))).epsilon(1e-12));
}

TEST_CASE("loss_dpa matches a hand computation on class means") {
  PrototypeTable t = small_table(false);
  std::vector<std::pair<Vec, int>> feats = {
      {{1.0, 0.0}, 0}, {{0.0, 1.0}, 0}, {{2.0, 2.0}, 1}};
  LossOptions opt;

  Vec mean0{0.5, 0.5};
  double expect = (1.0 - cosine(mean0, t.at(0, 0))) +
                  (1.0 - cosine(Vec{2.0, 2.0}, t.at(1, 0)));
  int contributing = 0;
  double got = loss_dpa(feats, t, 0, opt, &contributing);
  CHECK(contributing == 2);
  CHECK(got == doctest::Approx(expect / 2.0).epsilon(1e-12));

  // Without normalization the terms just sum.
  opt.dpa_normalize = false;
  CHECK(loss_dpa(feats, t, 0, opt) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("loss_dpa per-sample variant") {
  PrototypeTable t = small_table(false);
  std::vector<std::pair<Vec, int>> feats = {{{1.0, 0.0}, 0}, {{0.0, 1.0}, 0}};
  LossOptions opt;
  opt.dpa_per_sample = true;

  double expect = ((1.0 - cosine(Vec{1.0, 0.0}, t.at(0, 0))) +
                   (1.0 - cosine(Vec{0.0, 1.0}, t.at(0, 0)))) /
                  2.0;
  CHECK(loss_dpa(feats, t, 0, opt) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("loss_dpa skips absent prototypes and empty tables") {
  LossOptions opt;
  // Cell (class 2, domain 1) is absent in the gapped table.
  PrototypeTable t = small_table(true);
  std::vector<std::pair<Vec, int>> feats = {{{1.0, 1.0}, 2}};
  int contributing = -1;
  CHECK(loss_dpa(feats, t, 1, opt, &contributing) == 0.0);
  CHECK(contributing == 0);

  PrototypeTable empty;
  CHECK(loss_dpa(feats, empty, 0, opt) == 0.0);
}

TEST_CASE("loss_cpcl against an independent computation") {
  PrototypeTable t = small_table(false);
  Vec z{0.7, -0.3};
  const int y = 1, domain = 0;
  const double tau = 0.07;

  // Positives: class 1 in domain 1. Negatives: classes 0, 2 in domain 1.
  double pos = std::exp(cosine(z, t.at(1, 1)) / tau);
  double den = pos + std::exp(cosine(z, t.at(0, 1)) / tau) +
               std::exp(cosine(z, t.at(2, 1)) / tau);
  double expect = -std::log(pos / den);

  bool flagged = true;
  double got = loss_cpcl(z, y, domain, t, tau, false, &flagged);
  CHECK_FALSE(flagged);
  CHECK(got == doctest::Approx(expect).epsilon(1e-10));
}

TEST_CASE("loss_cpcl can include own-domain negatives") {
  PrototypeTable t = small_table(false);
  Vec z{0.7, -0.3};
  const double tau = 0.07;

  double pos = std::exp(cosine(z, t.at(1, 1)) / tau);
  double den = pos;
  for (int c = 0; c < 3; ++c) {
    if (c == 1) continue;
    den += std::exp(cosine(z, t.at(c, 1)) / tau);
    den += std::exp(cosine(z, t.at(c, 0)) / tau);  // own-domain negatives
  }
  double expect = -std::log(pos / den);
  CHECK(loss_cpcl(z, 1, 0, t, tau, true) ==
        doctest::Approx(expect).epsilon(1e-10));
}

TEST_CASE("loss_cpcl flags samples with no positives") {
  // Gapped table: class 2 exists only in domain 0, so a domain-0 sample of
  // class 2 has no cross-domain positive.
  PrototypeTable t = small_table(true);
  bool flagged = false;
  double l = loss_cpcl(Vec{1.0, 1.0}, 2, 0, t, 0.07, false, &flagged);
  CHECK(flagged);
  CHECK(l == 0.0);
}

TEST_CASE("loss_total composes the three terms") {
  auto p = small_model();
  auto batch = small_batch(3, 0);
  auto t = small_table(false);
  LossOptions opt;
  opt.lambda1 = 10.0;
  opt.lambda2 = 1.0;

  auto breakdown = loss_total(p, view_of(batch), t, 0, opt);
  CHECK(breakdown.total ==
        doctest::Approx(breakdown.ce + 10.0 * breakdown.dpa + breakdown.cpcl)
            .epsilon(1e-12));
  CHECK(breakdown.ce > 0.0);
  CHECK(breakdown.dpa > 0.0);
  CHECK(breakdown.cpcl > 0.0);

  // Against per-sample building blocks.
  double ce = 0.0;
  std::vector<std::pair<Vec, int>> feats;
  double cpcl = 0.0;
  for (const auto& s : batch) {
    Vec z = forward_features(p, s.x);
    ce += loss_ce(forward_logits(p, z), s.y);
    cpcl += loss_cpcl(z, s.y, s.d, t, opt.tau_cross);
    feats.push_back({z, s.y});
  }
  CHECK(breakdown.ce == doctest::Approx(ce / batch.size()).epsilon(1e-12));
  CHECK(breakdown.cpcl == doctest::Approx(cpcl / batch.size()).epsilon(1e-12));
  CHECK(breakdown.dpa ==
        doctest::Approx(loss_dpa(feats, t, 0, opt)).epsilon(1e-12));
}

TEST_CASE("backward matches central finite differences") {
  auto p = small_model();
  auto batch = small_batch(5, 1);
  auto t = small_table(true);  // keep an absent cell in the mix
  LossOptions opt;
  opt.lambda1 = 7.0;
  opt.lambda2 = 1.3;

  auto result = backward(p, view_of(batch), t, 1, opt);
  auto analytic = grad_flat(result.grads);

  const double h = 1e-6;
  auto refs = param_refs(p);
  REQUIRE(refs.size() == analytic.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    double saved = *refs[i];
    *refs[i] = saved + h;
    double up = loss_total(p, view_of(batch), t, 1, opt).total;
    *refs[i] = saved - h;
    double down = loss_total(p, view_of(batch), t, 1, opt).total;
    *refs[i] = saved;
    double fd = (up - down) / (2.0 * h);
    double err = std::abs(fd - analytic[i]) /
                 std::max({1.0, std::abs(fd), std::abs(analytic[i])});
    worst = std::max(worst, err);
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("lambda = 0 reproduces the pure-CE gradient bit for bit") {
  auto p = small_model();
  auto batch = small_batch(8, 0);
  auto t = small_table(false);

  LossOptions off;
  off.lambda1 = 0.0;
  off.lambda2 = 0.0;

  auto with_table = backward(p, view_of(batch), t, 0, off);
  auto no_table = backward(p, view_of(batch), PrototypeTable{}, 0, off);

  CHECK(grad_flat(with_table.grads) == grad_flat(no_table.grads));
  CHECK(with_table.loss.total == with_table.loss.ce);
}

TEST_CASE("backward on an empty table is CE-only") {
  auto p = small_model();
  auto batch = small_batch(4, 0);
  LossOptions opt;  // defaults: lambda1 = 10, lambda2 = 1

  auto r = backward(p, view_of(batch), PrototypeTable{}, 0, opt);
  CHECK(r.loss.dpa == 0.0);
  CHECK(r.loss.cpcl == 0.0);
  CHECK(r.loss.total == r.loss.ce);

  LossOptions off;
  off.lambda1 = 0.0;
  off.lambda2 = 0.0;
  auto ce_only = backward(p, view_of(batch), PrototypeTable{}, 0, off);
  CHECK(grad_flat(r.grads) == grad_flat(ce_only.grads));
}

TEST_CASE("classifier gradients come from CE alone") {
  auto p = small_model();
  auto batch = small_batch(12, 0);
  auto t = small_table(false);

  LossOptions ce_only;
  ce_only.lambda1 = 0.0;
  ce_only.lambda2 = 0.0;
  LossOptions full;
  full.lambda1 = 10.0;
  full.lambda2 = 1.0;

  auto a = backward(p, view_of(batch), t, 0, ce_only);
  auto b = backward(p, view_of(batch), t, 0, full);
  CHECK(a.grads.classifier.weight.values == b.grads.classifier.weight.values);
  CHECK(a.grads.classifier.bias == b.grads.classifier.bias);
  // Extractor gradients must differ once alignment is active.
  CHECK(a.grads.extractor[0].weight.values !=
        b.grads.extractor[0].weight.values);
}

TEST_CASE("backward counts flagged samples and contributing classes") {
  auto p = small_model();
  // All samples class 2 in domain 1: its cell is absent in the gapped table,
  // its only prototype lives in domain 0.
  std::vector<Sample> batch = small_batch(6, 1, 4);
  for (auto& s : batch) s.y = 2;
  auto t = small_table(true);

  LossOptions opt;
  auto r = backward(p, view_of(batch), t, 1, opt);
  CHECK(r.dpa_contributing == 0);  // no (class 2, domain 1) prototype
  CHECK(r.cpcl_flagged == 0);      // positive exists in domain 0

  // Flip perspective: domain 0 samples of class 2 have no cross positives.
  for (auto& s : batch) s.d = 0;
  auto r2 = backward(p, view_of(batch), t, 0, opt);
  CHECK(r2.cpcl_flagged == 4);
  CHECK(r2.dpa_contributing == 1);
}

TEST_CASE("sgd_step applies p - lr * g") {
  auto p = small_model();
  auto r = backward(p, view_of(small_batch(2, 0)), PrototypeTable{}, 0,
                    LossOptions{});
  auto next = sgd_step(p, r.grads, 0.5);

  CHECK(next.extractor[0].weight.at(0, 0) ==
        doctest::Approx(p.extractor[0].weight.at(0, 0) -
                        0.5 * r.grads.extractor[0].weight.at(0, 0)));
  // lr = 0 is an exact no-op.
  auto frozen = sgd_step(p, r.grads, 0.0);
  CHECK(frozen.extractor[0].weight.values == p.extractor[0].weight.values);
  CHECK(frozen.classifier.weight.values == p.classifier.weight.values);
}

TEST_CASE("zero_like mirrors the shape with zero entries") {
  auto p = small_model();
  auto z = zero_like(p);
  REQUIRE(z.extractor.size() == p.extractor.size());
  CHECK(z.extractor[0].weight.rows == p.extractor[0].weight.rows);
  for (double v : z.extractor[0].weight.values) CHECK(v == 0.0);
  for (double v : z.classifier.bias) CHECK(v == 0.0);
}
