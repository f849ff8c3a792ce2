#include "feddap/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>

#include "feddap/rng.hpp"

namespace feddap {

namespace {

// Activations per layer for one sample: hidden[l] is the post-nonlinearity
// output of extractor layer l (the last layer is affine-only, so
// hidden.back() is the feature vector z).
struct ForwardCache {
  std::vector<Vec> hidden;
};

ForwardCache forward_cached(const ModelParams& params, const Vec& x) {
  ForwardCache cache;
  cache.hidden.reserve(params.extractor.size());
  const Vec* in = &x;
  for (std::size_t l = 0; l < params.extractor.size(); ++l) {
    Vec a = vec_add(matvec(params.extractor[l].weight, *in),
                    params.extractor[l].bias);
    if (l + 1 < params.extractor.size())
      for (double& v : a) v = std::tanh(v);
    cache.hidden.push_back(std::move(a));
    in = &cache.hidden.back();
  }
  return cache;
}

struct CosGrad {
  double value = 0.0;
  Vec grad;  // d cos / d u
};

// Gradient of cos(u, p) w.r.t. u. Zero-norm inputs use the cosine(.) = 0
// convention with a zero (sub)gradient.
CosGrad cosine_with_grad(const Vec& u, const Vec& p) {
  CosGrad out;
  out.grad.assign(u.size(), 0.0);
  const double nu = norm(u);
  const double np = norm(p);
  if (nu == 0.0 || np == 0.0) return out;
  const double c = std::clamp(dot(u, p) / (nu * np), -1.0, 1.0);
  out.value = c;
  for (std::size_t i = 0; i < u.size(); ++i)
    out.grad[i] = (p[i] / np - c * u[i] / nu) / nu;
  return out;
}

void check_finite_block(const Mat& m, const std::string& name) {
  if (!all_finite(m))
    throw std::runtime_error("backward: non-finite gradient in " + name);
}

void check_finite_block(const Vec& v, const std::string& name) {
  if (!all_finite(v))
    throw std::runtime_error("backward: non-finite gradient in " + name);
}

// Per-sample CPCL pieces shared by the loss and the gradient path.
struct CpclTerms {
  double loss = 0.0;
  bool flagged = false;
  // One entry per participating prototype: dL/dcos coefficient and dcos/dz.
  std::vector<std::pair<double, Vec>> coeffs;
};

CpclTerms cpcl_terms(const Vec& z, int y, int domain,
                     const PrototypeTable& protos, double tau,
                     bool negatives_include_own_domain, bool want_grad) {
  CpclTerms out;
  if (!(tau > 0.0)) throw std::invalid_argument("loss_cpcl: tau must be > 0");

  std::vector<const Vec*> pos, neg;
  for (int d = 0; d < static_cast<int>(protos.domains()); ++d) {
    for (int c = 0; c < static_cast<int>(protos.classes()); ++c) {
      if (!protos.has(c, d)) continue;
      if (d != domain && c == y) pos.push_back(&protos.at(c, d));
      else if (d != domain && c != y) neg.push_back(&protos.at(c, d));
      else if (d == domain && c != y && negatives_include_own_domain)
        neg.push_back(&protos.at(c, d));
    }
  }
  if (pos.empty()) {
    out.flagged = true;
    return out;
  }

  struct Scored {
    double t;  // cos / tau
    bool positive;
    Vec grad;  // d cos / d z, kept only when want_grad
  };
  std::vector<Scored> scored;
  scored.reserve(pos.size() + neg.size());
  double max_t = -std::numeric_limits<double>::infinity();
  auto add = [&](const Vec* p, bool positive) {
    Scored s;
    s.positive = positive;
    if (want_grad) {
      CosGrad cg = cosine_with_grad(z, *p);
      s.t = cg.value / tau;
      s.grad = std::move(cg.grad);
    } else {
      s.t = cosine(z, *p) / tau;
    }
    max_t = std::max(max_t, s.t);
    scored.push_back(std::move(s));
  };
  for (const Vec* p : pos) add(p, true);
  for (const Vec* p : neg) add(p, false);

  double sum_pos = 0.0, sum_all = 0.0;
  std::vector<double> w(scored.size());
  for (std::size_t i = 0; i < scored.size(); ++i) {
    w[i] = std::exp(scored[i].t - max_t);
    sum_all += w[i];
    if (scored[i].positive) sum_pos += w[i];
  }
  out.loss = std::log(sum_all) - std::log(sum_pos);

  if (want_grad) {
    out.coeffs.reserve(scored.size());
    for (std::size_t i = 0; i < scored.size(); ++i) {
      const double dc = (w[i] / sum_all -
                         (scored[i].positive ? w[i] / sum_pos : 0.0)) /
                        tau;
      out.coeffs.emplace_back(dc, std::move(scored[i].grad));
    }
  }
  return out;
}

}  // namespace

Vec forward_features(const ModelParams& params, const Vec& x) {
  if (params.extractor.empty())
    throw std::invalid_argument("forward_features: empty extractor");
  if (x.size() != params.input_dim())
    throw std::invalid_argument("forward_features: input dimension mismatch");
  return forward_cached(params, x).hidden.back();
}

Vec forward_logits(const ModelParams& params, const Vec& z) {
  return vec_add(matvec(params.classifier.weight, z), params.classifier.bias);
}

double loss_ce(const Vec& logits, int y) {
  if (y < 0 || static_cast<std::size_t>(y) >= logits.size())
    throw std::invalid_argument("loss_ce: label out of range");
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double s : logits) sum += std::exp(s - m);
  return std::log(sum) - (logits[static_cast<std::size_t>(y)] - m);
}

double loss_dpa(const std::vector<std::pair<Vec, int>>& features,
                const PrototypeTable& protos, int domain,
                const LossOptions& opt, int* contributing) {
  if (contributing) *contributing = 0;
  if (protos.empty()) return 0.0;

  double sum = 0.0;
  std::size_t terms = 0;
  std::map<int, std::vector<const Vec*>> by_class;
  for (const auto& [z, y] : features) by_class[y].push_back(&z);

  int classes = 0;
  for (const auto& [cls, zs] : by_class) {
    if (!protos.has(cls, domain)) continue;
    const Vec& proto = protos.at(cls, domain);
    ++classes;
    if (opt.dpa_per_sample) {
      for (const Vec* z : zs) {
        sum += 1.0 - cosine(*z, proto);
        ++terms;
      }
    } else {
      std::vector<Vec> copies;
      copies.reserve(zs.size());
      for (const Vec* z : zs) copies.push_back(*z);
      sum += 1.0 - cosine(vec_mean(copies), proto);
      ++terms;
    }
  }
  if (contributing) *contributing = classes;
  if (terms == 0) return 0.0;
  return opt.dpa_normalize ? sum / static_cast<double>(terms) : sum;
}

double loss_cpcl(const Vec& z, int y, int domain, const PrototypeTable& protos,
                 double tau_cross, bool negatives_include_own_domain,
                 bool* flagged) {
  CpclTerms t = cpcl_terms(z, y, domain, protos, tau_cross,
                           negatives_include_own_domain, /*want_grad=*/false);
  if (flagged) *flagged = t.flagged;
  return t.loss;
}

LossBreakdown loss_total(const ModelParams& params, const BatchView& batch,
                         const PrototypeTable& protos, int domain,
                         const LossOptions& opt) {
  if (batch.empty()) throw std::invalid_argument("loss_total: empty batch");
  const double inv_b = 1.0 / static_cast<double>(batch.size());

  LossBreakdown out;
  out.lambda1 = opt.lambda1;
  out.lambda2 = opt.lambda2;

  std::vector<std::pair<Vec, int>> features;
  features.reserve(batch.size());
  for (const Sample* s : batch) {
    Vec z = forward_features(params, s->x);
    out.ce += loss_ce(forward_logits(params, z), s->y) * inv_b;
    if (!protos.empty())
      out.cpcl += loss_cpcl(z, s->y, domain, protos, opt.tau_cross,
                         opt.negatives_include_own_domain) *
               inv_b;
    features.emplace_back(std::move(z), s->y);
  }
  out.dpa = loss_dpa(features, protos, domain, opt);
  out.total = out.ce + opt.lambda1 * out.dpa + opt.lambda2 * out.cpcl;
  return out;
}

BackwardResult backward(const ModelParams& params, const BatchView& batch,
                        const PrototypeTable& protos, int domain,
                        const LossOptions& opt) {
  if (batch.empty()) throw std::invalid_argument("backward: empty batch");
  const std::size_t B = batch.size();
  const double inv_b = 1.0 / static_cast<double>(B);
  const std::size_t layers = params.extractor.size();

  BackwardResult result;
  result.grads = zero_like(params);
  result.loss.lambda1 = opt.lambda1;
  result.loss.lambda2 = opt.lambda2;

  std::vector<ForwardCache> caches;
  caches.reserve(B);
  std::vector<Vec> dz(B);  // accumulated dL/dz per sample

  // CE: value, classifier gradients, and the feature-path contribution.
  for (std::size_t i = 0; i < B; ++i) {
    const Sample& s = *batch[i];
    caches.push_back(forward_cached(params, s.x));
    const Vec& z = caches[i].hidden.back();
    Vec logits = forward_logits(params, z);
    result.loss.ce += loss_ce(logits, s.y) * inv_b;

    const double m = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double v : logits) sum += std::exp(v - m);
    Vec ds(logits.size());
    for (std::size_t c = 0; c < logits.size(); ++c)
      ds[c] = std::exp(logits[c] - m) / sum;
    ds[static_cast<std::size_t>(s.y)] -= 1.0;

    for (std::size_t c = 0; c < ds.size(); ++c) {
      const double g = ds[c] * inv_b;
      result.grads.classifier.bias[c] += g;
      for (std::size_t k = 0; k < z.size(); ++k)
        result.grads.classifier.weight.at(c, k) += g * z[k];
    }
    dz[i].assign(z.size(), 0.0);
    for (std::size_t c = 0; c < ds.size(); ++c) {
      const double g = ds[c] * inv_b;
      for (std::size_t k = 0; k < z.size(); ++k)
        dz[i][k] += g * params.classifier.weight.at(c, k);
    }
  }

  // DPA: loss value always (for the breakdown), gradient only when weighted.
  {
    std::vector<std::pair<Vec, int>> features;
    features.reserve(B);
    for (std::size_t i = 0; i < B; ++i)
      features.emplace_back(caches[i].hidden.back(), batch[i]->y);
    result.loss.dpa =
        loss_dpa(features, protos, domain, opt, &result.dpa_contributing);

    if (opt.lambda1 != 0.0 && !protos.empty()) {
      std::map<int, std::vector<std::size_t>> by_class;
      for (std::size_t i = 0; i < B; ++i) by_class[batch[i]->y].push_back(i);

      std::size_t terms = 0;
      if (opt.dpa_per_sample) {
        for (const auto& [cls, idx] : by_class)
          if (protos.has(cls, domain)) terms += idx.size();
      } else {
        for (const auto& [cls, idx] : by_class) {
          (void)idx;
          if (protos.has(cls, domain)) ++terms;
        }
      }
      if (terms > 0) {
        const double scale =
            opt.lambda1 /
            (opt.dpa_normalize ? static_cast<double>(terms) : 1.0);
        for (const auto& [cls, idx] : by_class) {
          if (!protos.has(cls, domain)) continue;
          const Vec& proto = protos.at(cls, domain);
          if (opt.dpa_per_sample) {
            for (std::size_t i : idx) {
              CosGrad cg = cosine_with_grad(caches[i].hidden.back(), proto);
              for (std::size_t k = 0; k < dz[i].size(); ++k)
                dz[i][k] -= scale * cg.grad[k];
            }
          } else {
            std::vector<Vec> zs;
            zs.reserve(idx.size());
            for (std::size_t i : idx) zs.push_back(caches[i].hidden.back());
            CosGrad cg = cosine_with_grad(vec_mean(zs), proto);
            const double member = scale / static_cast<double>(idx.size());
            for (std::size_t i : idx)
              for (std::size_t k = 0; k < dz[i].size(); ++k)
                dz[i][k] -= member * cg.grad[k];
          }
        }
      }
    }
  }

  // CPCL: per-sample value plus the contrastive pull/push on z.
  if (!protos.empty()) {
    for (std::size_t i = 0; i < B; ++i) {
      const Vec& z = caches[i].hidden.back();
      const bool want_grad = opt.lambda2 != 0.0;
      CpclTerms t =
          cpcl_terms(z, batch[i]->y, domain, protos, opt.tau_cross,
                     opt.negatives_include_own_domain, want_grad);
      if (t.flagged) ++result.cpcl_flagged;
      result.loss.cpcl += t.loss * inv_b;
      if (want_grad && !t.flagged) {
        const double scale = opt.lambda2 * inv_b;
        for (const auto& [coeff, grad] : t.coeffs)
          for (std::size_t k = 0; k < dz[i].size(); ++k)
            dz[i][k] += scale * coeff * grad[k];
      }
    }
  }

  result.loss.total = result.loss.ce + opt.lambda1 * result.loss.dpa +
                      opt.lambda2 * result.loss.cpcl;

  // Backpropagate dz through the extractor, sample by sample.
  for (std::size_t i = 0; i < B; ++i) {
    Vec delta = std::move(dz[i]);
    for (std::size_t l = layers; l-- > 0;) {
      const Vec& below =
          l == 0 ? batch[i]->x : caches[i].hidden[l - 1];
      Mat& dw = result.grads.extractor[l].weight;
      Vec& db = result.grads.extractor[l].bias;
      for (std::size_t r = 0; r < delta.size(); ++r) {
        db[r] += delta[r];
        for (std::size_t c = 0; c < below.size(); ++c)
          dw.at(r, c) += delta[r] * below[c];
      }
      if (l > 0) {
        const Mat& w = params.extractor[l].weight;
        Vec next(below.size(), 0.0);
        for (std::size_t r = 0; r < delta.size(); ++r)
          for (std::size_t c = 0; c < below.size(); ++c)
            next[c] += delta[r] * w.at(r, c);
        // tanh' through the post-activation value of the layer below.
        for (std::size_t c = 0; c < next.size(); ++c)
          next[c] *= 1.0 - below[c] * below[c];
        delta = std::move(next);
      }
    }
  }

  for (std::size_t l = 0; l < layers; ++l) {
    check_finite_block(result.grads.extractor[l].weight,
                       "extractor[" + std::to_string(l) + "].weight");
    check_finite_block(result.grads.extractor[l].bias,
                       "extractor[" + std::to_string(l) + "].bias");
  }
  check_finite_block(result.grads.classifier.weight, "classifier.weight");
  check_finite_block(result.grads.classifier.bias, "classifier.bias");
  return result;
}

ModelParams sgd_step(const ModelParams& params, const Gradients& grads,
                     double lr) {
  if (grads.extractor.size() != params.extractor.size())
    throw std::invalid_argument("sgd_step: gradient shape mismatch");
  ModelParams out = params;
  auto apply = [lr](LayerParams& p, const LayerParams& g) {
    if (p.weight.values.size() != g.weight.values.size() ||
        p.bias.size() != g.bias.size())
      throw std::invalid_argument("sgd_step: gradient shape mismatch");
    for (std::size_t i = 0; i < p.weight.values.size(); ++i)
      p.weight.values[i] -= lr * g.weight.values[i];
    for (std::size_t i = 0; i < p.bias.size(); ++i)
      p.bias[i] -= lr * g.bias[i];
  };
  for (std::size_t l = 0; l < out.extractor.size(); ++l)
    apply(out.extractor[l], grads.extractor[l]);
  apply(out.classifier, grads.classifier);
  return out;
}

ModelParams init_params(const std::vector<std::size_t>& dims,
                        std::size_t num_classes, std::uint64_t seed) {
  if (dims.size() < 2)
    throw std::invalid_argument("init_params: need at least input and feature dims");
  if (num_classes < 2)
    throw std::invalid_argument("init_params: need at least 2 classes");

  ModelParams params;
  auto init_layer = [&](std::size_t rows, std::size_t cols,
                        std::uint64_t stream) {
    LayerParams layer;
    layer.weight = Mat(rows, cols);
    layer.bias.assign(rows, 0.0);
    Rng rng(seed, StreamPurpose::kInit, stream);
    const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
    for (double& v : layer.weight.values)
      v = bound * (2.0 * rng.uniform() - 1.0);
    return layer;
  };
  for (std::size_t l = 0; l + 1 < dims.size(); ++l)
    params.extractor.push_back(init_layer(dims[l + 1], dims[l], l));
  params.classifier = init_layer(num_classes, dims.back(), dims.size());
  return params;
}

Gradients zero_like(const ModelParams& params) {
  Gradients g;
  for (const LayerParams& l : params.extractor) {
    LayerParams z;
    z.weight = Mat(l.weight.rows, l.weight.cols);
    z.bias.assign(l.bias.size(), 0.0);
    g.extractor.push_back(std::move(z));
  }
  g.classifier.weight = Mat(params.classifier.weight.rows,
                            params.classifier.weight.cols);
  g.classifier.bias.assign(params.classifier.bias.size(), 0.0);
  return g;
}

}  // namespace feddap
