#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "feddap/data.hpp"
#include "feddap/numerics.hpp"
#include "feddap/prototypes.hpp"

namespace feddap {

struct LayerParams {
  Mat weight;
  Vec bias;
};

/// The shared client architecture: a small multilayer extractor (tanh
/// between layers, affine-only final layer) and a linear classifier.
struct ModelParams {
  std::vector<LayerParams> extractor;
  LayerParams classifier;  // C x I weight, C bias

  std::size_t input_dim() const { return extractor.front().weight.cols; }
  std::size_t feature_dim() const { return extractor.back().weight.rows; }
  std::size_t num_classes() const { return classifier.weight.rows; }
};

/// Same shape as the ModelParams they differentiate.
using Gradients = ModelParams;

struct LossBreakdown {
  double ce = 0.0;
  double dpa = 0.0;
  double cpcl = 0.0;
  double total = 0.0;
  double lambda1 = 0.0;
  double lambda2 = 0.0;
};

/// Loss-shape knobs. lambda1/lambda2 of 0 drop the corresponding gradient
/// path entirely, which is what makes the FedAvg reduction bit-exact.
struct LossOptions {
  double lambda1 = 10.0;
  double lambda2 = 1.0;
  double tau_cross = 0.07;
  bool dpa_normalize = true;
  bool dpa_per_sample = false;
  bool negatives_include_own_domain = false;
};

using BatchView = std::vector<const Sample*>;

Vec forward_features(const ModelParams& params, const Vec& x);
Vec forward_logits(const ModelParams& params, const Vec& z);

/// Softmax cross-entropy of logits against a one-hot label, max-subtracted.
double loss_ce(const Vec& logits, int y);

/// Intra-domain alignment: 1 - cos between each contributing class's batch
/// mean feature and its own-domain prototype, averaged over contributing
/// classes (or summed when dpa_normalize is off). Classes missing on either
/// side contribute nothing. With dpa_per_sample, every sample aligns
/// individually instead of through the class mean.
double loss_dpa(const std::vector<std::pair<Vec, int>>& features,
                const PrototypeTable& protos, int domain,
                const LossOptions& opt, int* contributing = nullptr);

/// Cross-domain contrastive term for one sample. Positives are same-class
/// prototypes of other domains; negatives other-class prototypes of other
/// domains (optionally also of the own domain). An empty positive set
/// contributes 0 and sets *flagged.
double loss_cpcl(const Vec& z, int y, int domain, const PrototypeTable& protos,
                 double tau_cross, bool negatives_include_own_domain = false,
                 bool* flagged = nullptr);

/// ce + lambda1 * dpa + lambda2 * cpcl; ce and cpcl averaged over the batch.
LossBreakdown loss_total(const ModelParams& params, const BatchView& batch,
                         const PrototypeTable& protos, int domain,
                         const LossOptions& opt);

struct BackwardResult {
  LossBreakdown loss;
  Gradients grads;
  int dpa_contributing = 0;    // classes that entered the DPA term
  int cpcl_flagged = 0;        // samples with an empty positive set
};

/// Analytic gradients of loss_total. Prototypes are constants; all three
/// losses flow through the features into the extractor, CE alone reaches the
/// classifier. Throws if any gradient entry is non-finite, naming the block.
BackwardResult backward(const ModelParams& params, const BatchView& batch,
                        const PrototypeTable& protos, int domain,
                        const LossOptions& opt);

/// p <- p - lr * g, value-semantic.
ModelParams sgd_step(const ModelParams& params, const Gradients& grads,
                     double lr);

/// Scaled-uniform fan-in init: weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
/// zero biases. dims = {input, hidden..., feature}.
ModelParams init_params(const std::vector<std::size_t>& dims,
                        std::size_t num_classes, std::uint64_t seed);

Gradients zero_like(const ModelParams& params);

}  // namespace feddap
