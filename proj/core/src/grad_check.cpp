#include "feddap/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "feddap/model.hpp"
#include "feddap/prototypes.hpp"
#include "feddap/rng.hpp"

namespace feddap {

namespace {

struct Instance {
  ModelParams params;
  std::vector<Sample> samples;
  PrototypeTable table;
  int domain = 0;
  LossOptions opt;
};

Instance make_instance(std::size_t i, std::uint64_t seed) {
  // Deliberately small: feature dim 4, 3 classes, 2 domains, batch of 5.
  constexpr std::size_t kRaw = 5, kHidden = 6, kFeature = 4;
  constexpr int kClasses = 3, kDomains = 2, kBatch = 5;

  Instance inst;
  inst.params = init_params({kRaw, kHidden, kFeature}, kClasses, seed + i);

  Rng rng(seed, StreamPurpose::kInit, 0xfd, i);
  inst.domain = static_cast<int>(rng.uniform_int(kDomains));

  inst.table = PrototypeTable(kDomains, kClasses, kFeature);
  for (int d = 0; d < kDomains; ++d) {
    for (int c = 0; c < kClasses; ++c) {
      if (rng.uniform() < 0.2) continue;  // leave some cells absent
      Vec v(kFeature);
      for (double& x : v) x = rng.normal();
      inst.table.set(c, d, std::move(v));
    }
  }
  if (inst.table.empty()) {
    Vec v(kFeature, 0.5);
    inst.table.set(0, 0, std::move(v));
  }

  inst.samples.resize(kBatch);
  for (Sample& s : inst.samples) {
    s.x.resize(kRaw);
    for (double& x : s.x) x = 1.5 * rng.normal();
    s.y = static_cast<int>(rng.uniform_int(kClasses));
    s.d = inst.domain;
  }

  inst.opt.lambda1 = 10.0;
  inst.opt.lambda2 = 1.0;
  inst.opt.tau_cross = 0.07;
  inst.opt.dpa_per_sample = (i & 1) != 0;
  inst.opt.dpa_normalize = (i & 2) == 0;
  inst.opt.negatives_include_own_domain = (i & 4) != 0;
  return inst;
}

std::vector<double*> param_ptrs(ModelParams& p) {
  std::vector<double*> out;
  for (LayerParams& l : p.extractor) {
    for (double& v : l.weight.values) out.push_back(&v);
    for (double& v : l.bias) out.push_back(&v);
  }
  for (double& v : p.classifier.weight.values) out.push_back(&v);
  for (double& v : p.classifier.bias) out.push_back(&v);
  return out;
}

std::vector<double> flatten(const Gradients& g) {
  std::vector<double> out;
  Gradients copy = g;
  for (double* p : param_ptrs(copy)) out.push_back(*p);
  return out;
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

}  // namespace

GradCheckReport check_gradients(std::size_t instances, double step,
                                double tolerance, std::uint64_t seed) {
  if (instances == 0)
    throw std::invalid_argument("check_gradients: need at least 1 instance");
  if (!(step > 0.0) || !(tolerance > 0.0))
    throw std::invalid_argument(
        "check_gradients: step and tolerance must be > 0");

  GradCheckReport report;
  report.instances = instances;
  report.step = step;
  report.tolerance = tolerance;
  report.terms = {{"ce", 0.0, 0}, {"dpa", 0.0, 0}, {"cpcl", 0.0, 0},
                  {"total", 0.0, 0}};

  for (std::size_t i = 0; i < instances; ++i) {
    Instance inst = make_instance(i, seed);
    BatchView batch;
    for (const Sample& s : inst.samples) batch.push_back(&s);

    // backward() is linear in the loss weights, so per-term analytic
    // gradients fall out of weight-selected runs.
    LossOptions base = inst.opt;
    auto with = [&base](double l1, double l2) {
      LossOptions o = base;
      o.lambda1 = l1;
      o.lambda2 = l2;
      return o;
    };
    const std::vector<double> g_ce = flatten(
        backward(inst.params, batch, inst.table, inst.domain, with(0, 0))
            .grads);
    const std::vector<double> g_ce_dpa = flatten(
        backward(inst.params, batch, inst.table, inst.domain, with(1, 0))
            .grads);
    const std::vector<double> g_ce_cpcl = flatten(
        backward(inst.params, batch, inst.table, inst.domain, with(0, 1))
            .grads);
    const std::vector<double> g_total = flatten(
        backward(inst.params, batch, inst.table, inst.domain, inst.opt)
            .grads);

    ModelParams probe = inst.params;
    std::vector<double*> ptrs = param_ptrs(probe);
    for (std::size_t k = 0; k < ptrs.size(); ++k) {
      const double saved = *ptrs[k];
      *ptrs[k] = saved + step;
      const LossBreakdown up =
          loss_total(probe, batch, inst.table, inst.domain, inst.opt);
      *ptrs[k] = saved - step;
      const LossBreakdown down =
          loss_total(probe, batch, inst.table, inst.domain, inst.opt);
      *ptrs[k] = saved;

      const double inv2h = 1.0 / (2.0 * step);
      const double fd_ce = (up.ce - down.ce) * inv2h;
      const double fd_dpa = (up.dpa - down.dpa) * inv2h;
      const double fd_cpcl = (up.cpcl - down.cpcl) * inv2h;
      const double fd_total = (up.total - down.total) * inv2h;

      auto note = [&](TermReport& term, double fd, double analytic) {
        term.max_rel_err = std::max(term.max_rel_err, rel_err(fd, analytic));
        term.comparisons += 1;
      };
      note(report.terms[0], fd_ce, g_ce[k]);
      note(report.terms[1], fd_dpa, g_ce_dpa[k] - g_ce[k]);
      note(report.terms[2], fd_cpcl, g_ce_cpcl[k] - g_ce[k]);
      note(report.terms[3], fd_total, g_total[k]);
    }
  }

  for (const TermReport& t : report.terms)
    report.max_rel_err = std::max(report.max_rel_err, t.max_rel_err);
  report.pass = report.max_rel_err < tolerance;
  return report;
}

std::string format_report(const GradCheckReport& report) {
  std::string out;
  char line[128];
  for (const TermReport& t : report.terms) {
    std::snprintf(line, sizeof(line),
                  "  %-5s max rel err %.3e over %zu comparisons\n",
                  t.term.c_str(), t.max_rel_err, t.comparisons);
    out += line;
  }
  std::snprintf(line, sizeof(line),
                "%zu instances, step %.1e: max rel err %.3e (tolerance %.1e) "
                "%s\n",
                report.instances, report.step, report.max_rel_err,
                report.tolerance, report.pass ? "PASS" : "FAIL");
  out += line;
  return out;
}

}  // namespace feddap
