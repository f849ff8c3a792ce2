#include "feddap/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace feddap {

Mat Mat::identity(std::size_t n) {
  Mat m(n, n);
  for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
  return m;
}

double dot(const Vec& a, const Vec& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("dot: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(const Vec& a) { return std::sqrt(dot(a, a)); }

double cosine(const Vec& a, const Vec& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("cosine: dimension mismatch");
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  const double c = dot(a, b) / (na * nb);
  return std::clamp(c, -1.0, 1.0);
}

std::vector<double> softmax_temp(const std::vector<double>& scores,
                                 double tau) {
  if (scores.empty()) throw std::invalid_argument("softmax_temp: empty input");
  if (!(tau > 0.0)) throw std::invalid_argument("softmax_temp: tau must be > 0");
  const double m = *std::max_element(scores.begin(), scores.end());
  std::vector<double> out(scores.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out[i] = std::exp((scores[i] - m) / tau);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

Vec matvec(const Mat& m, const Vec& v) {
  if (m.cols != v.size())
    throw std::invalid_argument("matvec: dimension mismatch");
  Vec out(m.rows, 0.0);
  for (std::size_t r = 0; r < m.rows; ++r) {
    double s = 0.0;
    const double* row = m.values.data() + r * m.cols;
    for (std::size_t c = 0; c < m.cols; ++c) s += row[c] * v[c];
    out[r] = s;
  }
  return out;
}

Vec vec_add(const Vec& a, const Vec& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("vec_add: dimension mismatch");
  Vec out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

Vec vec_sub(const Vec& a, const Vec& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("vec_sub: dimension mismatch");
  Vec out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

Vec vec_scale(const Vec& a, double k) {
  Vec out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * k;
  return out;
}

Vec vec_mean(const std::vector<Vec>& vs) {
  if (vs.empty()) throw std::invalid_argument("vec_mean: empty list");
  Vec out(vs.front().size(), 0.0);
  for (const Vec& v : vs) {
    if (v.size() != out.size())
      throw std::invalid_argument("vec_mean: dimension mismatch");
    for (std::size_t i = 0; i < v.size(); ++i) out[i] += v[i];
  }
  const double inv = 1.0 / static_cast<double>(vs.size());
  for (double& x : out) x *= inv;
  return out;
}

bool all_finite(const Vec& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

bool all_finite(const Mat& m) {
  for (double x : m.values)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace feddap
