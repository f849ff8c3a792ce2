#pragma once

#include <cstddef>
#include <vector>

namespace feddap {

/// Feature vector. All public operations keep entries finite.
using Vec = std::vector<double>;

/// Dense row-major matrix.
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), values(r * c, fill) {}

  double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }

  static Mat identity(std::size_t n);
};

double dot(const Vec& a, const Vec& b);
double norm(const Vec& a);

/// Cosine similarity, clamped to [-1, 1] against rounding. A zero-norm input
/// yields 0.0 rather than NaN.
double cosine(const Vec& a, const Vec& b);

/// Temperature softmax exp(s_j / tau) / sum_l exp(s_l / tau), computed with
/// max-subtraction. Throws on empty input or tau <= 0.
std::vector<double> softmax_temp(const std::vector<double>& scores, double tau);

Vec matvec(const Mat& m, const Vec& v);
Vec vec_add(const Vec& a, const Vec& b);
Vec vec_sub(const Vec& a, const Vec& b);
Vec vec_scale(const Vec& a, double k);

/// Arithmetic mean of a nonempty list of equal-length vectors.
Vec vec_mean(const std::vector<Vec>& vs);

bool all_finite(const Vec& v);
bool all_finite(const Mat& m);

}  // namespace feddap
