#include "cno/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace cno {

double relative_l1(std::span<const float> pred, std::span<const float> truth) {
  require(pred.size() == truth.size(), ErrorKind::shape, "relative_l1: size mismatch");
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    num += std::abs(static_cast<double>(pred[k]) - truth[k]);
    den += std::abs(static_cast<double>(truth[k]));
  }
  require(den > 0.0, ErrorKind::numeric, "relative_l1: reference has zero L1 norm");
  return num / den;
}

std::vector<double> per_sample_relative_l1(const Tensor<float>& pred, const Tensor<float>& truth) {
  require(pred.shape() == truth.shape(), ErrorKind::shape,
          "relative_l1: " + pred.shape().str() + " vs " + truth.shape().str());
  const Shape& s = pred.shape();
  const std::size_t len = s.c * s.plane();
  std::vector<double> out(s.n);
  for (std::size_t n = 0; n < s.n; ++n)
    out[n] = relative_l1({pred.sample(n), len}, {truth.sample(n), len});
  return out;
}

double median(std::vector<double> values) {
  require(!values.empty(), ErrorKind::parameter, "median of an empty set");
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  const double hi = values[mid];
  if (values.size() % 2) return hi;
  return 0.5 * (*std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid)) + hi);
}

}  // namespace cno
