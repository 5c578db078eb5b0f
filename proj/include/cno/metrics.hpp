#pragma once

#include <span>
#include <vector>

#include "cno/tensor.hpp"

namespace cno {

/// ‖pred − truth‖₁ / ‖truth‖₁. Throws a numeric error when ‖truth‖₁ = 0.
double relative_l1(std::span<const float> pred, std::span<const float> truth);

/// One relative L1 error per sample (over all channels of that sample).
std::vector<double> per_sample_relative_l1(const Tensor<float>& pred, const Tensor<float>& truth);

/// Middle value, or the mean of the two middle values for an even count.
double median(std::vector<double> values);

}  // namespace cno
