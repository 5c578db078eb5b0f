#pragma once

#include <complex>
#include <functional>
#include <span>
#include <vector>

#include "cno/tensor.hpp"

namespace cno {

/// How a field is extended outside the unit square.
enum class Boundary { periodic, zero };

/// Multi-channel real field on the uniform s×s grid of the unit torus.
/// Node (i, j) sits at (x, y) = (i/s, j/s); `i` runs along x.
class GridFunction {
 public:
  GridFunction() = default;
  GridFunction(int channels, int resolution, Boundary boundary = Boundary::periodic);
  /// Wraps a (1, channels, s, s) tensor. Throws if non-finite or not square.
  explicit GridFunction(Tensor<double> values, Boundary boundary = Boundary::periodic);

  /// Samples `fn(c, x, y)` on the grid.
  static GridFunction sample(int channels, int resolution,
                             const std::function<double(int, double, double)>& fn);

  int channels() const { return static_cast<int>(values_.shape().c); }
  int resolution() const { return static_cast<int>(values_.shape().h); }
  Boundary boundary() const { return boundary_; }

  double& at(int c, int i, int j) { return values_(0, c, i, j); }
  double at(int c, int i, int j) const { return values_(0, c, i, j); }
  std::span<double> channel(int c) { return {values_.plane(0, c), values_.shape().plane()}; }
  std::span<const double> channel(int c) const { return {values_.plane(0, c), values_.shape().plane()}; }

  const Tensor<double>& tensor() const { return values_; }
  Tensor<double>& tensor() { return values_; }

  double l2_norm() const;
  bool all_finite() const { return values_.all_finite(); }

 private:
  Tensor<double> values_;
  Boundary boundary_ = Boundary::periodic;
};

/// Full complex 2D DFT per channel; forward unnormalized, inverse divides by s².
struct SpectrumGrid {
  int channels = 0;
  int resolution = 0;
  std::vector<std::complex<double>> coefficients;  // (channels, s, s)

  std::complex<double>& at(int c, int kx, int ky) {
    return coefficients[(static_cast<std::size_t>(c) * resolution + kx) * resolution + ky];
  }
  std::complex<double> at(int c, int kx, int ky) const {
    return coefficients[(static_cast<std::size_t>(c) * resolution + kx) * resolution + ky];
  }
};

SpectrumGrid dft(const GridFunction& f);
/// Inverse transform; the imaginary residue is dropped.
GridFunction idft(const SpectrumGrid& spectrum, Boundary boundary = Boundary::periodic);

}  // namespace cno
