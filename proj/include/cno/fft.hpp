#pragma once

#include <complex>
#include <memory>
#include <span>
#include <vector>

namespace cno::fft {

using cplx = std::complex<double>;

/// Reusable square 2D complex DFT of side `n`. Forward is unnormalized, inverse
/// divides by n². Planning is serialized internally; execution on distinct
/// instances may run concurrently.
class Plan2d {
 public:
  explicit Plan2d(int n);
  ~Plan2d();
  Plan2d(const Plan2d&) = delete;
  Plan2d& operator=(const Plan2d&) = delete;

  int size() const { return n_; }
  void forward(std::span<const cplx> in, std::span<cplx> out);
  void forward(std::span<const double> in, std::span<cplx> out);
  void inverse(std::span<const cplx> in, std::span<cplx> out);

 private:
  struct Impl;
  int n_;
  std::unique_ptr<Impl> impl_;
};

/// One-shot 1D transforms with the same normalization convention.
std::vector<cplx> forward1d(std::span<const cplx> in);
std::vector<cplx> inverse1d(std::span<const cplx> in);

/// Signed frequency of DFT bin k on a length-n grid, in (-n/2, n/2].
/// The Nyquist bin of an even grid maps to -n/2.
inline int signed_freq(int k, int n) { return k < (n + 1) / 2 ? k : k - n; }

}  // namespace cno::fft
