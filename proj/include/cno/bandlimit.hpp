#pragma once

#include <span>
#include <vector>

#include "cno/grid.hpp"

namespace cno {

/// Zeroes every DFT coefficient with ‖k‖∞ > n_modes.
GridFunction fourier_projection(const GridFunction& f, int n_modes);

/// Periodic sinc interpolation of N (odd) equispaced samples on [0,1),
/// evaluated through the closed-form Dirichlet kernel.
double sinc_interpolate_1d(std::span<const double> samples, double x);

/// Trigonometric interpolant of N ≥ 2 equispaced samples on [0,1). For even N
/// the ±N/2 modes carry half weight.
double trig_interpolate_1d(std::span<const double> samples, double x);

/// ‖f − Pf‖₂ / ‖f‖₂ where P keeps the modes representable strictly below the
/// Nyquist frequency of `target_resolution` (‖k‖∞ < target/2). Zero-norm
/// input returns 0.
double aliasing_error(const GridFunction& f, int target_resolution);

/// Mean over fields and channels of log(|DFT| + 1e-12), shifted so mode 0
/// sits at index (s/2, s/2). Returned as a (1, 1, s, s) tensor.
Tensor<double> log_amplitude_spectrum(std::span<const GridFunction> fields);

/// Ideal band-limited resampling of one periodic line by DFT zero-padding or
/// truncation. A coarse Nyquist bin is split evenly between ±n/2 when padding
/// and the two bins are summed when truncating, so truncate∘pad is the identity.
std::vector<double> spectral_resample_1d(std::span<const double> line, int target);

/// Separable 2D version of spectral_resample_1d, applied per channel.
GridFunction spectral_resample(const GridFunction& f, int target);

inline constexpr double kLogAmplitudeFloor = 1e-12;

}  // namespace cno
