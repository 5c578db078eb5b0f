#pragma once

#include <memory>
#include <span>
#include <vector>

#include "cno/grid.hpp"

namespace cno {

enum class WindowKind { hamming, kaiser };

/// Windowed-sinc lowpass parameters. The cutoff sits at s / cutoff_divisor and
/// the stopband edge at half_width · s, where s is the band resolution.
struct FilterSpec {
  int n_taps = 12;
  double half_width = 0.8;
  double cutoff_divisor = 2.0001;
  WindowKind window = WindowKind::kaiser;
  /// Kaiser shape; a negative value derives it from the transition width.
  double kaiser_beta = -1.0;

  void validate() const;
  bool operator==(const FilterSpec&) const = default;
};

/// Zero-phase FIR taps centred on a grid node. The taps live on a grid of
/// rate_factor · design_resolution samples per unit length.
struct Filter1D {
  std::vector<double> taps;
  int design_resolution = 0;
  int rate_factor = 1;
  FilterSpec spec;

  int center() const { return static_cast<int>(taps.size()) / 2; }
  double sampling_rate() const { return static_cast<double>(rate_factor) * design_resolution; }
  double cutoff() const { return design_resolution / spec.cutoff_divisor; }
  /// Real (zero-phase) frequency response at `freq` cycles per unit length.
  double frequency_response(double freq) const;
  /// Taps used after zero-stuffing: scaled by rate_factor and equalized so
  /// every polyphase branch sums to one.
  std::vector<double> interpolation_taps() const;
};

/// Designs the lowpass that band-limits to resolution `s` on a grid
/// `rate_factor` times finer. Tap count is n_taps·rate_factor/2, rounded up to
/// the next odd number.
Filter1D design_lowpass(const FilterSpec& spec, int s, int rate_factor = 2);

/// Process-wide memo of design_lowpass. Safe for concurrent use.
std::shared_ptr<const Filter1D> cached_lowpass(const FilterSpec& spec, int s, int rate_factor);

// One-dimensional building blocks, exposed for tests and the operator builder.
std::vector<double> zero_stuff(std::span<const double> line, int factor);
std::vector<double> filter_line(std::span<const double> line, std::span<const double> taps, Boundary boundary);
std::vector<double> upsample_line(std::span<const double> line, int factor, const Filter1D& filter,
                                  Boundary boundary = Boundary::periodic);
std::vector<double> downsample_line(std::span<const double> line, int factor, const Filter1D& filter,
                                    Boundary boundary = Boundary::periodic);

/// A linear map between periodic lines stored as a sparse matrix. Square
/// fields are resampled separably by applying it along both axes.
template <class T>
struct AxisOperator {
  int in_len = 0;
  int out_len = 0;
  std::vector<int> row_ptr;
  std::vector<int> cols;
  std::vector<T> vals;

  AxisOperator transposed() const;
  template <class U>
  AxisOperator<U> cast() const;

  /// Applies along both axes of one in_len² plane into an out_len² plane.
  /// `scratch` must hold scratch_size() values.
  void apply_plane(const T* in, T* out, T* scratch) const;
  std::size_t scratch_size() const {
    return 2 * static_cast<std::size_t>(out_len) * static_cast<std::size_t>(std::max(in_len, out_len));
  }
};

enum class ResampleKind { windowed, ideal };

template <class T>
AxisOperator<T> make_upsampler(int s, int factor, const Filter1D& filter, Boundary boundary);
template <class T>
AxisOperator<T> make_downsampler(int s, int factor, const Filter1D& filter, Boundary boundary);
/// Dense matrix of spectral_resample_1d from length s to length target.
template <class T>
AxisOperator<T> make_ideal_resampler(int s, int target);
/// Operator for resampling a line of length s to length target (integer ratio).
template <class T>
AxisOperator<T> make_resampler(int s, int target, ResampleKind kind, const FilterSpec& spec,
                               Boundary boundary = Boundary::periodic);

GridFunction upsample(const GridFunction& f, int factor, const Filter1D& filter);
GridFunction downsample(const GridFunction& f, int factor, const Filter1D& filter);
/// Upsamples or downsamples by the integer ratio between s and `target` with
/// a freshly designed filter (or exact spectral resampling). Identity when
/// target == s.
GridFunction resample_to(const GridFunction& f, int target, ResampleKind kind = ResampleKind::windowed,
                         const FilterSpec& spec = {});

/// Applies a square operator separably to every channel of `f`.
GridFunction apply_operator(const GridFunction& f, const AxisOperator<double>& op);

}  // namespace cno
