#include "cno/bandlimit.hpp"

#include <cmath>
#include <numbers>

#include "cno/fft.hpp"

namespace cno {

using fft::cplx;
using fft::signed_freq;

GridFunction fourier_projection(const GridFunction& f, int n_modes) {
  const int s = f.resolution();
  require(n_modes >= 1 && n_modes <= s / 2, ErrorKind::parameter,
          "fourier_projection: n_modes must lie in [1, s/2]");
  SpectrumGrid spec = dft(f);
  for (int c = 0; c < spec.channels; ++c)
    for (int kx = 0; kx < s; ++kx)
      for (int ky = 0; ky < s; ++ky) {
        const int m = std::max(std::abs(signed_freq(kx, s)), std::abs(signed_freq(ky, s)));
        if (m > n_modes) spec.at(c, kx, ky) = 0.0;
      }
  return idft(spec, f.boundary());
}

double sinc_interpolate_1d(std::span<const double> samples, double x) {
  const auto n = static_cast<int>(samples.size());
  require(n >= 1 && n % 2 == 1, ErrorKind::parameter,
          "sinc_interpolate_1d needs an odd number of samples");
  require(std::isfinite(x), ErrorKind::parameter, "sinc_interpolate_1d: x must be finite");
  const double t = x * n;
  if (t == std::round(t)) {
    const long k = static_cast<long>(std::round(t));
    return samples[static_cast<std::size_t>(((k % n) + n) % n)];
  }
  const double pi = std::numbers::pi;
  double acc = 0.0;
  for (int k = 0; k < n; ++k) {
    const double d = x - static_cast<double>(k) / n;
    const double den = n * std::sin(pi * d);
    acc += den == 0.0 ? samples[k] : samples[k] * std::sin(n * pi * d) / den;
  }
  return acc;
}

double trig_interpolate_1d(std::span<const double> samples, double x) {
  const auto n = static_cast<int>(samples.size());
  require(n >= 2, ErrorKind::parameter, "trig_interpolate_1d needs at least two samples");
  const double two_pi = 2.0 * std::numbers::pi;
  const int top = n / 2;
  double acc = 0.0;
  for (int m = -top; m <= top; ++m) {
    double weight = 1.0 / n;
    if (n % 2 == 0 && std::abs(m) == top) weight *= 0.5;
    double inner = 0.0;
    for (int j = 0; j < n; ++j) inner += samples[j] * std::cos(two_pi * m * (x - static_cast<double>(j) / n));
    acc += weight * inner;
  }
  return acc;
}

double aliasing_error(const GridFunction& f, int target_resolution) {
  const int s = f.resolution();
  require(target_resolution >= 1 && target_resolution < s, ErrorKind::parameter,
          "aliasing_error: target resolution must be below the field resolution");
  const SpectrumGrid spec = dft(f);
  double total = 0.0, lost = 0.0;
  for (int c = 0; c < spec.channels; ++c)
    for (int kx = 0; kx < s; ++kx)
      for (int ky = 0; ky < s; ++ky) {
        const double e = std::norm(spec.at(c, kx, ky));
        total += e;
        const int m = std::max(std::abs(signed_freq(kx, s)), std::abs(signed_freq(ky, s)));
        if (2 * m >= target_resolution) lost += e;
      }
  if (total == 0.0) return 0.0;
  return std::sqrt(lost / total);
}

Tensor<double> log_amplitude_spectrum(std::span<const GridFunction> fields) {
  require(!fields.empty(), ErrorKind::parameter, "log_amplitude_spectrum: empty field list");
  const int s = fields.front().resolution();
  const int channels = fields.front().channels();
  const auto us = static_cast<std::size_t>(s);
  Tensor<double> out(Shape{1, 1, us, us});
  fft::Plan2d plan(s);
  std::vector<cplx> buf(us * us);
  for (const auto& f : fields) {
    require(f.resolution() == s && f.channels() == channels, ErrorKind::shape,
            "log_amplitude_spectrum: fields must share resolution and channel count");
    for (int c = 0; c < channels; ++c) {
      plan.forward(f.channel(c), buf);
      for (int kx = 0; kx < s; ++kx)
        for (int ky = 0; ky < s; ++ky) {
          const int cx = (kx + s / 2) % s, cy = (ky + s / 2) % s;
          out(0, 0, cx, cy) += std::log(std::abs(buf[kx * us + ky]) + kLogAmplitudeFloor);
        }
    }
  }
  const double inv = 1.0 / (static_cast<double>(fields.size()) * channels);
  for (auto& v : out.vec()) v *= inv;
  return out;
}

std::vector<double> spectral_resample_1d(std::span<const double> line, int target) {
  const int n = static_cast<int>(line.size());
  require(n >= 1 && target >= 1, ErrorKind::parameter, "spectral_resample_1d: empty grid");
  if (target == n) return {line.begin(), line.end()};
  std::vector<cplx> in(line.begin(), line.end());
  const std::vector<cplx> spec = fft::forward1d(in);
  std::vector<cplx> out(target, 0.0);
  const double scale = static_cast<double>(target) / n;
  auto bin = [target](int f) { return ((f % target) + target) % target; };
  for (int k = 0; k < n; ++k) {
    const int f = signed_freq(k, n);
    const cplx v = spec[k] * scale;
    if (target > n) {
      if (n % 2 == 0 && f == -n / 2) {
        out[bin(-n / 2)] += 0.5 * v;
        out[bin(n / 2)] += 0.5 * v;
      } else {
        out[bin(f)] += v;
      }
    } else {
      if (2 * std::abs(f) < target || (target % 2 == 0 && 2 * std::abs(f) == target)) out[bin(f)] += v;
    }
  }
  const std::vector<cplx> back = fft::inverse1d(out);
  std::vector<double> result(target);
  for (int k = 0; k < target; ++k) result[k] = back[k].real();
  return result;
}

GridFunction spectral_resample(const GridFunction& f, int target) {
  const int s = f.resolution();
  require(target >= 2, ErrorKind::parameter, "spectral_resample: target must be >= 2");
  if (target == s) return f;
  GridFunction out(f.channels(), target, f.boundary());
  std::vector<double> mid(static_cast<std::size_t>(s) * target);
  std::vector<double> line(s);
  for (int c = 0; c < f.channels(); ++c) {
    for (int i = 0; i < s; ++i) {
      for (int j = 0; j < s; ++j) line[j] = f.at(c, i, j);
      const auto r = spectral_resample_1d(line, target);
      std::copy(r.begin(), r.end(), mid.begin() + static_cast<std::ptrdiff_t>(i) * target);
    }
    for (int j = 0; j < target; ++j) {
      for (int i = 0; i < s; ++i) line[i] = mid[static_cast<std::size_t>(i) * target + j];
      const auto r = spectral_resample_1d(line, target);
      for (int i = 0; i < target; ++i) out.at(c, i, j) = r[i];
    }
  }
  return out;
}

}  // namespace cno
