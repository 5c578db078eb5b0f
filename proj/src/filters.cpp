#include "cno/filters.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <mutex>
#include <numbers>
#include <tuple>

#include "cno/bandlimit.hpp"

namespace cno {

namespace {

double sinc(double x) {
  if (std::abs(x) < 1e-14) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

// Kaiser design formulas (attenuation from tap count and normalized width).
double kaiser_atten(int numtaps, double width) {
  return 2.285 * (numtaps - 1) * std::numbers::pi * width + 7.95;
}

double kaiser_beta(double a) {
  if (a > 50.0) return 0.1102 * (a - 8.7);
  if (a > 21.0) return 0.5842 * std::pow(a - 21.0, 0.4) + 0.07886 * (a - 21.0);
  return 0.0;
}

std::vector<double> window(const FilterSpec& spec, int length, double transition_width_normalized) {
  std::vector<double> w(length, 1.0);
  if (length == 1) return w;
  const double m = length - 1;
  if (spec.window == WindowKind::hamming) {
    for (int n = 0; n < length; ++n) w[n] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * n / m);
    return w;
  }
  double beta = spec.kaiser_beta;
  if (beta < 0) beta = kaiser_beta(kaiser_atten(length, transition_width_normalized));
  const double denom = std::cyl_bessel_i(0.0, beta);
  for (int n = 0; n < length; ++n) {
    const double r = 2.0 * n / m - 1.0;
    w[n] = std::cyl_bessel_i(0.0, beta * std::sqrt(std::max(0.0, 1.0 - r * r))) / denom;
  }
  return w;
}

int wrap(int k, int n) {
  const int r = k % n;
  return r < 0 ? r + n : r;
}

template <class T>
AxisOperator<T> from_columns(int in_len, int out_len, const std::function<std::vector<double>(std::span<const double>)>& map) {
  std::vector<std::vector<std::pair<int, double>>> rows(out_len);
  std::vector<double> unit(in_len, 0.0);
  for (int j = 0; j < in_len; ++j) {
    unit[j] = 1.0;
    const std::vector<double> col = map(unit);
    unit[j] = 0.0;
    for (int r = 0; r < out_len; ++r)
      if (col[r] != 0.0) rows[r].emplace_back(j, col[r]);
  }
  AxisOperator<T> op;
  op.in_len = in_len;
  op.out_len = out_len;
  op.row_ptr.assign(1, 0);
  for (const auto& row : rows) {
    for (const auto& [c, v] : row) {
      op.cols.push_back(c);
      op.vals.push_back(static_cast<T>(v));
    }
    op.row_ptr.push_back(static_cast<int>(op.cols.size()));
  }
  return op;
}

void check_line_factor(std::size_t len, int factor) {
  require(factor >= 1, ErrorKind::parameter, "resampling factor must be >= 1");
  require(len > 0, ErrorKind::shape, "empty line");
}

}  // namespace

void FilterSpec::validate() const {
  require(n_taps >= 4, ErrorKind::parameter, "n_taps must be >= 4");
  require(half_width >= 0.5, ErrorKind::parameter, "filter half_width must be >= 0.5");
  require(cutoff_divisor > 0, ErrorKind::parameter, "cutoff divisor must be positive");
  require(window == WindowKind::hamming || std::isfinite(kaiser_beta), ErrorKind::parameter,
          "kaiser beta must be finite");
}

double Filter1D::frequency_response(double freq) const {
  const double fs = sampling_rate();
  const int c = center();
  double h = 0.0;
  for (int k = 0; k < static_cast<int>(taps.size()); ++k)
    h += taps[k] * std::cos(2.0 * std::numbers::pi * freq * (k - c) / fs);
  return h;
}

std::vector<double> Filter1D::interpolation_taps() const {
  const int n = rate_factor;
  const int c = center();
  std::vector<double> out = taps;
  std::vector<double> phase_sum(n, 0.0);
  for (int k = 0; k < static_cast<int>(taps.size()); ++k) phase_sum[wrap(k - c, n)] += taps[k];
  for (int k = 0; k < static_cast<int>(taps.size()); ++k) {
    const double s = phase_sum[wrap(k - c, n)];
    require(std::abs(s) > 1e-12, ErrorKind::parameter, "filter has a vanishing polyphase branch");
    out[k] /= s;
  }
  return out;
}

Filter1D design_lowpass(const FilterSpec& spec, int s, int rate_factor) {
  spec.validate();
  require(s >= 1, ErrorKind::parameter, "filter resolution must be >= 1");
  require(rate_factor >= 1, ErrorKind::parameter, "filter rate factor must be >= 1");
  Filter1D f;
  f.spec = spec;
  f.design_resolution = s;
  f.rate_factor = rate_factor;
  const double fs = f.sampling_rate();
  const double cutoff = f.cutoff();
  require(cutoff < fs / 2, ErrorKind::parameter, "filter cutoff is at or above the Nyquist frequency");

  int length = std::max(1, spec.n_taps * rate_factor / 2);
  if (length % 2 == 0) ++length;
  const double half_transition = spec.half_width * s - cutoff;
  const double width = std::max(0.0, 2.0 * half_transition) / (fs / 2);
  const std::vector<double> w = window(spec, length, width);

  const double fc = cutoff / fs;
  const int c = length / 2;
  f.taps.resize(length);
  double sum = 0.0;
  for (int k = 0; k < length; ++k) {
    f.taps[k] = 2.0 * fc * sinc(2.0 * fc * (k - c)) * w[k];
    sum += f.taps[k];
  }
  for (double& t : f.taps) t /= sum;
  return f;
}

std::shared_ptr<const Filter1D> cached_lowpass(const FilterSpec& spec, int s, int rate_factor) {
  using Key = std::tuple<int, double, double, int, double, int, int>;
  static std::mutex mu;
  static std::map<Key, std::shared_ptr<const Filter1D>> cache;
  const Key key{spec.n_taps, spec.half_width, spec.cutoff_divisor, static_cast<int>(spec.window),
                spec.kaiser_beta, s, rate_factor};
  {
    std::lock_guard lock(mu);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
  }
  auto f = std::make_shared<const Filter1D>(design_lowpass(spec, s, rate_factor));
  std::lock_guard lock(mu);
  return cache.emplace(key, std::move(f)).first->second;
}

std::vector<double> zero_stuff(std::span<const double> line, int factor) {
  check_line_factor(line.size(), factor);
  std::vector<double> out(line.size() * factor, 0.0);
  for (std::size_t i = 0; i < line.size(); ++i) out[i * factor] = line[i];
  return out;
}

std::vector<double> filter_line(std::span<const double> line, std::span<const double> taps, Boundary boundary) {
  const int n = static_cast<int>(line.size());
  const int c = static_cast<int>(taps.size()) / 2;
  std::vector<double> out(n, 0.0);
  for (int j = 0; j < n; ++j) {
    double acc = 0.0;
    for (int k = 0; k < static_cast<int>(taps.size()); ++k) {
      int m = j + k - c;
      if (boundary == Boundary::periodic) {
        m = wrap(m, n);
      } else if (m < 0 || m >= n) {
        continue;
      }
      acc += taps[k] * line[m];
    }
    out[j] = acc;
  }
  return out;
}

std::vector<double> upsample_line(std::span<const double> line, int factor, const Filter1D& filter,
                                  Boundary boundary) {
  check_line_factor(line.size(), factor);
  if (factor == 1) return {line.begin(), line.end()};
  require(filter.rate_factor == factor, ErrorKind::parameter, "filter rate factor does not match upsampling factor");
  const std::vector<double> stuffed = zero_stuff(line, factor);
  const std::vector<double> taps = filter.interpolation_taps();
  return filter_line(stuffed, taps, boundary);
}

std::vector<double> downsample_line(std::span<const double> line, int factor, const Filter1D& filter,
                                    Boundary boundary) {
  check_line_factor(line.size(), factor);
  require(line.size() % factor == 0, ErrorKind::parameter, "line length is not divisible by the downsampling factor");
  if (factor == 1) return {line.begin(), line.end()};
  require(filter.rate_factor == factor, ErrorKind::parameter, "filter rate factor does not match downsampling factor");
  const std::vector<double> smooth = filter_line(line, filter.taps, boundary);
  std::vector<double> out(line.size() / factor);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = smooth[i * factor];
  return out;
}

template <class T>
AxisOperator<T> AxisOperator<T>::transposed() const {
  AxisOperator<T> t;
  t.in_len = out_len;
  t.out_len = in_len;
  t.row_ptr.assign(in_len + 1, 0);
  for (int c : cols) ++t.row_ptr[c + 1];
  for (int r = 0; r < in_len; ++r) t.row_ptr[r + 1] += t.row_ptr[r];
  t.cols.resize(cols.size());
  t.vals.resize(vals.size());
  std::vector<int> next(t.row_ptr.begin(), t.row_ptr.end() - 1);
  for (int r = 0; r < out_len; ++r) {
    for (int p = row_ptr[r]; p < row_ptr[r + 1]; ++p) {
      const int dst = next[cols[p]]++;
      t.cols[dst] = r;
      t.vals[dst] = vals[p];
    }
  }
  return t;
}

template <class T>
template <class U>
AxisOperator<U> AxisOperator<T>::cast() const {
  AxisOperator<U> o;
  o.in_len = in_len;
  o.out_len = out_len;
  o.row_ptr = row_ptr;
  o.cols = cols;
  o.vals.assign(vals.begin(), vals.end());
  return o;
}

template <class T>
void AxisOperator<T>::apply_plane(const T* in, T* out, T* scratch) const {
  const int n = in_len;
  const int m = out_len;
  // Both passes run along the slow axis so the inner loops are contiguous:
  // Y = A·X, then out = (A·Yᵀ)ᵀ.
  T* __restrict y = scratch;
  T* __restrict yt = scratch + static_cast<std::size_t>(m) * std::max(n, m);
  const auto rows = [&](const T* __restrict src, T* __restrict dst, int width) {
    constexpr int kBlock = 16;
    for (int r = 0; r < m; ++r) {
      T* __restrict d = dst + static_cast<std::size_t>(r) * width;
      const int p0 = row_ptr[r], p1 = row_ptr[r + 1];
      int j0 = 0;
      for (; j0 + kBlock <= width; j0 += kBlock) {
        T acc[kBlock] = {};
        for (int p = p0; p < p1; ++p) {
          const T v = vals[p];
          const T* __restrict s = src + static_cast<std::size_t>(cols[p]) * width + j0;
          for (int j = 0; j < kBlock; ++j) acc[j] += v * s[j];
        }
        std::copy(acc, acc + kBlock, d + j0);
      }
      if (j0 == width) continue;
      std::fill(d + j0, d + width, T(0));
      for (int p = p0; p < p1; ++p) {
        const T v = vals[p];
        const T* __restrict s = src + static_cast<std::size_t>(cols[p]) * width;
        for (int j = j0; j < width; ++j) d[j] += v * s[j];
      }
    }
  };
  rows(in, y, n);
  for (int r = 0; r < m; ++r)
    for (int k = 0; k < n; ++k) yt[static_cast<std::size_t>(k) * m + r] = y[static_cast<std::size_t>(r) * n + k];
  rows(yt, y, m);
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < m; ++c) out[static_cast<std::size_t>(r) * m + c] = y[static_cast<std::size_t>(c) * m + r];
}

template <class T>
AxisOperator<T> make_upsampler(int s, int factor, const Filter1D& filter, Boundary boundary) {
  return from_columns<T>(s, s * factor, [&](std::span<const double> line) {
    return upsample_line(line, factor, filter, boundary);
  });
}

template <class T>
AxisOperator<T> make_downsampler(int s, int factor, const Filter1D& filter, Boundary boundary) {
  require(s % factor == 0, ErrorKind::parameter, "resolution is not divisible by the downsampling factor");
  return from_columns<T>(s, s / factor, [&](std::span<const double> line) {
    return downsample_line(line, factor, filter, boundary);
  });
}

template <class T>
AxisOperator<T> make_ideal_resampler(int s, int target) {
  return from_columns<T>(s, target, [&](std::span<const double> line) { return spectral_resample_1d(line, target); });
}

template <class T>
AxisOperator<T> make_resampler(int s, int target, ResampleKind kind, const FilterSpec& spec, Boundary boundary) {
  require(s >= 1 && target >= 1, ErrorKind::parameter, "resolutions must be positive");
  const bool up = target >= s;
  require(up ? target % s == 0 : s % target == 0, ErrorKind::parameter,
          "resampling " + std::to_string(s) + " -> " + std::to_string(target) + " is not an integer ratio");
  if (kind == ResampleKind::ideal) return make_ideal_resampler<T>(s, target);
  if (target == s) {
    AxisOperator<T> id;
    id.in_len = id.out_len = s;
    for (int r = 0; r <= s; ++r) id.row_ptr.push_back(r);
    for (int r = 0; r < s; ++r) {
      id.cols.push_back(r);
      id.vals.push_back(T(1));
    }
    return id;
  }
  if (up) {
    const int factor = target / s;
    return make_upsampler<T>(s, factor, *cached_lowpass(spec, s, factor), boundary);
  }
  const int factor = s / target;
  return make_downsampler<T>(s, factor, *cached_lowpass(spec, target, factor), boundary);
}

GridFunction apply_operator(const GridFunction& f, const AxisOperator<double>& op) {
  require(f.resolution() == op.in_len, ErrorKind::shape,
          "operator expects resolution " + std::to_string(op.in_len) + ", got " + std::to_string(f.resolution()));
  GridFunction out(f.channels(), op.out_len, f.boundary());
  std::vector<double> scratch(op.scratch_size());
  for (int c = 0; c < f.channels(); ++c) op.apply_plane(f.channel(c).data(), out.channel(c).data(), scratch.data());
  return out;
}

GridFunction upsample(const GridFunction& f, int factor, const Filter1D& filter) {
  require(filter.design_resolution == f.resolution() && filter.rate_factor == factor, ErrorKind::parameter,
          "filter was designed for a different resolution or factor");
  return apply_operator(f, make_upsampler<double>(f.resolution(), factor, filter, f.boundary()));
}

GridFunction downsample(const GridFunction& f, int factor, const Filter1D& filter) {
  require(factor >= 1 && f.resolution() % factor == 0, ErrorKind::parameter,
          "resolution is not divisible by the downsampling factor");
  require(filter.design_resolution == f.resolution() / factor && filter.rate_factor == factor, ErrorKind::parameter,
          "filter was designed for a different resolution or factor");
  return apply_operator(f, make_downsampler<double>(f.resolution(), factor, filter, f.boundary()));
}

GridFunction resample_to(const GridFunction& f, int target, ResampleKind kind, const FilterSpec& spec) {
  if (target == f.resolution()) return f;
  return apply_operator(f, make_resampler<double>(f.resolution(), target, kind, spec, f.boundary()));
}

template struct AxisOperator<float>;
template struct AxisOperator<double>;
template AxisOperator<float> AxisOperator<double>::cast<float>() const;
template AxisOperator<double> AxisOperator<float>::cast<double>() const;
template AxisOperator<float> make_upsampler<float>(int, int, const Filter1D&, Boundary);
template AxisOperator<double> make_upsampler<double>(int, int, const Filter1D&, Boundary);
template AxisOperator<float> make_downsampler<float>(int, int, const Filter1D&, Boundary);
template AxisOperator<double> make_downsampler<double>(int, int, const Filter1D&, Boundary);
template AxisOperator<float> make_ideal_resampler<float>(int, int);
template AxisOperator<double> make_ideal_resampler<double>(int, int);
template AxisOperator<float> make_resampler<float>(int, int, ResampleKind, const FilterSpec&, Boundary);
template AxisOperator<double> make_resampler<double>(int, int, ResampleKind, const FilterSpec&, Boundary);

}  // namespace cno
