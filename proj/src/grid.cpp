#include "cno/grid.hpp"

#include <cmath>

#include "cno/fft.hpp"

namespace cno {

GridFunction::GridFunction(int channels, int resolution, Boundary boundary)
    : boundary_(boundary) {
  require(channels >= 1, ErrorKind::parameter, "grid function needs at least one channel");
  require(resolution >= 2, ErrorKind::parameter, "grid resolution must be >= 2");
  values_ = Tensor<double>(Shape{1, static_cast<std::size_t>(channels),
                                 static_cast<std::size_t>(resolution),
                                 static_cast<std::size_t>(resolution)});
}

GridFunction::GridFunction(Tensor<double> values, Boundary boundary)
    : values_(std::move(values)), boundary_(boundary) {
  const Shape& s = values_.shape();
  require(s.n == 1 && s.c >= 1, ErrorKind::shape, "grid function expects a (1, c, s, s) tensor, got " + s.str());
  require(s.h == s.w && s.h >= 2, ErrorKind::shape, "grid function must be square with s >= 2, got " + s.str());
  require(values_.all_finite(), ErrorKind::numeric, "grid function values must be finite");
}

GridFunction GridFunction::sample(int channels, int resolution,
                                  const std::function<double(int, double, double)>& fn) {
  GridFunction g(channels, resolution);
  const double h = 1.0 / resolution;
  for (int c = 0; c < channels; ++c)
    for (int i = 0; i < resolution; ++i)
      for (int j = 0; j < resolution; ++j) g.at(c, i, j) = fn(c, i * h, j * h);
  return g;
}

double GridFunction::l2_norm() const {
  double acc = 0.0;
  for (double v : values_.vec()) acc += v * v;
  return std::sqrt(acc);
}

SpectrumGrid dft(const GridFunction& f) {
  const int s = f.resolution();
  SpectrumGrid out{f.channels(), s, std::vector<std::complex<double>>(
                                        static_cast<std::size_t>(f.channels()) * s * s)};
  fft::Plan2d plan(s);
  const std::size_t plane = static_cast<std::size_t>(s) * s;
  for (int c = 0; c < f.channels(); ++c)
    plan.forward(f.channel(c), std::span(out.coefficients).subspan(c * plane, plane));
  return out;
}

GridFunction idft(const SpectrumGrid& spectrum, Boundary boundary) {
  const int s = spectrum.resolution;
  GridFunction out(spectrum.channels, s, boundary);
  fft::Plan2d plan(s);
  const std::size_t plane = static_cast<std::size_t>(s) * s;
  std::vector<fft::cplx> buf(plane);
  for (int c = 0; c < spectrum.channels; ++c) {
    plan.inverse(std::span(spectrum.coefficients).subspan(c * plane, plane), buf);
    auto dst = out.channel(c);
    for (std::size_t k = 0; k < plane; ++k) dst[k] = buf[k].real();
  }
  return out;
}

}  // namespace cno
