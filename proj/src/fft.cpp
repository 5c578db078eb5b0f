#include "cno/fft.hpp"

#include <fftw3.h>

#include <algorithm>
#include <mutex>

#include "cno/error.hpp"

namespace cno::fft {

namespace {
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

std::vector<cplx> run1d(std::span<const cplx> in, int sign) {
  const int n = static_cast<int>(in.size());
  std::vector<cplx> out(in.size());
  if (n == 0) return out;
  auto* buf_in = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n));
  auto* buf_out = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n));
  fftw_plan plan;
  {
    std::lock_guard lock(planner_mutex());
    plan = fftw_plan_dft_1d(n, buf_in, buf_out, sign, FFTW_ESTIMATE);
  }
  std::copy(in.begin(), in.end(), reinterpret_cast<cplx*>(buf_in));
  fftw_execute(plan);
  std::copy_n(reinterpret_cast<cplx*>(buf_out), n, out.begin());
  {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan);
  }
  fftw_free(buf_in);
  fftw_free(buf_out);
  return out;
}
}  // namespace

struct Plan2d::Impl {
  fftw_complex* in = nullptr;
  fftw_complex* out = nullptr;
  fftw_plan fwd = nullptr;
  fftw_plan bwd = nullptr;
};

Plan2d::Plan2d(int n) : n_(n), impl_(std::make_unique<Impl>()) {
  require(n >= 1, ErrorKind::parameter, "fft size must be positive");
  const std::size_t len = static_cast<std::size_t>(n) * n;
  impl_->in = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * len));
  impl_->out = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * len));
  std::lock_guard lock(planner_mutex());
  impl_->fwd = fftw_plan_dft_2d(n, n, impl_->in, impl_->out, FFTW_FORWARD, FFTW_ESTIMATE);
  impl_->bwd = fftw_plan_dft_2d(n, n, impl_->in, impl_->out, FFTW_BACKWARD, FFTW_ESTIMATE);
}

Plan2d::~Plan2d() {
  std::lock_guard lock(planner_mutex());
  fftw_destroy_plan(impl_->fwd);
  fftw_destroy_plan(impl_->bwd);
  fftw_free(impl_->in);
  fftw_free(impl_->out);
}

void Plan2d::forward(std::span<const cplx> in, std::span<cplx> out) {
  const std::size_t len = static_cast<std::size_t>(n_) * n_;
  require(in.size() == len && out.size() == len, ErrorKind::shape, "fft2 buffer size mismatch");
  std::copy(in.begin(), in.end(), reinterpret_cast<cplx*>(impl_->in));
  fftw_execute(impl_->fwd);
  std::copy_n(reinterpret_cast<const cplx*>(impl_->out), len, out.begin());
}

void Plan2d::forward(std::span<const double> in, std::span<cplx> out) {
  const std::size_t len = static_cast<std::size_t>(n_) * n_;
  require(in.size() == len && out.size() == len, ErrorKind::shape, "fft2 buffer size mismatch");
  auto* dst = reinterpret_cast<cplx*>(impl_->in);
  for (std::size_t k = 0; k < len; ++k) dst[k] = cplx(in[k], 0.0);
  fftw_execute(impl_->fwd);
  std::copy_n(reinterpret_cast<const cplx*>(impl_->out), len, out.begin());
}

void Plan2d::inverse(std::span<const cplx> in, std::span<cplx> out) {
  const std::size_t len = static_cast<std::size_t>(n_) * n_;
  require(in.size() == len && out.size() == len, ErrorKind::shape, "fft2 buffer size mismatch");
  std::copy(in.begin(), in.end(), reinterpret_cast<cplx*>(impl_->in));
  fftw_execute(impl_->bwd);
  const double scale = 1.0 / static_cast<double>(len);
  const auto* src = reinterpret_cast<const cplx*>(impl_->out);
  for (std::size_t k = 0; k < len; ++k) out[k] = src[k] * scale;
}

std::vector<cplx> forward1d(std::span<const cplx> in) { return run1d(in, FFTW_FORWARD); }

std::vector<cplx> inverse1d(std::span<const cplx> in) {
  auto out = run1d(in, FFTW_BACKWARD);
  const double scale = out.empty() ? 1.0 : 1.0 / static_cast<double>(out.size());
  for (auto& v : out) v *= scale;
  return out;
}

}  // namespace cno::fft
