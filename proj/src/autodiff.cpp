#include "cno/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>

namespace cno::ad {

namespace {

template <class T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Target column count for one conv GEMM; small planes are batched together.
constexpr int kGemmColumns = 4096;

int wrap(int k, int n) { return k < 0 ? k + n : (k >= n ? k - n : k); }

// Rows are (ci, ky, kx); columns [offset, offset + s²) hold one sample.
template <class T>
void im2col(const T* x, int cin, int s, Boundary b, T* col, std::size_t ld, std::size_t offset) {
  const bool periodic = b == Boundary::periodic;
  for (int ci = 0; ci < cin; ++ci)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        const std::size_t r = static_cast<std::size_t>(ci) * 9 + ky * 3 + kx;
        const int dy = ky - 1, dx = kx - 1;
        for (int i = 0; i < s; ++i) {
          T* dst = col + r * ld + offset + static_cast<std::size_t>(i) * s;
          int ii = i + dy;
          if (ii < 0 || ii >= s) {
            if (!periodic) {
              std::fill(dst, dst + s, T(0));
              continue;
            }
            ii = wrap(ii, s);
          }
          const T* src = x + (static_cast<std::size_t>(ci) * s + ii) * s;
          if (dx == 0) {
            std::memcpy(dst, src, sizeof(T) * s);
          } else if (dx == 1) {
            std::memcpy(dst, src + 1, sizeof(T) * (s - 1));
            dst[s - 1] = periodic ? src[0] : T(0);
          } else {
            dst[0] = periodic ? src[s - 1] : T(0);
            std::memcpy(dst + 1, src, sizeof(T) * (s - 1));
          }
        }
      }
}

template <class T>
void col2im(const T* col, int cin, int s, Boundary b, T* x, std::size_t ld, std::size_t offset) {
  const bool periodic = b == Boundary::periodic;
  for (int ci = 0; ci < cin; ++ci)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        const std::size_t r = static_cast<std::size_t>(ci) * 9 + ky * 3 + kx;
        const int dy = ky - 1, dx = kx - 1;
        for (int i = 0; i < s; ++i) {
          const T* src = col + r * ld + offset + static_cast<std::size_t>(i) * s;
          int ii = i + dy;
          if (ii < 0 || ii >= s) {
            if (!periodic) continue;
            ii = wrap(ii, s);
          }
          T* dst = x + (static_cast<std::size_t>(ci) * s + ii) * s;
          if (dx == 0) {
            for (int j = 0; j < s; ++j) dst[j] += src[j];
          } else if (dx == 1) {
            for (int j = 0; j < s - 1; ++j) dst[j + 1] += src[j];
            if (periodic) dst[0] += src[s - 1];
          } else {
            for (int j = 1; j < s; ++j) dst[j - 1] += src[j];
            if (periodic) dst[s - 1] += src[0];
          }
        }
      }
}

template <class T>
bool needs(const Var<T>& v) {
  return v && v->requires_grad;
}

template <class T>
void apply_planes(const AxisOperator<T>& op, const Tensor<T>& in, Tensor<T>& out) {
  std::vector<T> scratch(op.scratch_size());
  for (std::size_t n = 0; n < in.shape().n; ++n)
    for (std::size_t c = 0; c < in.shape().c; ++c) op.apply_plane(in.plane(n, c), out.plane(n, c), scratch.data());
}

template <class T>
void accumulate_planes(const AxisOperator<T>& op, const Tensor<T>& in, Tensor<T>& out) {
  std::vector<T> scratch(op.scratch_size());
  std::vector<T> tmp(static_cast<std::size_t>(op.out_len) * op.out_len);
  for (std::size_t n = 0; n < in.shape().n; ++n)
    for (std::size_t c = 0; c < in.shape().c; ++c) {
      op.apply_plane(in.plane(n, c), tmp.data(), scratch.data());
      T* dst = out.plane(n, c);
      for (std::size_t k = 0; k < tmp.size(); ++k) dst[k] += tmp[k];
    }
}

void require_square(const Shape& s, const char* op) {
  require(s.h == s.w && s.h > 0, ErrorKind::shape, std::string(op) + ": expected square planes, got " + s.str());
}

}  // namespace

template <class T>
Var<T> Tape<T>::constant(Tensor<T> value) const {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  return node;
}

template <class T>
Var<T> Tape<T>::parameter(Parameter<T>& p) {
  auto node = std::make_shared<Node<T>>();
  node->value = p.value;
  if (recording_) {
    node->requires_grad = true;
    Parameter<T>* target = &p;
    node->backward = [target](Node<T>& self) { target->grad += self.grad; };
    nodes_.push_back(node);
  }
  return node;
}

template <class T>
Var<T> Tape<T>::record(Tensor<T> value, const std::vector<Var<T>>& inputs, std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  if (!recording_) return node;
  const bool rg = std::any_of(inputs.begin(), inputs.end(), [](const Var<T>& v) { return needs(v); });
  if (rg) {
    node->requires_grad = true;
    node->backward = std::move(backward);
    nodes_.push_back(node);
  }
  return node;
}

template <class T>
void Tape<T>::backward(const Var<T>& root) {
  require(root != nullptr && root->value.size() == 1, ErrorKind::usage, "backward needs a scalar root");
  if (!root->requires_grad) return;
  root->grad_buffer()[0] = T(1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node<T>& n = **it;
    if (!n.grad.empty() && n.backward) n.backward(n);
  }
}

template <class T>
ResampleOp<T> make_resample_op(int s, int target, ResampleKind kind, const FilterSpec& spec, Boundary boundary) {
  ResampleOp<T> op;
  op.forward = make_resampler<T>(s, target, kind, spec, boundary);
  op.adjoint = op.forward.transposed();
  return op;
}

template <class T>
Var<T> conv2d(Tape<T>& tape, const Var<T>& x, const Var<T>& weight, const Var<T>& bias, Boundary boundary) {
  const Shape xs = x->value.shape();
  const Shape ws = weight->value.shape();
  require_square(xs, "conv2d");
  require(ws.h == 3 && ws.w == 3, ErrorKind::shape, "conv2d: kernel must be 3x3");
  require(ws.c == xs.c, ErrorKind::shape,
          "conv2d: kernel expects " + std::to_string(ws.c) + " input channels, got " + std::to_string(xs.c));
  require(bias->value.size() == ws.n, ErrorKind::shape, "conv2d: bias length does not match output channels");

  const int n = static_cast<int>(xs.n), cin = static_cast<int>(xs.c), cout = static_cast<int>(ws.n);
  const int s = static_cast<int>(xs.h), hw = s * s, k = cin * 9;
  const int group = std::clamp((kGemmColumns + hw - 1) / hw, 1, std::max(n, 1));

  Tensor<T> out({xs.n, ws.n, xs.h, xs.w});
  std::vector<T> col(static_cast<std::size_t>(k) * group * hw);
  MatR<T> tmp;
  Eigen::Map<const MatR<T>> wm(weight->value.data(), cout, k);
  for (int b0 = 0; b0 < n; b0 += group) {
    const int gb = std::min(group, n - b0);
    const std::size_t cols = static_cast<std::size_t>(gb) * hw;
    for (int b = 0; b < gb; ++b) im2col(x->value.sample(b0 + b), cin, s, boundary, col.data(), cols, static_cast<std::size_t>(b) * hw);
    Eigen::Map<const MatR<T>> cm(col.data(), k, cols);
    tmp.noalias() = wm * cm;
    for (int b = 0; b < gb; ++b)
      for (int co = 0; co < cout; ++co) {
        const T bv = bias->value[co];
        const T* src = tmp.data() + static_cast<std::size_t>(co) * cols + static_cast<std::size_t>(b) * hw;
        T* dst = out.plane(b0 + b, co);
        for (int p = 0; p < hw; ++p) dst[p] = src[p] + bv;
      }
  }

  return tape.record(std::move(out), {x, weight, bias}, [x, weight, bias, boundary, n, cin, cout, s, hw, k, group](Node<T>& self) {
    const Tensor<T>& g = self.grad;
    if (needs(bias)) {
      Tensor<T>& gb = bias->grad_buffer();
      for (int b = 0; b < n; ++b)
        for (int co = 0; co < cout; ++co) {
          const T* src = g.plane(b, co);
          T acc = 0;
          for (int p = 0; p < hw; ++p) acc += src[p];
          gb[co] += acc;
        }
    }
    if (!needs(weight) && !needs(x)) return;
    std::vector<T> col(static_cast<std::size_t>(k) * group * hw);
    MatR<T> gm, dcol;
    for (int b0 = 0; b0 < n; b0 += group) {
      const int gbn = std::min(group, n - b0);
      const std::size_t cols = static_cast<std::size_t>(gbn) * hw;
      gm.resize(cout, static_cast<Eigen::Index>(cols));
      for (int b = 0; b < gbn; ++b)
        for (int co = 0; co < cout; ++co)
          std::memcpy(gm.data() + static_cast<std::size_t>(co) * cols + static_cast<std::size_t>(b) * hw, g.plane(b0 + b, co),
                      sizeof(T) * hw);
      if (needs(weight)) {
        for (int b = 0; b < gbn; ++b)
          im2col(x->value.sample(b0 + b), cin, s, boundary, col.data(), cols, static_cast<std::size_t>(b) * hw);
        Eigen::Map<const MatR<T>> cm(col.data(), k, cols);
        Eigen::Map<MatR<T>> gw(weight->grad_buffer().data(), cout, k);
        gw.noalias() += gm * cm.transpose();
      }
      if (needs(x)) {
        Eigen::Map<const MatR<T>> wm(weight->value.data(), cout, k);
        dcol.noalias() = wm.transpose() * gm;
        Tensor<T>& gx = x->grad_buffer();
        for (int b = 0; b < gbn; ++b)
          col2im(dcol.data(), cin, s, boundary, gx.sample(b0 + b), cols, static_cast<std::size_t>(b) * hw);
      }
    }
  });
}

template <class T>
Var<T> batch_norm(Tape<T>& tape, const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, BatchNormState<T>& state,
                  bool train) {
  const Shape xs = x->value.shape();
  const std::size_t ch = xs.c, plane = xs.plane();
  require(gamma->value.size() == ch && beta->value.size() == ch && state.running_mean.size() == ch, ErrorKind::shape,
          "batch_norm: channel count mismatch");
  const double count = static_cast<double>(xs.n * plane);
  std::vector<double> mean(ch), invstd(ch);
  for (std::size_t c = 0; c < ch; ++c) {
    if (train) {
      double s1 = 0.0;
      for (std::size_t b = 0; b < xs.n; ++b) {
        const T* p = x->value.plane(b, c);
        for (std::size_t k = 0; k < plane; ++k) s1 += p[k];
      }
      const double m = s1 / count;
      double s2 = 0.0;
      for (std::size_t b = 0; b < xs.n; ++b) {
        const T* p = x->value.plane(b, c);
        for (std::size_t k = 0; k < plane; ++k) s2 += (p[k] - m) * (p[k] - m);
      }
      const double var = s2 / count;
      mean[c] = m;
      invstd[c] = 1.0 / std::sqrt(var + state.eps);
      const double unbiased = count > 1 ? var * count / (count - 1) : var;
      state.running_mean[c] = static_cast<T>((1 - state.momentum) * state.running_mean[c] + state.momentum * m);
      state.running_var[c] = static_cast<T>((1 - state.momentum) * state.running_var[c] + state.momentum * unbiased);
    } else {
      mean[c] = state.running_mean[c];
      invstd[c] = 1.0 / std::sqrt(static_cast<double>(state.running_var[c]) + state.eps);
    }
  }
  Tensor<T> out(xs);
  for (std::size_t b = 0; b < xs.n; ++b)
    for (std::size_t c = 0; c < ch; ++c) {
      const T a = static_cast<T>(gamma->value[c] * invstd[c]);
      const T shift = static_cast<T>(beta->value[c] - gamma->value[c] * invstd[c] * mean[c]);
      const T* src = x->value.plane(b, c);
      T* dst = out.plane(b, c);
      for (std::size_t k = 0; k < plane; ++k) dst[k] = a * src[k] + shift;
    }

  return tape.record(std::move(out), {x, gamma, beta},
                     [x, gamma, beta, mean = std::move(mean), invstd = std::move(invstd), train, ch, plane, count](Node<T>& self) {
    const Tensor<T>& g = self.grad;
    const std::size_t nb = g.shape().n;
    for (std::size_t c = 0; c < ch; ++c) {
      double sg = 0.0, sgx = 0.0;
      for (std::size_t b = 0; b < nb; ++b) {
        const T* gp = g.plane(b, c);
        const T* xp = x->value.plane(b, c);
        for (std::size_t k = 0; k < plane; ++k) {
          sg += gp[k];
          sgx += gp[k] * (xp[k] - mean[c]) * invstd[c];
        }
      }
      if (needs(gamma)) gamma->grad_buffer()[c] += static_cast<T>(sgx);
      if (needs(beta)) beta->grad_buffer()[c] += static_cast<T>(sg);
      if (!needs(x)) continue;
      Tensor<T>& gx = x->grad_buffer();
      const double gi = gamma->value[c] * invstd[c];
      for (std::size_t b = 0; b < nb; ++b) {
        const T* gp = g.plane(b, c);
        const T* xp = x->value.plane(b, c);
        T* dst = gx.plane(b, c);
        if (train) {
          for (std::size_t k = 0; k < plane; ++k) {
            const double xh = (xp[k] - mean[c]) * invstd[c];
            dst[k] += static_cast<T>(gi * (gp[k] - sg / count - xh * sgx / count));
          }
        } else {
          for (std::size_t k = 0; k < plane; ++k) dst[k] += static_cast<T>(gi * gp[k]);
        }
      }
    }
  });
}

template <class T>
Var<T> resample(Tape<T>& tape, const Var<T>& x, const ResampleOp<T>& op) {
  const Shape xs = x->value.shape();
  require_square(xs, "resample");
  require(static_cast<int>(xs.h) == op.in_resolution(), ErrorKind::shape,
          "resample: operator expects resolution " + std::to_string(op.in_resolution()) + ", got " + std::to_string(xs.h));
  const std::size_t r = static_cast<std::size_t>(op.out_resolution());
  Tensor<T> out({xs.n, xs.c, r, r});
  apply_planes(op.forward, x->value, out);
  const ResampleOp<T>* opp = &op;
  return tape.record(std::move(out), {x}, [x, opp](Node<T>& self) {
    accumulate_planes(opp->adjoint, self.grad, x->grad_buffer());
  });
}

template <class T>
Var<T> leaky_relu(Tape<T>& tape, const Var<T>& x, double slope) {
  Tensor<T> out(x->value.shape());
  const T a = static_cast<T>(slope);
  for (std::size_t k = 0; k < out.size(); ++k) {
    const T v = x->value[k];
    out[k] = v > 0 ? v : a * v;
  }
  return tape.record(std::move(out), {x}, [x, a](Node<T>& self) {
    Tensor<T>& gx = x->grad_buffer();
    for (std::size_t k = 0; k < gx.size(); ++k) gx[k] += x->value[k] > 0 ? self.grad[k] : a * self.grad[k];
  });
}

template <class T>
Var<T> filtered_activation(Tape<T>& tape, const Var<T>& x, const ResampleOp<T>& up, const ResampleOp<T>& down,
                           double slope) {
  const Shape xs = x->value.shape();
  require_square(xs, "activation");
  require(static_cast<int>(xs.h) == up.in_resolution() && up.out_resolution() == down.in_resolution(), ErrorKind::shape,
          "activation: resampling operators do not chain");
  const std::size_t fine = static_cast<std::size_t>(up.out_resolution());
  const std::size_t fine_plane = fine * fine;
  const std::size_t r = static_cast<std::size_t>(down.out_resolution());
  const bool keep = tape.recording() && needs(x);
  const T a = static_cast<T>(slope);

  Tensor<T> out({xs.n, xs.c, r, r});
  std::vector<std::uint8_t> mask(keep ? xs.n * xs.c * fine_plane : 0);
  std::vector<T> u(fine_plane);
  std::vector<T> scratch(std::max(up.forward.scratch_size(), down.forward.scratch_size()));
  for (std::size_t b = 0; b < xs.n; ++b)
    for (std::size_t c = 0; c < xs.c; ++c) {
      up.forward.apply_plane(x->value.plane(b, c), u.data(), scratch.data());
      std::uint8_t* m = keep ? mask.data() + (b * xs.c + c) * fine_plane : nullptr;
      for (std::size_t k = 0; k < fine_plane; ++k) {
        const bool pos = u[k] > 0;
        if (m) m[k] = pos;
        if (!pos) u[k] *= a;
      }
      down.forward.apply_plane(u.data(), out.plane(b, c), scratch.data());
    }

  const ResampleOp<T>* upp = &up;
  const ResampleOp<T>* dnp = &down;
  return tape.record(std::move(out), {x}, [x, upp, dnp, a, fine_plane, mask = std::move(mask)](Node<T>& self) {
    const Shape gs = self.grad.shape();
    Tensor<T>& gx = x->grad_buffer();
    const std::size_t in_plane = gx.shape().plane();
    std::vector<T> gu(fine_plane), gi(in_plane);
    std::vector<T> scratch(std::max(dnp->adjoint.scratch_size(), upp->adjoint.scratch_size()));
    for (std::size_t b = 0; b < gs.n; ++b)
      for (std::size_t c = 0; c < gs.c; ++c) {
        dnp->adjoint.apply_plane(self.grad.plane(b, c), gu.data(), scratch.data());
        const std::uint8_t* m = mask.data() + (b * gs.c + c) * fine_plane;
        for (std::size_t k = 0; k < fine_plane; ++k)
          if (!m[k]) gu[k] *= a;
        upp->adjoint.apply_plane(gu.data(), gi.data(), scratch.data());
        T* dst = gx.plane(b, c);
        for (std::size_t k = 0; k < in_plane; ++k) dst[k] += gi[k];
      }
  });
}

template <class T>
Var<T> add(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
  require(a->value.shape() == b->value.shape(), ErrorKind::shape,
          "add: " + a->value.shape().str() + " vs " + b->value.shape().str());
  Tensor<T> out = a->value;
  out += b->value;
  return tape.record(std::move(out), {a, b}, [a, b](Node<T>& self) {
    if (needs(a)) a->grad_buffer() += self.grad;
    if (needs(b)) b->grad_buffer() += self.grad;
  });
}

template <class T>
Var<T> concat(Tape<T>& tape, const std::vector<Var<T>>& xs) {
  require(!xs.empty(), ErrorKind::shape, "concat of nothing");
  Shape s = xs[0]->value.shape();
  std::size_t channels = 0;
  for (const auto& x : xs) {
    const Shape& t = x->value.shape();
    require(t.n == s.n && t.h == s.h && t.w == s.w, ErrorKind::shape,
            "concat: " + s.str() + " vs " + t.str() + " (resolutions must match)");
    channels += t.c;
  }
  Shape os = s;
  os.c = channels;
  Tensor<T> out(os);
  const std::size_t plane = s.plane();
  for (std::size_t b = 0; b < s.n; ++b) {
    std::size_t c0 = 0;
    for (const auto& x : xs) {
      const std::size_t c = x->value.shape().c;
      std::copy_n(x->value.sample(b), c * plane, out.plane(b, c0));
      c0 += c;
    }
  }
  return tape.record(std::move(out), xs, [xs, plane](Node<T>& self) {
    for (std::size_t b = 0; b < self.grad.shape().n; ++b) {
      std::size_t c0 = 0;
      for (const auto& x : xs) {
        const std::size_t c = x->value.shape().c;
        if (needs(x)) {
          const T* src = self.grad.plane(b, c0);
          T* dst = x->grad_buffer().sample(b);
          for (std::size_t k = 0; k < c * plane; ++k) dst[k] += src[k];
        }
        c0 += c;
      }
    }
  });
}

template <class T>
Var<T> scale(Tape<T>& tape, const Var<T>& x, T factor) {
  Tensor<T> out = x->value;
  for (std::size_t k = 0; k < out.size(); ++k) out[k] *= factor;
  return tape.record(std::move(out), {x}, [x, factor](Node<T>& self) {
    Tensor<T>& gx = x->grad_buffer();
    for (std::size_t k = 0; k < gx.size(); ++k) gx[k] += factor * self.grad[k];
  });
}

template <class T>
Var<T> sum(Tape<T>& tape, const Var<T>& x) {
  double acc = 0.0;
  for (T v : x->value.span()) acc += v;
  return tape.record(Tensor<T>({1, 1, 1, 1}, static_cast<T>(acc)), {x}, [x](Node<T>& self) {
    Tensor<T>& gx = x->grad_buffer();
    const T g = self.grad[0];
    for (std::size_t k = 0; k < gx.size(); ++k) gx[k] += g;
  });
}

template <class T>
Var<T> l1_loss(Tape<T>& tape, const Var<T>& pred, const Var<T>& target) {
  require(pred->value.shape() == target->value.shape(), ErrorKind::shape,
          "l1_loss: " + pred->value.shape().str() + " vs " + target->value.shape().str());
  const std::size_t n = pred->value.size();
  require(n > 0, ErrorKind::shape, "l1_loss of empty tensors");
  double acc = 0.0;
  for (std::size_t k = 0; k < n; ++k) acc += std::abs(static_cast<double>(pred->value[k]) - target->value[k]);
  return tape.record(Tensor<T>({1, 1, 1, 1}, static_cast<T>(acc / n)), {pred, target}, [pred, target, n](Node<T>& self) {
    const T g = self.grad[0] / static_cast<T>(n);
    for (int side = 0; side < 2; ++side) {
      const Var<T>& v = side == 0 ? pred : target;
      if (!needs(v)) continue;
      Tensor<T>& gv = v->grad_buffer();
      const T sgn = side == 0 ? T(1) : T(-1);
      for (std::size_t k = 0; k < n; ++k) {
        const T d = pred->value[k] - target->value[k];
        if (d > 0) gv[k] += sgn * g;
        else if (d < 0) gv[k] -= sgn * g;
      }
    }
  });
}

#define CNO_AD_INSTANTIATE(T)                                                                                     \
  template class Tape<T>;                                                                                         \
  template ResampleOp<T> make_resample_op<T>(int, int, ResampleKind, const FilterSpec&, Boundary);                \
  template Var<T> conv2d<T>(Tape<T>&, const Var<T>&, const Var<T>&, const Var<T>&, Boundary);                     \
  template Var<T> batch_norm<T>(Tape<T>&, const Var<T>&, const Var<T>&, const Var<T>&, BatchNormState<T>&, bool); \
  template Var<T> resample<T>(Tape<T>&, const Var<T>&, const ResampleOp<T>&);                                     \
  template Var<T> leaky_relu<T>(Tape<T>&, const Var<T>&, double);                                                 \
  template Var<T> filtered_activation<T>(Tape<T>&, const Var<T>&, const ResampleOp<T>&, const ResampleOp<T>&,     \
                                         double);                                                                 \
  template Var<T> add<T>(Tape<T>&, const Var<T>&, const Var<T>&);                                                 \
  template Var<T> concat<T>(Tape<T>&, const std::vector<Var<T>>&);                                                \
  template Var<T> scale<T>(Tape<T>&, const Var<T>&, T);                                                           \
  template Var<T> sum<T>(Tape<T>&, const Var<T>&);                                                                \
  template Var<T> l1_loss<T>(Tape<T>&, const Var<T>&, const Var<T>&);

CNO_AD_INSTANTIATE(float)
CNO_AD_INSTANTIATE(double)

}  // namespace cno::ad
