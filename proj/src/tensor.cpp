#include "lightvit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "lightvit/counter.hpp"
#include "lightvit/threading.hpp"

namespace lightvit {

namespace {

template <typename T>
using NodePtr = std::shared_ptr<TensorNode<T>>;

template <typename T>
GradTape<T>* live_tape(const Tensor<T>& t) {
  GradTape<T>* tp = t.tape();
  return (tp && tp->recording()) ? tp : nullptr;
}

template <typename T>
GradTape<T>* merged_tape(const Tensor<T>& a, const Tensor<T>& b) {
  GradTape<T>* ta = live_tape(a);
  GradTape<T>* tb = live_tape(b);
  if (ta && tb && ta != tb) {
    throw ContractError("operands belong to two different gradient tapes");
  }
  return ta ? ta : tb;
}

template <typename T>
void accumulate(std::vector<T>& dst, const std::vector<T>& src) {
  for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void check_axis(int64_t& axis, int64_t rank, const char* op) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) {
    throw ShapeError(std::string(op) + ": axis out of range for rank " + std::to_string(rank));
  }
}

// Strides of a row-major layout.
std::vector<int64_t> strides_of(const Shape& s) {
  std::vector<int64_t> st(s.size(), 1);
  for (int64_t i = static_cast<int64_t>(s.size()) - 2; i >= 0; --i) {
    st[i] = st[i + 1] * s[i + 1];
  }
  return st;
}

}  // namespace

// --- Tensor basics ----------------------------------------------------------

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, GradTape<T>* tape) {
  return from_data(shape, std::vector<T>(numel_of(shape), T(0)), tape);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T v, GradTape<T>* tape) {
  return from_data(shape, std::vector<T>(numel_of(shape), v), tape);
}

template <typename T>
Tensor<T> Tensor<T>::from_data(Shape shape, std::vector<T> v, GradTape<T>* tape) {
  for (int64_t d : shape) {
    if (d <= 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (numel_of(shape) != static_cast<int64_t>(v.size())) {
    throw ShapeError("data length " + std::to_string(v.size()) + " does not match shape " +
                     shape_str(shape));
  }
  Tensor<T> t;
  t.n_ = std::make_shared<TensorNode<T>>();
  t.n_->shape = std::move(shape);
  t.n_->value = std::move(v);
  if (tape) {
    t.n_->tape = tape;
    t.n_->grad.assign(t.n_->value.size(), T(0));
  }
  return t;
}

template <typename T>
T Tensor<T>::at(std::initializer_list<int64_t> idx) const {
  const auto st = strides_of(n_->shape);
  if (idx.size() != st.size()) throw ShapeError("at: index rank mismatch");
  int64_t off = 0;
  size_t d = 0;
  for (int64_t i : idx) off += i * st[d++];
  return n_->value[static_cast<size_t>(off)];
}

template <typename T>
const std::vector<T>& Tensor<T>::grad() const {
  if (!tracked()) throw ContractError("grad(): tensor does not participate in a tape");
  return n_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (!tracked()) throw ContractError("zero_grad(): tensor does not participate in a tape");
  std::fill(n_->grad.begin(), n_->grad.end(), T(0));
}

// --- elementwise ------------------------------------------------------------

namespace {

template <typename T>
Tensor<T> alloc_out(Shape shape, GradTape<T>* tape) {
  return Tensor<T>::zeros(std::move(shape), tape);
}

template <typename T>
void check_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape("add", a, b);
  GradTape<T>* tape = merged_tape(a, b);
  Tensor<T> out = alloc_out<T>(a.shape(), tape);
  const auto& av = a.data();
  const auto& bv = b.data();
  auto& ov = out.data();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  if (tape) {
    auto an = a.node(), bn = b.node(), on = out.node();
    tape->record([an, bn, on] {
      if (!an->grad.empty()) accumulate(an->grad, on->grad);
      if (!bn->grad.empty()) accumulate(bn->grad, on->grad);
    });
  }
  return out;
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& b) {
  if (b.rank() != 1 || b.dim(0) != x.dim(x.rank() - 1)) {
    throw ShapeError("add_bias: bias " + shape_str(b.shape()) + " does not match last extent of " +
                     shape_str(x.shape()));
  }
  GradTape<T>* tape = merged_tape(x, b);
  Tensor<T> out = alloc_out<T>(x.shape(), tape);
  const int64_t c = b.dim(0);
  const int64_t rows = x.numel() / c;
  const auto& xv = x.data();
  const auto& bv = b.data();
  auto& ov = out.data();
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t j = 0; j < c; ++j) ov[r * c + j] = xv[r * c + j] + bv[j];
  }
  if (tape) {
    auto xn = x.node(), bn = b.node(), on = out.node();
    tape->record([xn, bn, on, rows, c] {
      if (!xn->grad.empty()) accumulate(xn->grad, on->grad);
      if (!bn->grad.empty()) {
        for (int64_t r = 0; r < rows; ++r) {
          for (int64_t j = 0; j < c; ++j) bn->grad[j] += on->grad[r * c + j];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape("mul", a, b);
  GradTape<T>* tape = merged_tape(a, b);
  Tensor<T> out = alloc_out<T>(a.shape(), tape);
  const auto& av = a.data();
  const auto& bv = b.data();
  auto& ov = out.data();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  if (tape) {
    auto an = a.node(), bn = b.node(), on = out.node();
    tape->record([an, bn, on] {
      for (size_t i = 0; i < on->grad.size(); ++i) {
        if (!an->grad.empty()) an->grad[i] += on->grad[i] * bn->value[i];
        if (!bn->grad.empty()) bn->grad[i] += on->grad[i] * an->value[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul_channels(const Tensor<T>& x, const Tensor<T>& g) {
  if (g.rank() != 1 || g.dim(0) != x.dim(x.rank() - 1)) {
    throw ShapeError("mul_channels: gates " + shape_str(g.shape()) + " do not match last extent of " +
                     shape_str(x.shape()));
  }
  GradTape<T>* tape = merged_tape(x, g);
  Tensor<T> out = alloc_out<T>(x.shape(), tape);
  const int64_t c = g.dim(0);
  const int64_t rows = x.numel() / c;
  const auto& xv = x.data();
  const auto& gv = g.data();
  auto& ov = out.data();
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t j = 0; j < c; ++j) ov[r * c + j] = xv[r * c + j] * gv[j];
  }
  if (tape) {
    auto xn = x.node(), gn = g.node(), on = out.node();
    tape->record([xn, gn, on, rows, c] {
      for (int64_t r = 0; r < rows; ++r) {
        for (int64_t j = 0; j < c; ++j) {
          if (!xn->grad.empty()) xn->grad[r * c + j] += on->grad[r * c + j] * gn->value[j];
          if (!gn->grad.empty()) gn->grad[j] += on->grad[r * c + j] * xn->value[r * c + j];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul_rows(const Tensor<T>& x, const Tensor<T>& s) {
  if (x.rank() != 2 || s.rank() != 1 || s.dim(0) != x.dim(0)) {
    throw ShapeError("mul_rows: expected x [N,C] and s [N], got " + shape_str(x.shape()) + " and " +
                     shape_str(s.shape()));
  }
  GradTape<T>* tape = merged_tape(x, s);
  Tensor<T> out = alloc_out<T>(x.shape(), tape);
  const int64_t n = x.dim(0), c = x.dim(1);
  const auto& xv = x.data();
  const auto& sv = s.data();
  auto& ov = out.data();
  for (int64_t r = 0; r < n; ++r) {
    for (int64_t j = 0; j < c; ++j) ov[r * c + j] = xv[r * c + j] * sv[r];
  }
  if (tape) {
    auto xn = x.node(), sn = s.node(), on = out.node();
    tape->record([xn, sn, on, n, c] {
      for (int64_t r = 0; r < n; ++r) {
        for (int64_t j = 0; j < c; ++j) {
          if (!xn->grad.empty()) xn->grad[r * c + j] += on->grad[r * c + j] * sn->value[r];
          if (!sn->grad.empty()) sn->grad[r] += on->grad[r * c + j] * xn->value[r * c + j];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, double c) {
  GradTape<T>* tape = live_tape(x);
  Tensor<T> out = alloc_out<T>(x.shape(), tape);
  const auto& xv = x.data();
  auto& ov = out.data();
  const T cc = static_cast<T>(c);
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] * cc;
  if (tape) {
    auto xn = x.node(), on = out.node();
    tape->record([xn, on, cc] {
      if (!xn->grad.empty()) {
        for (size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i] * cc;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  GradTape<T>* tape = live_tape(x);
  Tensor<T> out = alloc_out<T>(x.shape(), tape);
  const auto& xv = x.data();
  auto& ov = out.data();
  for (size_t i = 0; i < ov.size(); ++i) {
    const double v = static_cast<double>(xv[i]);
    ov[i] = static_cast<T>(v * 0.5 * (1.0 + std::erf(v * M_SQRT1_2)));
  }
  if (tape) {
    auto xn = x.node(), on = out.node();
    tape->record([xn, on] {
      if (xn->grad.empty()) return;
      for (size_t i = 0; i < on->grad.size(); ++i) {
        const double v = static_cast<double>(xn->value[i]);
        const double cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
        const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * M_PI);
        xn->grad[i] += on->grad[i] * static_cast<T>(cdf + v * pdf);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  GradTape<T>* tape = live_tape(x);
  Tensor<T> out = alloc_out<T>(x.shape(), tape);
  const auto& xv = x.data();
  auto& ov = out.data();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] > T(0) ? xv[i] : T(0);
  if (tape) {
    auto xn = x.node(), on = out.node();
    tape->record([xn, on] {
      if (xn->grad.empty()) return;
      for (size_t i = 0; i < on->grad.size(); ++i) {
        if (xn->value[i] > T(0)) xn->grad[i] += on->grad[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  GradTape<T>* tape = live_tape(x);
  Tensor<T> out = alloc_out<T>(x.shape(), tape);
  const auto& xv = x.data();
  auto& ov = out.data();
  for (size_t i = 0; i < ov.size(); ++i) {
    const double v = static_cast<double>(xv[i]);
    ov[i] = static_cast<T>(1.0 / (1.0 + std::exp(-v)));
  }
  if (tape) {
    auto xn = x.node(), on = out.node();
    tape->record([xn, on] {
      if (xn->grad.empty()) return;
      for (size_t i = 0; i < on->grad.size(); ++i) {
        const T y = on->value[i];
        xn->grad[i] += on->grad[i] * y * (T(1) - y);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int64_t axis) {
  check_axis(axis, x.rank(), "softmax");
  GradTape<T>* tape = live_tape(x);
  Tensor<T> out = alloc_out<T>(x.shape(), tape);
  const auto st = strides_of(x.shape());
  const int64_t asz = x.dim(axis);
  const int64_t astr = st[static_cast<size_t>(axis)];
  const int64_t outer = x.numel() / (asz * astr);
  const auto& xv = x.data();
  auto& ov = out.data();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t in = 0; in < astr; ++in) {
      const int64_t base = o * asz * astr + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (int64_t a = 0; a < asz; ++a) {
        const double v = static_cast<double>(xv[base + a * astr]);
        if (!std::isfinite(v)) throw NumericError("softmax: non-finite input");
        mx = std::max(mx, v);
      }
      double sum = 0.0;
      for (int64_t a = 0; a < asz; ++a) {
        const double e = std::exp(static_cast<double>(xv[base + a * astr]) - mx);
        ov[base + a * astr] = static_cast<T>(e);
        sum += e;
      }
      for (int64_t a = 0; a < asz; ++a) {
        ov[base + a * astr] = static_cast<T>(static_cast<double>(ov[base + a * astr]) / sum);
      }
    }
  }
  if (tape) {
    auto xn = x.node(), on = out.node();
    tape->record([xn, on, outer, asz, astr] {
      if (xn->grad.empty()) return;
      for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < astr; ++in) {
          const int64_t base = o * asz * astr + in;
          T dot = T(0);
          for (int64_t a = 0; a < asz; ++a) {
            dot += on->grad[base + a * astr] * on->value[base + a * astr];
          }
          for (int64_t a = 0; a < asz; ++a) {
            const int64_t i = base + a * astr;
            xn->grad[i] += on->value[i] * (on->grad[i] - dot);
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double eps) {
  const int64_t c = x.dim(x.rank() - 1);
  if (gamma.rank() != 1 || gamma.dim(0) != c || beta.rank() != 1 || beta.dim(0) != c) {
    throw ShapeError("layer_norm: gamma/beta must be [" + std::to_string(c) + "], got " +
                     shape_str(gamma.shape()) + " and " + shape_str(beta.shape()));
  }
  GradTape<T>* tape = merged_tape(x, gamma);
  if (!tape) tape = live_tape(beta);
  Tensor<T> out = alloc_out<T>(x.shape(), tape);
  const int64_t rows = x.numel() / c;
  const auto& xv = x.data();
  const auto& gv = gamma.data();
  const auto& bv = beta.data();
  auto& ov = out.data();
  std::vector<T> inv_std(static_cast<size_t>(rows));
  std::vector<T> mean_v(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    double m = 0.0;
    for (int64_t j = 0; j < c; ++j) m += static_cast<double>(xv[r * c + j]);
    m /= static_cast<double>(c);
    double var = 0.0;
    for (int64_t j = 0; j < c; ++j) {
      const double d = static_cast<double>(xv[r * c + j]) - m;
      var += d * d;
    }
    var /= static_cast<double>(c);
    const double inv = 1.0 / std::sqrt(var + eps);
    mean_v[static_cast<size_t>(r)] = static_cast<T>(m);
    inv_std[static_cast<size_t>(r)] = static_cast<T>(inv);
    for (int64_t j = 0; j < c; ++j) {
      const double xh = (static_cast<double>(xv[r * c + j]) - m) * inv;
      ov[r * c + j] = static_cast<T>(xh) * gv[j] + bv[j];
    }
  }
  if (tape) {
    auto xn = x.node(), gn = gamma.node(), bn = beta.node(), on = out.node();
    tape->record([xn, gn, bn, on, rows, c, mean_v, inv_std] {
      for (int64_t r = 0; r < rows; ++r) {
        const T m = mean_v[static_cast<size_t>(r)];
        const T inv = inv_std[static_cast<size_t>(r)];
        // dxh = dy * gamma; reductions shared by every dx element of the row.
        T sum_dxh = T(0), sum_dxh_xh = T(0);
        for (int64_t j = 0; j < c; ++j) {
          const T xh = (xn->value[r * c + j] - m) * inv;
          const T dxh = on->grad[r * c + j] * gn->value[j];
          sum_dxh += dxh;
          sum_dxh_xh += dxh * xh;
          if (!gn->grad.empty()) gn->grad[j] += on->grad[r * c + j] * xh;
          if (!bn->grad.empty()) bn->grad[j] += on->grad[r * c + j];
        }
        if (!xn->grad.empty()) {
          const T cn = static_cast<T>(c);
          for (int64_t j = 0; j < c; ++j) {
            const T xh = (xn->value[r * c + j] - m) * inv;
            const T dxh = on->grad[r * c + j] * gn->value[j];
            xn->grad[r * c + j] += inv * (dxh - sum_dxh / cn - xh * sum_dxh_xh / cn);
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, int64_t axis) {
  check_axis(axis, x.rank(), "mean");
  GradTape<T>* tape = live_tape(x);
  Shape oshape;
  for (int64_t d = 0; d < x.rank(); ++d) {
    if (d != axis) oshape.push_back(x.dim(d));
  }
  if (oshape.empty()) oshape.push_back(1);
  const auto st = strides_of(x.shape());
  const int64_t asz = x.dim(axis);
  const int64_t astr = st[static_cast<size_t>(axis)];
  const int64_t outer = x.numel() / (asz * astr);
  Tensor<T> out = alloc_out<T>(oshape, tape);
  const auto& xv = x.data();
  auto& ov = out.data();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t in = 0; in < astr; ++in) {
      T acc = T(0);
      const int64_t base = o * asz * astr + in;
      for (int64_t a = 0; a < asz; ++a) acc += xv[base + a * astr];
      ov[o * astr + in] = acc / static_cast<T>(asz);
    }
  }
  if (tape) {
    auto xn = x.node(), on = out.node();
    tape->record([xn, on, outer, asz, astr] {
      if (xn->grad.empty()) return;
      for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < astr; ++in) {
          const T g = on->grad[o * astr + in] / static_cast<T>(asz);
          const int64_t base = o * asz * astr + in;
          for (int64_t a = 0; a < asz; ++a) xn->grad[base + a * astr] += g;
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  GradTape<T>* tape = live_tape(x);
  Tensor<T> out = alloc_out<T>({1}, tape);
  T acc = T(0);
  for (const T v : x.data()) acc += v;
  out.data()[0] = acc;
  if (tape) {
    auto xn = x.node(), on = out.node();
    tape->record([xn, on] {
      if (xn->grad.empty()) return;
      const T g = on->grad[0];
      for (auto& gv : xn->grad) gv += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel_of(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  GradTape<T>* tape = live_tape(x);
  Tensor<T> out = Tensor<T>::from_data(std::move(shape), x.data(), tape);
  if (tape) {
    auto xn = x.node(), on = out.node();
    tape->record([xn, on] {
      if (!xn->grad.empty()) accumulate(xn->grad, on->grad);
    });
  }
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x, const std::vector<int64_t>& perm) {
  const int64_t r = x.rank();
  if (static_cast<int64_t>(perm.size()) != r) {
    throw ShapeError("transpose: permutation rank mismatch");
  }
  std::vector<bool> seen(static_cast<size_t>(r), false);
  for (int64_t p : perm) {
    if (p < 0 || p >= r || seen[static_cast<size_t>(p)]) {
      throw ShapeError("transpose: invalid axis permutation");
    }
    seen[static_cast<size_t>(p)] = true;
  }
  Shape oshape(static_cast<size_t>(r));
  for (int64_t d = 0; d < r; ++d) oshape[static_cast<size_t>(d)] = x.dim(perm[static_cast<size_t>(d)]);
  GradTape<T>* tape = live_tape(x);
  Tensor<T> out = alloc_out<T>(oshape, tape);
  const auto xst = strides_of(x.shape());
  const auto ost = strides_of(oshape);
  const auto& xv = x.data();
  auto& ov = out.data();
  const int64_t n = x.numel();
  std::vector<int64_t> coord(static_cast<size_t>(r));
  for (int64_t i = 0; i < n; ++i) {
    int64_t rem = i;
    int64_t src = 0;
    for (int64_t d = 0; d < r; ++d) {
      const int64_t cd = rem / ost[static_cast<size_t>(d)];
      rem -= cd * ost[static_cast<size_t>(d)];
      src += cd * xst[static_cast<size_t>(perm[static_cast<size_t>(d)])];
    }
    ov[i] = xv[src];
  }
  if (tape) {
    auto xn = x.node(), on = out.node();
    std::vector<int64_t> xst_c = xst, ost_c = ost, perm_c = perm;
    const int64_t rr = r;
    tape->record([xn, on, xst_c, ost_c, perm_c, rr, n] {
      if (xn->grad.empty()) return;
      for (int64_t i = 0; i < n; ++i) {
        int64_t rem = i;
        int64_t src = 0;
        for (int64_t d = 0; d < rr; ++d) {
          const int64_t cd = rem / ost_c[static_cast<size_t>(d)];
          rem -= cd * ost_c[static_cast<size_t>(d)];
          src += cd * xst_c[static_cast<size_t>(perm_c[static_cast<size_t>(d)])];
        }
        xn->grad[src] += on->grad[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int64_t axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  int64_t r = parts[0].rank();
  check_axis(axis, r, "concat");
  Shape oshape = parts[0].shape();
  GradTape<T>* tape = live_tape(parts[0]);
  for (size_t p = 1; p < parts.size(); ++p) {
    if (parts[p].rank() != r) throw ShapeError("concat: rank mismatch");
    for (int64_t d = 0; d < r; ++d) {
      if (d != axis && parts[p].dim(d) != oshape[static_cast<size_t>(d)]) {
        throw ShapeError("concat: shape mismatch " + shape_str(parts[p].shape()) + " vs " +
                         shape_str(parts[0].shape()));
      }
    }
    oshape[static_cast<size_t>(axis)] += parts[p].dim(axis);
    GradTape<T>* tp = live_tape(parts[p]);
    if (tp) {
      if (tape && tape != tp) throw ContractError("concat: operands on different tapes");
      tape = tp;
    }
  }
  Tensor<T> out = alloc_out<T>(oshape, tape);
  const auto ost = strides_of(oshape);
  const int64_t outer = (axis == 0) ? 1 : out.numel() / (oshape[static_cast<size_t>(axis)] * ost[static_cast<size_t>(axis)]);
  const int64_t inner = ost[static_cast<size_t>(axis)];
  auto& ov = out.data();
  int64_t axis_off = 0;
  std::vector<int64_t> offsets;
  for (const auto& part : parts) {
    offsets.push_back(axis_off);
    const int64_t pa = part.dim(axis);
    const auto& pv = part.data();
    for (int64_t o = 0; o < outer; ++o) {
      const T* src = pv.data() + o * pa * inner;
      T* dst = ov.data() + (o * oshape[static_cast<size_t>(axis)] + axis_off) * inner;
      std::copy(src, src + pa * inner, dst);
    }
    axis_off += pa;
  }
  if (tape) {
    auto on = out.node();
    std::vector<NodePtr<T>> nodes;
    std::vector<int64_t> extents;
    for (const auto& part : parts) {
      nodes.push_back(part.node());
      extents.push_back(part.dim(axis));
    }
    const int64_t oaxis = oshape[static_cast<size_t>(axis)];
    tape->record([on, nodes, extents, offsets, outer, inner, oaxis] {
      for (size_t p = 0; p < nodes.size(); ++p) {
        if (nodes[p]->grad.empty()) continue;
        for (int64_t o = 0; o < outer; ++o) {
          const T* src = on->grad.data() + (o * oaxis + offsets[p]) * inner;
          T* dst = nodes[p]->grad.data() + o * extents[p] * inner;
          for (int64_t i = 0; i < extents[p] * inner; ++i) dst[i] += src[i];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, int64_t axis, int64_t begin, int64_t end) {
  check_axis(axis, x.rank(), "slice");
  const int64_t asz = x.dim(axis);
  if (begin < 0 || end > asz || begin >= end) {
    throw ShapeError("slice: invalid range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") for extent " + std::to_string(asz));
  }
  Shape oshape = x.shape();
  oshape[static_cast<size_t>(axis)] = end - begin;
  GradTape<T>* tape = live_tape(x);
  Tensor<T> out = alloc_out<T>(oshape, tape);
  const auto xst = strides_of(x.shape());
  const int64_t inner = xst[static_cast<size_t>(axis)];
  const int64_t outer = x.numel() / (asz * inner);
  const int64_t osz = end - begin;
  const auto& xv = x.data();
  auto& ov = out.data();
  for (int64_t o = 0; o < outer; ++o) {
    const T* src = xv.data() + (o * asz + begin) * inner;
    std::copy(src, src + osz * inner, ov.data() + o * osz * inner);
  }
  if (tape) {
    auto xn = x.node(), on = out.node();
    tape->record([xn, on, outer, inner, asz, osz, begin] {
      if (xn->grad.empty()) return;
      for (int64_t o = 0; o < outer; ++o) {
        const T* src = on->grad.data() + o * osz * inner;
        T* dst = xn->grad.data() + (o * asz + begin) * inner;
        for (int64_t i = 0; i < osz * inner; ++i) dst[i] += src[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> index_rows(const Tensor<T>& x, const std::vector<int64_t>& idx) {
  if (x.rank() < 1) throw ShapeError("index_rows: rank must be >= 1");
  const int64_t rows = x.dim(0);
  const int64_t rowsz = x.numel() / rows;
  for (int64_t i : idx) {
    if (i < 0 || i >= rows) throw ShapeError("index_rows: index out of range");
  }
  Shape oshape = x.shape();
  oshape[0] = static_cast<int64_t>(idx.size());
  GradTape<T>* tape = live_tape(x);
  Tensor<T> out = alloc_out<T>(oshape, tape);
  const auto& xv = x.data();
  auto& ov = out.data();
  for (size_t r = 0; r < idx.size(); ++r) {
    std::copy(xv.data() + idx[r] * rowsz, xv.data() + (idx[r] + 1) * rowsz, ov.data() + r * rowsz);
  }
  if (tape) {
    auto xn = x.node(), on = out.node();
    std::vector<int64_t> idx_c = idx;
    tape->record([xn, on, idx_c, rowsz] {
      if (xn->grad.empty()) return;
      for (size_t r = 0; r < idx_c.size(); ++r) {
        const T* src = on->grad.data() + r * rowsz;
        T* dst = xn->grad.data() + idx_c[r] * rowsz;
        for (int64_t i = 0; i < rowsz; ++i) dst[i] += src[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> repeat_rows(const Tensor<T>& x, int64_t n) {
  if (x.rank() < 1 || x.dim(0) != 1) {
    throw ShapeError("repeat_rows: expected first extent 1, got " + shape_str(x.shape()));
  }
  if (n < 1) throw ShapeError("repeat_rows: count must be positive");
  Shape oshape = x.shape();
  oshape[0] = n;
  GradTape<T>* tape = live_tape(x);
  Tensor<T> out = alloc_out<T>(oshape, tape);
  const int64_t rowsz = x.numel();
  const auto& xv = x.data();
  auto& ov = out.data();
  for (int64_t r = 0; r < n; ++r) {
    std::copy(xv.begin(), xv.end(), ov.data() + r * rowsz);
  }
  if (tape) {
    auto xn = x.node(), on = out.node();
    tape->record([xn, on, n, rowsz] {
      if (xn->grad.empty()) return;
      for (int64_t r = 0; r < n; ++r) {
        const T* src = on->grad.data() + r * rowsz;
        for (int64_t i = 0; i < rowsz; ++i) xn->grad[i] += src[i];
      }
    });
  }
  return out;
}

// --- matmul -----------------------------------------------------------------

namespace {

// Right-aligned broadcast of leading (batch) extents.
struct BatchPlan {
  Shape out_batch;
  std::vector<int64_t> a_stride;  // per out-batch-dim stride into a's batch, 0 when broadcast
  std::vector<int64_t> b_stride;
};

BatchPlan plan_batch(const Shape& a, const Shape& b) {
  const int64_t ra = static_cast<int64_t>(a.size()) - 2;
  const int64_t rb = static_cast<int64_t>(b.size()) - 2;
  const int64_t r = std::max(ra, rb);
  BatchPlan plan;
  plan.out_batch.resize(static_cast<size_t>(r));
  for (int64_t d = 0; d < r; ++d) {
    const int64_t da = (d >= r - ra) ? a[static_cast<size_t>(d - (r - ra))] : 1;
    const int64_t db = (d >= r - rb) ? b[static_cast<size_t>(d - (r - rb))] : 1;
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("matmul: batch extents not broadcastable: " + shape_str(a) + " vs " +
                       shape_str(b));
    }
    plan.out_batch[static_cast<size_t>(d)] = std::max(da, db);
  }
  // Row-major strides over each operand's own batch dims, zeroed when broadcast.
  auto strides_for = [&](const Shape& s, int64_t rs) {
    std::vector<int64_t> st(static_cast<size_t>(r), 0);
    int64_t acc = 1;
    for (int64_t d = rs - 1; d >= 0; --d) {
      const int64_t od = d + (r - rs);
      if (s[static_cast<size_t>(d)] != 1) st[static_cast<size_t>(od)] = acc;
      acc *= s[static_cast<size_t>(d)];
    }
    return st;
  };
  plan.a_stride = strides_for(a, ra);
  plan.b_stride = strides_for(b, rb);
  return plan;
}

int64_t batch_offset(int64_t flat, const Shape& out_batch, const std::vector<int64_t>& st) {
  int64_t off = 0;
  for (int64_t d = static_cast<int64_t>(out_batch.size()) - 1; d >= 0; --d) {
    const int64_t extent = out_batch[static_cast<size_t>(d)];
    const int64_t cd = flat % extent;
    flat /= extent;
    off += cd * st[static_cast<size_t>(d)];
  }
  return off;
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw ShapeError("matmul: operands must have rank >= 2, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const int64_t m = a.dim(a.rank() - 2);
  const int64_t k = a.dim(a.rank() - 1);
  const int64_t kb = b.dim(b.rank() - 2);
  const int64_t n = b.dim(b.rank() - 1);
  if (k != kb) {
    throw ShapeError("matmul: inner extents disagree: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  const BatchPlan plan = plan_batch(a.shape(), b.shape());
  const int64_t batches = numel_of(plan.out_batch);
  Shape oshape = plan.out_batch;
  oshape.push_back(m);
  oshape.push_back(n);

  GradTape<T>* tape = merged_tape(a, b);
  Tensor<T> out = alloc_out<T>(oshape, tape);
  const auto& av = a.data();
  const auto& bv = b.data();
  auto& ov = out.data();

  count_matmul_macs(batches * m * n * k);

  // One output row per task; writes are disjoint, inner loop order is fixed.
  parallel_for(batches * m, [&](int64_t begin, int64_t end) {
    for (int64_t t = begin; t < end; ++t) {
      const int64_t bi = t / m;
      const int64_t i = t % m;
      const T* pa = av.data() + batch_offset(bi, plan.out_batch, plan.a_stride) * m * k + i * k;
      const T* pb = bv.data() + batch_offset(bi, plan.out_batch, plan.b_stride) * k * n;
      T* pc = ov.data() + bi * m * n + i * n;
      for (int64_t kk = 0; kk < k; ++kk) {
        const T av_ik = pa[kk];
        const T* pbr = pb + kk * n;
        for (int64_t j = 0; j < n; ++j) pc[j] += av_ik * pbr[j];
      }
    }
  });

  if (tape) {
    auto an = a.node(), bn = b.node(), on = out.node();
    tape->record([an, bn, on, plan, batches, m, n, k] {
      for (int64_t bi = 0; bi < batches; ++bi) {
        const int64_t aoff = batch_offset(bi, plan.out_batch, plan.a_stride) * m * k;
        const int64_t boff = batch_offset(bi, plan.out_batch, plan.b_stride) * k * n;
        const T* dc = on->grad.data() + bi * m * n;
        if (!an->grad.empty()) {
          // dA = dC . B^T
          const T* pb = bn->value.data() + boff;
          T* da = an->grad.data() + aoff;
          for (int64_t i = 0; i < m; ++i) {
            for (int64_t kk = 0; kk < k; ++kk) {
              T acc = T(0);
              const T* pbr = pb + kk * n;
              const T* dcr = dc + i * n;
              for (int64_t j = 0; j < n; ++j) acc += dcr[j] * pbr[j];
              da[i * k + kk] += acc;
            }
          }
        }
        if (!bn->grad.empty()) {
          // dB = A^T . dC
          const T* pa = an->value.data() + aoff;
          T* db = bn->grad.data() + boff;
          for (int64_t i = 0; i < m; ++i) {
            const T* dcr = dc + i * n;
            for (int64_t kk = 0; kk < k; ++kk) {
              const T a_ik = pa[i * k + kk];
              T* dbr = db + kk * n;
              for (int64_t j = 0; j < n; ++j) dbr[j] += a_ik * dcr[j];
            }
          }
        }
      }
    });
  }
  return out;
}

// --- conv2d -----------------------------------------------------------------

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, int64_t stride,
                 int64_t padding) {
  if (x.rank() != 3 || w.rank() != 4) {
    throw ShapeError("conv2d: expected x [Cin,H,W] and w [Cout,Cin,k,k], got " +
                     shape_str(x.shape()) + " and " + shape_str(w.shape()));
  }
  const int64_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const int64_t cout = w.dim(0), kc = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  if (kc != cin || kh != kw) {
    throw ShapeError("conv2d: kernel " + shape_str(w.shape()) + " incompatible with input " +
                     shape_str(x.shape()));
  }
  if (stride < 1 || padding < 0) throw ShapeError("conv2d: invalid stride/padding");
  const int64_t ho = (h + 2 * padding - kh) / stride + 1;
  const int64_t wo = (wd + 2 * padding - kw) / stride + 1;
  if (ho <= 0 || wo <= 0) {
    throw ShapeError("conv2d: non-positive output extent for input " + shape_str(x.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != cout)) {
    throw ShapeError("conv2d: bias must be [Cout]");
  }

  GradTape<T>* tape = merged_tape(x, w);
  if (!tape && bias.defined()) tape = live_tape(bias);
  Tensor<T> out = alloc_out<T>({cout, ho, wo}, tape);
  const auto& xv = x.data();
  const auto& wv = w.data();
  auto& ov = out.data();

  count_conv_macs(cout * cin * kh * kw * ho * wo);

  parallel_for(cout, [&](int64_t begin, int64_t end) {
    for (int64_t co = begin; co < end; ++co) {
      for (int64_t oy = 0; oy < ho; ++oy) {
        for (int64_t ox = 0; ox < wo; ++ox) {
          T acc = bias.defined() ? bias.data()[co] : T(0);
          for (int64_t ci = 0; ci < cin; ++ci) {
            for (int64_t ky = 0; ky < kh; ++ky) {
              const int64_t iy = oy * stride + ky - padding;
              if (iy < 0 || iy >= h) continue;
              for (int64_t kx = 0; kx < kw; ++kx) {
                const int64_t ix = ox * stride + kx - padding;
                if (ix < 0 || ix >= wd) continue;
                acc += xv[(ci * h + iy) * wd + ix] * wv[((co * cin + ci) * kh + ky) * kw + kx];
              }
            }
          }
          ov[(co * ho + oy) * wo + ox] = acc;
        }
      }
    }
  });

  if (tape) {
    auto xn = x.node(), wn = w.node(), on = out.node();
    auto bn = bias.defined() ? bias.node() : nullptr;
    tape->record([xn, wn, bn, on, cin, h, wd, cout, kh, kw, ho, wo, stride, padding] {
      for (int64_t co = 0; co < cout; ++co) {
        for (int64_t oy = 0; oy < ho; ++oy) {
          for (int64_t ox = 0; ox < wo; ++ox) {
            const T g = on->grad[(co * ho + oy) * wo + ox];
            if (bn && !bn->grad.empty()) bn->grad[co] += g;
            for (int64_t ci = 0; ci < cin; ++ci) {
              for (int64_t ky = 0; ky < kh; ++ky) {
                const int64_t iy = oy * stride + ky - padding;
                if (iy < 0 || iy >= h) continue;
                for (int64_t kx = 0; kx < kw; ++kx) {
                  const int64_t ix = ox * stride + kx - padding;
                  if (ix < 0 || ix >= wd) continue;
                  const int64_t xi = (ci * h + iy) * wd + ix;
                  const int64_t wi = ((co * cin + ci) * kh + ky) * kw + kx;
                  if (!xn->grad.empty()) xn->grad[xi] += g * wn->value[wi];
                  if (!wn->grad.empty()) wn->grad[wi] += g * xn->value[xi];
                }
              }
            }
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  Tensor<T> y = matmul(x, w);
  return b.defined() ? add_bias(y, b) : y;
}

template <typename T>
void backward(const Tensor<T>& root) {
  if (!root.defined() || root.numel() != 1) {
    throw ContractError("backward: root must be a scalar tensor");
  }
  if (!root.tracked()) {
    throw ContractError("backward: root does not participate in a tape");
  }
  root.node()->grad[0] += T(1);
  root.tape()->run_backward();
}

// --- explicit instantiations -------------------------------------------------

#define LIGHTVIT_INSTANTIATE_OPS(T)                                                              \
  template class Tensor<T>;                                                                      \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> mul_channels(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> mul_rows(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> scale(const Tensor<T>&, double);                                            \
  template Tensor<T> gelu(const Tensor<T>&);                                                     \
  template Tensor<T> relu(const Tensor<T>&);                                                     \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                  \
  template Tensor<T> softmax(const Tensor<T>&, int64_t);                                         \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);   \
  template Tensor<T> mean(const Tensor<T>&, int64_t);                                            \
  template Tensor<T> sum_all(const Tensor<T>&);                                                  \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                           \
  template Tensor<T> transpose(const Tensor<T>&, const std::vector<int64_t>&);                   \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, int64_t);                             \
  template Tensor<T> slice(const Tensor<T>&, int64_t, int64_t, int64_t);                         \
  template Tensor<T> index_rows(const Tensor<T>&, const std::vector<int64_t>&);                  \
  template Tensor<T> repeat_rows(const Tensor<T>&, int64_t);                                     \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int64_t,       \
                            int64_t);                                                            \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);               \
  template void backward(const Tensor<T>&);

LIGHTVIT_INSTANTIATE_OPS(float)
LIGHTVIT_INSTANTIATE_OPS(double)

#undef LIGHTVIT_INSTANTIATE_OPS

}  // namespace lightvit
