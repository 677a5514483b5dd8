#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "lightvit/common.hpp"

namespace lightvit {

// Ordered record of executed differentiable operations. Each forward op that
// touches a taped tensor appends one backward closure; run_backward replays
// them in reverse execution order exactly once, accumulating gradients
// additively into every participating node.
template <typename T>
class GradTape {
 public:
  void record(std::function<void()> fn) { entries_.push_back(std::move(fn)); }

  void run_backward() {
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
  }

  // While recording is off, ops execute without growing the tape. Used by
  // finite-difference sweeps that re-evaluate a taped graph many times.
  void set_recording(bool on) { recording_ = on; }
  bool recording() const { return recording_; }

  size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

 private:
  std::vector<std::function<void()>> entries_;
  bool recording_ = true;
};

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // allocated iff the node participates in a tape
  GradTape<T>* tape = nullptr;
};

// Dense row-major N-D tensor; a cheap shared handle to its node.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, GradTape<T>* tape = nullptr);
  static Tensor full(Shape shape, T v, GradTape<T>* tape = nullptr);
  static Tensor from_data(Shape shape, std::vector<T> v, GradTape<T>* tape = nullptr);

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  int64_t rank() const { return static_cast<int64_t>(n_->shape.size()); }
  int64_t numel() const { return static_cast<int64_t>(n_->value.size()); }
  int64_t dim(int64_t i) const { return n_->shape[static_cast<size_t>(i)]; }

  std::vector<T>& data() { return n_->value; }
  const std::vector<T>& data() const { return n_->value; }

  T at(std::initializer_list<int64_t> idx) const;

  bool tracked() const { return n_ && !n_->grad.empty(); }
  const std::vector<T>& grad() const;
  void zero_grad();
  GradTape<T>* tape() const { return n_ ? n_->tape : nullptr; }

  std::shared_ptr<TensorNode<T>> node() const { return n_; }

 private:
  std::shared_ptr<TensorNode<T>> n_;
};

// --- elementwise / structural ops -----------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

// b has rank 1 and matches x's last extent; added to every row.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& b);

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

// g has rank 1 and matches x's last extent; per-channel scaling.
template <typename T>
Tensor<T> mul_channels(const Tensor<T>& x, const Tensor<T>& g);

// x is [N, C]; s is [N]; per-row scaling.
template <typename T>
Tensor<T> mul_rows(const Tensor<T>& x, const Tensor<T>& s);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, double c);

template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int64_t axis);

// Normalizes over the last extent; gamma/beta have rank 1 of that extent.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double eps = 1e-6);

template <typename T>
Tensor<T> mean(const Tensor<T>& x, int64_t axis);

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x);  // -> shape [1]

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

template <typename T>
Tensor<T> transpose(const Tensor<T>& x, const std::vector<int64_t>& perm);

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int64_t axis);

// Contiguous range [begin, end) along one axis.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, int64_t axis, int64_t begin, int64_t end);

// out[i, ...] = x[idx[i], ...]; idx must index within x's first extent.
template <typename T>
Tensor<T> index_rows(const Tensor<T>& x, const std::vector<int64_t>& idx);

// x has first extent 1; repeats it n times along axis 0.
template <typename T>
Tensor<T> repeat_rows(const Tensor<T>& x, int64_t n);

// a: [..., m, k], b: [..., k, n]; leading extents broadcast right-aligned.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// x: [Cin, H, W], w: [Cout, Cin, k, k], optional bias [Cout].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 int64_t stride, int64_t padding);

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

// Seeds root's gradient with one and replays its tape backward. Root must be
// scalar; leaves never visited keep their zero gradient.
template <typename T>
void backward(const Tensor<T>& root);

}  // namespace lightvit
