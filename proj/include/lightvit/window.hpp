#pragma once

#include <utility>
#include <vector>

#include "lightvit/tensor.hpp"

namespace lightvit {

// Partition of an H x W token grid into non-overlapping S x S windows.
// Window (i, j) holds grid rows i*S .. i*S+S-1 and columns j*S .. j*S+S-1,
// row-major within the window.
struct WindowLayout {
  int64_t h = 0;
  int64_t w = 0;
  int64_t s = 0;

  int64_t windows() const { return (h / s) * (w / s); }
  int64_t tokens() const { return h * w; }

  // Requires S | H and S | W.
  static WindowLayout make(int64_t h, int64_t w, int64_t s);

  // source[i] = flat grid token that becomes partitioned row i.
  std::vector<int64_t> partition_index() const;
  // inverse permutation: source[i] = partitioned row that becomes grid token i.
  std::vector<int64_t> reverse_index() const;
};

// x: [H, W, C] -> [nW, S*S, C].
template <typename T>
std::pair<Tensor<T>, WindowLayout> window_partition(const Tensor<T>& x, int64_t s);

// Exact inverse of window_partition.
template <typename T>
Tensor<T> window_reverse(const Tensor<T>& wnd, const WindowLayout& layout);

// Flat variants on [H*W, C] token matrices, used inside attention.
template <typename T>
Tensor<T> partition_tokens(const Tensor<T>& x2d, const WindowLayout& layout);

template <typename T>
Tensor<T> reverse_tokens(const Tensor<T>& w2d, const WindowLayout& layout);

}  // namespace lightvit
