#include "lightvit/window.hpp"

namespace lightvit {

WindowLayout WindowLayout::make(int64_t h, int64_t w, int64_t s) {
  if (h <= 0 || w <= 0 || s <= 0 || h % s != 0 || w % s != 0) {
    throw ConfigError("window size " + std::to_string(s) + " must divide the token grid " +
                      std::to_string(h) + "x" + std::to_string(w));
  }
  return WindowLayout{h, w, s};
}

std::vector<int64_t> WindowLayout::partition_index() const {
  std::vector<int64_t> idx(static_cast<size_t>(tokens()));
  const int64_t wcols = w / s;
  for (int64_t r = 0; r < h; ++r) {
    for (int64_t c = 0; c < w; ++c) {
      const int64_t win = (r / s) * wcols + (c / s);
      const int64_t within = (r % s) * s + (c % s);
      idx[static_cast<size_t>(win * s * s + within)] = r * w + c;
    }
  }
  return idx;
}

std::vector<int64_t> WindowLayout::reverse_index() const {
  const auto fwd = partition_index();
  std::vector<int64_t> inv(fwd.size());
  for (size_t i = 0; i < fwd.size(); ++i) inv[static_cast<size_t>(fwd[i])] = static_cast<int64_t>(i);
  return inv;
}

template <typename T>
std::pair<Tensor<T>, WindowLayout> window_partition(const Tensor<T>& x, int64_t s) {
  if (x.rank() != 3) {
    throw ShapeError("window_partition: expected [H,W,C], got " + shape_str(x.shape()));
  }
  const WindowLayout layout = WindowLayout::make(x.dim(0), x.dim(1), s);
  const int64_t c = x.dim(2);
  Tensor<T> flat = reshape(x, {layout.tokens(), c});
  Tensor<T> part = index_rows(flat, layout.partition_index());
  return {reshape(part, {layout.windows(), s * s, c}), layout};
}

template <typename T>
Tensor<T> window_reverse(const Tensor<T>& wnd, const WindowLayout& layout) {
  if (wnd.rank() != 3 || wnd.dim(0) != layout.windows() || wnd.dim(1) != layout.s * layout.s) {
    throw ShapeError("window_reverse: tensor " + shape_str(wnd.shape()) +
                     " does not match layout " + std::to_string(layout.h) + "x" +
                     std::to_string(layout.w) + "/" + std::to_string(layout.s));
  }
  const int64_t c = wnd.dim(2);
  Tensor<T> flat = reshape(wnd, {layout.tokens(), c});
  Tensor<T> grid = index_rows(flat, layout.reverse_index());
  return reshape(grid, {layout.h, layout.w, c});
}

template <typename T>
Tensor<T> partition_tokens(const Tensor<T>& x2d, const WindowLayout& layout) {
  if (x2d.rank() != 2 || x2d.dim(0) != layout.tokens()) {
    throw ShapeError("partition_tokens: expected [" + std::to_string(layout.tokens()) +
                     ", C], got " + shape_str(x2d.shape()));
  }
  return index_rows(x2d, layout.partition_index());
}

template <typename T>
Tensor<T> reverse_tokens(const Tensor<T>& w2d, const WindowLayout& layout) {
  if (w2d.rank() != 2 || w2d.dim(0) != layout.tokens()) {
    throw ShapeError("reverse_tokens: expected [" + std::to_string(layout.tokens()) + ", C], got " +
                     shape_str(w2d.shape()));
  }
  return index_rows(w2d, layout.reverse_index());
}

#define LIGHTVIT_INSTANTIATE_WINDOW(T)                                                  \
  template std::pair<Tensor<T>, WindowLayout> window_partition(const Tensor<T>&, int64_t); \
  template Tensor<T> window_reverse(const Tensor<T>&, const WindowLayout&);             \
  template Tensor<T> partition_tokens(const Tensor<T>&, const WindowLayout&);           \
  template Tensor<T> reverse_tokens(const Tensor<T>&, const WindowLayout&);

LIGHTVIT_INSTANTIATE_WINDOW(float)
LIGHTVIT_INSTANTIATE_WINDOW(double)

#undef LIGHTVIT_INSTANTIATE_WINDOW

}  // namespace lightvit
