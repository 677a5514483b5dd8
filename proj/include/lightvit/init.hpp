#pragma once

#include "lightvit/rng.hpp"
#include "lightvit/tensor.hpp"

namespace lightvit {

template <typename T>
Tensor<T> init_trunc_normal(Shape shape, double stddev, Rng& rng, GradTape<T>* tape = nullptr) {
  std::vector<T> v(static_cast<size_t>(numel_of(shape)));
  for (auto& e : v) e = static_cast<T>(rng.trunc_normal(stddev));
  return Tensor<T>::from_data(std::move(shape), std::move(v), tape);
}

template <typename T>
Tensor<T> init_zeros(Shape shape, GradTape<T>* tape = nullptr) {
  return Tensor<T>::zeros(std::move(shape), tape);
}

template <typename T>
Tensor<T> init_ones(Shape shape, GradTape<T>* tape = nullptr) {
  return Tensor<T>::full(std::move(shape), T(1), tape);
}

}  // namespace lightvit
