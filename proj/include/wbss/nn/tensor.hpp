#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace wbss::nn {

/// Dense batch x channels x length activation block, row-major.
template <typename T>
struct Tensor {
  std::size_t batch = 0;
  std::size_t channels = 0;
  std::size_t length = 0;
  std::vector<T> data;

  Tensor() = default;
  Tensor(std::size_t b, std::size_t c, std::size_t l, T fill = T{}) : batch(b), channels(c), length(l), data(b * c * l, fill) {}

  void resize(std::size_t b, std::size_t c, std::size_t l) {
    batch = b;
    channels = c;
    length = l;
    data.assign(b * c * l, T{});
  }

  std::size_t sample_size() const { return channels * length; }

  T* row(std::size_t b, std::size_t c) { return data.data() + (b * channels + c) * length; }
  const T* row(std::size_t b, std::size_t c) const { return data.data() + (b * channels + c) * length; }

  T* sample(std::size_t b) { return data.data() + b * channels * length; }
  const T* sample(std::size_t b) const { return data.data() + b * channels * length; }
};

}  // namespace wbss::nn
