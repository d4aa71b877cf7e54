#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

namespace cnf {

/// Length of freq_encode output for a d-dimensional input.
inline constexpr std::size_t freq_encoded_size(std::size_t dims, int n_freq) {
  return dims * 2 * static_cast<std::size_t>(n_freq);
}

/// Sinusoidal positional encoding. For each input dimension i and octave
/// k = 0..n_freq-1 emits sin(2^k pi x_i), cos(2^k pi x_i), dimension-major.
template <class S>
void freq_encode(std::span<const S> x, int n_freq, std::span<S> out) {
  std::size_t o = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    S scale = std::numbers::pi_v<S>;
    for (int k = 0; k < n_freq; ++k) {
      const S a = scale * x[i];
      out[o++] = std::sin(a);
      out[o++] = std::cos(a);
      scale *= S(2);
    }
  }
}

template <class S>
std::vector<S> freq_encode(std::span<const S> x, int n_freq) {
  std::vector<S> out(freq_encoded_size(x.size(), n_freq));
  freq_encode<S>(x, n_freq, out);
  return out;
}

}  // namespace cnf
