#pragma once

#include <cstddef>
#include <vector>

namespace vicc {

/// Dense real tensor, channel-major with row-major (row, col) planes.
struct Tensor {
  int ch = 0, h = 0, w = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(int ch_, int h_, int w_)
      : ch(ch_), h(h_), w(w_), v(static_cast<size_t>(ch_) * h_ * w_, 0.0) {}

  size_t plane_size() const { return static_cast<size_t>(h) * w; }
  size_t size() const { return v.size(); }

  double* plane(int c) { return v.data() + static_cast<size_t>(c) * plane_size(); }
  const double* plane(int c) const { return v.data() + static_cast<size_t>(c) * plane_size(); }

  double& at(int c, int r, int col) {
    return v[(static_cast<size_t>(c) * h + r) * w + col];
  }
  double at(int c, int r, int col) const {
    return v[(static_cast<size_t>(c) * h + r) * w + col];
  }

  bool same_shape(const Tensor& o) const { return ch == o.ch && h == o.h && w == o.w; }
};

Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor slice_channels(const Tensor& x, int from, int count);

/// y += x (shapes must match).
void add_inplace(Tensor& y, const Tensor& x);

}  // namespace vicc
