#include "vicc/tensor.hpp"

#include <algorithm>
#include <cstring>

#include "vicc/errors.hpp"

namespace vicc {

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.h != b.h || a.w != b.w) throw_contract("concat_channels: spatial shape mismatch");
  Tensor out(a.ch + b.ch, a.h, a.w);
  std::memcpy(out.v.data(), a.v.data(), a.size() * sizeof(double));
  std::memcpy(out.v.data() + a.size(), b.v.data(), b.size() * sizeof(double));
  return out;
}

Tensor slice_channels(const Tensor& x, int from, int count) {
  if (from < 0 || count < 0 || from + count > x.ch)
    throw_contract("slice_channels: channel range out of bounds");
  Tensor out(count, x.h, x.w);
  std::memcpy(out.v.data(), x.plane(from), out.size() * sizeof(double));
  return out;
}

void add_inplace(Tensor& y, const Tensor& x) {
  if (!y.same_shape(x)) throw_contract("add_inplace: shape mismatch");
  for (size_t i = 0; i < y.size(); ++i) y.v[i] += x.v[i];
}

}  // namespace vicc
