#pragma once

#include "deblurkit/rng.hpp"
#include "deblurkit/tensor.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace dbk {

/// Ordered (name, tensor) pairs. The order is the checkpoint layout, so block
/// collect() methods must append deterministically.
struct NamedParam {
    std::string name;
    Tensor tensor;
};
using ParamList = std::vector<NamedParam>;

inline std::int64_t parameter_count(const ParamList& params) {
    std::int64_t total = 0;
    for (const NamedParam& p : params) total += p.tensor.numel();
    return total;
}

namespace init {

/// He initialization: N(0, sqrt(2 / fan_in)) with fan_in = in_c/groups * kh * kw.
inline Tensor conv_weight(int out_c, int in_c_per_group, int kh, int kw, Rng& rng) {
    const TensorShape s{out_c, in_c_per_group, kh, kw};
    const double stddev = std::sqrt(2.0 / (static_cast<double>(in_c_per_group) * kh * kw));
    std::vector<float> v(static_cast<std::size_t>(s.numel()));
    for (float& x : v) x = static_cast<float>(rng.normal(0.0, stddev));
    return Tensor::from_data(std::move(v), s, /*requires_grad=*/true);
}

inline Tensor zeros_param(TensorShape s) { return Tensor::zeros(s, /*requires_grad=*/true); }

inline Tensor ones_param(TensorShape s) {
    return Tensor::full(s, 1.0f, /*requires_grad=*/true);
}

} // namespace init

} // namespace dbk
