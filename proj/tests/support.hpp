#pragma once

#include "deblurkit/rng.hpp"
#include "deblurkit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace dbk::test {

inline Tensor random_tensor(TensorShape s, Rng& rng, float lo = -1.0f, float hi = 1.0f,
                            bool requires_grad = true) {
    std::vector<float> v(static_cast<std::size_t>(s.numel()));
    for (float& x : v) x = static_cast<float>(rng.uniform(lo, hi));
    return Tensor::from_data(std::move(v), s, requires_grad);
}

/// Central finite differences vs the analytic gradient of a scalar loss.
/// loss_fn must rebuild the graph from the given inputs on every call.
/// Returns the worst relative error over all elements of all inputs.
///
/// Two float32 artifacts need care. Piecewise-linear activations make the
/// loss non-smooth: when a perturbation of +-h pushes some downstream
/// pre-activation across a kink, the central difference stops estimating the
/// one-sided derivative the tape computes, so disagreeing elements are
/// re-measured at smaller steps (a kink artifact vanishes once the step drops
/// below the distance to the kink; a genuine backward bug disagrees at every
/// step). And the loss itself is quantized to about one ulp of its magnitude,
/// so a finite difference carries irreducible noise of a few ulps of the loss
/// divided by the step; the error denominator takes that allowance into
/// account so the check never demands more precision than float32 can encode.
inline double gradcheck(std::vector<Tensor> inputs,
                        const std::function<Tensor()>& loss_fn, float h = 1e-2f) {
    for (Tensor& t : inputs) {
        t.grad_mut();
        t.zero_grad();
    }
    Tensor loss = loss_fn();
    loss.backward();
    const double loss_ulp =
        1.19e-7 * std::max(std::abs(static_cast<double>(loss.item())), 1.0);

    std::vector<std::vector<float>> analytic;
    for (Tensor& t : inputs)
        analytic.emplace_back(t.grad().begin(), t.grad().end());

    double worst = 0.0;
    NoGradGuard inference;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        auto data = inputs[k].data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const float orig = data[i];
            const double an = analytic[k][i];
            double err = 0.0;
            for (const float step : {h, 0.2f * h, 0.1f * h}) {
                data[i] = orig + step;
                const double f_plus = loss_fn().item();
                data[i] = orig - step;
                const double f_minus = loss_fn().item();
                data[i] = orig;
                const double fd = (f_plus - f_minus) / (2.0 * static_cast<double>(step));
                const double fd_noise = 6.0 * loss_ulp / (2.0 * step);
                const double denom =
                    std::max({std::abs(an) + std::abs(fd), 1e-2, fd_noise / 1e-3});
                err = std::abs(an - fd) / denom;
                if (err <= 5e-4) break;
            }
            worst = std::max(worst, err);
        }
    }
    return worst;
}

} // namespace dbk::test
