#pragma once

#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace idsis::testing {

// Central differences of a scalar function with respect to every element of `x`.
// `x` is perturbed in place and restored.
inline torch::Tensor numeric_gradient(const std::function<double()>& f, torch::Tensor x, double h = 1e-6) {
    torch::NoGradGuard no_grad;
    auto grad = torch::zeros_like(x);
    auto flat = x.view({-1});
    auto g = grad.view({-1});
    for (std::int64_t i = 0; i < flat.numel(); ++i) {
        const double original = flat[i].item<double>();
        flat[i] = original + h;
        const double up = f();
        flat[i] = original - h;
        const double down = f();
        flat[i] = original;
        g[i] = (up - down) / (2.0 * h);
    }
    return grad;
}

// ||analytic - numeric|| / max(||numeric||, tiny)
inline double relative_error(const torch::Tensor& analytic, const torch::Tensor& numeric) {
    const double diff = (analytic - numeric).norm().item<double>();
    const double scale = std::max(numeric.norm().item<double>(), 1e-12);
    return diff / scale;
}

}  // namespace idsis::testing
