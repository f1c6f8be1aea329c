#pragma once

#include <vector>

#include "wormgnn/random.hpp"
#include "wormgnn/tensor.hpp"

namespace testutil {

inline std::vector<double> random_values(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    wormgnn::Rng rng(seed);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}

inline wormgnn::ad::Tensor random_tensor(wormgnn::ad::Shape shape, std::uint64_t seed, double lo = -1.0,
                                         double hi = 1.0) {
    const auto n = wormgnn::ad::numel(shape);
    return wormgnn::ad::Tensor::constant(std::move(shape), random_values(n, seed, lo, hi));
}

}  // namespace testutil
