#include "wormgnn/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace wormgnn::ad {

namespace {

double scalar_output(const Tensor& out) {
    if (!out.shape().empty()) {
        throw ShapeError("grad_check: function output must be scalar, got shape " + to_string(out.shape()));
    }
    return out.item();
}

}  // namespace

double grad_check(const std::function<Tensor(const Tensor&)>& fn, const Tensor& input, double step) {
    Tensor leaf = Tensor::leaf(input.shape(), std::vector<double>(input.values().begin(), input.values().end()));
    return grad_check_leaves([&fn, &leaf] { return fn(leaf); }, {leaf}, step);
}

double grad_check_leaves(const std::function<Tensor()>& fn, std::vector<Tensor> leaves, double step) {
    if (!(step > 0.0)) throw std::invalid_argument("grad_check: step must be > 0");
    for (auto& l : leaves) l.zero_grad();
    const Tensor root = fn();
    scalar_output(root);
    // A graph that never touches a requires_grad leaf is constant: all
    // analytic derivatives are zero.
    if (root.requires_grad()) root.backward();

    double worst = 0.0;
    for (auto& leaf : leaves) {
        std::vector<double> analytic(leaf.numel(), 0.0);
        if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), analytic.begin());
        auto values = leaf.mutable_values();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            double best = std::numeric_limits<double>::infinity();
            for (const double h : {step, step / 10.0}) {
                values[i] = saved + h;
                const double up = scalar_output(fn());
                values[i] = saved - h;
                const double down = scalar_output(fn());
                values[i] = saved;
                const double numeric = (up - down) / (2.0 * h);
                best = std::min(best, std::abs(analytic[i] - numeric) /
                                          std::max(kGradFloor, std::abs(analytic[i]) + std::abs(numeric)));
            }
            worst = std::max(worst, best);
        }
        leaf.zero_grad();
    }
    return worst;
}

}  // namespace wormgnn::ad
