#pragma once

#include <functional>
#include <vector>

#include "wormgnn/tensor.hpp"

namespace wormgnn::ad {

inline constexpr double kGradFloor = 1e-5;

/// Compares reverse-mode gradients against central differences.
///
/// The error of an entry is |analytic - numeric| / max(kGradFloor, |analytic| + |numeric|),
/// taken at the better of two steps, `step` and `step / 10`; the result is the
/// maximum over entries. A wrong derivative disagrees at every step, while a
/// ReLU kink that happens to lie inside the wider stencil does not survive the
/// narrower one. The floor keeps entries whose true gradient is zero (a bias
/// feeding batch norm, say) from turning central-difference roundoff into
/// relative error.
/// `fn` receives a fresh leaf holding the input values and must return a scalar.
double grad_check(const std::function<Tensor(const Tensor&)>& fn, const Tensor& input, double step = 1e-6);

/// Same measure over every entry of a set of existing leaves (model
/// parameters). `fn` rebuilds the graph from the current leaf values on
/// each call. Leaf gradients are cleared on return.
double grad_check_leaves(const std::function<Tensor()>& fn, std::vector<Tensor> leaves, double step = 1e-6);

}  // namespace wormgnn::ad
