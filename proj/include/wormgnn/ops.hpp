#pragma once

// The closed set of differentiable operations used by the models.
//
// Broadcasting is deliberately narrow: the binary element-wise ops accept a
// right operand whose shape equals the left shape or a trailing suffix of it
// (a bias [F] against activations [B, F], a mask [N, N] against [B, N, N]).

#include <cstddef>
#include <vector>

#include "wormgnn/tensor.hpp"

namespace wormgnn::ad {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);

/// [M, K] x [K, N] -> [M, N]
Tensor matmul(const Tensor& a, const Tensor& b);
/// [B, M, K] x [B, K, N] -> [B, M, N]
Tensor bmm(const Tensor& a, const Tensor& b);
/// Independent weights per group: [B, G, I] x [G, I, O] -> [B, G, O]
Tensor grouped_matmul(const Tensor& x, const Tensor& w);

Tensor relu(const Tensor& a);  // subgradient 0 at 0
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
/// Natural log of max(a, 1e-300).
Tensor log(const Tensor& a);

/// softmax(a / temperature) along axis; temperature must be > 0.
Tensor softmax(const Tensor& a, std::size_t axis, double temperature = 1.0);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);
Tensor reshape(const Tensor& a, Shape shape);
/// Repeats a along a new leading axis: [...] -> [count, ...]
Tensor repeat_leading(const Tensor& a, std::size_t count);
/// [G, ...] -> [G * count, ...], each leading slice repeated `count` times in place.
Tensor repeat_interleave(const Tensor& a, std::size_t count);

/// Reductions drop the reduced axis.
Tensor sum(const Tensor& a, std::size_t axis);
Tensor mean(const Tensor& a, std::size_t axis);
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

/// [B, N, F] and [B, N, F] -> [B, N, N, F] with out[b,i,j] = u[b,i] + v[b,j].
/// A linear layer on the concatenation (h_i, h_j) splits into exactly this
/// sum of two half-width products.
Tensor pairwise_add(const Tensor& u, const Tensor& v);

/// Running statistics for batch normalization (exponential moving average).
struct BatchNormStats {
    std::vector<double> mean;
    std::vector<double> var;
    double momentum = 0.1;
    double eps = 1e-5;

    static BatchNormStats identity(std::size_t features);
};

/// Normalizes x [B, ...F] over axis 0 per feature, then applies gamma/beta
/// (shape F). In training mode batch statistics are used and the running
/// statistics are updated; otherwise the frozen running statistics are used.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormStats& stats, bool training);

struct LstmState {
    Tensor hidden;
    Tensor cell;
};

/// Gated recurrent cell. x [B, I], state [B, H], w_input [I, 4H],
/// w_hidden [H, 4H], bias [4H]; gate order input, forget, output, candidate.
LstmState lstm_cell(const Tensor& x, const LstmState& state, const Tensor& w_input,
                    const Tensor& w_hidden, const Tensor& bias);

}  // namespace wormgnn::ad
