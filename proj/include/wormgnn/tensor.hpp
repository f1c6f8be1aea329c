#pragma once

// Minimal reverse-mode automatic differentiation over dense double tensors.
//
// A Tensor is a cheap handle onto a graph node. Operations return new nodes
// that remember their inputs when any input requires a gradient; calling
// backward() on a scalar root walks the graph once in reverse topological
// order and fills the gradients of every reachable leaf.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace wormgnn::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Raised when operand shapes violate an operation's shape rule.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until a backward pass reaches the node
    bool requires_grad = false;
    bool backward_done = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    // Propagates this node's grad into the grads of its parents.
    std::function<void(Node&)> backward;
};

}  // namespace detail

class Tensor {
public:
    Tensor() = default;

    static Tensor constant(Shape shape, std::vector<double> values);
    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    /// Leaf with requires_grad set.
    static Tensor leaf(Shape shape, std::vector<double> values);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const;
    std::span<const double> values() const;
    /// Writable view of a leaf's values (parameters, inputs). Throws for
    /// interior nodes, whose values are owned by the graph.
    std::span<double> mutable_values();
    double item() const;

    bool requires_grad() const;
    bool is_leaf() const;
    const char* op_name() const;

    bool has_grad() const;
    std::span<const double> grad() const;
    void zero_grad();

    /// Copy of the values with no graph history.
    Tensor detach() const;

    /// Root must be scalar. Leaves reachable from the root must not carry a
    /// gradient from a previous pass (call zero_grad()), and the same root
    /// cannot be differentiated twice.
    void backward() const;

    // Graph-construction hook used by the operation implementations.
    static Tensor from_op(const char* op, Shape shape, std::vector<double> values,
                          std::vector<Tensor> inputs, std::function<void(detail::Node&)> backward);

    const std::shared_ptr<detail::Node>& node() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    detail::Node& checked() const;

    std::shared_ptr<detail::Node> node_;
};

/// Named trainable tensor owned by a model.
struct Parameter {
    std::string name;
    Tensor tensor;
};

}  // namespace wormgnn::ad
