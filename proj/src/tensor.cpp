#include "wormgnn/tensor.hpp"

#include <sstream>
#include <unordered_set>

namespace wormgnn::ad {

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string to_string(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << ", ";
        out << shape[i];
    }
    out << ']';
    return out.str();
}

namespace {

std::shared_ptr<detail::Node> make_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
    if (numel(shape) != values.size()) {
        throw ShapeError("tensor: shape " + to_string(shape) + " needs " + std::to_string(numel(shape)) +
                         " values, got " + std::to_string(values.size()));
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return node;
}

}  // namespace

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
    return Tensor(make_leaf(std::move(shape), std::move(values), false));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const auto n = ad::numel(shape);
    return Tensor(make_leaf(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor(make_leaf({}, {value}, requires_grad)); }

Tensor Tensor::leaf(Shape shape, std::vector<double> values) {
    return Tensor(make_leaf(std::move(shape), std::move(values), true));
}

detail::Node& Tensor::checked() const {
    if (!node_) throw std::logic_error("tensor: use of an undefined tensor");
    return *node_;
}

const Shape& Tensor::shape() const { return checked().shape; }

std::size_t Tensor::dim(std::size_t axis) const {
    const auto& s = shape();
    if (axis >= s.size()) {
        throw ShapeError("tensor: axis " + std::to_string(axis) + " out of range for shape " + to_string(s));
    }
    return s[axis];
}

std::size_t Tensor::numel() const { return checked().value.size(); }

std::span<const double> Tensor::values() const { return checked().value; }

std::span<double> Tensor::mutable_values() {
    auto& n = checked();
    if (n.backward) throw std::logic_error("tensor: values of an interior node are read-only");
    return n.value;
}

double Tensor::item() const {
    const auto& n = checked();
    if (n.value.size() != 1) throw ShapeError("tensor: item() on shape " + to_string(n.shape));
    return n.value[0];
}

bool Tensor::requires_grad() const { return checked().requires_grad; }
bool Tensor::is_leaf() const { return !checked().backward; }
const char* Tensor::op_name() const { return checked().op; }

bool Tensor::has_grad() const { return !checked().grad.empty(); }

std::span<const double> Tensor::grad() const {
    const auto& n = checked();
    if (n.grad.empty()) throw std::logic_error("tensor: gradient not populated");
    return n.grad;
}

void Tensor::zero_grad() { checked().grad.clear(); }

Tensor Tensor::detach() const {
    const auto& n = checked();
    return constant(n.shape, n.value);
}

Tensor Tensor::from_op(const char* op, Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                       std::function<void(detail::Node&)> backward) {
    auto node = make_leaf(std::move(shape), std::move(values), false);
    node->op = op;
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
        node->requires_grad = true;
        node->parents.reserve(inputs.size());
        for (auto& in : inputs) node->parents.push_back(in.node_);
        node->backward = std::move(backward);
    }
    return Tensor(std::move(node));
}

void Tensor::backward() const {
    auto& root = checked();
    if (!root.shape.empty()) throw ShapeError("backward: root must be scalar, got shape " + to_string(root.shape));
    if (root.backward_done) throw std::logic_error("backward: already called on this root");
    if (!root.requires_grad) throw std::logic_error("backward: root does not depend on any requires_grad tensor");

    // Iterative post-order DFS; each node appears once in `order`.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack{{&root, 0}};
    seen.insert(&root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::Node* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (auto* n : order) {
        if (!n->backward && !n->grad.empty()) {
            throw std::logic_error("backward: a leaf already holds a gradient from an earlier pass; call zero_grad() first");
        }
    }
    for (auto* n : order) n->grad.assign(n->value.size(), 0.0);
    root.grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* n = *it;
        if (n->backward) n->backward(*n);
    }
    // Interior gradients are not needed after propagation.
    for (auto* n : order) {
        if (n->backward && n != &root) std::vector<double>().swap(n->grad);
    }
    root.backward_done = true;
}

}  // namespace wormgnn::ad
