#include "wormgnn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

namespace wormgnn::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;
using ConstStrided = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
using MutStrided = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;

// Gradient buffer of parent i, or nullptr when that parent needs none.
std::vector<double>* grad_of(detail::Node& n, std::size_t i) {
    auto& p = *n.parents[i];
    return p.requires_grad ? &p.grad : nullptr;
}

const std::vector<double>& value_of(const detail::Node& n, std::size_t i) { return n.parents[i]->value; }

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
    if (t.rank() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                         to_string(t.shape()));
    }
}

// b must equal a's shape or a trailing suffix of it. Returns numel(b).
std::size_t broadcast_inner(const char* op, const Shape& a, const Shape& b) {
    if (b.size() > a.size() || !std::equal(b.begin(), b.end(), a.end() - static_cast<std::ptrdiff_t>(b.size()))) {
        shape_mismatch(op, a, b);
    }
    return numel(b);
}

struct AxisSplit {
    std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const char* op, const Shape& s, std::size_t axis) {
    if (axis >= s.size()) {
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " +
                         to_string(s));
    }
    AxisSplit r;
    for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
    r.len = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
    return r;
}

template <typename Fwd, typename Deriv>
Tensor unary(const char* op, const Tensor& a, Fwd fwd, Deriv deriv) {
    const auto& x = a.values();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i]);
    return Tensor::from_op(op, a.shape(), std::move(out), {a}, [deriv](detail::Node& n) {
        auto* ga = grad_of(n, 0);
        const auto& x = value_of(n, 0);
        for (std::size_t i = 0; i < x.size(); ++i) (*ga)[i] += n.grad[i] * deriv(x[i], n.value[i]);
    });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    const std::size_t inner = broadcast_inner("add", a.shape(), b.shape());
    std::vector<double> out(a.values().begin(), a.values().end());
    const auto& bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % inner];
    return Tensor::from_op("add", a.shape(), std::move(out), {a, b}, [inner](detail::Node& n) {
        if (auto* ga = grad_of(n, 0)) {
            for (std::size_t i = 0; i < n.grad.size(); ++i) (*ga)[i] += n.grad[i];
        }
        if (auto* gb = grad_of(n, 1)) {
            for (std::size_t i = 0; i < n.grad.size(); ++i) (*gb)[i % inner] += n.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    const std::size_t inner = broadcast_inner("sub", a.shape(), b.shape());
    std::vector<double> out(a.values().begin(), a.values().end());
    const auto& bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i % inner];
    return Tensor::from_op("sub", a.shape(), std::move(out), {a, b}, [inner](detail::Node& n) {
        if (auto* ga = grad_of(n, 0)) {
            for (std::size_t i = 0; i < n.grad.size(); ++i) (*ga)[i] += n.grad[i];
        }
        if (auto* gb = grad_of(n, 1)) {
            for (std::size_t i = 0; i < n.grad.size(); ++i) (*gb)[i % inner] -= n.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    const std::size_t inner = broadcast_inner("mul", a.shape(), b.shape());
    std::vector<double> out(a.values().begin(), a.values().end());
    const auto& bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i % inner];
    return Tensor::from_op("mul", a.shape(), std::move(out), {a, b}, [inner](detail::Node& n) {
        const auto& av = value_of(n, 0);
        const auto& bv = value_of(n, 1);
        if (auto* ga = grad_of(n, 0)) {
            for (std::size_t i = 0; i < n.grad.size(); ++i) (*ga)[i] += n.grad[i] * bv[i % inner];
        }
        if (auto* gb = grad_of(n, 1)) {
            for (std::size_t i = 0; i < n.grad.size(); ++i) (*gb)[i % inner] += n.grad[i] * av[i];
        }
    });
}

Tensor scale(const Tensor& a, double factor) {
    return unary("scale", a, [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double offset) {
    return unary("add_scalar", a, [offset](double x) { return x + offset; }, [](double, double) { return 1.0; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank("matmul", a, 2);
    require_rank("matmul", b, 2);
    const std::size_t m = a.dim(0), k = a.dim(1), p = b.dim(1);
    if (b.dim(0) != k) shape_mismatch("matmul", a.shape(), b.shape());
    std::vector<double> out(m * p);
    const auto ei = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
    MutMap(out.data(), ei(m), ei(p)).noalias() =
        ConstMap(a.values().data(), ei(m), ei(k)) * ConstMap(b.values().data(), ei(k), ei(p));
    return Tensor::from_op("matmul", {m, p}, std::move(out), {a, b}, [m, k, p, ei](detail::Node& n) {
        ConstMap g(n.grad.data(), ei(m), ei(p));
        if (auto* ga = grad_of(n, 0)) {
            MutMap(ga->data(), ei(m), ei(k)).noalias() += g * ConstMap(value_of(n, 1).data(), ei(k), ei(p)).transpose();
        }
        if (auto* gb = grad_of(n, 1)) {
            MutMap(gb->data(), ei(k), ei(p)).noalias() += ConstMap(value_of(n, 0).data(), ei(m), ei(k)).transpose() * g;
        }
    });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
    require_rank("bmm", a, 3);
    require_rank("bmm", b, 3);
    const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2), p = b.dim(2);
    if (b.dim(0) != batch || b.dim(1) != k) shape_mismatch("bmm", a.shape(), b.shape());
    const auto ei = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
    std::vector<double> out(batch * m * p);
    for (std::size_t i = 0; i < batch; ++i) {
        MutMap(out.data() + i * m * p, ei(m), ei(p)).noalias() =
            ConstMap(a.values().data() + i * m * k, ei(m), ei(k)) * ConstMap(b.values().data() + i * k * p, ei(k), ei(p));
    }
    return Tensor::from_op("bmm", {batch, m, p}, std::move(out), {a, b}, [batch, m, k, p, ei](detail::Node& n) {
        const auto& av = value_of(n, 0);
        const auto& bv = value_of(n, 1);
        auto* ga = grad_of(n, 0);
        auto* gb = grad_of(n, 1);
        for (std::size_t i = 0; i < batch; ++i) {
            ConstMap g(n.grad.data() + i * m * p, ei(m), ei(p));
            if (ga) {
                MutMap(ga->data() + i * m * k, ei(m), ei(k)).noalias() +=
                    g * ConstMap(bv.data() + i * k * p, ei(k), ei(p)).transpose();
            }
            if (gb) {
                MutMap(gb->data() + i * k * p, ei(k), ei(p)).noalias() +=
                    ConstMap(av.data() + i * m * k, ei(m), ei(k)).transpose() * g;
            }
        }
    });
}

Tensor grouped_matmul(const Tensor& x, const Tensor& w) {
    require_rank("grouped_matmul", x, 3);
    require_rank("grouped_matmul", w, 3);
    const std::size_t batch = x.dim(0), groups = x.dim(1), in = x.dim(2), out_dim = w.dim(2);
    if (w.dim(0) != groups || w.dim(1) != in) shape_mismatch("grouped_matmul", x.shape(), w.shape());
    const auto ei = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
    std::vector<double> out(batch * groups * out_dim);
    for (std::size_t g = 0; g < groups; ++g) {
        ConstStrided xg(x.values().data() + g * in, ei(batch), ei(in), Eigen::OuterStride<>(ei(groups * in)));
        MutStrided og(out.data() + g * out_dim, ei(batch), ei(out_dim), Eigen::OuterStride<>(ei(groups * out_dim)));
        og.noalias() = xg * ConstMap(w.values().data() + g * in * out_dim, ei(in), ei(out_dim));
    }
    return Tensor::from_op(
        "grouped_matmul", {batch, groups, out_dim}, std::move(out), {x, w},
        [batch, groups, in, out_dim, ei](detail::Node& n) {
            const auto& xv = value_of(n, 0);
            const auto& wv = value_of(n, 1);
            auto* gx = grad_of(n, 0);
            auto* gw = grad_of(n, 1);
            for (std::size_t g = 0; g < groups; ++g) {
                ConstStrided go(n.grad.data() + g * out_dim, ei(batch), ei(out_dim),
                                Eigen::OuterStride<>(ei(groups * out_dim)));
                if (gx) {
                    MutStrided(gx->data() + g * in, ei(batch), ei(in), Eigen::OuterStride<>(ei(groups * in))).noalias() +=
                        go * ConstMap(wv.data() + g * in * out_dim, ei(in), ei(out_dim)).transpose();
                }
                if (gw) {
                    ConstStrided xg(xv.data() + g * in, ei(batch), ei(in), Eigen::OuterStride<>(ei(groups * in)));
                    MutMap(gw->data() + g * in * out_dim, ei(in), ei(out_dim)).noalias() += xg.transpose() * go;
                }
            }
        });
}

Tensor relu(const Tensor& a) {
    return unary("relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
                 [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
    return unary("sigmoid", a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                 [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& a) {
    return unary("tanh", a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor log(const Tensor& a) {
    static constexpr double tiny = 1e-300;
    return unary("log", a, [](double x) { return std::log(std::max(x, tiny)); },
                 [](double x, double) { return 1.0 / std::max(x, tiny); });
}

Tensor softmax(const Tensor& a, std::size_t axis, double temperature) {
    if (!(temperature > 0.0)) {
        throw std::invalid_argument("softmax: temperature must be > 0, got " + std::to_string(temperature));
    }
    const auto sp = split_axis("softmax", a.shape(), axis);
    const auto& x = a.values();
    std::vector<double> out(x.size());
    for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t in = 0; in < sp.inner; ++in) {
            const std::size_t base = o * sp.len * sp.inner + in;
            double mx = x[base];
            for (std::size_t k = 1; k < sp.len; ++k) mx = std::max(mx, x[base + k * sp.inner]);
            double total = 0.0;
            for (std::size_t k = 0; k < sp.len; ++k) {
                const double e = std::exp((x[base + k * sp.inner] - mx) / temperature);
                out[base + k * sp.inner] = e;
                total += e;
            }
            for (std::size_t k = 0; k < sp.len; ++k) out[base + k * sp.inner] /= total;
        }
    }
    return Tensor::from_op("softmax", a.shape(), std::move(out), {a}, [sp, temperature](detail::Node& n) {
        auto* ga = grad_of(n, 0);
        for (std::size_t o = 0; o < sp.outer; ++o) {
            for (std::size_t in = 0; in < sp.inner; ++in) {
                const std::size_t base = o * sp.len * sp.inner + in;
                double dot = 0.0;
                for (std::size_t k = 0; k < sp.len; ++k) {
                    const std::size_t idx = base + k * sp.inner;
                    dot += n.grad[idx] * n.value[idx];
                }
                for (std::size_t k = 0; k < sp.len; ++k) {
                    const std::size_t idx = base + k * sp.inner;
                    (*ga)[idx] += n.value[idx] * (n.grad[idx] - dot) / temperature;
                }
            }
        }
    });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    const Shape& first = parts.front().shape();
    if (axis >= first.size()) throw ShapeError("concat: axis out of range for shape " + to_string(first));
    Shape out_shape = first;
    out_shape[axis] = 0;
    std::vector<std::size_t> lens;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != first.size()) shape_mismatch("concat", first, s);
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i != axis && s[i] != first[i]) shape_mismatch("concat", first, s);
        }
        lens.push_back(s[axis]);
        out_shape[axis] += s[axis];
    }
    const auto sp = split_axis("concat", out_shape, axis);
    std::vector<double> out(numel(out_shape));
    std::size_t offset = 0;
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
        const auto& v = parts[pi].values();
        const std::size_t chunk = lens[pi] * sp.inner;
        for (std::size_t o = 0; o < sp.outer; ++o) {
            std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(o * chunk), chunk,
                        out.begin() + static_cast<std::ptrdiff_t>(o * sp.len * sp.inner + offset));
        }
        offset += chunk;
    }
    return Tensor::from_op("concat", out_shape, std::move(out), parts, [sp, lens](detail::Node& n) {
        std::size_t offset = 0;
        for (std::size_t pi = 0; pi < lens.size(); ++pi) {
            const std::size_t chunk = lens[pi] * sp.inner;
            if (auto* g = grad_of(n, pi)) {
                for (std::size_t o = 0; o < sp.outer; ++o) {
                    for (std::size_t i = 0; i < chunk; ++i) (*g)[o * chunk + i] += n.grad[o * sp.len * sp.inner + offset + i];
                }
            }
            offset += chunk;
        }
    });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
    const auto sp = split_axis("slice", a.shape(), axis);
    if (begin >= end || end > sp.len) {
        throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") invalid for axis of length " + std::to_string(sp.len));
    }
    Shape out_shape = a.shape();
    out_shape[axis] = end - begin;
    const std::size_t chunk = (end - begin) * sp.inner;
    const auto& v = a.values();
    std::vector<double> out(sp.outer * chunk);
    for (std::size_t o = 0; o < sp.outer; ++o) {
        std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(o * sp.len * sp.inner + begin * sp.inner), chunk,
                    out.begin() + static_cast<std::ptrdiff_t>(o * chunk));
    }
    return Tensor::from_op("slice", out_shape, std::move(out), {a}, [sp, begin, chunk](detail::Node& n) {
        auto* g = grad_of(n, 0);
        for (std::size_t o = 0; o < sp.outer; ++o) {
            for (std::size_t i = 0; i < chunk; ++i) (*g)[o * sp.len * sp.inner + begin * sp.inner + i] += n.grad[o * chunk + i];
        }
    });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (numel(shape) != a.numel()) shape_mismatch("reshape", a.shape(), shape);
    std::vector<double> out(a.values().begin(), a.values().end());
    return Tensor::from_op("reshape", std::move(shape), std::move(out), {a}, [](detail::Node& n) {
        auto* g = grad_of(n, 0);
        for (std::size_t i = 0; i < n.grad.size(); ++i) (*g)[i] += n.grad[i];
    });
}

Tensor repeat_leading(const Tensor& a, std::size_t count) {
    if (count == 0) throw ShapeError("repeat_leading: count must be positive");
    Shape out_shape{count};
    out_shape.insert(out_shape.end(), a.shape().begin(), a.shape().end());
    const std::size_t inner = a.numel();
    std::vector<double> out;
    out.reserve(count * inner);
    for (std::size_t c = 0; c < count; ++c) out.insert(out.end(), a.values().begin(), a.values().end());
    return Tensor::from_op("repeat_leading", std::move(out_shape), std::move(out), {a}, [inner](detail::Node& n) {
        auto* g = grad_of(n, 0);
        for (std::size_t i = 0; i < n.grad.size(); ++i) (*g)[i % inner] += n.grad[i];
    });
}

Tensor repeat_interleave(const Tensor& a, std::size_t count) {
    if (count == 0) throw ShapeError("repeat_interleave: count must be positive");
    if (a.rank() == 0) throw ShapeError("repeat_interleave: needs a leading axis");
    Shape out_shape = a.shape();
    out_shape[0] *= count;
    const std::size_t inner = a.numel() / a.dim(0);
    const auto& v = a.values();
    std::vector<double> out;
    out.reserve(count * a.numel());
    for (std::size_t g = 0; g < a.dim(0); ++g)
        for (std::size_t c = 0; c < count; ++c) out.insert(out.end(), v.begin() + g * inner, v.begin() + (g + 1) * inner);
    return Tensor::from_op("repeat_interleave", std::move(out_shape), std::move(out), {a},
                           [inner, count](detail::Node& n) {
                               auto* g = grad_of(n, 0);
                               for (std::size_t i = 0; i < n.grad.size(); ++i) {
                                   (*g)[(i / (inner * count)) * inner + i % inner] += n.grad[i];
                               }
                           });
}

Tensor sum(const Tensor& a, std::size_t axis) {
    const auto sp = split_axis("sum", a.shape(), axis);
    Shape out_shape = a.shape();
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
    const auto& v = a.values();
    std::vector<double> out(sp.outer * sp.inner, 0.0);
    for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t k = 0; k < sp.len; ++k) {
            for (std::size_t i = 0; i < sp.inner; ++i) out[o * sp.inner + i] += v[(o * sp.len + k) * sp.inner + i];
        }
    }
    return Tensor::from_op("sum", std::move(out_shape), std::move(out), {a}, [sp](detail::Node& n) {
        auto* g = grad_of(n, 0);
        for (std::size_t o = 0; o < sp.outer; ++o) {
            for (std::size_t k = 0; k < sp.len; ++k) {
                for (std::size_t i = 0; i < sp.inner; ++i) (*g)[(o * sp.len + k) * sp.inner + i] += n.grad[o * sp.inner + i];
            }
        }
    });
}

Tensor mean(const Tensor& a, std::size_t axis) {
    const double len = static_cast<double>(a.dim(axis));
    return scale(sum(a, axis), 1.0 / len);
}

Tensor sum_all(const Tensor& a) {
    double total = 0.0;
    for (double x : a.values()) total += x;
    return Tensor::from_op("sum_all", {}, {total}, {a}, [](detail::Node& n) {
        auto* g = grad_of(n, 0);
        for (auto& x : *g) x += n.grad[0];
    });
}

Tensor mean_all(const Tensor& a) {
    if (a.numel() == 0) throw ShapeError("mean_all: empty tensor");
    return scale(sum_all(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor pairwise_add(const Tensor& u, const Tensor& v) {
    require_rank("pairwise_add", u, 3);
    if (u.shape() != v.shape()) shape_mismatch("pairwise_add", u.shape(), v.shape());
    const std::size_t batch = u.dim(0), nodes = u.dim(1), feat = u.dim(2);
    const auto& uv = u.values();
    const auto& vv = v.values();
    std::vector<double> out(batch * nodes * nodes * feat);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t i = 0; i < nodes; ++i) {
            const double* ui = uv.data() + (b * nodes + i) * feat;
            for (std::size_t j = 0; j < nodes; ++j) {
                const double* vj = vv.data() + (b * nodes + j) * feat;
                double* o = out.data() + ((b * nodes + i) * nodes + j) * feat;
                for (std::size_t f = 0; f < feat; ++f) o[f] = ui[f] + vj[f];
            }
        }
    }
    return Tensor::from_op("pairwise_add", {batch, nodes, nodes, feat}, std::move(out), {u, v},
                           [batch, nodes, feat](detail::Node& n) {
                               auto* gu = grad_of(n, 0);
                               auto* gv = grad_of(n, 1);
                               for (std::size_t b = 0; b < batch; ++b) {
                                   for (std::size_t i = 0; i < nodes; ++i) {
                                       for (std::size_t j = 0; j < nodes; ++j) {
                                           const double* g = n.grad.data() + ((b * nodes + i) * nodes + j) * feat;
                                           for (std::size_t f = 0; f < feat; ++f) {
                                               if (gu) (*gu)[(b * nodes + i) * feat + f] += g[f];
                                               if (gv) (*gv)[(b * nodes + j) * feat + f] += g[f];
                                           }
                                       }
                                   }
                               }
                           });
}

BatchNormStats BatchNormStats::identity(std::size_t features) {
    BatchNormStats s;
    s.mean.assign(features, 0.0);
    s.var.assign(features, 1.0);
    return s;
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats, bool training) {
    if (x.rank() < 2) throw ShapeError("batch_norm: input needs a batch axis, got shape " + to_string(x.shape()));
    const std::size_t batch = x.dim(0);
    const std::size_t feat = x.numel() / std::max<std::size_t>(batch, 1);
    const Shape feat_shape(x.shape().begin() + 1, x.shape().end());
    if (gamma.shape() != feat_shape) shape_mismatch("batch_norm", x.shape(), gamma.shape());
    if (beta.shape() != feat_shape) shape_mismatch("batch_norm", x.shape(), beta.shape());
    if (stats.mean.empty()) stats = BatchNormStats::identity(feat);
    if (stats.mean.size() != feat || stats.var.size() != feat) {
        throw ShapeError("batch_norm: running statistics hold " + std::to_string(stats.mean.size()) +
                         " features, input has " + std::to_string(feat));
    }
    if (batch == 0) throw ShapeError("batch_norm: empty batch");

    const auto& xv = x.values();
    const auto& gv = gamma.values();
    const auto& bv = beta.values();
    std::vector<double> mu(feat, 0.0), inv_std(feat);
    if (training) {
        std::vector<double> var(feat, 0.0);
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t f = 0; f < feat; ++f) mu[f] += xv[b * feat + f];
        for (auto& m : mu) m /= static_cast<double>(batch);
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t f = 0; f < feat; ++f) {
                const double d = xv[b * feat + f] - mu[f];
                var[f] += d * d;
            }
        for (std::size_t f = 0; f < feat; ++f) {
            const double biased = var[f] / static_cast<double>(batch);
            inv_std[f] = 1.0 / std::sqrt(biased + stats.eps);
            const double unbiased = batch > 1 ? var[f] / static_cast<double>(batch - 1) : biased;
            stats.mean[f] = (1.0 - stats.momentum) * stats.mean[f] + stats.momentum * mu[f];
            stats.var[f] = (1.0 - stats.momentum) * stats.var[f] + stats.momentum * unbiased;
        }
    } else {
        for (std::size_t f = 0; f < feat; ++f) {
            mu[f] = stats.mean[f];
            inv_std[f] = 1.0 / std::sqrt(stats.var[f] + stats.eps);
        }
    }

    std::vector<double> xhat(xv.size()), out(xv.size());
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t f = 0; f < feat; ++f) {
            const std::size_t i = b * feat + f;
            xhat[i] = (xv[i] - mu[f]) * inv_std[f];
            out[i] = gv[f] * xhat[i] + bv[f];
        }
    }
    return Tensor::from_op(
        "batch_norm", x.shape(), std::move(out), {x, gamma, beta},
        [batch, feat, training, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& n) {
            const auto& gam = value_of(n, 1);
            std::vector<double> sum_g(feat, 0.0), sum_gx(feat, 0.0);
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t f = 0; f < feat; ++f) {
                    sum_g[f] += n.grad[b * feat + f];
                    sum_gx[f] += n.grad[b * feat + f] * xhat[b * feat + f];
                }
            }
            if (auto* gg = grad_of(n, 1)) {
                for (std::size_t f = 0; f < feat; ++f) (*gg)[f] += sum_gx[f];
            }
            if (auto* gb = grad_of(n, 2)) {
                for (std::size_t f = 0; f < feat; ++f) (*gb)[f] += sum_g[f];
            }
            if (auto* gx = grad_of(n, 0)) {
                const double inv_b = 1.0 / static_cast<double>(batch);
                for (std::size_t b = 0; b < batch; ++b) {
                    for (std::size_t f = 0; f < feat; ++f) {
                        const std::size_t i = b * feat + f;
                        if (training) {
                            (*gx)[i] += gam[f] * inv_std[f] * (n.grad[i] - inv_b * sum_g[f] - xhat[i] * inv_b * sum_gx[f]);
                        } else {
                            (*gx)[i] += gam[f] * inv_std[f] * n.grad[i];
                        }
                    }
                }
            }
        });
}

LstmState lstm_cell(const Tensor& x, const LstmState& state, const Tensor& w_input, const Tensor& w_hidden,
                    const Tensor& bias) {
    const std::size_t hidden = state.hidden.dim(1);
    if (w_hidden.rank() != 2 || w_hidden.dim(1) != 4 * hidden) shape_mismatch("lstm_cell", state.hidden.shape(), w_hidden.shape());
    const Tensor gates = add(add(matmul(x, w_input), matmul(state.hidden, w_hidden)), bias);
    const Tensor in_gate = sigmoid(slice(gates, 1, 0, hidden));
    const Tensor forget_gate = sigmoid(slice(gates, 1, hidden, 2 * hidden));
    const Tensor out_gate = sigmoid(slice(gates, 1, 2 * hidden, 3 * hidden));
    const Tensor candidate = tanh(slice(gates, 1, 3 * hidden, 4 * hidden));
    Tensor cell = add(mul(forget_gate, state.cell), mul(in_gate, candidate));
    Tensor h = mul(out_gate, tanh(cell));
    return {std::move(h), std::move(cell)};
}

}  // namespace wormgnn::ad
