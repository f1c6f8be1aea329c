#include "wormgnn/models.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>
#include <stdexcept>

#include "wormgnn/labels.hpp"
#include "wormgnn/recording.hpp"

namespace wormgnn {

using ad::Tensor;

namespace {

template <typename E, std::size_t N>
E parse_enum(std::string_view s, const std::array<std::pair<E, std::string_view>, N>& table, const char* what) {
    for (const auto& [v, name] : table) {
        if (name == s) return v;
    }
    std::string options;
    for (const auto& [v, name] : table) options += (options.empty() ? "" : ", ") + std::string(name);
    throw std::invalid_argument(std::string("unknown ") + what + " '" + std::string(s) + "' (expected one of " +
                                options + ")");
}

template <typename E, std::size_t N>
std::string_view enum_name(E v, const std::array<std::pair<E, std::string_view>, N>& table) {
    for (const auto& [value, name] : table) {
        if (value == v) return name;
    }
    return "?";
}

constexpr std::array<std::pair<ModuleKind, std::string_view>, 4> kModuleKinds{
    {{ModuleKind::MLP, "mlp"}, {ModuleKind::NodeMLP, "node_mlp"}, {ModuleKind::GNN, "gnn"}, {ModuleKind::Linear, "linear"}}};
constexpr std::array<std::pair<Task, std::string_view>, 2> kTasks{{{Task::Classify, "classify"}, {Task::Predict, "predict"}}};
constexpr std::array<std::pair<EdgeMode, std::string_view>, 4> kEdgeModes{{{EdgeMode::Dynamic, "dynamic"},
                                                                           {EdgeMode::Static, "static"},
                                                                           {EdgeMode::Connectome, "connectome"},
                                                                           {EdgeMode::OneHot, "onehot"}}};
constexpr std::array<std::pair<Aggregation, std::string_view>, 2> kAggregations{
    {{Aggregation::Concatenate, "concatenate"}, {Aggregation::Sum, "sum"}}};

}  // namespace

std::string_view to_string(ModuleKind v) { return enum_name(v, kModuleKinds); }
std::string_view to_string(Task v) { return enum_name(v, kTasks); }
std::string_view to_string(EdgeMode v) { return enum_name(v, kEdgeModes); }
std::string_view to_string(Aggregation v) { return enum_name(v, kAggregations); }
ModuleKind parse_module_kind(std::string_view s) { return parse_enum(s, kModuleKinds, "module kind"); }
Task parse_task(std::string_view s) { return parse_enum(s, kTasks, "task"); }
EdgeMode parse_edge_mode(std::string_view s) { return parse_enum(s, kEdgeModes, "edge mode"); }
Aggregation parse_aggregation(std::string_view s) { return parse_enum(s, kAggregations, "aggregation"); }

std::size_t default_hidden_dim(Task task) { return task == Task::Classify ? 16 : 256; }

void ModelConfig::validate() const {
    if (hidden_dim == 0) throw std::invalid_argument("model: hidden_dim must be > 0");
    if (!(softmax_temperature > 0.0)) throw std::invalid_argument("model: softmax_temperature must be > 0");
    if (n_neurons == 0) throw std::invalid_argument("model: n_neurons must be > 0");
    if (static_window == 0) throw std::invalid_argument("model: static_window must be > 0");
    if (task == Task::Classify && n_states < 2) throw std::invalid_argument("model: n_states must be >= 2");
    if (recurrent && task != Task::Predict) throw std::invalid_argument("model: recurrent variants exist for the predict task only");
    if (recurrent && module_kind == ModuleKind::NodeMLP) throw std::invalid_argument("model: node_mlp has no recurrent variant");
    if (module_kind == ModuleKind::Linear && task != Task::Classify) {
        throw std::invalid_argument("model: the linear baseline is a classifier");
    }
}

double ModelConfig::edge_temperature() const {
    return edge_mode == EdgeMode::OneHot ? kOneHotTemperature : softmax_temperature;
}

// ---------------------------------------------------------------------------
// Connectome

AdjacencyMatrix parse_connectome_edges(const std::string& text, std::span<const std::string> neuron_names,
                                       bool include_self_edges, const std::string& source) {
    const auto n = static_cast<Eigen::Index>(neuron_names.size());
    AdjacencyMatrix out;
    out.mode = EdgeMode::Connectome;
    out.weights = Eigen::MatrixXd::Zero(n, n);
    auto index_of = [&](const std::string& name) -> Eigen::Index {
        const auto it = std::find(neuron_names.begin(), neuron_names.end(), name);
        return it == neuron_names.end() ? -1 : static_cast<Eigen::Index>(it - neuron_names.begin());
    };

    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream fields(line);
        std::string src, dst, weight_text, extra;
        if (!(fields >> src)) continue;
        if (!(fields >> dst >> weight_text) || (fields >> extra)) {
            throw DataError(source + ":" + std::to_string(line_no) + ": expected 'source target weight'");
        }
        double weight = 0.0;
        try {
            std::size_t used = 0;
            weight = std::stod(weight_text, &used);
            if (used != weight_text.size()) throw std::invalid_argument("trailing characters");
        } catch (const std::exception&) {
            throw DataError(source + ":" + std::to_string(line_no) + ": weight '" + weight_text + "' is not a number");
        }
        if (!(weight >= 0.0) || !std::isfinite(weight)) {
            throw DataError(source + ":" + std::to_string(line_no) + ": weight must be finite and >= 0");
        }
        const auto i = index_of(src), j = index_of(dst);
        if (i < 0 || j < 0) continue;
        out.weights(i, j) += weight;
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        const double row_max = out.weights.row(i).maxCoeff();
        if (row_max > 0.0) out.weights.row(i) /= row_max;
        out.weights(i, i) = include_self_edges ? 1.0 : 0.0;
    }
    return out;
}

AdjacencyMatrix load_connectome_edges(const std::filesystem::path& path, std::span<const std::string> neuron_names,
                                      bool include_self_edges) {
    std::ifstream in(path);
    if (!in) throw DataError(path.string() + ": cannot open connectome file");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_connectome_edges(buf.str(), neuron_names, include_self_edges, path.string());
}

// ---------------------------------------------------------------------------
// Model construction

Model::Model(ModelConfig config, std::uint64_t seed) : config_(config) {
    config_.validate();
    Rng rng(seed);
    const std::size_t n = config_.n_neurons;
    const std::size_t h = config_.hidden_dim;
    const std::size_t k = static_cast<std::size_t>(config_.n_states);
    const std::size_t agg = config_.aggregation == Aggregation::Concatenate ? 2 * n : 2;

    switch (config_.module_kind) {
        case ModuleKind::Linear:
            add_dense("head", 2 * n, k, rng);
            break;
        case ModuleKind::MLP: {
            std::size_t g_in = agg;
            if (config_.recurrent) {
                add_lstm("rnn", agg, h, rng);
                g_in = h;
            }
            add_mlp("g", g_in, h, rng);
            add_dense("head", h, config_.task == Task::Classify ? k : 2 * n, rng);
            break;
        }
        case ModuleKind::NodeMLP:
            add_grouped("g.l1", n, 2, h, rng);
            add_parameter("g.bn1.gamma", {n, h}, rng, -1.0);
            add_parameter("g.bn1.beta", {n, h}, rng, 0.0);
            add_grouped("g.l2", n, h, h, rng);
            add_parameter("g.bn2.gamma", {n, h}, rng, -1.0);
            add_parameter("g.bn2.beta", {n, h}, rng, 0.0);
            if (config_.task == Task::Classify) {
                add_dense("head", n * h, k, rng);
            } else {
                add_grouped("head", n, h, 2, rng);
            }
            break;
        case ModuleKind::GNN: {
            if (config_.edge_mode != EdgeMode::Connectome) {
                add_dense("enc.l1", 2, h, rng);
                add_dense("enc.l2", h, h, rng);
                const double bound = 1.0 / std::sqrt(static_cast<double>(2 * h));
                if (config_.aggregation == Aggregation::Concatenate) {
                    add_parameter("edge.l1.weight_src", {h, h}, rng, bound);
                    add_parameter("edge.l1.weight_dst", {h, h}, rng, bound);
                } else {
                    add_parameter("edge.l1.weight", {h, h}, rng, 1.0 / std::sqrt(static_cast<double>(h)));
                }
                add_parameter("edge.l1.bias", {h}, rng, 0.0);
                add_dense("edge.l2", h, 2, rng);
            }
            if (config_.task == Task::Classify) {
                add_mlp("g", agg, h, rng);
                add_dense("head", h, k, rng);
            } else {
                std::size_t g_in = 2;
                if (config_.recurrent) {
                    add_lstm("rnn", 2, h, rng);
                    g_in = h;
                }
                add_mlp("g", g_in, h, rng);
                add_dense("head", h, 2, rng);
            }
            break;
        }
    }
}

// bound > 0: uniform(-bound, bound); bound == 0: zeros; bound < 0: ones.
Tensor& Model::add_parameter(const std::string& name, ad::Shape shape, Rng& rng, double bound) {
    if (index_.count(name)) throw std::logic_error("model: duplicate parameter name " + name);
    std::vector<double> values(ad::numel(shape));
    for (auto& v : values) v = bound > 0.0 ? rng.uniform(-bound, bound) : (bound < 0.0 ? 1.0 : 0.0);
    index_[name] = params_.size();
    params_.push_back({name, Tensor::leaf(std::move(shape), std::move(values))});
    return params_.back().tensor;
}

void Model::add_dense(const std::string& prefix, std::size_t in, std::size_t out, Rng& rng) {
    add_parameter(prefix + ".weight", {in, out}, rng, 1.0 / std::sqrt(static_cast<double>(in)));
    add_parameter(prefix + ".bias", {out}, rng, 0.0);
}

void Model::add_grouped(const std::string& prefix, std::size_t groups, std::size_t in, std::size_t out, Rng& rng) {
    add_parameter(prefix + ".weight", {groups, in, out}, rng, 1.0 / std::sqrt(static_cast<double>(in)));
    add_parameter(prefix + ".bias", {groups, out}, rng, 0.0);
}

void Model::add_mlp(const std::string& prefix, std::size_t in, std::size_t hidden, Rng& rng) {
    add_dense(prefix + ".l1", in, hidden, rng);
    add_parameter(prefix + ".bn1.gamma", {hidden}, rng, -1.0);
    add_parameter(prefix + ".bn1.beta", {hidden}, rng, 0.0);
    add_dense(prefix + ".l2", hidden, hidden, rng);
    add_parameter(prefix + ".bn2.gamma", {hidden}, rng, -1.0);
    add_parameter(prefix + ".bn2.beta", {hidden}, rng, 0.0);
}

void Model::add_lstm(const std::string& prefix, std::size_t in, std::size_t hidden, Rng& rng) {
    add_parameter(prefix + ".w_input", {in, 4 * hidden}, rng, 1.0 / std::sqrt(static_cast<double>(in)));
    add_parameter(prefix + ".w_hidden", {hidden, 4 * hidden}, rng, 1.0 / std::sqrt(static_cast<double>(hidden)));
    add_parameter(prefix + ".bias", {4 * hidden}, rng, 0.0);
}

const Tensor& Model::parameter(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("model: no parameter named " + name);
    return params_[it->second].tensor;
}

Tensor& Model::parameter(const std::string& name) {
    return const_cast<Tensor&>(static_cast<const Model&>(*this).parameter(name));
}

std::vector<Tensor> Model::parameter_tensors() const {
    std::vector<Tensor> out;
    for (const auto& p : params_) out.push_back(p.tensor);
    return out;
}

void Model::zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
}

void Model::set_connectome(const AdjacencyMatrix& adjacency) {
    const auto n = static_cast<Eigen::Index>(config_.n_neurons);
    if (adjacency.weights.rows() != n || adjacency.weights.cols() != n) {
        throw ad::ShapeError("model: connectome is " + std::to_string(adjacency.weights.rows()) + "x" +
                             std::to_string(adjacency.weights.cols()) + ", model has " + std::to_string(n) + " neurons");
    }
    connectome_ = adjacency.weights;
}

Model Model::clone() const {
    Model copy = *this;
    for (auto& p : copy.params_) {
        p.tensor = Tensor::leaf(p.tensor.shape(), std::vector<double>(p.tensor.values().begin(), p.tensor.values().end()));
    }
    return copy;
}

Model Model::with_static_window(std::size_t window) const {
    Model copy = clone();
    copy.config_.static_window = window;
    copy.config_.validate();
    return copy;
}

// ---------------------------------------------------------------------------
// Forward building blocks

Tensor Model::dense(const std::string& prefix, const Tensor& x) const {
    return ad::add(ad::matmul(x, parameter(prefix + ".weight")), parameter(prefix + ".bias"));
}

Tensor Model::mlp(const std::string& prefix, const Tensor& x) {
    Tensor h = ad::relu(dense(prefix + ".l1", x));
    h = ad::batch_norm(h, parameter(prefix + ".bn1.gamma"), parameter(prefix + ".bn1.beta"), norm_stats_[prefix + ".bn1"],
                       training_);
    h = ad::relu(dense(prefix + ".l2", h));
    return ad::batch_norm(h, parameter(prefix + ".bn2.gamma"), parameter(prefix + ".bn2.beta"),
                          norm_stats_[prefix + ".bn2"], training_);
}

Tensor Model::grouped_mlp(const std::string& prefix, const Tensor& x) {
    Tensor h = ad::relu(ad::add(ad::grouped_matmul(x, parameter(prefix + ".l1.weight")), parameter(prefix + ".l1.bias")));
    h = ad::batch_norm(h, parameter(prefix + ".bn1.gamma"), parameter(prefix + ".bn1.beta"), norm_stats_[prefix + ".bn1"],
                       training_);
    h = ad::relu(ad::add(ad::grouped_matmul(h, parameter(prefix + ".l2.weight")), parameter(prefix + ".l2.bias")));
    return ad::batch_norm(h, parameter(prefix + ".bn2.gamma"), parameter(prefix + ".bn2.beta"),
                          norm_stats_[prefix + ".bn2"], training_);
}

Tensor Model::aggregate(const Tensor& node_features) const {
    const std::size_t batch = node_features.dim(0);
    if (config_.aggregation == Aggregation::Sum) return ad::sum(node_features, 1);
    return ad::reshape(node_features, {batch, node_features.dim(1) * node_features.dim(2)});
}

Tensor Model::message_pass_frames(const Tensor& adjacency, const Tensor& frames) const {
    return message_pass(adjacency, frames);
}

Tensor Model::lstm_step(const std::string& prefix, const Tensor& x, RecurrentState& state) const {
    const std::size_t rows = x.dim(0), h = config_.hidden_dim;
    if (!state.lstm || state.lstm->hidden.dim(0) != rows) {
        state.lstm = ad::LstmState{Tensor::zeros({rows, h}), Tensor::zeros({rows, h})};
    }
    state.lstm = ad::lstm_cell(x, *state.lstm, parameter(prefix + ".w_input"), parameter(prefix + ".w_hidden"),
                               parameter(prefix + ".bias"));
    return state.lstm->hidden;
}

namespace {

void require_frames(const Tensor& frames, std::size_t n_neurons) {
    if (frames.rank() != 3 || frames.dim(2) != 2) {
        throw ad::ShapeError("model: frames must be [B, N, 2], got " + ad::to_string(frames.shape()));
    }
    if (frames.dim(1) != n_neurons) {
        throw ad::ShapeError("model: frames have " + std::to_string(frames.dim(1)) + " neurons, model expects " +
                             std::to_string(n_neurons));
    }
}

}  // namespace

Tensor Model::edge_probabilities(const Tensor& frames) {
    if (config_.module_kind != ModuleKind::GNN) throw std::logic_error("model: only the GNN infers edges");
    if (config_.edge_mode == EdgeMode::Connectome) {
        throw std::logic_error("model: connectome edges are supplied, not inferred (use load_connectome_edges)");
    }
    require_frames(frames, config_.n_neurons);
    const std::size_t batch = frames.dim(0), n = config_.n_neurons, h = config_.hidden_dim;

    Tensor enc = ad::reshape(frames, {batch * n, 2});
    enc = ad::relu(dense("enc.l1", enc));
    enc = ad::relu(dense("enc.l2", enc));
    Tensor nodes = ad::reshape(enc, {batch, n, h});
    const std::size_t group = edge_group();
    if (batch % group != 0) {
        throw ad::ShapeError("model: batch of " + std::to_string(batch) + " timesteps is not a whole number of " +
                             std::to_string(group) + "-step static windows");
    }
    const std::size_t graphs = batch / group;
    if (group > 1) {
        nodes = ad::mean(ad::reshape(nodes, {graphs, group, n, h}), 1);
    }
    const Tensor flat = ad::reshape(nodes, {graphs * n, h});
    Tensor src, dst;
    if (config_.aggregation == Aggregation::Concatenate) {
        src = ad::matmul(flat, parameter("edge.l1.weight_src"));
        dst = ad::matmul(flat, parameter("edge.l1.weight_dst"));
    } else {
        src = ad::matmul(flat, parameter("edge.l1.weight"));
        dst = src;
    }
    Tensor pairs = ad::pairwise_add(ad::reshape(src, {graphs, n, h}), ad::reshape(dst, {graphs, n, h}));
    pairs = ad::relu(ad::add(pairs, parameter("edge.l1.bias")));
    Tensor edge_logits = dense("edge.l2", ad::reshape(pairs, {graphs * n * n, h}));
    edge_logits = ad::reshape(edge_logits, {graphs, n, n, 2});
    return ad::softmax(edge_logits, 3, config_.edge_temperature());
}

Tensor Model::encode_edges(const Tensor& frames) {
    const Tensor probs = edge_probabilities(frames);
    const std::size_t graphs = probs.dim(0), n = config_.n_neurons;
    Tensor weights = ad::reshape(ad::slice(probs, 3, 1, 2), {graphs, n, n});
    if (!config_.include_self_edges) {
        std::vector<double> mask(n * n, 1.0);
        for (std::size_t i = 0; i < n; ++i) mask[i * n + i] = 0.0;
        weights = ad::mul(weights, Tensor::constant({n, n}, std::move(mask)));
    }
    return weights;
}

std::size_t Model::edge_group() const {
    return config_.edge_mode == EdgeMode::Static && config_.task == Task::Classify ? config_.static_window : 1;
}

Tensor Model::adjacency(const Tensor& frames) {
    if (config_.module_kind != ModuleKind::GNN) throw std::logic_error("model: only the GNN uses an adjacency");
    if (config_.edge_mode != EdgeMode::Connectome) {
        const std::size_t group = edge_group();
        const Tensor weights = encode_edges(frames);
        return group > 1 ? ad::repeat_interleave(weights, group) : weights;
    }
    if (!connectome_) throw std::logic_error("model: connectome edge mode requires set_connectome()");
    const std::size_t n = config_.n_neurons;
    std::vector<double> values(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            values[i * n + j] = (i == j && !config_.include_self_edges)
                                    ? 0.0
                                    : (*connectome_)(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        }
    return Tensor::constant({n, n}, std::move(values));
}

Tensor Model::hidden(const Tensor& frames) {
    if (config_.module_kind == ModuleKind::GNN) return hidden_with(frames, adjacency(frames));
    return hidden_with(frames, Tensor{});
}

Tensor Model::hidden_with(const Tensor& frames, const Tensor& adjacency) {
    if (config_.task != Task::Classify) throw std::logic_error("model: hidden() is the classification path");
    require_frames(frames, config_.n_neurons);
    const std::size_t batch = frames.dim(0), n = config_.n_neurons;
    switch (config_.module_kind) {
        case ModuleKind::Linear:
            return ad::reshape(frames, {batch, 2 * n});
        case ModuleKind::MLP:
            return mlp("g", aggregate(frames));
        case ModuleKind::NodeMLP:
            return ad::reshape(grouped_mlp("g", frames), {batch, n * config_.hidden_dim});
        case ModuleKind::GNN:
            return mlp("g", aggregate(message_pass_frames(adjacency, frames)));
    }
    throw std::logic_error("model: unknown module kind");
}

Tensor Model::logits(const Tensor& frames) { return dense("head", hidden(frames)); }

Tensor Model::residual(const Tensor& frames, RecurrentState& state, const Tensor& adjacency) {
    if (config_.task != Task::Predict) throw std::logic_error("model: residual() is the prediction path");
    require_frames(frames, config_.n_neurons);
    const std::size_t batch = frames.dim(0), n = config_.n_neurons;
    switch (config_.module_kind) {
        case ModuleKind::MLP: {
            Tensor x = aggregate(frames);
            if (config_.recurrent) x = lstm_step("rnn", x, state);
            return ad::reshape(dense("head", mlp("g", x)), {batch, n, 2});
        }
        case ModuleKind::NodeMLP: {
            const Tensor h = grouped_mlp("g", frames);
            return ad::add(ad::grouped_matmul(h, parameter("head.weight")), parameter("head.bias"));
        }
        case ModuleKind::GNN: {
            const Tensor a = adjacency.defined() ? adjacency : this->adjacency(frames);
            Tensor x = ad::reshape(message_pass_frames(a, frames), {batch * n, 2});
            if (config_.recurrent) x = lstm_step("rnn", x, state);
            return ad::reshape(dense("head", mlp("g", x)), {batch, n, 2});
        }
        case ModuleKind::Linear:
            break;
    }
    throw std::logic_error("model: module has no prediction path");
}

// ---------------------------------------------------------------------------
// Free functions

Tensor frames_tensor(std::span<const double> features, std::size_t n_neurons) {
    if (n_neurons == 0 || features.size() % (2 * n_neurons) != 0) {
        throw ad::ShapeError("frames_tensor: " + std::to_string(features.size()) + " values do not tile [B, " +
                             std::to_string(n_neurons) + ", 2]");
    }
    return Tensor::constant({features.size() / (2 * n_neurons), n_neurons, 2},
                            std::vector<double>(features.begin(), features.end()));
}

Tensor message_pass(const Tensor& adjacency, const Tensor& features) {
    if (adjacency.rank() == 2 && features.rank() == 2) {
        if (adjacency.dim(0) != adjacency.dim(1) || adjacency.dim(1) != features.dim(0)) {
            throw ad::ShapeError("message_pass: adjacency " + ad::to_string(adjacency.shape()) +
                                 " does not match features " + ad::to_string(features.shape()));
        }
        return ad::matmul(adjacency, features);
    }
    if (features.rank() != 3) {
        throw ad::ShapeError("message_pass: features must be [N, F] or [B, N, F], got " + ad::to_string(features.shape()));
    }
    const std::size_t batch = features.dim(0), n = features.dim(1);
    if (adjacency.rank() == 2) {
        if (adjacency.dim(0) != n || adjacency.dim(1) != n) {
            throw ad::ShapeError("message_pass: adjacency " + ad::to_string(adjacency.shape()) +
                                 " does not match features " + ad::to_string(features.shape()));
        }
        return ad::bmm(ad::repeat_leading(adjacency, batch), features);
    }
    if (adjacency.rank() != 3 || adjacency.dim(0) != batch || adjacency.dim(1) != n || adjacency.dim(2) != n) {
        throw ad::ShapeError("message_pass: adjacency " + ad::to_string(adjacency.shape()) + " does not match features " +
                             ad::to_string(features.shape()));
    }
    return ad::bmm(adjacency, features);
}

Classification classify(const Tensor& logits) {
    if (logits.rank() != 2) throw ad::ShapeError("classify: logits must be [B, k], got " + ad::to_string(logits.shape()));
    const Tensor probs = ad::softmax(logits.detach(), 1);
    const auto rows = static_cast<Eigen::Index>(logits.dim(0)), k = static_cast<Eigen::Index>(logits.dim(1));
    Classification out;
    out.probabilities.resize(rows, k);
    out.predicted.resize(static_cast<std::size_t>(rows));
    const auto& p = probs.values();
    const auto& z = logits.values();
    for (Eigen::Index r = 0; r < rows; ++r) {
        int best = 0;
        for (Eigen::Index c = 0; c < k; ++c) {
            out.probabilities(r, c) = p[static_cast<std::size_t>(r * k + c)];
            if (z[static_cast<std::size_t>(r * k + c)] > z[static_cast<std::size_t>(r * k + best)]) best = static_cast<int>(c);
        }
        out.predicted[static_cast<std::size_t>(r)] = best;
    }
    return out;
}

Classification classify(Model& model, const Tensor& frames) { return classify(model.logits(frames)); }

Tensor predict_step(Model& model, const Tensor& frames, RecurrentState& state, const Tensor& adjacency) {
    return ad::add(frames, model.residual(frames, state, adjacency));
}

std::vector<Tensor> rollout(Model& model, const RolloutRequest& request, Rng& rng) {
    if (request.steps < 1) throw std::invalid_argument("rollout: steps must be >= 1");
    if (request.sampling_prob > 0.0 && request.teacher.size() < request.steps) {
        throw std::invalid_argument("rollout: teacher holds " + std::to_string(request.teacher.size()) +
                                    " frames but sampling_prob > 0 needs " + std::to_string(request.steps));
    }
    const auto& cfg = model.config();
    if (cfg.recurrent && request.burn_in.size() < kBurnInSteps) {
        throw std::invalid_argument("rollout: recurrent models need " + std::to_string(kBurnInSteps) +
                                    " burn-in frames, got " + std::to_string(request.burn_in.size()));
    }

    // Static edges are inferred once per rollout from the starting frames.
    Tensor fixed_adjacency;
    if (cfg.module_kind == ModuleKind::GNN && (cfg.edge_mode == EdgeMode::Static || cfg.edge_mode == EdgeMode::Connectome)) {
        fixed_adjacency = model.adjacency(request.start);
    }

    RecurrentState state;
    if (cfg.recurrent) {
        for (std::size_t i = request.burn_in.size() - kBurnInSteps; i < request.burn_in.size(); ++i) {
            model.residual(request.burn_in[i], state, fixed_adjacency);
        }
    }

    std::vector<Tensor> predictions;
    predictions.reserve(request.steps);
    Tensor input = request.start;
    for (std::size_t s = 0; s < request.steps; ++s) {
        if (s > 0) {
            const bool use_truth = request.sampling_prob >= 1.0 ||
                                   (request.sampling_prob > 0.0 && rng.uniform() < request.sampling_prob);
            input = use_truth ? request.teacher[s - 1] : predictions.back();
        }
        predictions.push_back(predict_step(model, input, state, fixed_adjacency));
    }
    return predictions;
}

// ---------------------------------------------------------------------------
// Linear baseline

Eigen::MatrixXd LinearClassifier::scores(const Eigen::MatrixXd& features) const {
    return (features * weights).rowwise() + bias.transpose();
}

std::vector<int> LinearClassifier::predict(const Eigen::MatrixXd& features) const {
    const Eigen::MatrixXd s = scores(features);
    std::vector<int> out(static_cast<std::size_t>(s.rows()));
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
        Eigen::Index best = 0;
        for (Eigen::Index c = 1; c < s.cols(); ++c) {
            if (s(r, c) > s(r, best)) best = c;
        }
        out[static_cast<std::size_t>(r)] = static_cast<int>(best);
    }
    return out;
}

LinearClassifier linear_baseline(const Eigen::MatrixXd& features, std::span<const int> targets, int k,
                                 const LinearBaselineOptions& options) {
    if (static_cast<std::size_t>(features.rows()) != targets.size()) {
        throw std::invalid_argument("linear_baseline: " + std::to_string(features.rows()) + " samples but " +
                                    std::to_string(targets.size()) + " targets");
    }
    std::set<int> classes;
    std::vector<Eigen::Index> rows;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        if (targets[i] == kMasked) continue;
        if (targets[i] < 0 || targets[i] >= k) throw std::invalid_argument("linear_baseline: target out of range");
        classes.insert(targets[i]);
        rows.push_back(static_cast<Eigen::Index>(i));
    }
    if (classes.size() < 2) throw std::invalid_argument("linear_baseline: training data contains a single class");

    const auto n = static_cast<Eigen::Index>(rows.size());
    const Eigen::Index f = features.cols();
    Eigen::MatrixXd x(n, f), y(n, k);
    for (Eigen::Index i = 0; i < n; ++i) {
        x.row(i) = features.row(rows[static_cast<std::size_t>(i)]);
        for (Eigen::Index c = 0; c < k; ++c) y(i, c) = targets[static_cast<std::size_t>(rows[static_cast<std::size_t>(i)])] == c ? 1.0 : -1.0;
    }

    // Full-batch subgradient steps with Adam moments.
    LinearClassifier model{Eigen::MatrixXd::Zero(f, k), Eigen::VectorXd::Zero(k)};
    Eigen::MatrixXd m_w = Eigen::MatrixXd::Zero(f, k), v_w = m_w;
    Eigen::VectorXd m_b = Eigen::VectorXd::Zero(k), v_b = m_b;
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    for (std::size_t step = 1; step <= options.iterations; ++step) {
        const Eigen::MatrixXd margin = y.cwiseProduct(model.scores(x));
        const Eigen::MatrixXd active = (margin.array() < 1.0).cast<double>().matrix();
        const Eigen::MatrixXd dscore = -(active.cwiseProduct(y)) / static_cast<double>(n);
        const Eigen::MatrixXd g_w = x.transpose() * dscore + options.l2 * model.weights;
        const Eigen::VectorXd g_b = dscore.colwise().sum().transpose();
        m_w = beta1 * m_w + (1 - beta1) * g_w;
        v_w = beta2 * v_w + (1 - beta2) * g_w.cwiseAbs2();
        m_b = beta1 * m_b + (1 - beta1) * g_b;
        v_b = beta2 * v_b + (1 - beta2) * g_b.cwiseAbs2();
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
        model.weights.array() -= options.learning_rate * (m_w.array() / c1) / ((v_w.array() / c2).sqrt() + eps);
        model.bias.array() -= options.learning_rate * (m_b.array() / c1) / ((v_b.array() / c2).sqrt() + eps);
    }
    return model;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

using nlohmann::json;

json config_json(const ModelConfig& c) {
    return json{{"module_kind", to_string(c.module_kind)},
                {"task", to_string(c.task)},
                {"hidden_dim", c.hidden_dim},
                {"edge_mode", to_string(c.edge_mode)},
                {"softmax_temperature", c.softmax_temperature},
                {"aggregation", to_string(c.aggregation)},
                {"recurrent", c.recurrent},
                {"include_self_edges", c.include_self_edges},
                {"static_window", c.static_window},
                {"n_states", c.n_states},
                {"n_neurons", c.n_neurons}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.module_kind = parse_module_kind(j.at("module_kind").get<std::string>());
    c.task = parse_task(j.at("task").get<std::string>());
    c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    c.edge_mode = parse_edge_mode(j.at("edge_mode").get<std::string>());
    c.softmax_temperature = j.at("softmax_temperature").get<double>();
    c.aggregation = parse_aggregation(j.at("aggregation").get<std::string>());
    c.recurrent = j.at("recurrent").get<bool>();
    c.include_self_edges = j.at("include_self_edges").get<bool>();
    c.static_window = j.at("static_window").get<std::size_t>();
    c.n_states = j.at("n_states").get<int>();
    c.n_neurons = j.at("n_neurons").get<std::size_t>();
    c.validate();
    return c;
}

}  // namespace

std::string serialize_checkpoint(const Model& model) {
    json doc;
    doc["format"] = kCheckpointFormat;
    doc["version"] = kCheckpointVersion;
    doc["config"] = config_json(model.config());
    json params = json::array();
    for (const auto& p : model.parameters()) {
        params.push_back({{"name", p.name},
                          {"shape", p.tensor.shape()},
                          {"values", std::vector<double>(p.tensor.values().begin(), p.tensor.values().end())}});
    }
    doc["parameters"] = params;
    json stats = json::array();
    for (const auto& [name, s] : model.norm_stats()) {
        stats.push_back({{"name", name}, {"mean", s.mean}, {"var", s.var}, {"momentum", s.momentum}, {"eps", s.eps}});
    }
    doc["batch_norm"] = stats;
    if (model.connectome()) {
        const auto& a = *model.connectome();
        json rows = json::array();
        for (Eigen::Index r = 0; r < a.rows(); ++r) {
            std::vector<double> row(static_cast<std::size_t>(a.cols()));
            for (Eigen::Index c = 0; c < a.cols(); ++c) row[static_cast<std::size_t>(c)] = a(r, c);
            rows.push_back(row);
        }
        doc["connectome"] = rows;
    } else {
        doc["connectome"] = nullptr;
    }
    return doc.dump() + "\n";
}

Model parse_checkpoint(const std::string& text, const std::string& source) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw DataError(source + ": checkpoint is not valid JSON (" + e.what() + ")");
    }
    try {
        if (doc.at("format").get<std::string>() != kCheckpointFormat) throw DataError(source + ": not a checkpoint file");
        if (doc.at("version").get<int>() != kCheckpointVersion) {
            throw DataError(source + ": unsupported checkpoint version " + doc.at("version").dump());
        }
        Model model(config_from_json(doc.at("config")), 0);
        std::set<std::string> loaded;
        for (const auto& p : doc.at("parameters")) {
            const auto name = p.at("name").get<std::string>();
            if (!model.has_parameter(name)) throw DataError(source + ": unexpected parameter '" + name + "'");
            auto& t = model.parameter(name);
            const auto shape = p.at("shape").get<ad::Shape>();
            if (shape != t.shape()) {
                throw DataError(source + ": parameter '" + name + "' has shape " + ad::to_string(shape) + ", expected " +
                                ad::to_string(t.shape()));
            }
            const auto values = p.at("values").get<std::vector<double>>();
            if (values.size() != t.numel()) throw DataError(source + ": parameter '" + name + "' has the wrong value count");
            std::copy(values.begin(), values.end(), t.mutable_values().begin());
            loaded.insert(name);
        }
        for (const auto& p : model.parameters()) {
            if (!loaded.count(p.name)) throw DataError(source + ": missing parameter '" + p.name + "'");
        }
        for (const auto& s : doc.at("batch_norm")) {
            ad::BatchNormStats stats;
            stats.mean = s.at("mean").get<std::vector<double>>();
            stats.var = s.at("var").get<std::vector<double>>();
            stats.momentum = s.at("momentum").get<double>();
            stats.eps = s.at("eps").get<double>();
            model.norm_stats()[s.at("name").get<std::string>()] = std::move(stats);
        }
        if (doc.contains("connectome") && !doc["connectome"].is_null()) {
            const auto rows = doc["connectome"].get<std::vector<std::vector<double>>>();
            AdjacencyMatrix a;
            a.mode = EdgeMode::Connectome;
            a.weights.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.size()));
            for (std::size_t r = 0; r < rows.size(); ++r) {
                if (rows[r].size() != rows.size()) throw DataError(source + ": connectome must be square");
                for (std::size_t c = 0; c < rows.size(); ++c) {
                    a.weights(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
                }
            }
            model.set_connectome(a);
        }
        model.set_training(false);
        return model;
    } catch (const json::exception& e) {
        throw DataError(source + ": malformed checkpoint (" + e.what() + ")");
    } catch (const std::invalid_argument& e) {
        throw DataError(source + ": " + e.what());
    }
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError(path.string() + ": cannot open for writing");
    out << serialize_checkpoint(model);
}

Model load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError(path.string() + ": cannot open checkpoint");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_checkpoint(buf.str(), path.string());
}

}  // namespace wormgnn
