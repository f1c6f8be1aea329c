#pragma once

// Model zoo for behavioral-state classification and trajectory prediction.
//
// Every module consumes frames shaped [B, N, 2]: B timesteps (rows of a
// batch), N neurons in a fixed order, and the (trace, derivative) channels.
//
//   MLP      concatenate the N node features, two-layer MLP g
//   NodeMLP  an independent two-layer MLP per neuron
//   GNN      per-node encoder g_enc, pairwise edge MLP -> 2-way softmax whose
//            second component is the edge weight (static graphs average the
//            node embeddings over a window first), one message-passing step
//            H = A X, then g on the aggregated messages (Classify) or a shared
//            per-node decoder (Predict)
//   Linear   affine one-vs-rest scorer trained with hinge loss
//
// Classification adds a linear readout from g's hidden_dim output to the k
// state logits. Prediction is residual: X^{t+1} = X^t + H.

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wormgnn/ops.hpp"
#include "wormgnn/random.hpp"
#include "wormgnn/recording.hpp"
#include "wormgnn/tensor.hpp"

namespace wormgnn {

enum class ModuleKind { MLP, NodeMLP, GNN, Linear };
enum class Task { Classify, Predict };
enum class EdgeMode { Dynamic, Static, Connectome, OneHot };
enum class Aggregation { Concatenate, Sum };

std::string_view to_string(ModuleKind v);
std::string_view to_string(Task v);
std::string_view to_string(EdgeMode v);
std::string_view to_string(Aggregation v);
ModuleKind parse_module_kind(std::string_view s);
Task parse_task(std::string_view s);
EdgeMode parse_edge_mode(std::string_view s);
Aggregation parse_aggregation(std::string_view s);

/// Softmax temperature used by the OneHot edge mode.
inline constexpr double kOneHotTemperature = 0.05;
/// Ground-truth frames fed to recurrent models before a rollout starts.
inline constexpr std::size_t kBurnInSteps = 4;

std::size_t default_hidden_dim(Task task);

struct ModelConfig {
    ModuleKind module_kind = ModuleKind::GNN;
    Task task = Task::Classify;
    std::size_t hidden_dim = 16;
    EdgeMode edge_mode = EdgeMode::Static;
    double softmax_temperature = 1.0;
    Aggregation aggregation = Aggregation::Concatenate;
    bool recurrent = false;
    bool include_self_edges = true;
    /// Static edges: consecutive timesteps pooled into one graph (a window).
    /// Classification batches must be a whole number of windows; prediction
    /// infers the graph from each rollout's starting frame.
    std::size_t static_window = 8;
    int n_states = 2;
    std::size_t n_neurons = 15;

    void validate() const;
    /// Temperature actually applied to the edge softmax.
    double edge_temperature() const;
    bool operator==(const ModelConfig&) const = default;
};

/// Inferred or supplied edge weights for one graph.
struct AdjacencyMatrix {
    Eigen::MatrixXd weights;  // N x N, entries in [0, 1]
    EdgeMode mode = EdgeMode::Static;
    std::optional<std::size_t> timestep;  // Dynamic only
};

/// Parses (source, target, weight) lines, keeps pairs among `neuron_names`,
/// row-max normalizes to [0, 1] and sets the diagonal to 1 when requested.
/// Unknown neurons are dropped; blank lines and `#` comments are skipped.
AdjacencyMatrix load_connectome_edges(const std::filesystem::path& path, std::span<const std::string> neuron_names,
                                      bool include_self_edges = true);
AdjacencyMatrix parse_connectome_edges(const std::string& text, std::span<const std::string> neuron_names,
                                       bool include_self_edges = true, const std::string& source = "<memory>");

/// Hidden state threaded through recurrent models.
struct RecurrentState {
    std::optional<ad::LstmState> lstm;
};

class Model {
public:
    Model(ModelConfig config, std::uint64_t seed);

    const ModelConfig& config() const { return config_; }

    std::vector<ad::Parameter>& parameters() { return params_; }
    const std::vector<ad::Parameter>& parameters() const { return params_; }
    const ad::Tensor& parameter(const std::string& name) const;
    ad::Tensor& parameter(const std::string& name);
    bool has_parameter(const std::string& name) const { return index_.count(name) > 0; }
    std::vector<ad::Tensor> parameter_tensors() const;
    void zero_grad();

    std::map<std::string, ad::BatchNormStats>& norm_stats() { return norm_stats_; }
    const std::map<std::string, ad::BatchNormStats>& norm_stats() const { return norm_stats_; }

    /// Training mode uses batch statistics in batch norm.
    void set_training(bool training) { training_ = training; }
    bool training() const { return training_; }

    /// Fixed adjacency for EdgeMode::Connectome (N x N).
    void set_connectome(const AdjacencyMatrix& adjacency);
    const std::optional<Eigen::MatrixXd>& connectome() const { return connectome_; }

    /// Timesteps sharing one inferred graph: static_window (Static, Classify),
    /// 1 otherwise.
    std::size_t edge_group() const;
    /// Edge softmax probabilities [G, N, N, 2], G = B / edge_group().
    ad::Tensor edge_probabilities(const ad::Tensor& frames);
    /// Edge weights [G, N, N], one matrix per graph.
    ad::Tensor encode_edges(const ad::Tensor& frames);
    /// Adjacency used by the GNN for these frames: inferred ([B, N, N], rows of
    /// a static group share a matrix) or the connectome ([N, N]).
    ad::Tensor adjacency(const ad::Tensor& frames);

    /// Graph-level hidden output H_out [B, hidden_dim] (Classify path).
    ad::Tensor hidden(const ad::Tensor& frames);
    /// Same, with an explicit adjacency ([N, N] or [B, N, N]) for the GNN.
    ad::Tensor hidden_with(const ad::Tensor& frames, const ad::Tensor& adjacency);
    /// State logits [B, k].
    ad::Tensor logits(const ad::Tensor& frames);

    /// Per-neuron residual H [B, N, 2] (Predict path). `adjacency` may be
    /// undefined, in which case it is inferred from `frames`.
    ad::Tensor residual(const ad::Tensor& frames, RecurrentState& state, const ad::Tensor& adjacency = {});

    /// Deep copy of parameters and statistics.
    Model clone() const;
    /// Deep copy that pools static edges over `window` timesteps instead.
    Model with_static_window(std::size_t window) const;

private:
    ad::Tensor& add_parameter(const std::string& name, ad::Shape shape, Rng& rng, double bound);
    void add_dense(const std::string& prefix, std::size_t in, std::size_t out, Rng& rng);
    void add_grouped(const std::string& prefix, std::size_t groups, std::size_t in, std::size_t out, Rng& rng);
    void add_mlp(const std::string& prefix, std::size_t in, std::size_t hidden, Rng& rng);
    void add_lstm(const std::string& prefix, std::size_t in, std::size_t hidden, Rng& rng);

    ad::Tensor dense(const std::string& prefix, const ad::Tensor& x) const;
    ad::Tensor mlp(const std::string& prefix, const ad::Tensor& x);
    ad::Tensor grouped_mlp(const std::string& prefix, const ad::Tensor& x);
    ad::Tensor aggregate(const ad::Tensor& node_features) const;
    ad::Tensor message_pass_frames(const ad::Tensor& adjacency, const ad::Tensor& frames) const;
    ad::Tensor lstm_step(const std::string& prefix, const ad::Tensor& x, RecurrentState& state) const;

    ModelConfig config_;
    std::vector<ad::Parameter> params_;
    std::map<std::string, std::size_t> index_;
    std::map<std::string, ad::BatchNormStats> norm_stats_;
    std::optional<Eigen::MatrixXd> connectome_;
    bool training_ = true;
};

/// Packs windows' timesteps into frames [B, N, 2].
ad::Tensor frames_tensor(std::span<const double> features, std::size_t n_neurons);

/// H = A X for A [N, N] or [B, N, N] and X [B, N, F] (or X [N, F] with A [N, N]).
ad::Tensor message_pass(const ad::Tensor& adjacency, const ad::Tensor& features);

struct Classification {
    Eigen::MatrixXd probabilities;  // B x k
    std::vector<int> predicted;     // argmax, ties to the lowest index
};
Classification classify(const ad::Tensor& logits);
Classification classify(Model& model, const ad::Tensor& frames);

/// X^{t+1} = X^t + H for one step.
ad::Tensor predict_step(Model& model, const ad::Tensor& frames, RecurrentState& state,
                        const ad::Tensor& adjacency = {});

struct RolloutRequest {
    ad::Tensor start;                 // X^{t0}, [B, N, 2]
    std::vector<ad::Tensor> teacher;  // ground truth X^{t0+1}, X^{t0+2}, ...
    std::vector<ad::Tensor> burn_in;  // frames preceding X^{t0} (recurrent models)
    std::size_t steps = 16;
    double sampling_prob = 0.0;       // probability of feeding ground truth
};

/// Iterates predict_step. At every step after the first, the input is the
/// ground-truth frame with probability sampling_prob (one coin per step),
/// otherwise the previous prediction. Returns the `steps` predicted frames.
std::vector<ad::Tensor> rollout(Model& model, const RolloutRequest& request, Rng& rng);

/// One-vs-rest affine scorer.
struct LinearClassifier {
    Eigen::MatrixXd weights;  // F x k
    Eigen::VectorXd bias;     // k

    Eigen::MatrixXd scores(const Eigen::MatrixXd& features) const;  // rows are samples
    std::vector<int> predict(const Eigen::MatrixXd& features) const;
};

struct LinearBaselineOptions {
    double l2 = 1e-4;
    std::size_t iterations = 2000;
    double learning_rate = 0.05;
};

/// Full-batch minimization of the one-vs-rest hinge loss plus L2 on the
/// weights. Targets equal to kMasked are ignored. Throws when fewer than two
/// classes are present.
LinearClassifier linear_baseline(const Eigen::MatrixXd& features, std::span<const int> targets, int k,
                                 const LinearBaselineOptions& options = {});

inline constexpr const char* kCheckpointFormat = "wormgnn-checkpoint";
inline constexpr int kCheckpointVersion = 1;

std::string serialize_checkpoint(const Model& model);
Model parse_checkpoint(const std::string& text, const std::string& source = "<memory>");
void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace wormgnn
