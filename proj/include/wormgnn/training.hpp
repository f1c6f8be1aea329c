#pragma once

// Losses, optimizer, schedules and the cross-validation driver.
//
// A run trains one model on a set of worms. Each worm's recording is cut into
// windows that are dealt into folds; classification holds out fold f as the
// test set and fold f+1 as the validation set, prediction validates on fold f.
// Worms outside the run measure generalization to unseen individuals.

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wormgnn/evaluation.hpp"
#include "wormgnn/labels.hpp"
#include "wormgnn/models.hpp"
#include "wormgnn/pipeline.hpp"
#include "wormgnn/recording.hpp"

namespace wormgnn {

// ---------------------------------------------------------------------------
// Losses

/// Mean of -log p[target] over unmasked rows of `probabilities` [B, k].
/// Returns 0 (with all-zero gradients) when every target is masked.
ad::Tensor nll_loss(const ad::Tensor& probabilities, std::span<const int> targets, int k);

/// Mean squared difference over all entries of all steps.
ad::Tensor mse_loss(std::span<const ad::Tensor> predicted, std::span<const ad::Tensor> target);
/// The same, one value per step.
std::vector<double> per_step_mse_values(std::span<const ad::Tensor> predicted, std::span<const ad::Tensor> target);

// ---------------------------------------------------------------------------
// Optimization

class AdamOptimizer {
public:
    AdamOptimizer(std::vector<ad::Parameter>& params, double learning_rate, double beta1 = 0.9,
                  double beta2 = 0.999, double eps = 1e-8);

    /// One bias-corrected update from the parameters' gradients. Throws
    /// std::logic_error naming the first parameter without a gradient.
    void step();

    double learning_rate() const { return lr_; }
    void set_learning_rate(double lr) { lr_ = lr; }
    std::size_t steps() const { return t_; }
    const std::vector<std::vector<double>>& first_moments() const { return m_; }
    const std::vector<std::vector<double>>& second_moments() const { return v_; }

private:
    std::vector<ad::Parameter>* params_;
    double lr_, beta1_, beta2_, eps_;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

/// Multiplies the learning rate by `factor` after `patience` consecutive
/// epochs without an improvement larger than `threshold`.
class PlateauScheduler {
public:
    PlateauScheduler(std::size_t patience = 50, double factor = 0.25, double threshold = 1e-12);

    /// Returns the learning rate to use after observing `val_loss`.
    double step(double val_loss, double lr);

    double best() const { return best_; }
    std::size_t epochs_since_improvement() const { return bad_epochs_; }

private:
    std::size_t patience_;
    double factor_, threshold_;
    double best_ = std::numeric_limits<double>::infinity();
    std::size_t bad_epochs_ = 0;
};

enum class LossKind { NLL, MSE };

struct TrainConfig {
    double learning_rate = 1e-3;
    std::size_t max_epochs = 800;
    std::size_t plateau_patience = 50;
    double lr_decay_factor = 0.25;
    std::size_t sampling_decay_epochs = 300;
    LossKind loss_kind = LossKind::NLL;
    std::uint64_t seed = 0;
    std::size_t fold_count = 10;
    std::size_t window_len = 8;
    std::size_t eval_rollout = 16;

    void validate() const;
};

/// Teacher-forcing probability max(0, 1 - epoch / sampling_decay_epochs).
double sampling_prob(std::size_t epoch, const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Experiments

enum class ExperimentTask { Classify2, Classify7, Classify4, Predict };
std::string_view to_string(ExperimentTask task);
ExperimentTask parse_experiment_task(std::string_view s);
/// Label alphabet of a classification task; throws for Predict.
LabelTask label_task(ExperimentTask task);
int state_count(ExperimentTask task);

struct ExperimentPlan {
    std::vector<std::string> train_worm_ids;     // pool the permutations are drawn from
    std::size_t permutation_size = 1;
    std::vector<std::string> held_out_worm_ids;  // never trained on
    std::vector<std::string> extended_eval_ids;  // reported separately
    ExperimentTask task = ExperimentTask::Classify2;

    void validate() const;
};

/// Preprocessed recordings (normalized, common neuron order) by worm id.
class Dataset {
public:
    Dataset() = default;
    explicit Dataset(std::vector<WormRecording> recordings);

    void add(WormRecording rec);
    const WormRecording& at(const std::string& worm_id) const;
    bool contains(const std::string& worm_id) const { return index_.count(worm_id) > 0; }
    std::vector<std::string> ids() const;
    const std::vector<WormRecording>& recordings() const { return recordings_; }

private:
    std::vector<WormRecording> recordings_;
    std::map<std::string, std::size_t> index_;
};

/// One (worm subset, fold) training run.
struct RunSpec {
    std::string run_id = "run";
    std::vector<std::string> train_worms;
    std::vector<std::string> generalization_worms;
    std::vector<std::string> extended_worms;
    ExperimentTask task = ExperimentTask::Classify2;
    std::size_t fold = 0;
    std::uint64_t split_seed = 0;  // windows and folds; shared by all folds of a worm subset
};

struct TrainState {
    std::size_t epoch = 0;
    double lr = 0.0;
    double best_val_loss = std::numeric_limits<double>::infinity();
    std::size_t best_epoch = 0;
    std::size_t epochs_since_improvement = 0;
    std::vector<double> train_loss;  // per epoch
    std::vector<double> val_loss;
    std::vector<double> lr_history;
};

struct TrainResult {
    TrainState state;
    RunMetrics metrics;
};

/// Windows of one worm with their fold assignment.
struct WormSplit {
    const WormRecording* recording = nullptr;
    std::vector<Window> windows;
    FoldAssignment folds;
};
WormSplit split_worm(const WormRecording& rec, const TrainConfig& cfg, std::uint64_t split_seed);

/// Trains `model` in place and leaves it holding the best-validation
/// parameters. Throws when the run has no training data.
TrainResult train(Model& model, const RunSpec& spec, const TrainConfig& cfg, const Dataset& data);

/// Validation loss of `model` for the run (the quantity `train` minimizes
/// for checkpoint selection).
double validation_loss(Model& model, const RunSpec& spec, const TrainConfig& cfg, const Dataset& data);

struct MeanStd {
    double mean = std::numeric_limits<double>::quiet_NaN();
    double stddev = std::numeric_limits<double>::quiet_NaN();
    std::size_t count = 0;  // runs where the value was defined
};

struct AggregateMetrics {
    std::size_t runs = 0;
    MeanStd accuracy_train, accuracy_val, accuracy_test, accuracy_generalization, accuracy_extended;
    std::vector<MeanStd> per_step_mse;
    std::vector<MeanStd> per_step_mse_extended;
};

AggregateMetrics aggregate(std::span<const RunMetrics> runs);

struct CrossValidationOptions {
    std::size_t workers = 1;
    /// Required for EdgeMode::Connectome models.
    std::optional<AdjacencyMatrix> connectome;
    /// Runs already finished (by run_id); they are reused instead of retrained.
    std::map<std::string, RunMetrics> completed;
    /// Called once per newly finished run, serialized across workers.
    std::function<void(const RunMetrics&)> on_run_done;
};

struct CrossValidationResult {
    std::vector<RunMetrics> runs;  // permutation-major, fold-minor
    AggregateMetrics summary;
};

/// Every worm_permutations(pool, r) subset x every fold. The seed of run
/// (p, f) is derive_seed(cfg.seed, p, f); fold splits depend on p only.
CrossValidationResult cross_validate(const ModelConfig& model_cfg, const ExperimentPlan& plan,
                                     const TrainConfig& cfg, const Dataset& data,
                                     const CrossValidationOptions& options = {});

/// Run identifier "p<permutation>-f<fold>".
std::string run_id(std::size_t permutation, std::size_t fold);

}  // namespace wormgnn
