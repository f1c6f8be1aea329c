#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wormgnn/models.hpp"
#include "wormgnn/recording.hpp"

namespace wormgnn {

/// Fraction of correct predictions over unmasked targets; nullopt when every
/// target is masked (undefined, as opposed to 0).
std::optional<double> accuracy(std::span<const int> predictions, std::span<const int> targets);

struct ConfusionMatrix {
    Eigen::MatrixXd percent;        // k x k, row = labeled state, column = predicted
    std::vector<bool> empty_rows;   // rows with no labeled samples (left all-zero)
};

/// Entry (true, predicted) = 100 * count / row count. Masked targets are skipped.
ConfusionMatrix confusion_matrix(std::span<const int> predictions, std::span<const int> targets, int k);

/// A rollout origin inside a recording.
struct RolloutOrigin {
    const WormRecording* recording = nullptr;
    std::size_t start = 0;
};

struct PerStepMse {
    std::vector<double> mse;           // one entry per prediction step
    std::size_t windows_used = 0;
    std::size_t windows_skipped = 0;   // too close to the end (or start, for burn-in)

    /// (step 1, step 8, step 16) where available.
    std::vector<std::pair<std::size_t, double>> summary() const;
};

/// Rolls out with sampling_prob = 0 from each origin and averages the squared
/// error at every step over all entries, origins and recordings.
PerStepMse per_step_mse(Model& model, std::span<const RolloutOrigin> origins, std::size_t steps = 16);
/// Origins at every window start (multiples of `window`) of every recording.
PerStepMse per_step_mse(Model& model, std::span<const WormRecording> recordings, std::size_t steps = 16,
                        std::size_t window = 8);

/// [len + 1] consecutive frames [1, N, 2] starting at `start`.
std::vector<ad::Tensor> recording_frames(const WormRecording& rec, std::size_t start, std::size_t count);

/// Frames [length, N, 2] of timesteps start .. start+length-1.
ad::Tensor recording_tensor(const WormRecording& rec, std::size_t start, std::size_t length);

/// Inferred edge weights of a GNN over one recording. A static classifier
/// pools the whole recording into one graph (stddev is zero); otherwise one
/// graph per timestep is summarized by its mean and population stddev.
struct EdgeSummary {
    Eigen::MatrixXd mean;    // N x N
    Eigen::MatrixXd stddev;  // N x N
    std::size_t graphs = 0;
};
EdgeSummary summarize_edges(Model& model, const WormRecording& rec);

struct PcaResult {
    Eigen::MatrixXd projection;            // T x components
    std::vector<double> explained;         // variance fractions, descending
    std::vector<bool> zero_variance;       // components with no variance (rank deficit)
    Eigen::MatrixXd components;            // N x components (unit columns)
};

/// Mean-centered projection onto the leading eigenvectors of the N x N
/// covariance of `data` (rows are neurons, columns timesteps).
PcaResult pca_project(const Eigen::MatrixXd& data, std::size_t components = 3);

/// Pearson correlation of off-diagonal entries; nullopt when either side is constant.
std::optional<double> edge_correlation(const Eigen::MatrixXd& inferred, const Eigen::MatrixXd& structural);

/// Outcome of one training run. Accuracies are absent for prediction runs
/// and when a split has no labeled timesteps.
struct RunMetrics {
    std::string run_id;
    std::string task;
    std::size_t permutation = 0;
    std::size_t fold = 0;
    std::uint64_t seed = 0;
    std::vector<std::string> train_worms;
    std::optional<double> accuracy_train;
    std::optional<double> accuracy_val;
    std::optional<double> accuracy_test;
    std::optional<double> accuracy_generalization;
    std::optional<double> accuracy_extended;
    std::optional<ConfusionMatrix> confusion;
    std::vector<double> per_step_mse;
    std::vector<double> per_step_mse_extended;
    double best_val_loss = 0.0;
    std::size_t epochs_run = 0;
    double runtime_s = 0.0;
};

/// One JSON object on a single line; undefined values are written as null.
std::string to_json_line(const RunMetrics& m);
RunMetrics parse_metrics_line(const std::string& line);

// Plot-data tables (tab separated, header row first).

struct AccuracyBar {
    std::string label;
    std::vector<double> values;  // one per run; undefined runs are left out
};
/// label, n, mean, std (population).
std::string accuracy_bars_tsv(std::span<const AccuracyBar> bars);
/// One row per labeled state: state name, then percent per predicted state.
std::string confusion_tsv(const ConfusionMatrix& cm, std::span<const std::string> state_names);
/// step, then one column per curve.
std::string mse_curve_tsv(std::span<const std::string> names, std::span<const std::vector<double>> curves);
/// t, pc1..pcK, state.
std::string pca_trajectory_tsv(const PcaResult& pca, std::span<const StateLabel> labels);

/// Mean and population standard deviation; {nan, nan} for an empty sample.
std::pair<double, double> mean_std(std::span<const double> values);

}  // namespace wormgnn
