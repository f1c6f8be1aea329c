#pragma once

// Preprocessing: derivative channel, whole-recording min-max normalization,
// neuron selection, fixed-length windows and stratified cross-validation folds.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "wormgnn/labels.hpp"
#include "wormgnn/recording.hpp"

namespace wormgnn {

inline constexpr std::size_t kDefaultWindow = 8;
inline constexpr std::size_t kDefaultFolds = 10;

/// Neurons identified in all five animals of the training corpus.
const std::vector<std::string>& shared_training_neurons();
/// Neurons shared with the extended-evaluation corpus.
const std::vector<std::string>& shared_extended_neurons();

/// d[t] = x[t+1] - x[t] for t < T-1, d[T-1] = d[T-2]. Requires T >= 2.
std::vector<double> compute_derivative(std::span<const double> trace);
Eigen::MatrixXd compute_derivatives(const Eigen::MatrixXd& traces);

/// Min-max scales a row to [0, 1]; constant rows become zeros.
void normalize_row(std::span<double> row);
/// Scales every trace and derivative row over the full recording.
WormRecording normalize_recording(WormRecording rec);

/// Keeps the named neurons in the requested order. Throws DataError naming a
/// missing neuron.
WormRecording select_neurons(const WormRecording& rec, std::span<const std::string> names);
/// Drops the named neurons, keeping the remaining order.
WormRecording exclude_neurons(const WormRecording& rec, std::span<const std::string> names);
/// Sorted intersection of neuron names across recordings.
std::vector<std::string> common_neurons(std::span<const WormRecording> recs);

/// W consecutive timesteps of one recording.
struct Window {
    std::string worm_id;
    std::size_t start_index = 0;
    std::size_t length = 0;
    std::size_t n_neurons = 0;
    std::vector<double> features;  // [length][n_neurons][2]: trace, derivative
    std::vector<StateLabel> labels;

    double feature(std::size_t t, std::size_t neuron, std::size_t channel) const {
        return features[(t * n_neurons + neuron) * 2 + channel];
    }
    /// Most frequent label; ties go to the lowest label value.
    StateLabel majority_label() const;
};

/// floor(T / W) non-overlapping windows tiling the recording prefix, shuffled
/// by seed. Throws for W < 2 or W > T.
std::vector<Window> windowize(const WormRecording& rec, std::size_t window, std::uint64_t seed);

struct FoldAssignment {
    std::size_t fold_count = 0;
    std::uint64_t seed = 0;
    std::vector<std::size_t> fold_of;  // indexed like the window list

    std::vector<std::size_t> members(std::size_t fold) const;
    std::vector<std::size_t> sizes() const;
};

/// Majority-label stratified folds: windows are grouped by majority label,
/// each group is shuffled, and the concatenated groups are dealt round-robin.
FoldAssignment assign_folds(std::span<const Window> windows, std::size_t k, std::uint64_t seed);

/// All size-r subsets of ids in lexicographic (index) order.
std::vector<std::vector<std::string>> worm_permutations(std::span<const std::string> ids, std::size_t r);

}  // namespace wormgnn
