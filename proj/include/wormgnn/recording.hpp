#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "wormgnn/labels.hpp"

namespace wormgnn {

/// Malformed input files or records. Messages name the offending field.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// One individual's labeled multi-neuron recording.
struct WormRecording {
    std::string worm_id;
    std::string dataset_tag;
    double sample_period_s = 1.0 / 3.0;
    std::vector<std::string> neuron_names;
    Eigen::MatrixXd traces;       // N x T
    Eigen::MatrixXd derivatives;  // N x T
    std::vector<StateLabel> labels;

    std::size_t n_neurons() const { return static_cast<std::size_t>(traces.rows()); }
    std::size_t n_timesteps() const { return static_cast<std::size_t>(traces.cols()); }

    /// Checks shapes, name uniqueness, label alphabet consistency, finiteness.
    void validate() const;
};

inline constexpr const char* kRecordingFormat = "wormgnn-recording";
inline constexpr int kRecordingVersion = 1;

/// Reads a recording file (JSON, see docs/recording_format.md). When the
/// file carries no `derivatives` matrix it is computed from the traces.
/// The result is not normalized.
WormRecording load_recording(const std::filesystem::path& path);
WormRecording parse_recording(const std::string& text, const std::string& source = "<memory>");

std::string serialize_recording(const WormRecording& rec);
void save_recording(const WormRecording& rec, const std::filesystem::path& path);

}  // namespace wormgnn
