#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace wormgnn {

/// Behavioral state per timestep. The first block is the fine 7-state
/// alphabet (+ Unknown); the `*4` values form the coarse 4-state alphabet.
enum class StateLabel {
    Forward,
    ForwardSlowing,
    Reverse1,
    Reverse2,
    SustainedReverse,
    DorsalTurn,
    VentralTurn,
    Unknown,
    Forward4,
    Reverse4,
    DorsalTurn4,
    VentralTurn4,
};

std::string_view label_name(StateLabel label);
/// Throws std::invalid_argument for unrecognized names.
StateLabel parse_label(std::string_view name);
bool is_coarse(StateLabel label);

/// Fine -> coarse: the three reverse states -> Reverse4, forward crawling and
/// slowing -> Forward4, turns to their coarse counterparts, Unknown stays.
/// Throws on coarse input.
StateLabel map_label(StateLabel fine);
std::vector<StateLabel> map_labels(std::span<const StateLabel> fine);

/// Classification target alphabets.
enum class LabelTask {
    Binary,   // forward vs reverse; turns are masked
    Fine7,    // the 7 fine states
    Coarse4,  // forward, reverse, dorsal turn, ventral turn
};

int class_count(LabelTask task);
std::string_view task_name(LabelTask task);
LabelTask parse_label_task(std::string_view name);

/// Target index for a label, or nullopt when the timestep is masked
/// (Unknown, or a state outside the task's alphabet).
std::optional<int> class_index(StateLabel label, LabelTask task);

/// Masked targets are encoded as kMasked.
inline constexpr int kMasked = -1;
std::vector<int> class_targets(std::span<const StateLabel> labels, LabelTask task);

}  // namespace wormgnn
