#include "wormgnn/labels.hpp"

#include <array>
#include <stdexcept>
#include <utility>

namespace wormgnn {

namespace {

constexpr std::array<std::pair<StateLabel, std::string_view>, 12> kNames{{
    {StateLabel::Forward, "Forward"},
    {StateLabel::ForwardSlowing, "ForwardSlowing"},
    {StateLabel::Reverse1, "Reverse1"},
    {StateLabel::Reverse2, "Reverse2"},
    {StateLabel::SustainedReverse, "SustainedReverse"},
    {StateLabel::DorsalTurn, "DorsalTurn"},
    {StateLabel::VentralTurn, "VentralTurn"},
    {StateLabel::Unknown, "Unknown"},
    {StateLabel::Forward4, "Forward4"},
    {StateLabel::Reverse4, "Reverse4"},
    {StateLabel::DorsalTurn4, "DorsalTurn4"},
    {StateLabel::VentralTurn4, "VentralTurn4"},
}};

}  // namespace

std::string_view label_name(StateLabel label) {
    for (const auto& [l, name] : kNames) {
        if (l == label) return name;
    }
    throw std::invalid_argument("label_name: invalid label value");
}

StateLabel parse_label(std::string_view name) {
    for (const auto& [l, n] : kNames) {
        if (n == name) return l;
    }
    throw std::invalid_argument("unknown state label '" + std::string(name) + "'");
}

bool is_coarse(StateLabel label) {
    switch (label) {
        case StateLabel::Forward4:
        case StateLabel::Reverse4:
        case StateLabel::DorsalTurn4:
        case StateLabel::VentralTurn4:
            return true;
        default:
            return false;
    }
}

StateLabel map_label(StateLabel fine) {
    switch (fine) {
        case StateLabel::Forward:
        case StateLabel::ForwardSlowing:
            return StateLabel::Forward4;
        case StateLabel::Reverse1:
        case StateLabel::Reverse2:
        case StateLabel::SustainedReverse:
            return StateLabel::Reverse4;
        case StateLabel::DorsalTurn:
            return StateLabel::DorsalTurn4;
        case StateLabel::VentralTurn:
            return StateLabel::VentralTurn4;
        case StateLabel::Unknown:
            return StateLabel::Unknown;
        default:
            throw std::invalid_argument("map_labels: input '" + std::string(label_name(fine)) +
                                        "' is already a coarse label");
    }
}

std::vector<StateLabel> map_labels(std::span<const StateLabel> fine) {
    std::vector<StateLabel> out;
    out.reserve(fine.size());
    for (auto l : fine) out.push_back(map_label(l));
    return out;
}

int class_count(LabelTask task) {
    switch (task) {
        case LabelTask::Binary:
            return 2;
        case LabelTask::Fine7:
            return 7;
        case LabelTask::Coarse4:
            return 4;
    }
    return 0;
}

std::string_view task_name(LabelTask task) {
    switch (task) {
        case LabelTask::Binary:
            return "binary";
        case LabelTask::Fine7:
            return "fine7";
        case LabelTask::Coarse4:
            return "coarse4";
    }
    return "?";
}

LabelTask parse_label_task(std::string_view name) {
    if (name == "binary") return LabelTask::Binary;
    if (name == "fine7") return LabelTask::Fine7;
    if (name == "coarse4") return LabelTask::Coarse4;
    throw std::invalid_argument("unknown label task '" + std::string(name) + "' (expected binary, fine7 or coarse4)");
}

std::optional<int> class_index(StateLabel label, LabelTask task) {
    if (label == StateLabel::Unknown) return std::nullopt;
    switch (task) {
        case LabelTask::Fine7:
            if (is_coarse(label)) {
                throw std::invalid_argument("fine7 task cannot use coarse label '" + std::string(label_name(label)) + "'");
            }
            return static_cast<int>(label);
        case LabelTask::Coarse4:
        case LabelTask::Binary: {
            const StateLabel coarse = is_coarse(label) ? label : map_label(label);
            int idx = 0;
            switch (coarse) {
                case StateLabel::Forward4: idx = 0; break;
                case StateLabel::Reverse4: idx = 1; break;
                case StateLabel::DorsalTurn4: idx = 2; break;
                case StateLabel::VentralTurn4: idx = 3; break;
                default: return std::nullopt;
            }
            if (task == LabelTask::Binary && idx > 1) return std::nullopt;
            return idx;
        }
    }
    return std::nullopt;
}

std::vector<int> class_targets(std::span<const StateLabel> labels, LabelTask task) {
    std::vector<int> out;
    out.reserve(labels.size());
    for (auto l : labels) out.push_back(class_index(l, task).value_or(kMasked));
    return out;
}

}  // namespace wormgnn
