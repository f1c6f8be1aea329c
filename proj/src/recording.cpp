#include "wormgnn/recording.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "wormgnn/pipeline.hpp"

namespace wormgnn {

using nlohmann::json;

void WormRecording::validate() const {
    const auto n = n_neurons();
    const auto t = n_timesteps();
    if (n < 1) throw DataError(worm_id + ": recording needs at least one neuron");
    if (t < 2) throw DataError(worm_id + ": recording needs at least 2 timesteps, got " + std::to_string(t));
    if (neuron_names.size() != n) {
        throw DataError(worm_id + ": neuron_names has " + std::to_string(neuron_names.size()) +
                        " entries but traces have " + std::to_string(n) + " rows");
    }
    if (derivatives.rows() != traces.rows() || derivatives.cols() != traces.cols()) {
        throw DataError(worm_id + ": derivatives shape " + std::to_string(derivatives.rows()) + "x" +
                        std::to_string(derivatives.cols()) + " differs from traces " + std::to_string(n) + "x" +
                        std::to_string(t));
    }
    if (labels.size() != t) {
        throw DataError(worm_id + ": labels length " + std::to_string(labels.size()) + " differs from timestep count " +
                        std::to_string(t));
    }
    std::set<std::string> seen;
    for (const auto& name : neuron_names) {
        if (!seen.insert(name).second) throw DataError(worm_id + ": duplicate neuron name '" + name + "'");
    }
    bool fine = false, coarse = false;
    for (auto l : labels) {
        if (l == StateLabel::Unknown) continue;
        (is_coarse(l) ? coarse : fine) = true;
    }
    if (fine && coarse) throw DataError(worm_id + ": labels mix the fine and coarse alphabets");
    if (!traces.allFinite() || !derivatives.allFinite()) throw DataError(worm_id + ": non-finite trace values");
}

namespace {

template <typename T>
T field(const json& doc, const char* key, const std::string& source) {
    if (!doc.contains(key)) throw DataError(source + ": missing field '" + key + "'");
    try {
        return doc.at(key).get<T>();
    } catch (const json::exception& e) {
        throw DataError(source + ": field '" + key + "' has the wrong type (" + e.what() + ")");
    }
}

Eigen::MatrixXd matrix_field(const json& doc, const char* key, std::size_t rows, const std::string& source) {
    const auto nested = field<std::vector<std::vector<double>>>(doc, key, source);
    if (nested.size() != rows) {
        throw DataError(source + ": field '" + key + "' has " + std::to_string(nested.size()) + " rows, expected " +
                        std::to_string(rows) + " (one per neuron)");
    }
    const std::size_t cols = nested.empty() ? 0 : nested.front().size();
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < rows; ++r) {
        if (nested[r].size() != cols) {
            throw DataError(source + ": field '" + key + "' row " + std::to_string(r) + " has " +
                            std::to_string(nested[r].size()) + " values, expected " + std::to_string(cols));
        }
        for (std::size_t c = 0; c < cols; ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = nested[r][c];
    }
    return m;
}

json matrix_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        std::vector<double> row(static_cast<std::size_t>(m.cols()));
        for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
        rows.push_back(row);
    }
    return rows;
}

}  // namespace

WormRecording parse_recording(const std::string& text, const std::string& source) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw DataError(source + ": not valid JSON (" + e.what() + ")");
    }
    if (!doc.is_object()) throw DataError(source + ": top level must be an object");
    if (field<std::string>(doc, "format", source) != kRecordingFormat) {
        throw DataError(source + ": field 'format' must be \"" + kRecordingFormat + "\"");
    }
    if (const int version = field<int>(doc, "version", source); version != kRecordingVersion) {
        throw DataError(source + ": unsupported version " + std::to_string(version));
    }

    WormRecording rec;
    rec.worm_id = field<std::string>(doc, "worm_id", source);
    rec.dataset_tag = field<std::string>(doc, "dataset_tag", source);
    rec.sample_period_s = field<double>(doc, "sample_period_s", source);
    if (!(rec.sample_period_s > 0.0)) throw DataError(source + ": field 'sample_period_s' must be > 0");
    rec.neuron_names = field<std::vector<std::string>>(doc, "neuron_names", source);
    rec.traces = matrix_field(doc, "traces", rec.neuron_names.size(), source);
    if (rec.traces.cols() < 2) {
        throw DataError(source + ": field 'traces' needs at least 2 timesteps, got " + std::to_string(rec.traces.cols()));
    }
    if (doc.contains("derivatives") && !doc["derivatives"].is_null()) {
        rec.derivatives = matrix_field(doc, "derivatives", rec.neuron_names.size(), source);
    } else {
        rec.derivatives = compute_derivatives(rec.traces);
    }
    for (const auto& name : field<std::vector<std::string>>(doc, "labels", source)) {
        try {
            rec.labels.push_back(parse_label(name));
        } catch (const std::invalid_argument& e) {
            throw DataError(source + ": field 'labels' entry " + std::to_string(rec.labels.size()) + ": " + e.what());
        }
    }
    try {
        rec.validate();
    } catch (const DataError& e) {
        throw DataError(source + ": " + e.what());
    }
    return rec;
}

WormRecording load_recording(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError(path.string() + ": cannot open recording");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_recording(buf.str(), path.string());
}

std::string serialize_recording(const WormRecording& rec) {
    rec.validate();
    json doc;
    doc["format"] = kRecordingFormat;
    doc["version"] = kRecordingVersion;
    doc["worm_id"] = rec.worm_id;
    doc["dataset_tag"] = rec.dataset_tag;
    doc["sample_period_s"] = rec.sample_period_s;
    doc["neuron_names"] = rec.neuron_names;
    doc["traces"] = matrix_json(rec.traces);
    doc["derivatives"] = matrix_json(rec.derivatives);
    std::vector<std::string> labels;
    labels.reserve(rec.labels.size());
    for (auto l : rec.labels) labels.emplace_back(label_name(l));
    doc["labels"] = labels;
    return doc.dump() + "\n";
}

void save_recording(const WormRecording& rec, const std::filesystem::path& path) {
    const std::string text = serialize_recording(rec);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError(path.string() + ": cannot open for writing");
    out << text;
}

}  // namespace wormgnn
