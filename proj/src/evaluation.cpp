#include "wormgnn/evaluation.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <json.hpp>
#include <sstream>
#include <stdexcept>

namespace wormgnn {

using ad::Tensor;
using json = nlohmann::json;

std::optional<double> accuracy(std::span<const int> predictions, std::span<const int> targets) {
    if (predictions.size() != targets.size()) {
        throw std::invalid_argument("accuracy: " + std::to_string(predictions.size()) + " predictions vs " +
                                    std::to_string(targets.size()) + " targets");
    }
    std::size_t labeled = 0, correct = 0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        if (targets[i] == kMasked) continue;
        ++labeled;
        if (predictions[i] == targets[i]) ++correct;
    }
    if (labeled == 0) return std::nullopt;
    return static_cast<double>(correct) / static_cast<double>(labeled);
}

ConfusionMatrix confusion_matrix(std::span<const int> predictions, std::span<const int> targets, int k) {
    if (k < 1) throw std::invalid_argument("confusion_matrix: k must be >= 1");
    if (predictions.size() != targets.size()) {
        throw std::invalid_argument("confusion_matrix: " + std::to_string(predictions.size()) + " predictions vs " +
                                    std::to_string(targets.size()) + " targets");
    }
    Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(k, k);
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const int t = targets[i];
        if (t == kMasked) continue;
        const int p = predictions[i];
        if (t < 0 || t >= k || p < 0 || p >= k) {
            throw std::invalid_argument("confusion_matrix: label pair (" + std::to_string(t) + ", " +
                                        std::to_string(p) + ") outside [0, " + std::to_string(k) + ")");
        }
        counts(t, p) += 1.0;
    }
    ConfusionMatrix cm;
    cm.percent = Eigen::MatrixXd::Zero(k, k);
    cm.empty_rows.assign(static_cast<std::size_t>(k), false);
    for (int r = 0; r < k; ++r) {
        const double total = counts.row(r).sum();
        if (total == 0.0) {
            cm.empty_rows[static_cast<std::size_t>(r)] = true;
            continue;
        }
        cm.percent.row(r) = 100.0 * counts.row(r) / total;
    }
    return cm;
}

// ---------------------------------------------------------------------------
// Rollout error

std::vector<std::pair<std::size_t, double>> PerStepMse::summary() const {
    std::vector<std::pair<std::size_t, double>> out;
    for (std::size_t step : {1u, 8u, 16u}) {
        if (step <= mse.size()) out.emplace_back(step, mse[step - 1]);
    }
    return out;
}

namespace {

// Frames at time `offset + start` for every start, stacked into [B, N, 2].
Tensor stacked_frames(const WormRecording& rec, std::span<const std::size_t> starts, std::ptrdiff_t offset) {
    const std::size_t n = rec.n_neurons();
    std::vector<double> values;
    values.reserve(starts.size() * n * 2);
    for (std::size_t start : starts) {
        const auto t = static_cast<Eigen::Index>(static_cast<std::ptrdiff_t>(start) + offset);
        for (std::size_t i = 0; i < n; ++i) {
            values.push_back(rec.traces(static_cast<Eigen::Index>(i), t));
            values.push_back(rec.derivatives(static_cast<Eigen::Index>(i), t));
        }
    }
    return Tensor::constant({starts.size(), n, 2}, std::move(values));
}

}  // namespace

std::vector<Tensor> recording_frames(const WormRecording& rec, std::size_t start, std::size_t count) {
    if (start + count > rec.n_timesteps()) {
        throw std::out_of_range("recording_frames: [" + std::to_string(start) + ", " + std::to_string(start + count) +
                                ") exceeds " + std::to_string(rec.n_timesteps()) + " timesteps of " + rec.worm_id);
    }
    std::vector<Tensor> frames;
    frames.reserve(count);
    const std::size_t one[] = {start};
    for (std::size_t s = 0; s < count; ++s) frames.push_back(stacked_frames(rec, one, static_cast<std::ptrdiff_t>(s)));
    return frames;
}

Tensor recording_tensor(const WormRecording& rec, std::size_t start, std::size_t length) {
    if (start + length > rec.n_timesteps()) {
        throw std::out_of_range("recording_tensor: [" + std::to_string(start) + ", " + std::to_string(start + length) +
                                ") exceeds " + std::to_string(rec.n_timesteps()) + " timesteps of " + rec.worm_id);
    }
    const std::size_t n = rec.n_neurons();
    std::vector<double> values;
    values.reserve(length * n * 2);
    for (std::size_t t = start; t < start + length; ++t) {
        for (std::size_t i = 0; i < n; ++i) {
            values.push_back(rec.traces(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)));
            values.push_back(rec.derivatives(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)));
        }
    }
    return Tensor::constant({length, n, 2}, std::move(values));
}

EdgeSummary summarize_edges(Model& model, const WormRecording& rec) {
    const auto& cfg = model.config();
    if (cfg.module_kind != ModuleKind::GNN) {
        throw std::invalid_argument("summarize_edges: a " + std::string(to_string(cfg.module_kind)) +
                                    " model has no edges");
    }
    if (rec.n_neurons() != cfg.n_neurons) {
        throw std::invalid_argument("summarize_edges: model expects " + std::to_string(cfg.n_neurons) +
                                    " neurons, recording " + rec.worm_id + " has " + std::to_string(rec.n_neurons()));
    }
    const std::size_t n = cfg.n_neurons, t = rec.n_timesteps();
    const bool training = model.training();
    model.set_training(false);
    EdgeSummary out;
    if (cfg.edge_mode == EdgeMode::Connectome) {
        if (!model.connectome()) throw std::invalid_argument("summarize_edges: connectome model without a connectome");
        out.mean = *model.connectome();
        if (!cfg.include_self_edges) out.mean.diagonal().setZero();
        out.stddev = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
        out.graphs = 1;
    } else if (model.edge_group() > 1) {
        Model pooled = model.with_static_window(t);
        pooled.set_training(false);
        const Tensor w = pooled.encode_edges(recording_tensor(rec, 0, t));
        out.mean = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            w.values().data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
        out.stddev = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
        out.graphs = 1;
    } else {
        // One graph per timestep, in chunks to bound the pairwise activations.
        constexpr std::size_t kChunk = 256;
        Eigen::ArrayXXd sum = Eigen::ArrayXXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
        Eigen::ArrayXXd sq = sum;
        for (std::size_t start = 0; start < t; start += kChunk) {
            const std::size_t len = std::min(kChunk, t - start);
            const Tensor w = model.encode_edges(recording_tensor(rec, start, len));
            const auto values = w.values();
            for (std::size_t g = 0; g < len; ++g) {
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < n; ++j) {
                        const double v = values[(g * n + i) * n + j];
                        sum(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) += v;
                        sq(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) += v * v;
                    }
            }
        }
        const double count = static_cast<double>(t);
        const Eigen::ArrayXXd mean = sum / count;
        out.mean = mean.matrix();
        out.stddev = (sq / count - mean.square()).max(0.0).sqrt().matrix();
        out.graphs = t;
    }
    model.set_training(training);
    return out;
}

PerStepMse per_step_mse(Model& model, std::span<const RolloutOrigin> origins, std::size_t steps) {
    if (steps < 1) throw std::invalid_argument("per_step_mse: steps must be >= 1");
    if (model.config().task != Task::Predict) throw std::invalid_argument("per_step_mse: model is not a predict model");
    const bool recurrent = model.config().recurrent;
    const std::size_t min_start = recurrent ? kBurnInSteps : 0;

    // Origins of one recording are rolled out together as a batch.
    std::map<const WormRecording*, std::vector<std::size_t>> grouped;
    std::vector<const WormRecording*> order;
    PerStepMse out;
    for (const auto& o : origins) {
        if (o.recording == nullptr) throw std::invalid_argument("per_step_mse: null recording");
        if (o.start < min_start || o.start + steps > o.recording->n_timesteps() - 1) {
            ++out.windows_skipped;
            continue;
        }
        if (!grouped.count(o.recording)) order.push_back(o.recording);
        grouped[o.recording].push_back(o.start);
    }

    const bool was_training = model.training();
    model.set_training(false);
    std::vector<double> total(steps, 0.0);
    std::size_t entries = 0;
    Rng rng(0);
    for (const WormRecording* rec : order) {
        const auto& starts = grouped[rec];
        RolloutRequest req;
        req.start = stacked_frames(*rec, starts, 0);
        req.steps = steps;
        req.sampling_prob = 0.0;
        if (recurrent) {
            for (std::size_t b = kBurnInSteps; b > 0; --b) {
                req.burn_in.push_back(stacked_frames(*rec, starts, -static_cast<std::ptrdiff_t>(b)));
            }
        }
        const auto predictions = rollout(model, req, rng);
        for (std::size_t s = 0; s < steps; ++s) {
            const Tensor truth = stacked_frames(*rec, starts, static_cast<std::ptrdiff_t>(s + 1));
            const auto p = predictions[s].values();
            const auto q = truth.values();
            double acc = 0.0;
            for (std::size_t i = 0; i < p.size(); ++i) acc += (p[i] - q[i]) * (p[i] - q[i]);
            total[s] += acc;
        }
        entries += req.start.numel();
        out.windows_used += starts.size();
    }
    model.set_training(was_training);

    out.mse.assign(steps, 0.0);
    if (entries > 0) {
        for (std::size_t s = 0; s < steps; ++s) out.mse[s] = total[s] / static_cast<double>(entries);
    } else {
        std::fill(out.mse.begin(), out.mse.end(), std::numeric_limits<double>::quiet_NaN());
    }
    return out;
}

PerStepMse per_step_mse(Model& model, std::span<const WormRecording> recordings, std::size_t steps,
                        std::size_t window) {
    if (window < 1) throw std::invalid_argument("per_step_mse: window must be >= 1");
    std::vector<RolloutOrigin> origins;
    for (const auto& rec : recordings) {
        for (std::size_t start = 0; start < rec.n_timesteps(); start += window) origins.push_back({&rec, start});
    }
    return per_step_mse(model, origins, steps);
}

// ---------------------------------------------------------------------------
// PCA

PcaResult pca_project(const Eigen::MatrixXd& data, std::size_t components) {
    const auto n = static_cast<std::size_t>(data.rows());
    const auto t = static_cast<std::size_t>(data.cols());
    if (components < 1) throw std::invalid_argument("pca_project: components must be >= 1");
    if (t <= components) {
        throw std::invalid_argument("pca_project: need more than " + std::to_string(components) + " timesteps, got " +
                                    std::to_string(t));
    }
    if (n < components) {
        throw std::invalid_argument("pca_project: " + std::to_string(n) + " neurons cannot give " +
                                    std::to_string(components) + " components");
    }
    const Eigen::MatrixXd centered = data.colwise() - data.rowwise().mean();
    const Eigen::MatrixXd cov = centered * centered.transpose() / static_cast<double>(t - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success) throw std::runtime_error("pca_project: eigendecomposition failed");

    // Eigen sorts ascending.
    const Eigen::VectorXd eig = solver.eigenvalues().reverse();
    const double total = std::max(0.0, eig.sum());
    const double floor = 1e-12 * std::max(total, std::numeric_limits<double>::min());

    PcaResult out;
    out.components.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(components));
    for (std::size_t c = 0; c < components; ++c) {
        const auto col = static_cast<Eigen::Index>(n - 1 - c);
        Eigen::VectorXd v = solver.eigenvectors().col(col);
        // Sign convention: largest-magnitude loading positive.
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0.0) v = -v;
        out.components.col(static_cast<Eigen::Index>(c)) = v;
        const double lambda = std::max(0.0, eig(static_cast<Eigen::Index>(c)));
        const bool degenerate = lambda <= floor;
        out.zero_variance.push_back(degenerate);
        out.explained.push_back(total > 0.0 && !degenerate ? lambda / total : 0.0);
    }
    out.projection = centered.transpose() * out.components;
    return out;
}

std::optional<double> edge_correlation(const Eigen::MatrixXd& inferred, const Eigen::MatrixXd& structural) {
    if (inferred.rows() != structural.rows() || inferred.cols() != structural.cols() ||
        inferred.rows() != inferred.cols()) {
        throw std::invalid_argument("edge_correlation: matrices must be square and equal in size");
    }
    std::vector<double> a, b;
    for (Eigen::Index r = 0; r < inferred.rows(); ++r)
        for (Eigen::Index c = 0; c < inferred.cols(); ++c)
            if (r != c) {
                a.push_back(inferred(r, c));
                b.push_back(structural(r, c));
            }
    if (a.size() < 2) return std::nullopt;
    const auto [ma, sa] = mean_std(a);
    const auto [mb, sb] = mean_std(b);
    if (!(sa > 0.0) || !(sb > 0.0)) return std::nullopt;
    double cov = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) cov += (a[i] - ma) * (b[i] - mb);
    cov /= static_cast<double>(a.size());
    return cov / (sa * sb);
}

std::pair<double, double> mean_std(std::span<const double> values) {
    if (values.empty()) {
        const double nan = std::numeric_limits<double>::quiet_NaN();
        return {nan, nan};
    }
    double m = 0.0;
    for (double v : values) m += v;
    m /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - m) * (v - m);
    var /= static_cast<double>(values.size());
    return {m, std::sqrt(var)};
}

// ---------------------------------------------------------------------------
// Metrics records

namespace {

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> optional_from(const json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
}

json finite_array(const std::vector<double>& v) {
    json out = json::array();
    for (double x : v) out.push_back(std::isfinite(x) ? json(x) : json(nullptr));
    return out;
}

std::vector<double> array_from(const json& j, const char* key) {
    std::vector<double> out;
    if (!j.contains(key)) return out;
    for (const auto& x : j.at(key)) out.push_back(x.is_null() ? std::numeric_limits<double>::quiet_NaN() : x.get<double>());
    return out;
}

}  // namespace

std::string to_json_line(const RunMetrics& m) {
    json j;
    j["run_id"] = m.run_id;
    j["task"] = m.task;
    j["permutation"] = m.permutation;
    j["fold"] = m.fold;
    j["seed"] = m.seed;
    j["train_worms"] = m.train_worms;
    j["accuracy_train"] = optional_json(m.accuracy_train);
    j["accuracy_val"] = optional_json(m.accuracy_val);
    j["accuracy_test"] = optional_json(m.accuracy_test);
    j["accuracy_generalization"] = optional_json(m.accuracy_generalization);
    j["accuracy_extended"] = optional_json(m.accuracy_extended);
    if (m.confusion) {
        json rows = json::array();
        for (Eigen::Index r = 0; r < m.confusion->percent.rows(); ++r) {
            json row = json::array();
            for (Eigen::Index c = 0; c < m.confusion->percent.cols(); ++c) row.push_back(m.confusion->percent(r, c));
            rows.push_back(row);
        }
        j["confusion"] = rows;
        j["confusion_empty_rows"] = m.confusion->empty_rows;
    } else {
        j["confusion"] = nullptr;
    }
    j["per_step_mse"] = finite_array(m.per_step_mse);
    j["per_step_mse_extended"] = finite_array(m.per_step_mse_extended);
    j["best_val_loss"] = std::isfinite(m.best_val_loss) ? json(m.best_val_loss) : json(nullptr);
    j["epochs_run"] = m.epochs_run;
    j["runtime_s"] = m.runtime_s;
    return j.dump();
}

RunMetrics parse_metrics_line(const std::string& line) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::parse_error& e) {
        throw DataError(std::string("metrics line: ") + e.what());
    }
    try {
        RunMetrics m;
        m.run_id = j.value("run_id", std::string{});
        m.task = j.value("task", std::string{});
        m.permutation = j.value("permutation", std::size_t{0});
        m.fold = j.value("fold", std::size_t{0});
        m.seed = j.value("seed", std::uint64_t{0});
        m.train_worms = j.value("train_worms", std::vector<std::string>{});
        m.accuracy_train = optional_from(j, "accuracy_train");
        m.accuracy_val = optional_from(j, "accuracy_val");
        m.accuracy_test = optional_from(j, "accuracy_test");
        m.accuracy_generalization = optional_from(j, "accuracy_generalization");
        m.accuracy_extended = optional_from(j, "accuracy_extended");
        if (j.contains("confusion") && !j.at("confusion").is_null()) {
            const auto& rows = j.at("confusion");
            const auto k = static_cast<Eigen::Index>(rows.size());
            ConfusionMatrix cm;
            cm.percent.resize(k, k);
            for (Eigen::Index r = 0; r < k; ++r)
                for (Eigen::Index c = 0; c < k; ++c) cm.percent(r, c) = rows.at(r).at(c).get<double>();
            cm.empty_rows = j.value("confusion_empty_rows", std::vector<bool>(static_cast<std::size_t>(k), false));
            m.confusion = std::move(cm);
        }
        m.per_step_mse = array_from(j, "per_step_mse");
        m.per_step_mse_extended = array_from(j, "per_step_mse_extended");
        m.best_val_loss = optional_from(j, "best_val_loss").value_or(std::numeric_limits<double>::quiet_NaN());
        m.epochs_run = j.value("epochs_run", std::size_t{0});
        m.runtime_s = j.value("runtime_s", 0.0);
        return m;
    } catch (const json::exception& e) {
        throw DataError(std::string("metrics line: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Plot data

namespace {
std::ostringstream tsv_stream() {
    std::ostringstream os;
    os << std::setprecision(10);
    return os;
}
}  // namespace

std::string accuracy_bars_tsv(std::span<const AccuracyBar> bars) {
    auto os = tsv_stream();
    os << "label\tn\tmean\tstd\n";
    for (const auto& bar : bars) {
        const auto [m, s] = mean_std(bar.values);
        os << bar.label << '\t' << bar.values.size() << '\t' << m << '\t' << s << '\n';
    }
    return os.str();
}

std::string confusion_tsv(const ConfusionMatrix& cm, std::span<const std::string> state_names) {
    const auto k = static_cast<std::size_t>(cm.percent.rows());
    if (state_names.size() != k) {
        throw std::invalid_argument("confusion_tsv: " + std::to_string(state_names.size()) + " names for " +
                                    std::to_string(k) + " states");
    }
    auto os = tsv_stream();
    os << "labeled";
    for (const auto& name : state_names) os << '\t' << name;
    os << "\tempty\n";
    for (std::size_t r = 0; r < k; ++r) {
        os << state_names[r];
        for (std::size_t c = 0; c < k; ++c)
            os << '\t' << cm.percent(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
        os << '\t' << (r < cm.empty_rows.size() && cm.empty_rows[r] ? 1 : 0) << '\n';
    }
    return os.str();
}

std::string mse_curve_tsv(std::span<const std::string> names, std::span<const std::vector<double>> curves) {
    if (names.size() != curves.size()) throw std::invalid_argument("mse_curve_tsv: names and curves differ in count");
    std::size_t steps = 0;
    for (const auto& c : curves) steps = std::max(steps, c.size());
    auto os = tsv_stream();
    os << "step";
    for (const auto& n : names) os << '\t' << n;
    os << '\n';
    for (std::size_t s = 0; s < steps; ++s) {
        os << s + 1;
        for (const auto& c : curves) {
            os << '\t';
            if (s < c.size()) os << c[s];
        }
        os << '\n';
    }
    return os.str();
}

std::string pca_trajectory_tsv(const PcaResult& pca, std::span<const StateLabel> labels) {
    const auto t = static_cast<std::size_t>(pca.projection.rows());
    if (labels.size() != t) {
        throw std::invalid_argument("pca_trajectory_tsv: " + std::to_string(labels.size()) + " labels for " +
                                    std::to_string(t) + " timesteps");
    }
    auto os = tsv_stream();
    os << 't';
    for (Eigen::Index c = 0; c < pca.projection.cols(); ++c) os << "\tpc" << c + 1;
    os << "\tstate\n";
    for (std::size_t i = 0; i < t; ++i) {
        os << i;
        for (Eigen::Index c = 0; c < pca.projection.cols(); ++c) os << '\t' << pca.projection(static_cast<Eigen::Index>(i), c);
        os << '\t' << label_name(labels[i]) << '\n';
    }
    return os.str();
}

}  // namespace wormgnn
