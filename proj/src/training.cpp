#include "wormgnn/training.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <set>
#include <stdexcept>
#include <thread>

#include "wormgnn/random.hpp"

namespace wormgnn {

using ad::Tensor;

// ---------------------------------------------------------------------------
// Losses

Tensor nll_loss(const Tensor& probabilities, std::span<const int> targets, int k) {
    if (probabilities.rank() != 2) {
        throw ad::ShapeError("nll_loss: probabilities must be [B, k], got " + ad::to_string(probabilities.shape()));
    }
    if (static_cast<int>(probabilities.dim(1)) != k) {
        throw std::invalid_argument("nll_loss: model emits " + std::to_string(probabilities.dim(1)) +
                                    " states but the label alphabet has " + std::to_string(k));
    }
    const std::size_t batch = probabilities.dim(0);
    if (targets.size() != batch) {
        throw ad::ShapeError("nll_loss: " + std::to_string(targets.size()) + " targets for " + std::to_string(batch) +
                             " rows");
    }
    std::size_t labeled = 0;
    for (int t : targets) {
        if (t == kMasked) continue;
        if (t < 0 || t >= k) throw std::invalid_argument("nll_loss: target " + std::to_string(t) + " outside [0, k)");
        ++labeled;
    }
    // Masked rows get weight 0, so they contribute exactly zero gradient.
    std::vector<double> weights(batch * static_cast<std::size_t>(k), 0.0);
    if (labeled > 0) {
        const double w = 1.0 / static_cast<double>(labeled);
        for (std::size_t b = 0; b < batch; ++b)
            if (targets[b] != kMasked) weights[b * static_cast<std::size_t>(k) + static_cast<std::size_t>(targets[b])] = w;
    }
    const Tensor mask = Tensor::constant(probabilities.shape(), std::move(weights));
    return ad::scale(ad::sum_all(ad::mul(ad::log(probabilities), mask)), -1.0);
}

namespace {
void check_trajectories(std::span<const Tensor> predicted, std::span<const Tensor> target) {
    if (predicted.size() != target.size()) {
        throw ad::ShapeError("mse_loss: " + std::to_string(predicted.size()) + " predicted steps vs " +
                             std::to_string(target.size()) + " target steps");
    }
    if (predicted.empty()) throw ad::ShapeError("mse_loss: empty trajectory");
    for (std::size_t s = 0; s < predicted.size(); ++s) {
        if (predicted[s].shape() != target[s].shape() || predicted[s].shape() != predicted[0].shape()) {
            throw ad::ShapeError("mse_loss: step " + std::to_string(s) + " shapes " +
                                 ad::to_string(predicted[s].shape()) + " vs " + ad::to_string(target[s].shape()));
        }
    }
}
}  // namespace

Tensor mse_loss(std::span<const Tensor> predicted, std::span<const Tensor> target) {
    check_trajectories(predicted, target);
    Tensor total;
    for (std::size_t s = 0; s < predicted.size(); ++s) {
        const Tensor d = ad::sub(predicted[s], target[s]);
        const Tensor step = ad::mean_all(ad::mul(d, d));
        total = total.defined() ? ad::add(total, step) : step;
    }
    return ad::scale(total, 1.0 / static_cast<double>(predicted.size()));
}

std::vector<double> per_step_mse_values(std::span<const Tensor> predicted, std::span<const Tensor> target) {
    check_trajectories(predicted, target);
    std::vector<double> out;
    for (std::size_t s = 0; s < predicted.size(); ++s) {
        const auto p = predicted[s].values();
        const auto q = target[s].values();
        double acc = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) acc += (p[i] - q[i]) * (p[i] - q[i]);
        out.push_back(acc / static_cast<double>(p.size()));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Optimization

AdamOptimizer::AdamOptimizer(std::vector<ad::Parameter>& params, double learning_rate, double beta1, double beta2,
                             double eps)
    : params_(&params), lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("adam: learning rate must be > 0");
    for (const auto& p : params) {
        m_.emplace_back(p.tensor.numel(), 0.0);
        v_.emplace_back(p.tensor.numel(), 0.0);
    }
}

void AdamOptimizer::step() {
    auto& params = *params_;
    if (params.size() != m_.size()) throw std::logic_error("adam: parameter list changed size");
    for (const auto& p : params) {
        if (!p.tensor.has_grad()) throw std::logic_error("adam: parameter '" + p.name + "' has no gradient");
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto values = params[i].tensor.mutable_values();
        const auto grad = params[i].tensor.grad();
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < values.size(); ++j) {
            m[j] = beta1_ * m[j] + (1.0 - beta1_) * grad[j];
            v[j] = beta2_ * v[j] + (1.0 - beta2_) * grad[j] * grad[j];
            values[j] -= lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
        }
    }
}

PlateauScheduler::PlateauScheduler(std::size_t patience, double factor, double threshold)
    : patience_(patience), factor_(factor), threshold_(threshold) {
    if (patience < 1) throw std::invalid_argument("plateau: patience must be >= 1");
    if (!(factor > 0.0 && factor < 1.0)) throw std::invalid_argument("plateau: factor must lie in (0, 1)");
}

double PlateauScheduler::step(double val_loss, double lr) {
    if (val_loss < best_ - threshold_) {
        best_ = val_loss;
        bad_epochs_ = 0;
        return lr;
    }
    if (++bad_epochs_ >= patience_) {
        bad_epochs_ = 0;
        return lr * factor_;
    }
    return lr;
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("train: learning_rate must be > 0");
    if (max_epochs < 1) throw std::invalid_argument("train: max_epochs must be >= 1");
    if (plateau_patience < 1) throw std::invalid_argument("train: plateau_patience must be >= 1");
    if (!(lr_decay_factor > 0.0 && lr_decay_factor < 1.0)) {
        throw std::invalid_argument("train: lr_decay_factor must lie in (0, 1)");
    }
    if (sampling_decay_epochs < 1) throw std::invalid_argument("train: sampling_decay_epochs must be >= 1");
    if (fold_count < 2) throw std::invalid_argument("train: fold_count must be >= 2");
    if (window_len < 2) throw std::invalid_argument("train: window_len must be >= 2");
    if (eval_rollout < 1) throw std::invalid_argument("train: eval_rollout must be >= 1");
}

double sampling_prob(std::size_t epoch, const TrainConfig& cfg) {
    return std::max(0.0, 1.0 - static_cast<double>(epoch) / static_cast<double>(cfg.sampling_decay_epochs));
}

// ---------------------------------------------------------------------------
// Experiments

namespace {
constexpr std::array<std::pair<ExperimentTask, std::string_view>, 4> kTaskNames{{
    {ExperimentTask::Classify2, "classify2"},
    {ExperimentTask::Classify7, "classify7"},
    {ExperimentTask::Classify4, "classify4"},
    {ExperimentTask::Predict, "predict"},
}};
constexpr std::uint64_t kSplitStream = 0x53504c54;
constexpr std::uint64_t kShuffleStream = 0x5348;

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}
}  // namespace

std::string_view to_string(ExperimentTask task) {
    for (const auto& [t, name] : kTaskNames)
        if (t == task) return name;
    return "?";
}

ExperimentTask parse_experiment_task(std::string_view s) {
    for (const auto& [t, name] : kTaskNames)
        if (name == s) return t;
    throw std::invalid_argument("unknown task '" + std::string(s) + "' (expected classify2, classify7, classify4, predict)");
}

LabelTask label_task(ExperimentTask task) {
    switch (task) {
        case ExperimentTask::Classify2: return LabelTask::Binary;
        case ExperimentTask::Classify7: return LabelTask::Fine7;
        case ExperimentTask::Classify4: return LabelTask::Coarse4;
        case ExperimentTask::Predict: break;
    }
    throw std::invalid_argument("predict task has no label alphabet");
}

int state_count(ExperimentTask task) { return class_count(label_task(task)); }

void ExperimentPlan::validate() const {
    if (train_worm_ids.empty()) throw std::invalid_argument("plan: no training worms");
    if (permutation_size < 1 || permutation_size > train_worm_ids.size()) {
        throw std::invalid_argument("plan: permutation_size " + std::to_string(permutation_size) + " outside [1, " +
                                    std::to_string(train_worm_ids.size()) + "]");
    }
    const std::set<std::string> pool(train_worm_ids.begin(), train_worm_ids.end());
    if (pool.size() != train_worm_ids.size()) throw std::invalid_argument("plan: duplicate training worm id");
    for (const auto& id : held_out_worm_ids) {
        if (pool.count(id)) throw std::invalid_argument("plan: worm '" + id + "' is both training and held out");
    }
}

Dataset::Dataset(std::vector<WormRecording> recordings) {
    for (auto& r : recordings) add(std::move(r));
}

void Dataset::add(WormRecording rec) {
    if (index_.count(rec.worm_id)) throw DataError("dataset: duplicate worm id '" + rec.worm_id + "'");
    if (!recordings_.empty() && rec.neuron_names != recordings_.front().neuron_names) {
        throw DataError("dataset: worm '" + rec.worm_id + "' has a different neuron set or order than '" +
                        recordings_.front().worm_id + "'");
    }
    index_[rec.worm_id] = recordings_.size();
    recordings_.push_back(std::move(rec));
}

const WormRecording& Dataset::at(const std::string& worm_id) const {
    auto it = index_.find(worm_id);
    if (it == index_.end()) throw DataError("dataset: no recording for worm '" + worm_id + "'");
    return recordings_[it->second];
}

std::vector<std::string> Dataset::ids() const {
    std::vector<std::string> out;
    for (const auto& r : recordings_) out.push_back(r.worm_id);
    return out;
}

WormSplit split_worm(const WormRecording& rec, const TrainConfig& cfg, std::uint64_t split_seed) {
    WormSplit split;
    split.recording = &rec;
    const std::uint64_t worm_seed = derive_seed(split_seed, fnv1a(rec.worm_id));
    split.windows = windowize(rec, cfg.window_len, worm_seed);
    if (split.windows.size() < cfg.fold_count) {
        throw std::invalid_argument("worm '" + rec.worm_id + "' has " + std::to_string(split.windows.size()) +
                                    " windows, fewer than " + std::to_string(cfg.fold_count) + " folds");
    }
    split.folds = assign_folds(split.windows, cfg.fold_count, derive_seed(worm_seed, 1));
    return split;
}

namespace {

enum class Role { Train, Val, Test };

Role role_of(std::size_t fold, const RunSpec& spec, const TrainConfig& cfg) {
    if (spec.task == ExperimentTask::Predict) return fold == spec.fold ? Role::Val : Role::Train;
    if (fold == spec.fold) return Role::Test;
    if (fold == (spec.fold + 1) % cfg.fold_count) return Role::Val;
    return Role::Train;
}

std::vector<const Window*> windows_with(const WormSplit& split, Role role, const RunSpec& spec,
                                        const TrainConfig& cfg) {
    std::vector<const Window*> out;
    for (std::size_t i = 0; i < split.windows.size(); ++i)
        if (role_of(split.folds.fold_of[i], spec, cfg) == role) out.push_back(&split.windows[i]);
    return out;
}

struct Batch {
    Tensor frames;
    std::vector<int> targets;
};

Batch window_batch(std::span<const Window* const> windows, std::size_t n_neurons, LabelTask task) {
    std::vector<double> features;
    std::vector<StateLabel> labels;
    for (const Window* w : windows) {
        features.insert(features.end(), w->features.begin(), w->features.end());
        labels.insert(labels.end(), w->labels.begin(), w->labels.end());
    }
    return {frames_tensor(features, n_neurons), class_targets(labels, task)};
}

// The recording prefix covering whole windows.
Batch recording_batch(const WormRecording& rec, LabelTask task, std::size_t window) {
    const std::size_t n = rec.n_neurons(), t = rec.n_timesteps() / window * window;
    std::vector<double> features;
    features.reserve(n * t * 2);
    for (std::size_t s = 0; s < t; ++s)
        for (std::size_t i = 0; i < n; ++i) {
            features.push_back(rec.traces(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(s)));
            features.push_back(rec.derivatives(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(s)));
        }
    return {frames_tensor(features, n),
            class_targets(std::span<const StateLabel>(rec.labels).first(t), task)};
}

Eigen::MatrixXd flat_features(const Tensor& frames) {
    const auto b = static_cast<Eigen::Index>(frames.dim(0));
    const auto f = static_cast<Eigen::Index>(frames.dim(1) * frames.dim(2));
    return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        frames.values().data(), b, f);
}

// Frames [B, N, 2] at start + offset for every start.
Tensor frames_at(const WormRecording& rec, std::span<const std::size_t> starts, std::ptrdiff_t offset) {
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

// Window starts from which a rollout of `steps` stays inside the recording.
std::vector<std::size_t> rollout_starts(std::span<const Window* const> windows, const WormRecording& rec,
                                        std::size_t steps, bool recurrent) {
    std::vector<std::size_t> out;
    for (const Window* w : windows) {
        const std::size_t s = w->start_index;
        if (recurrent && s < kBurnInSteps) continue;
        if (s + steps > rec.n_timesteps() - 1) continue;
        out.push_back(s);
    }
    std::sort(out.begin(), out.end());
    return out;
}

struct Split {
    std::vector<WormSplit> worms;
};

Split split_run(const RunSpec& spec, const TrainConfig& cfg, const Dataset& data) {
    Split s;
    for (const auto& id : spec.train_worms) s.worms.push_back(split_worm(data.at(id), cfg, spec.split_seed));
    return s;
}

class Runner {
public:
    Runner(Model& model, const RunSpec& spec, const TrainConfig& cfg, const Dataset& data)
        : model_(model), spec_(spec), cfg_(cfg), data_(data), split_(split_run(spec, cfg, data)) {
        if (spec.train_worms.empty()) throw std::invalid_argument("train: run has no training worms");
        const bool predict = spec.task == ExperimentTask::Predict;
        if ((model.config().task == Task::Predict) != predict) {
            throw std::invalid_argument("train: model task '" + std::string(to_string(model.config().task)) +
                                        "' does not match experiment task '" + std::string(to_string(spec.task)) + "'");
        }
        if (!predict) {
            labels_ = label_task(spec.task);
            k_ = class_count(labels_);
            if (model.config().n_states != k_) {
                throw std::invalid_argument("train: model has " + std::to_string(model.config().n_states) +
                                            " states, task " + std::string(to_string(spec.task)) + " needs " +
                                            std::to_string(k_));
            }
        }
        if (cfg.window_len % model.edge_group() != 0) {
            throw std::invalid_argument("train: window_len " + std::to_string(cfg.window_len) +
                                        " is not a multiple of the model's static_window " +
                                        std::to_string(model.edge_group()));
        }
        if (!data.recordings().empty() && model.config().n_neurons != data.recordings().front().n_neurons()) {
            throw std::invalid_argument("train: model expects " + std::to_string(model.config().n_neurons) +
                                        " neurons, data has " + std::to_string(data.recordings().front().n_neurons()));
        }
    }

    TrainResult run() {
        const auto t0 = std::chrono::steady_clock::now();
        TrainResult result;
        if (model_.config().module_kind == ModuleKind::Linear) {
            fit_linear(result.state);
        } else {
            optimize(result.state);
        }
        result.metrics = metrics();
        result.metrics.best_val_loss = result.state.best_val_loss;
        result.metrics.epochs_run = result.state.epoch;
        result.metrics.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return result;
    }

    double validation() {
        const bool was = model_.training();
        model_.set_training(false);
        const double v = spec_.task == ExperimentTask::Predict ? predict_validation() : classify_validation();
        model_.set_training(was);
        return v;
    }

private:
    bool predict() const { return spec_.task == ExperimentTask::Predict; }

    void optimize(TrainState& state) {
        AdamOptimizer adam(model_.parameters(), cfg_.learning_rate);
        PlateauScheduler plateau(cfg_.plateau_patience, cfg_.lr_decay_factor);
        Rng rng(derive_seed(cfg_.seed, kShuffleStream));
        std::optional<Model> best;
        state.lr = cfg_.learning_rate;

        std::vector<std::size_t> order(split_.worms.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

        bool trained_any = false;
        for (std::size_t epoch = 0; epoch < cfg_.max_epochs; ++epoch) {
            rng.shuffle(order);
            model_.set_training(true);
            double loss_sum = 0.0;
            std::size_t batches = 0;
            for (std::size_t w : order) {
                const auto loss = predict() ? predict_batch_loss(split_.worms[w], epoch, rng)
                                            : classify_batch_loss(split_.worms[w]);
                if (!loss) continue;
                model_.zero_grad();
                loss->backward();
                adam.step();
                loss_sum += loss->item();
                ++batches;
            }
            if (batches == 0) throw std::invalid_argument("train: run has no training windows");
            trained_any = true;

            const double val = validation();
            state.epoch = epoch + 1;
            state.train_loss.push_back(loss_sum / static_cast<double>(batches));
            state.val_loss.push_back(val);
            state.lr_history.push_back(adam.learning_rate());
            if (val < state.best_val_loss) {
                state.best_val_loss = val;
                state.best_epoch = epoch + 1;
                best = model_.clone();
            }
            adam.set_learning_rate(plateau.step(val, adam.learning_rate()));
            state.lr = adam.learning_rate();
            state.epochs_since_improvement = plateau.epochs_since_improvement();
        }
        if (!trained_any) throw std::invalid_argument("train: run has no training windows");
        if (best) {
            model_ = std::move(*best);
        }
        model_.set_training(false);
    }

    std::optional<Tensor> classify_batch_loss(const WormSplit& worm) {
        const auto windows = windows_with(worm, Role::Train, spec_, cfg_);
        if (windows.empty()) return std::nullopt;
        const Batch batch = window_batch(windows, worm.recording->n_neurons(), labels_);
        const Tensor probs = ad::softmax(model_.logits(batch.frames), 1);
        return nll_loss(probs, batch.targets, k_);
    }

    // Rollouts of window_len steps from every training window start; the
    // teacher frames run past the window end where needed.
    std::optional<Tensor> predict_batch_loss(const WormSplit& worm, std::size_t epoch, Rng& rng) {
        const auto windows = windows_with(worm, Role::Train, spec_, cfg_);
        const WormRecording& rec = *worm.recording;
        const std::size_t steps = cfg_.window_len;
        const auto starts = rollout_starts(windows, rec, steps, model_.config().recurrent);
        if (starts.empty()) return std::nullopt;
        RolloutRequest req;
        req.start = frames_at(rec, starts, 0);
        req.steps = steps;
        req.sampling_prob = sampling_prob(epoch, cfg_);
        std::vector<Tensor> truth;
        for (std::size_t s = 1; s <= steps; ++s) truth.push_back(frames_at(rec, starts, static_cast<std::ptrdiff_t>(s)));
        req.teacher = truth;
        if (model_.config().recurrent) {
            for (std::size_t b = kBurnInSteps; b > 0; --b)
                req.burn_in.push_back(frames_at(rec, starts, -static_cast<std::ptrdiff_t>(b)));
        }
        const auto predicted = rollout(model_, req, rng);
        return mse_loss(predicted, truth);
    }

    double classify_validation() {
        double total = 0.0;
        std::size_t labeled = 0;
        for (const auto& worm : split_.worms) {
            const auto windows = windows_with(worm, Role::Val, spec_, cfg_);
            if (windows.empty()) continue;
            const Batch batch = window_batch(windows, worm.recording->n_neurons(), labels_);
            const std::size_t count = static_cast<std::size_t>(
                std::count_if(batch.targets.begin(), batch.targets.end(), [](int t) { return t != kMasked; }));
            if (count == 0) continue;
            const Tensor probs = ad::softmax(model_.logits(batch.frames), 1);
            total += nll_loss(probs, batch.targets, k_).item() * static_cast<double>(count);
            labeled += count;
        }
        return labeled == 0 ? 0.0 : total / static_cast<double>(labeled);
    }

    std::vector<RolloutOrigin> val_origins() const {
        std::vector<RolloutOrigin> origins;
        for (const auto& worm : split_.worms) {
            for (const Window* w : windows_with(worm, Role::Val, spec_, cfg_)) {
                origins.push_back({worm.recording, w->start_index});
            }
        }
        std::sort(origins.begin(), origins.end(), [](const RolloutOrigin& a, const RolloutOrigin& b) {
            return a.recording != b.recording ? a.recording->worm_id < b.recording->worm_id : a.start < b.start;
        });
        return origins;
    }

    double predict_validation() {
        const auto origins = val_origins();
        const PerStepMse mse = per_step_mse(model_, origins, cfg_.eval_rollout);
        if (mse.windows_used == 0) {
            throw std::invalid_argument("train: no validation window leaves room for a " +
                                        std::to_string(cfg_.eval_rollout) + "-step rollout");
        }
        double sum = 0.0;
        for (double v : mse.mse) sum += v;
        return sum / static_cast<double>(mse.mse.size());
    }

    void fit_linear(TrainState& state) {
        Eigen::MatrixXd features;
        std::vector<int> targets;
        for (const auto& worm : split_.worms) {
            const auto windows = windows_with(worm, Role::Train, spec_, cfg_);
            if (windows.empty()) continue;
            const Batch batch = window_batch(windows, worm.recording->n_neurons(), labels_);
            const Eigen::MatrixXd f = flat_features(batch.frames);
            Eigen::MatrixXd grown(features.rows() + f.rows(), f.cols());
            if (features.rows() > 0) grown.topRows(features.rows()) = features;
            grown.bottomRows(f.rows()) = f;
            features = std::move(grown);
            targets.insert(targets.end(), batch.targets.begin(), batch.targets.end());
        }
        if (targets.empty()) throw std::invalid_argument("train: run has no training windows");
        const LinearClassifier fit = linear_baseline(features, targets, k_);
        auto w = model_.parameter("head.weight").mutable_values();
        auto b = model_.parameter("head.bias").mutable_values();
        for (Eigen::Index r = 0; r < fit.weights.rows(); ++r)
            for (Eigen::Index c = 0; c < fit.weights.cols(); ++c)
                w[static_cast<std::size_t>(r * fit.weights.cols() + c)] = fit.weights(r, c);
        for (Eigen::Index c = 0; c < fit.bias.size(); ++c) b[static_cast<std::size_t>(c)] = fit.bias(c);
        model_.set_training(false);
        state.epoch = 1;
        state.lr = cfg_.learning_rate;
        const double val = validation();
        state.train_loss.push_back(std::numeric_limits<double>::quiet_NaN());
        state.val_loss.push_back(val);
        state.lr_history.push_back(cfg_.learning_rate);
        state.best_val_loss = val;
        state.best_epoch = 1;
    }

    // Predictions and targets of the given role pooled over the run's worms.
    std::pair<std::vector<int>, std::vector<int>> predictions(Role role) {
        std::vector<int> pred, target;
        for (const auto& worm : split_.worms) {
            const auto windows = windows_with(worm, role, spec_, cfg_);
            if (windows.empty()) continue;
            const Batch batch = window_batch(windows, worm.recording->n_neurons(), labels_);
            const auto c = classify(model_, batch.frames);
            pred.insert(pred.end(), c.predicted.begin(), c.predicted.end());
            target.insert(target.end(), batch.targets.begin(), batch.targets.end());
        }
        return {pred, target};
    }

    std::optional<double> recording_accuracy(std::span<const std::string> ids) {
        if (ids.empty()) return std::nullopt;
        std::vector<int> pred, target;
        for (const auto& id : ids) {
            const Batch batch = recording_batch(data_.at(id), labels_, cfg_.window_len);
            const auto c = classify(model_, batch.frames);
            pred.insert(pred.end(), c.predicted.begin(), c.predicted.end());
            target.insert(target.end(), batch.targets.begin(), batch.targets.end());
        }
        return accuracy(pred, target);
    }

    RunMetrics metrics() {
        model_.set_training(false);
        RunMetrics m;
        m.run_id = spec_.run_id;
        m.task = std::string(to_string(spec_.task));
        m.fold = spec_.fold;
        m.seed = cfg_.seed;
        m.train_worms = spec_.train_worms;
        if (predict()) {
            const auto origins = val_origins();
            m.per_step_mse = per_step_mse(model_, origins, cfg_.eval_rollout).mse;
            if (!spec_.extended_worms.empty()) {
                std::vector<WormRecording> ext;
                for (const auto& id : spec_.extended_worms) ext.push_back(data_.at(id));
                m.per_step_mse_extended = per_step_mse(model_, ext, cfg_.eval_rollout, cfg_.window_len).mse;
            }
            return m;
        }
        {
            const auto [p, t] = predictions(Role::Train);
            m.accuracy_train = accuracy(p, t);
        }
        {
            const auto [p, t] = predictions(Role::Val);
            m.accuracy_val = accuracy(p, t);
        }
        {
            const auto [p, t] = predictions(Role::Test);
            m.accuracy_test = accuracy(p, t);
            m.confusion = confusion_matrix(p, t, k_);
        }
        m.accuracy_generalization = recording_accuracy(spec_.generalization_worms);
        m.accuracy_extended = recording_accuracy(spec_.extended_worms);
        return m;
    }

    Model& model_;
    const RunSpec& spec_;
    const TrainConfig& cfg_;
    const Dataset& data_;
    Split split_;
    LabelTask labels_ = LabelTask::Binary;
    int k_ = 0;
};

}  // namespace

TrainResult train(Model& model, const RunSpec& spec, const TrainConfig& cfg, const Dataset& data) {
    cfg.validate();
    Runner runner(model, spec, cfg, data);
    return runner.run();
}

double validation_loss(Model& model, const RunSpec& spec, const TrainConfig& cfg, const Dataset& data) {
    cfg.validate();
    Runner runner(model, spec, cfg, data);
    return runner.validation();
}

// ---------------------------------------------------------------------------
// Cross-validation

namespace {

MeanStd summarize(const std::vector<double>& values) {
    MeanStd out;
    out.count = values.size();
    if (values.empty()) return out;
    const auto [m, s] = mean_std(values);
    out.mean = m;
    out.stddev = s;
    return out;
}

MeanStd summarize_optional(std::span<const RunMetrics> runs, std::optional<double> RunMetrics::*field) {
    std::vector<double> values;
    for (const auto& r : runs)
        if (r.*field) values.push_back(*(r.*field));
    return summarize(values);
}

std::vector<MeanStd> summarize_curves(std::span<const RunMetrics> runs, std::vector<double> RunMetrics::*field) {
    std::size_t steps = 0;
    for (const auto& r : runs) steps = std::max(steps, (r.*field).size());
    std::vector<MeanStd> out;
    for (std::size_t s = 0; s < steps; ++s) {
        std::vector<double> values;
        for (const auto& r : runs)
            if (s < (r.*field).size() && std::isfinite((r.*field)[s])) values.push_back((r.*field)[s]);
        out.push_back(summarize(values));
    }
    return out;
}

}  // namespace

AggregateMetrics aggregate(std::span<const RunMetrics> runs) {
    AggregateMetrics a;
    a.runs = runs.size();
    a.accuracy_train = summarize_optional(runs, &RunMetrics::accuracy_train);
    a.accuracy_val = summarize_optional(runs, &RunMetrics::accuracy_val);
    a.accuracy_test = summarize_optional(runs, &RunMetrics::accuracy_test);
    a.accuracy_generalization = summarize_optional(runs, &RunMetrics::accuracy_generalization);
    a.accuracy_extended = summarize_optional(runs, &RunMetrics::accuracy_extended);
    a.per_step_mse = summarize_curves(runs, &RunMetrics::per_step_mse);
    a.per_step_mse_extended = summarize_curves(runs, &RunMetrics::per_step_mse_extended);
    return a;
}

std::string run_id(std::size_t permutation, std::size_t fold) {
    return "p" + std::to_string(permutation) + "-f" + std::to_string(fold);
}

CrossValidationResult cross_validate(const ModelConfig& model_cfg, const ExperimentPlan& plan, const TrainConfig& cfg,
                                     const Dataset& data, const CrossValidationOptions& options) {
    plan.validate();
    cfg.validate();
    model_cfg.validate();
    if (model_cfg.edge_mode == EdgeMode::Connectome && model_cfg.module_kind == ModuleKind::GNN && !options.connectome) {
        throw std::invalid_argument("cross_validate: connectome edge mode needs a connectome");
    }
    // Reject impossible splits before any run starts.
    for (const auto& id : plan.train_worm_ids) {
        const auto windows = data.at(id).n_timesteps() / cfg.window_len;
        if (windows < cfg.fold_count) {
            throw std::invalid_argument("cross_validate: worm '" + id + "' has " + std::to_string(windows) +
                                        " windows, fewer than " + std::to_string(cfg.fold_count) + " folds");
        }
    }
    for (const auto& id : plan.held_out_worm_ids) data.at(id);
    for (const auto& id : plan.extended_eval_ids) data.at(id);

    const auto perms = worm_permutations(plan.train_worm_ids, plan.permutation_size);
    const std::size_t folds = cfg.fold_count;
    const std::size_t cells = perms.size() * folds;

    CrossValidationResult result;
    result.runs.resize(cells);
    std::vector<bool> done(cells, false);
    for (std::size_t c = 0; c < cells; ++c) {
        auto it = options.completed.find(run_id(c / folds, c % folds));
        if (it != options.completed.end()) {
            result.runs[c] = it->second;
            done[c] = true;
        }
    }

    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    std::mutex mutex;

    auto work = [&] {
        while (!failed) {
            const std::size_t c = next.fetch_add(1);
            if (c >= cells) return;
            if (done[c]) continue;
            const std::size_t p = c / folds, f = c % folds;
            try {
                RunSpec spec;
                spec.run_id = run_id(p, f);
                spec.train_worms = perms[p];
                for (const auto& id : plan.train_worm_ids)
                    if (std::find(perms[p].begin(), perms[p].end(), id) == perms[p].end())
                        spec.generalization_worms.push_back(id);
                spec.generalization_worms.insert(spec.generalization_worms.end(), plan.held_out_worm_ids.begin(),
                                                 plan.held_out_worm_ids.end());
                spec.extended_worms = plan.extended_eval_ids;
                spec.task = plan.task;
                spec.fold = f;
                spec.split_seed = derive_seed(cfg.seed, p, kSplitStream);

                TrainConfig run_cfg = cfg;
                run_cfg.seed = derive_seed(cfg.seed, p, f);
                Model model(model_cfg, run_cfg.seed);
                if (options.connectome && model_cfg.edge_mode == EdgeMode::Connectome) {
                    model.set_connectome(*options.connectome);
                }
                TrainResult r = train(model, spec, run_cfg, data);
                r.metrics.permutation = p;
                std::lock_guard lock(mutex);
                result.runs[c] = std::move(r.metrics);
                if (options.on_run_done) options.on_run_done(result.runs[c]);
            } catch (...) {
                std::lock_guard lock(mutex);
                if (!error) error = std::current_exception();
                failed = true;
            }
        }
    };

    const std::size_t workers = std::max<std::size_t>(1, std::min(options.workers, cells));
    if (workers == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t i = 0; i < workers; ++i) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    if (error) std::rethrow_exception(error);
    result.summary = aggregate(result.runs);
    return result;
}

}  // namespace wormgnn
