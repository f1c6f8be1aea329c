#include "wormgnn/pipeline.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <set>

#include "wormgnn/random.hpp"

namespace wormgnn {

const std::vector<std::string>& shared_training_neurons() {
    static const std::vector<std::string> names{"AIBL", "AIBR", "ALA",  "AVAL", "AVAR", "AVBL", "AVER", "RID",
                                                "RIML", "RIMR", "RMED", "RMEL", "RMER", "VB01", "VB02"};
    return names;
}

const std::vector<std::string>& shared_extended_neurons() {
    static const std::vector<std::string> names{"AIBR", "AVAL", "VB02"};
    return names;
}

std::vector<double> compute_derivative(std::span<const double> trace) {
    if (trace.size() < 2) {
        throw DataError("compute_derivative: need at least 2 timesteps, got " + std::to_string(trace.size()));
    }
    std::vector<double> d(trace.size());
    for (std::size_t t = 0; t + 1 < trace.size(); ++t) d[t] = trace[t + 1] - trace[t];
    d.back() = d[d.size() - 2];
    return d;
}

Eigen::MatrixXd compute_derivatives(const Eigen::MatrixXd& traces) {
    Eigen::MatrixXd out(traces.rows(), traces.cols());
    std::vector<double> row(static_cast<std::size_t>(traces.cols()));
    for (Eigen::Index r = 0; r < traces.rows(); ++r) {
        for (Eigen::Index c = 0; c < traces.cols(); ++c) row[static_cast<std::size_t>(c)] = traces(r, c);
        const auto d = compute_derivative(row);
        for (Eigen::Index c = 0; c < traces.cols(); ++c) out(r, c) = d[static_cast<std::size_t>(c)];
    }
    return out;
}

void normalize_row(std::span<double> row) {
    if (row.empty()) return;
    const auto [lo, hi] = std::minmax_element(row.begin(), row.end());
    const double min = *lo, range = *hi - *lo;
    for (double& x : row) x = range > 0.0 ? (x - min) / range : 0.0;
}

namespace {

void normalize_rows(Eigen::MatrixXd& m) {
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
        normalize_row(row);
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = row[static_cast<std::size_t>(c)];
    }
}

WormRecording take_rows(const WormRecording& rec, const std::vector<std::size_t>& rows) {
    WormRecording out;
    out.worm_id = rec.worm_id;
    out.dataset_tag = rec.dataset_tag;
    out.sample_period_s = rec.sample_period_s;
    out.labels = rec.labels;
    const auto n = static_cast<Eigen::Index>(rows.size());
    out.traces.resize(n, rec.traces.cols());
    out.derivatives.resize(n, rec.derivatives.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(rows[i]);
        out.neuron_names.push_back(rec.neuron_names[rows[i]]);
        out.traces.row(static_cast<Eigen::Index>(i)) = rec.traces.row(r);
        out.derivatives.row(static_cast<Eigen::Index>(i)) = rec.derivatives.row(r);
    }
    return out;
}

}  // namespace

WormRecording normalize_recording(WormRecording rec) {
    normalize_rows(rec.traces);
    normalize_rows(rec.derivatives);
    return rec;
}

WormRecording select_neurons(const WormRecording& rec, std::span<const std::string> names) {
    std::vector<std::size_t> rows;
    for (const auto& name : names) {
        const auto it = std::find(rec.neuron_names.begin(), rec.neuron_names.end(), name);
        if (it == rec.neuron_names.end()) {
            throw DataError(rec.worm_id + ": neuron '" + name + "' not present in recording");
        }
        rows.push_back(static_cast<std::size_t>(it - rec.neuron_names.begin()));
    }
    return take_rows(rec, rows);
}

WormRecording exclude_neurons(const WormRecording& rec, std::span<const std::string> names) {
    for (const auto& name : names) {
        if (std::find(rec.neuron_names.begin(), rec.neuron_names.end(), name) == rec.neuron_names.end()) {
            throw DataError(rec.worm_id + ": neuron '" + name + "' not present in recording");
        }
    }
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < rec.neuron_names.size(); ++i) {
        if (std::find(names.begin(), names.end(), rec.neuron_names[i]) == names.end()) rows.push_back(i);
    }
    if (rows.empty()) throw DataError(rec.worm_id + ": exclusion leaves no neurons");
    return take_rows(rec, rows);
}

std::vector<std::string> common_neurons(std::span<const WormRecording> recs) {
    if (recs.empty()) return {};
    std::set<std::string> shared(recs.front().neuron_names.begin(), recs.front().neuron_names.end());
    for (const auto& rec : recs.subspan(1)) {
        std::set<std::string> next;
        for (const auto& name : rec.neuron_names) {
            if (shared.count(name)) next.insert(name);
        }
        shared = std::move(next);
    }
    return {shared.begin(), shared.end()};
}

StateLabel Window::majority_label() const {
    std::map<StateLabel, std::size_t> counts;
    for (auto l : labels) ++counts[l];
    StateLabel best = labels.front();
    std::size_t best_count = 0;
    for (const auto& [label, count] : counts) {  // ordered by label value
        if (count > best_count) {
            best = label;
            best_count = count;
        }
    }
    return best;
}

std::vector<Window> windowize(const WormRecording& rec, std::size_t window, std::uint64_t seed) {
    const std::size_t t_total = rec.n_timesteps();
    if (window < 2) throw std::invalid_argument("windowize: window length must be >= 2");
    if (window > t_total) {
        throw std::invalid_argument("windowize: window length " + std::to_string(window) + " exceeds recording length " +
                                    std::to_string(t_total));
    }
    const std::size_t n = rec.n_neurons();
    std::vector<Window> out;
    for (std::size_t start = 0; start + window <= t_total; start += window) {
        Window w;
        w.worm_id = rec.worm_id;
        w.start_index = start;
        w.length = window;
        w.n_neurons = n;
        w.features.resize(window * n * 2);
        for (std::size_t t = 0; t < window; ++t) {
            const auto col = static_cast<Eigen::Index>(start + t);
            for (std::size_t i = 0; i < n; ++i) {
                const auto row = static_cast<Eigen::Index>(i);
                w.features[(t * n + i) * 2] = rec.traces(row, col);
                w.features[(t * n + i) * 2 + 1] = rec.derivatives(row, col);
            }
        }
        w.labels.assign(rec.labels.begin() + static_cast<std::ptrdiff_t>(start),
                        rec.labels.begin() + static_cast<std::ptrdiff_t>(start + window));
        out.push_back(std::move(w));
    }
    Rng rng(seed);
    rng.shuffle(out);
    return out;
}

std::vector<std::size_t> FoldAssignment::members(std::size_t fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < fold_of.size(); ++i) {
        if (fold_of[i] == fold) out.push_back(i);
    }
    return out;
}

std::vector<std::size_t> FoldAssignment::sizes() const {
    std::vector<std::size_t> out(fold_count, 0);
    for (auto f : fold_of) ++out[f];
    return out;
}

FoldAssignment assign_folds(std::span<const Window> windows, std::size_t k, std::uint64_t seed) {
    if (k < 2) throw std::invalid_argument("assign_folds: need at least 2 folds");
    if (k > windows.size()) {
        throw std::invalid_argument("assign_folds: " + std::to_string(k) + " folds exceed window count " +
                                    std::to_string(windows.size()));
    }
    std::map<StateLabel, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < windows.size(); ++i) groups[windows[i].majority_label()].push_back(i);

    Rng rng(seed);
    FoldAssignment out{k, seed, std::vector<std::size_t>(windows.size(), 0)};
    std::size_t dealt = 0;
    for (auto& [label, members] : groups) {
        rng.shuffle(members);
        for (auto idx : members) out.fold_of[idx] = dealt++ % k;
    }
    return out;
}

std::vector<std::vector<std::string>> worm_permutations(std::span<const std::string> ids, std::size_t r) {
    if (r < 1 || r > ids.size()) {
        throw std::invalid_argument("worm_permutations: subset size " + std::to_string(r) + " outside [1, " +
                                    std::to_string(ids.size()) + "]");
    }
    std::vector<std::vector<std::string>> out;
    std::vector<std::size_t> idx(r);
    std::iota(idx.begin(), idx.end(), 0);
    while (true) {
        std::vector<std::string> subset;
        for (auto i : idx) subset.push_back(ids[i]);
        out.push_back(std::move(subset));
        // Advance to the next combination in lexicographic order.
        std::size_t pos = r;
        while (pos > 0 && idx[pos - 1] == ids.size() - r + pos - 1) --pos;
        if (pos == 0) break;
        ++idx[pos - 1];
        for (std::size_t j = pos; j < r; ++j) idx[j] = idx[j - 1] + 1;
    }
    return out;
}

}  // namespace wormgnn
