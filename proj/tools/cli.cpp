#include "wormgnn/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <mutex>
#include <set>
#include <sstream>
#include <json.hpp>

#include "wormgnn/evaluation.hpp"
#include "wormgnn/pipeline.hpp"
#include "wormgnn/synth.hpp"
#include "wormgnn/training.hpp"

namespace wormgnn::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::string join(const std::vector<std::string>& items, const char* sep = ",") {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) out += sep;
        out += items[i];
    }
    return out;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(path.string() + ": cannot open");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

KeyValueConfig KeyValueConfig::parse(const std::string& text, const std::string& source, const fs::path& base_dir) {
    KeyValueConfig cfg;
    cfg.source_ = source;
    cfg.base_dir_ = base_dir;
    std::istringstream in(text);
    std::string line;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        const std::string body = trim(line);
        if (body.empty()) continue;
        const std::string origin = source + ":" + std::to_string(n);
        const auto eq = body.find('=');
        if (eq == std::string::npos) throw ConfigError(origin + ": expected 'key = value', got '" + body + "'");
        const std::string key = trim(std::string_view(body).substr(0, eq));
        if (key.empty()) throw ConfigError(origin + ": empty key");
        if (cfg.entries_.count(key)) {
            throw ConfigError(origin + ": field '" + key + "' repeats " + cfg.entries_.at(key).origin);
        }
        cfg.entries_[key] = {trim(std::string_view(body).substr(eq + 1)), origin, false};
    }
    return cfg;
}

KeyValueConfig KeyValueConfig::load(const fs::path& path) {
    return parse(read_file(path), path.string(), fs::absolute(path).parent_path());
}

void KeyValueConfig::set(const std::string& key, const std::string& value, const std::string& origin) {
    entries_[key] = {value, origin, false};
}

std::string KeyValueConfig::where(const std::string& key) const {
    auto it = entries_.find(key);
    return (it == entries_.end() ? source_ : it->second.origin) + ": field '" + key + "'";
}

void KeyValueConfig::fail(const std::string& key, const std::string& problem) const {
    throw ConfigError(where(key) + ": " + problem);
}

const KeyValueConfig::Entry* KeyValueConfig::lookup(const std::string& key) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return nullptr;
    it->second.used = true;
    return &it->second;
}

void KeyValueConfig::resolve(const std::string& key, const std::string& value) { resolved_[key] = value; }

std::optional<std::string> KeyValueConfig::maybe_text(const std::string& key) {
    const Entry* e = lookup(key);
    if (!e) return std::nullopt;
    resolved_[key] = e->value;
    return e->value;
}

std::string KeyValueConfig::text(const std::string& key, const std::string& fallback) {
    auto v = maybe_text(key);
    if (!v) resolved_[key] = fallback;
    return v ? *v : fallback;
}

std::uint64_t KeyValueConfig::u64(const std::string& key, std::uint64_t fallback) {
    const Entry* e = lookup(key);
    if (!e) {
        resolved_[key] = std::to_string(fallback);
        return fallback;
    }
    std::uint64_t v = 0;
    const auto& s = e->value;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size()) fail(key, "expected a non-negative integer, got '" + s + "'");
    resolved_[key] = s;
    return v;
}

std::size_t KeyValueConfig::count(const std::string& key, std::size_t fallback) {
    return static_cast<std::size_t>(u64(key, fallback));
}

int KeyValueConfig::integer(const std::string& key, int fallback) {
    const Entry* e = lookup(key);
    if (!e) {
        resolved_[key] = std::to_string(fallback);
        return fallback;
    }
    int v = 0;
    const auto& s = e->value;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size()) fail(key, "expected an integer, got '" + s + "'");
    resolved_[key] = s;
    return v;
}

double KeyValueConfig::real(const std::string& key, double fallback) {
    const Entry* e = lookup(key);
    if (!e) {
        resolved_[key] = format_double(fallback);
        return fallback;
    }
    double v = 0;
    const auto& s = e->value;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size() || !std::isfinite(v)) {
        fail(key, "expected a finite number, got '" + s + "'");
    }
    resolved_[key] = s;
    return v;
}

bool KeyValueConfig::boolean(const std::string& key, bool fallback) {
    const Entry* e = lookup(key);
    if (!e) {
        resolved_[key] = fallback ? "true" : "false";
        return fallback;
    }
    resolved_[key] = e->value;
    if (e->value == "true" || e->value == "1" || e->value == "yes") return true;
    if (e->value == "false" || e->value == "0" || e->value == "no") return false;
    fail(key, "expected true or false, got '" + e->value + "'");
}

std::vector<std::string> KeyValueConfig::list(const std::string& key, const std::vector<std::string>& fallback) {
    const Entry* e = lookup(key);
    if (!e) {
        resolved_[key] = join(fallback);
        return fallback;
    }
    std::vector<std::string> items;
    std::string_view rest = e->value;
    while (true) {
        const auto comma = rest.find(',');
        std::string item = trim(rest.substr(0, comma));
        if (!item.empty()) items.push_back(std::move(item));
        if (comma == std::string_view::npos) break;
        rest.remove_prefix(comma + 1);
    }
    resolved_[key] = join(items);
    return items;
}

std::optional<fs::path> KeyValueConfig::maybe_path(const std::string& key) {
    const Entry* e = lookup(key);
    if (!e || e->value.empty()) {
        resolved_[key] = "";
        return std::nullopt;
    }
    fs::path p(e->value);
    if (p.is_relative() && !base_dir_.empty()) p = base_dir_ / p;
    p = fs::absolute(p).lexically_normal();
    resolved_[key] = p.string();
    return p;
}

std::vector<fs::path> KeyValueConfig::paths(const std::string& key) {
    std::vector<fs::path> out;
    for (const auto& item : list(key)) {
        fs::path p(item);
        if (p.is_relative() && !base_dir_.empty()) p = base_dir_ / p;
        out.push_back(fs::absolute(p).lexically_normal());
    }
    return out;
}

void KeyValueConfig::require_all_used() const {
    for (const auto& [key, e] : entries_) {
        if (!e.used) throw ConfigError(e.origin + ": field '" + key + "': unknown for this command");
    }
}

std::string KeyValueConfig::manifest() const {
    std::string out;
    for (const auto& [key, value] : resolved_) out += key + " = " + value + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// Commands

namespace {

struct Options {
    std::string command;
    fs::path config;
    fs::path out;
    std::optional<std::uint64_t> seed;
    std::size_t workers = 1;
    bool resume = false;
    bool force = false;
};

// Output files of one command. Nothing is written until every target has
// been checked, so a refused run leaves the directory untouched.
class OutputDir {
public:
    OutputDir(fs::path dir, bool force) : dir_(std::move(dir)), force_(force) {}

    fs::path plan(const std::string& name) {
        planned_.push_back(dir_ / name);
        return planned_.back();
    }
    void check(const std::set<fs::path>& allowed = {}) const {
        if (fs::exists(dir_) && !fs::is_directory(dir_)) {
            throw std::runtime_error("--out " + dir_.string() + " exists and is not a directory");
        }
        if (!force_) {
            for (const auto& p : planned_) {
                if (fs::exists(p) && !allowed.count(p)) {
                    throw std::runtime_error("refusing to overwrite " + p.string() + " (pass --force)");
                }
            }
        }
        fs::create_directories(dir_);
    }
    void write(const fs::path& path, const std::string& content) const {
        fs::create_directories(path.parent_path());
        const fs::path tmp = path.string() + ".tmp";
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            if (!out) throw std::runtime_error("cannot write " + tmp.string());
            out << content;
            if (!out) throw std::runtime_error("failed writing " + tmp.string());
        }
        fs::rename(tmp, path);
    }
    const fs::path& dir() const { return dir_; }

private:
    fs::path dir_;
    bool force_;
    std::vector<fs::path> planned_;
};

std::string manifest_text(const std::string& command, const KeyValueConfig& cfg) {
    return "# wormgnn " + command + " manifest; rerun with: wormgnn " + command + " --config " + kManifestFile +
           " --out DIR\n" + cfg.manifest();
}

void check_command(KeyValueConfig& cfg, const std::string& command) {
    const auto declared = cfg.maybe_text("command");
    if (declared && *declared != command) {
        throw ConfigError(cfg.where("command") + ": config was written for '" + *declared + "', not '" + command + "'");
    }
    cfg.resolve("command", command);
}

// Recordings listed under data.recordings (files or directories of *.json),
// restricted to a common neuron set and normalized.
struct LoadedData {
    Dataset data;
    std::vector<std::string> neurons;
    std::vector<std::string> ids;  // load order
};

LoadedData load_data(KeyValueConfig& cfg) {
    if (!cfg.has("data.recordings")) throw ConfigError(cfg.where("data.recordings") + ": required");
    std::vector<fs::path> files;
    for (const auto& p : cfg.paths("data.recordings")) {
        if (fs::is_directory(p)) {
            std::vector<fs::path> found;
            for (const auto& e : fs::directory_iterator(p))
                if (e.is_regular_file() && e.path().extension() == ".json") found.push_back(e.path());
            std::sort(found.begin(), found.end());
            if (found.empty()) throw ConfigError(cfg.where("data.recordings") + ": no *.json files in " + p.string());
            files.insert(files.end(), found.begin(), found.end());
        } else if (fs::exists(p)) {
            files.push_back(p);
        } else {
            throw ConfigError(cfg.where("data.recordings") + ": " + p.string() + " does not exist");
        }
    }
    if (files.empty()) throw ConfigError(cfg.where("data.recordings") + ": empty");
    std::vector<std::string> file_names;
    for (const auto& f : files) file_names.push_back(f.string());
    cfg.resolve("data.recordings", join(file_names));

    std::vector<WormRecording> recs;
    for (const auto& f : files) recs.push_back(load_recording(f));
    const auto excluded = cfg.list("data.exclude_neurons");
    if (!excluded.empty())
        for (auto& r : recs) r = exclude_neurons(r, excluded);

    LoadedData out;
    out.neurons = cfg.has("data.neurons") ? cfg.list("data.neurons") : common_neurons(recs);
    cfg.resolve("data.neurons", join(out.neurons));
    if (out.neurons.empty()) throw ConfigError(cfg.where("data.neurons") + ": the recordings share no neurons");
    for (auto& r : recs) {
        out.ids.push_back(r.worm_id);
        out.data.add(normalize_recording(select_neurons(r, out.neurons)));
    }
    return out;
}

ExperimentTask read_task(KeyValueConfig& cfg) {
    const auto s = cfg.text("task", "classify2");
    try {
        return parse_experiment_task(s);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(cfg.where("task") + ": " + e.what());
    }
}

template <class Fn>
auto parse_field(KeyValueConfig& cfg, const std::string& key, const std::string& fallback, Fn parse) {
    const auto s = cfg.text(key, fallback);
    try {
        return parse(s);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(cfg.where(key) + ": " + e.what());
    }
}

ModelConfig read_model(KeyValueConfig& cfg, ExperimentTask task, std::size_t n_neurons) {
    ModelConfig m;
    m.task = task == ExperimentTask::Predict ? Task::Predict : Task::Classify;
    m.module_kind = parse_field(cfg, "model.kind", "gnn", parse_module_kind);
    m.hidden_dim = cfg.count("model.hidden_dim", default_hidden_dim(m.task));
    m.edge_mode = parse_field(cfg, "model.edge_mode", std::string(to_string(m.edge_mode)), parse_edge_mode);
    m.softmax_temperature = cfg.real("model.softmax_temperature", m.softmax_temperature);
    m.aggregation = parse_field(cfg, "model.aggregation", std::string(to_string(m.aggregation)), parse_aggregation);
    m.recurrent = cfg.boolean("model.recurrent", m.recurrent);
    m.include_self_edges = cfg.boolean("model.self_edges", m.include_self_edges);
    m.static_window = cfg.count("model.static_window", m.static_window);
    m.n_states = task == ExperimentTask::Predict ? 2 : state_count(task);
    m.n_neurons = n_neurons;
    try {
        m.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(cfg.where("model.kind") + ": " + e.what());
    }
    return m;
}

TrainConfig read_train(KeyValueConfig& cfg, ExperimentTask task, std::uint64_t seed) {
    TrainConfig t;
    t.learning_rate = cfg.real("train.learning_rate", t.learning_rate);
    t.max_epochs = cfg.count("train.max_epochs", t.max_epochs);
    t.plateau_patience = cfg.count("train.plateau_patience", t.plateau_patience);
    t.lr_decay_factor = cfg.real("train.lr_decay_factor", t.lr_decay_factor);
    t.sampling_decay_epochs = cfg.count("train.sampling_decay_epochs", t.sampling_decay_epochs);
    t.fold_count = cfg.count("train.fold_count", t.fold_count);
    t.window_len = cfg.count("train.window_len", t.window_len);
    t.eval_rollout = cfg.count("train.eval_rollout", t.eval_rollout);
    t.loss_kind = task == ExperimentTask::Predict ? LossKind::MSE : LossKind::NLL;
    t.seed = seed;
    try {
        t.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(cfg.where("train.max_epochs") + ": " + e.what());
    }
    return t;
}

// Training pool, held-out and extended worms; the pool defaults to every
// loaded worm that is neither held out nor extended.
ExperimentPlan read_plan(KeyValueConfig& cfg, const LoadedData& loaded, ExperimentTask task) {
    ExperimentPlan plan;
    plan.task = task;
    plan.held_out_worm_ids = cfg.list("plan.held_out");
    plan.extended_eval_ids = cfg.list("plan.extended");
    std::vector<std::string> pool;
    for (const auto& id : loaded.ids) {
        const auto& h = plan.held_out_worm_ids;
        const auto& x = plan.extended_eval_ids;
        if (std::find(h.begin(), h.end(), id) == h.end() && std::find(x.begin(), x.end(), id) == x.end())
            pool.push_back(id);
    }
    plan.train_worm_ids = cfg.list("plan.train_worms", pool);
    for (const auto* ids : {&plan.train_worm_ids, &plan.held_out_worm_ids, &plan.extended_eval_ids})
        for (const auto& id : *ids)
            if (!loaded.data.contains(id)) throw ConfigError(cfg.where("plan.train_worms") + ": unknown worm '" + id + "'");
    return plan;
}

std::optional<AdjacencyMatrix> read_connectome(KeyValueConfig& cfg, const ModelConfig& m,
                                               const std::vector<std::string>& neurons) {
    const auto path = cfg.maybe_path("model.connectome");
    const bool needed = m.module_kind == ModuleKind::GNN && m.edge_mode == EdgeMode::Connectome;
    if (needed && !path) throw ConfigError(cfg.where("model.connectome") + ": required for connectome edges");
    if (!needed) return std::nullopt;
    return load_connectome_edges(*path, neurons, m.include_self_edges);
}

std::string metrics_lines(const std::vector<RunMetrics>& runs) {
    std::string out;
    for (const auto& r : runs) out += to_json_line(r) + "\n";
    return out;
}

std::vector<std::string> state_names(ExperimentTask task) {
    const LabelTask lt = label_task(task);
    std::vector<std::string> names(static_cast<std::size_t>(class_count(lt)));
    // Coarse names win for the coarse alphabet, fine names otherwise.
    std::vector<StateLabel> order;
    for (int s = 0; s <= static_cast<int>(StateLabel::VentralTurn4); ++s) order.push_back(static_cast<StateLabel>(s));
    if (lt == LabelTask::Coarse4) std::stable_partition(order.begin(), order.end(), is_coarse);
    for (const StateLabel label : order) {
        if (const auto c = class_index(label, lt); c && names[static_cast<std::size_t>(*c)].empty())
            names[static_cast<std::size_t>(*c)] = std::string(label_name(label));
    }
    return names;
}

std::string matrix_tsv(const Eigen::MatrixXd& m, const std::vector<std::string>& names) {
    std::string out = "neuron";
    for (const auto& n : names) out += "\t" + n;
    out += "\n";
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        out += names[static_cast<std::size_t>(i)];
        for (Eigen::Index j = 0; j < m.cols(); ++j) out += "\t" + format_double(m(i, j));
        out += "\n";
    }
    return out;
}

std::uint64_t master_seed(KeyValueConfig& cfg, const Options& opt) {
    if (opt.seed) cfg.set("seed", std::to_string(*opt.seed), "--seed");
    return cfg.u64("seed", 0);
}

void require_checkpoint_fits(const Model& model, const fs::path& path, const LoadedData& loaded) {
    if (model.config().n_neurons != loaded.neurons.size()) {
        throw std::invalid_argument("checkpoint " + path.string() + " expects " +
                                    std::to_string(model.config().n_neurons) + " neurons, the recordings provide " +
                                    std::to_string(loaded.neurons.size()));
    }
}

Model read_checkpoint(KeyValueConfig& cfg, const LoadedData& loaded, fs::path& path) {
    const auto p = cfg.maybe_path("checkpoint");
    if (!p) throw ConfigError(cfg.where("checkpoint") + ": required");
    path = *p;
    Model model = load_checkpoint(path);
    require_checkpoint_fits(model, path, loaded);
    if (auto conn = read_connectome(cfg, model.config(), loaded.neurons)) model.set_connectome(*conn);
    model.set_training(false);
    return model;
}

ExperimentTask checkpoint_task(KeyValueConfig& cfg, const Model& model) {
    if (model.config().task == Task::Predict) {
        cfg.resolve("task", "predict");
        return ExperimentTask::Predict;
    }
    const ExperimentTask fallback = model.config().n_states == 4   ? ExperimentTask::Classify4
                                    : model.config().n_states == 2 ? ExperimentTask::Classify2
                                                                   : ExperimentTask::Classify7;
    const ExperimentTask task = parse_field(cfg, "task", std::string(to_string(fallback)), parse_experiment_task);
    if (task == ExperimentTask::Predict || state_count(task) != model.config().n_states) {
        throw ConfigError(cfg.where("task") + ": checkpoint classifies " + std::to_string(model.config().n_states) +
                          " states, task " + std::string(to_string(task)) + " does not");
    }
    return task;
}

// --- gen-synth

int cmd_gen_synth(KeyValueConfig& cfg, const Options& opt, std::ostream& out) {
    check_command(cfg, "gen-synth");
    const std::uint64_t seed = master_seed(cfg, opt);
    SynthConfig base;
    const std::size_t worms = cfg.count("synth.n_worms", 5);
    const std::string prefix = cfg.text("synth.id_prefix", "synth");
    base.n_neurons = cfg.count("synth.n_neurons", base.n_neurons);
    base.timesteps = cfg.count("synth.timesteps", base.timesteps);
    base.n_states = cfg.integer("synth.n_states", base.n_states);
    base.latent_dim = cfg.count("synth.latent_dim", base.latent_dim);
    base.noise_std = cfg.real("synth.noise_std", base.noise_std);
    base.angular_velocity_jitter = cfg.real("synth.angular_velocity_jitter", base.angular_velocity_jitter);
    base.period = cfg.real("synth.period", base.period);
    base.mixing_individuality = cfg.real("synth.mixing_individuality", base.mixing_individuality);
    base.radius_modulation = cfg.real("synth.radius_modulation", base.radius_modulation);
    base.speed_modulation = cfg.real("synth.speed_modulation", base.speed_modulation);
    base.sample_period_s = cfg.real("synth.sample_period_s", base.sample_period_s);
    base.latent_seed = cfg.u64("synth.latent_seed", seed);
    cfg.require_all_used();
    if (worms < 1) throw ConfigError(cfg.where("synth.n_worms") + ": must be >= 1");
    try {
        base.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(cfg.where("synth.n_states") + ": " + e.what());
    }

    OutputDir dir(opt.out, opt.force);
    std::vector<std::pair<fs::path, SynthConfig>> jobs;
    for (std::size_t w = 0; w < worms; ++w) {
        SynthConfig c = base;
        c.worm_id = prefix + std::to_string(w);
        c.mixing_seed = derive_seed(seed, 1, w);
        jobs.emplace_back(dir.plan(c.worm_id + ".json"), c);
    }
    const auto manifest = dir.plan(kManifestFile);
    dir.check();
    for (const auto& [path, c] : jobs) dir.write(path, serialize_recording(generate_worm(c)));
    dir.write(manifest, manifest_text("gen-synth", cfg));
    out << "wrote " << worms << " recordings to " << opt.out.string() << "\n";
    return 0;
}

// --- train

int cmd_train(KeyValueConfig& cfg, const Options& opt, std::ostream& out) {
    check_command(cfg, "train");
    const std::uint64_t seed = master_seed(cfg, opt);
    const auto loaded = load_data(cfg);
    const ExperimentTask task = read_task(cfg);
    const ModelConfig mc = read_model(cfg, task, loaded.neurons.size());
    const TrainConfig base = read_train(cfg, task, seed);
    const ExperimentPlan plan = read_plan(cfg, loaded, task);
    const std::size_t fold = cfg.count("train.fold", 0);
    const auto connectome = read_connectome(cfg, mc, loaded.neurons);
    cfg.require_all_used();
    if (fold >= base.fold_count) throw ConfigError(cfg.where("train.fold") + ": must be < train.fold_count");

    // The same seeds as cell (0, fold) of a cross-validation over one subset.
    RunSpec spec;
    spec.run_id = run_id(0, fold);
    spec.train_worms = plan.train_worm_ids;
    spec.generalization_worms = plan.held_out_worm_ids;
    spec.extended_worms = plan.extended_eval_ids;
    spec.task = task;
    spec.fold = fold;
    spec.split_seed = derive_seed(seed, 0, 0x53504c54);
    TrainConfig tc = base;
    tc.seed = derive_seed(seed, 0, fold);

    OutputDir dir(opt.out, opt.force);
    const auto ckpt = dir.plan("checkpoint.json"), metrics = dir.plan("metrics.jsonl"), log = dir.plan("train_log.tsv"),
               manifest = dir.plan(kManifestFile);
    const auto confusion = dir.plan("confusion.tsv"), curve = dir.plan("mse_curve.tsv");
    dir.check();

    Model model(mc, tc.seed);
    if (connectome) model.set_connectome(*connectome);
    const TrainResult r = train(model, spec, tc, loaded.data);

    std::string log_text = "epoch\ttrain_loss\tval_loss\tlr\n";
    for (std::size_t e = 0; e < r.state.train_loss.size(); ++e) {
        log_text += std::to_string(e + 1) + "\t" + format_double(r.state.train_loss[e]) + "\t" +
                    format_double(r.state.val_loss[e]) + "\t" + format_double(r.state.lr_history[e]) + "\n";
    }
    save_checkpoint(model, ckpt);
    dir.write(metrics, to_json_line(r.metrics) + "\n");
    dir.write(log, log_text);
    if (r.metrics.confusion) {
        const auto names = state_names(task);
        dir.write(confusion, confusion_tsv(*r.metrics.confusion, names));
    }
    if (!r.metrics.per_step_mse.empty()) {
        const std::vector<std::string> names{"validation"};
        const std::vector<std::vector<double>> curves{r.metrics.per_step_mse};
        dir.write(curve, mse_curve_tsv(names, curves));
    }
    dir.write(manifest, manifest_text("train", cfg));
    out << to_json_line(r.metrics) << "\n";
    return 0;
}

// --- cross-validate

std::map<std::string, RunMetrics> read_completed(const fs::path& path, std::ostream& err) {
    std::map<std::string, RunMetrics> done;
    if (!fs::exists(path)) return done;
    std::ifstream in(path);
    std::string line;
    std::vector<std::string> lines;
    while (std::getline(in, line))
        if (!trim(line).empty()) lines.push_back(line);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        try {
            RunMetrics m = parse_metrics_line(lines[i]);
            done[m.run_id] = std::move(m);
        } catch (const std::exception& e) {
            // An interrupted run can leave a torn final line.
            if (i + 1 != lines.size()) throw;
            err << "resume: ignoring incomplete last line of " << path.string() << "\n";
        }
    }
    return done;
}

int cmd_cross_validate(KeyValueConfig& cfg, const Options& opt, std::ostream& out, std::ostream& err) {
    check_command(cfg, "cross-validate");
    const std::uint64_t seed = master_seed(cfg, opt);
    const auto loaded = load_data(cfg);
    const ExperimentTask task = read_task(cfg);
    const ModelConfig mc = read_model(cfg, task, loaded.neurons.size());
    const TrainConfig tc = read_train(cfg, task, seed);
    ExperimentPlan plan = read_plan(cfg, loaded, task);
    plan.permutation_size = cfg.count("plan.permutation_size", 1);
    const auto connectome = read_connectome(cfg, mc, loaded.neurons);
    cfg.require_all_used();
    try {
        plan.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(cfg.where("plan.permutation_size") + ": " + e.what());
    }

    OutputDir dir(opt.out, opt.force);
    const auto metrics = dir.plan("metrics.jsonl"), summary = dir.plan("summary.tsv"),
               manifest = dir.plan(kManifestFile), confusion = dir.plan("confusion.tsv"),
               curve = dir.plan("mse_curve.tsv");
    const std::string manifest_body = manifest_text("cross-validate", cfg);

    CrossValidationOptions cv;
    cv.workers = std::max<std::size_t>(1, opt.workers);
    cv.connectome = connectome;
    if (opt.resume) {
        if (fs::exists(manifest) && read_file(manifest) != manifest_body) {
            throw std::runtime_error("--resume: " + manifest.string() + " records a different configuration");
        }
        cv.completed = read_completed(metrics, err);
        dir.check({metrics, summary, manifest, confusion, curve});
    } else {
        dir.check();
    }
    dir.write(manifest, manifest_body);

    // Finished runs are appended as they complete so an interrupted sweep
    // can resume; the file is rewritten in cell order at the end.
    std::ofstream progress(metrics, opt.resume ? std::ios::app : std::ios::trunc);
    if (!progress) throw std::runtime_error("cannot write " + metrics.string());
    const std::size_t total = worm_permutations(plan.train_worm_ids, plan.permutation_size).size() * tc.fold_count;
    std::size_t finished = cv.completed.size();
    cv.on_run_done = [&](const RunMetrics& m) {
        progress << to_json_line(m) << "\n" << std::flush;
        ++finished;
        err << "run " << m.run_id << " done (" << finished << "/" << total << ")\n";
    };
    const auto result = cross_validate(mc, plan, tc, loaded.data, cv);
    progress.close();
    dir.write(metrics, metrics_lines(result.runs));

    std::vector<AccuracyBar> bars;
    auto add_bar = [&](const char* name, std::optional<double> RunMetrics::*field) {
        AccuracyBar bar{name, {}};
        for (const auto& r : result.runs)
            if (r.*field) bar.values.push_back(*(r.*field));
        if (!bar.values.empty()) bars.push_back(std::move(bar));
    };
    add_bar("train", &RunMetrics::accuracy_train);
    add_bar("validation", &RunMetrics::accuracy_val);
    add_bar("test", &RunMetrics::accuracy_test);
    add_bar("generalization", &RunMetrics::accuracy_generalization);
    add_bar("extended", &RunMetrics::accuracy_extended);
    dir.write(summary, accuracy_bars_tsv(bars));

    if (task != ExperimentTask::Predict) {
        const int k = state_count(task);
        ConfusionMatrix mean{Eigen::MatrixXd::Zero(k, k), std::vector<bool>(static_cast<std::size_t>(k), true)};
        std::vector<double> rows(static_cast<std::size_t>(k), 0.0);
        for (const auto& r : result.runs) {
            if (!r.confusion) continue;
            for (int i = 0; i < k; ++i) {
                if (r.confusion->empty_rows[static_cast<std::size_t>(i)]) continue;
                mean.percent.row(i) += r.confusion->percent.row(i);
                rows[static_cast<std::size_t>(i)] += 1.0;
                mean.empty_rows[static_cast<std::size_t>(i)] = false;
            }
        }
        for (int i = 0; i < k; ++i)
            if (rows[static_cast<std::size_t>(i)] > 0) mean.percent.row(i) /= rows[static_cast<std::size_t>(i)];
        dir.write(confusion, confusion_tsv(mean, state_names(task)));
    } else {
        std::vector<std::string> names{"mean", "std"};
        std::vector<std::vector<double>> curves(2);
        for (const auto& s : result.summary.per_step_mse) {
            curves[0].push_back(s.mean);
            curves[1].push_back(s.stddev);
        }
        if (!result.summary.per_step_mse_extended.empty()) {
            names.insert(names.end(), {"extended_mean", "extended_std"});
            curves.resize(4);
            for (const auto& s : result.summary.per_step_mse_extended) {
                curves[2].push_back(s.mean);
                curves[3].push_back(s.stddev);
            }
        }
        dir.write(curve, mse_curve_tsv(names, curves));
    }
    out << accuracy_bars_tsv(bars);
    return 0;
}

// --- eval

int cmd_eval(KeyValueConfig& cfg, const Options& opt, std::ostream& out) {
    check_command(cfg, "eval");
    master_seed(cfg, opt);
    const auto loaded = load_data(cfg);
    fs::path ckpt_path;
    Model model = read_checkpoint(cfg, loaded, ckpt_path);
    const ExperimentTask task = checkpoint_task(cfg, model);
    const std::size_t steps = cfg.count("eval.rollout", 16);
    const std::size_t window = cfg.count("eval.window_len", 8);
    cfg.require_all_used();
    if (steps < 1 || window < 1) throw ConfigError(cfg.where("eval.rollout") + ": must be >= 1");

    OutputDir dir(opt.out, opt.force);
    const auto metrics = dir.plan("metrics.jsonl"), manifest = dir.plan(kManifestFile),
               confusion = dir.plan("confusion.tsv"), curve = dir.plan("mse_curve.tsv");
    dir.check();

    std::vector<RunMetrics> runs;
    if (task == ExperimentTask::Predict) {
        std::vector<std::string> names;
        std::vector<std::vector<double>> curves;
        for (const auto& id : loaded.ids) {
            RunMetrics m;
            m.run_id = id;
            m.task = std::string(to_string(task));
            const std::vector<WormRecording> one{loaded.data.at(id)};
            m.per_step_mse = per_step_mse(model, one, steps, window).mse;
            names.push_back(id);
            curves.push_back(m.per_step_mse);
            runs.push_back(std::move(m));
        }
        dir.write(curve, mse_curve_tsv(names, curves));
    } else {
        const int k = state_count(task);
        const std::size_t group = model.edge_group();
        std::vector<int> all_pred, all_target;
        for (const auto& id : loaded.ids) {
            const auto& rec = loaded.data.at(id);
            const std::size_t t = rec.n_timesteps() / group * group;
            const auto c = classify(model, recording_tensor(rec, 0, t));
            std::vector<int> target = class_targets(std::span(rec.labels).first(t), label_task(task));
            RunMetrics m;
            m.run_id = id;
            m.task = std::string(to_string(task));
            m.accuracy_test = accuracy(c.predicted, target);
            m.confusion = confusion_matrix(c.predicted, target, k);
            all_pred.insert(all_pred.end(), c.predicted.begin(), c.predicted.end());
            all_target.insert(all_target.end(), target.begin(), target.end());
            runs.push_back(std::move(m));
        }
        dir.write(confusion, confusion_tsv(confusion_matrix(all_pred, all_target, k), state_names(task)));
    }
    dir.write(metrics, metrics_lines(runs));
    dir.write(manifest, manifest_text("eval", cfg));
    out << metrics_lines(runs);
    return 0;
}

// --- rollout

int cmd_rollout(KeyValueConfig& cfg, const Options& opt, std::ostream& out) {
    check_command(cfg, "rollout");
    master_seed(cfg, opt);
    const auto loaded = load_data(cfg);
    fs::path ckpt_path;
    Model model = read_checkpoint(cfg, loaded, ckpt_path);
    const std::size_t steps = cfg.count("rollout.steps", 16);
    const std::size_t window = cfg.count("rollout.origin_spacing", 8);
    cfg.require_all_used();
    if (model.config().task != Task::Predict) {
        throw std::invalid_argument("rollout: checkpoint " + ckpt_path.string() + " is a classifier");
    }
    if (steps < 1 || window < 1) throw ConfigError(cfg.where("rollout.steps") + ": must be >= 1");

    OutputDir dir(opt.out, opt.force);
    const auto curve = dir.plan("mse_curve.tsv"), metrics = dir.plan("metrics.jsonl"),
               manifest = dir.plan(kManifestFile);
    dir.check();

    std::vector<RolloutOrigin> origins;
    for (const auto& id : loaded.ids) {
        const auto& rec = loaded.data.at(id);
        for (std::size_t s = 0; s < rec.n_timesteps(); s += window) origins.push_back({&rec, s});
    }
    const PerStepMse pooled = per_step_mse(model, origins, steps);
    RunMetrics m;
    m.run_id = "rollout";
    m.task = "predict";
    m.per_step_mse = pooled.mse;
    const std::vector<std::string> names{"mse"};
    const std::vector<std::vector<double>> curves{pooled.mse};
    dir.write(curve, mse_curve_tsv(names, curves));
    dir.write(metrics, to_json_line(m) + "\n");
    dir.write(manifest, manifest_text("rollout", cfg));
    out << "rolled out " << pooled.windows_used << " origins (" << pooled.windows_skipped << " too close to the end)\n";
    for (const auto& [step, v] : pooled.summary()) out << "step " << step << ": " << format_double(v) << "\n";
    return 0;
}

// --- pca

int cmd_pca(KeyValueConfig& cfg, const Options& opt, std::ostream& out) {
    check_command(cfg, "pca");
    master_seed(cfg, opt);
    const auto loaded = load_data(cfg);
    const std::size_t components = cfg.count("pca.components", 3);
    cfg.require_all_used();
    if (components < 1 || components > loaded.neurons.size()) {
        throw ConfigError(cfg.where("pca.components") + ": must lie in [1, " + std::to_string(loaded.neurons.size()) +
                          "]");
    }

    OutputDir dir(opt.out, opt.force);
    std::vector<fs::path> tables;
    for (const auto& id : loaded.ids) tables.push_back(dir.plan("pca_" + id + ".tsv"));
    const auto explained = dir.plan("explained_variance.tsv"), manifest = dir.plan(kManifestFile);
    dir.check();

    std::string ev = "worm";
    for (std::size_t c = 0; c < components; ++c) ev += "\tpc" + std::to_string(c + 1);
    ev += "\tcumulative\n";
    for (std::size_t i = 0; i < loaded.ids.size(); ++i) {
        const auto& rec = loaded.data.at(loaded.ids[i]);
        const PcaResult pca = pca_project(rec.traces, components);
        dir.write(tables[i], pca_trajectory_tsv(pca, rec.labels));
        double total = 0.0;
        ev += rec.worm_id;
        for (double e : pca.explained) {
            ev += "\t" + format_double(e);
            total += e;
        }
        ev += "\t" + format_double(total) + "\n";
    }
    dir.write(explained, ev);
    dir.write(manifest, manifest_text("pca", cfg));
    out << ev;
    return 0;
}

// --- edges

int cmd_edges(KeyValueConfig& cfg, const Options& opt, std::ostream& out) {
    check_command(cfg, "edges");
    master_seed(cfg, opt);
    const auto loaded = load_data(cfg);
    fs::path ckpt_path;
    Model model = read_checkpoint(cfg, loaded, ckpt_path);
    const auto reference = cfg.maybe_path("edges.connectome");
    cfg.require_all_used();
    if (model.config().module_kind != ModuleKind::GNN) {
        throw std::invalid_argument("edges: checkpoint " + ckpt_path.string() + " is a " +
                                    std::string(to_string(model.config().module_kind)) + " model with no edges");
    }
    std::optional<Eigen::MatrixXd> structural;
    if (reference) structural = load_connectome_edges(*reference, loaded.neurons, false).weights;

    const bool single = model.config().edge_mode != EdgeMode::Dynamic;
    OutputDir dir(opt.out, opt.force);
    std::vector<std::pair<fs::path, fs::path>> tables;
    for (const auto& id : loaded.ids) {
        if (single) tables.emplace_back(dir.plan("edges_" + id + ".tsv"), fs::path{});
        else tables.emplace_back(dir.plan("edges_mean_" + id + ".tsv"), dir.plan("edges_std_" + id + ".tsv"));
    }
    const auto report = dir.plan("edges_report.jsonl"), manifest = dir.plan(kManifestFile);
    dir.check();

    std::string report_text;
    for (std::size_t i = 0; i < loaded.ids.size(); ++i) {
        const auto& rec = loaded.data.at(loaded.ids[i]);
        const EdgeSummary s = summarize_edges(model, rec);
        dir.write(tables[i].first, matrix_tsv(s.mean, loaded.neurons));
        if (!single) dir.write(tables[i].second, matrix_tsv(s.stddev, loaded.neurons));
        json line = {{"worm_id", rec.worm_id},
                     {"edge_mode", std::string(to_string(model.config().edge_mode))},
                     {"graphs", s.graphs},
                     {"correlation", nullptr}};
        if (structural) {
            if (const auto r = edge_correlation(s.mean, *structural)) line["correlation"] = *r;
        }
        report_text += line.dump() + "\n";
    }
    dir.write(report, report_text);
    dir.write(manifest, manifest_text("edges", cfg));
    out << report_text;
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Behavioral-state classification and trajectory prediction on worm calcium recordings"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Help for every command");
    Options opt;

    const std::vector<std::pair<const char*, const char*>> commands{
        {"gen-synth", "Write synthetic worm recordings"},
        {"train", "Train one model on one fold"},
        {"cross-validate", "Train every (worm subset, fold) cell"},
        {"eval", "Evaluate a checkpoint on recordings"},
        {"rollout", "Per-step rollout error of a prediction checkpoint"},
        {"pca", "Principal-component trajectories of recordings"},
        {"edges", "Dump inferred edges of a GNN checkpoint"},
    };
    for (const auto& [name, help] : commands) {
        CLI::App* sub = app.add_subcommand(name, help);
        sub->add_option("--config", opt.config, "key = value configuration file")->check(CLI::ExistingFile);
        sub->add_option("--out", opt.out, "Output directory")->required();
        sub->add_option("--seed", opt.seed, "Master seed (overrides the config)");
        sub->add_option("--workers", opt.workers, "Parallel runs (cross-validate)")->check(CLI::PositiveNumber);
        sub->add_flag("--resume", opt.resume, "Skip finished cells (cross-validate)");
        sub->add_flag("--force", opt.force, "Overwrite existing outputs");
        sub->callback([&opt, n = std::string(name)] { opt.command = n; });
    }

    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }

    try {
        if (opt.resume && opt.command != "cross-validate") throw ConfigError("--resume only applies to cross-validate");
        KeyValueConfig cfg = opt.config.empty() ? KeyValueConfig{} : KeyValueConfig::load(opt.config);
        if (opt.command == "gen-synth") return cmd_gen_synth(cfg, opt, out);
        if (opt.command == "train") return cmd_train(cfg, opt, out);
        if (opt.command == "cross-validate") return cmd_cross_validate(cfg, opt, out, err);
        if (opt.command == "eval") return cmd_eval(cfg, opt, out);
        if (opt.command == "rollout") return cmd_rollout(cfg, opt, out);
        if (opt.command == "pca") return cmd_pca(cfg, opt, out);
        if (opt.command == "edges") return cmd_edges(cfg, opt, out);
        throw ConfigError("unknown command " + opt.command);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace wormgnn::cli
