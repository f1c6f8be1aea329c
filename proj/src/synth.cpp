#include "wormgnn/synth.hpp"

#include <Eigen/QR>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "wormgnn/pipeline.hpp"
#include "wormgnn/random.hpp"

namespace wormgnn {

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;
// Offsets keep the latent and observation streams independent even when a
// caller uses equal seeds for both.
constexpr std::uint64_t kLatentStream = 0x4c41;
constexpr std::uint64_t kNoiseStream = 0x4e4f;
constexpr std::uint64_t kSharedMixingStream = 0x4d58;
}  // namespace

void SynthConfig::validate() const {
    if (n_states != 2 && n_states != 4) {
        throw std::invalid_argument("synth: n_states must be 2 or 4, got " + std::to_string(n_states));
    }
    if (latent_dim < 2) throw std::invalid_argument("synth: latent_dim must be >= 2");
    if (n_neurons < latent_dim) {
        throw std::invalid_argument("synth: n_neurons (" + std::to_string(n_neurons) + ") must be >= latent_dim (" +
                                    std::to_string(latent_dim) + ") for a full-rank mixing matrix");
    }
    if (!(noise_std >= 0.0)) throw std::invalid_argument("synth: noise_std must be >= 0");
    if (timesteps < 2) throw std::invalid_argument("synth: timesteps must be >= 2");
    if (!(period > 0.0)) throw std::invalid_argument("synth: period must be > 0");
    if (!(angular_velocity_jitter >= 0.0)) throw std::invalid_argument("synth: angular_velocity_jitter must be >= 0");
    if (!(mixing_individuality >= 0.0 && mixing_individuality <= 1.0)) {
        throw std::invalid_argument("synth: mixing_individuality must lie in [0, 1]");
    }
    if (!(radius_modulation >= 0.0 && radius_modulation < 1.0)) {
        throw std::invalid_argument("synth: radius_modulation must lie in [0, 1)");
    }
    if (!(speed_modulation >= 0.0 && speed_modulation < 1.0)) {
        throw std::invalid_argument("synth: speed_modulation must lie in [0, 1)");
    }
}

int phase_arc(double phase, int n_states) {
    double wrapped = std::fmod(phase, kTwoPi);
    if (wrapped < 0.0) wrapped += kTwoPi;
    const int arc = static_cast<int>(std::floor(wrapped / (kTwoPi / n_states)));
    return std::min(arc, n_states - 1);
}

StateLabel arc_label(int arc, int n_states) {
    if (n_states == 2) return arc == 0 ? StateLabel::Forward : StateLabel::Reverse1;
    static constexpr StateLabel kFour[] = {StateLabel::Forward, StateLabel::Reverse1, StateLabel::VentralTurn,
                                           StateLabel::DorsalTurn};
    return kFour[arc];
}

LatentCycle latent_cycle(const SynthConfig& cfg) {
    cfg.validate();
    Rng rng(derive_seed(cfg.latent_seed, kLatentStream));
    const double omega = kTwoPi / cfg.period;
    LatentCycle out;
    out.phase.resize(cfg.timesteps);
    out.latent.resize(static_cast<Eigen::Index>(cfg.latent_dim), static_cast<Eigen::Index>(cfg.timesteps));
    double phi = rng.uniform(0.0, kTwoPi);
    for (std::size_t t = 0; t < cfg.timesteps; ++t) {
        out.phase[t] = phi;
        const double radius = 1.0 + cfg.radius_modulation * std::sin(phi);
        for (std::size_t k = 0; k < cfg.latent_dim; ++k) {
            const double harmonic = static_cast<double>(k / 2 + 1);
            const double v = (k % 2 == 0) ? std::cos(harmonic * phi) : std::sin(harmonic * phi);
            out.latent(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(t)) = radius * v / harmonic;
        }
        const double speed = 1.0 + cfg.speed_modulation * std::sin(phi);
        phi += omega * speed * std::max(0.0, 1.0 + cfg.angular_velocity_jitter * rng.normal());
    }
    return out;
}

Eigen::MatrixXd gaussian_matrix(std::size_t n, std::size_t d, std::uint64_t seed) {
    Rng rng(seed);
    Eigen::MatrixXd g(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    for (Eigen::Index c = 0; c < g.cols(); ++c)
        for (Eigen::Index r = 0; r < g.rows(); ++r) g(r, c) = rng.normal();
    return g;
}

Eigen::MatrixXd mixing_matrix(std::size_t n, std::size_t d, std::uint64_t seed) {
    return orthonormalize(gaussian_matrix(n, d, seed));
}

Eigen::MatrixXd worm_mixing(const SynthConfig& cfg) {
    const double a = cfg.mixing_individuality;
    if (a == 1.0) return mixing_matrix(cfg.n_neurons, cfg.latent_dim, cfg.mixing_seed);
    const Eigen::MatrixXd shared =
        gaussian_matrix(cfg.n_neurons, cfg.latent_dim, derive_seed(cfg.latent_seed, kSharedMixingStream));
    const Eigen::MatrixXd own = gaussian_matrix(cfg.n_neurons, cfg.latent_dim, cfg.mixing_seed);
    return orthonormalize(std::sqrt(1.0 - a * a) * shared + a * own);
}

Eigen::MatrixXd orthonormalize(const Eigen::MatrixXd& g) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(g.rows(), g.cols());
    const Eigen::MatrixXd r = qr.matrixQR().topRows(g.cols()).triangularView<Eigen::Upper>();
    for (Eigen::Index c = 0; c < q.cols(); ++c) {
        if (r(c, c) < 0.0) q.col(c) *= -1.0;
    }
    return q;
}

WormRecording generate_worm(const SynthConfig& cfg) {
    cfg.validate();
    const LatentCycle cycle = latent_cycle(cfg);
    const Eigen::MatrixXd mix = worm_mixing(cfg);

    WormRecording rec;
    rec.worm_id = cfg.worm_id;
    rec.dataset_tag = "synthetic";
    rec.sample_period_s = cfg.sample_period_s;
    if (cfg.n_neurons == shared_training_neurons().size()) {
        rec.neuron_names = shared_training_neurons();
    } else {
        for (std::size_t i = 0; i < cfg.n_neurons; ++i) {
            rec.neuron_names.push_back((i < 10 ? "N0" : "N") + std::to_string(i));
        }
    }
    rec.traces = mix * cycle.latent;
    if (cfg.noise_std > 0.0) {
        Rng noise(derive_seed(cfg.mixing_seed, kNoiseStream));
        for (Eigen::Index c = 0; c < rec.traces.cols(); ++c)
            for (Eigen::Index r = 0; r < rec.traces.rows(); ++r) rec.traces(r, c) += cfg.noise_std * noise.normal();
    }
    rec.derivatives = compute_derivatives(rec.traces);
    rec.labels.reserve(cfg.timesteps);
    for (double phi : cycle.phase) rec.labels.push_back(arc_label(phase_arc(phi, cfg.n_states), cfg.n_states));
    return normalize_recording(std::move(rec));
}

}  // namespace wormgnn
