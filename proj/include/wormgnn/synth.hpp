#pragma once

// Synthetic worms: every individual observes the same labeled latent limit
// cycle through its own orthonormal mixing of neurons.

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "wormgnn/recording.hpp"

namespace wormgnn {

struct SynthConfig {
    std::string worm_id = "synth";
    std::size_t n_neurons = 15;
    std::size_t timesteps = 3200;
    int n_states = 2;                // 2 or 4
    std::size_t latent_dim = 3;
    double noise_std = 0.05;         // observation noise on the traces
    std::uint64_t mixing_seed = 1;   // per worm
    std::uint64_t latent_seed = 0;   // shared across worms
    double angular_velocity_jitter = 0.1;
    double period = 64.0;            // mean timesteps per cycle
    double mixing_individuality = 1.0;  // 0: all worms share one mixing, 1: independent
    double radius_modulation = 0.0;  // latent radius 1 + r * sin(phase)
    double speed_modulation = 0.0;   // angular velocity factor 1 + s * sin(phase)
    double sample_period_s = 1.0 / 3.0;

    /// Throws std::invalid_argument describing the first violated constraint.
    void validate() const;
};

/// Arc index of a phase when [0, 2pi) is split into n_states equal arcs.
int phase_arc(double phase, int n_states);

/// Label emitted for an arc. Two states: Forward, Reverse1. Four states
/// follow the pirouette order: Forward, Reverse1, VentralTurn, DorsalTurn.
StateLabel arc_label(int arc, int n_states);

struct LatentCycle {
    std::vector<double> phase;  // unwrapped phase per timestep
    Eigen::MatrixXd latent;     // latent_dim x T
};

/// Phase advances by 2pi/period * (1 + jitter * xi_t); the latent point is a
/// harmonic embedding of the phase. Depends on latent_seed only.
LatentCycle latent_cycle(const SynthConfig& cfg);

/// n x d standard Gaussian matrix from a seed.
Eigen::MatrixXd gaussian_matrix(std::size_t n, std::size_t d, std::uint64_t seed);

/// Orthonormal columns spanning `g` (Householder QR, column signs fixed so R
/// has a positive diagonal).
Eigen::MatrixXd orthonormalize(const Eigen::MatrixXd& g);

/// orthonormalize(gaussian_matrix(n, d, seed)).
Eigen::MatrixXd mixing_matrix(std::size_t n, std::size_t d, std::uint64_t seed);

/// A worm's mixing: the Gaussian sqrt(1 - a^2) G_shared + a G_worm is
/// orthonormalized, with G_shared drawn from latent_seed, G_worm from
/// mixing_seed and a = mixing_individuality.
Eigen::MatrixXd worm_mixing(const SynthConfig& cfg);

/// Generated, normalized recording with neuron names N00, N01, ... (or the
/// shared training neuron names when n_neurons is 15).
WormRecording generate_worm(const SynthConfig& cfg);

}  // namespace wormgnn
