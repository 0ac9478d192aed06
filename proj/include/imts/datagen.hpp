#pragma once

#include "imts/data.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace imts {

// Writes dx/dt into `out` for the given state.
using DerivFn = std::function<void(double t, std::span<const double> state,
                                   std::span<double> out)>;

// Classical fixed-step Runge-Kutta order 4 on [0, T]. Returns n_steps + 1
// states, the first being x0. Throws GenerationError with the step index if
// the state goes non-finite.
std::vector<std::vector<double>> rk4_integrate(const DerivFn& f, std::span<const double> x0,
                                               double horizon, std::size_t n_steps);

struct ParamRange {
    double lo = 0.0;
    double hi = 1.0;
};

// A small ODE system with randomized constants and initial states, playing
// the role of one semi-synthetic benchmark source.
struct OdeSpec {
    std::string name;
    std::size_t channel_count = 2;
    std::vector<ParamRange> constant_ranges;
    std::vector<ParamRange> initial_ranges;
    double horizon = 12.0;
    std::size_t steps = 100;
    double max_magnitude = 1e3; // trajectory boundedness guard

    // Registry: "damped_oscillator" (position, velocity) or
    // "lotka_volterra" (prey, predator).
    static OdeSpec named(const std::string& name);
    static std::vector<std::string> known_systems();

    DerivFn make_derivative(std::span<const double> constants) const;
};

struct GenConfig {
    std::size_t instance_count = 0;
    double drop_fraction = 0.8;        // p: each (timestep, channel) dropped with this prob
    double observation_fraction = 0.5; // timeline share that becomes the observation range
    double noise_sigma = 0.05;         // relative to per-channel trajectory std
    std::uint64_t seed = 0;
    std::size_t max_retries = 64;      // per instance, for empty query channels

    void validate() const;
    nlohmann::json to_json() const;
};

// Integrates one trajectory per instance with sampled constants and initial
// state, adds Gaussian observation noise, keeps each (timestep, channel)
// with probability 1 - drop_fraction, and splits the grid at
// observation_fraction * horizon into observations and queries. Answers are
// the noiseless trajectory values. Instances with an empty query channel
// are regenerated deterministically.
Dataset generate_dataset(const OdeSpec& spec, const GenConfig& config);

} // namespace imts
