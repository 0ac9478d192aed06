#include "imts/datagen.hpp"

#include "imts/error.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace imts {

std::vector<std::vector<double>> rk4_integrate(const DerivFn& f, std::span<const double> x0,
                                               double horizon, std::size_t n_steps) {
    if (n_steps == 0) {
        throw ContractError("rk4_integrate: n_steps must be at least 1");
    }
    if (!(horizon > 0.0)) {
        throw ContractError("rk4_integrate: horizon must be positive");
    }
    const std::size_t dim = x0.size();
    const double h = horizon / static_cast<double>(n_steps);
    std::vector<std::vector<double>> trajectory;
    trajectory.reserve(n_steps + 1);
    std::vector<double> state(x0.begin(), x0.end());
    trajectory.push_back(state);
    std::vector<double> k1(dim), k2(dim), k3(dim), k4(dim), probe(dim);
    for (std::size_t step = 0; step < n_steps; ++step) {
        const double t = static_cast<double>(step) * h;
        f(t, state, k1);
        for (std::size_t i = 0; i < dim; ++i) probe[i] = state[i] + 0.5 * h * k1[i];
        f(t + 0.5 * h, probe, k2);
        for (std::size_t i = 0; i < dim; ++i) probe[i] = state[i] + 0.5 * h * k2[i];
        f(t + 0.5 * h, probe, k3);
        for (std::size_t i = 0; i < dim; ++i) probe[i] = state[i] + h * k3[i];
        f(t + h, probe, k4);
        for (std::size_t i = 0; i < dim; ++i) {
            state[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            if (!std::isfinite(state[i])) {
                throw GenerationError("rk4_integrate: non-finite state at step " +
                                      std::to_string(step + 1));
            }
        }
        trajectory.push_back(state);
    }
    return trajectory;
}

OdeSpec OdeSpec::named(const std::string& name) {
    OdeSpec spec;
    spec.name = name;
    spec.channel_count = 2;
    spec.steps = 100;
    if (name == "damped_oscillator") {
        // constants: angular frequency omega, damping ratio zeta
        spec.constant_ranges = {{0.8, 1.6}, {0.05, 0.3}};
        // initial position and velocity
        spec.initial_ranges = {{-2.0, 2.0}, {-2.0, 2.0}};
        spec.horizon = 12.0;
    } else if (name == "lotka_volterra") {
        // constants: alpha, beta, delta, gamma. Narrow ranges keep the
        // per-instance latent concentrated in the initial state, so a
        // channel's horizon depends on the partner channel's level at the
        // cut; wide initial ranges make the trajectories diverse.
        spec.constant_ranges = {{0.98, 1.02}, {0.48, 0.52}, {0.48, 0.52}, {0.98, 1.02}};
        spec.initial_ranges = {{0.6, 2.4}, {0.6, 2.4}};
        spec.horizon = 13.0;
    } else {
        throw ConfigError("unknown ODE system '" + name +
                          "' (expected damped_oscillator or lotka_volterra)");
    }
    return spec;
}

std::vector<std::string> OdeSpec::known_systems() {
    return {"damped_oscillator", "lotka_volterra"};
}

DerivFn OdeSpec::make_derivative(std::span<const double> constants) const {
    if (constants.size() != constant_ranges.size()) {
        throw ContractError("make_derivative: expected " +
                            std::to_string(constant_ranges.size()) + " constants");
    }
    if (name == "damped_oscillator") {
        const double omega = constants[0];
        const double zeta = constants[1];
        return [omega, zeta](double, std::span<const double> x, std::span<double> out) {
            out[0] = x[1];
            out[1] = -omega * omega * x[0] - 2.0 * zeta * omega * x[1];
        };
    }
    const double alpha = constants[0];
    const double beta = constants[1];
    const double delta = constants[2];
    const double gamma = constants[3];
    return [alpha, beta, delta, gamma](double, std::span<const double> x, std::span<double> out) {
        out[0] = alpha * x[0] - beta * x[0] * x[1];
        out[1] = delta * x[0] * x[1] - gamma * x[1];
    };
}

void GenConfig::validate() const {
    if (instance_count == 0) {
        throw ConfigError("generation: instance count must be positive");
    }
    if (!(drop_fraction > 0.0) || !(drop_fraction < 1.0)) {
        throw ConfigError("generation: drop fraction must lie strictly between 0 and 1");
    }
    if (!(observation_fraction > 0.0) || !(observation_fraction < 1.0)) {
        throw ConfigError("generation: observation fraction must lie strictly between 0 and 1");
    }
    if (noise_sigma < 0.0) {
        throw ConfigError("generation: noise sigma must be non-negative");
    }
}

nlohmann::json GenConfig::to_json() const {
    return nlohmann::json{{"instances", instance_count},
                          {"drop", drop_fraction},
                          {"obs_fraction", observation_fraction},
                          {"sigma", noise_sigma},
                          {"seed", seed},
                          {"max_retries", max_retries},
                          {"sigma_is_relative_to_channel_std", true}};
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Per-instance substream so generation is deterministic regardless of order.
std::mt19937_64 instance_rng(std::uint64_t seed, std::size_t index, std::size_t attempt) {
    std::uint64_t mixed = splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(index)));
    mixed = splitmix64(mixed ^ splitmix64(static_cast<std::uint64_t>(attempt) + 0x51abULL));
    return std::mt19937_64(mixed);
}

} // namespace

Dataset generate_dataset(const OdeSpec& spec, const GenConfig& config) {
    config.validate();
    const std::size_t c_count = spec.channel_count;
    const std::size_t grid = spec.steps + 1;
    const double dt = spec.horizon / static_cast<double>(spec.steps);
    const double cut_time = config.observation_fraction * spec.horizon;
    Dataset dataset;
    dataset.channel_count = c_count;
    dataset.instances.reserve(config.instance_count);

    for (std::size_t index = 0; index < config.instance_count; ++index) {
        bool produced = false;
        for (std::size_t attempt = 0; attempt < config.max_retries && !produced; ++attempt) {
            std::mt19937_64 rng = instance_rng(config.seed, index, attempt);
            std::vector<double> constants(spec.constant_ranges.size());
            for (std::size_t i = 0; i < constants.size(); ++i) {
                std::uniform_real_distribution<double> dist(spec.constant_ranges[i].lo,
                                                            spec.constant_ranges[i].hi);
                constants[i] = dist(rng);
            }
            std::vector<double> x0(spec.initial_ranges.size());
            for (std::size_t i = 0; i < x0.size(); ++i) {
                std::uniform_real_distribution<double> dist(spec.initial_ranges[i].lo,
                                                            spec.initial_ranges[i].hi);
                x0[i] = dist(rng);
            }
            const auto trajectory =
                rk4_integrate(spec.make_derivative(constants), x0, spec.horizon, spec.steps);
            bool bounded = true;
            for (const auto& state : trajectory) {
                for (double v : state) {
                    if (std::fabs(v) > spec.max_magnitude) bounded = false;
                }
            }
            if (!bounded) {
                continue;
            }
            // Noise scale per channel, relative to the trajectory's spread.
            std::vector<double> noise_std(c_count, 0.0);
            for (std::size_t c = 0; c < c_count; ++c) {
                double sum = 0.0, sum_sq = 0.0;
                for (const auto& state : trajectory) {
                    sum += state[c];
                    sum_sq += state[c] * state[c];
                }
                const double n = static_cast<double>(grid);
                const double mean = sum / n;
                noise_std[c] =
                    config.noise_sigma * std::sqrt(std::max(sum_sq / n - mean * mean, 0.0));
            }
            std::normal_distribution<double> normal(0.0, 1.0);
            std::bernoulli_distribution keep(1.0 - config.drop_fraction);
            ImtsInstance inst;
            inst.channels.assign(c_count, {});
            inst.queries.assign(c_count, {});
            inst.answers.assign(c_count, {});
            for (std::size_t step = 0; step < grid; ++step) {
                const double t = static_cast<double>(step) * dt;
                for (std::size_t c = 0; c < c_count; ++c) {
                    const double noisy = trajectory[step][c] + noise_std[c] * normal(rng);
                    if (!keep(rng)) {
                        continue;
                    }
                    if (t < cut_time) {
                        inst.channels[c].push_back({t, noisy});
                    } else {
                        inst.queries[c].push_back(t);
                        inst.answers[c].push_back(trajectory[step][c]);
                    }
                }
            }
            bool empty_query_channel = false;
            for (std::size_t c = 0; c < c_count; ++c) {
                if (inst.queries[c].empty()) empty_query_channel = true;
            }
            if (empty_query_channel) {
                continue;
            }
            dataset.instances.push_back(std::move(inst));
            produced = true;
        }
        if (!produced) {
            throw GenerationError("generate_dataset: retry budget exhausted at instance " +
                                  std::to_string(index) + " (system " + spec.name + ", drop " +
                                  std::to_string(config.drop_fraction) + ")");
        }
    }
    return dataset;
}

} // namespace imts
