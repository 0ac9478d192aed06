#pragma once

#include "imts/data.hpp"
#include "imts/training.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace imts {

// Default seed for the reference sweep. The comparison point must be
// generic: a seed whose jittered evaluation point parks some ReLU
// preactivation within h of its kink invalidates the finite-difference
// oracle (not the gradient), so the default is a verified-clean seed.
inline constexpr std::uint64_t kDefaultGradcheckSeed = 4;

struct GradcheckCase {
    std::string encoder;
    std::string decoder;
    std::size_t layers = 0;
    double worst_rel_error = 0.0;
    std::string worst_param;
    std::size_t parameter_count = 0;
    bool pass = false;
};

struct GradcheckResult {
    std::vector<GradcheckCase> cases;
    double worst_rel_error = 0.0;
    double threshold = 0.0;
    bool pass = false;

    nlohmann::json to_json() const;
};

// Deterministic tiny batch (3 instances, 2 channels, one empty channel)
// used by the gradient checks.
Dataset gradcheck_dataset(std::uint64_t seed);

// Compares backward() to central finite differences over every parameter of
// the model described by `config`. corrupt_param, when set, adds 1.0 to that
// analytic gradient so the harness itself can be exercised.
GradcheckCase gradcheck_model(const TrainConfig& config, std::uint64_t seed,
                              double threshold = 1e-4, double h = 1e-5,
                              std::optional<std::size_t> corrupt_param = std::nullopt);

// Every (encoder, decoder, L in {0, 1, 2}) combination on a tiny
// configuration (C=2, D=8, D_out=6, hidden 8).
GradcheckResult gradcheck_sweep(std::uint64_t seed, double threshold = 1e-4, double h = 1e-5);

} // namespace imts
