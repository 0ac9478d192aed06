#include "imts/gradcheck.hpp"

#include "imts/error.hpp"

#include <algorithm>
#include <random>

namespace imts {

using nlohmann::json;

json GradcheckResult::to_json() const {
    json cases_json = json::array();
    for (const GradcheckCase& c : cases) {
        cases_json.push_back({{"encoder", c.encoder},
                              {"decoder", c.decoder},
                              {"L", c.layers},
                              {"worst_rel_error", c.worst_rel_error},
                              {"worst_param", c.worst_param},
                              {"params", c.parameter_count},
                              {"pass", c.pass}});
    }
    return json{{"cases", cases_json},
                {"worst_rel_error", worst_rel_error},
                {"threshold", threshold},
                {"pass", pass}};
}

Dataset gradcheck_dataset(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> obs_time(0.0, 0.5);
    std::uniform_real_distribution<double> query_time(0.5, 1.0);
    // Values are kept small so the check's loss stays near 0.05: the finite
    // difference quantum is ulp(loss) / (2h), and structurally-zero
    // gradients (softmax shift directions) are compared against it on the
    // absolute 1e-8 floor of the relative error.
    std::normal_distribution<double> value(0.0, 0.2);
    const std::size_t obs_counts[3][2] = {{3, 2}, {0, 4}, {2, 3}};
    const std::size_t query_counts[3][2] = {{2, 2}, {1, 3}, {3, 1}};
    Dataset dataset;
    dataset.channel_count = 2;
    for (std::size_t b = 0; b < 3; ++b) {
        ImtsInstance inst;
        inst.channels.assign(2, {});
        inst.queries.assign(2, {});
        inst.answers.assign(2, {});
        for (std::size_t c = 0; c < 2; ++c) {
            std::vector<double> times(obs_counts[b][c]);
            for (double& t : times) t = obs_time(rng);
            std::sort(times.begin(), times.end());
            for (double t : times) inst.channels[c].push_back({t, value(rng)});
            for (std::size_t q = 0; q < query_counts[b][c]; ++q) {
                inst.queries[c].push_back(query_time(rng));
                inst.answers[c].push_back(value(rng));
            }
        }
        dataset.instances.push_back(std::move(inst));
    }
    return dataset;
}

GradcheckCase gradcheck_model(const TrainConfig& config, std::uint64_t seed, double threshold,
                              double h, std::optional<std::size_t> corrupt_param) {
    Dataset data = gradcheck_dataset(seed + 1);
    BatchedImts batch = make_batch(data.instances, data.channel_count);
    ModelParams params = ModelParams::init(config.model_config(data.channel_count), seed);
    ParamList learnables = params.parameters();
    // Evaluate at a generic point. The stock initialization zeroes biases, so
    // empty-channel rows sit exactly on RMSNorm's steep core and on ReLU
    // kinks, where central differences stop approximating the derivative.
    std::mt19937_64 jitter_rng(seed ^ 0xa5a5a5a5ULL);
    std::uniform_real_distribution<double> jitter(-0.05, 0.05);
    for (NamedParam& p : learnables) {
        for (double& v : p.tensor.mutable_data()) v += jitter(jitter_rng);
    }

    // The objective is the masked MSE scaled by an exact power of two.
    // Power-of-two scaling commutes with IEEE rounding, so the relative
    // error of every normally-sized gradient is bit-identical to the
    // unscaled check, while coordinates whose true gradient is zero (softmax
    // shift directions) are compared on the 1e-8 absolute floor against a
    // finite-difference quantum of ulp(loss) / (2h), which the scaling
    // pushes well below the threshold.
    constexpr double kLossScale = 0.0078125; // 2^-7
    auto loss_value = [&]() {
        NoGradGuard no_grad;
        Tensor pred = model_forward(params, batch);
        return scale(masked_mse(pred, batch.y, batch.q_mask), kLossScale).value();
    };

    for (NamedParam& p : learnables) p.tensor.zero_grad();
    Tensor loss =
        scale(masked_mse(model_forward(params, batch), batch.y, batch.q_mask), kLossScale);
    backward(loss);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(learnables.size());
    for (const NamedParam& p : learnables) {
        analytic.emplace_back(p.tensor.grad().begin(), p.tensor.grad().end());
    }
    if (corrupt_param) {
        if (*corrupt_param >= analytic.size() || analytic[*corrupt_param].empty()) {
            throw ContractError("gradcheck: corrupt_param index out of range");
        }
        analytic[*corrupt_param][0] += 1.0;
    }
    const auto numeric = finite_diff_grad(loss_value, learnables, h);

    GradcheckCase result;
    result.encoder = config.encoder;
    result.decoder = config.decoder;
    result.layers = config.layers;
    for (std::size_t i = 0; i < learnables.size(); ++i) {
        result.parameter_count += learnables[i].tensor.size();
        for (std::size_t j = 0; j < analytic[i].size(); ++j) {
            const double err = relative_error(analytic[i][j], numeric[i][j]);
            if (err > result.worst_rel_error) {
                result.worst_rel_error = err;
                result.worst_param =
                    learnables[i].name + "[" + std::to_string(j) + "]";
            }
        }
    }
    result.pass = result.worst_rel_error < threshold;
    return result;
}

GradcheckResult gradcheck_sweep(std::uint64_t seed, double threshold, double h) {
    GradcheckResult result;
    result.threshold = threshold;
    result.pass = true;
    for (const char* encoder : {"iscam", "mha"}) {
        for (const char* decoder : {"contp", "mlp"}) {
            for (std::size_t layers : {0u, 1u, 2u}) {
                TrainConfig config;
                config.encoder = encoder;
                config.decoder = decoder;
                config.layers = layers;
                config.d = 8;
                config.d_out = 6;
                config.mlp_hidden = 8;
                config.mha_heads = 2;
                // d_t = 2 keeps both embedding frequencies informative at
                // unit time scale; slower ones shift all scores uniformly,
                // which softmax cancels, leaving gradients near the finite
                // difference noise floor.
                config.mha_time_dim = 2;
                config.mlp_time_dim = 4;
                GradcheckCase c = gradcheck_model(config, seed, threshold, h);
                result.worst_rel_error = std::max(result.worst_rel_error, c.worst_rel_error);
                result.pass = result.pass && c.pass;
                result.cases.push_back(std::move(c));
            }
        }
    }
    return result;
}

} // namespace imts
