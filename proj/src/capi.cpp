#include "imts/imts_capi.h"

#include "imts/data.hpp"
#include "imts/datagen.hpp"
#include "imts/error.hpp"
#include "imts/gradcheck.hpp"
#include "imts/model.hpp"
#include "imts/training.hpp"

#include <json.hpp>

#include <cstring>
#include <exception>
#include <string>

struct imts_dataset {
    imts::Dataset data;
};

struct imts_model {
    imts::ModelParams params;
    imts::NormStats stats;
};

namespace {

thread_local std::string g_last_error;

imts_status fail(imts_status code, const std::string& message) {
    g_last_error = message;
    return code;
}

// Maps C++ exceptions onto status codes; invalid-argument family -> 2.
template <typename Fn>
imts_status guarded(Fn&& fn) {
    try {
        return fn();
    } catch (const imts::ConfigError& e) {
        return fail(IMTS_ERR_INVALID, e.what());
    } catch (const imts::ShapeError& e) {
        return fail(IMTS_ERR_INVALID, e.what());
    } catch (const imts::ContractError& e) {
        return fail(IMTS_ERR_INVALID, e.what());
    } catch (const std::exception& e) {
        return fail(IMTS_ERR_RUNTIME, e.what());
    }
}

char* copy_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

imts_status require(bool ok, const char* what) {
    return ok ? IMTS_OK : fail(IMTS_ERR_INVALID, what);
}

} // namespace

extern "C" {

const char* imts_version(void) { return "0.1.0"; }

const char* imts_last_error(void) { return g_last_error.c_str(); }

void imts_string_free(char* s) { std::free(s); }

imts_status imts_dataset_generate(const char* system, size_t instances, double drop,
                                  double sigma, double obs_fraction, uint64_t seed,
                                  imts_dataset** out) {
    if (imts_status s = require(system && out, "null argument"); s != IMTS_OK) return s;
    return guarded([&] {
        imts::OdeSpec spec = imts::OdeSpec::named(system);
        imts::GenConfig config;
        config.instance_count = instances;
        config.drop_fraction = drop;
        config.noise_sigma = sigma;
        config.observation_fraction = obs_fraction;
        config.seed = seed;
        *out = new imts_dataset{imts::generate_dataset(spec, config)};
        return IMTS_OK;
    });
}

imts_status imts_dataset_load(const char* path, imts_dataset** out) {
    if (imts_status s = require(path && out, "null argument"); s != IMTS_OK) return s;
    return guarded([&] {
        *out = new imts_dataset{imts::load_jsonl(path)};
        return IMTS_OK;
    });
}

imts_status imts_dataset_save(const imts_dataset* dataset, const char* path) {
    if (imts_status s = require(dataset && path, "null argument"); s != IMTS_OK) return s;
    return guarded([&] {
        imts::save_jsonl(dataset->data, path);
        return IMTS_OK;
    });
}

imts_status imts_dataset_channel_count(const imts_dataset* dataset, size_t* out) {
    if (imts_status s = require(dataset && out, "null argument"); s != IMTS_OK) return s;
    *out = dataset->data.channel_count;
    return IMTS_OK;
}

imts_status imts_dataset_instance_count(const imts_dataset* dataset, size_t* out) {
    if (imts_status s = require(dataset && out, "null argument"); s != IMTS_OK) return s;
    *out = dataset->data.size();
    return IMTS_OK;
}

imts_status imts_dataset_stats(const imts_dataset* dataset, double* density, double* sparsity) {
    if (imts_status s = require(dataset != nullptr, "null dataset"); s != IMTS_OK) return s;
    return guarded([&] {
        const imts::SparsityStats stats = imts::sparsity(dataset->data);
        if (density) *density = stats.density;
        if (sparsity) *sparsity = stats.sparsity;
        return IMTS_OK;
    });
}

imts_status imts_dataset_validate(const imts_dataset* dataset, char** violations_json) {
    if (imts_status s = require(dataset && violations_json, "null argument"); s != IMTS_OK) {
        return s;
    }
    return guarded([&] {
        nlohmann::json out = nlohmann::json::array();
        for (const imts::Violation& v : imts::validate(dataset->data)) {
            out.push_back({{"instance", v.instance},
                           {"channel", v.channel},
                           {"message", v.message}});
        }
        *violations_json = copy_string(out.dump());
        return IMTS_OK;
    });
}

void imts_dataset_free(imts_dataset* dataset) { delete dataset; }

imts_status imts_train(const imts_dataset* dataset, const char* config_text,
                       imts_model** out_model, char** report_json, double* baseline_mean_mse,
                       double* baseline_carry_mse) {
    if (imts_status s = require(dataset && config_text, "null argument"); s != IMTS_OK) return s;
    return guarded([&] {
        const imts::TrainConfig config = imts::TrainConfig::parse_text(config_text);
        imts::PipelineResult result = imts::run_training_pipeline(config, dataset->data);
        if (report_json) {
            *report_json = copy_string(result.report.to_json().dump());
        }
        if (baseline_mean_mse) *baseline_mean_mse = result.baseline_mean_metrics.mse;
        if (baseline_carry_mse) *baseline_carry_mse = result.baseline_carry_metrics.mse;
        if (out_model) {
            *out_model = new imts_model{std::move(result.params), std::move(result.stats)};
        }
        return IMTS_OK;
    });
}

imts_status imts_model_save(const imts_model* model, const char* path) {
    if (imts_status s = require(model && path, "null argument"); s != IMTS_OK) return s;
    return guarded([&] {
        imts::save_model(path, model->params, model->stats);
        return IMTS_OK;
    });
}

imts_status imts_model_load(const char* path, imts_model** out) {
    if (imts_status s = require(path && out, "null argument"); s != IMTS_OK) return s;
    return guarded([&] {
        imts::SavedModel saved = imts::load_model(path);
        *out = new imts_model{std::move(saved.params), std::move(saved.stats)};
        return IMTS_OK;
    });
}

imts_status imts_model_parameter_count(const imts_model* model, size_t* out) {
    if (imts_status s = require(model && out, "null argument"); s != IMTS_OK) return s;
    *out = imts::count_parameters(model->params);
    return IMTS_OK;
}

imts_status imts_model_evaluate(const imts_model* model, const imts_dataset* dataset,
                                double* mse, double* mae) {
    if (imts_status s = require(model && dataset, "null argument"); s != IMTS_OK) return s;
    return guarded([&] {
        const imts::Dataset normalized = imts::apply_normalize(dataset->data, model->stats);
        const imts::Metrics metrics = imts::evaluate(model->params, normalized);
        if (mse) *mse = metrics.mse;
        if (mae) *mae = metrics.mae;
        return IMTS_OK;
    });
}

void imts_model_free(imts_model* model) { delete model; }

imts_status imts_gradcheck(const char* config_text, uint64_t seed, double* worst_rel_error,
                           int* pass, char** report_json) {
    return guarded([&] {
        imts::GradcheckResult result;
        if (config_text) {
            const imts::TrainConfig config = imts::TrainConfig::parse_text(config_text);
            imts::GradcheckCase c = imts::gradcheck_model(config, seed);
            result.threshold = 1e-4;
            result.worst_rel_error = c.worst_rel_error;
            result.pass = c.pass;
            result.cases.push_back(std::move(c));
        } else {
            result = imts::gradcheck_sweep(seed);
        }
        if (worst_rel_error) *worst_rel_error = result.worst_rel_error;
        if (pass) *pass = result.pass ? 1 : 0;
        if (report_json) *report_json = copy_string(result.to_json().dump());
        return IMTS_OK;
    });
}

} // extern "C"
