#include <doctest.h>

#include "imts/imts_capi.h"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <random>
#include <string>

namespace {

namespace fs = std::filesystem;

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("imts_capi_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

constexpr const char* kTinyConfig =
    "D = 8\nD_out = 6\nL = 1\nmlp_hidden = 8\nmha_time_dim = 4\nmlp_time_dim = 4\n"
    "mha_heads = 2\nbatch_size = 16\nmax_epochs = 4\nseed = 5\n";

} // namespace

TEST_CASE("capi dataset lifecycle") {
    TempDir tmp;
    imts_dataset* ds = nullptr;
    REQUIRE(imts_dataset_generate("lotka_volterra", 40, 0.8, 0.05, 0.5, 7, &ds) == IMTS_OK);
    size_t channels = 0, instances = 0;
    CHECK(imts_dataset_channel_count(ds, &channels) == IMTS_OK);
    CHECK(imts_dataset_instance_count(ds, &instances) == IMTS_OK);
    CHECK(channels == 2);
    CHECK(instances == 40);

    double density = 0.0, sparsity = 0.0;
    CHECK(imts_dataset_stats(ds, &density, &sparsity) == IMTS_OK);
    CHECK(std::fabs(density + sparsity - 1.0) < 1e-12);

    char* violations = nullptr;
    CHECK(imts_dataset_validate(ds, &violations) == IMTS_OK);
    CHECK(std::string(violations) == "[]");
    imts_string_free(violations);

    const auto path = (tmp.path / "ds.jsonl").string();
    CHECK(imts_dataset_save(ds, path.c_str()) == IMTS_OK);
    imts_dataset* loaded = nullptr;
    CHECK(imts_dataset_load(path.c_str(), &loaded) == IMTS_OK);
    size_t loaded_count = 0;
    CHECK(imts_dataset_instance_count(loaded, &loaded_count) == IMTS_OK);
    CHECK(loaded_count == 40);
    imts_dataset_free(loaded);
    imts_dataset_free(ds);
}

TEST_CASE("capi reports errors with codes and messages") {
    imts_dataset* ds = nullptr;
    CHECK(imts_dataset_generate("nope", 10, 0.8, 0.05, 0.5, 1, &ds) == IMTS_ERR_INVALID);
    CHECK(std::string(imts_last_error()).find("nope") != std::string::npos);
    CHECK(imts_dataset_generate("lotka_volterra", 10, 1.5, 0.05, 0.5, 1, &ds) ==
          IMTS_ERR_INVALID);
    CHECK(imts_dataset_load("/no/such/file.jsonl", &ds) == IMTS_ERR_RUNTIME);
    CHECK(imts_dataset_generate(nullptr, 10, 0.8, 0.05, 0.5, 1, &ds) == IMTS_ERR_INVALID);
}

TEST_CASE("capi train, save, load, evaluate") {
    TempDir tmp;
    imts_dataset* ds = nullptr;
    REQUIRE(imts_dataset_generate("lotka_volterra", 60, 0.8, 0.05, 0.5, 7, &ds) == IMTS_OK);

    imts_model* model = nullptr;
    char* report_json = nullptr;
    double baseline_mean = 0.0, baseline_carry = 0.0;
    REQUIRE(imts_train(ds, kTinyConfig, &model, &report_json, &baseline_mean,
                       &baseline_carry) == IMTS_OK);
    auto report = nlohmann::json::parse(report_json);
    imts_string_free(report_json);
    for (const char* key :
         {"epochs", "best_epoch", "test_mse", "test_mae", "params", "wall_seconds"}) {
        CHECK(report.contains(key));
    }
    CHECK(report.at("epochs").size() <= 4);
    CHECK(baseline_mean > 0.0);
    CHECK(baseline_carry > 0.0);

    size_t param_count = 0;
    CHECK(imts_model_parameter_count(model, &param_count) == IMTS_OK);
    CHECK(param_count == report.at("params").get<size_t>());

    const auto model_path = (tmp.path / "model.json").string();
    REQUIRE(imts_model_save(model, model_path.c_str()) == IMTS_OK);
    imts_model* restored = nullptr;
    REQUIRE(imts_model_load(model_path.c_str(), &restored) == IMTS_OK);

    double mse_a = 0.0, mae_a = 0.0, mse_b = 0.0, mae_b = 0.0;
    CHECK(imts_model_evaluate(model, ds, &mse_a, &mae_a) == IMTS_OK);
    CHECK(imts_model_evaluate(restored, ds, &mse_b, &mae_b) == IMTS_OK);
    CHECK(mse_a == mse_b);
    CHECK(mae_a == mae_b);

    imts_model_free(restored);
    imts_model_free(model);

    // invalid config text surfaces as INVALID with the key in the message
    imts_model* bad_model = nullptr;
    CHECK(imts_train(ds, "what = 3\n", &bad_model, nullptr, nullptr, nullptr) ==
          IMTS_ERR_INVALID);
    CHECK(std::string(imts_last_error()).find("what") != std::string::npos);
    imts_dataset_free(ds);
}

TEST_CASE("capi gradcheck") {
    double worst = 1.0;
    int pass = 0;
    char* report_json = nullptr;
    REQUIRE(imts_gradcheck(nullptr, 4, &worst, &pass, &report_json) == IMTS_OK);
    auto report = nlohmann::json::parse(report_json);
    imts_string_free(report_json);
    CHECK(pass == 1);
    CHECK(worst < 1e-4);
    CHECK(report.at("cases").size() == 12);

    // single configuration
    REQUIRE(imts_gradcheck(kTinyConfig, 4, &worst, &pass, nullptr) == IMTS_OK);
    CHECK(pass == 1);
}

TEST_CASE("capi version string") {
    CHECK(std::string(imts_version()) == "0.1.0");
}
