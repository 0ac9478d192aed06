// Command-line front end for the IMTS-Mixer library. Talks to the core
// exclusively through the C API in imts/imts_capi.h.

#include "imts/imts_capi.h"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;
constexpr std::uint64_t kGradcheckDefaultSeed = 4;

struct DatasetDeleter {
    void operator()(imts_dataset* d) const { imts_dataset_free(d); }
};
struct ModelDeleter {
    void operator()(imts_model* m) const { imts_model_free(m); }
};
using DatasetPtr = std::unique_ptr<imts_dataset, DatasetDeleter>;
using ModelPtr = std::unique_ptr<imts_model, ModelDeleter>;

std::string take_string(char* s) {
    std::string out = s ? s : "";
    imts_string_free(s);
    return out;
}

[[noreturn]] void fail(int code, const std::string& message) {
    std::cerr << "error: " << message << "\n";
    std::exit(code);
}

void check(imts_status status) {
    if (status != IMTS_OK) {
        fail(status == IMTS_ERR_INVALID ? kExitUsage : kExitRuntime, imts_last_error());
    }
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(kExitUsage, "cannot read " + path.string());
    }
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

void write_file(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary);
    out << content;
    if (!out) {
        fail(kExitRuntime, "cannot write " + path.string());
    }
}

std::string fnv1a64_hex(const std::string& bytes) {
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    for (unsigned char b : bytes) {
        hash ^= b;
        hash *= 0x100000001b3ULL;
    }
    char buf[19];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash));
    return buf;
}

void require_file(const fs::path& path) {
    if (!fs::exists(path)) {
        fail(kExitUsage, "no such file: " + path.string());
    }
}

// Flat "key = value" config text. Appending a line overrides earlier ones,
// which keeps manifests an exact record of the effective configuration.
struct ConfigText {
    std::string text;

    static ConfigText from_file(const fs::path& path) {
        require_file(path);
        return {read_file(path)};
    }

    void override_key(const std::string& key, const std::string& value) {
        if (!text.empty() && text.back() != '\n') {
            text += "\n";
        }
        text += key + " = " + value + "\n";
    }
};

void write_manifest(const fs::path& path, const std::string& command, json extra) {
    json manifest{{"command", command}, {"tool_version", imts_version()}};
    manifest.update(extra);
    write_file(path, manifest.dump(2) + "\n");
}

json dataset_manifest_entry(const fs::path& path) {
    return json{{"path", path.string()}, {"fnv1a64", fnv1a64_hex(read_file(path))}};
}

// ---- generate ---------------------------------------------------------------

struct GenerateArgs {
    std::string system = "lotka_volterra";
    std::size_t instances = 500;
    double drop = 0.8;
    double sigma = 0.05;
    double obs_fraction = 0.5;
    std::uint64_t seed = 0;
    std::string out;
};

int cmd_generate(const GenerateArgs& args) {
    imts_dataset* raw = nullptr;
    check(imts_dataset_generate(args.system.c_str(), args.instances, args.drop, args.sigma,
                                args.obs_fraction, args.seed, &raw));
    DatasetPtr dataset(raw);
    check(imts_dataset_save(dataset.get(), args.out.c_str()));

    double density = 0.0, sparsity = 0.0;
    check(imts_dataset_stats(dataset.get(), &density, &sparsity));

    const fs::path out_path(args.out);
    write_manifest(out_path.string() + ".manifest.json", "generate",
                   json{{"seed", args.seed},
                        {"config",
                         {{"system", args.system},
                          {"instances", args.instances},
                          {"drop", args.drop},
                          {"sigma", args.sigma},
                          {"obs_fraction", args.obs_fraction},
                          {"sigma_is_relative_to_channel_std", true}}},
                        {"outputs", {{"dataset", dataset_manifest_entry(out_path)}}}});
    std::cout << "wrote " << args.out << " (" << args.instances << " instances, density "
              << density << ", sparsity " << sparsity << ")\n";
    return 0;
}

// ---- train -------------------------------------------------------------------

struct TrainArgs {
    std::string config_path;
    std::string data_path;
    std::string out_dir = "run";
    std::optional<std::uint64_t> seed;
    std::size_t search = 0;
};

json train_once(imts_dataset* dataset, const std::string& config_text, ModelPtr* model_out) {
    imts_model* model = nullptr;
    char* report_json = nullptr;
    double baseline_mean = 0.0, baseline_carry = 0.0;
    check(imts_train(dataset, config_text.c_str(), model_out ? &model : nullptr, &report_json,
                     &baseline_mean, &baseline_carry));
    if (model_out) {
        model_out->reset(model);
    }
    json report = json::parse(take_string(report_json));
    report["baselines"] = {{"mean_mse", baseline_mean}, {"carry_forward_mse", baseline_carry}};
    return report;
}

double best_val_mse(const json& report) {
    const auto best_epoch = report.at("best_epoch").get<std::size_t>();
    if (best_epoch == 0) {
        return std::numeric_limits<double>::infinity();
    }
    return report.at("epochs")[best_epoch - 1].at("val_mse").get<double>();
}

int cmd_train(const TrainArgs& args) {
    require_file(args.data_path);
    ConfigText config = ConfigText::from_file(args.config_path);
    if (args.seed) {
        config.override_key("seed", std::to_string(*args.seed));
    }
    imts_dataset* raw = nullptr;
    check(imts_dataset_load(args.data_path.c_str(), &raw));
    DatasetPtr dataset(raw);

    std::string chosen_text = config.text;
    json search_log = json::array();
    if (args.search > 0) {
        // Random search over the reference tuning grid; the winner is the
        // configuration with the lowest best-epoch validation MSE.
        const std::size_t grid_d[] = {64, 128, 256};
        const std::size_t grid_d_out[] = {32, 64, 128};
        const std::size_t grid_layers[] = {1, 2, 3};
        const double grid_wd[] = {1e-2, 1e-3, 1e-4};
        std::uint64_t state =
            args.seed.value_or(0) * 0x9e3779b97f4a7c15ULL + 0x2545f4914f6cdd1dULL;
        auto next = [&state]() {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            return state;
        };
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t trial = 0; trial < args.search; ++trial) {
            ConfigText candidate = config;
            candidate.override_key("D", std::to_string(grid_d[next() % 3]));
            candidate.override_key("D_out", std::to_string(grid_d_out[next() % 3]));
            candidate.override_key("L", std::to_string(grid_layers[next() % 3]));
            std::ostringstream wd;
            wd << grid_wd[next() % 3];
            candidate.override_key("weight_decay", wd.str());
            json report = train_once(dataset.get(), candidate.text, nullptr);
            const double val = best_val_mse(report);
            search_log.push_back({{"config", candidate.text}, {"val_mse", val}});
            std::cout << "search trial " << trial << ": val_mse " << val << "\n";
            if (val < best) {
                best = val;
                chosen_text = candidate.text;
            }
        }
    }

    ModelPtr model;
    json report = train_once(dataset.get(), chosen_text, &model);

    const fs::path out_dir(args.out_dir);
    fs::create_directories(out_dir);
    const fs::path model_path = out_dir / "model.json";
    const fs::path report_path = out_dir / "report.json";
    check(imts_model_save(model.get(), model_path.string().c_str()));
    write_file(report_path, report.dump(2) + "\n");

    json manifest_extra{{"config_text", chosen_text},
                        {"dataset", dataset_manifest_entry(args.data_path)},
                        {"outputs",
                         {{"model", model_path.string()}, {"report", report_path.string()}}}};
    if (args.seed) {
        manifest_extra["seed"] = *args.seed;
    }
    if (args.search > 0) {
        manifest_extra["search"] = search_log;
    }
    write_manifest(out_dir / "manifest.json", "train", manifest_extra);

    std::cout << "test_mse " << report.at("test_mse") << "\n"
              << "test_mae " << report.at("test_mae") << "\n"
              << "baseline_mean_mse " << report.at("baselines").at("mean_mse") << "\n"
              << "baseline_carry_forward_mse "
              << report.at("baselines").at("carry_forward_mse") << "\n"
              << "params " << report.at("params") << "\n"
              << "epochs " << report.at("epochs").size() << "\n";
    return 0;
}

// ---- eval -------------------------------------------------------------------

struct EvalArgs {
    std::string model_path;
    std::string data_path;
    std::string out;
};

int cmd_eval(const EvalArgs& args) {
    require_file(args.model_path);
    require_file(args.data_path);
    imts_model* raw_model = nullptr;
    check(imts_model_load(args.model_path.c_str(), &raw_model));
    ModelPtr model(raw_model);
    imts_dataset* raw_data = nullptr;
    check(imts_dataset_load(args.data_path.c_str(), &raw_data));
    DatasetPtr dataset(raw_data);

    double mse = 0.0, mae = 0.0;
    check(imts_model_evaluate(model.get(), dataset.get(), &mse, &mae));
    json result{{"mse", mse}, {"mae", mae}};
    std::cout << result.dump(2) << "\n";
    if (!args.out.empty()) {
        write_file(args.out, result.dump(2) + "\n");
        write_manifest(args.out + ".manifest.json", "eval",
                       json{{"model", args.model_path},
                            {"dataset", dataset_manifest_entry(args.data_path)},
                            {"outputs", {{"metrics", args.out}}}});
    }
    return 0;
}

// ---- gradcheck ---------------------------------------------------------------

struct GradcheckArgs {
    std::string config_path;
    std::uint64_t seed = kGradcheckDefaultSeed;
};

int cmd_gradcheck(const GradcheckArgs& args) {
    std::string config_text;
    if (!args.config_path.empty()) {
        config_text = ConfigText::from_file(args.config_path).text;
    }
    double worst = 0.0;
    int pass = 0;
    char* report_json = nullptr;
    check(imts_gradcheck(config_text.empty() ? nullptr : config_text.c_str(), args.seed, &worst,
                         &pass, &report_json));
    json report = json::parse(take_string(report_json));
    for (const auto& c : report.at("cases")) {
        std::cout << (c.at("pass").get<bool>() ? "PASS" : "FAIL")
                  << " encoder=" << c.at("encoder").get<std::string>()
                  << " decoder=" << c.at("decoder").get<std::string>() << " L=" << c.at("L")
                  << " worst_rel_error=" << c.at("worst_rel_error") << " ("
                  << c.at("worst_param").get<std::string>() << ")\n";
    }
    std::cout << (pass ? "PASS" : "FAIL") << " worst_rel_error=" << worst << "\n";
    return pass ? 0 : kExitRuntime;
}

// ---- ablate-blocks -----------------------------------------------------------

struct AblateArgs {
    std::string config_path;
    std::string data_path;
    std::vector<std::size_t> levels{0, 1, 2, 3};
    std::vector<std::uint64_t> seeds{1, 2, 3};
    std::string out = "ablation.csv";
};

int cmd_ablate(const AblateArgs& args) {
    require_file(args.data_path);
    ConfigText base = ConfigText::from_file(args.config_path);
    imts_dataset* raw = nullptr;
    check(imts_dataset_load(args.data_path.c_str(), &raw));
    DatasetPtr dataset(raw);

    std::ostringstream csv;
    csv << "L,seed,test_mse\n";
    bool any_failed = false;
    std::vector<std::pair<std::size_t, std::vector<double>>> by_level;
    for (std::size_t level : args.levels) {
        std::vector<double> results;
        for (std::uint64_t seed : args.seeds) {
            ConfigText cell = base;
            cell.override_key("L", std::to_string(level));
            cell.override_key("seed", std::to_string(seed));
            imts_model* model = nullptr;
            char* report_json = nullptr;
            const imts_status status = imts_train(dataset.get(), cell.text.c_str(), &model,
                                                  &report_json, nullptr, nullptr);
            if (status != IMTS_OK) {
                std::cerr << "cell L=" << level << " seed=" << seed
                          << " failed: " << imts_last_error() << "\n";
                csv << level << "," << seed << ",error\n";
                any_failed = true;
                continue;
            }
            imts_model_free(model);
            json report = json::parse(take_string(report_json));
            const double mse = report.at("test_mse").get<double>();
            csv << level << "," << seed << "," << std::setprecision(17) << mse << "\n";
            results.push_back(mse);
            std::cout << "L=" << level << " seed=" << seed << " test_mse=" << mse << "\n";
        }
        by_level.emplace_back(level, std::move(results));
    }
    for (auto& [level, results] : by_level) {
        if (results.empty()) {
            csv << level << ",median,error\n";
            continue;
        }
        std::sort(results.begin(), results.end());
        const std::size_t n = results.size();
        const double median =
            n % 2 ? results[n / 2] : 0.5 * (results[n / 2 - 1] + results[n / 2]);
        csv << level << ",median," << std::setprecision(17) << median << "\n";
        std::cout << "L=" << level << " median=" << median << "\n";
    }
    write_file(args.out, csv.str());
    json seeds_json = json::array();
    for (std::uint64_t s : args.seeds) seeds_json.push_back(s);
    write_manifest(args.out + ".manifest.json", "ablate-blocks",
                   json{{"config_text", base.text},
                        {"levels", args.levels},
                        {"seeds", seeds_json},
                        {"dataset", dataset_manifest_entry(args.data_path)},
                        {"outputs", {{"csv", args.out}}}});
    return any_failed ? kExitRuntime : 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"IMTS-Mixer: forecasting irregularly sampled multivariate time series"};
    app.require_subcommand(1);

    GenerateArgs gen;
    auto* generate = app.add_subcommand("generate", "Generate a synthetic ODE benchmark dataset");
    generate->add_option("--system", gen.system, "ODE system (damped_oscillator|lotka_volterra)");
    generate->add_option("--instances", gen.instances, "Number of instances");
    generate->add_option("--drop", gen.drop, "Drop fraction in (0,1)")
        ->check(CLI::Range(1e-12, 1.0 - 1e-12));
    generate->add_option("--sigma", gen.sigma, "Observation noise, relative to channel std");
    generate
        ->add_option("--obs-fraction", gen.obs_fraction,
                     "Timeline fraction used as observation range")
        ->check(CLI::Range(1e-12, 1.0 - 1e-12));
    generate->add_option("--seed", gen.seed, "Generation seed");
    generate->add_option("out", gen.out, "Output JSONL path")->required();

    TrainArgs train_args;
    auto* train = app.add_subcommand("train", "Train a model on a JSONL dataset");
    train->add_option("--config", train_args.config_path, "Config file (key = value lines)")
        ->required();
    train->add_option("--data", train_args.data_path, "Dataset JSONL path")->required();
    train->add_option("--out-dir", train_args.out_dir, "Output directory");
    std::uint64_t seed_flag = 0;
    auto* seed_opt = train->add_option("--seed", seed_flag, "Override the config seed");
    train->add_option("--search", train_args.search,
                      "Random-search sample count over the tuning grid");

    EvalArgs eval_args;
    auto* eval = app.add_subcommand("eval", "Evaluate a saved model on a dataset");
    eval->add_option("--model", eval_args.model_path, "Model file")->required();
    eval->add_option("--data", eval_args.data_path, "Dataset JSONL path")->required();
    eval->add_option("--out", eval_args.out, "Write metrics JSON here");

    GradcheckArgs gradcheck_args;
    auto* gradcheck = app.add_subcommand(
        "gradcheck", "Compare reverse-mode gradients against finite differences");
    gradcheck->add_option("--config", gradcheck_args.config_path,
                          "Check one configuration instead of the full sweep");
    gradcheck->add_option("--seed", gradcheck_args.seed, "Seed for parameters and data");

    AblateArgs ablate_args;
    auto* ablate =
        app.add_subcommand("ablate-blocks", "Sweep the mixer depth over (L, seed) cells");
    ablate->add_option("--config", ablate_args.config_path, "Base config file")->required();
    ablate->add_option("--data", ablate_args.data_path, "Dataset JSONL path")->required();
    ablate->add_option("--levels", ablate_args.levels, "Mixer block counts")->delimiter(',');
    ablate->add_option("--seeds", ablate_args.seeds, "Training seeds")->delimiter(',');
    ablate->add_option("--out", ablate_args.out, "Output CSV path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    if (seed_opt->count() > 0) {
        train_args.seed = seed_flag;
    }
    if (generate->parsed()) return cmd_generate(gen);
    if (train->parsed()) return cmd_train(train_args);
    if (eval->parsed()) return cmd_eval(eval_args);
    if (gradcheck->parsed()) return cmd_gradcheck(gradcheck_args);
    if (ablate->parsed()) return cmd_ablate(ablate_args);
    return kExitUsage;
}
