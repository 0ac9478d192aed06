// Acceptance suite: runs every criterion end to end and prints one
// PASS/FAIL line per criterion. Exit code is the number of failures.
//
// Usage: acceptance_tests [--cli /path/to/imts] [--workdir DIR]

#include "imts/data.hpp"
#include "imts/datagen.hpp"
#include "imts/gradcheck.hpp"
#include "imts/mixer.hpp"
#include "imts/model.hpp"
#include "imts/training.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace imts;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int g_failures = 0;

void report(int criterion, bool pass, const std::string& what, const std::string& detail) {
    std::printf("%s criterion %d: %s (%s)\n", pass ? "PASS" : "FAIL", criterion, what.c_str(),
                detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

double median3(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

// ---- criterion 1: gradient oracle -------------------------------------------

void criterion_gradient_oracle() {
    const auto start = std::chrono::steady_clock::now();
    GradcheckResult result = gradcheck_sweep(kDefaultGradcheckSeed);
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    bool pass = result.pass && result.cases.size() == 12 && seconds < 60.0;
    report(1, pass, "gradient oracle over encoder x decoder x L sweep",
           "worst rel err " + fmt(result.worst_rel_error) + " over " +
               std::to_string(result.cases.size()) + " cases, " + fmt(seconds) + " s");
}

// ---- criterion 2: structural invariants --------------------------------------

TrainConfig tiny_config(const std::string& encoder, const std::string& decoder,
                        std::size_t layers) {
    TrainConfig config;
    config.encoder = encoder;
    config.decoder = decoder;
    config.layers = layers;
    config.d = 8;
    config.d_out = 6;
    config.mlp_hidden = 8;
    config.mha_heads = 2;
    config.mha_time_dim = 4;
    config.mlp_time_dim = 4;
    return config;
}

void criterion_structural_invariants() {
    std::ostringstream notes;
    bool pass = true;
    auto expect = [&](bool ok, const char* name) {
        if (!ok) {
            pass = false;
            notes << " FAILED:" << name;
        }
    };

    // ISCAM permutation invariance (1e-12)
    {
        std::mt19937_64 rng(42);
        IscamParams params = IscamParams::init(1, 6, 8, false, rng);
        Tensor t = Tensor::from_data({4}, {0.1, 0.2, 0.3, 0.4});
        Tensor v = Tensor::from_data({4}, {1.0, -0.5, 0.3, 2.0});
        std::vector<std::uint8_t> mask{1, 1, 1, 1};
        Tensor t_p = Tensor::from_data({4}, {0.4, 0.2, 0.1, 0.3});
        Tensor v_p = Tensor::from_data({4}, {2.0, -0.5, 1.0, 0.3});
        Tensor a = encode_channel(params, 0, t, v, mask);
        Tensor b = encode_channel(params, 0, t_p, v_p, mask);
        double worst = 0.0;
        for (std::size_t d = 0; d < 6; ++d) {
            worst = std::max(worst, std::fabs(a.data()[d] - b.data()[d]));
        }
        expect(worst <= 1e-12, "iscam-permutation");
    }

    // empty-channel bias identity (exact)
    {
        std::mt19937_64 rng(43);
        IscamParams params = IscamParams::init(2, 6, 8, false, rng);
        std::uniform_real_distribution<double> dist(-1.0, 1.0);
        for (double& x : params.channel_bias.mutable_data()) x = dist(rng);
        ImtsInstance inst;
        inst.channels = {{}, {{0.2, 0.7}}};
        inst.queries = {{0.6}, {0.6}};
        inst.answers = {{0.0}, {0.0}};
        std::vector<ImtsInstance> one{inst};
        Tensor z = encode_imts(params, make_batch(one, 2));
        bool exact = true;
        for (std::size_t d = 0; d < 6; ++d) {
            exact = exact && z.at({0, 0, d}) == params.channel_bias.at({0, d});
        }
        expect(exact, "empty-channel-bias");
    }

    // padding-extension invariance of forecasts (bit-identical), all variants
    {
        Dataset data = gradcheck_dataset(9);
        bool exact = true;
        for (const char* encoder : {"iscam", "mha"}) {
            for (const char* decoder : {"contp", "mlp"}) {
                ModelParams params = ModelParams::init(
                    tiny_config(encoder, decoder, 1).model_config(data.channel_count), 31);
                BatchedImts batch = make_batch(data.instances, data.channel_count);
                BatchedImts padded =
                    make_batch(data.instances, data.channel_count, batch.n_max + 4,
                               batch.k_max + 3);
                Tensor y = model_forward(params, batch);
                Tensor yp = model_forward(params, padded);
                for (std::size_t b = 0; b < batch.batch; ++b)
                    for (std::size_t c = 0; c < batch.channel_count; ++c)
                        for (std::size_t k = 0; k < batch.k_max; ++k)
                            exact = exact && y.at({b, c, k}) == yp.at({b, c, k});
            }
        }
        expect(exact, "padding-extension");
    }

    // query-set independence (bit-identical under identical batching)
    {
        Dataset data = gradcheck_dataset(10);
        ModelParams params = ModelParams::init(
            tiny_config("iscam", "contp", 1).model_config(data.channel_count), 32);
        BatchedImts batch = make_batch(data.instances, data.channel_count);
        Tensor full = model_forward(params, batch);
        BatchedImts pruned = make_batch(data.instances, data.channel_count);
        std::vector<std::size_t> kept;
        for (std::size_t i = 0; i < pruned.q_mask.size(); ++i) {
            if (pruned.q_mask[i] && i % 3 == 0) {
                pruned.q_mask[i] = 0; // drop every third query
            } else if (pruned.q_mask[i]) {
                kept.push_back(i);
            }
        }
        Tensor partial = model_forward(params, pruned);
        bool exact = true;
        for (std::size_t i : kept) {
            exact = exact && full.data()[i] == partial.data()[i];
        }
        expect(exact, "query-independence");
    }

    // zero-weight mixer doubling 2^L (exact)
    {
        std::mt19937_64 rng(44);
        std::normal_distribution<double> dist(0.0, 1.0);
        std::vector<double> data(2 * 3 * 5);
        for (double& x : data) x = dist(rng);
        Tensor z = Tensor::from_data({2, 3, 5}, data);
        bool exact = true;
        for (std::size_t layers : {1u, 2u, 3u}) {
            auto blocks = make_mixer_stack(3, 5, 5, layers, 1e-8, rng);
            for (auto& block : blocks) {
                for (Tensor* t : {&block.w_chan, &block.b_chan, &block.w_dim, &block.b_dim}) {
                    std::fill(t->mutable_data().begin(), t->mutable_data().end(), 0.0);
                }
            }
            Tensor out = mixer_stack_forward(blocks, z, 5);
            const double factor = std::pow(2.0, static_cast<double>(layers));
            for (std::size_t i = 0; i < z.size(); ++i) {
                exact = exact && out.data()[i] == factor * z.data()[i];
            }
        }
        expect(exact, "zero-weight-doubling");
    }

    // masked_softmax normalization (1e-12)
    {
        std::mt19937_64 rng(45);
        std::uniform_real_distribution<double> dist(-40.0, 40.0);
        bool ok = true;
        for (int trial = 0; trial < 500; ++trial) {
            const std::size_t n = 1 + rng() % 10;
            std::vector<double> values(n);
            std::vector<std::uint8_t> mask(n, 0);
            for (std::size_t i = 0; i < n; ++i) values[i] = dist(rng);
            mask[rng() % n] = 1;
            for (std::size_t i = 0; i < n; ++i) {
                if (rng() % 2) mask[i] = 1;
            }
            Tensor w = masked_softmax(Tensor::from_data({n}, values), mask);
            double total = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (mask[i]) {
                    total += w.data()[i];
                } else {
                    ok = ok && w.data()[i] == 0.0;
                }
            }
            ok = ok && std::fabs(total - 1.0) <= 1e-12;
        }
        expect(ok, "softmax-normalization");
    }

    // RMSNorm unit RMS (1e-9)
    {
        std::mt19937_64 rng(46);
        std::normal_distribution<double> dist(0.0, 3.0);
        Tensor gain = Tensor::full({24}, 1.0);
        bool ok = true;
        for (int trial = 0; trial < 100; ++trial) {
            std::vector<double> row(24);
            for (double& x : row) x = dist(rng);
            Tensor y = rms_norm(Tensor::from_data({24}, row), gain, 1e-12);
            double mean_sq = 0.0;
            for (double v : y.data()) mean_sq += v * v;
            ok = ok && std::fabs(std::sqrt(mean_sq / 24.0) - 1.0) <= 1e-9;
        }
        expect(ok, "rmsnorm-unit-rms");
    }

    report(2, pass, "structural invariants suite",
           pass ? "permutation, bias identity, padding, query independence, 2^L, softmax, rms"
                : notes.str());
}

// ---- criteria 3 + 4: learning on coupled dynamics and the mixer curve --------

struct LearningResults {
    std::vector<double> mse_by_layer[4]; // L = 0..3, one entry per seed
    double baseline_mean = 0.0;
    double baseline_carry = 0.0;
};

LearningResults run_learning_study(const fs::path& workdir) {
    OdeSpec spec = OdeSpec::named("lotka_volterra");
    GenConfig gen;
    gen.instance_count = 500;
    gen.drop_fraction = 0.8;
    gen.noise_sigma = 0.05;
    gen.seed = 7;
    Dataset ds = generate_dataset(spec, gen);

    LearningResults results;
    std::ostringstream csv;
    csv << "L,seed,test_mse\n";
    for (std::size_t layers : {0u, 1u, 2u, 3u}) {
        for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
            TrainConfig config;
            config.d = 64;
            config.d_out = 32;
            config.layers = layers;
            config.weight_decay = 1e-3;
            config.lr = 0.01;
            config.batch_size = 32;
            config.patience = 20;
            config.max_epochs = 150;
            config.seed = seed;
            try {
                PipelineResult r = run_training_pipeline(config, ds);
                results.mse_by_layer[layers].push_back(r.report.test_mse);
                csv << layers << "," << seed << "," << r.report.test_mse << "\n";
                if (layers == 1 && seed == 1) {
                    results.baseline_mean = r.baseline_mean_metrics.mse;
                    results.baseline_carry = r.baseline_carry_metrics.mse;
                }
            } catch (const std::exception& e) {
                std::fprintf(stderr, "cell L=%zu seed=%llu failed: %s\n", layers,
                             static_cast<unsigned long long>(seed), e.what());
                results.mse_by_layer[layers].push_back(
                    std::numeric_limits<double>::infinity());
                csv << layers << "," << seed << ",error\n";
            }
        }
    }
    for (std::size_t layers : {0u, 1u, 2u, 3u}) {
        csv << layers << ",median," << median3(results.mse_by_layer[layers]) << "\n";
    }
    std::ofstream(workdir / "acceptance_mixer_curve.csv") << csv.str();
    return results;
}

void criterion_learning(const LearningResults& results) {
    const double model = median3(results.mse_by_layer[1]);
    const bool pass = model < 0.5 * results.baseline_mean &&
                      model < 0.8 * results.baseline_carry;
    report(3, pass, "learning on coupled dynamics beats both baselines",
           "median L=1 MSE " + fmt(model) + " vs mean " + fmt(results.baseline_mean) +
               " (need <" + fmt(0.5 * results.baseline_mean) + ") and carry-forward " +
               fmt(results.baseline_carry) + " (need <" + fmt(0.8 * results.baseline_carry) +
               ")");
}

void criterion_mixer_effect(const LearningResults& results, const fs::path& workdir) {
    const double l0 = median3(results.mse_by_layer[0]);
    const double l1 = median3(results.mse_by_layer[1]);
    report(4, l1 <= l0, "one mixer block does not hurt median accuracy",
           "median MSE L=1 " + fmt(l1) + " <= L=0 " + fmt(l0) + "; full curve in " +
               (workdir / "acceptance_mixer_curve.csv").string());
}

// ---- criterion 5: parameter accounting ----------------------------------------

void criterion_parameter_accounting() {
    const std::size_t mlp = Mlp2::zeros(2, 32, 64).parameter_count();
    std::mt19937_64 rng(1);
    const std::size_t iscam5 = IscamParams::init(5, 64, 32, false, rng).parameter_count();
    const bool pass = mlp == 2208 && iscam5 == 4736;
    report(5, pass, "parameter counts match the closed-form hand counts",
           "Mlp2(2,32,64) = " + std::to_string(mlp) + " (want 2208), ISCAM C=5 D=64 = " +
               std::to_string(iscam5) + " (want 4736)");
}

// ---- criterion 6: generation protocol -----------------------------------------

void criterion_generation_protocol() {
    OdeSpec spec = OdeSpec::named("lotka_volterra");
    GenConfig gen;
    gen.instance_count = 2000;
    gen.drop_fraction = 0.8;
    gen.noise_sigma = 0.05;
    gen.seed = 7;
    Dataset a = generate_dataset(spec, gen);
    // keep rate over the observation window of the generation grid
    const double cut = gen.observation_fraction * spec.horizon;
    std::size_t obs_slots = 0;
    for (std::size_t step = 0; step <= spec.steps; ++step) {
        const double t = static_cast<double>(step) * spec.horizon /
                         static_cast<double>(spec.steps);
        if (t < cut) ++obs_slots;
    }
    std::size_t observations = 0;
    for (const ImtsInstance& inst : a.instances) {
        for (const auto& channel : inst.channels) observations += channel.size();
    }
    const double keep_rate = static_cast<double>(observations) /
                             (static_cast<double>(a.size()) * 2.0 *
                              static_cast<double>(obs_slots));
    const std::size_t violations = validate(a).size();

    Dataset b = generate_dataset(spec, gen);
    std::ostringstream sa, sb;
    for (const ImtsInstance& inst : a.instances) sa << instance_to_json_line(inst) << "\n";
    for (const ImtsInstance& inst : b.instances) sb << instance_to_json_line(inst) << "\n";
    const bool reproducible = sa.str() == sb.str();

    const bool pass = std::fabs(keep_rate - 0.2) <= 0.02 && violations == 0 && reproducible;
    report(6, pass, "generation protocol: keep rate, validity, reproducibility",
           "keep rate " + fmt(keep_rate) + " (want 0.2 +/- 0.02), " +
               std::to_string(violations) + " violations, identical bytes " +
               (reproducible ? "yes" : "NO"));
}

// ---- criterion 7: integrator accuracy -----------------------------------------

void criterion_integrator_accuracy() {
    DerivFn grow = [](double, std::span<const double> x, std::span<double> out) {
        out[0] = x[0];
    };
    const double one[] = {1.0};
    const double e_err =
        std::fabs(rk4_integrate(grow, one, 1.0, 100).back()[0] - std::exp(1.0));

    DerivFn osc = [](double, std::span<const double> x, std::span<double> out) {
        out[0] = x[1];
        out[1] = -x[0];
    };
    const double init[] = {1.0, 0.0};
    const auto period = rk4_integrate(osc, init, 2.0 * M_PI, 100).back();
    const double osc_err = std::max(std::fabs(period[0] - 1.0), std::fabs(period[1]));

    const bool pass = e_err < 1e-7 && osc_err < 1e-5;
    report(7, pass, "RK4 reproduces e and the oscillator period",
           "e error " + fmt(e_err) + " (<1e-7), period error " + fmt(osc_err) + " (<1e-5)");
}

// ---- criterion 8: cmd_train determinism ----------------------------------------

int run_command(const std::string& command) {
    return std::system(command.c_str());
}

std::string file_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

void criterion_train_determinism(const std::string& cli, const fs::path& workdir) {
    if (cli.empty()) {
        report(8, false, "cmd_train determinism", "no --cli path provided");
        return;
    }
    const fs::path data = workdir / "determinism.jsonl";
    const fs::path config = workdir / "determinism.cfg";
    std::ofstream(config) << "D = 16\nD_out = 8\nL = 1\nmlp_hidden = 8\nbatch_size = 16\n"
                          << "max_epochs = 6\nseed = 11\n";
    std::string quiet = " > /dev/null 2>&1";
    if (run_command(cli + " generate --system lotka_volterra --instances 60 --seed 3 " +
                    data.string() + quiet) != 0) {
        report(8, false, "cmd_train determinism", "dataset generation failed");
        return;
    }
    const fs::path run_a = workdir / "det_a";
    const fs::path run_b = workdir / "det_b";
    for (const fs::path& dir : {run_a, run_b}) {
        if (run_command(cli + " train --config " + config.string() + " --data " +
                        data.string() + " --out-dir " + dir.string() + quiet) != 0) {
            report(8, false, "cmd_train determinism", "training run failed");
            return;
        }
    }
    json ra = json::parse(file_bytes(run_a / "report.json"));
    json rb = json::parse(file_bytes(run_b / "report.json"));
    // wall-clock time is the one field that cannot be identical between runs
    ra.erase("wall_seconds");
    rb.erase("wall_seconds");
    const bool reports_match = ra.dump() == rb.dump();
    const bool models_match =
        file_bytes(run_a / "model.json") == file_bytes(run_b / "model.json");
    report(8, reports_match && models_match, "cmd_train rerun is bit-identical",
           std::string("report ") + (reports_match ? "identical" : "DIFFERS") +
               " (wall_seconds excluded), model file " +
               (models_match ? "identical" : "DIFFERS"));
}

} // namespace

int main(int argc, char** argv) {
    std::string cli;
    fs::path workdir = fs::temp_directory_path() / "imts_acceptance";
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--cli" && i + 1 < argc) {
            cli = argv[++i];
        } else if (arg == "--workdir" && i + 1 < argc) {
            workdir = argv[++i];
        } else {
            std::cerr << "usage: acceptance_tests [--cli PATH] [--workdir DIR]\n";
            return 2;
        }
    }
    fs::create_directories(workdir);

    criterion_gradient_oracle();
    criterion_structural_invariants();
    LearningResults learning = run_learning_study(workdir);
    criterion_learning(learning);
    criterion_mixer_effect(learning, workdir);
    criterion_parameter_accounting();
    criterion_generation_protocol();
    criterion_integrator_accuracy();
    criterion_train_determinism(cli, workdir);

    if (g_failures == 0) {
        std::printf("all acceptance criteria passed\n");
    } else {
        std::printf("%d acceptance criteria FAILED\n", g_failures);
    }
    return g_failures;
}
