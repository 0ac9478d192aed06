#include "imts/training.hpp"

#include "imts/error.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace imts {

using nlohmann::json;

void TrainConfig::validate() const {
    if (d == 0) throw ConfigError("config: D must be positive");
    if (d_out == 0) throw ConfigError("config: D_out must be positive");
    if (lr <= 0.0) throw ConfigError("config: lr must be positive");
    if (weight_decay < 0.0) throw ConfigError("config: weight_decay must be non-negative");
    if (batch_size == 0) throw ConfigError("config: batch_size must be positive");
    if (patience == 0) throw ConfigError("config: patience must be positive");
    if (mlp_hidden == 0) throw ConfigError("config: mlp_hidden must be positive");
    encoder_kind_from_string(encoder);
    decoder_kind_from_string(decoder);
}

ModelConfig TrainConfig::model_config(std::size_t channel_count) const {
    ModelConfig mc;
    mc.channel_count = channel_count;
    mc.d = d;
    mc.d_out = d_out;
    mc.layers = layers;
    mc.encoder = encoder_kind_from_string(encoder);
    mc.decoder = decoder_kind_from_string(decoder);
    mc.mlp_hidden = mlp_hidden;
    mc.channel_specific_encoders = channel_specific_encoders;
    mc.mha_heads = mha_heads;
    mc.mha_time_dim = mha_time_dim;
    mc.mlp_time_dim = mlp_time_dim;
    mc.validate();
    return mc;
}

json TrainConfig::to_json() const {
    return json{{"D", d},
                {"D_out", d_out},
                {"L", layers},
                {"weight_decay", weight_decay},
                {"lr", lr},
                {"batch_size", batch_size},
                {"patience", patience},
                {"max_epochs", max_epochs},
                {"seed", seed},
                {"encoder", encoder},
                {"decoder", decoder},
                {"mlp_hidden", mlp_hidden},
                {"channel_specific_encoders", channel_specific_encoders},
                {"mha_heads", mha_heads},
                {"mha_time_dim", mha_time_dim},
                {"mlp_time_dim", mlp_time_dim}};
}

TrainConfig TrainConfig::from_json(const json& doc) {
    TrainConfig config;
    config.d = doc.at("D").get<std::size_t>();
    config.d_out = doc.at("D_out").get<std::size_t>();
    config.layers = doc.at("L").get<std::size_t>();
    config.weight_decay = doc.at("weight_decay").get<double>();
    config.lr = doc.at("lr").get<double>();
    config.batch_size = doc.at("batch_size").get<std::size_t>();
    config.patience = doc.at("patience").get<std::size_t>();
    config.max_epochs = doc.at("max_epochs").get<std::size_t>();
    config.seed = doc.at("seed").get<std::uint64_t>();
    config.encoder = doc.at("encoder").get<std::string>();
    config.decoder = doc.at("decoder").get<std::string>();
    config.mlp_hidden = doc.at("mlp_hidden").get<std::size_t>();
    config.channel_specific_encoders = doc.at("channel_specific_encoders").get<bool>();
    config.mha_heads = doc.at("mha_heads").get<std::size_t>();
    config.mha_time_dim = doc.at("mha_time_dim").get<std::size_t>();
    config.mlp_time_dim = doc.at("mlp_time_dim").get<std::size_t>();
    config.validate();
    return config;
}

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
    if constexpr (std::is_unsigned_v<T>) {
        if (!value.empty() && value[0] == '-') {
            throw ConfigError("config key '" + key + "': value must be non-negative, got '" +
                              value + "'");
        }
    }
    std::istringstream in(value);
    T parsed{};
    in >> parsed;
    if (in.fail() || !in.eof()) {
        throw ConfigError("config key '" + key + "': cannot parse value '" + value + "'");
    }
    return parsed;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ConfigError("config key '" + key + "': expected true/false, got '" + value + "'");
}

} // namespace

TrainConfig TrainConfig::parse_text(const std::string& text) {
    TrainConfig config;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const auto comment = line.find('#');
        if (comment != std::string::npos) line.erase(comment);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line '" + line + "' is not 'key = value'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key == "D") {
            config.d = parse_number<std::size_t>(key, value);
        } else if (key == "D_out") {
            config.d_out = parse_number<std::size_t>(key, value);
        } else if (key == "L") {
            config.layers = parse_number<std::size_t>(key, value);
        } else if (key == "weight_decay") {
            config.weight_decay = parse_number<double>(key, value);
        } else if (key == "lr") {
            config.lr = parse_number<double>(key, value);
        } else if (key == "batch_size") {
            config.batch_size = parse_number<std::size_t>(key, value);
        } else if (key == "patience") {
            config.patience = parse_number<std::size_t>(key, value);
        } else if (key == "max_epochs") {
            config.max_epochs = parse_number<std::size_t>(key, value);
        } else if (key == "seed") {
            config.seed = parse_number<std::uint64_t>(key, value);
        } else if (key == "encoder") {
            config.encoder = value;
        } else if (key == "decoder") {
            config.decoder = value;
        } else if (key == "mlp_hidden") {
            config.mlp_hidden = parse_number<std::size_t>(key, value);
        } else if (key == "channel_specific_encoders") {
            config.channel_specific_encoders = parse_bool(key, value);
        } else if (key == "mha_heads") {
            config.mha_heads = parse_number<std::size_t>(key, value);
        } else if (key == "mha_time_dim") {
            config.mha_time_dim = parse_number<std::size_t>(key, value);
        } else if (key == "mlp_time_dim") {
            config.mlp_time_dim = parse_number<std::size_t>(key, value);
        } else {
            throw ConfigError("unknown config key '" + key + "'");
        }
    }
    config.validate();
    return config;
}

std::string TrainConfig::to_text() const {
    std::ostringstream out;
    out << "D = " << d << "\n"
        << "D_out = " << d_out << "\n"
        << "L = " << layers << "\n"
        << "weight_decay = " << weight_decay << "\n"
        << "lr = " << lr << "\n"
        << "batch_size = " << batch_size << "\n"
        << "patience = " << patience << "\n"
        << "max_epochs = " << max_epochs << "\n"
        << "seed = " << seed << "\n"
        << "encoder = " << encoder << "\n"
        << "decoder = " << decoder << "\n"
        << "mlp_hidden = " << mlp_hidden << "\n"
        << "channel_specific_encoders = " << (channel_specific_encoders ? "true" : "false")
        << "\n"
        << "mha_heads = " << mha_heads << "\n"
        << "mha_time_dim = " << mha_time_dim << "\n"
        << "mlp_time_dim = " << mlp_time_dim << "\n";
    return out.str();
}

json TrainReport::to_json() const {
    json epoch_log = json::array();
    for (const EpochStats& e : epochs) {
        epoch_log.push_back({{"train_loss", e.train_loss}, {"val_mse", e.val_mse}});
    }
    json doc{{"epochs", epoch_log},
             {"best_epoch", best_epoch},
             {"stopped_early", stopped_early},
             {"params", parameter_count},
             {"wall_seconds", wall_seconds}};
    doc["test_mse"] = std::isnan(test_mse) ? json(nullptr) : json(test_mse);
    doc["test_mae"] = std::isnan(test_mae) ? json(nullptr) : json(test_mae);
    return doc;
}

TrainReport TrainReport::from_json(const json& doc) {
    TrainReport report;
    for (const auto& e : doc.at("epochs")) {
        report.epochs.push_back(
            {e.at("train_loss").get<double>(), e.at("val_mse").get<double>()});
    }
    report.best_epoch = doc.at("best_epoch").get<std::size_t>();
    report.stopped_early = doc.at("stopped_early").get<bool>();
    report.parameter_count = doc.at("params").get<std::size_t>();
    report.wall_seconds = doc.at("wall_seconds").get<double>();
    if (!doc.at("test_mse").is_null()) report.test_mse = doc.at("test_mse").get<double>();
    if (!doc.at("test_mae").is_null()) report.test_mae = doc.at("test_mae").get<double>();
    return report;
}

namespace {

std::size_t count_unmasked(std::span<const std::uint8_t> mask) {
    std::size_t count = 0;
    for (std::uint8_t m : mask) count += m ? 1 : 0;
    return count;
}

Tensor masked_error_mean(const Tensor& pred, const Tensor& target,
                         std::span<const std::uint8_t> q_mask, bool squared) {
    if (pred.shape() != target.shape()) {
        throw ShapeError("masked loss: prediction and target shapes differ");
    }
    if (q_mask.size() != pred.size()) {
        throw ShapeError("masked loss: mask length mismatch");
    }
    const std::size_t count = count_unmasked(q_mask);
    if (count == 0) {
        throw ContractError("masked loss undefined: zero unmasked queries");
    }
    Tensor diff = sub(pred, target);
    Tensor err = squared ? mul(diff, diff) : abs_val(diff);
    Tensor masked = mul(err, mask_constant(pred.shape(), q_mask));
    return scale(sum_all(masked), 1.0 / static_cast<double>(count));
}

} // namespace

Tensor masked_mse(const Tensor& pred, const Tensor& target,
                  std::span<const std::uint8_t> q_mask) {
    return masked_error_mean(pred, target, q_mask, true);
}

Tensor masked_mae(const Tensor& pred, const Tensor& target,
                  std::span<const std::uint8_t> q_mask) {
    return masked_error_mean(pred, target, q_mask, false);
}

namespace {

// Accumulates squared and absolute errors over unmasked queries so that the
// final metrics are independent of how the pass was batched.
struct ErrorAccumulator {
    double sq = 0.0;
    double abs = 0.0;
    std::size_t count = 0;

    void add(const Tensor& pred, const BatchedImts& batch) {
        const auto p = pred.data();
        const auto y = batch.y.data();
        for (std::size_t i = 0; i < p.size(); ++i) {
            if (!batch.q_mask[i]) continue;
            const double e = p[i] - y[i];
            sq += e * e;
            abs += std::fabs(e);
            count += 1;
        }
    }

    Metrics metrics() const {
        if (count == 0) {
            throw ContractError("evaluate: dataset has no queries");
        }
        const double n = static_cast<double>(count);
        return {sq / n, abs / n};
    }
};

Metrics evaluate_batched(const ModelParams& params, const Dataset& set,
                         std::size_t batch_size) {
    NoGradGuard no_grad;
    ErrorAccumulator acc;
    const auto& instances = set.instances;
    for (std::size_t start = 0; start < instances.size(); start += batch_size) {
        const std::size_t count = std::min(batch_size, instances.size() - start);
        BatchedImts batch = make_batch({instances.data() + start, count}, set.channel_count);
        acc.add(model_forward(params, batch), batch);
    }
    return acc.metrics();
}

} // namespace

TrainOutcome train(const TrainConfig& config, const Dataset& train_set, const Dataset& val_set) {
    config.validate();
    if (train_set.instances.empty() || val_set.instances.empty()) {
        throw ContractError("train: empty train or validation split");
    }
    const auto start_time = std::chrono::steady_clock::now();
    ModelParams params = ModelParams::init(config.model_config(train_set.channel_count),
                                           config.seed);
    ParamList learnables = params.parameters();
    AdamW optimizer(learnables);
    TrainReport report;
    report.parameter_count = count_parameters(params);

    std::vector<double> best_snapshot = params.snapshot_values();
    double best_val = std::numeric_limits<double>::infinity();

    std::vector<std::size_t> order(train_set.instances.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<ImtsInstance> batch_buffer;

    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        std::mt19937_64 epoch_rng(config.seed * 0x9e3779b97f4a7c15ULL + epoch);
        std::shuffle(order.begin(), order.end(), epoch_rng);
        double epoch_sq = 0.0;
        std::size_t epoch_count = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t count = std::min(config.batch_size, order.size() - start);
            batch_buffer.clear();
            for (std::size_t i = 0; i < count; ++i) {
                batch_buffer.push_back(train_set.instances[order[start + i]]);
            }
            BatchedImts batch = make_batch(batch_buffer, train_set.channel_count);
            const std::size_t queries = count_unmasked(batch.q_mask);
            Tensor pred = model_forward(params, batch);
            Tensor loss = masked_mse(pred, batch.y, batch.q_mask);
            const double loss_value = loss.value();
            if (!std::isfinite(loss_value)) {
                throw NumericError("non-finite training loss at epoch " +
                                   std::to_string(epoch) + ", batch " +
                                   std::to_string(start / config.batch_size));
            }
            epoch_sq += loss_value * static_cast<double>(queries);
            epoch_count += queries;
            for (NamedParam& p : learnables) p.tensor.zero_grad();
            backward(loss);
            optimizer.step(learnables, config.lr, config.weight_decay);
        }
        EpochStats stats;
        stats.train_loss = epoch_sq / static_cast<double>(epoch_count);
        stats.val_mse = evaluate_batched(params, val_set, config.batch_size).mse;
        report.epochs.push_back(stats);
        if (stats.val_mse < best_val) {
            best_val = stats.val_mse;
            report.best_epoch = epoch;
            best_snapshot = params.snapshot_values();
        } else if (epoch - report.best_epoch >= config.patience) {
            report.stopped_early = true;
            break;
        }
    }
    params.restore_values(best_snapshot);
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time).count();
    return {std::move(params), std::move(report)};
}

Metrics evaluate(const ModelParams& params, const Dataset& test_set, std::size_t batch_size) {
    if (test_set.instances.empty()) {
        throw ContractError("evaluate: empty dataset");
    }
    return evaluate_batched(params, test_set, batch_size);
}

namespace {

std::vector<double> channel_answer_means(const Dataset& train_set) {
    std::vector<double> sum(train_set.channel_count, 0.0);
    std::vector<std::size_t> count(train_set.channel_count, 0);
    for (const ImtsInstance& inst : train_set.instances) {
        for (std::size_t c = 0; c < train_set.channel_count; ++c) {
            for (double y : inst.answers[c]) {
                sum[c] += y;
                count[c] += 1;
            }
        }
    }
    std::vector<double> means(train_set.channel_count, 0.0);
    for (std::size_t c = 0; c < means.size(); ++c) {
        if (count[c] > 0) means[c] = sum[c] / static_cast<double>(count[c]);
    }
    return means;
}

} // namespace

Predictor baseline_mean(const Dataset& train_set) {
    if (train_set.instances.empty()) {
        throw ContractError("baseline_mean: empty training split");
    }
    auto means = channel_answer_means(train_set);
    return [means](const ImtsInstance&, std::size_t channel, double) {
        return means[channel];
    };
}

Predictor baseline_carry_forward(const Dataset& train_set) {
    if (train_set.instances.empty()) {
        throw ContractError("baseline_carry_forward: empty training split");
    }
    auto means = channel_answer_means(train_set);
    return [means](const ImtsInstance& inst, std::size_t channel, double) {
        if (inst.channels[channel].empty()) {
            return means[channel];
        }
        return inst.channels[channel].back().v;
    };
}

Metrics evaluate_predictor(const Predictor& predictor, const Dataset& test_set) {
    double sq = 0.0;
    double abs = 0.0;
    std::size_t count = 0;
    for (const ImtsInstance& inst : test_set.instances) {
        for (std::size_t c = 0; c < test_set.channel_count; ++c) {
            for (std::size_t i = 0; i < inst.queries[c].size(); ++i) {
                const double e = predictor(inst, c, inst.queries[c][i]) - inst.answers[c][i];
                sq += e * e;
                abs += std::fabs(e);
                count += 1;
            }
        }
    }
    if (count == 0) {
        throw ContractError("evaluate_predictor: dataset has no queries");
    }
    const double n = static_cast<double>(count);
    return {sq / n, abs / n};
}

PipelineResult run_training_pipeline(const TrainConfig& config, const Dataset& raw) {
    if (raw.instances.size() < 5) {
        throw ContractError("training pipeline needs at least 5 instances, got " +
                            std::to_string(raw.instances.size()));
    }
    DatasetSplit split = split_dataset(raw, config.seed);
    NormStats stats = fit_normalize(split.train);
    Dataset train_n = apply_normalize(split.train, stats);
    Dataset val_n = apply_normalize(split.validation, stats);
    Dataset test_n = apply_normalize(split.test, stats);

    TrainOutcome outcome = train(config, train_n, val_n);
    Metrics test_metrics = evaluate(outcome.params, test_n, config.batch_size);
    outcome.report.test_mse = test_metrics.mse;
    outcome.report.test_mae = test_metrics.mae;

    PipelineResult result{std::move(outcome.params), std::move(stats),
                          std::move(outcome.report), {}, {}};
    result.baseline_mean_metrics = evaluate_predictor(baseline_mean(train_n), test_n);
    result.baseline_carry_metrics = evaluate_predictor(baseline_carry_forward(train_n), test_n);
    return result;
}

void save_model(const std::filesystem::path& path, const ModelParams& params,
                const NormStats& stats) {
    json doc = params.to_json();
    doc["norm_stats"] = {{"mean", stats.mean},
                         {"std", stats.std_dev},
                         {"time_scale", stats.time_scale},
                         {"unobserved_channels", stats.unobserved_channels}};
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write model file: " + path.string());
    }
    out << doc.dump(2) << "\n";
    if (!out) {
        throw IoError("write failed: " + path.string());
    }
}

SavedModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open model file: " + path.string());
    }
    json doc;
    try {
        in >> doc;
    } catch (const json::parse_error& e) {
        throw IoError("malformed model file " + path.string() + ": " + e.what());
    }
    SavedModel model{ModelParams::from_json(doc), {}};
    const json& stats = doc.at("norm_stats");
    model.stats.mean = stats.at("mean").get<std::vector<double>>();
    model.stats.std_dev = stats.at("std").get<std::vector<double>>();
    model.stats.time_scale = stats.at("time_scale").get<double>();
    model.stats.unobserved_channels =
        stats.at("unobserved_channels").get<std::vector<std::size_t>>();
    return model;
}

} // namespace imts
