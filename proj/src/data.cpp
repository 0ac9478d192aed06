#include "imts/data.hpp"

#include "imts/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace imts {

namespace {

using nlohmann::json;

constexpr double kStdFloor = 1e-8;

void append_double(std::string& out, double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out += buf;
}

} // namespace

std::vector<Violation> validate(const ImtsInstance& inst, std::size_t channel_count) {
    std::vector<Violation> violations;
    auto report = [&](std::size_t channel, std::string message) {
        violations.push_back({0, channel, std::move(message)});
    };
    if (inst.channels.size() != channel_count || inst.queries.size() != channel_count ||
        inst.answers.size() != channel_count) {
        report(0, "channel count mismatch: channels=" + std::to_string(inst.channels.size()) +
                      " queries=" + std::to_string(inst.queries.size()) +
                      " answers=" + std::to_string(inst.answers.size()) + " expected=" +
                      std::to_string(channel_count));
        return violations;
    }
    for (std::size_t c = 0; c < channel_count; ++c) {
        if (inst.queries[c].size() != inst.answers[c].size()) {
            report(c, "K mismatch channel " + std::to_string(c) + ": " +
                          std::to_string(inst.queries[c].size()) + " queries vs " +
                          std::to_string(inst.answers[c].size()) + " answers");
        }
        const auto& obs = inst.channels[c];
        for (std::size_t i = 1; i < obs.size(); ++i) {
            if (obs[i].t < obs[i - 1].t) {
                report(c, "observation times decrease in channel " + std::to_string(c) +
                              " at position " + std::to_string(i));
            }
        }
    }
    double max_obs_t = -std::numeric_limits<double>::infinity();
    double min_query_t = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < channel_count; ++c) {
        for (const Observation& o : inst.channels[c]) max_obs_t = std::max(max_obs_t, o.t);
        for (double q : inst.queries[c]) min_query_t = std::min(min_query_t, q);
    }
    if (max_obs_t > min_query_t) {
        report(0, "horizon overlap: observation at t=" + std::to_string(max_obs_t) +
                      " after query at t=" + std::to_string(min_query_t));
    }
    return violations;
}

std::vector<Violation> validate(const Dataset& dataset) {
    std::vector<Violation> all;
    for (std::size_t m = 0; m < dataset.instances.size(); ++m) {
        auto v = validate(dataset.instances[m], dataset.channel_count);
        for (Violation& violation : v) {
            violation.instance = m;
            all.push_back(std::move(violation));
        }
    }
    return all;
}

std::string instance_to_json_line(const ImtsInstance& inst) {
    std::string line = "{\"channels\": [";
    for (std::size_t c = 0; c < inst.channels.size(); ++c) {
        if (c) line += ", ";
        line += "[";
        for (std::size_t i = 0; i < inst.channels[c].size(); ++i) {
            if (i) line += ", ";
            line += "[";
            append_double(line, inst.channels[c][i].t);
            line += ", ";
            append_double(line, inst.channels[c][i].v);
            line += "]";
        }
        line += "]";
    }
    line += "], \"queries\": [";
    for (std::size_t c = 0; c < inst.queries.size(); ++c) {
        if (c) line += ", ";
        line += "[";
        for (std::size_t i = 0; i < inst.queries[c].size(); ++i) {
            if (i) line += ", ";
            append_double(line, inst.queries[c][i]);
        }
        line += "]";
    }
    line += "], \"answers\": [";
    for (std::size_t c = 0; c < inst.answers.size(); ++c) {
        if (c) line += ", ";
        line += "[";
        for (std::size_t i = 0; i < inst.answers[c].size(); ++i) {
            if (i) line += ", ";
            append_double(line, inst.answers[c][i]);
        }
        line += "]";
    }
    line += "]}";
    return line;
}

Dataset load_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open dataset file: " + path.string());
    }
    Dataset dataset;
    std::string line;
    std::size_t line_number = 0;
    bool first = true;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        json doc;
        try {
            doc = json::parse(line);
        } catch (const json::parse_error& e) {
            throw IoError("malformed JSONL at line " + std::to_string(line_number) + ": " +
                          e.what());
        }
        if (!doc.is_object() || !doc.contains("channels") || !doc.contains("queries") ||
            !doc.contains("answers")) {
            throw IoError("malformed JSONL at line " + std::to_string(line_number) +
                          ": expected object with channels/queries/answers");
        }
        ImtsInstance inst;
        try {
            for (const auto& channel : doc.at("channels")) {
                std::vector<Observation> obs;
                for (const auto& pair : channel) {
                    if (!pair.is_array() || pair.size() != 2) {
                        throw IoError("observation tuples must be [t, v] pairs");
                    }
                    obs.push_back({pair.at(0).get<double>(), pair.at(1).get<double>()});
                }
                inst.channels.push_back(std::move(obs));
            }
            for (const auto& channel : doc.at("queries")) {
                inst.queries.push_back(channel.get<std::vector<double>>());
            }
            for (const auto& channel : doc.at("answers")) {
                inst.answers.push_back(channel.get<std::vector<double>>());
            }
        } catch (const json::exception& e) {
            throw IoError("malformed JSONL at line " + std::to_string(line_number) + ": " +
                          e.what());
        }
        const std::size_t c = inst.channels.size();
        if (inst.queries.size() != c || inst.answers.size() != c) {
            throw IoError("schema error at line " + std::to_string(line_number) +
                          ": channels/queries/answers channel counts differ");
        }
        if (first) {
            dataset.channel_count = c;
            first = false;
        } else if (c != dataset.channel_count) {
            throw IoError("schema error at line " + std::to_string(line_number) + ": C=" +
                          std::to_string(c) + " in a C=" +
                          std::to_string(dataset.channel_count) + " file");
        }
        dataset.instances.push_back(std::move(inst));
    }
    return dataset;
}

void save_jsonl(const Dataset& dataset, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write dataset file: " + path.string());
    }
    for (const ImtsInstance& inst : dataset.instances) {
        out << instance_to_json_line(inst) << "\n";
    }
    if (!out) {
        throw IoError("write failed: " + path.string());
    }
}

NormStats fit_normalize(const Dataset& train) {
    if (train.instances.empty()) {
        throw ContractError("fit_normalize: empty training split");
    }
    const std::size_t c_count = train.channel_count;
    NormStats stats;
    stats.mean.assign(c_count, 0.0);
    stats.std_dev.assign(c_count, 1.0);
    std::vector<double> sum(c_count, 0.0), sum_sq(c_count, 0.0);
    std::vector<std::size_t> count(c_count, 0);
    double max_time = 0.0;
    for (const ImtsInstance& inst : train.instances) {
        for (std::size_t c = 0; c < c_count; ++c) {
            for (const Observation& o : inst.channels[c]) {
                sum[c] += o.v;
                sum_sq[c] += o.v * o.v;
                count[c] += 1;
                max_time = std::max(max_time, o.t);
            }
            for (double q : inst.queries[c]) {
                max_time = std::max(max_time, q);
            }
        }
    }
    for (std::size_t c = 0; c < c_count; ++c) {
        if (count[c] == 0) {
            std::cerr << "warning: channel " << c
                      << " has no observations in the training split; using mean 0, std 1\n";
            stats.unobserved_channels.push_back(c);
            continue;
        }
        const double n = static_cast<double>(count[c]);
        const double mean = sum[c] / n;
        const double variance = std::max(sum_sq[c] / n - mean * mean, 0.0);
        stats.mean[c] = mean;
        stats.std_dev[c] = std::max(std::sqrt(variance), kStdFloor);
    }
    stats.time_scale = max_time > 0.0 ? max_time : 1.0;
    return stats;
}

ImtsInstance apply_normalize(const ImtsInstance& inst, const NormStats& stats) {
    ImtsInstance out = inst;
    for (std::size_t c = 0; c < out.channels.size(); ++c) {
        for (Observation& o : out.channels[c]) {
            o.t /= stats.time_scale;
            o.v = (o.v - stats.mean[c]) / stats.std_dev[c];
        }
        for (double& q : out.queries[c]) q /= stats.time_scale;
        for (double& y : out.answers[c]) y = (y - stats.mean[c]) / stats.std_dev[c];
    }
    return out;
}

Dataset apply_normalize(const Dataset& dataset, const NormStats& stats) {
    if (stats.mean.size() != dataset.channel_count) {
        throw ShapeError("apply_normalize: stats cover " + std::to_string(stats.mean.size()) +
                         " channels, dataset has " + std::to_string(dataset.channel_count));
    }
    Dataset out;
    out.channel_count = dataset.channel_count;
    out.instances.reserve(dataset.instances.size());
    for (const ImtsInstance& inst : dataset.instances) {
        out.instances.push_back(apply_normalize(inst, stats));
    }
    return out;
}

ImtsInstance invert_normalize(const ImtsInstance& inst, const NormStats& stats) {
    ImtsInstance out = inst;
    for (std::size_t c = 0; c < out.channels.size(); ++c) {
        for (Observation& o : out.channels[c]) {
            o.t *= stats.time_scale;
            o.v = o.v * stats.std_dev[c] + stats.mean[c];
        }
        for (double& q : out.queries[c]) q *= stats.time_scale;
        for (double& y : out.answers[c]) y = y * stats.std_dev[c] + stats.mean[c];
    }
    return out;
}

BatchedImts make_batch(std::span<const ImtsInstance> instances, std::size_t channel_count,
                       std::size_t min_n, std::size_t min_k) {
    if (instances.empty()) {
        throw ContractError("make_batch: empty batch");
    }
    std::size_t n_max = min_n;
    std::size_t k_max = min_k;
    for (const ImtsInstance& inst : instances) {
        if (inst.channel_count() != channel_count || inst.queries.size() != channel_count) {
            throw ShapeError("make_batch: instance with C=" +
                             std::to_string(inst.channel_count()) + " in a C=" +
                             std::to_string(channel_count) + " batch");
        }
        for (std::size_t c = 0; c < channel_count; ++c) {
            n_max = std::max(n_max, inst.channels[c].size());
            k_max = std::max(k_max, inst.queries[c].size());
        }
    }
    const std::size_t b_count = instances.size();
    BatchedImts batch;
    batch.batch = b_count;
    batch.channel_count = channel_count;
    batch.n_max = n_max;
    batch.k_max = k_max;
    std::vector<double> obs_t(b_count * channel_count * n_max, 0.0);
    std::vector<double> obs_v(b_count * channel_count * n_max, 0.0);
    batch.obs_mask.assign(b_count * channel_count * n_max, 0);
    std::vector<double> q_t(b_count * channel_count * k_max, 0.0);
    batch.q_mask.assign(b_count * channel_count * k_max, 0);
    std::vector<double> y(b_count * channel_count * k_max, 0.0);
    for (std::size_t b = 0; b < b_count; ++b) {
        const ImtsInstance& inst = instances[b];
        for (std::size_t c = 0; c < channel_count; ++c) {
            const std::size_t obs_base = (b * channel_count + c) * n_max;
            for (std::size_t i = 0; i < inst.channels[c].size(); ++i) {
                obs_t[obs_base + i] = inst.channels[c][i].t;
                obs_v[obs_base + i] = inst.channels[c][i].v;
                batch.obs_mask[obs_base + i] = 1;
            }
            const std::size_t q_base = (b * channel_count + c) * k_max;
            for (std::size_t i = 0; i < inst.queries[c].size(); ++i) {
                q_t[q_base + i] = inst.queries[c][i];
                batch.q_mask[q_base + i] = 1;
                y[q_base + i] = inst.answers[c][i];
            }
        }
    }
    const Shape obs_shape{b_count, channel_count, n_max};
    const Shape q_shape{b_count, channel_count, k_max};
    batch.obs_t = Tensor::from_data(obs_shape, std::move(obs_t));
    batch.obs_v = Tensor::from_data(obs_shape, std::move(obs_v));
    batch.q_t = Tensor::from_data(q_shape, std::move(q_t));
    batch.y = Tensor::from_data(q_shape, std::move(y));
    return batch;
}

SparsityStats sparsity(const Dataset& dataset) {
    if (dataset.instances.empty()) {
        throw ContractError("sparsity: empty dataset");
    }
    std::set<double> timestamps;
    std::size_t observations = 0;
    for (const ImtsInstance& inst : dataset.instances) {
        for (const auto& channel : inst.channels) {
            for (const Observation& o : channel) {
                timestamps.insert(o.t);
                ++observations;
            }
        }
    }
    SparsityStats stats;
    stats.distinct_timestamps = timestamps.size();
    stats.observation_count = observations;
    const double slots = static_cast<double>(timestamps.size()) *
                         static_cast<double>(dataset.channel_count) *
                         static_cast<double>(dataset.instances.size());
    stats.density = slots > 0.0 ? static_cast<double>(observations) / slots : 0.0;
    stats.sparsity = 1.0 - stats.density;
    return stats;
}

DatasetSplit split_dataset(const Dataset& dataset, std::uint64_t seed) {
    std::vector<std::size_t> order(dataset.instances.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t n = order.size();
    const std::size_t n_train = n * 6 / 10;
    const std::size_t n_val = n * 2 / 10;
    DatasetSplit split;
    split.train.channel_count = dataset.channel_count;
    split.validation.channel_count = dataset.channel_count;
    split.test.channel_count = dataset.channel_count;
    for (std::size_t i = 0; i < n; ++i) {
        const ImtsInstance& inst = dataset.instances[order[i]];
        if (i < n_train) {
            split.train.instances.push_back(inst);
        } else if (i < n_train + n_val) {
            split.validation.instances.push_back(inst);
        } else {
            split.test.instances.push_back(inst);
        }
    }
    return split;
}

} // namespace imts
