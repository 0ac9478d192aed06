#pragma once

#include "imts/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace imts {

struct Observation {
    double t = 0.0;
    double v = 0.0;
    friend bool operator==(const Observation&, const Observation&) = default;
};

// One sample: per-channel observation sequences over the observation range,
// and per-channel query times with their aligned answer values in the
// forecasting horizon.
struct ImtsInstance {
    std::vector<std::vector<Observation>> channels;
    std::vector<std::vector<double>> queries;
    std::vector<std::vector<double>> answers;

    std::size_t channel_count() const { return channels.size(); }
    friend bool operator==(const ImtsInstance&, const ImtsInstance&) = default;
};

struct Dataset {
    std::size_t channel_count = 0;
    std::vector<ImtsInstance> instances;

    std::size_t size() const { return instances.size(); }
    friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct Violation {
    std::size_t instance = 0;
    std::size_t channel = 0;
    std::string message;
};

// Invariant violations are data, not exceptions.
std::vector<Violation> validate(const ImtsInstance& inst, std::size_t channel_count);
std::vector<Violation> validate(const Dataset& dataset);

// One instance per line:
// {"channels": [[[t,v],...],...], "queries": [[q,...],...], "answers": [[y,...],...]}
// Floats are written with 17 significant digits so save/load round-trips exactly.
Dataset load_jsonl(const std::filesystem::path& path);
void save_jsonl(const Dataset& dataset, const std::filesystem::path& path);
std::string instance_to_json_line(const ImtsInstance& inst);

struct NormStats {
    std::vector<double> mean;                      // per channel, over observed values
    std::vector<double> std_dev;                   // population, floored at 1e-8
    double time_scale = 1.0;                       // max time seen in the training split
    std::vector<std::size_t> unobserved_channels;  // fell back to mean 0 / std 1
};

NormStats fit_normalize(const Dataset& train);
ImtsInstance apply_normalize(const ImtsInstance& inst, const NormStats& stats);
Dataset apply_normalize(const Dataset& dataset, const NormStats& stats);
ImtsInstance invert_normalize(const ImtsInstance& inst, const NormStats& stats);

// Padded, masked tensor view of a set of instances. Padding slots carry
// t=0, v=0 and a false mask.
struct BatchedImts {
    std::size_t batch = 0;
    std::size_t channel_count = 0;
    std::size_t n_max = 0;
    std::size_t k_max = 0;
    Tensor obs_t;                     // [B, C, N_max]
    Tensor obs_v;                     // [B, C, N_max]
    std::vector<std::uint8_t> obs_mask; // B*C*N_max
    Tensor q_t;                       // [B, C, K_max]
    std::vector<std::uint8_t> q_mask; // B*C*K_max
    Tensor y;                         // [B, C, K_max]
};

// min_n / min_k force extra padding beyond the batch maxima (used by the
// padding-extension invariance tests).
BatchedImts make_batch(std::span<const ImtsInstance> instances, std::size_t channel_count,
                       std::size_t min_n = 0, std::size_t min_k = 0);

struct SparsityStats {
    double density = 0.0;   // observed fraction of (timestamp, channel) slots
    double sparsity = 0.0;  // 1 - density
    std::size_t distinct_timestamps = 0; // across the dataset
    std::size_t observation_count = 0;
};

// Timestamp slots are counted against the distinct observation times of the
// whole dataset (the given observation steps of the shared timeline).
SparsityStats sparsity(const Dataset& dataset);

struct DatasetSplit {
    Dataset train;
    Dataset validation;
    Dataset test;
};

// Seeded shuffle, then 60/20/20 by instance.
DatasetSplit split_dataset(const Dataset& dataset, std::uint64_t seed);

} // namespace imts
