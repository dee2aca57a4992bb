#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "llmar/dataset.hpp"
#include "llmar/evaluation.hpp"
#include "llmar/training.hpp"

namespace llmar {

struct PartitionOutcome {
    PartitionSpec spec;
    bool completed = false;
    std::string error;
    Policy policy;
    Thresholds thresholds;
    MetricsReport validation;  // selection-subset metrics at the chosen thresholds
    MetricsReport test;
};

struct MetricsAverage {
    double precision = 0.0;
    double recall = 0.0;
    double f_beta = 0.0;
};

struct CrossValReport {
    std::vector<PartitionOutcome> partitions;
    MetricsAverage validation_average;
    MetricsAverage test_average;
    bool complete = false;  // all partitions finished

    nlohmann::json to_json() const;
    // Per-partition validation/test precision, recall, and F rows plus the
    // average row, in percent.
    std::string table_text() const;
};

using ProviderFactory =
    std::function<std::unique_ptr<CompletionProvider>(std::uint64_t partition_seed)>;

// Stratified 4-fold assignment, then one full training run per role
// assignment (12 total): train on two folds, checkpoint/select on the
// validation fold, and report held-out metrics on the test fold, which never
// reaches training. Partition role disjointness is asserted on record ids.
// `jobs` bounds concurrently trained partitions; results do not depend on it.
CrossValReport cross_validate(const Dataset& dataset, const TrainingConfig& config,
                              const std::filesystem::path& out_dir,
                              const ProviderFactory& provider_factory, int jobs = 1);

}  // namespace llmar
