#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "llmar/policy.hpp"

namespace llmar {

enum class Label { failure = 0, success = 1 };

struct FounderRecord {
    std::string id;
    std::map<std::string, double> features;
    Label label = Label::failure;

    bool operator==(const FounderRecord&) const = default;
};

using Records = std::vector<FounderRecord>;

struct Dataset {
    std::vector<std::string> vocabulary;  // feature columns in file order
    Records records;
};

// The 52 founder features used when no explicit vocabulary is configured.
const std::vector<std::string>& default_vocabulary();

// CSV layout: header `id,label,<feature...>`, label cells 0 or 1, numeric
// feature cells. Schema violations name the offending column or row.
Dataset load_dataset(const std::filesystem::path& path);

// Same, but the feature columns must match `expected` as a set.
Dataset load_dataset(const std::filesystem::path& path, const std::vector<std::string>& expected);

void write_dataset(const Dataset& dataset, const std::filesystem::path& path);

// Per-feature [min, max] ranges captured from a training split.
struct NormalizationTable {
    std::map<std::string, std::pair<double, double>> ranges;

    bool operator==(const NormalizationTable&) const = default;

    nlohmann::json to_json() const;
    static NormalizationTable from_json(const nlohmann::json& j);
};

// Min-max normalization to [0, 1] using statistics from `stats_from` only;
// values outside the training range clip, constant features map to 0.5.
std::pair<Records, NormalizationTable> normalize_features(const Records& records,
                                                          const Records& stats_from);

Records apply_normalization(const Records& records, const NormalizationTable& table);

// Normalized feature values reinterpreted as per-atom fact probabilities,
// clipped to [0.05, 0.95] so no trait is treated as perfectly certain.
struct TraitProfile {
    std::map<std::string, double> probabilities;
};

TraitProfile trait_probabilities(const FounderRecord& normalized);

// One train/validation/test role assignment over 4 folds.
struct PartitionSpec {
    std::array<int, 2> train_folds{0, 1};
    int validation_fold = 2;
    int test_fold = 3;

    bool operator==(const PartitionSpec&) const = default;

    std::string id() const;
};

// All 12 role assignments: 6 train pairs, each remaining pair split both
// ways between validation and test. Deterministic order.
std::vector<PartitionSpec> enumerate_partitions(int n_folds = 4);

// Stratified fold assignment (per-label round robin after a seeded shuffle);
// returns a fold index per record position.
std::vector<int> assign_folds(const Records& records, int n_folds, std::uint64_t seed);

// Seeded sampling without replacement into fixed-composition batches:
// round(batch_size * prevalence) positives each, the rest negatives.
std::vector<Records> sample_batches(const Records& records, int batch_size, double prevalence,
                                    std::uint64_t seed);

// Discrete marginal distribution for one synthetic feature.
struct FeatureMarginal {
    std::string name;
    std::vector<double> levels;   // strictly increasing
    std::vector<double> weights;  // same length, nonnegative, positive sum
};

// Ground-truth rule wired into the generator's label mechanism.
struct PlantedRule {
    Direction direction = Direction::success;
    std::vector<Literal> body;
    double probability = 0.0;
};

struct GeneratorConfig {
    int count = 6000;
    double prevalence = 0.10;
    // Probability that a success cause fires regardless of planted rules.
    double base_rate = 0.0;
    std::vector<FeatureMarginal> features;
    std::vector<PlantedRule> planted_rules;

    nlohmann::json to_json() const;
    static GeneratorConfig from_json(const nlohmann::json& j);
};

struct SyntheticData {
    Dataset data;
    nlohmann::json metadata;
};

// Samples feature vectors from the configured marginals and labels them with
// a noisy-OR of base rate and matching planted success rules, damped by
// matching planted failure rules. The target prevalence is hit exactly by
// per-label quota rejection; an exhausted attempt budget raises DataError.
SyntheticData generate_synthetic(const GeneratorConfig& config, std::uint64_t seed);

// Deterministic natural-language founder profile, one phrase per feature in
// sorted feature order. Never includes the record id.
std::string render_profile(const FounderRecord& record);

}  // namespace llmar
