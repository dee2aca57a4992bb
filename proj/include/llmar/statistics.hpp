#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "llmar/dataset.hpp"
#include "llmar/policy.hpp"

namespace llmar {

// One transaction: the set of binarized items present for a record, e.g.
// {"career_growth", "not_vc_experience", "success"}.
using Transaction = std::set<std::string>;

// Per-feature binarization cutoffs (training medians of normalized values).
using FeatureThresholds = std::map<std::string, double>;

FeatureThresholds binarize_thresholds(const Records& records);

// Maps each record to items: feature name when the value is strictly above
// its threshold, "not_" + name otherwise, plus a "success"/"failure" item.
std::vector<Transaction> binarize(const Records& records, const FeatureThresholds& thresholds);
std::vector<Transaction> binarize(const Records& records);

bool literal_matches(const FounderRecord& record, const Literal& literal,
                     const FeatureThresholds& thresholds);
bool body_matches(const FounderRecord& record, const std::vector<Literal>& body,
                  const FeatureThresholds& thresholds);

struct MinedRule {
    std::vector<Literal> antecedent;  // sorted by token
    Direction consequent = Direction::success;
    double support = 0.0;     // frequency of antecedent plus consequent
    double confidence = 0.0;  // support / frequency of antecedent alone
    std::size_t count = 0;    // transactions containing antecedent plus consequent

    bool operator==(const MinedRule&) const = default;
};

struct MiningParams {
    double min_support = 0.02;
    double min_confidence = 0.3;
    int max_len = 3;  // antecedent size cap, at most 4
};

// Level-wise frequent itemset mining restricted to rules whose consequent is
// an outcome item. Output is sorted by confidence desc, support desc, then
// antecedent tokens, with success before failure on full ties.
std::vector<MinedRule> mine_rules(const std::vector<Transaction>& transactions,
                                  const MiningParams& params = {});

struct HintSelection {
    std::vector<MinedRule> success_hints;
    std::vector<MinedRule> failure_hints;
};

// Top success rules plus top failure rules (the latter re-filtered by their
// own confidence floor) from an already sorted mine_rules result.
HintSelection select_hints(const std::vector<MinedRule>& mined, int success_k = 3,
                           int failure_k = 1, double failure_min_confidence = 0.9);

struct CalibrationParams {
    std::size_t sample_size = 1000;
    std::size_t min_samples = 20;
    std::uint64_t seed = 0;
};

struct RuleCalibration {
    Direction direction = Direction::success;
    std::vector<Literal> body;
    double original_probability = 0.0;
    double probability = 0.0;  // empirical when calibrated, original otherwise
    std::size_t matched = 0;
    std::size_t matched_direction = 0;
    Calibration status = Calibration::uncalibrated;
};

struct CalibrationReport {
    std::vector<RuleCalibration> entries;
    std::size_t sample_size = 0;
    std::uint64_t seed = 0;

    nlohmann::json to_json() const;
    static CalibrationReport from_json(const nlohmann::json& j);
};

// Replaces each rule probability with the empirical proportion of the rule's
// direction among body-matching records in a fresh seeded sample of at most
// params.sample_size training records. Rules matching fewer than
// params.min_samples records keep their probability and are flagged
// insufficient_samples.
std::pair<Policy, CalibrationReport> calibrate_policy(const Policy& policy,
                                                      const Records& training,
                                                      const CalibrationParams& params = {});

struct PruneResult {
    Policy policy;
    std::vector<RuleCalibration> removed;
    bool emptied = false;  // pruning removed every rule
};

// Drops success rules with calibrated probability below 0.1, failure rules
// below 0.9 (both strict), and every insufficient_samples rule. The report
// must cover all rules of the policy.
PruneResult prune_policy(const Policy& policy, const CalibrationReport& report);

struct RescaleReport {
    struct Entry {
        Direction direction = Direction::success;
        std::vector<Literal> body;
        double original = 0.0;
        double rescaled = 0.0;
    };
    std::vector<Entry> entries;

    nlohmann::json to_json() const;
};

// Affine per-direction map of rule probabilities onto [0.1, 0.9]; a single
// rule or an all-equal direction maps to 0.5. Originals stay in the report.
std::pair<Policy, RescaleReport> rescale_probabilities(const Policy& policy);

}  // namespace llmar
