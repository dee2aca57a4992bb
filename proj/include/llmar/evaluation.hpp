#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "llmar/dataset.hpp"
#include "llmar/inference.hpp"
#include "llmar/policy.hpp"

namespace llmar {

struct Thresholds {
    double theta_success = 0.5;
    double theta_failure = 0.5;

    bool operator==(const Thresholds&) const = default;
};

// Positive prediction needs a high success score and a low failure score,
// both strictly.
bool classify(const InferenceResult& scores, const Thresholds& thresholds);

// (1 + beta^2) * P * R / (beta^2 * P + R), 0 when the denominator is 0.
// Scale-invariant, so percent inputs yield percent outputs.
double f_beta_score(double beta, double precision, double recall);

struct MetricsReport {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
    std::size_t tn = 0;
    double precision = 0.0;
    double recall = 0.0;
    double f_beta = 0.0;
    double beta = 0.25;
    Thresholds thresholds;
    std::string partition_id;

    nlohmann::json to_json() const;
};

// Cached per-record outcome scores; thresholds can then be swept without
// rerunning inference.
struct ScoredRecord {
    std::string id;
    double p_success = 0.0;
    double p_failure = 0.0;
    bool positive_label = false;
};

// Scores every record via query_founder on its trait profile. Records must
// already be normalized. `jobs` bounds worker threads; results are
// independent of the worker count.
std::vector<ScoredRecord> score_records(const Policy& policy, const Records& normalized,
                                        const InferenceConfig& config, int jobs = 1);

MetricsReport metrics_from_scores(const std::vector<ScoredRecord>& scores,
                                  const Thresholds& thresholds, double beta);

MetricsReport evaluate_policy(const Policy& policy, const Records& normalized,
                              const Thresholds& thresholds, double beta,
                              const InferenceConfig& config = {}, int jobs = 1);

// Exhaustive sweep over the (theta_success, theta_failure) grid with the
// given step (which must divide 1 evenly; 0.02 yields 51x51 pairs). Ties on
// F_beta prefer the larger theta_success, then the smaller theta_failure.
std::pair<Thresholds, MetricsReport> threshold_search_scores(
    const std::vector<ScoredRecord>& scores, double beta, double grid_step);

std::pair<Thresholds, MetricsReport> threshold_search(const Policy& policy,
                                                      const Records& normalized, double beta,
                                                      double grid_step,
                                                      const InferenceConfig& config = {},
                                                      int jobs = 1);

}  // namespace llmar
