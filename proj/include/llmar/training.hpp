#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "llmar/dataset.hpp"
#include "llmar/evaluation.hpp"
#include "llmar/llm.hpp"
#include "llmar/statistics.hpp"

namespace llmar {

struct TrainingConfig {
    int max_iterations = 10;
    int checkpoint_every = 5;  // also the checkpoint review window size
    int candidate_count = 4;
    int batch_size = 50;
    double batch_prevalence = 0.10;
    CalibrationParams calibration;
    MiningParams mining;
    int hint_success_count = 3;
    int hint_failure_count = 1;
    double hint_failure_confidence = 0.9;
    double beta = 0.25;
    double grid_step = 0.02;
    // Spread rule probabilities over [0.1, 0.9] before scoring records.
    bool rescale = true;
    InferenceConfig inference;
    std::uint64_t seed = 42;
    int jobs = 1;
    bool log_exchanges = true;

    nlohmann::json to_json() const;
    static TrainingConfig from_json(const nlohmann::json& j);
};

struct HistoryEntry {
    int iteration = 0;
    Policy policy;  // the policy this iteration ended with
    CalibrationReport calibration;
    std::optional<double> checkpoint_f;
};

struct TrainingState {
    int iteration = 0;
    Policy current;
    std::vector<HistoryEntry> history;
    TrainingConfig config;
};

// Writes numbered prompt/response exchanges under a run directory.
class RunLogger {
public:
    RunLogger(std::filesystem::path run_dir, bool enabled);

    void log(const Prompt& prompt, const std::string& response);

private:
    std::filesystem::path run_dir_;
    bool enabled_;
    int counter_ = 0;
};

// Union of both policies' rules per direction; `response` wins on duplicate
// bodies. Order: current rules first (updated in place), then new ones.
Policy merge_policies(const Policy& current, const Policy& response);

// One training iteration: insight prompts for every batch founder, one
// summarize call merged into the current policy, calibration against the
// training records, hint mining on a seeded training sample, and one
// reflection call that yields the iteration's policy (falling back to the
// calibrated policy when the response has no parseable block). Returns the
// advanced state; on error the input state is unchanged.
TrainingState run_iteration(const TrainingState& state, const Records& batch,
                            const Records& training, const std::vector<std::string>& vocabulary,
                            CompletionProvider& provider, RunLogger* logger = nullptr);

struct CheckpointReview {
    std::vector<std::pair<int, double>> window;  // iteration, f_beta
    Policy chosen;
    std::string response;
};

// Scores the trailing window of per-iteration policies on the checkpoint
// subset and asks the provider which to carry forward; an unparseable answer
// falls back to the best-scoring window policy (ties toward the later
// iteration). Only legal when the iteration count is a checkpoint multiple.
std::pair<TrainingState, CheckpointReview> periodic_evaluation(
    const TrainingState& state, const Records& eval_records,
    const std::vector<std::string>& vocabulary, CompletionProvider& provider,
    RunLogger* logger = nullptr);

// Evenly spaced candidate iterations: round-half-even of k*n/count for
// k = 1..count, clamped to [1, n], deduplicated. (10, 4) -> {2, 5, 8, 10}.
std::vector<int> candidate_iterations(int n_iterations, int count);

struct SelectionResult {
    int iteration = 0;
    Policy policy;
    Thresholds thresholds;
    MetricsReport metrics;
    std::vector<std::pair<int, double>> candidate_scores;
    bool degenerate = false;  // every candidate scored zero

    nlohmann::json to_json() const;
};

// Runs a threshold search per candidate on the selection subset and keeps
// the best F_beta, ties toward the later iteration.
SelectionResult select_final_policy(const std::vector<HistoryEntry>& history,
                                    const std::vector<int>& candidates,
                                    const Records& selection_records,
                                    const TrainingConfig& config);

struct RunArtifact {
    Policy final_policy;
    Thresholds thresholds;
    MetricsReport selection_metrics;
    SelectionResult selection;
    std::vector<HistoryEntry> history;
    NormalizationTable normalization;
    std::filesystem::path run_dir;
};

// Full training run over pre-split records: normalizes from the training
// split, iterates batches, checkpoints every checkpoint_every iterations on
// half of the validation split, and selects the final policy on the other
// half. Persists per-iteration policies, calibration reports, checkpoint
// reviews, prompt/response logs, and the final policy with its thresholds
// under run_dir. Test records must never be passed in.
RunArtifact train(const Records& training, const Records& validation,
                  const TrainingConfig& config, CompletionProvider& provider,
                  const std::filesystem::path& run_dir);

}  // namespace llmar
