#include "llmar/evaluation.hpp"

#include <cmath>
#include <thread>

#include "llmar/errors.hpp"
#include "llmar/rng.hpp"

namespace llmar {

bool classify(const InferenceResult& scores, const Thresholds& thresholds) {
    return scores.p_success > thresholds.theta_success &&
           scores.p_failure < thresholds.theta_failure;
}

double f_beta_score(double beta, double precision, double recall) {
    if (beta <= 0.0) throw ConfigError("beta must be positive");
    if (precision < 0.0 || recall < 0.0) {
        throw ValidationError("precision and recall must be nonnegative");
    }
    const double b2 = beta * beta;
    const double denominator = b2 * precision + recall;
    if (denominator == 0.0) return 0.0;
    return (1.0 + b2) * precision * recall / denominator;
}

nlohmann::json MetricsReport::to_json() const {
    return {{"tp", tp},
            {"fp", fp},
            {"fn", fn},
            {"tn", tn},
            {"precision", precision},
            {"recall", recall},
            {"f_beta", f_beta},
            {"beta", beta},
            {"theta_success", thresholds.theta_success},
            {"theta_failure", thresholds.theta_failure},
            {"partition", partition_id}};
}

std::vector<ScoredRecord> score_records(const Policy& policy, const Records& normalized,
                                        const InferenceConfig& config, int jobs) {
    validate_policy(policy);
    std::vector<ScoredRecord> scores(normalized.size());
    auto score_range = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const FounderRecord& record = normalized[i];
            InferenceConfig per_record = config;
            // Seed per record id so a record's sampled score does not depend
            // on which subset it is evaluated in.
            per_record.seed = seed_for(config.seed, record.id);
            InferenceResult result;
            try {
                result = query_founder(policy, trait_probabilities(record).probabilities,
                                       per_record);
            } catch (const MissingFactError& e) {
                throw DataError("record '" + record.id + "': " + e.what());
            }
            scores[i] = ScoredRecord{record.id, result.p_success, result.p_failure,
                                     record.label == Label::success};
        }
    };
    const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(normalized.size())));
    if (workers == 1) {
        score_range(0, normalized.size());
    } else {
        std::vector<std::thread> threads;
        const std::size_t chunk = (normalized.size() + workers - 1) / workers;
        std::vector<std::exception_ptr> failures(workers);
        for (int w = 0; w < workers; ++w) {
            const std::size_t begin = w * chunk;
            const std::size_t end = std::min(normalized.size(), begin + chunk);
            threads.emplace_back([&, begin, end, w] {
                try {
                    score_range(begin, end);
                } catch (...) {
                    failures[w] = std::current_exception();
                }
            });
        }
        for (auto& t : threads) t.join();
        for (const auto& failure : failures) {
            if (failure) std::rethrow_exception(failure);
        }
    }
    return scores;
}

MetricsReport metrics_from_scores(const std::vector<ScoredRecord>& scores,
                                  const Thresholds& thresholds, double beta) {
    MetricsReport report;
    report.beta = beta;
    report.thresholds = thresholds;
    for (const ScoredRecord& score : scores) {
        const bool predicted =
            classify(InferenceResult{score.p_success, score.p_failure}, thresholds);
        if (predicted && score.positive_label) {
            ++report.tp;
        } else if (predicted) {
            ++report.fp;
        } else if (score.positive_label) {
            ++report.fn;
        } else {
            ++report.tn;
        }
    }
    report.precision =
        report.tp + report.fp > 0
            ? static_cast<double>(report.tp) / static_cast<double>(report.tp + report.fp)
            : 0.0;
    report.recall =
        report.tp + report.fn > 0
            ? static_cast<double>(report.tp) / static_cast<double>(report.tp + report.fn)
            : 0.0;
    report.f_beta = f_beta_score(beta, report.precision, report.recall);
    return report;
}

MetricsReport evaluate_policy(const Policy& policy, const Records& normalized,
                              const Thresholds& thresholds, double beta,
                              const InferenceConfig& config, int jobs) {
    return metrics_from_scores(score_records(policy, normalized, config, jobs), thresholds, beta);
}

std::pair<Thresholds, MetricsReport> threshold_search_scores(
    const std::vector<ScoredRecord>& scores, double beta, double grid_step) {
    if (scores.empty()) throw DataError("cannot search thresholds over an empty score set");
    if (!(grid_step > 0.0 && grid_step <= 1.0)) {
        throw ConfigError("grid step must be inside (0, 1]");
    }
    const long long steps = std::llround(1.0 / grid_step);
    if (std::abs(steps * grid_step - 1.0) > 1e-9) {
        throw ConfigError("grid step must divide 1 evenly");
    }

    const std::size_t positives = [&] {
        std::size_t n = 0;
        for (const ScoredRecord& s : scores) n += s.positive_label;
        return n;
    }();

    Thresholds best;
    double best_f = -1.0;
    for (long long i = 0; i <= steps; ++i) {
        const double theta_success = static_cast<double>(i) / static_cast<double>(steps);
        for (long long j = 0; j <= steps; ++j) {
            const double theta_failure = static_cast<double>(j) / static_cast<double>(steps);
            std::size_t tp = 0;
            std::size_t fp = 0;
            for (const ScoredRecord& s : scores) {
                const bool predicted =
                    s.p_success > theta_success && s.p_failure < theta_failure;
                if (!predicted) continue;
                (s.positive_label ? tp : fp) += 1;
            }
            const double precision =
                tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
            const double recall =
                positives > 0 ? static_cast<double>(tp) / static_cast<double>(positives) : 0.0;
            const double f = f_beta_score(beta, precision, recall);
            const bool better =
                f > best_f ||
                (f == best_f && (theta_success > best.theta_success ||
                                 (theta_success == best.theta_success &&
                                  theta_failure < best.theta_failure)));
            if (better) {
                best_f = f;
                best = Thresholds{theta_success, theta_failure};
            }
        }
    }
    return {best, metrics_from_scores(scores, best, beta)};
}

std::pair<Thresholds, MetricsReport> threshold_search(const Policy& policy,
                                                      const Records& normalized, double beta,
                                                      double grid_step,
                                                      const InferenceConfig& config, int jobs) {
    return threshold_search_scores(score_records(policy, normalized, config, jobs), beta,
                                   grid_step);
}

}  // namespace llmar
