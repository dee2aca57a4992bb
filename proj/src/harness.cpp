#include "llmar/harness.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <thread>

#include "llmar/errors.hpp"
#include "llmar/rng.hpp"

namespace llmar {

namespace {

nlohmann::json metrics_row(const MetricsReport& metrics) {
    return {{"precision", metrics.precision},
            {"recall", metrics.recall},
            {"f_beta", metrics.f_beta},
            {"tp", metrics.tp},
            {"fp", metrics.fp},
            {"fn", metrics.fn},
            {"tn", metrics.tn},
            {"theta_success", metrics.thresholds.theta_success},
            {"theta_failure", metrics.thresholds.theta_failure}};
}

void assert_disjoint_roles(const Records& train, const Records& validation, const Records& test) {
    std::set<std::string> seen;
    for (const Records* role : {&train, &validation, &test}) {
        for (const FounderRecord& record : *role) {
            if (!seen.insert(record.id).second) {
                throw Error("internal: record '" + record.id +
                            "' appears in more than one partition role");
            }
        }
    }
}

}  // namespace

nlohmann::json CrossValReport::to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (const PartitionOutcome& outcome : partitions) {
        nlohmann::json row = {{"partition", outcome.spec.id()},
                              {"completed", outcome.completed}};
        if (outcome.completed) {
            row["validation"] = metrics_row(outcome.validation);
            row["test"] = metrics_row(outcome.test);
            row["policy"] = serialize_policy(outcome.policy);
        } else {
            row["error"] = outcome.error;
        }
        rows.push_back(std::move(row));
    }
    auto average = [](const MetricsAverage& avg) {
        return nlohmann::json{
            {"precision", avg.precision}, {"recall", avg.recall}, {"f_beta", avg.f_beta}};
    };
    return {{"partitions", rows},
            {"validation_average", average(validation_average)},
            {"test_average", average(test_average)},
            {"complete", complete}};
}

std::string CrossValReport::table_text() const {
    std::string out;
    char line[160];
    std::snprintf(line, sizeof(line), "%-10s %29s   %29s\n", "", "Validation", "Test");
    out += line;
    std::snprintf(line, sizeof(line), "%-10s %9s %9s %9s   %9s %9s %9s\n", "Partition",
                  "Precision", "Recall", "F-score", "Precision", "Recall", "F-score");
    out += line;
    for (const PartitionOutcome& outcome : partitions) {
        if (!outcome.completed) {
            std::snprintf(line, sizeof(line), "%-10s failed: %s\n", outcome.spec.id().c_str(),
                          outcome.error.c_str());
            out += line;
            continue;
        }
        std::snprintf(line, sizeof(line), "%-10s %9.1f %9.1f %9.1f   %9.1f %9.1f %9.1f\n",
                      outcome.spec.id().c_str(), 100.0 * outcome.validation.precision,
                      100.0 * outcome.validation.recall, 100.0 * outcome.validation.f_beta,
                      100.0 * outcome.test.precision, 100.0 * outcome.test.recall,
                      100.0 * outcome.test.f_beta);
        out += line;
    }
    std::snprintf(line, sizeof(line), "%-10s %9.1f %9.1f %9.1f   %9.1f %9.1f %9.1f\n", "Average",
                  100.0 * validation_average.precision, 100.0 * validation_average.recall,
                  100.0 * validation_average.f_beta, 100.0 * test_average.precision,
                  100.0 * test_average.recall, 100.0 * test_average.f_beta);
    out += line;
    return out;
}

CrossValReport cross_validate(const Dataset& dataset, const TrainingConfig& config,
                              const std::filesystem::path& out_dir,
                              const ProviderFactory& provider_factory, int jobs) {
    if (dataset.records.empty()) throw DataError("dataset is empty");
    if (!provider_factory) throw ConfigError("provider factory is required");

    const std::vector<int> folds =
        assign_folds(dataset.records, 4, seed_for(config.seed, "folds"));
    const std::vector<PartitionSpec> partitions = enumerate_partitions(4);
    std::filesystem::create_directories(out_dir / "partitions");

    CrossValReport report;
    report.partitions.resize(partitions.size());

    auto run_partition = [&](std::size_t index) {
        const PartitionSpec& spec = partitions[index];
        PartitionOutcome& outcome = report.partitions[index];
        outcome.spec = spec;
        try {
            Records train_records;
            Records validation_records;
            Records test_records;
            for (std::size_t i = 0; i < dataset.records.size(); ++i) {
                const int fold = folds[i];
                if (fold == spec.train_folds[0] || fold == spec.train_folds[1]) {
                    train_records.push_back(dataset.records[i]);
                } else if (fold == spec.validation_fold) {
                    validation_records.push_back(dataset.records[i]);
                } else if (fold == spec.test_fold) {
                    test_records.push_back(dataset.records[i]);
                }
            }
            assert_disjoint_roles(train_records, validation_records, test_records);

            TrainingConfig partition_config = config;
            partition_config.seed = seed_for(config.seed, "partition", index);
            const std::unique_ptr<CompletionProvider> provider =
                provider_factory(partition_config.seed);
            if (!provider) throw ConfigError("provider factory returned null");

            const RunArtifact artifact =
                train(train_records, validation_records, partition_config, *provider,
                      out_dir / "partitions" / spec.id());

            outcome.policy = artifact.final_policy;
            outcome.thresholds = artifact.thresholds;
            outcome.validation = artifact.selection_metrics;
            outcome.validation.partition_id = spec.id();

            const Records test_normalized =
                apply_normalization(test_records, artifact.normalization);
            InferenceConfig inference = partition_config.inference;
            inference.seed = seed_for(partition_config.seed, "test");
            Policy scored = config.rescale ? rescale_probabilities(artifact.final_policy).first
                                           : artifact.final_policy;
            outcome.test = evaluate_policy(scored, test_normalized, artifact.thresholds,
                                           config.beta, inference, config.jobs);
            outcome.test.partition_id = spec.id();
            outcome.completed = true;
        } catch (const std::exception& e) {
            outcome.completed = false;
            outcome.error = e.what();
        }
    };

    const int workers =
        std::max(1, std::min<int>(jobs, static_cast<int>(partitions.size())));
    if (workers == 1) {
        for (std::size_t i = 0; i < partitions.size(); ++i) run_partition(i);
    } else {
        std::vector<std::thread> threads;
        for (int w = 0; w < workers; ++w) {
            threads.emplace_back([&, w] {
                for (std::size_t i = w; i < partitions.size(); i += workers) {
                    run_partition(i);
                }
            });
        }
        for (auto& t : threads) t.join();
    }

    std::size_t completed = 0;
    for (const PartitionOutcome& outcome : report.partitions) {
        if (!outcome.completed) continue;
        ++completed;
        report.validation_average.precision += outcome.validation.precision;
        report.validation_average.recall += outcome.validation.recall;
        report.validation_average.f_beta += outcome.validation.f_beta;
        report.test_average.precision += outcome.test.precision;
        report.test_average.recall += outcome.test.recall;
        report.test_average.f_beta += outcome.test.f_beta;
    }
    if (completed > 0) {
        const double n = static_cast<double>(completed);
        report.validation_average.precision /= n;
        report.validation_average.recall /= n;
        report.validation_average.f_beta /= n;
        report.test_average.precision /= n;
        report.test_average.recall /= n;
        report.test_average.f_beta /= n;
    }
    report.complete = completed == report.partitions.size();

    std::ofstream json_out(out_dir / "report.json", std::ios::binary);
    if (!json_out) throw DataError("cannot write cross-validation report");
    json_out << report.to_json().dump(2) << "\n";
    std::ofstream text_out(out_dir / "report.txt", std::ios::binary);
    text_out << report.table_text();
    return report;
}

}  // namespace llmar
