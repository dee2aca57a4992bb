#include "llmar/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <thread>

#include "llmar/errors.hpp"
#include "llmar/rng.hpp"

namespace llmar {

namespace {

std::string padded(int value, int width = 3) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%0*d", width, value);
    return buf;
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write file: " + path.string());
    out << content;
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
    write_text_file(path, j.dump(2) + "\n");
}

int round_half_even(double x) {
    const double floor_part = std::floor(x);
    const double fraction = x - floor_part;
    if (fraction > 0.5) return static_cast<int>(floor_part) + 1;
    if (fraction < 0.5) return static_cast<int>(floor_part);
    const int low = static_cast<int>(floor_part);
    return low % 2 == 0 ? low : low + 1;
}

// Completes one prompt per item, at most `jobs` in flight, results in input
// order regardless of scheduling.
std::vector<std::string> complete_all(CompletionProvider& provider,
                                      const std::vector<Prompt>& prompts, int jobs) {
    std::vector<std::string> responses(prompts.size());
    const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(prompts.size())));
    if (workers == 1) {
        for (std::size_t i = 0; i < prompts.size(); ++i) {
            responses[i] = provider.complete(prompts[i]);
        }
        return responses;
    }
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> failures(workers);
    const std::size_t chunk = (prompts.size() + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
        const std::size_t begin = w * chunk;
        const std::size_t end = std::min(prompts.size(), begin + chunk);
        threads.emplace_back([&, begin, end, w] {
            try {
                for (std::size_t i = begin; i < end; ++i) {
                    responses[i] = provider.complete(prompts[i]);
                }
            } catch (...) {
                failures[w] = std::current_exception();
            }
        });
    }
    for (auto& t : threads) t.join();
    for (const auto& failure : failures) {
        if (failure) std::rethrow_exception(failure);
    }
    return responses;
}

Records seeded_sample(const Records& records, std::size_t sample_size, std::uint64_t seed) {
    std::vector<std::size_t> indices(records.size());
    std::iota(indices.begin(), indices.end(), 0);
    std::mt19937_64 rng(seed);
    shuffle_seeded(indices, rng);
    indices.resize(std::min(sample_size, indices.size()));
    Records sample;
    sample.reserve(indices.size());
    for (std::size_t idx : indices) sample.push_back(records[idx]);
    return sample;
}

Policy evaluation_form(const Policy& policy, const TrainingConfig& config) {
    return config.rescale ? rescale_probabilities(policy).first : policy;
}

}  // namespace

nlohmann::json TrainingConfig::to_json() const {
    return {{"max_iterations", max_iterations},
            {"checkpoint_every", checkpoint_every},
            {"candidate_count", candidate_count},
            {"batch_size", batch_size},
            {"batch_prevalence", batch_prevalence},
            {"calibration",
             {{"sample_size", calibration.sample_size}, {"min_samples", calibration.min_samples}}},
            {"mining",
             {{"min_support", mining.min_support},
              {"min_confidence", mining.min_confidence},
              {"max_len", mining.max_len}}},
            {"hint_success_count", hint_success_count},
            {"hint_failure_count", hint_failure_count},
            {"hint_failure_confidence", hint_failure_confidence},
            {"beta", beta},
            {"grid_step", grid_step},
            {"rescale", rescale},
            {"inference",
             {{"exact_limit", inference.exact_limit}, {"sample_count", inference.sample_count}}},
            {"seed", seed},
            {"jobs", jobs},
            {"log_exchanges", log_exchanges}};
}

TrainingConfig TrainingConfig::from_json(const nlohmann::json& j) {
    TrainingConfig config;
    try {
        config.max_iterations = j.value("max_iterations", config.max_iterations);
        config.checkpoint_every = j.value("checkpoint_every", config.checkpoint_every);
        config.candidate_count = j.value("candidate_count", config.candidate_count);
        config.batch_size = j.value("batch_size", config.batch_size);
        config.batch_prevalence = j.value("batch_prevalence", config.batch_prevalence);
        if (j.contains("calibration")) {
            config.calibration.sample_size =
                j["calibration"].value("sample_size", config.calibration.sample_size);
            config.calibration.min_samples =
                j["calibration"].value("min_samples", config.calibration.min_samples);
        }
        if (j.contains("mining")) {
            config.mining.min_support = j["mining"].value("min_support", config.mining.min_support);
            config.mining.min_confidence =
                j["mining"].value("min_confidence", config.mining.min_confidence);
            config.mining.max_len = j["mining"].value("max_len", config.mining.max_len);
        }
        config.hint_success_count = j.value("hint_success_count", config.hint_success_count);
        config.hint_failure_count = j.value("hint_failure_count", config.hint_failure_count);
        config.hint_failure_confidence =
            j.value("hint_failure_confidence", config.hint_failure_confidence);
        config.beta = j.value("beta", config.beta);
        config.grid_step = j.value("grid_step", config.grid_step);
        config.rescale = j.value("rescale", config.rescale);
        if (j.contains("inference")) {
            config.inference.exact_limit =
                j["inference"].value("exact_limit", config.inference.exact_limit);
            config.inference.sample_count =
                j["inference"].value("sample_count", config.inference.sample_count);
        }
        config.seed = j.value("seed", config.seed);
        config.jobs = j.value("jobs", config.jobs);
        config.log_exchanges = j.value("log_exchanges", config.log_exchanges);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("invalid training config: ") + e.what());
    }
    return config;
}

RunLogger::RunLogger(std::filesystem::path run_dir, bool enabled)
    : run_dir_(std::move(run_dir)), enabled_(enabled) {
    if (enabled_) {
        std::filesystem::create_directories(run_dir_ / "prompts");
        std::filesystem::create_directories(run_dir_ / "responses");
    }
}

void RunLogger::log(const Prompt& prompt, const std::string& response) {
    if (!enabled_) return;
    const std::string name = padded(++counter_, 4) + "_" + prompt_type_name(prompt.kind) + ".txt";
    write_text_file(run_dir_ / "prompts" / name, prompt.rendered);
    write_text_file(run_dir_ / "responses" / name, response);
}

Policy merge_policies(const Policy& current, const Policy& response) {
    Policy merged;
    merged.id = current.id;
    merged.iteration = current.iteration;
    auto merge_section = [](const std::vector<Rule>& base, const std::vector<Rule>& incoming) {
        std::vector<Rule> out = base;
        std::map<std::string, std::size_t> positions;
        for (std::size_t i = 0; i < out.size(); ++i) positions[body_key(out[i].body)] = i;
        for (const Rule& rule : incoming) {
            auto it = positions.find(body_key(rule.body));
            if (it == positions.end()) {
                positions[body_key(rule.body)] = out.size();
                out.push_back(rule);
            } else {
                out[it->second] = rule;
            }
        }
        return out;
    };
    merged.success_rules = merge_section(current.success_rules, response.success_rules);
    merged.failure_rules = merge_section(current.failure_rules, response.failure_rules);
    return merged;
}

TrainingState run_iteration(const TrainingState& state, const Records& batch,
                            const Records& training, const std::vector<std::string>& vocabulary,
                            CompletionProvider& provider, RunLogger* logger) {
    if (batch.empty()) throw DataError("iteration batch is empty");
    if (training.empty()) throw DataError("training records are empty");
    const TrainingConfig& config = state.config;
    const int iteration = state.iteration + 1;
    const std::string batch_id = "iter" + padded(iteration);

    std::vector<Prompt> insight_prompts;
    insight_prompts.reserve(batch.size());
    for (const FounderRecord& record : batch) {
        insight_prompts.push_back(build_insight_prompt(record, iteration, batch_id));
    }
    const std::vector<std::string> insights =
        complete_all(provider, insight_prompts, config.jobs);
    if (logger) {
        for (std::size_t i = 0; i < insight_prompts.size(); ++i) {
            logger->log(insight_prompts[i], insights[i]);
        }
    }

    const FeatureThresholds thresholds = binarize_thresholds(training);

    // The summarize context carries patterns mined from the batch itself, the
    // same evidence the insight texts describe.
    ProviderContext summarize_context;
    {
        const HintSelection batch_hints =
            select_hints(mine_rules(binarize(batch, thresholds), config.mining),
                         config.hint_success_count, config.hint_failure_count,
                         config.hint_failure_confidence);
        summarize_context.success_hints = batch_hints.success_hints;
        summarize_context.failure_hints = batch_hints.failure_hints;
    }
    provider.set_context(summarize_context);
    const Prompt summary_prompt = build_summary_prompt(insights, vocabulary, iteration, batch_id);
    const std::string summary_response = provider.complete(summary_prompt);
    if (logger) logger->log(summary_prompt, summary_response);

    Policy candidate;
    try {
        candidate = parse_policy_response(summary_response, vocabulary).policy;
    } catch (const ExtractionError&) {
        // A rule-free summary contributes nothing this iteration.
    }
    const Policy merged = merge_policies(state.current, candidate);

    CalibrationParams calibration_params = config.calibration;
    calibration_params.seed = seed_for(config.seed, "calibration", iteration);
    auto [calibrated, report] = calibrate_policy(merged, training, calibration_params);

    const Records mining_sample = seeded_sample(training, config.calibration.sample_size,
                                                seed_for(config.seed, "mining", iteration));
    const HintSelection hints =
        select_hints(mine_rules(binarize(mining_sample, thresholds), config.mining),
                     config.hint_success_count, config.hint_failure_count,
                     config.hint_failure_confidence);

    ProviderContext reflect_context;
    reflect_context.calibrated_policy = calibrated;
    reflect_context.calibration = report;
    reflect_context.success_hints = hints.success_hints;
    reflect_context.failure_hints = hints.failure_hints;
    provider.set_context(reflect_context);
    const Prompt reflection_prompt =
        build_reflection_prompt(merged, calibrated, report, hints, iteration, batch_id);
    const std::string reflection_response = provider.complete(reflection_prompt);
    if (logger) logger->log(reflection_prompt, reflection_response);

    Policy revised;
    try {
        revised = parse_policy_response(reflection_response, vocabulary).policy;
    } catch (const ExtractionError&) {
        revised = calibrated;
    }
    revised.id = "it" + padded(iteration);
    revised.iteration = iteration;

    TrainingState next = state;
    next.iteration = iteration;
    next.current = revised;
    next.history.push_back(HistoryEntry{iteration, revised, std::move(report), std::nullopt});
    return next;
}

std::pair<TrainingState, CheckpointReview> periodic_evaluation(
    const TrainingState& state, const Records& eval_records,
    const std::vector<std::string>& vocabulary, CompletionProvider& provider,
    RunLogger* logger) {
    const TrainingConfig& config = state.config;
    if (state.iteration == 0 || state.iteration % config.checkpoint_every != 0) {
        throw ValidationError("periodic evaluation requires a checkpoint iteration, got " +
                              std::to_string(state.iteration));
    }
    if (eval_records.empty()) throw DataError("checkpoint evaluation records are empty");

    TrainingState next = state;
    const std::size_t window_size =
        std::min<std::size_t>(config.checkpoint_every, next.history.size());
    const std::size_t window_begin = next.history.size() - window_size;

    CheckpointReview review;
    std::vector<std::tuple<int, double, Policy>> window;
    for (std::size_t i = window_begin; i < next.history.size(); ++i) {
        HistoryEntry& entry = next.history[i];
        InferenceConfig inference = config.inference;
        inference.seed = seed_for(config.seed, "checkpoint", entry.iteration);
        const auto [thresholds, metrics] =
            threshold_search(evaluation_form(entry.policy, config), eval_records, config.beta,
                             config.grid_step, inference, config.jobs);
        entry.checkpoint_f = metrics.f_beta;
        review.window.emplace_back(entry.iteration, metrics.f_beta);
        window.emplace_back(entry.iteration, metrics.f_beta, entry.policy);
    }

    ProviderContext context;
    context.window = window;
    provider.set_context(context);
    const Prompt prompt = build_evaluation_prompt(window, state.iteration);
    review.response = provider.complete(prompt);
    if (logger) logger->log(prompt, review.response);

    try {
        review.chosen = parse_policy_response(review.response, vocabulary).policy;
    } catch (const ExtractionError&) {
        const auto* best = &window.front();
        for (const auto& entry : window) {
            if (std::get<1>(entry) >= std::get<1>(*best)) best = &entry;
        }
        review.chosen = std::get<2>(*best);
    }
    review.chosen.id = state.current.id;
    review.chosen.iteration = state.iteration;
    next.current = review.chosen;
    return {std::move(next), std::move(review)};
}

std::vector<int> candidate_iterations(int n_iterations, int count) {
    if (n_iterations < 1) throw ConfigError("iteration count must be positive");
    if (count < 1) throw ConfigError("candidate count must be positive");
    std::vector<int> candidates;
    for (int k = 1; k <= count; ++k) {
        const int iteration = std::clamp(
            round_half_even(static_cast<double>(k) * n_iterations / count), 1, n_iterations);
        if (candidates.empty() || candidates.back() != iteration) {
            candidates.push_back(iteration);
        }
    }
    return candidates;
}

nlohmann::json SelectionResult::to_json() const {
    nlohmann::json scores = nlohmann::json::array();
    for (const auto& [it, f] : candidate_scores) {
        scores.push_back({{"iteration", it}, {"f_beta", f}});
    }
    return {{"iteration", iteration},
            {"candidate_scores", scores},
            {"degenerate", degenerate},
            {"metrics", metrics.to_json()},
            {"policy", serialize_policy(policy)}};
}

SelectionResult select_final_policy(const std::vector<HistoryEntry>& history,
                                    const std::vector<int>& candidates,
                                    const Records& selection_records,
                                    const TrainingConfig& config) {
    if (candidates.empty()) throw ConfigError("candidate list is empty");
    if (selection_records.empty()) throw DataError("selection records are empty");
    std::vector<int> ordered = candidates;
    std::sort(ordered.begin(), ordered.end());
    ordered.erase(std::unique(ordered.begin(), ordered.end()), ordered.end());

    SelectionResult result;
    double best_f = -1.0;
    for (int iteration : ordered) {
        const auto entry =
            std::find_if(history.begin(), history.end(),
                         [&](const HistoryEntry& e) { return e.iteration == iteration; });
        if (entry == history.end()) {
            throw ConfigError("candidate iteration " + std::to_string(iteration) +
                              " is not in the training history");
        }
        InferenceConfig inference = config.inference;
        inference.seed = seed_for(config.seed, "selection", iteration);
        const auto [thresholds, metrics] =
            threshold_search(evaluation_form(entry->policy, config), selection_records,
                             config.beta, config.grid_step, inference, config.jobs);
        result.candidate_scores.emplace_back(iteration, metrics.f_beta);
        // >= so equal scores promote the later candidate
        if (metrics.f_beta >= best_f) {
            best_f = metrics.f_beta;
            result.iteration = iteration;
            result.policy = entry->policy;
            result.thresholds = thresholds;
            result.metrics = metrics;
        }
    }
    result.degenerate = best_f == 0.0;
    return result;
}

RunArtifact train(const Records& training, const Records& validation,
                  const TrainingConfig& config, CompletionProvider& provider,
                  const std::filesystem::path& run_dir) {
    if (config.max_iterations < 1) throw ConfigError("max_iterations must be positive");
    if (config.checkpoint_every < 1) throw ConfigError("checkpoint_every must be positive");
    if (training.empty() || validation.empty()) {
        throw DataError("training and validation splits must be nonempty");
    }

    std::filesystem::create_directories(run_dir);
    RunLogger logger(run_dir, config.log_exchanges);

    try {
        auto [train_normalized, table] = normalize_features(training, training);
        const Records validation_normalized = apply_normalization(validation, table);

        std::vector<std::string> vocabulary;
        for (const auto& [name, value] : train_normalized.front().features) {
            (void)value;
            vocabulary.push_back(name);
        }

        const std::vector<Records> batches =
            sample_batches(train_normalized, config.batch_size, config.batch_prevalence,
                           seed_for(config.seed, "batches"));

        // Stratified 50/50 split of the validation fold: one half scores
        // checkpoint windows, the other half drives final selection.
        Records checkpoint_records;
        Records selection_records;
        {
            std::vector<std::size_t> positives;
            std::vector<std::size_t> negatives;
            for (std::size_t i = 0; i < validation_normalized.size(); ++i) {
                (validation_normalized[i].label == Label::success ? positives : negatives)
                    .push_back(i);
            }
            std::mt19937_64 rng(seed_for(config.seed, "valsplit"));
            shuffle_seeded(positives, rng);
            shuffle_seeded(negatives, rng);
            for (auto* group : {&positives, &negatives}) {
                const std::size_t half = group->size() / 2;
                for (std::size_t i = 0; i < group->size(); ++i) {
                    (i < half ? checkpoint_records : selection_records)
                        .push_back(validation_normalized[(*group)[i]]);
                }
            }
        }
        if (checkpoint_records.empty() || selection_records.empty()) {
            throw DataError("validation split too small to divide into checkpoint and "
                            "selection subsets");
        }

        write_json_file(run_dir / "config.json",
                        {{"config", config.to_json()},
                         {"provider", provider.id()},
                         {"vocabulary", vocabulary},
                         {"training_records", training.size()},
                         {"validation_records", validation.size()},
                         {"batches", batches.size()}});
        {
            nlohmann::json seeds = {{"master", config.seed},
                                    {"batches", seed_for(config.seed, "batches")},
                                    {"valsplit", seed_for(config.seed, "valsplit")}};
            nlohmann::json per_iteration = nlohmann::json::object();
            for (int it = 1; it <= config.max_iterations; ++it) {
                per_iteration[std::to_string(it)] = {
                    {"calibration", seed_for(config.seed, "calibration", it)},
                    {"mining", seed_for(config.seed, "mining", it)},
                    {"checkpoint", seed_for(config.seed, "checkpoint", it)},
                    {"selection", seed_for(config.seed, "selection", it)}};
            }
            seeds["iterations"] = per_iteration;
            write_json_file(run_dir / "seeds.json", seeds);
        }
        write_json_file(run_dir / "normalization.json", table.to_json());

        TrainingState state;
        state.config = config;
        for (int it = 1; it <= config.max_iterations; ++it) {
            const Records& batch = batches[(it - 1) % batches.size()];
            state = run_iteration(state, batch, train_normalized, vocabulary, provider, &logger);
            write_text_file(run_dir / ("policy_" + padded(it) + ".txt"),
                            serialize_policy(state.current));
            write_json_file(run_dir / ("calibration_" + padded(it) + ".json"),
                            state.history.back().calibration.to_json());
            if (it % config.checkpoint_every == 0) {
                auto [advanced, review] =
                    periodic_evaluation(state, checkpoint_records, vocabulary, provider, &logger);
                state = std::move(advanced);
                nlohmann::json window = nlohmann::json::array();
                for (const auto& [wit, f] : review.window) {
                    window.push_back({{"iteration", wit}, {"f_beta", f}});
                }
                write_json_file(run_dir / ("checkpoint_" + padded(it) + ".json"),
                                {{"window", window},
                                 {"chosen_policy", serialize_policy(review.chosen)},
                                 {"response", review.response}});
            }
        }

        const SelectionResult selection =
            select_final_policy(state.history,
                                candidate_iterations(config.max_iterations,
                                                     config.candidate_count),
                                selection_records, config);

        write_text_file(run_dir / "final_policy.txt", serialize_policy(selection.policy));
        write_json_file(run_dir / "metrics.json", selection.to_json());
        write_json_file(run_dir / "status.json", {{"completed", true}});

        RunArtifact artifact;
        artifact.final_policy = selection.policy;
        artifact.thresholds = selection.thresholds;
        artifact.selection_metrics = selection.metrics;
        artifact.selection = selection;
        artifact.history = std::move(state.history);
        artifact.normalization = std::move(table);
        artifact.run_dir = run_dir;
        return artifact;
    } catch (const std::exception& e) {
        write_json_file(run_dir / "status.json", {{"completed", false}, {"error", e.what()}});
        throw;
    }
}

}  // namespace llmar
