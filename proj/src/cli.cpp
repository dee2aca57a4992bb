#include "llmar/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "llmar/dataset.hpp"
#include "llmar/errors.hpp"
#include "llmar/evaluation.hpp"
#include "llmar/harness.hpp"
#include "llmar/llm.hpp"
#include "llmar/policy.hpp"
#include "llmar/rng.hpp"
#include "llmar/statistics.hpp"
#include "llmar/training.hpp"

namespace llmar {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string read_text_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + path.string());
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

void write_text_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << text;
}

json parse_json_file(const fs::path& path) {
    try {
        return json::parse(read_text_file(path));
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

// Everything a subcommand needs, serializable so a run can be replayed from
// its own invocation.json.
struct CliOptions {
    std::string command;
    std::string data;
    std::string out;
    std::string provider = "mock";
    TrainingConfig training;

    std::string spec_path;  // synth generator spec file
    json generator;         // resolved generator spec
    int count = -1;         // synth record-count override

    std::vector<int> train_folds{0, 1};
    int validation_fold = 2;
    int test_fold = 3;

    std::string policy_path;
    std::string normalization_path;
    double theta_success = 0.5;
    double theta_failure = 0.5;
    bool rescale_scores = false;
    bool search = false;

    int top = 20;
    double precision = -1.0;
    double recall = -1.0;
    bool json_output = false;
};

json options_to_json(const CliOptions& o) {
    json j;
    j["command"] = o.command;
    j["data"] = o.data;
    j["out"] = o.out;
    j["provider"] = o.provider;
    j["training"] = o.training.to_json();
    if (!o.generator.is_null()) j["generator"] = o.generator;
    j["count"] = o.count;
    j["train_folds"] = o.train_folds;
    j["validation_fold"] = o.validation_fold;
    j["test_fold"] = o.test_fold;
    j["policy"] = o.policy_path;
    j["normalization"] = o.normalization_path;
    j["theta_success"] = o.theta_success;
    j["theta_failure"] = o.theta_failure;
    j["rescale_scores"] = o.rescale_scores;
    j["search"] = o.search;
    j["top"] = o.top;
    j["precision"] = o.precision;
    j["recall"] = o.recall;
    return j;
}

CliOptions options_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("invocation config must be a JSON object");
    CliOptions o;
    o.command = j.value("command", o.command);
    o.data = j.value("data", o.data);
    o.out = j.value("out", o.out);
    o.provider = j.value("provider", o.provider);
    if (j.contains("training")) o.training = TrainingConfig::from_json(j.at("training"));
    if (j.contains("generator")) o.generator = j.at("generator");
    o.count = j.value("count", o.count);
    o.train_folds = j.value("train_folds", o.train_folds);
    o.validation_fold = j.value("validation_fold", o.validation_fold);
    o.test_fold = j.value("test_fold", o.test_fold);
    o.policy_path = j.value("policy", o.policy_path);
    o.normalization_path = j.value("normalization", o.normalization_path);
    o.theta_success = j.value("theta_success", o.theta_success);
    o.theta_failure = j.value("theta_failure", o.theta_failure);
    o.rescale_scores = j.value("rescale_scores", o.rescale_scores);
    o.search = j.value("search", o.search);
    o.top = j.value("top", o.top);
    o.precision = j.value("precision", o.precision);
    o.recall = j.value("recall", o.recall);
    return o;
}

void write_invocation(const CliOptions& opt) {
    if (opt.out.empty()) return;
    fs::create_directories(opt.out);
    write_text_file(fs::path(opt.out) / "invocation.json", options_to_json(opt).dump(2) + "\n");
}

std::string join_tokens(const std::vector<Literal>& body) {
    std::string s;
    for (const auto& lit : body) {
        if (!s.empty()) s += " AND ";
        s += lit.token();
    }
    return s;
}

json mined_rule_json(const MinedRule& rule) {
    json antecedent = json::array();
    for (const auto& lit : rule.antecedent) antecedent.push_back(lit.token());
    return json{{"antecedent", antecedent},
                {"direction", direction_name(rule.consequent)},
                {"support", rule.support},
                {"confidence", rule.confidence},
                {"count", rule.count}};
}

std::string mined_rule_line(const MinedRule& rule) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "  (confidence %.3f, support %.3f, count %zu)",
                  rule.confidence, rule.support, rule.count);
    return join_tokens(rule.antecedent) + " -> " + direction_name(rule.consequent) + buf;
}

Records load_scoring_records(const CliOptions& opt) {
    Dataset dataset = load_dataset(opt.data);
    if (opt.normalization_path.empty()) return dataset.records;
    auto table = NormalizationTable::from_json(parse_json_file(opt.normalization_path));
    return apply_normalization(dataset.records, table);
}

Policy load_policy_file(const CliOptions& opt) {
    if (opt.policy_path.empty()) throw ConfigError(opt.command + " needs --policy");
    Policy policy = parse_policy(read_text_file(opt.policy_path));
    validate_policy(policy);
    if (opt.rescale_scores) policy = rescale_probabilities(policy).first;
    return policy;
}

InferenceConfig scoring_config(const CliOptions& opt) {
    InferenceConfig config = opt.training.inference;
    config.seed = opt.training.seed;
    return config;
}

int cmd_synth(CliOptions& opt) {
    if (opt.out.empty()) throw ConfigError("synth needs --out");
    json spec = opt.generator;
    if (!opt.spec_path.empty()) spec = parse_json_file(opt.spec_path);
    if (spec.is_null()) throw ConfigError("synth needs --spec or an embedded generator");
    GeneratorConfig generator = GeneratorConfig::from_json(spec);
    if (opt.count > 0) generator.count = opt.count;
    SyntheticData result = generate_synthetic(generator, opt.training.seed);

    fs::create_directories(opt.out);
    write_dataset(result.data, fs::path(opt.out) / "dataset.csv");
    write_text_file(fs::path(opt.out) / "metadata.json", result.metadata.dump(2) + "\n");
    opt.generator = generator.to_json();
    opt.spec_path.clear();
    opt.count = -1;
    write_invocation(opt);

    std::size_t positives = 0;
    for (const auto& record : result.data.records)
        if (record.label == Label::success) ++positives;
    if (opt.json_output) {
        json summary{{"records", result.data.records.size()},
                     {"positives", positives},
                     {"out", opt.out}};
        std::cout << summary.dump(2) << "\n";
    } else {
        std::cout << "generated " << result.data.records.size() << " records (" << positives
                  << " positive) -> " << (fs::path(opt.out) / "dataset.csv").string() << "\n";
    }
    return 0;
}

int cmd_mine(CliOptions& opt) {
    if (opt.data.empty()) throw ConfigError("mine needs --data");
    Dataset dataset = load_dataset(opt.data);
    auto transactions = binarize(dataset.records);
    auto rules = mine_rules(transactions, opt.training.mining);
    auto hints = select_hints(rules, opt.training.hint_success_count, opt.training.hint_failure_count,
                              opt.training.hint_failure_confidence);

    json payload;
    payload["transactions"] = transactions.size();
    payload["rules"] = json::array();
    for (const auto& rule : rules) payload["rules"].push_back(mined_rule_json(rule));
    payload["success_hints"] = json::array();
    for (const auto& rule : hints.success_hints)
        payload["success_hints"].push_back(mined_rule_json(rule));
    payload["failure_hints"] = json::array();
    for (const auto& rule : hints.failure_hints)
        payload["failure_hints"].push_back(mined_rule_json(rule));

    if (!opt.out.empty()) {
        fs::create_directories(opt.out);
        write_text_file(fs::path(opt.out) / "rules.json", payload.dump(2) + "\n");
        write_invocation(opt);
    }
    if (opt.json_output) {
        std::cout << payload.dump(2) << "\n";
    } else {
        std::cout << "mined " << rules.size() << " rules from " << transactions.size()
                  << " records\n";
        std::size_t shown = std::min<std::size_t>(rules.size(), opt.top > 0 ? opt.top : 0);
        for (std::size_t i = 0; i < shown; ++i) std::cout << mined_rule_line(rules[i]) << "\n";
    }
    return 0;
}

void check_fold_roles(const CliOptions& opt) {
    if (opt.train_folds.size() != 2)
        throw ConfigError("--train-folds needs exactly two fold indices");
    std::set<int> roles{opt.train_folds[0], opt.train_folds[1], opt.validation_fold, opt.test_fold};
    if (roles.size() != 4 || *roles.begin() < 0 || *roles.rbegin() > 3)
        throw ConfigError("fold roles must be distinct indices in [0, 4)");
}

int cmd_train(CliOptions& opt) {
    if (opt.data.empty()) throw ConfigError("train needs --data");
    if (opt.out.empty()) throw ConfigError("train needs --out");
    check_fold_roles(opt);
    Dataset dataset = load_dataset(opt.data);
    auto folds = assign_folds(dataset.records, 4, seed_for(opt.training.seed, "folds"));
    Records training, validation;
    for (std::size_t i = 0; i < dataset.records.size(); ++i) {
        if (folds[i] == opt.train_folds[0] || folds[i] == opt.train_folds[1])
            training.push_back(dataset.records[i]);
        else if (folds[i] == opt.validation_fold)
            validation.push_back(dataset.records[i]);
    }
    auto provider = make_provider(opt.provider, seed_for(opt.training.seed, "provider"));
    RunArtifact artifact = train(training, validation, opt.training, *provider, opt.out);
    write_invocation(opt);

    if (opt.json_output) {
        json summary{{"out", opt.out},
                     {"iteration", artifact.selection.iteration},
                     {"rules", artifact.final_policy.rule_count()},
                     {"theta_success", artifact.thresholds.theta_success},
                     {"theta_failure", artifact.thresholds.theta_failure},
                     {"f_beta", artifact.selection_metrics.f_beta}};
        std::cout << summary.dump(2) << "\n";
    } else {
        char buf[160];
        std::snprintf(buf, sizeof buf,
                      "final policy: iteration %d, %zu rules, thresholds (%.2f, %.2f), F_%.2f %.4f\n",
                      artifact.selection.iteration, artifact.final_policy.rule_count(),
                      artifact.thresholds.theta_success, artifact.thresholds.theta_failure,
                      artifact.selection_metrics.beta, artifact.selection_metrics.f_beta);
        std::cout << buf << "artifacts in " << opt.out << "\n";
    }
    return 0;
}

int cmd_predict(CliOptions& opt) {
    if (opt.data.empty()) throw ConfigError("predict needs --data");
    Policy policy = load_policy_file(opt);
    Records records = load_scoring_records(opt);
    auto scores = score_records(policy, records, scoring_config(opt), opt.training.jobs);
    Thresholds thresholds{opt.theta_success, opt.theta_failure};

    std::string csv = "id,p_success,p_failure,prediction\n";
    json rows = json::array();
    for (const auto& score : scores) {
        bool positive = score.p_success > thresholds.theta_success &&
                        score.p_failure < thresholds.theta_failure;
        char buf[96];
        std::snprintf(buf, sizeof buf, ",%.6f,%.6f,%d\n", score.p_success, score.p_failure,
                      positive ? 1 : 0);
        csv += score.id + buf;
        rows.push_back(json{{"id", score.id},
                            {"p_success", score.p_success},
                            {"p_failure", score.p_failure},
                            {"prediction", positive ? 1 : 0}});
    }
    if (!opt.out.empty()) {
        fs::create_directories(opt.out);
        write_text_file(fs::path(opt.out) / "predictions.csv", csv);
        write_invocation(opt);
        std::cout << "wrote " << scores.size() << " predictions -> "
                  << (fs::path(opt.out) / "predictions.csv").string() << "\n";
    } else if (opt.json_output) {
        std::cout << json{{"predictions", rows}}.dump(2) << "\n";
    } else {
        std::cout << csv;
    }
    return 0;
}

int cmd_eval(CliOptions& opt) {
    if (opt.precision >= 0.0 || opt.recall >= 0.0) {
        if (opt.precision < 0.0 || opt.recall < 0.0)
            throw ConfigError("eval needs both --precision and --recall");
        double f = f_beta_score(opt.training.beta, opt.precision, opt.recall);
        if (opt.json_output) {
            json out{{"beta", opt.training.beta},
                     {"precision", opt.precision},
                     {"recall", opt.recall},
                     {"f_beta", f}};
            std::cout << out.dump(2) << "\n";
        } else {
            char buf[128];
            std::snprintf(buf, sizeof buf, "F_%g(precision %g, recall %g) = %.6g\n",
                          opt.training.beta, opt.precision, opt.recall, f);
            std::cout << buf;
        }
        return 0;
    }

    if (opt.data.empty()) throw ConfigError("eval needs --data");
    Policy policy = load_policy_file(opt);
    Records records = load_scoring_records(opt);
    auto scores = score_records(policy, records, scoring_config(opt), opt.training.jobs);
    Thresholds thresholds{opt.theta_success, opt.theta_failure};
    MetricsReport metrics;
    if (opt.search) {
        auto searched = threshold_search_scores(scores, opt.training.beta, opt.training.grid_step);
        thresholds = searched.first;
        metrics = searched.second;
    } else {
        metrics = metrics_from_scores(scores, thresholds, opt.training.beta);
    }

    if (!opt.out.empty()) {
        fs::create_directories(opt.out);
        write_text_file(fs::path(opt.out) / "metrics.json", metrics.to_json().dump(2) + "\n");
        write_invocation(opt);
    }
    if (opt.json_output) {
        std::cout << metrics.to_json().dump(2) << "\n";
    } else {
        char buf[256];
        std::snprintf(buf, sizeof buf,
                      "thresholds (%.2f, %.2f)  tp %zu  fp %zu  fn %zu  tn %zu\n"
                      "precision %.2f%%  recall %.2f%%  F_%.2f %.4f\n",
                      metrics.thresholds.theta_success, metrics.thresholds.theta_failure,
                      metrics.tp, metrics.fp, metrics.fn, metrics.tn, metrics.precision * 100.0,
                      metrics.recall * 100.0, metrics.beta, metrics.f_beta);
        std::cout << buf;
    }
    return 0;
}

int cmd_crossval(CliOptions& opt) {
    if (opt.data.empty()) throw ConfigError("crossval needs --data");
    if (opt.out.empty()) throw ConfigError("crossval needs --out");
    Dataset dataset = load_dataset(opt.data);
    std::string provider_name = opt.provider;
    ProviderFactory factory = [provider_name](std::uint64_t partition_seed) {
        return make_provider(provider_name, partition_seed);
    };
    CrossValReport report =
        cross_validate(dataset, opt.training, opt.out, factory, opt.training.jobs);
    write_invocation(opt);

    if (opt.json_output) {
        std::cout << report.to_json().dump(2) << "\n";
    } else {
        std::cout << report.table_text();
    }
    if (!report.complete) {
        std::size_t failed = 0;
        for (const auto& outcome : report.partitions)
            if (!outcome.completed) ++failed;
        std::cerr << "error: " << failed << " of " << report.partitions.size()
                  << " partitions failed\n";
        return 5;
    }
    return 0;
}

int report_cli_error(const char* category, const std::string& message, bool json_output,
                     int code) {
    if (json_output) {
        json err{{"error", json{{"category", category}, {"message", message}}}};
        std::cerr << err.dump() << "\n";
    } else {
        std::cerr << "error (" << category << "): " << message << "\n";
    }
    return code;
}

void add_scoring_options(CLI::App* cmd, CliOptions& opt) {
    cmd->add_option("--policy", opt.policy_path, "policy rule file");
    cmd->add_option("--norm", opt.normalization_path,
                    "normalization table JSON (omit when features are already probabilities)");
    cmd->add_option("--theta-success", opt.theta_success, "success threshold");
    cmd->add_option("--theta-failure", opt.theta_failure, "failure threshold");
    cmd->add_flag("--rescale", opt.rescale_scores, "spread rule probabilities over [0.1, 0.9]");
    cmd->add_option("--exact-limit", opt.training.inference.exact_limit,
                    "max choices for exact inference");
    cmd->add_option("--samples", opt.training.inference.sample_count, "Monte Carlo sample count");
}

void add_training_options(CLI::App* cmd, CliOptions& opt) {
    cmd->add_option("--provider", opt.provider, "completion provider (mock or remote)");
    cmd->add_option("--iterations", opt.training.max_iterations, "training iterations");
    cmd->add_option("--checkpoint-every", opt.training.checkpoint_every,
                    "iterations between checkpoint reviews");
    cmd->add_option("--candidates", opt.training.candidate_count, "final selection candidates");
    cmd->add_option("--batch-size", opt.training.batch_size, "founders per batch");
    cmd->add_option("--batch-prevalence", opt.training.batch_prevalence,
                    "positive share per batch");
    cmd->add_option("--sample-size", opt.training.calibration.sample_size,
                    "calibration sample size");
    cmd->add_option("--min-calibration", opt.training.calibration.min_samples,
                    "minimum matches for calibration");
    cmd->add_option("--beta", opt.training.beta, "F-score beta");
    cmd->add_option("--grid-step", opt.training.grid_step, "threshold grid step");
    cmd->add_flag("!--no-rescale", opt.training.rescale,
                  "disable probability rescaling before scoring");
    cmd->add_option("--exact-limit", opt.training.inference.exact_limit,
                    "max choices for exact inference");
    cmd->add_option("--samples", opt.training.inference.sample_count, "Monte Carlo sample count");
    cmd->add_flag("!--no-logs", opt.training.log_exchanges, "skip prompt/response logs");
    cmd->add_option("--min-support", opt.training.mining.min_support, "mining support floor");
    cmd->add_option("--min-confidence", opt.training.mining.min_confidence,
                    "mining confidence floor");
    cmd->add_option("--max-len", opt.training.mining.max_len, "mining antecedent size cap");
    cmd->add_option("--success-hints", opt.training.hint_success_count, "mined success hints");
    cmd->add_option("--failure-hints", opt.training.hint_failure_count, "mined failure hints");
    cmd->add_option("--failure-confidence", opt.training.hint_failure_confidence,
                    "failure hint confidence floor");
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    CliOptions opt;
    try {
        for (std::size_t i = 0; i < args.size(); ++i) {
            std::string path;
            if (args[i] == "--config" && i + 1 < args.size())
                path = args[i + 1];
            else if (args[i].rfind("--config=", 0) == 0)
                path = args[i].substr(9);
            if (!path.empty()) {
                opt = options_from_json(parse_json_file(path));
                break;
            }
        }

        CLI::App app{"Probabilistic founder-outcome rule pipeline"};
        app.require_subcommand(0, 1);
        std::string config_path;

        auto add_common = [&](CLI::App* cmd) {
            cmd->add_option("--config", config_path, "saved invocation JSON; flags override");
            cmd->add_option("--seed", opt.training.seed, "master seed");
            cmd->add_option("--jobs", opt.training.jobs, "worker threads");
            cmd->add_flag("--json", opt.json_output, "JSON output");
            cmd->add_option("--out", opt.out, "output directory");
        };

        auto* synth = app.add_subcommand("synth", "Generate a labeled synthetic founder dataset");
        add_common(synth);
        synth->add_option("--spec", opt.spec_path, "generator spec JSON");
        synth->add_option("--count", opt.count, "override the spec's record count");

        auto* mine = app.add_subcommand("mine", "Mine association rules from a dataset");
        add_common(mine);
        mine->add_option("--data", opt.data, "dataset CSV");
        mine->add_option("--min-support", opt.training.mining.min_support, "support floor");
        mine->add_option("--min-confidence", opt.training.mining.min_confidence,
                         "confidence floor");
        mine->add_option("--max-len", opt.training.mining.max_len, "antecedent size cap");
        mine->add_option("--success-hints", opt.training.hint_success_count,
                         "success hints to select");
        mine->add_option("--failure-hints", opt.training.hint_failure_count,
                         "failure hints to select");
        mine->add_option("--failure-confidence", opt.training.hint_failure_confidence,
                         "failure hint confidence floor");
        mine->add_option("--top", opt.top, "rules to print");

        auto* train_cmd = app.add_subcommand("train", "Run the iterative training loop");
        add_common(train_cmd);
        train_cmd->add_option("--data", opt.data, "dataset CSV");
        train_cmd->add_option("--train-folds", opt.train_folds, "two training fold indices")
            ->delimiter(',');
        train_cmd->add_option("--val-fold", opt.validation_fold, "validation fold index");
        train_cmd->add_option("--test-fold", opt.test_fold, "held-out fold index");
        add_training_options(train_cmd, opt);

        auto* predict = app.add_subcommand("predict", "Score founders with a policy");
        add_common(predict);
        predict->add_option("--data", opt.data, "dataset CSV");
        add_scoring_options(predict, opt);

        auto* eval = app.add_subcommand("eval", "Evaluate a policy or compute an F-score");
        add_common(eval);
        eval->add_option("--data", opt.data, "dataset CSV");
        add_scoring_options(eval, opt);
        eval->add_option("--beta", opt.training.beta, "F-score beta");
        eval->add_option("--grid-step", opt.training.grid_step, "threshold grid step");
        eval->add_flag("--search", opt.search, "grid-search thresholds instead of fixed ones");
        eval->add_option("--precision", opt.precision, "direct F-score input");
        eval->add_option("--recall", opt.recall, "direct F-score input");

        auto* crossval = app.add_subcommand("crossval", "Cross-validate over 12 fold partitions");
        add_common(crossval);
        crossval->add_option("--data", opt.data, "dataset CSV");
        add_training_options(crossval, opt);

        std::vector<std::string> reversed(args.rbegin(), args.rend());
        try {
            app.parse(reversed);
        } catch (const CLI::CallForHelp& e) {
            return app.exit(e);
        } catch (const CLI::CallForAllHelp& e) {
            return app.exit(e);
        } catch (const CLI::ParseError& e) {
            std::cerr << "error: " << e.what() << "\n";
            return 2;
        }

        const CLI::App* chosen = nullptr;
        for (const auto* cmd : {synth, mine, train_cmd, predict, eval, crossval})
            if (cmd->parsed()) chosen = cmd;
        if (chosen == nullptr) {
            std::cerr << app.help();
            return 2;
        }
        if (!opt.command.empty() && opt.command != chosen->get_name())
            throw ConfigError("config was saved by '" + opt.command + "', not '" +
                              chosen->get_name() + "'");
        opt.command = chosen->get_name();

        if (chosen == synth) return cmd_synth(opt);
        if (chosen == mine) return cmd_mine(opt);
        if (chosen == train_cmd) return cmd_train(opt);
        if (chosen == predict) return cmd_predict(opt);
        if (chosen == eval) return cmd_eval(opt);
        return cmd_crossval(opt);
    } catch (const ConfigError& e) {
        return report_cli_error("config", e.what(), opt.json_output, 2);
    } catch (const SchemaError& e) {
        return report_cli_error("schema", e.what(), opt.json_output, 3);
    } catch (const ParseError& e) {
        return report_cli_error("parse", e.what(), opt.json_output, 3);
    } catch (const ValidationError& e) {
        return report_cli_error("validation", e.what(), opt.json_output, 3);
    } catch (const MissingFactError& e) {
        return report_cli_error("data", e.what(), opt.json_output, 3);
    } catch (const DataError& e) {
        return report_cli_error("data", e.what(), opt.json_output, 3);
    } catch (const ExtractionError& e) {
        return report_cli_error("provider", e.what(), opt.json_output, 4);
    } catch (const ProviderError& e) {
        return report_cli_error("provider", e.what(), opt.json_output, 4);
    } catch (const Error& e) {
        return report_cli_error("internal", e.what(), opt.json_output, 5);
    } catch (const std::exception& e) {
        return report_cli_error("internal", e.what(), opt.json_output, 5);
    }
}

int run_cli(int argc, const char* const* argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run_cli(args);
}

}  // namespace llmar
