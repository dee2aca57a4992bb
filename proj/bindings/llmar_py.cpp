#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <nlohmann/json.hpp>

#include "llmar/dataset.hpp"
#include "llmar/errors.hpp"
#include "llmar/evaluation.hpp"
#include "llmar/inference.hpp"
#include "llmar/llm.hpp"
#include "llmar/policy.hpp"
#include "llmar/rng.hpp"
#include "llmar/statistics.hpp"

namespace py = pybind11;
using namespace llmar;
using nlohmann::json;

PYBIND11_MODULE(_core, m) {
    m.doc() = "Probabilistic founder-outcome rule pipeline";

    auto base = py::register_exception<Error>(m, "PipelineError");
    py::register_exception<ParseError>(m, "RuleParseError", base);
    py::register_exception<ValidationError>(m, "RuleValidationError", base);
    py::register_exception<SchemaError>(m, "DatasetSchemaError", base);
    py::register_exception<DataError>(m, "DatasetError", base);
    py::register_exception<ConfigError>(m, "ConfigurationError", base);
    py::register_exception<ProviderError>(m, "CompletionProviderError", base);
    py::register_exception<CapacityError>(m, "InferenceCapacityError", base);
    py::register_exception<MissingFactError>(m, "MissingFactError", base);
    py::register_exception<ExtractionError>(m, "ResponseExtractionError", base);

    py::enum_<Direction>(m, "Direction")
        .value("success", Direction::success)
        .value("failure", Direction::failure);

    py::enum_<Calibration>(m, "Calibration")
        .value("uncalibrated", Calibration::uncalibrated)
        .value("calibrated", Calibration::calibrated)
        .value("insufficient_samples", Calibration::insufficient_samples);

    py::enum_<Label>(m, "Label")
        .value("failure", Label::failure)
        .value("success", Label::success);

    py::enum_<InferenceMode>(m, "InferenceMode")
        .value("exact", InferenceMode::exact)
        .value("sampled", InferenceMode::sampled);

    py::class_<Literal>(m, "Literal")
        .def(py::init<>())
        .def(py::init([](std::string atom, bool negated) {
                 return Literal{std::move(atom), negated};
             }),
             py::arg("atom"), py::arg("negated") = false)
        .def_readwrite("atom", &Literal::atom)
        .def_readwrite("negated", &Literal::negated)
        .def("token", &Literal::token)
        .def("__repr__", [](const Literal& l) { return "Literal(" + l.token() + ")"; })
        .def(py::self == py::self);

    py::class_<Rule>(m, "Rule")
        .def(py::init<>())
        .def(py::init([](std::vector<Literal> body, double probability, Direction direction) {
                 Rule r;
                 r.body = std::move(body);
                 r.probability = probability;
                 r.direction = direction;
                 return r;
             }),
             py::arg("body"), py::arg("probability"), py::arg("direction") = Direction::success)
        .def_readwrite("direction", &Rule::direction)
        .def_readwrite("body", &Rule::body)
        .def_readwrite("probability", &Rule::probability)
        .def_readwrite("calibration", &Rule::calibration);

    py::class_<Policy>(m, "Policy")
        .def(py::init<>())
        .def_readwrite("id", &Policy::id)
        .def_readwrite("iteration", &Policy::iteration)
        .def_readwrite("success_rules", &Policy::success_rules)
        .def_readwrite("failure_rules", &Policy::failure_rules)
        .def("rule_count", &Policy::rule_count)
        .def("empty", &Policy::empty)
        .def("__str__", [](const Policy& p) { return serialize_policy(p); });

    m.def("parse_policy", &parse_policy, py::arg("text"));
    m.def("serialize_policy", &serialize_policy, py::arg("policy"));
    m.def("validate_policy", &validate_policy, py::arg("policy"));
    m.def("body_key", &body_key, py::arg("body"));
    m.def("policy_atoms", &policy_atoms, py::arg("policy"));
    m.def("emit_program", &emit_problog_program, py::arg("policy"), py::arg("facts"));

    py::class_<Clause>(m, "Clause")
        .def(py::init<>())
        .def_readwrite("head", &Clause::head)
        .def_readwrite("body", &Clause::body)
        .def_readwrite("probability", &Clause::probability);

    py::class_<ProbProgram>(m, "ProbProgram")
        .def(py::init<>())
        .def_readwrite("facts", &ProbProgram::facts)
        .def_readwrite("clauses", &ProbProgram::clauses);

    py::class_<InferenceConfig>(m, "InferenceConfig")
        .def(py::init<>())
        .def_readwrite("exact_limit", &InferenceConfig::exact_limit)
        .def_readwrite("sample_count", &InferenceConfig::sample_count)
        .def_readwrite("seed", &InferenceConfig::seed);

    py::class_<InferenceResult>(m, "InferenceResult")
        .def_readonly("p_success", &InferenceResult::p_success)
        .def_readonly("p_failure", &InferenceResult::p_failure)
        .def_readonly("mode", &InferenceResult::mode)
        .def_readonly("samples", &InferenceResult::samples);

    m.def("parse_program", &parse_program, py::arg("text"));
    m.def("choice_count", &choice_count, py::arg("program"));
    m.def("infer", &infer, py::arg("program"), py::arg("config") = InferenceConfig{});
    m.def("infer_exact", &infer_exact, py::arg("program"), py::arg("exact_limit") = 22);
    m.def("infer_sampled", &infer_sampled, py::arg("program"), py::arg("n"), py::arg("seed"));
    m.def("ground_policy", &ground_policy, py::arg("policy"), py::arg("traits"));
    m.def("query_founder", &query_founder, py::arg("policy"), py::arg("traits"),
          py::arg("config") = InferenceConfig{});

    py::class_<FounderRecord>(m, "FounderRecord")
        .def(py::init<>())
        .def(py::init([](std::string id, std::map<std::string, double> features, Label label) {
                 return FounderRecord{std::move(id), std::move(features), label};
             }),
             py::arg("id"), py::arg("features"), py::arg("label") = Label::failure)
        .def_readwrite("id", &FounderRecord::id)
        .def_readwrite("features", &FounderRecord::features)
        .def_readwrite("label", &FounderRecord::label);

    py::class_<Dataset>(m, "Dataset")
        .def(py::init<>())
        .def_readwrite("vocabulary", &Dataset::vocabulary)
        .def_readwrite("records", &Dataset::records);

    m.def("default_vocabulary", &default_vocabulary);
    m.def("load_dataset", py::overload_cast<const std::filesystem::path&>(&load_dataset),
          py::arg("path"));
    m.def("write_dataset", &write_dataset, py::arg("dataset"), py::arg("path"));

    py::class_<NormalizationTable>(m, "NormalizationTable")
        .def(py::init<>())
        .def_readwrite("ranges", &NormalizationTable::ranges)
        .def("to_json", [](const NormalizationTable& t) { return t.to_json().dump(2); })
        .def_static("from_json", [](const std::string& text) {
            return NormalizationTable::from_json(json::parse(text));
        });

    m.def("normalize_features", &normalize_features, py::arg("records"), py::arg("stats_from"));
    m.def("apply_normalization", &apply_normalization, py::arg("records"), py::arg("table"));
    m.def("trait_probabilities",
          [](const FounderRecord& record) { return trait_probabilities(record).probabilities; },
          py::arg("record"));
    m.def("render_profile", &render_profile, py::arg("record"));

    py::class_<PartitionSpec>(m, "PartitionSpec")
        .def(py::init<>())
        .def_readwrite("train_folds", &PartitionSpec::train_folds)
        .def_readwrite("validation_fold", &PartitionSpec::validation_fold)
        .def_readwrite("test_fold", &PartitionSpec::test_fold)
        .def("id", &PartitionSpec::id);

    m.def("enumerate_partitions", &enumerate_partitions, py::arg("n_folds") = 4);
    m.def("assign_folds", &assign_folds, py::arg("records"), py::arg("n_folds"), py::arg("seed"));
    m.def("sample_batches", &sample_batches, py::arg("records"), py::arg("batch_size"),
          py::arg("prevalence"), py::arg("seed"));
    m.def("generate_synthetic",
          [](const std::string& spec_json, std::uint64_t seed) {
              auto result = generate_synthetic(GeneratorConfig::from_json(json::parse(spec_json)),
                                               seed);
              return py::make_tuple(result.data, result.metadata.dump(2));
          },
          py::arg("spec_json"), py::arg("seed"));

    m.def("binarize_thresholds", &binarize_thresholds, py::arg("records"));
    m.def("binarize",
          py::overload_cast<const Records&, const FeatureThresholds&>(&binarize),
          py::arg("records"), py::arg("thresholds"));
    m.def("binarize", py::overload_cast<const Records&>(&binarize), py::arg("records"));

    py::class_<MinedRule>(m, "MinedRule")
        .def_readonly("antecedent", &MinedRule::antecedent)
        .def_readonly("consequent", &MinedRule::consequent)
        .def_readonly("support", &MinedRule::support)
        .def_readonly("confidence", &MinedRule::confidence)
        .def_readonly("count", &MinedRule::count);

    py::class_<MiningParams>(m, "MiningParams")
        .def(py::init<>())
        .def_readwrite("min_support", &MiningParams::min_support)
        .def_readwrite("min_confidence", &MiningParams::min_confidence)
        .def_readwrite("max_len", &MiningParams::max_len);

    m.def("mine_rules", &mine_rules, py::arg("transactions"), py::arg("params") = MiningParams{});

    py::class_<HintSelection>(m, "HintSelection")
        .def_readonly("success_hints", &HintSelection::success_hints)
        .def_readonly("failure_hints", &HintSelection::failure_hints);

    m.def("select_hints", &select_hints, py::arg("mined"), py::arg("success_k") = 3,
          py::arg("failure_k") = 1, py::arg("failure_min_confidence") = 0.9);

    py::class_<CalibrationParams>(m, "CalibrationParams")
        .def(py::init<>())
        .def_readwrite("sample_size", &CalibrationParams::sample_size)
        .def_readwrite("min_samples", &CalibrationParams::min_samples)
        .def_readwrite("seed", &CalibrationParams::seed);

    py::class_<RuleCalibration>(m, "RuleCalibration")
        .def_readonly("direction", &RuleCalibration::direction)
        .def_readonly("body", &RuleCalibration::body)
        .def_readonly("original_probability", &RuleCalibration::original_probability)
        .def_readonly("probability", &RuleCalibration::probability)
        .def_readonly("matched", &RuleCalibration::matched)
        .def_readonly("matched_direction", &RuleCalibration::matched_direction)
        .def_readonly("status", &RuleCalibration::status);

    py::class_<CalibrationReport>(m, "CalibrationReport")
        .def_readonly("entries", &CalibrationReport::entries)
        .def_readonly("sample_size", &CalibrationReport::sample_size)
        .def_readonly("seed", &CalibrationReport::seed)
        .def("to_json", [](const CalibrationReport& r) { return r.to_json().dump(2); });

    m.def("calibrate_policy", &calibrate_policy, py::arg("policy"), py::arg("training"),
          py::arg("params") = CalibrationParams{});

    py::class_<PruneResult>(m, "PruneResult")
        .def_readonly("policy", &PruneResult::policy)
        .def_readonly("removed", &PruneResult::removed)
        .def_readonly("emptied", &PruneResult::emptied);

    m.def("prune_policy", &prune_policy, py::arg("policy"), py::arg("report"));
    m.def("rescale_probabilities",
          [](const Policy& policy) {
              auto [rescaled, report] = rescale_probabilities(policy);
              return py::make_tuple(rescaled, report.to_json().dump(2));
          },
          py::arg("policy"));

    py::class_<Thresholds>(m, "Thresholds")
        .def(py::init<>())
        .def(py::init([](double ts, double tf) { return Thresholds{ts, tf}; }),
             py::arg("theta_success"), py::arg("theta_failure"))
        .def_readwrite("theta_success", &Thresholds::theta_success)
        .def_readwrite("theta_failure", &Thresholds::theta_failure);

    py::class_<MetricsReport>(m, "MetricsReport")
        .def_readonly("tp", &MetricsReport::tp)
        .def_readonly("fp", &MetricsReport::fp)
        .def_readonly("fn", &MetricsReport::fn)
        .def_readonly("tn", &MetricsReport::tn)
        .def_readonly("precision", &MetricsReport::precision)
        .def_readonly("recall", &MetricsReport::recall)
        .def_readonly("f_beta", &MetricsReport::f_beta)
        .def_readonly("beta", &MetricsReport::beta)
        .def_readonly("thresholds", &MetricsReport::thresholds)
        .def("to_json", [](const MetricsReport& r) { return r.to_json().dump(2); });

    py::class_<ScoredRecord>(m, "ScoredRecord")
        .def_readonly("id", &ScoredRecord::id)
        .def_readonly("p_success", &ScoredRecord::p_success)
        .def_readonly("p_failure", &ScoredRecord::p_failure)
        .def_readonly("positive_label", &ScoredRecord::positive_label);

    m.def("classify", &classify, py::arg("scores"), py::arg("thresholds"));
    m.def("f_beta_score", &f_beta_score, py::arg("beta"), py::arg("precision"), py::arg("recall"));
    m.def("score_records", &score_records, py::arg("policy"), py::arg("normalized"),
          py::arg("config") = InferenceConfig{}, py::arg("jobs") = 1);
    m.def("metrics_from_scores", &metrics_from_scores, py::arg("scores"), py::arg("thresholds"),
          py::arg("beta"));
    m.def("evaluate_policy", &evaluate_policy, py::arg("policy"), py::arg("normalized"),
          py::arg("thresholds"), py::arg("beta"), py::arg("config") = InferenceConfig{},
          py::arg("jobs") = 1);
    m.def("threshold_search", &threshold_search, py::arg("policy"), py::arg("normalized"),
          py::arg("beta"), py::arg("grid_step"), py::arg("config") = InferenceConfig{},
          py::arg("jobs") = 1);

    m.def("build_insight_prompt",
          [](const FounderRecord& record, int iteration, const std::string& batch_id) {
              return build_insight_prompt(record, iteration, batch_id).rendered;
          },
          py::arg("record"), py::arg("iteration") = 0, py::arg("batch_id") = "");
    m.def("build_summary_prompt",
          [](const std::vector<std::string>& insights, const std::vector<std::string>& vocabulary,
             int iteration, const std::string& batch_id) {
              return build_summary_prompt(insights, vocabulary, iteration, batch_id).rendered;
          },
          py::arg("insights"), py::arg("vocabulary"), py::arg("iteration") = 0,
          py::arg("batch_id") = "");
    m.def("parse_policy_response",
          [](const std::string& text, const std::vector<std::string>& vocabulary) {
              auto parsed = parse_policy_response(text, vocabulary);
              return py::make_tuple(parsed.policy, parsed.warnings);
          },
          py::arg("text"), py::arg("vocabulary"));

    m.def("seed_for",
          [](std::uint64_t master, const std::string& tag, std::uint64_t index) {
              return seed_for(master, tag, index);
          },
          py::arg("master"), py::arg("tag"), py::arg("index") = 0);
}
