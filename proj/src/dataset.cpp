#include "llmar/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "llmar/errors.hpp"
#include "llmar/rng.hpp"

namespace llmar {

namespace {

std::string trim(const std::string& s) {
    std::size_t begin = 0;
    std::size_t end = s.size();
    while (begin < end && std::isspace(static_cast<unsigned char>(s[begin]))) ++begin;
    while (end > begin && std::isspace(static_cast<unsigned char>(s[end - 1]))) --end;
    return s.substr(begin, end - begin);
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream stream(line);
    while (std::getline(stream, cell, ',')) cells.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') cells.push_back("");
    return cells;
}

bool is_feature_name(const std::string& s) {
    if (s.empty() || !(s[0] >= 'a' && s[0] <= 'z')) return false;
    for (char c : s) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_';
        if (!ok) return false;
    }
    return s != "success" && s != "failure" && s != "id" && s != "label" &&
           s.rfind("not_", 0) != 0;
}

double parse_cell(const std::string& cell, std::size_t row, const std::string& column) {
    std::size_t consumed = 0;
    double v = 0.0;
    try {
        v = std::stod(cell, &consumed);
    } catch (const std::exception&) {
        throw DataError("row " + std::to_string(row) + ": non-numeric value '" + cell +
                        "' in column '" + column + "'");
    }
    if (consumed != cell.size() || !std::isfinite(v)) {
        throw DataError("row " + std::to_string(row) + ": non-numeric value '" + cell +
                        "' in column '" + column + "'");
    }
    return v;
}

std::string format_value(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

Dataset load_dataset_impl(const std::filesystem::path& path,
                          const std::vector<std::string>* expected) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open dataset file: " + path.string());

    std::string line;
    if (!std::getline(in, line)) throw SchemaError("dataset file is empty: " + path.string());
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::vector<std::string> header = split_csv_line(line);
    if (header.size() < 3 || header[0] != "id" || header[1] != "label") {
        throw SchemaError("header must start with 'id,label' followed by feature columns");
    }

    Dataset dataset;
    dataset.vocabulary.assign(header.begin() + 2, header.end());
    std::set<std::string> seen_columns;
    for (const std::string& name : dataset.vocabulary) {
        if (!is_feature_name(name)) throw SchemaError("invalid feature column '" + name + "'");
        if (!seen_columns.insert(name).second) {
            throw SchemaError("duplicate feature column '" + name + "'");
        }
    }
    if (expected) {
        const std::set<std::string> expected_set(expected->begin(), expected->end());
        std::vector<std::string> missing;
        for (const std::string& name : expected_set) {
            if (!seen_columns.count(name)) missing.push_back(name);
        }
        if (!missing.empty()) {
            std::string msg = "dataset is missing expected feature column(s):";
            for (const auto& name : missing) msg += " " + name;
            throw SchemaError(msg);
        }
        for (const std::string& name : dataset.vocabulary) {
            if (!expected_set.count(name)) {
                throw SchemaError("unexpected feature column '" + name + "'");
            }
        }
    }

    std::set<std::string> seen_ids;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        const std::vector<std::string> cells = split_csv_line(line);
        if (cells.size() != header.size()) {
            throw SchemaError("row " + std::to_string(row) + ": expected " +
                              std::to_string(header.size()) + " cells, got " +
                              std::to_string(cells.size()));
        }
        FounderRecord record;
        record.id = cells[0];
        if (record.id.empty()) throw DataError("row " + std::to_string(row) + ": empty id");
        if (!seen_ids.insert(record.id).second) {
            throw DataError("row " + std::to_string(row) + ": duplicate id '" + record.id + "'");
        }
        if (cells[1] == "0") {
            record.label = Label::failure;
        } else if (cells[1] == "1") {
            record.label = Label::success;
        } else {
            throw DataError("row " + std::to_string(row) + ": label must be 0 or 1, got '" +
                            cells[1] + "'");
        }
        for (std::size_t i = 0; i < dataset.vocabulary.size(); ++i) {
            record.features[dataset.vocabulary[i]] =
                parse_cell(cells[i + 2], row, dataset.vocabulary[i]);
        }
        dataset.records.push_back(std::move(record));
    }
    return dataset;
}

// Generation-side binarization cutoff: the smallest level whose cumulative
// weight reaches one half. Planted rules treat values above it as "high",
// matching the median split the mining and calibration stages apply.
double population_median_level(const FeatureMarginal& marginal) {
    double total = 0.0;
    for (double w : marginal.weights) total += w;
    double cumulative = 0.0;
    for (std::size_t i = 0; i < marginal.levels.size(); ++i) {
        cumulative += marginal.weights[i];
        if (cumulative >= total / 2.0) return marginal.levels[i];
    }
    return marginal.levels.back();
}

void validate_generator_config(const GeneratorConfig& config) {
    if (config.count < 1) throw ConfigError("generator count must be positive");
    if (!(config.prevalence > 0.0 && config.prevalence < 1.0)) {
        throw ConfigError("generator prevalence must be inside (0, 1)");
    }
    if (!(config.base_rate >= 0.0 && config.base_rate <= 1.0)) {
        throw ConfigError("generator base_rate must be in [0, 1]");
    }
    if (config.features.empty()) throw ConfigError("generator needs at least one feature");
    std::set<std::string> names;
    for (const FeatureMarginal& marginal : config.features) {
        if (!is_feature_name(marginal.name)) {
            throw ConfigError("invalid feature name '" + marginal.name + "'");
        }
        if (!names.insert(marginal.name).second) {
            throw ConfigError("duplicate feature '" + marginal.name + "'");
        }
        if (marginal.levels.empty() || marginal.levels.size() != marginal.weights.size()) {
            throw ConfigError("feature '" + marginal.name +
                              "' needs matching nonempty levels and weights");
        }
        double total = 0.0;
        for (double w : marginal.weights) {
            if (w < 0.0) throw ConfigError("negative weight for feature '" + marginal.name + "'");
            total += w;
        }
        if (total <= 0.0) throw ConfigError("weights for '" + marginal.name + "' sum to zero");
        for (std::size_t i = 1; i < marginal.levels.size(); ++i) {
            if (!(marginal.levels[i] > marginal.levels[i - 1])) {
                throw ConfigError("levels for '" + marginal.name + "' must strictly increase");
            }
        }
    }
    for (const PlantedRule& rule : config.planted_rules) {
        if (rule.body.empty()) throw ConfigError("planted rule body is empty");
        if (!(rule.probability >= 0.0 && rule.probability <= 1.0)) {
            throw ConfigError("planted rule probability outside [0, 1]");
        }
        std::set<std::string> atoms;
        for (const Literal& lit : rule.body) {
            if (!names.count(lit.atom)) {
                throw ConfigError("planted rule references unknown feature '" + lit.atom + "'");
            }
            if (!atoms.insert(lit.token()).second) {
                throw ConfigError("duplicate literal in planted rule body");
            }
        }
    }
}

std::string phrase_for(const std::string& name, double value) {
    if (name == "education_level") {
        const int level = static_cast<int>(value);
        if (value == level && level >= 0 && level <= 3) {
            static const char* kDegrees[] = {
                "completed no formal higher education",
                "holds a bachelor's degree",
                "holds a master's degree",
                "holds a doctoral degree",
            };
            return kDegrees[level];
        }
    }
    if (name == "number_of_work_experience") {
        return "lists " + format_value(value) + " prior work experiences";
    }
    if (name == "num_acquisitions") {
        return "was involved in " + format_value(value) + " acquisitions";
    }
    if (name == "num_founded_organizations") {
        return "previously founded " + format_value(value) + " organizations";
    }
    if (name == "vc_experience") {
        return value > 0 ? "has venture capital experience rated " + format_value(value)
                         : "has no venture capital experience";
    }
    std::string words = name;
    std::replace(words.begin(), words.end(), '_', ' ');
    return words + " at level " + format_value(value);
}

}  // namespace

const std::vector<std::string>& default_vocabulary() {
    static const std::vector<std::string> kVocabulary = {
        "accelerator_participation",
        "advisor_roles",
        "big_tech_experience",
        "board_membership",
        "career_growth",
        "ceo_experience",
        "cofounder_count",
        "competition_wins",
        "consulting_background",
        "domain_expertise",
        "early_employee_experience",
        "education_institution",
        "education_level",
        "engineering_leadership",
        "equity_retained",
        "executive_experience",
        "finance_background",
        "fortune500_experience",
        "founder_network",
        "github_presence",
        "industry_diversity",
        "international_experience",
        "investor_network",
        "leadership_scale",
        "managerial_experience",
        "mba_degree",
        "media_presence",
        "num_acquisitions",
        "num_awards",
        "num_founded_organizations",
        "num_languages",
        "num_leadership_roles",
        "num_patents",
        "num_publications",
        "number_of_work_experience",
        "open_source_contributions",
        "perseverance",
        "prior_exit",
        "prior_funding_experience",
        "product_management",
        "professional_athlete",
        "public_speaking",
        "research_background",
        "risk_tolerance",
        "sales_experience",
        "serial_founder",
        "startup_experience",
        "stem_degree",
        "team_completeness",
        "technical_background",
        "vc_experience",
        "vision",
    };
    return kVocabulary;
}

Dataset load_dataset(const std::filesystem::path& path) {
    return load_dataset_impl(path, nullptr);
}

Dataset load_dataset(const std::filesystem::path& path, const std::vector<std::string>& expected) {
    return load_dataset_impl(path, &expected);
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write dataset file: " + path.string());
    out << "id,label";
    for (const std::string& name : dataset.vocabulary) out << "," << name;
    out << "\n";
    for (const FounderRecord& record : dataset.records) {
        out << record.id << "," << (record.label == Label::success ? "1" : "0");
        for (const std::string& name : dataset.vocabulary) {
            auto it = record.features.find(name);
            if (it == record.features.end()) {
                throw DataError("record '" + record.id + "' is missing feature '" + name + "'");
            }
            out << "," << format_value(it->second);
        }
        out << "\n";
    }
}

nlohmann::json NormalizationTable::to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [name, range] : ranges) {
        j[name] = {{"min", range.first}, {"max", range.second}};
    }
    return j;
}

NormalizationTable NormalizationTable::from_json(const nlohmann::json& j) {
    NormalizationTable table;
    for (const auto& [name, range] : j.items()) {
        table.ranges[name] = {range.at("min").get<double>(), range.at("max").get<double>()};
    }
    return table;
}

std::pair<Records, NormalizationTable> normalize_features(const Records& records,
                                                          const Records& stats_from) {
    if (stats_from.empty()) throw ValidationError("cannot normalize against an empty split");
    NormalizationTable table;
    for (const auto& [name, value] : stats_from.front().features) {
        table.ranges[name] = {value, value};
    }
    for (const FounderRecord& record : stats_from) {
        for (const auto& [name, value] : record.features) {
            auto it = table.ranges.find(name);
            if (it == table.ranges.end()) {
                throw SchemaError("inconsistent feature set: unexpected '" + name + "'");
            }
            it->second.first = std::min(it->second.first, value);
            it->second.second = std::max(it->second.second, value);
        }
    }
    return {apply_normalization(records, table), table};
}

Records apply_normalization(const Records& records, const NormalizationTable& table) {
    Records out = records;
    for (FounderRecord& record : out) {
        for (auto& [name, value] : record.features) {
            auto it = table.ranges.find(name);
            if (it == table.ranges.end()) {
                throw SchemaError("normalization table has no entry for feature '" + name + "'");
            }
            const auto [lo, hi] = it->second;
            if (hi > lo) {
                value = std::clamp((value - lo) / (hi - lo), 0.0, 1.0);
            } else {
                value = 0.5;
            }
        }
    }
    return out;
}

TraitProfile trait_probabilities(const FounderRecord& normalized) {
    TraitProfile profile;
    for (const auto& [name, value] : normalized.features) {
        profile.probabilities[name] = std::clamp(value, 0.05, 0.95);
    }
    return profile;
}

std::string PartitionSpec::id() const {
    return "t" + std::to_string(train_folds[0]) + std::to_string(train_folds[1]) + "v" +
           std::to_string(validation_fold) + "e" + std::to_string(test_fold);
}

std::vector<PartitionSpec> enumerate_partitions(int n_folds) {
    if (n_folds != 4) {
        throw ConfigError("cross-validation supports exactly 4 folds, got " +
                          std::to_string(n_folds));
    }
    std::vector<PartitionSpec> partitions;
    for (int a = 0; a < n_folds; ++a) {
        for (int b = a + 1; b < n_folds; ++b) {
            std::vector<int> rest;
            for (int f = 0; f < n_folds; ++f) {
                if (f != a && f != b) rest.push_back(f);
            }
            partitions.push_back(PartitionSpec{{a, b}, rest[0], rest[1]});
            partitions.push_back(PartitionSpec{{a, b}, rest[1], rest[0]});
        }
    }
    return partitions;
}

std::vector<int> assign_folds(const Records& records, int n_folds, std::uint64_t seed) {
    if (n_folds < 2) throw ConfigError("fold count must be at least 2");
    if (records.size() < static_cast<std::size_t>(n_folds)) {
        throw DataError("fewer records than folds");
    }
    std::vector<std::size_t> positives;
    std::vector<std::size_t> negatives;
    for (std::size_t i = 0; i < records.size(); ++i) {
        (records[i].label == Label::success ? positives : negatives).push_back(i);
    }
    std::vector<int> folds(records.size(), 0);
    int next_fold = 0;
    for (auto* group : {&positives, &negatives}) {
        std::mt19937_64 rng(seed_for(seed, group == &positives ? "folds.pos" : "folds.neg"));
        shuffle_seeded(*group, rng);
        for (std::size_t i = 0; i < group->size(); ++i) {
            folds[(*group)[i]] = next_fold;
            next_fold = (next_fold + 1) % n_folds;
        }
    }
    return folds;
}

std::vector<Records> sample_batches(const Records& records, int batch_size, double prevalence,
                                    std::uint64_t seed) {
    if (batch_size < 1) throw ConfigError("batch size must be positive");
    if (!(prevalence > 0.0 && prevalence < 1.0)) {
        throw ConfigError("batch prevalence must be inside (0, 1)");
    }
    const int positives_per_batch = static_cast<int>(std::llround(batch_size * prevalence));
    if (positives_per_batch < 1 || positives_per_batch >= batch_size) {
        throw ConfigError("batch composition needs at least one record of each label");
    }
    const int negatives_per_batch = batch_size - positives_per_batch;

    std::vector<std::size_t> positives;
    std::vector<std::size_t> negatives;
    for (std::size_t i = 0; i < records.size(); ++i) {
        (records[i].label == Label::success ? positives : negatives).push_back(i);
    }
    const std::size_t n_batches =
        std::min(positives.size() / positives_per_batch, negatives.size() / negatives_per_batch);
    if (n_batches == 0) {
        throw DataError("not enough " +
                        std::string(positives.size() / positives_per_batch == 0 ? "positive"
                                                                                : "negative") +
                        " records for one batch");
    }

    std::mt19937_64 rng(seed);
    shuffle_seeded(positives, rng);
    shuffle_seeded(negatives, rng);
    std::vector<Records> batches;
    for (std::size_t b = 0; b < n_batches; ++b) {
        std::vector<std::size_t> members(positives.begin() + b * positives_per_batch,
                                         positives.begin() + (b + 1) * positives_per_batch);
        members.insert(members.end(), negatives.begin() + b * negatives_per_batch,
                       negatives.begin() + (b + 1) * negatives_per_batch);
        shuffle_seeded(members, rng);
        Records batch;
        batch.reserve(members.size());
        for (std::size_t idx : members) batch.push_back(records[idx]);
        batches.push_back(std::move(batch));
    }
    return batches;
}

nlohmann::json GeneratorConfig::to_json() const {
    nlohmann::json features_json = nlohmann::json::array();
    for (const FeatureMarginal& marginal : features) {
        features_json.push_back({{"name", marginal.name},
                                 {"levels", marginal.levels},
                                 {"weights", marginal.weights}});
    }
    nlohmann::json planted_json = nlohmann::json::array();
    for (const PlantedRule& rule : planted_rules) {
        nlohmann::json body = nlohmann::json::array();
        for (const Literal& lit : rule.body) body.push_back(lit.token());
        planted_json.push_back({{"direction", direction_name(rule.direction)},
                                {"body", body},
                                {"probability", rule.probability}});
    }
    return {{"count", count},
            {"prevalence", prevalence},
            {"base_rate", base_rate},
            {"features", features_json},
            {"planted_rules", planted_json}};
}

GeneratorConfig GeneratorConfig::from_json(const nlohmann::json& j) {
    GeneratorConfig config;
    try {
        config.count = j.at("count").get<int>();
        config.prevalence = j.at("prevalence").get<double>();
        config.base_rate = j.value("base_rate", 0.0);
        for (const auto& f : j.at("features")) {
            FeatureMarginal marginal;
            marginal.name = f.at("name").get<std::string>();
            marginal.levels = f.at("levels").get<std::vector<double>>();
            marginal.weights = f.at("weights").get<std::vector<double>>();
            config.features.push_back(std::move(marginal));
        }
        for (const auto& r : j.value("planted_rules", nlohmann::json::array())) {
            PlantedRule rule;
            const std::string direction = r.at("direction").get<std::string>();
            if (direction == "success") {
                rule.direction = Direction::success;
            } else if (direction == "failure") {
                rule.direction = Direction::failure;
            } else {
                throw ConfigError("planted rule direction must be success or failure");
            }
            rule.probability = r.at("probability").get<double>();
            for (const auto& token : r.at("body")) {
                std::string name = token.get<std::string>();
                Literal lit;
                if (name.rfind("not_", 0) == 0) {
                    lit.negated = true;
                    name = name.substr(4);
                }
                lit.atom = name;
                rule.body.push_back(std::move(lit));
            }
            config.planted_rules.push_back(std::move(rule));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("invalid generator config: ") + e.what());
    }
    return config;
}

SyntheticData generate_synthetic(const GeneratorConfig& config, std::uint64_t seed) {
    validate_generator_config(config);

    const int target_pos = static_cast<int>(std::llround(config.count * config.prevalence));
    const int target_neg = config.count - target_pos;
    if (target_pos < 1 || target_neg < 1) {
        throw ConfigError("count and prevalence must yield at least one record per label");
    }
    bool has_success_cause = config.base_rate > 0.0;
    for (const PlantedRule& rule : config.planted_rules) {
        if (rule.direction == Direction::success && rule.probability > 0.0) {
            has_success_cause = true;
        }
    }
    if (!has_success_cause) {
        throw DataError("unreachable prevalence: no success mechanism configured");
    }

    struct CompiledMarginal {
        std::string name;
        std::vector<double> levels;
        std::vector<double> cumulative;  // normalized
        double high_threshold = 0.0;
    };
    std::vector<CompiledMarginal> marginals;
    std::map<std::string, std::size_t> feature_index;
    for (const FeatureMarginal& marginal : config.features) {
        CompiledMarginal cm;
        cm.name = marginal.name;
        cm.levels = marginal.levels;
        double total = 0.0;
        for (double w : marginal.weights) total += w;
        double running = 0.0;
        for (double w : marginal.weights) {
            running += w / total;
            cm.cumulative.push_back(running);
        }
        cm.cumulative.back() = 1.0;
        cm.high_threshold = population_median_level(marginal);
        feature_index[marginal.name] = marginals.size();
        marginals.push_back(std::move(cm));
    }

    std::mt19937_64 rng(seed);
    Dataset dataset;
    for (const CompiledMarginal& cm : marginals) dataset.vocabulary.push_back(cm.name);
    std::sort(dataset.vocabulary.begin(), dataset.vocabulary.end());

    int accepted_pos = 0;
    int accepted_neg = 0;
    long long attempts = 0;
    const long long attempt_budget = 500LL * config.count + 1000;
    std::vector<double> values(marginals.size(), 0.0);
    while (accepted_pos < target_pos || accepted_neg < target_neg) {
        if (++attempts > attempt_budget) {
            throw DataError("unreachable prevalence: attempt budget exhausted after " +
                            std::to_string(attempt_budget) + " draws");
        }
        for (std::size_t i = 0; i < marginals.size(); ++i) {
            const double u = uniform01(rng);
            const auto& cum = marginals[i].cumulative;
            const std::size_t idx =
                std::lower_bound(cum.begin(), cum.end(), u) - cum.begin();
            values[i] = marginals[i].levels[std::min(idx, cum.size() - 1)];
        }
        auto matches = [&](const std::vector<Literal>& body) {
            for (const Literal& lit : body) {
                const std::size_t idx = feature_index.at(lit.atom);
                const bool high = values[idx] > marginals[idx].high_threshold;
                if (high == lit.negated) return false;
            }
            return true;
        };
        double none_fire = 1.0 - config.base_rate;
        double suppression = 1.0;
        for (const PlantedRule& rule : config.planted_rules) {
            if (!matches(rule.body)) continue;
            if (rule.direction == Direction::success) {
                none_fire *= 1.0 - rule.probability;
            } else {
                suppression *= 1.0 - rule.probability;
            }
        }
        const double p_success = (1.0 - none_fire) * suppression;
        const bool success = bernoulli(rng, p_success);
        int& quota = success ? accepted_pos : accepted_neg;
        const int target = success ? target_pos : target_neg;
        if (quota >= target) continue;
        ++quota;

        FounderRecord record;
        char id[32];
        std::snprintf(id, sizeof(id), "synth_%06d", accepted_pos + accepted_neg - 1);
        record.id = id;
        record.label = success ? Label::success : Label::failure;
        for (std::size_t i = 0; i < marginals.size(); ++i) {
            record.features[marginals[i].name] = values[i];
        }
        dataset.records.push_back(std::move(record));
    }

    nlohmann::json thresholds = nlohmann::json::object();
    for (const CompiledMarginal& cm : marginals) thresholds[cm.name] = cm.high_threshold;
    nlohmann::json metadata = {{"generator", config.to_json()},
                               {"seed", seed},
                               {"count", config.count},
                               {"positives", target_pos},
                               {"negatives", target_neg},
                               {"attempts", attempts},
                               {"high_thresholds", thresholds}};
    return SyntheticData{std::move(dataset), std::move(metadata)};
}

std::string render_profile(const FounderRecord& record) {
    std::string profile = "Founder background:";
    for (const auto& [name, value] : record.features) {
        profile += "\n- " + phrase_for(name, value);
    }
    return profile;
}

}  // namespace llmar
