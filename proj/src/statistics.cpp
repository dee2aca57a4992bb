#include "llmar/statistics.hpp"

#include <algorithm>
#include <bit>
#include <numeric>

#include "llmar/errors.hpp"
#include "llmar/rng.hpp"

namespace llmar {

namespace {

constexpr const char* kSuccessItem = "success";
constexpr const char* kFailureItem = "failure";

double median_of(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    if (n % 2 == 1) return values[n / 2];
    return (values[n / 2 - 1] + values[n / 2]) / 2.0;
}

Literal literal_from_item(const std::string& item) {
    if (item.rfind("not_", 0) == 0) return Literal{item.substr(4), true};
    return Literal{item, false};
}

// Transactions stored column-wise: one bitset over transactions per item, so
// itemset supports reduce to AND + popcount.
struct VerticalIndex {
    std::vector<std::string> items;         // id -> item string
    std::map<std::string, int> item_ids;
    std::vector<std::vector<std::uint64_t>> columns;
    std::size_t n_transactions = 0;
    std::size_t words = 0;

    explicit VerticalIndex(const std::vector<Transaction>& transactions) {
        n_transactions = transactions.size();
        words = (n_transactions + 63) / 64;
        for (const Transaction& t : transactions) {
            for (const std::string& item : t) {
                if (item_ids.emplace(item, static_cast<int>(items.size())).second) {
                    items.push_back(item);
                    columns.emplace_back(words, 0);
                }
            }
        }
        for (std::size_t row = 0; row < transactions.size(); ++row) {
            for (const std::string& item : transactions[row]) {
                columns[item_ids.at(item)][row / 64] |= 1ULL << (row % 64);
            }
        }
    }

    std::size_t count(const std::vector<int>& itemset) const {
        std::size_t total = 0;
        for (std::size_t w = 0; w < words; ++w) {
            std::uint64_t bits = columns[itemset[0]][w];
            for (std::size_t k = 1; k < itemset.size() && bits; ++k) {
                bits &= columns[itemset[k]][w];
            }
            total += std::popcount(bits);
        }
        return total;
    }
};

}  // namespace

FeatureThresholds binarize_thresholds(const Records& records) {
    if (records.empty()) throw DataError("cannot binarize an empty record set");
    FeatureThresholds thresholds;
    for (const auto& [name, value] : records.front().features) {
        (void)value;
        if (name == kSuccessItem || name == kFailureItem) {
            throw ValidationError("feature name collides with outcome item: " + name);
        }
        std::vector<double> values;
        values.reserve(records.size());
        for (const FounderRecord& record : records) {
            auto it = record.features.find(name);
            if (it == record.features.end()) {
                throw SchemaError("record '" + record.id + "' is missing feature '" + name + "'");
            }
            values.push_back(it->second);
        }
        thresholds[name] = median_of(std::move(values));
    }
    return thresholds;
}

std::vector<Transaction> binarize(const Records& records, const FeatureThresholds& thresholds) {
    std::vector<Transaction> transactions;
    transactions.reserve(records.size());
    for (const FounderRecord& record : records) {
        Transaction t;
        for (const auto& [name, value] : record.features) {
            auto it = thresholds.find(name);
            if (it == thresholds.end()) {
                throw SchemaError("no binarization threshold for feature '" + name + "'");
            }
            t.insert(value > it->second ? name : "not_" + name);
        }
        t.insert(record.label == Label::success ? kSuccessItem : kFailureItem);
        transactions.push_back(std::move(t));
    }
    return transactions;
}

std::vector<Transaction> binarize(const Records& records) {
    return binarize(records, binarize_thresholds(records));
}

bool literal_matches(const FounderRecord& record, const Literal& literal,
                     const FeatureThresholds& thresholds) {
    auto value = record.features.find(literal.atom);
    if (value == record.features.end()) {
        throw MissingFactError({literal.atom});
    }
    auto threshold = thresholds.find(literal.atom);
    if (threshold == thresholds.end()) {
        throw SchemaError("no binarization threshold for feature '" + literal.atom + "'");
    }
    const bool high = value->second > threshold->second;
    return high != literal.negated;
}

bool body_matches(const FounderRecord& record, const std::vector<Literal>& body,
                  const FeatureThresholds& thresholds) {
    for (const Literal& literal : body) {
        if (!literal_matches(record, literal, thresholds)) return false;
    }
    return true;
}

std::vector<MinedRule> mine_rules(const std::vector<Transaction>& transactions,
                                  const MiningParams& params) {
    if (transactions.empty()) throw DataError("cannot mine an empty transaction list");
    if (!(params.min_support > 0.0 && params.min_support <= 1.0)) {
        throw ConfigError("min_support must be inside (0, 1]");
    }
    if (!(params.min_confidence > 0.0 && params.min_confidence <= 1.0)) {
        throw ConfigError("min_confidence must be inside (0, 1]");
    }
    if (params.max_len < 1 || params.max_len > 4) {
        throw ConfigError("max_len must be between 1 and 4");
    }

    const VerticalIndex index(transactions);
    const double n = static_cast<double>(index.n_transactions);
    auto frequent = [&](std::size_t count) {
        return static_cast<double>(count) / n >= params.min_support;
    };

    std::vector<int> label_ids;
    for (const char* label : {kSuccessItem, kFailureItem}) {
        auto it = index.item_ids.find(label);
        if (it != index.item_ids.end()) label_ids.push_back(it->second);
    }
    auto is_label = [&](int id) {
        return std::find(label_ids.begin(), label_ids.end(), id) != label_ids.end();
    };

    // frequent itemsets per level, as sorted id vectors with their counts
    std::map<std::vector<int>, std::size_t> all_frequent;
    std::vector<std::vector<int>> level;
    for (int id = 0; id < static_cast<int>(index.items.size()); ++id) {
        const std::size_t count = index.count({id});
        if (frequent(count)) {
            level.push_back({id});
            all_frequent[{id}] = count;
        }
    }

    const int max_itemset = params.max_len + 1;  // antecedent plus one outcome item
    for (int size = 2; size <= max_itemset && !level.empty(); ++size) {
        std::vector<std::vector<int>> next;
        for (std::size_t a = 0; a < level.size(); ++a) {
            for (std::size_t b = a + 1; b < level.size(); ++b) {
                if (!std::equal(level[a].begin(), level[a].end() - 1, level[b].begin())) break;
                std::vector<int> candidate = level[a];
                candidate.push_back(level[b].back());
                std::sort(candidate.end() - 2, candidate.end());

                int labels_inside = 0;
                for (int id : candidate) labels_inside += is_label(id);
                if (labels_inside > 1) continue;
                // The last level only feeds rule generation, which needs an
                // outcome item; pure feature itemsets that long are unused.
                if (size == max_itemset && labels_inside == 0) continue;

                bool all_subsets_frequent = true;
                std::vector<int> subset(candidate.begin() + 1, candidate.end());
                for (std::size_t drop = 0; drop <= subset.size(); ++drop) {
                    if (!all_frequent.count(subset)) {
                        all_subsets_frequent = false;
                        break;
                    }
                    if (drop < subset.size()) subset[drop] = candidate[drop];
                }
                if (!all_subsets_frequent) continue;

                const std::size_t count = index.count(candidate);
                if (frequent(count)) {
                    all_frequent[candidate] = count;
                    next.push_back(std::move(candidate));
                }
            }
        }
        std::sort(next.begin(), next.end());
        next.erase(std::unique(next.begin(), next.end()), next.end());
        level = std::move(next);
    }

    std::vector<MinedRule> rules;
    for (const auto& [itemset, count] : all_frequent) {
        if (itemset.size() < 2) continue;
        int label_id = -1;
        std::vector<int> antecedent_ids;
        for (int id : itemset) {
            if (is_label(id)) {
                label_id = id;
            } else {
                antecedent_ids.push_back(id);
            }
        }
        if (label_id < 0 || antecedent_ids.empty()) continue;
        const std::size_t antecedent_count = all_frequent.at(antecedent_ids);
        const double confidence =
            static_cast<double>(count) / static_cast<double>(antecedent_count);
        if (confidence < params.min_confidence) continue;

        MinedRule rule;
        rule.consequent =
            index.items[label_id] == kSuccessItem ? Direction::success : Direction::failure;
        rule.support = static_cast<double>(count) / n;
        rule.confidence = confidence;
        rule.count = count;
        for (int id : antecedent_ids) rule.antecedent.push_back(literal_from_item(index.items[id]));
        std::sort(rule.antecedent.begin(), rule.antecedent.end(),
                  [](const Literal& a, const Literal& b) { return a.token() < b.token(); });
        rules.push_back(std::move(rule));
    }

    std::sort(rules.begin(), rules.end(), [](const MinedRule& a, const MinedRule& b) {
        if (a.confidence != b.confidence) return a.confidence > b.confidence;
        if (a.support != b.support) return a.support > b.support;
        const auto tokens = [](const MinedRule& r) {
            std::vector<std::string> out;
            for (const Literal& lit : r.antecedent) out.push_back(lit.token());
            return out;
        };
        const auto ta = tokens(a);
        const auto tb = tokens(b);
        if (ta != tb) return ta < tb;
        return a.consequent == Direction::success && b.consequent == Direction::failure;
    });
    return rules;
}

HintSelection select_hints(const std::vector<MinedRule>& mined, int success_k, int failure_k,
                           double failure_min_confidence) {
    HintSelection hints;
    for (const MinedRule& rule : mined) {
        if (rule.consequent == Direction::success) {
            if (static_cast<int>(hints.success_hints.size()) < success_k) {
                hints.success_hints.push_back(rule);
            }
        } else if (rule.confidence >= failure_min_confidence &&
                   static_cast<int>(hints.failure_hints.size()) < failure_k) {
            hints.failure_hints.push_back(rule);
        }
    }
    return hints;
}

nlohmann::json CalibrationReport::to_json() const {
    nlohmann::json entries_json = nlohmann::json::array();
    for (const RuleCalibration& entry : entries) {
        nlohmann::json body = nlohmann::json::array();
        for (const Literal& lit : entry.body) body.push_back(lit.token());
        entries_json.push_back({{"direction", direction_name(entry.direction)},
                                {"body", body},
                                {"original_probability", entry.original_probability},
                                {"probability", entry.probability},
                                {"matched", entry.matched},
                                {"matched_direction", entry.matched_direction},
                                {"status", calibration_name(entry.status)}});
    }
    return {{"entries", entries_json}, {"sample_size", sample_size}, {"seed", seed}};
}

CalibrationReport CalibrationReport::from_json(const nlohmann::json& j) {
    CalibrationReport report;
    report.sample_size = j.at("sample_size").get<std::size_t>();
    report.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& e : j.at("entries")) {
        RuleCalibration entry;
        entry.direction = e.at("direction").get<std::string>() == "success" ? Direction::success
                                                                            : Direction::failure;
        for (const auto& token : e.at("body")) {
            entry.body.push_back(literal_from_item(token.get<std::string>()));
        }
        entry.original_probability = e.at("original_probability").get<double>();
        entry.probability = e.at("probability").get<double>();
        entry.matched = e.at("matched").get<std::size_t>();
        entry.matched_direction = e.at("matched_direction").get<std::size_t>();
        const std::string status = e.at("status").get<std::string>();
        entry.status = status == "calibrated"            ? Calibration::calibrated
                       : status == "insufficient_samples" ? Calibration::insufficient_samples
                                                          : Calibration::uncalibrated;
        report.entries.push_back(std::move(entry));
    }
    return report;
}

std::pair<Policy, CalibrationReport> calibrate_policy(const Policy& policy,
                                                      const Records& training,
                                                      const CalibrationParams& params) {
    validate_policy(policy);
    if (training.empty()) throw DataError("cannot calibrate against an empty training set");
    if (params.sample_size == 0) throw ConfigError("calibration sample_size must be positive");
    if (params.min_samples == 0) throw ConfigError("calibration min_samples must be positive");

    const FeatureThresholds thresholds = binarize_thresholds(training);

    std::vector<std::size_t> indices(training.size());
    std::iota(indices.begin(), indices.end(), 0);
    std::mt19937_64 rng(params.seed);
    shuffle_seeded(indices, rng);
    indices.resize(std::min(params.sample_size, indices.size()));

    Policy calibrated = policy;
    CalibrationReport report;
    report.sample_size = indices.size();
    report.seed = params.seed;

    for (auto* rules : {&calibrated.success_rules, &calibrated.failure_rules}) {
        for (Rule& rule : *rules) {
            RuleCalibration entry;
            entry.direction = rule.direction;
            entry.body = rule.body;
            entry.original_probability = rule.probability;
            for (std::size_t idx : indices) {
                const FounderRecord& record = training[idx];
                if (!body_matches(record, rule.body, thresholds)) continue;
                ++entry.matched;
                const bool is_success = record.label == Label::success;
                if (is_success == (rule.direction == Direction::success)) {
                    ++entry.matched_direction;
                }
            }
            if (entry.matched < params.min_samples) {
                entry.status = Calibration::insufficient_samples;
                entry.probability = rule.probability;
            } else {
                entry.status = Calibration::calibrated;
                entry.probability = static_cast<double>(entry.matched_direction) /
                                    static_cast<double>(entry.matched);
                rule.probability = entry.probability;
            }
            rule.calibration = entry.status;
            report.entries.push_back(std::move(entry));
        }
    }
    return {std::move(calibrated), std::move(report)};
}

PruneResult prune_policy(const Policy& policy, const CalibrationReport& report) {
    validate_policy(policy);
    std::map<std::string, const RuleCalibration*> by_key;
    for (const RuleCalibration& entry : report.entries) {
        by_key[std::string(direction_name(entry.direction)) + "|" + body_key(entry.body)] = &entry;
    }

    PruneResult result;
    result.policy.id = policy.id;
    result.policy.iteration = policy.iteration;
    auto keep = [&](const Rule& rule) {
        auto it = by_key.find(std::string(direction_name(rule.direction)) + "|" +
                              body_key(rule.body));
        if (it == by_key.end()) {
            throw ValidationError("calibration report does not cover rule: " +
                                  body_key(rule.body));
        }
        const RuleCalibration& entry = *it->second;
        if (entry.status != Calibration::calibrated) {
            result.removed.push_back(entry);
            return false;
        }
        const double floor = rule.direction == Direction::success ? 0.1 : 0.9;
        if (entry.probability < floor) {
            result.removed.push_back(entry);
            return false;
        }
        return true;
    };
    for (const Rule& rule : policy.success_rules) {
        if (keep(rule)) result.policy.success_rules.push_back(rule);
    }
    for (const Rule& rule : policy.failure_rules) {
        if (keep(rule)) result.policy.failure_rules.push_back(rule);
    }
    result.emptied = !policy.empty() && result.policy.empty();
    return result;
}

nlohmann::json RescaleReport::to_json() const {
    nlohmann::json entries_json = nlohmann::json::array();
    for (const Entry& entry : entries) {
        nlohmann::json body = nlohmann::json::array();
        for (const Literal& lit : entry.body) body.push_back(lit.token());
        entries_json.push_back({{"direction", direction_name(entry.direction)},
                                {"body", body},
                                {"original", entry.original},
                                {"rescaled", entry.rescaled}});
    }
    return {{"entries", entries_json}};
}

std::pair<Policy, RescaleReport> rescale_probabilities(const Policy& policy) {
    validate_policy(policy);
    Policy rescaled = policy;
    RescaleReport report;
    for (auto* rules : {&rescaled.success_rules, &rescaled.failure_rules}) {
        if (rules->empty()) continue;
        double lo = rules->front().probability;
        double hi = lo;
        for (const Rule& rule : *rules) {
            lo = std::min(lo, rule.probability);
            hi = std::max(hi, rule.probability);
        }
        const bool degenerate = rules->size() == 1 || hi - lo < 1e-12;
        for (Rule& rule : *rules) {
            RescaleReport::Entry entry;
            entry.direction = rule.direction;
            entry.body = rule.body;
            entry.original = rule.probability;
            rule.probability =
                degenerate ? 0.5 : 0.1 + 0.8 * (rule.probability - lo) / (hi - lo);
            entry.rescaled = rule.probability;
            report.entries.push_back(std::move(entry));
        }
    }
    return {std::move(rescaled), std::move(report)};
}

}  // namespace llmar
