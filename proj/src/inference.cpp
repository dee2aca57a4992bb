#include "llmar/inference.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include "llmar/errors.hpp"
#include "llmar/rng.hpp"

namespace llmar {

namespace {

struct CompiledClause {
    std::uint64_t pos_mask = 0;
    std::uint64_t neg_mask = 0;
    double probability = 0.0;
    Direction head = Direction::success;
};

struct CompiledProgram {
    std::vector<double> fact_probs;  // in sorted atom order
    std::vector<CompiledClause> clauses;
};

CompiledProgram compile(const ProbProgram& program) {
    CompiledProgram compiled;
    std::map<std::string, int> index;
    for (const auto& [atom, p] : program.facts) {
        index.emplace(atom, static_cast<int>(compiled.fact_probs.size()));
        compiled.fact_probs.push_back(p);
    }
    for (const Clause& clause : program.clauses) {
        CompiledClause cc;
        cc.probability = clause.probability;
        cc.head = clause.head;
        for (const Literal& lit : clause.body) {
            const std::uint64_t bit = 1ULL << index.at(lit.atom);
            (lit.negated ? cc.neg_mask : cc.pos_mask) |= bit;
        }
        compiled.clauses.push_back(cc);
    }
    return compiled;
}

double clamp01(double x) {
    return std::min(1.0, std::max(0.0, x));
}

std::string trim(const std::string& s) {
    std::size_t begin = 0;
    std::size_t end = s.size();
    while (begin < end && std::isspace(static_cast<unsigned char>(s[begin]))) ++begin;
    while (end > begin && std::isspace(static_cast<unsigned char>(s[end - 1]))) --end;
    return s.substr(begin, end - begin);
}

double parse_program_probability(const std::string& text, int line) {
    const std::string value = trim(text);
    std::size_t consumed = 0;
    double p = 0.0;
    try {
        p = std::stod(value, &consumed);
    } catch (const std::exception&) {
        throw ParseError("invalid probability '" + value + "'", line);
    }
    if (consumed != value.size()) throw ParseError("invalid probability '" + value + "'", line);
    if (!(p >= 0.0 && p <= 1.0)) throw ParseError("probability " + value + " outside [0, 1]", line);
    return p;
}

}  // namespace

int choice_count(const ProbProgram& program) {
    return static_cast<int>(program.facts.size() + program.clauses.size());
}

void validate_program(const ProbProgram& program) {
    for (const auto& [atom, p] : program.facts) {
        if (atom.empty()) throw ValidationError("empty fact atom");
        if (!(p >= 0.0 && p <= 1.0)) {
            throw ValidationError("fact probability outside [0, 1] for atom '" + atom + "'");
        }
    }
    if (program.facts.size() > 63) {
        throw CapacityError("program has more than 63 facts");
    }
    for (const Clause& clause : program.clauses) {
        if (!(clause.probability >= 0.0 && clause.probability <= 1.0)) {
            throw ValidationError("clause probability outside [0, 1]");
        }
        if (clause.body.empty()) throw ValidationError("clause body is empty");
        std::vector<std::string> missing;
        for (const Literal& lit : clause.body) {
            if (!program.facts.count(lit.atom)) missing.push_back(lit.atom);
        }
        if (!missing.empty()) {
            std::sort(missing.begin(), missing.end());
            missing.erase(std::unique(missing.begin(), missing.end()), missing.end());
            throw MissingFactError(missing);
        }
    }
}

InferenceResult infer_exact(const ProbProgram& program, int exact_limit) {
    validate_program(program);
    const int choices = choice_count(program);
    if (choices > exact_limit) {
        throw CapacityError("program has " + std::to_string(choices) +
                            " choices, exact limit is " + std::to_string(exact_limit) +
                            "; use sampled inference");
    }
    const CompiledProgram compiled = compile(program);
    const std::size_t n_facts = compiled.fact_probs.size();

    double p_success = 0.0;
    double p_failure = 0.0;
    const std::uint64_t worlds = 1ULL << n_facts;
    for (std::uint64_t world = 0; world < worlds; ++world) {
        double weight = 1.0;
        for (std::size_t i = 0; i < n_facts; ++i) {
            weight *= (world >> i & 1) ? compiled.fact_probs[i] : 1.0 - compiled.fact_probs[i];
        }
        if (weight == 0.0) continue;
        // Each clause switch appears in exactly one clause, so given the fact
        // world the switches are independent and their mass sums analytically.
        double none_success = 1.0;
        double none_failure = 1.0;
        for (const CompiledClause& cc : compiled.clauses) {
            const bool body_holds =
                (world & cc.pos_mask) == cc.pos_mask && (world & cc.neg_mask) == 0;
            if (!body_holds) continue;
            (cc.head == Direction::success ? none_success : none_failure) *= 1.0 - cc.probability;
        }
        p_success += weight * (1.0 - none_success);
        p_failure += weight * (1.0 - none_failure);
    }
    return InferenceResult{clamp01(p_success), clamp01(p_failure), InferenceMode::exact, 0};
}

InferenceResult infer_sampled(const ProbProgram& program, std::uint64_t n, std::uint64_t seed) {
    validate_program(program);
    if (n == 0) throw ConfigError("sample count must be positive");
    const CompiledProgram compiled = compile(program);
    const std::size_t n_facts = compiled.fact_probs.size();

    std::mt19937_64 rng(seed);
    std::uint64_t success_count = 0;
    std::uint64_t failure_count = 0;
    for (std::uint64_t s = 0; s < n; ++s) {
        std::uint64_t world = 0;
        for (std::size_t i = 0; i < n_facts; ++i) {
            if (bernoulli(rng, compiled.fact_probs[i])) world |= 1ULL << i;
        }
        bool success = false;
        bool failure = false;
        for (const CompiledClause& cc : compiled.clauses) {
            const bool switch_on = bernoulli(rng, cc.probability);
            const bool body_holds =
                (world & cc.pos_mask) == cc.pos_mask && (world & cc.neg_mask) == 0;
            if (switch_on && body_holds) {
                (cc.head == Direction::success ? success : failure) = true;
            }
        }
        success_count += success;
        failure_count += failure;
    }
    return InferenceResult{static_cast<double>(success_count) / static_cast<double>(n),
                           static_cast<double>(failure_count) / static_cast<double>(n),
                           InferenceMode::sampled, n};
}

InferenceResult infer(const ProbProgram& program, const InferenceConfig& config) {
    if (choice_count(program) <= config.exact_limit) {
        return infer_exact(program, config.exact_limit);
    }
    return infer_sampled(program, config.sample_count, config.seed);
}

ProbProgram ground_policy(const Policy& policy, const std::map<std::string, double>& traits) {
    validate_policy(policy);
    ProbProgram program;
    std::vector<std::string> missing;
    for (const std::string& atom : policy_atoms(policy)) {
        auto it = traits.find(atom);
        if (it == traits.end()) {
            missing.push_back(atom);
        } else {
            program.facts.emplace(atom, it->second);
        }
    }
    if (!missing.empty()) throw MissingFactError(missing);
    for (const auto* rules : {&policy.success_rules, &policy.failure_rules}) {
        for (const Rule& rule : *rules) {
            program.clauses.push_back(Clause{rule.direction, rule.body, rule.probability});
        }
    }
    return program;
}

InferenceResult query_founder(const Policy& policy, const std::map<std::string, double>& traits,
                              const InferenceConfig& config) {
    return infer(ground_policy(policy, traits), config);
}

ProbProgram parse_program(const std::string& text) {
    ProbProgram program;
    std::istringstream stream(text);
    std::string raw;
    int lineno = 0;
    while (std::getline(stream, raw)) {
        ++lineno;
        if (!raw.empty() && raw.back() == '\r') raw.pop_back();
        std::string line = trim(raw);
        if (line.empty()) continue;
        // Query lines carry no distribution information; the trailing period
        // is optional because published listings omit it.
        if (line.rfind("query(", 0) == 0) continue;
        if (line.back() != '.') throw ParseError("expected trailing '.'", lineno);
        line.pop_back();

        const std::size_t sep = line.find("::");
        if (sep == std::string::npos) throw ParseError("expected '<probability>::'", lineno);
        const double p = parse_program_probability(line.substr(0, sep), lineno);
        const std::string rest = trim(line.substr(sep + 2));

        const std::size_t arrow = rest.find(":-");
        if (arrow == std::string::npos) {
            if (rest.empty()) throw ParseError("missing fact atom", lineno);
            if (!program.facts.emplace(rest, p).second) {
                throw ParseError("duplicate fact '" + rest + "'", lineno);
            }
            continue;
        }
        Clause clause;
        clause.probability = p;
        const std::string head = trim(rest.substr(0, arrow));
        if (head == "success") {
            clause.head = Direction::success;
        } else if (head == "failure") {
            clause.head = Direction::failure;
        } else {
            throw ParseError("clause head must be success or failure, got '" + head + "'", lineno);
        }
        std::string body = trim(rest.substr(arrow + 2));
        if (body.empty()) throw ParseError("empty clause body", lineno);
        std::istringstream parts(body);
        std::string token;
        while (std::getline(parts, token, ',')) {
            token = trim(token);
            Literal lit;
            if (token.rfind("\\+", 0) == 0) {
                lit.negated = true;
                token = trim(token.substr(2));
            }
            if (token.empty()) throw ParseError("empty literal in clause body", lineno);
            lit.atom = token;
            clause.body.push_back(lit);
        }
        program.clauses.push_back(clause);
    }
    validate_program(program);
    return program;
}

}  // namespace llmar
