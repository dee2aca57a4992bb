#include "llmar/policy.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <sstream>

#include "llmar/errors.hpp"

namespace llmar {

namespace {

std::string trim(const std::string& s) {
    std::size_t begin = 0;
    std::size_t end = s.size();
    while (begin < end && std::isspace(static_cast<unsigned char>(s[begin]))) ++begin;
    while (end > begin && std::isspace(static_cast<unsigned char>(s[end - 1]))) --end;
    return s.substr(begin, end - begin);
}

std::string lowercase(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

bool is_atom_name(const std::string& s) {
    if (s.empty()) return false;
    if (!(s[0] >= 'a' && s[0] <= 'z')) return false;
    for (char c : s) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_';
        if (!ok) return false;
    }
    return true;
}

Literal literal_from_token(const std::string& token, int line) {
    std::string name = token;
    bool negated = false;
    if (name.rfind("not_", 0) == 0) {
        negated = true;
        name = name.substr(4);
    }
    if (!is_atom_name(name)) {
        throw ParseError("invalid atom '" + token + "'", line);
    }
    if (name.rfind("not_", 0) == 0) {
        throw ParseError("atom '" + token + "' nests the negation prefix", line);
    }
    return Literal{name, negated};
}

double parse_probability(const std::string& text, int line) {
    const std::string value = trim(text);
    if (value.empty()) throw ParseError("missing probability", line);
    std::size_t consumed = 0;
    double p = 0.0;
    try {
        p = std::stod(value, &consumed);
    } catch (const std::exception&) {
        throw ParseError("invalid probability '" + value + "'", line);
    }
    if (consumed != value.size()) {
        throw ParseError("invalid probability '" + value + "'", line);
    }
    if (!(p >= 0.0 && p <= 1.0)) {
        throw ParseError("probability " + value + " outside [0, 1]", line);
    }
    return p;
}

Rule parse_rule_line(const std::string& line, int lineno, Direction direction) {
    const std::size_t comma = line.rfind(',');
    if (comma == std::string::npos) {
        throw ParseError("expected '<body>,<probability>'", lineno);
    }
    Rule rule;
    rule.direction = direction;
    rule.probability = parse_probability(line.substr(comma + 1), lineno);

    const std::string body_text = trim(line.substr(0, comma));
    if (body_text.empty()) throw ParseError("empty rule body", lineno);

    std::istringstream words(body_text);
    std::string word;
    bool expect_literal = true;
    while (words >> word) {
        if (expect_literal) {
            rule.body.push_back(literal_from_token(word, lineno));
        } else if (word != "AND") {
            throw ParseError("expected AND between literals, got '" + word + "'", lineno);
        }
        expect_literal = !expect_literal;
    }
    if (expect_literal) {
        throw ParseError("rule body ends with a dangling AND", lineno);
    }
    if (rule.body.size() > kMaxBodyLiterals) {
        throw ParseError("rule body exceeds " + std::to_string(kMaxBodyLiterals) + " literals",
                         lineno);
    }
    std::set<Literal> seen(rule.body.begin(), rule.body.end());
    if (seen.size() != rule.body.size()) {
        throw ValidationError("line " + std::to_string(lineno) + ": duplicate literal in rule body");
    }
    return rule;
}

std::string format_two_decimals(double p) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%.2f", p);
    return buf;
}

// Shortest float rendering that still survives a parse round trip for the
// probability grids this pipeline emits.
std::string format_fact_probability(double p) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.10g", p);
    return buf;
}

void check_unique_bodies(const std::vector<Rule>& rules, Direction direction) {
    std::set<std::string> keys;
    for (const Rule& rule : rules) {
        if (!keys.insert(body_key(rule.body)).second) {
            throw ValidationError(std::string("duplicate rule body in ") +
                                  direction_name(direction) + " section: " + body_key(rule.body));
        }
    }
}

}  // namespace

const char* direction_name(Direction d) {
    return d == Direction::success ? "success" : "failure";
}

const char* calibration_name(Calibration c) {
    switch (c) {
        case Calibration::uncalibrated: return "uncalibrated";
        case Calibration::calibrated: return "calibrated";
        case Calibration::insufficient_samples: return "insufficient_samples";
    }
    return "uncalibrated";
}

std::string body_key(const std::vector<Literal>& body) {
    std::vector<std::string> tokens;
    tokens.reserve(body.size());
    for (const Literal& lit : body) tokens.push_back(lit.token());
    std::sort(tokens.begin(), tokens.end());
    std::string key;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i > 0) key += "&";
        key += tokens[i];
    }
    return key;
}

Policy parse_policy(const std::string& text) {
    Policy policy;
    std::istringstream stream(text);
    std::string raw;
    int lineno = 0;
    enum class Section { before, success, failure } section = Section::before;

    while (std::getline(stream, raw)) {
        ++lineno;
        if (!raw.empty() && raw.back() == '\r') raw.pop_back();
        const std::string line = trim(raw);
        if (line.empty()) continue;
        const std::string folded = lowercase(line);
        if (folded == "success rules:") {
            if (section != Section::before) {
                throw ParseError("unexpected second 'Success rules:' header", lineno);
            }
            section = Section::success;
            continue;
        }
        if (folded == "failure rules:") {
            if (section == Section::failure) {
                throw ParseError("unexpected second 'Failure rules:' header", lineno);
            }
            section = Section::failure;
            continue;
        }
        switch (section) {
            case Section::before:
                throw ParseError("expected 'Success rules:' header before any rule", lineno);
            case Section::success:
                policy.success_rules.push_back(parse_rule_line(line, lineno, Direction::success));
                break;
            case Section::failure:
                policy.failure_rules.push_back(parse_rule_line(line, lineno, Direction::failure));
                break;
        }
    }
    if (section == Section::before) {
        throw ParseError("missing 'Success rules:' header");
    }
    check_unique_bodies(policy.success_rules, Direction::success);
    check_unique_bodies(policy.failure_rules, Direction::failure);
    return policy;
}

std::string serialize_policy(const Policy& policy) {
    std::string out = "Success rules:\n";
    auto append = [&out](const Rule& rule) {
        for (std::size_t i = 0; i < rule.body.size(); ++i) {
            if (i > 0) out += " AND ";
            out += rule.body[i].token();
        }
        out += "," + format_two_decimals(rule.probability) + "\n";
    };
    for (const Rule& rule : policy.success_rules) append(rule);
    out += "\nFailure rules:\n";
    for (const Rule& rule : policy.failure_rules) append(rule);
    return out;
}

void validate_policy(const Policy& policy) {
    if (policy.iteration < 0) {
        throw ValidationError("policy iteration must be nonnegative");
    }
    auto check_rules = [](const std::vector<Rule>& rules, Direction direction) {
        for (const Rule& rule : rules) {
            if (rule.direction != direction) {
                throw ValidationError(std::string("rule direction does not match its ") +
                                      direction_name(direction) + " section");
            }
            if (rule.body.empty()) throw ValidationError("rule body is empty");
            if (rule.body.size() > kMaxBodyLiterals) {
                throw ValidationError("rule body exceeds " + std::to_string(kMaxBodyLiterals) +
                                      " literals");
            }
            std::set<Literal> seen(rule.body.begin(), rule.body.end());
            if (seen.size() != rule.body.size()) {
                throw ValidationError("duplicate literal in rule body: " + body_key(rule.body));
            }
            for (const Literal& lit : rule.body) {
                if (!is_atom_name(lit.atom) || lit.atom.rfind("not_", 0) == 0) {
                    throw ValidationError("invalid atom '" + lit.atom + "'");
                }
            }
            if (!(rule.probability >= 0.0 && rule.probability <= 1.0)) {
                throw ValidationError("rule probability outside [0, 1]: " + body_key(rule.body));
            }
        }
        check_unique_bodies(rules, direction);
    };
    check_rules(policy.success_rules, Direction::success);
    check_rules(policy.failure_rules, Direction::failure);
}

std::set<std::string> policy_atoms(const Policy& policy) {
    std::set<std::string> atoms;
    for (const auto* rules : {&policy.success_rules, &policy.failure_rules}) {
        for (const Rule& rule : *rules) {
            for (const Literal& lit : rule.body) atoms.insert(lit.atom);
        }
    }
    return atoms;
}

std::string emit_problog_program(const Policy& policy, const std::map<std::string, double>& facts) {
    validate_policy(policy);
    std::vector<std::string> missing;
    for (const std::string& atom : policy_atoms(policy)) {
        if (!facts.count(atom)) missing.push_back(atom);
    }
    if (!missing.empty()) throw MissingFactError(missing);
    for (const auto& [atom, p] : facts) {
        if (!is_atom_name(atom) || atom.rfind("not_", 0) == 0 || atom == "success" ||
            atom == "failure") {
            throw ValidationError("invalid fact atom '" + atom + "'");
        }
        if (!(p >= 0.0 && p <= 1.0)) {
            throw ValidationError("fact probability outside [0, 1] for atom '" + atom + "'");
        }
    }

    std::string out;
    for (const auto& [atom, p] : facts) {
        out += format_fact_probability(p) + "::" + atom + ".\n";
    }
    out += "\n";
    for (const auto* rules : {&policy.success_rules, &policy.failure_rules}) {
        for (const Rule& rule : *rules) {
            out += format_fact_probability(rule.probability);
            out += "::";
            out += direction_name(rule.direction);
            out += " :- ";
            for (std::size_t i = 0; i < rule.body.size(); ++i) {
                if (i > 0) out += ",";
                if (rule.body[i].negated) out += "\\+";
                out += rule.body[i].atom;
            }
            out += ".\n";
        }
    }
    if (!policy.empty()) out += "\n";
    out += "query(success).\nquery(failure).\n";
    return out;
}

}  // namespace llmar
