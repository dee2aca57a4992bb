#pragma once

#include <compare>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace llmar {

enum class Direction { success, failure };

const char* direction_name(Direction d);

// Calibration lifecycle of a rule's probability.
enum class Calibration { uncalibrated, calibrated, insufficient_samples };

const char* calibration_name(Calibration c);

// One feature mention in a rule body. `atom` is a lowercase snake_case
// feature name; negation is a flag, never part of the atom itself.
struct Literal {
    std::string atom;
    bool negated = false;

    auto operator<=>(const Literal&) const = default;

    // Serialized form: "atom" or "not_atom".
    std::string token() const { return negated ? "not_" + atom : atom; }
};

inline constexpr std::size_t kMaxBodyLiterals = 8;

struct Rule {
    Direction direction = Direction::success;
    std::vector<Literal> body;
    double probability = 0.0;
    Calibration calibration = Calibration::uncalibrated;

    bool operator==(const Rule&) const = default;
};

// Canonical order-insensitive key for a rule body, used to detect duplicates
// and to match rules across calibration reports.
std::string body_key(const std::vector<Literal>& body);

struct Policy {
    std::string id;
    int iteration = 0;
    std::vector<Rule> success_rules;
    std::vector<Rule> failure_rules;

    bool operator==(const Policy&) const = default;

    std::size_t rule_count() const { return success_rules.size() + failure_rules.size(); }
    bool empty() const { return success_rules.empty() && failure_rules.empty(); }
};

// Parses the two-section rule text:
//
//   Success rules:
//   num_acquisitions AND career_growth,0.40
//
//   Failure rules:
//   not_career_growth AND not_num_acquisitions,0.96
//
// Bodies join literals with AND; probabilities sit after the final comma.
// Throws ParseError with a line number for malformed lines and
// ValidationError for duplicate bodies within a section.
Policy parse_policy(const std::string& text);

// Inverse of parse_policy; probabilities are rendered with two decimals.
std::string serialize_policy(const Policy& policy);

// Structural invariants: nonempty bodies of at most kMaxBodyLiterals unique
// literals, probabilities in [0, 1], unique bodies per section, valid atoms.
void validate_policy(const Policy& policy);

// Every atom referenced by any rule body.
std::set<std::string> policy_atoms(const Policy& policy);

// Renders policy rules plus per-atom facts as a probabilistic logic program:
// probabilistic facts first, one clause per rule (negation as "\+"), and
// query lines for both outcomes. Atoms missing from `facts` raise
// MissingFactError listing all of them.
std::string emit_problog_program(const Policy& policy, const std::map<std::string, double>& facts);

}  // namespace llmar
