#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "llmar/policy.hpp"

namespace llmar {

// One `p::head :- body.` clause; the head is an outcome atom and the body
// references probabilistic facts (negation as failure on facts).
struct Clause {
    Direction head = Direction::success;
    std::vector<Literal> body;
    double probability = 0.0;

    bool operator==(const Clause&) const = default;
};

// A ground probabilistic logic program under the distribution semantics:
// every fact and every clause switch is an independent Boolean choice.
struct ProbProgram {
    std::map<std::string, double> facts;
    std::vector<Clause> clauses;

    bool operator==(const ProbProgram&) const = default;
};

enum class InferenceMode { exact, sampled };

struct InferenceResult {
    double p_success = 0.0;
    double p_failure = 0.0;
    InferenceMode mode = InferenceMode::exact;
    std::uint64_t samples = 0;
};

struct InferenceConfig {
    // Exact enumeration is used while facts + clauses stay within this bound.
    int exact_limit = 22;
    std::uint64_t sample_count = 100000;
    std::uint64_t seed = 0;
};

// Number of independent Boolean choices: facts plus clause switches.
int choice_count(const ProbProgram& program);

// Probabilities in range, bodies nonempty, body atoms all declared as facts.
void validate_program(const ProbProgram& program);

// Sums the probability mass of every possible world in which each outcome is
// derivable. Worlds are enumerated over the fact choices; clause switches,
// each private to one clause, are marginalized in closed form per world.
// Throws CapacityError when choice_count exceeds exact_limit.
InferenceResult infer_exact(const ProbProgram& program, int exact_limit = 22);

// Seeded Monte Carlo estimate: draws n worlds (every fact and clause switch
// sampled independently) and counts derivations. Identical inputs produce
// identical outputs.
InferenceResult infer_sampled(const ProbProgram& program, std::uint64_t n, std::uint64_t seed);

// Dispatches to infer_exact within config.exact_limit, else infer_sampled.
InferenceResult infer(const ProbProgram& program, const InferenceConfig& config);

// Builds the ground program for one founder: a probabilistic fact per atom
// the policy references (probability from `traits`) and a clause per rule.
// Atoms without a trait entry raise MissingFactError.
ProbProgram ground_policy(const Policy& policy, const std::map<std::string, double>& traits);

// ground_policy followed by infer. An empty policy scores (0, 0).
InferenceResult query_founder(const Policy& policy, const std::map<std::string, double>& traits,
                              const InferenceConfig& config = {});

// Parses the emit_problog_program text format back into a program.
ProbProgram parse_program(const std::string& text);

}  // namespace llmar
