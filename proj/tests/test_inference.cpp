#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "llmar/errors.hpp"
#include "llmar/inference.hpp"
#include "llmar/rng.hpp"
#include "oracles.hpp"

using namespace llmar;

namespace {

const char* kListing =
    "0.7::education.\n"
    "0.2::work_experience.\n"
    "\n"
    "0.6::success :- education,work_experience.\n"
    "\n"
    "query(success)\n";  // published listing omits the period

ProbProgram listing_program() { return parse_program(kListing); }

}  // namespace

TEST_CASE("the published example program scores 0.084") {
    const InferenceResult result = infer_exact(listing_program());
    CHECK(std::abs(result.p_success - 0.6 * 0.7 * 0.2) < 1e-15);
    CHECK(result.p_success == doctest::Approx(0.084).epsilon(1e-12));
    CHECK(result.p_failure == 0.0);
    CHECK(result.mode == InferenceMode::exact);
    CHECK(result.samples == 0);
}

TEST_CASE("clauses sharing an atom are correlated, not independent") {
    ProbProgram program;
    program.facts = {{"a", 0.5}, {"b", 0.5}};
    program.clauses.push_back(Clause{Direction::success, {{"a", false}}, 0.8});
    program.clauses.push_back(Clause{Direction::success, {{"a", false}, {"b", false}}, 0.8});
    // naive noisy-OR of the clause marginals 0.4 and 0.2 would give 0.52
    CHECK(infer_exact(program).p_success == doctest::Approx(0.44).epsilon(1e-12));
}

TEST_CASE("a program without clauses derives nothing") {
    ProbProgram program;
    program.facts = {{"a", 0.9}};
    const InferenceResult result = infer_exact(program);
    CHECK(result.p_success == 0.0);
    CHECK(result.p_failure == 0.0);
}

TEST_CASE("exact inference matches the all-choices brute-force enumerator") {
    std::mt19937_64 rng(seed_for(2024, "inference.oracle"));
    for (int i = 0; i < 200; ++i) {
        const ProbProgram program = oracle::random_program(rng, 12);
        const auto [ps, pf] = oracle::infer_brute(program);
        const InferenceResult result = infer_exact(program);
        CHECK(std::abs(result.p_success - ps) <= 1e-9);
        CHECK(std::abs(result.p_failure - pf) <= 1e-9);
    }
}

TEST_CASE("negated literals follow negation-as-failure") {
    ProbProgram program;
    program.facts = {{"a", 0.3}};
    program.clauses.push_back(Clause{Direction::failure, {{"a", true}}, 1.0});
    CHECK(infer_exact(program).p_failure == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("raising a fact probability never hurts positive-only programs") {
    std::mt19937_64 rng(seed_for(5, "inference.monotone"));
    for (int i = 0; i < 100; ++i) {
        ProbProgram program = oracle::random_program(rng, 10, /*positive_only=*/true);
        if (program.facts.empty()) continue;
        const double base = infer_exact(program).p_success;
        auto it = program.facts.begin();
        std::advance(it, below(rng, program.facts.size()));
        it->second = std::min(1.0, it->second + 0.1);
        CHECK(infer_exact(program).p_success >= base - 1e-12);
    }
}

TEST_CASE("positive-only success probability respects the clause union bound") {
    std::mt19937_64 rng(seed_for(6, "inference.bound"));
    for (int i = 0; i < 100; ++i) {
        const ProbProgram program = oracle::random_program(rng, 10, /*positive_only=*/true);
        double none = 1.0;
        for (const Clause& clause : program.clauses) none *= 1.0 - clause.probability;
        const InferenceResult result = infer_exact(program);
        CHECK(result.p_success >= 0.0);
        CHECK(result.p_success <= 1.0);
        CHECK(result.p_failure == 0.0);
        CHECK(result.p_success <= 1.0 - none + 1e-12);
    }
}

TEST_CASE("exact inference enforces the choice capacity") {
    ProbProgram program;
    for (int i = 0; i < 23; ++i) program.facts["f" + std::to_string(i)] = 0.5;
    CHECK(choice_count(program) == 23);
    CHECK_THROWS_AS(infer_exact(program), CapacityError);
    CHECK_NOTHROW(infer_exact(program, 23));

    InferenceConfig config;
    config.sample_count = 500;
    const InferenceResult dispatched = infer(program, config);
    CHECK(dispatched.mode == InferenceMode::sampled);
    CHECK(dispatched.samples == 500);
}

TEST_CASE("sampled inference is seed-deterministic and close to exact") {
    std::mt19937_64 rng(seed_for(99, "inference.sampling"));
    for (int i = 0; i < 20; ++i) {
        const ProbProgram program = oracle::random_program(rng, 12);
        const std::uint64_t seed = seed_for(99, "inference.sampling.seed", i);
        const InferenceResult a = infer_sampled(program, 100000, seed);
        const InferenceResult b = infer_sampled(program, 100000, seed);
        CHECK(a.p_success == b.p_success);
        CHECK(a.p_failure == b.p_failure);
        CHECK(a.mode == InferenceMode::sampled);
        CHECK(a.samples == 100000);

        const InferenceResult exact = infer_exact(program);
        CHECK(std::abs(a.p_success - exact.p_success) <= 0.01);
        CHECK(std::abs(a.p_failure - exact.p_failure) <= 0.01);
    }
}

TEST_CASE("degenerate probabilities sample exactly") {
    ProbProgram program;
    program.facts = {{"a", 1.0}};
    program.clauses.push_back(Clause{Direction::success, {{"a", false}}, 1.0});
    CHECK(infer_sampled(program, 100, 1).p_success == 1.0);
    CHECK(infer_sampled(program, 100, 2).p_success == 1.0);
}

TEST_CASE("program validation names the problem") {
    ProbProgram bad_prob;
    bad_prob.facts = {{"a", 1.2}};
    CHECK_THROWS_AS(validate_program(bad_prob), ValidationError);

    ProbProgram empty_body;
    empty_body.facts = {{"a", 0.5}};
    empty_body.clauses.push_back(Clause{Direction::success, {}, 0.5});
    CHECK_THROWS_AS(validate_program(empty_body), ValidationError);

    ProbProgram undeclared;
    undeclared.facts = {{"a", 0.5}};
    undeclared.clauses.push_back(Clause{Direction::success, {{"b", false}}, 0.5});
    try {
        validate_program(undeclared);
        FAIL("expected MissingFactError");
    } catch (const MissingFactError& e) {
        CHECK(e.atoms == std::vector<std::string>{"b"});
    }
}

TEST_CASE("query_founder grounds a policy against trait probabilities") {
    const Policy policy = parse_policy(
        "Success rules:\n"
        "num_acquisitions AND career_growth,0.40\n"
        "perseverance AND vision,0.32\n"
        "\n"
        "Failure rules:\n"
        "not_career_growth AND not_num_acquisitions,0.96\n"
        "not_education_level AND not_education_institution,0.89\n");
    std::map<std::string, double> traits;
    for (const std::string& atom : policy_atoms(policy)) traits[atom] = 1.0;

    const InferenceResult result = query_founder(policy, traits);
    CHECK(result.p_success == doctest::Approx(1.0 - 0.60 * 0.68).epsilon(1e-12));
    CHECK(result.p_failure == 0.0);  // negated bodies cannot fire at certainty 1.0

    CHECK_THROWS_AS(query_founder(policy, {{"vision", 0.5}}, {}), MissingFactError);

    const InferenceResult empty = query_founder(Policy{}, {}, {});
    CHECK(empty.p_success == 0.0);
    CHECK(empty.p_failure == 0.0);
}

TEST_CASE("the grounded program only carries policy-referenced atoms") {
    Policy policy;
    policy.success_rules.push_back(Rule{Direction::success, {{"a", false}}, 0.5, {}});
    const ProbProgram program = ground_policy(policy, {{"a", 0.4}, {"unused", 0.9}});
    CHECK(program.facts.size() == 1);
    CHECK(program.facts.count("a") == 1);
}

TEST_CASE("program parsing rejects malformed lines") {
    CHECK_THROWS_AS(parse_program("0.5::a.\n0.5::a.\n"), ParseError);          // duplicate fact
    CHECK_THROWS_AS(parse_program("0.5::a\n"), ParseError);                    // missing period
    CHECK_THROWS_AS(parse_program("1.5::a.\n"), ParseError);                   // bad probability
    CHECK_THROWS_AS(parse_program("0.5::a.\n0.5::win :- a.\n"), ParseError);   // bad head
    CHECK_THROWS_AS(parse_program("0.5::success :- a.\n"), MissingFactError);  // undeclared atom
    CHECK_NOTHROW(parse_program("0.5::a.\nquery(success).\nquery(failure)\n"));
}
