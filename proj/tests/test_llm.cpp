#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <random>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "llmar/errors.hpp"
#include "llmar/llm.hpp"
#include "llmar/rng.hpp"

using namespace llmar;

namespace {

const std::vector<std::string> kVocabulary = {
    "career_growth",     "education_institution", "education_level", "num_acquisitions",
    "perseverance",      "vision",                "vc_experience",   "technical_background",
    "prior_exit",
};

MinedRule hint(std::vector<Literal> antecedent, Direction direction, double support,
               double confidence) {
    MinedRule rule;
    rule.antecedent = std::move(antecedent);
    rule.consequent = direction;
    rule.support = support;
    rule.confidence = confidence;
    rule.count = static_cast<std::size_t>(support * 1000);
    return rule;
}

// Serves canned chat-completion responses on a loopback port.
struct FakeCompletionServer {
    httplib::Server server;
    std::thread worker;
    int port = 0;
    std::atomic<int> requests{0};
    std::atomic<int> fail_first{0};  // respond 500 to this many requests
    int reject_status = 0;           // when nonzero, always respond with it
    std::string content = "canned reply";
    nlohmann::json last_request;
    std::string last_authorization;

    FakeCompletionServer() {
        server.Post("/v1/chat/completions",
                    [this](const httplib::Request& req, httplib::Response& res) {
                        requests += 1;
                        last_request = nlohmann::json::parse(req.body);
                        last_authorization = req.get_header_value("Authorization");
                        if (reject_status != 0) {
                            res.status = reject_status;
                            res.set_content("rejected", "text/plain");
                            return;
                        }
                        if (fail_first > 0) {
                            fail_first -= 1;
                            res.status = 500;
                            res.set_content("boom", "text/plain");
                            return;
                        }
                        const nlohmann::json reply = {
                            {"choices",
                             {{{"message", {{"role", "assistant"}, {"content", content}}}}}}};
                        res.set_content(reply.dump(), "application/json");
                    });
        port = server.bind_to_any_port("127.0.0.1");
        worker = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }

    ~FakeCompletionServer() {
        server.stop();
        worker.join();
    }

    RemoteConfig config() const {
        RemoteConfig remote;
        remote.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1";
        remote.api_key = "test-key";
        remote.model = "test-model";
        remote.timeout_seconds = 5;
        remote.max_retries = 3;
        remote.backoff_ms = 1;
        return remote;
    }
};

}  // namespace

TEST_CASE("insight prompts embed the outcome and the profile but not the id") {
    FounderRecord founder;
    founder.id = "secret_founder_7";
    founder.features = {{"education_level", 3.0}};
    founder.label = Label::success;

    const Prompt prompt = build_insight_prompt(founder, 2, "batch_1");
    CHECK(prompt.kind == PromptType::insight);
    CHECK(prompt.iteration == 2);
    CHECK(prompt.batch_id == "batch_1");
    CHECK(prompt.rendered.find("You are a VC anaylst") != std::string::npos);
    CHECK(prompt.rendered.find("Founder Profile (LinkedIn followed by Crunchbase):") !=
          std::string::npos);
    CHECK(prompt.rendered.find("holds a doctoral degree") != std::string::npos);
    CHECK(prompt.rendered.find("This startup was eventually successful.") != std::string::npos);
    CHECK(prompt.rendered.find("why this startup succeeded") != std::string::npos);
    CHECK(prompt.rendered.find("secret_founder_7") == std::string::npos);

    founder.label = Label::failure;
    const Prompt failed = build_insight_prompt(founder, 2, "batch_1");
    CHECK(failed.rendered.find("eventually unsuccessful") != std::string::npos);
    CHECK(failed.rendered.find("why this startup failed") != std::string::npos);
}

TEST_CASE("summary prompts number the insights and pin the output format") {
    const Prompt prompt = build_summary_prompt({"first finding", "second finding"},
                                               {"vision", "prior_exit"}, 1, "batch_2");
    CHECK(prompt.kind == PromptType::summarize);
    CHECK(prompt.rendered.find("1. first finding") != std::string::npos);
    CHECK(prompt.rendered.find("2. second finding") != std::string::npos);
    CHECK(prompt.rendered.find("vision, prior_exit") != std::string::npos);
    CHECK(prompt.rendered.find("Success rules:") != std::string::npos);
    CHECK(prompt.rendered.find("Failure rules:") != std::string::npos);
    CHECK(prompt.rendered.find("not_feature_c AND not_feature_d,0.90") != std::string::npos);
}

TEST_CASE("reflection prompts pair intuitive and calibrated rules with hints") {
    const Policy original = parse_policy(
        "Success rules:\n"
        "vision AND perseverance,0.80\n"
        "\n"
        "Failure rules:\n"
        "not_career_growth,0.95\n");
    Policy calibrated = original;
    calibrated.success_rules[0].probability = 0.25;
    calibrated.success_rules[0].calibration = Calibration::calibrated;
    calibrated.failure_rules[0].calibration = Calibration::insufficient_samples;

    CalibrationReport report;
    report.entries.push_back({Direction::success, calibrated.success_rules[0].body, 0.80, 0.25,
                              120, 30, Calibration::calibrated});
    report.entries.push_back({Direction::failure, calibrated.failure_rules[0].body, 0.95, 0.95,
                              4, 4, Calibration::insufficient_samples});

    HintSelection hints;
    hints.success_hints.push_back(
        hint({{"vc_experience", false}, {"prior_exit", false}}, Direction::success, 0.3, 0.95));

    const Prompt prompt = build_reflection_prompt(original, calibrated, report, hints, 3, "b");
    CHECK(prompt.kind == PromptType::reflect);
    CHECK(prompt.rendered.find("vision AND perseverance,0.80") != std::string::npos);
    CHECK(prompt.rendered.find("vision AND perseverance,0.25") != std::string::npos);
    CHECK(prompt.rendered.find("not_career_growth,0.95 (not enough samples)") !=
          std::string::npos);
    CHECK(prompt.rendered.find(
              "vc_experience AND prior_exit -> success (confidence 0.95, support 0.300)") !=
          std::string::npos);
    CHECK(prompt.rendered.find("(none provided)") != std::string::npos);  // no failure hints
    CHECK(prompt.rendered.find("must not create entirely new") != std::string::npos);
    CHECK(prompt.rendered.find("Remove rules with success probability < 0.1") !=
          std::string::npos);
    CHECK(prompt.rendered.find("Remove rules with failure probability < 0.9") !=
          std::string::npos);
}

TEST_CASE("evaluation prompts sequence the checkpoint window oldest first") {
    Policy p;
    p.success_rules.push_back(Rule{Direction::success, {{"vision", false}}, 0.5, {}});
    const Prompt prompt = build_evaluation_prompt({{1, 0.31, p}, {2, 0.4567, p}}, 5);
    CHECK(prompt.kind == PromptType::evaluate);
    CHECK(prompt.iteration == 5);
    CHECK(prompt.rendered.find("Iteration 1 (F-score 0.3100):") != std::string::npos);
    CHECK(prompt.rendered.find("Iteration 2 (F-score 0.4567):") != std::string::npos);
    CHECK(prompt.rendered.find("Iteration 1") <
          prompt.rendered.find("Iteration 2"));
}

TEST_CASE("policy extraction finds the rule block inside prose") {
    const std::string response =
        "Looking at the evidence, several patterns recur across this batch.\n"
        "\n"
        "**Success rules:**\n"
        "num_acquisitions AND career_growth,0.40\n"
        "perseverance AND vision,0.32\n"
        "\n"
        "**Failure rules:**\n"
        "not_career_growth AND not_num_acquisitions,0.96\n"
        "not_education_level AND not_education_institution,0.89\n"
        "\n"
        "These rules reflect the strongest signals I found.\n";
    const ParsedPolicyResponse parsed = parse_policy_response(response, kVocabulary);
    CHECK(parsed.policy.success_rules.size() == 2);
    CHECK(parsed.policy.failure_rules.size() == 2);
    CHECK(parsed.policy.success_rules[0].probability == 0.40);
    CHECK(parsed.policy.failure_rules[0].body[0].token() == "not_career_growth");
    CHECK(parsed.warnings.empty());
}

TEST_CASE("policy extraction drops bad lines with warnings instead of failing") {
    const std::string response =
        "Success rules:\n"
        "leading commentary before any rule\n"    // tolerated while empty
        "vision AND unknown_feature,0.40\n"       // outside the vocabulary
        "perseverance,0.50\n"
        "perseverance,0.60\n"                     // duplicate body
        "\n"
        "Failure rules:\n"
        "not_career_growth,0.95\n";
    const ParsedPolicyResponse parsed = parse_policy_response(response, kVocabulary);
    REQUIRE(parsed.policy.success_rules.size() == 1);
    CHECK(parsed.policy.success_rules[0].body[0].atom == "perseverance");
    CHECK(parsed.policy.success_rules[0].probability == 0.50);
    CHECK(parsed.policy.failure_rules.size() == 1);
    CHECK(parsed.warnings.size() == 3);

    // once rules have appeared, trailing prose closes the block
    const ParsedPolicyResponse closed = parse_policy_response(
        "Success rules:\nvision,0.40\nafter this line nothing is read\n\n"
        "Failure rules:\nnot_career_growth,0.95\n",
        kVocabulary);
    CHECK(closed.policy.success_rules.size() == 1);
    CHECK(closed.policy.failure_rules.empty());

    try {
        parse_policy_response("no rules here at all", kVocabulary);
        FAIL("expected ExtractionError");
    } catch (const ExtractionError& e) {
        CHECK(e.raw == "no rules here at all");
    }

    // a header with no usable lines is still no policy
    CHECK_THROWS_AS(parse_policy_response("Success rules:\ngibberish\n", kVocabulary),
                    ExtractionError);
}

TEST_CASE("policy extraction never crashes on arbitrary text") {
    std::mt19937_64 rng(seed_for(21, "llm.fuzz"));
    const std::string alphabet =
        "abcdefghijklmnopqrstuvwxyz_,.:0123456789 \nANDnot_SuccessFailure rules";
    int extracted = 0;
    for (int i = 0; i < 300; ++i) {
        std::string text;
        const std::size_t length = below(rng, 400);
        for (std::size_t k = 0; k < length; ++k) text += alphabet[below(rng, alphabet.size())];
        try {
            const ParsedPolicyResponse parsed = parse_policy_response(text, kVocabulary);
            extracted += 1;
            CHECK_NOTHROW(validate_policy(parsed.policy));
        } catch (const ExtractionError&) {
        }
    }
    CHECK(extracted >= 0);  // reaching here without a crash is the property
}

TEST_CASE("the mock provider closes the loop deterministically") {
    MockProvider provider(42);
    CHECK(provider.id() == "mock");

    ProviderContext ctx;
    ctx.success_hints.push_back(
        hint({{"vc_experience", false}, {"perseverance", false}}, Direction::success, 0.2, 0.62));
    ctx.failure_hints.push_back(
        hint({{"career_growth", true}}, Direction::failure, 0.4, 0.93));
    provider.set_context(ctx);

    const Prompt summary = build_summary_prompt({"insight"}, kVocabulary, 1, "b1");
    const std::string response = provider.complete(summary);
    CHECK(response == provider.complete(summary));
    CHECK(response.find("vc_experience AND perseverance,0.62") != std::string::npos);
    const ParsedPolicyResponse parsed = parse_policy_response(response, kVocabulary);
    REQUIRE(parsed.policy.success_rules.size() == 1);
    CHECK(parsed.policy.failure_rules[0].body[0].token() == "not_career_growth");
    CHECK(parsed.policy.failure_rules[0].probability == 0.93);

    // reflect prunes sub-threshold rules and adopts unseen hints
    Policy calibrated;
    calibrated.success_rules.push_back(
        Rule{Direction::success, {{"vision", false}}, 0.05, Calibration::calibrated});
    calibrated.success_rules.push_back(
        Rule{Direction::success, {{"prior_exit", false}}, 0.45, Calibration::calibrated});
    CalibrationReport report;
    report.entries.push_back(
        {Direction::success, {{"vision", false}}, 0.5, 0.05, 200, 10, Calibration::calibrated});
    report.entries.push_back(
        {Direction::success, {{"prior_exit", false}}, 0.5, 0.45, 200, 90, Calibration::calibrated});
    ctx.calibrated_policy = calibrated;
    ctx.calibration = report;
    provider.set_context(ctx);

    const Prompt reflect =
        build_reflection_prompt(calibrated, calibrated, report, HintSelection{}, 1, "b1");
    const ParsedPolicyResponse revised =
        parse_policy_response(provider.complete(reflect), kVocabulary);
    REQUIRE(revised.policy.success_rules.size() == 2);  // pruned one, adopted one hint
    CHECK(revised.policy.success_rules[0].body[0].atom == "prior_exit");
    CHECK(revised.policy.success_rules[1].body[0].atom == "vc_experience");
    REQUIRE(revised.policy.failure_rules.size() == 1);

    // evaluate returns the best-scoring window entry, later iterations winning ties
    Policy early;
    early.success_rules.push_back(Rule{Direction::success, {{"vision", false}}, 0.30, {}});
    Policy late;
    late.success_rules.push_back(Rule{Direction::success, {{"prior_exit", false}}, 0.70, {}});
    ctx.window = {{1, 0.40, early}, {2, 0.40, late}};
    provider.set_context(ctx);
    const std::string chosen = provider.complete(build_evaluation_prompt(ctx.window, 2));
    CHECK(chosen.find("Iteration 2") != std::string::npos);
    CHECK(chosen.find("prior_exit,0.70") != std::string::npos);

    // reflect and evaluate need their context installed first
    MockProvider fresh(42);
    CHECK_THROWS_AS(fresh.complete(reflect), ProviderError);
    CHECK_THROWS_AS(fresh.complete(build_evaluation_prompt({}, 1)), ProviderError);
}

TEST_CASE("remote completions round trip through an OpenAI-style endpoint") {
    FakeCompletionServer server;
    server.content = "Success rules:\nvision,0.50\n";
    RemoteProvider provider(server.config());
    CHECK(provider.id() == "remote:test-model");

    const Prompt prompt = build_summary_prompt({"x"}, kVocabulary, 1, "b");
    const std::string reply = provider.complete(prompt);
    CHECK(reply == "Success rules:\nvision,0.50\n");
    CHECK(server.requests == 1);
    CHECK(server.last_authorization == "Bearer test-key");
    CHECK(server.last_request.at("model") == "test-model");
    CHECK(server.last_request.at("messages").at(0).at("content") == prompt.rendered);
    CHECK(server.last_request.at("temperature") == 0.0);
}

TEST_CASE("remote transport retries server errors with a bounded budget") {
    FakeCompletionServer server;
    server.fail_first = 2;
    RemoteProvider provider(server.config());
    const std::string reply = provider.complete(build_summary_prompt({}, kVocabulary, 1, "b"));
    CHECK(reply == "canned reply");
    CHECK(server.requests == 3);  // two failures, then success

    FakeCompletionServer exhausted;
    exhausted.fail_first = 100;
    RemoteConfig tight = exhausted.config();
    tight.max_retries = 1;
    RemoteProvider giving_up(tight);
    try {
        giving_up.complete(build_summary_prompt({}, kVocabulary, 1, "b"));
        FAIL("expected ProviderError");
    } catch (const ProviderError& e) {
        CHECK(std::string(e.what()).find("2 attempts") != std::string::npos);
    }
    CHECK(exhausted.requests == 2);
}

TEST_CASE("remote client errors do not retry") {
    FakeCompletionServer server;
    server.reject_status = 404;
    RemoteProvider provider(server.config());
    CHECK_THROWS_AS(provider.complete(build_summary_prompt({}, kVocabulary, 1, "b")),
                    ProviderError);
    CHECK(server.requests == 1);

    FakeCompletionServer garbled;
    garbled.content = "ok";
    RemoteConfig config = garbled.config();
    RemoteProvider fine(config);
    CHECK_NOTHROW(fine.complete(build_summary_prompt({}, kVocabulary, 1, "b")));

    // unreachable host exhausts the transport retry budget
    RemoteConfig nowhere;
    nowhere.base_url = "http://127.0.0.1:1/v1";
    nowhere.max_retries = 0;
    nowhere.backoff_ms = 1;
    nowhere.timeout_seconds = 1;
    RemoteProvider dead_end(nowhere);
    CHECK_THROWS_AS(dead_end.complete(build_summary_prompt({}, kVocabulary, 1, "b")),
                    ProviderError);
}

TEST_CASE("provider construction validates its configuration") {
    CHECK(make_provider("mock", 1)->id() == "mock");
    CHECK_THROWS_AS(make_provider("bogus", 1), ConfigError);
    CHECK_THROWS_AS(RemoteProvider(RemoteConfig{}), ConfigError);

    ::unsetenv("LLMAR_BASE_URL");
    ::unsetenv("LLMAR_API_KEY");
    ::unsetenv("LLMAR_MODEL");
    CHECK_THROWS_AS(remote_config_from_env(), ConfigError);
    CHECK_THROWS_AS(make_provider("remote", 1), ConfigError);

    ::setenv("LLMAR_BASE_URL", "http://localhost:9/v1", 1);
    ::setenv("LLMAR_API_KEY", "k", 1);
    ::setenv("LLMAR_MODEL", "m", 1);
    const RemoteConfig config = remote_config_from_env();
    CHECK(config.base_url == "http://localhost:9/v1");
    CHECK(config.api_key == "k");
    CHECK(config.model == "m");
    CHECK(make_provider("remote", 1)->id() == "remote:m");
    ::unsetenv("LLMAR_BASE_URL");
    ::unsetenv("LLMAR_API_KEY");
    ::unsetenv("LLMAR_MODEL");
}
