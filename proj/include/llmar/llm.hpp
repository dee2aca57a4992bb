#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "llmar/dataset.hpp"
#include "llmar/policy.hpp"
#include "llmar/statistics.hpp"

namespace llmar {

enum class PromptType { insight, summarize, reflect, evaluate };

const char* prompt_type_name(PromptType type);

struct Prompt {
    PromptType kind = PromptType::insight;
    std::string rendered;
    int iteration = 0;
    std::string batch_id;
};

struct DecodingParams {
    double temperature = 0.0;
    int max_tokens = 2048;
};

// Pipeline state handed to providers before structured calls. The offline
// provider needs it to act on real mined patterns; network providers are free
// to ignore it.
struct ProviderContext {
    std::vector<MinedRule> success_hints;
    std::vector<MinedRule> failure_hints;
    std::optional<Policy> calibrated_policy;
    std::optional<CalibrationReport> calibration;
    // (iteration, f_beta, policy) triples for checkpoint review prompts.
    std::vector<std::tuple<int, double, Policy>> window;
};

class CompletionProvider {
public:
    virtual ~CompletionProvider() = default;
    virtual std::string complete(const Prompt& prompt, const DecodingParams& params = {}) = 0;
    virtual void set_context(const ProviderContext&) {}
    virtual std::string id() const = 0;
};

// Why this startup succeeded/failed, asked per founder profile.
Prompt build_insight_prompt(const FounderRecord& record, int iteration,
                            const std::string& batch_id);

// Distills a batch of insight texts into policy rules over the vocabulary.
Prompt build_summary_prompt(const std::vector<std::string>& insights,
                            const std::vector<std::string>& vocabulary, int iteration,
                            const std::string& batch_id);

// Asks the model to reconcile its rules with calibrated probabilities and
// optional mined hints; insufficient_samples rules are flagged inline.
Prompt build_reflection_prompt(const Policy& original, const Policy& calibrated,
                               const CalibrationReport& report, const HintSelection& hints,
                               int iteration, const std::string& batch_id);

// Presents recent iterations with their checkpoint scores for review.
Prompt build_evaluation_prompt(const std::vector<std::tuple<int, double, Policy>>& window,
                               int iteration);

struct ParsedPolicyResponse {
    Policy policy;
    std::vector<std::string> warnings;
};

// Extracts the first well-formed policy block from surrounding prose.
// Unparseable lines, unknown-vocabulary rules, and duplicate bodies are
// dropped with warnings; a response with no usable block raises
// ExtractionError carrying the raw text.
ParsedPolicyResponse parse_policy_response(const std::string& text,
                                           const std::vector<std::string>& vocabulary);

// Deterministic stand-in for a language model. Insights are templated;
// summarize turns the context's mined hints into rules; reflect applies the
// reflection prompt's own pruning and hint-adoption instructions; evaluate
// returns the best-scoring window policy. Pure in (prompt, seed, context).
std::string mock_complete(const Prompt& prompt, std::uint64_t seed, const ProviderContext& ctx);

class MockProvider : public CompletionProvider {
public:
    explicit MockProvider(std::uint64_t seed) : seed_(seed) {}

    std::string complete(const Prompt& prompt, const DecodingParams& params = {}) override;
    void set_context(const ProviderContext& ctx) override;
    std::string id() const override { return "mock"; }

private:
    std::uint64_t seed_;
    ProviderContext context_;
    mutable std::mutex mutex_;
};

struct RemoteConfig {
    std::string base_url;  // e.g. http://localhost:8080/v1
    std::string api_key;
    std::string model = "gpt-4o-mini";
    int timeout_seconds = 60;
    int max_retries = 3;
    int backoff_ms = 250;  // doubled per retry
};

// OpenAI-style chat completion client with bounded exponential backoff on
// transport errors and 5xx responses.
class RemoteProvider : public CompletionProvider {
public:
    explicit RemoteProvider(RemoteConfig config);

    std::string complete(const Prompt& prompt, const DecodingParams& params = {}) override;
    std::string id() const override { return "remote:" + config_.model; }

private:
    RemoteConfig config_;
    std::string host_;  // scheme://host:port
    std::string path_prefix_;
};

// Reads LLMAR_BASE_URL, LLMAR_API_KEY, and LLMAR_MODEL.
RemoteConfig remote_config_from_env();

// "mock" or "remote"; remote settings come from the environment.
std::unique_ptr<CompletionProvider> make_provider(const std::string& name, std::uint64_t seed);

}  // namespace llmar
