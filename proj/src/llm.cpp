#include "llmar/llm.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "llmar/errors.hpp"

namespace llmar {

namespace {

std::string replace_all(std::string text, const std::string& placeholder,
                        const std::string& value) {
    std::size_t pos = 0;
    while ((pos = text.find(placeholder, pos)) != std::string::npos) {
        text.replace(pos, placeholder.size(), value);
        pos += value.size();
    }
    return text;
}

std::string format_two_decimals(double p) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%.2f", p);
    return buf;
}

std::string rule_line(const Rule& rule) {
    std::string line;
    for (std::size_t i = 0; i < rule.body.size(); ++i) {
        if (i > 0) line += " AND ";
        line += rule.body[i].token();
    }
    return line + "," + format_two_decimals(rule.probability);
}

std::string hint_line(const MinedRule& hint) {
    std::string line;
    for (std::size_t i = 0; i < hint.antecedent.size(); ++i) {
        if (i > 0) line += " AND ";
        line += hint.antecedent[i].token();
    }
    line += " -> ";
    line += direction_name(hint.consequent);
    char buf[64];
    std::snprintf(buf, sizeof(buf), " (confidence %.2f, support %.3f)", hint.confidence,
                  hint.support);
    return line + buf;
}

constexpr const char* kInsightTemplate =
    "You are a VC anaylst trying to predict the success of a startup based on some information "
    "about the founders.\n"
    "\n"
    "Given the following founder's background and startup idea:\n"
    "    Founder Profile (LinkedIn followed by Crunchbase): {founder_profile}\n"
    "This startup was eventually {success_text}.\n"
    "Clearly explain the most important reasons why this startup {success_verb}. Try to use "
    "simple vocabulary\n";

constexpr const char* kSummaryTemplate =
    "You are a VC analyst consolidating batch-level findings into prediction rules.\n"
    "\n"
    "Below are insights explaining why individual startups succeeded or failed:\n"
    "\n"
    "{insights}\n"
    "\n"
    "Summarize the recurring patterns as probabilistic prediction rules. Each rule combines\n"
    "founder features with AND and carries a probability in [0, 1].\n"
    "\n"
    "Use only these feature names, prefixing a name with \"not_\" to negate it:\n"
    "{feature_vocabulary}\n"
    "\n"
    "Answer in exactly this two-section format, one rule per line, nothing else:\n"
    "Success rules:\n"
    "feature_a AND feature_b,0.40\n"
    "\n"
    "Failure rules:\n"
    "not_feature_c AND not_feature_d,0.90\n";

constexpr const char* kReflectionTemplate =
    "You are a venture capital analyst evaluating startup success patterns.\n"
    "\n"
    "You previously created intuitive logical rules about how founder attributes relate to "
    "success.\n"
    "\n"
    "Now, compare those intuitive rules to empirical data, assess consistency, and revise the "
    "rules to better reflect observed probabilities.\n"
    "\n"
    "Below are your original intuitive rules:\n"
    "\n"
    "{logical_statements}\n"
    "\n"
    "Here are the same rules with probabilities estimated from real data:\n"
    "\n"
    "{calibrated_statements}\n"
    "\n"
    "You are also optionally given:\n"
    "- A few **high-probability success rules** discovered from the data:\n"
    "  {success_rule_hints}\n"
    "\n"
    "- One **high-probability failure rule** discovered from the data:\n"
    "  {failure_rule_hints}\n"
    "\n"
    "You may incorporate these hints only if they fit coherently within your revised logic.\n"
    "---\n"
    "\n"
    "### **Reasoning & Update Instructions**\n"
    "1. **Compare** your intuitive probabilities with the data-calibrated ones.\n"
    "2. If they differ, reason about *why*:\n"
    "   - Were your intuitions biased or based on rare/outlier cases?\n"
    "   - Is there insufficient data (\"not enough samples\")? If so, treat that rule as "
    "unreliable.\n"
    "3. **Prune or adjust rules** as follows:\n"
    "   - Remove rules with success probability < 0.1 (too low relative to random baseline "
    "0.1).\n"
    "   - Remove rules with failure probability < 0.9 (too low relative to random baseline "
    "0.9).\n"
    "   - Modify probabilities or logic as needed to align with the data.\n"
    "4. You may **delete or modify** existing rules, but **must not create entirely new "
    "ones**.\n"
    "5. Ensure all features follow the required naming format.\n"
    "\n"
    "---\n"
    "\n"
    "### **Output Requirements**\n"
    "Return only your **final, modified rules** in exactly the same format as the original "
    "rules.\n"
    "Double-check that all deletions and adjustments are correctly applied.\n"
    "Do not include explanations or commentary-only the updated rules.\n";

constexpr const char* kEvaluationTemplate =
    "You are a VC analyst reviewing how a prediction policy evolved across training "
    "iterations.\n"
    "\n"
    "Below are the most recent policies with their F-scores on a held-out evaluation set, "
    "oldest first:\n"
    "\n"
    "{window}\n"
    "\n"
    "Identify which changes helped or hurt performance, then produce the policy you would "
    "carry forward.\n"
    "\n"
    "Answer with that policy only, in the same two-section rule format, nothing else.\n";

// Strips markdown decoration so headers like "**Success rules:**" match.
std::string normalized_marker(const std::string& line) {
    std::string out;
    for (char c : line) {
        if (c == '*' || c == '#' || c == '`' || c == '>' || c == '_') continue;
        out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    const std::size_t begin = out.find_first_not_of(" \t");
    if (begin == std::string::npos) return "";
    const std::size_t end = out.find_last_not_of(" \t");
    return out.substr(begin, end - begin + 1);
}

std::string strip_bullet(const std::string& line) {
    std::string out = line;
    const std::size_t begin = out.find_first_not_of(" \t");
    if (begin == std::string::npos) return "";
    std::size_t end = out.find_last_not_of(" \t");
    out = out.substr(begin, end - begin + 1);
    if (out.rfind("- ", 0) == 0) out = out.substr(2);
    while (!out.empty() && out.front() == '`') out.erase(out.begin());
    while (!out.empty() && out.back() == '`') out.pop_back();
    return out;
}

// A line is a rule line iff parse_policy accepts it under a synthetic header.
std::optional<Rule> try_parse_rule(const std::string& line, Direction direction) {
    try {
        const Policy parsed = parse_policy("Success rules:\n" + line + "\n");
        if (parsed.success_rules.size() != 1) return std::nullopt;
        Rule rule = parsed.success_rules.front();
        rule.direction = direction;
        return rule;
    } catch (const Error&) {
        return std::nullopt;
    }
}

}  // namespace

const char* prompt_type_name(PromptType type) {
    switch (type) {
        case PromptType::insight: return "insight";
        case PromptType::summarize: return "summarize";
        case PromptType::reflect: return "reflect";
        case PromptType::evaluate: return "evaluate";
    }
    return "insight";
}

Prompt build_insight_prompt(const FounderRecord& record, int iteration,
                            const std::string& batch_id) {
    const bool success = record.label == Label::success;
    std::string rendered = kInsightTemplate;
    rendered = replace_all(rendered, "{founder_profile}", render_profile(record));
    rendered = replace_all(rendered, "{success_text}", success ? "successful" : "unsuccessful");
    rendered = replace_all(rendered, "{success_verb}", success ? "succeeded" : "failed");
    return Prompt{PromptType::insight, std::move(rendered), iteration, batch_id};
}

Prompt build_summary_prompt(const std::vector<std::string>& insights,
                            const std::vector<std::string>& vocabulary, int iteration,
                            const std::string& batch_id) {
    std::string numbered;
    for (std::size_t i = 0; i < insights.size(); ++i) {
        numbered += std::to_string(i + 1) + ". " + insights[i] + "\n";
    }
    std::string vocab_text;
    for (std::size_t i = 0; i < vocabulary.size(); ++i) {
        if (i > 0) vocab_text += ", ";
        vocab_text += vocabulary[i];
    }
    std::string rendered = kSummaryTemplate;
    rendered = replace_all(rendered, "{insights}", numbered);
    rendered = replace_all(rendered, "{feature_vocabulary}", vocab_text);
    return Prompt{PromptType::summarize, std::move(rendered), iteration, batch_id};
}

Prompt build_reflection_prompt(const Policy& original, const Policy& calibrated,
                               const CalibrationReport& report, const HintSelection& hints,
                               int iteration, const std::string& batch_id) {
    auto render_rules = [](const Policy& policy, const CalibrationReport* flags) {
        std::string text = "Success rules:\n";
        auto append = [&](const Rule& rule) {
            text += rule_line(rule);
            if (flags && rule.calibration == Calibration::insufficient_samples) {
                text += " (not enough samples)";
            }
            text += "\n";
        };
        for (const Rule& rule : policy.success_rules) append(rule);
        text += "\nFailure rules:\n";
        for (const Rule& rule : policy.failure_rules) append(rule);
        return text;
    };
    auto render_hints = [](const std::vector<MinedRule>& list) {
        if (list.empty()) return std::string("(none provided)");
        std::string text;
        for (std::size_t i = 0; i < list.size(); ++i) {
            if (i > 0) text += "\n  ";
            text += hint_line(list[i]);
        }
        return text;
    };
    std::string rendered = kReflectionTemplate;
    rendered = replace_all(rendered, "{logical_statements}", render_rules(original, nullptr));
    rendered = replace_all(rendered, "{calibrated_statements}", render_rules(calibrated, &report));
    rendered = replace_all(rendered, "{success_rule_hints}", render_hints(hints.success_hints));
    rendered = replace_all(rendered, "{failure_rule_hints}", render_hints(hints.failure_hints));
    return Prompt{PromptType::reflect, std::move(rendered), iteration, batch_id};
}

Prompt build_evaluation_prompt(const std::vector<std::tuple<int, double, Policy>>& window,
                               int iteration) {
    std::string entries;
    for (const auto& [it, f, policy] : window) {
        char head[64];
        std::snprintf(head, sizeof(head), "Iteration %d (F-score %.4f):\n", it, f);
        entries += head;
        entries += serialize_policy(policy);
        entries += "\n";
    }
    std::string rendered = kEvaluationTemplate;
    rendered = replace_all(rendered, "{window}", entries);
    return Prompt{PromptType::evaluate, std::move(rendered), iteration, ""};
}

ParsedPolicyResponse parse_policy_response(const std::string& text,
                                           const std::vector<std::string>& vocabulary) {
    std::vector<std::string> lines;
    {
        std::istringstream stream(text);
        std::string line;
        while (std::getline(stream, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            lines.push_back(line);
        }
    }
    const std::set<std::string> vocab(vocabulary.begin(), vocabulary.end());

    for (std::size_t start = 0; start < lines.size(); ++start) {
        if (normalized_marker(lines[start]) != "success rules:") continue;

        ParsedPolicyResponse result;
        std::set<std::string> seen_success;
        std::set<std::string> seen_failure;
        Direction section = Direction::success;
        bool ended = false;
        for (std::size_t i = start + 1; i < lines.size() && !ended; ++i) {
            const std::string marker = normalized_marker(lines[i]);
            if (marker.empty()) continue;
            if (section == Direction::success && marker == "failure rules:") {
                section = Direction::failure;
                continue;
            }
            if (marker == "success rules:") break;
            const std::string candidate = strip_bullet(lines[i]);
            std::optional<Rule> rule = try_parse_rule(candidate, section);
            if (!rule) {
                // Prose before the failure section is tolerated; once rules
                // have appeared, a non-rule line closes the block.
                if (!result.policy.empty() || section == Direction::failure) {
                    ended = true;
                } else {
                    result.warnings.push_back("skipped unparseable line: " + candidate);
                }
                continue;
            }
            bool known = true;
            for (const Literal& lit : rule->body) {
                if (!vocab.empty() && !vocab.count(lit.atom)) {
                    result.warnings.push_back("dropped rule with unknown feature '" + lit.atom +
                                              "': " + candidate);
                    known = false;
                    break;
                }
            }
            if (!known) continue;
            auto& seen = section == Direction::success ? seen_success : seen_failure;
            if (!seen.insert(body_key(rule->body)).second) {
                result.warnings.push_back("dropped duplicate rule body: " + candidate);
                continue;
            }
            (section == Direction::success ? result.policy.success_rules
                                           : result.policy.failure_rules)
                .push_back(std::move(*rule));
        }
        if (!result.policy.empty()) {
            validate_policy(result.policy);
            return result;
        }
    }
    throw ExtractionError("no parseable policy block in response", text);
}

std::string mock_complete(const Prompt& prompt, std::uint64_t seed, const ProviderContext& ctx) {
    (void)seed;
    switch (prompt.kind) {
        case PromptType::insight: {
            const bool success = prompt.rendered.find("eventually successful") != std::string::npos;
            if (success) {
                return "The founders combine strong track records with complementary skills; "
                       "their prior exposure to scaling companies is the clearest reason this "
                       "startup succeeded.\n";
            }
            return "The founding team lacked reinforcing strengths in its background, and the "
                   "startup failed without the experience needed to push through early "
                   "setbacks.\n";
        }
        case PromptType::summarize: {
            Policy proposal;
            for (const MinedRule& hint : ctx.success_hints) {
                proposal.success_rules.push_back(
                    Rule{Direction::success, hint.antecedent, hint.confidence});
            }
            for (const MinedRule& hint : ctx.failure_hints) {
                proposal.failure_rules.push_back(
                    Rule{Direction::failure, hint.antecedent, hint.confidence});
            }
            return "Looking across this batch, a few recurring patterns stand out.\n\n" +
                   serialize_policy(proposal) +
                   "\nThese capture the strongest regularities in the batch.\n";
        }
        case PromptType::reflect: {
            if (!ctx.calibrated_policy || !ctx.calibration) {
                throw ProviderError("mock reflect requires calibrated policy context");
            }
            Policy revised = prune_policy(*ctx.calibrated_policy, *ctx.calibration).policy;
            auto adopt = [&](const std::vector<MinedRule>& hints, Direction direction) {
                auto& rules = direction == Direction::success ? revised.success_rules
                                                              : revised.failure_rules;
                for (const MinedRule& hint : hints) {
                    const std::string key = body_key(hint.antecedent);
                    const bool present =
                        std::any_of(rules.begin(), rules.end(), [&](const Rule& rule) {
                            return body_key(rule.body) == key;
                        });
                    if (!present) {
                        rules.push_back(Rule{direction, hint.antecedent, hint.confidence});
                    }
                }
            };
            adopt(ctx.success_hints, Direction::success);
            adopt(ctx.failure_hints, Direction::failure);
            return "After weighing the calibrated estimates against my expectations, these are "
                   "the rules I keep.\n\n" +
                   serialize_policy(revised) + "\n";
        }
        case PromptType::evaluate: {
            if (ctx.window.empty()) {
                throw ProviderError("mock evaluate requires a checkpoint window context");
            }
            const auto* best = &ctx.window.front();
            for (const auto& entry : ctx.window) {
                if (std::get<1>(entry) >= std::get<1>(*best)) best = &entry;
            }
            return "Iteration " + std::to_string(std::get<0>(*best)) +
                   " scored best in this window, so I continue from it.\n\n" +
                   serialize_policy(std::get<2>(*best)) + "\n";
        }
    }
    throw ProviderError("unknown prompt kind");
}

std::string MockProvider::complete(const Prompt& prompt, const DecodingParams&) {
    std::lock_guard<std::mutex> lock(mutex_);
    return mock_complete(prompt, seed_, context_);
}

void MockProvider::set_context(const ProviderContext& ctx) {
    std::lock_guard<std::mutex> lock(mutex_);
    context_ = ctx;
}

RemoteProvider::RemoteProvider(RemoteConfig config) : config_(std::move(config)) {
    if (config_.base_url.empty()) throw ConfigError("remote provider base URL is empty");
    if (config_.max_retries < 0) throw ConfigError("max_retries must be nonnegative");
    const std::size_t scheme = config_.base_url.find("://");
    const std::size_t path =
        config_.base_url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
    if (path == std::string::npos) {
        host_ = config_.base_url;
        path_prefix_.clear();
    } else {
        host_ = config_.base_url.substr(0, path);
        path_prefix_ = config_.base_url.substr(path);
        while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
    }
}

std::string RemoteProvider::complete(const Prompt& prompt, const DecodingParams& params) {
    const nlohmann::json payload = {
        {"model", config_.model},
        {"messages", nlohmann::json::array({nlohmann::json{{"role", "user"},
                                                           {"content", prompt.rendered}}})},
        {"temperature", params.temperature},
        {"max_tokens", params.max_tokens},
    };
    const std::string body = payload.dump();
    std::string last_error;

    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(
                std::chrono::milliseconds(static_cast<long long>(config_.backoff_ms)
                                          << (attempt - 1)));
        }
        httplib::Client client(host_);
        client.set_connection_timeout(config_.timeout_seconds, 0);
        client.set_read_timeout(config_.timeout_seconds, 0);
        httplib::Headers headers;
        if (!config_.api_key.empty()) {
            headers.emplace("Authorization", "Bearer " + config_.api_key);
        }
        auto res = client.Post(path_prefix_ + "/chat/completions", headers, body,
                               "application/json");
        if (!res) {
            last_error = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status >= 500) {
            last_error = "server error: HTTP " + std::to_string(res->status);
            continue;
        }
        if (res->status < 200 || res->status >= 300) {
            throw ProviderError("completion request rejected: HTTP " +
                                std::to_string(res->status) + " " + res->body);
        }
        try {
            const nlohmann::json reply = nlohmann::json::parse(res->body);
            return reply.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw ProviderError(std::string("malformed completion response: ") + e.what());
        }
    }
    throw ProviderError("completion failed after " + std::to_string(config_.max_retries + 1) +
                        " attempts; last error: " + last_error);
}

RemoteConfig remote_config_from_env() {
    RemoteConfig config;
    if (const char* url = std::getenv("LLMAR_BASE_URL")) config.base_url = url;
    if (const char* key = std::getenv("LLMAR_API_KEY")) config.api_key = key;
    if (const char* model = std::getenv("LLMAR_MODEL")) config.model = model;
    if (config.base_url.empty()) {
        throw ConfigError("remote provider requires LLMAR_BASE_URL to be set");
    }
    return config;
}

std::unique_ptr<CompletionProvider> make_provider(const std::string& name, std::uint64_t seed) {
    if (name == "mock") return std::make_unique<MockProvider>(seed);
    if (name == "remote") {
        (void)seed;
        return std::make_unique<RemoteProvider>(remote_config_from_env());
    }
    throw ConfigError("unknown provider '" + name + "' (expected mock or remote)");
}

}  // namespace llmar
