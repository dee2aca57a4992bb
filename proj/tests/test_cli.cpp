#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "llmar/cli.hpp"
#include "llmar/dataset.hpp"

using namespace llmar;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("llmar_cli_" + std::to_string(::getpid()) + "_" +
                                            std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    static int& counter() {
        static int n = 0;
        return n;
    }
};

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void spill(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

struct CliResult {
    int code = -1;
    std::string out;
    std::string err;
};

CliResult run(const std::vector<std::string>& args) {
    std::ostringstream captured_out, captured_err;
    auto* old_out = std::cout.rdbuf(captured_out.rdbuf());
    auto* old_err = std::cerr.rdbuf(captured_err.rdbuf());
    CliResult result;
    try {
        result.code = run_cli(args);
    } catch (...) {
        std::cout.rdbuf(old_out);
        std::cerr.rdbuf(old_err);
        throw;
    }
    std::cout.rdbuf(old_out);
    std::cerr.rdbuf(old_err);
    result.out = captured_out.str();
    result.err = captured_err.str();
    return result;
}

// Same minority-high planted design as the training tests: the only success
// mechanism is vc_experience AND perseverance, and prevalence sits near the
// mechanism's natural rate so forcing keeps the high levels below the median.
json planted_spec(int count) {
    json features = json::array();
    for (const char* name : {"vc_experience", "perseverance", "technical_background"}) {
        features.push_back(
            {{"name", name}, {"levels", {0.0, 1.0}}, {"weights", {0.6, 0.4}}});
    }
    return {{"count", count},
            {"prevalence", 0.10},
            {"base_rate", 0.0},
            {"features", features},
            {"planted_rules",
             json::array({{{"direction", "success"},
                           {"body", {"vc_experience", "perseverance"}},
                           {"probability", 0.6}}})}};
}

fs::path planted_csv(const TempDir& dir, int count, std::uint64_t seed) {
    GeneratorConfig config = GeneratorConfig::from_json(planted_spec(count));
    SyntheticData result = generate_synthetic(config, seed);
    fs::path path = dir.path / ("data_" + std::to_string(count) + ".csv");
    write_dataset(result.data, path);
    return path;
}

std::vector<std::string> small_train_args() {
    return {"--iterations",   "2",   "--checkpoint-every", "2",     "--candidates", "2",
            "--batch-size",   "40",  "--batch-prevalence", "0.125", "--sample-size", "200",
            "--grid-step",    "0.1", "--jobs",             "2"};
}

std::vector<std::string> cat(std::vector<std::string> base, const std::vector<std::string>& more) {
    base.insert(base.end(), more.begin(), more.end());
    return base;
}

json parse_error_envelope(const std::string& err) {
    json j = json::parse(err);
    REQUIRE(j.contains("error"));
    REQUIRE(j["error"]["category"].is_string());
    REQUIRE(j["error"]["message"].is_string());
    return j["error"];
}

}  // namespace

TEST_CASE("missing, unknown, or malformed commands exit with usage errors") {
    auto none = run({});
    CHECK(none.code == 2);
    CHECK(none.err.find("crossval") != std::string::npos);

    auto unknown = run({"frobnicate"});
    CHECK(unknown.code == 2);
    CHECK(unknown.err.rfind("error: ", 0) == 0);

    auto badflag = run({"eval", "--bogus-flag"});
    CHECK(badflag.code == 2);

    auto help = run({"--help"});
    CHECK(help.code == 0);
    CHECK(help.out.find("Usage") != std::string::npos);
}

TEST_CASE("the f-score calculator evaluates precision and recall directly") {
    auto text = run({"eval", "--precision", "58.3", "--recall", "7", "--beta", "0.25"});
    CHECK(text.code == 0);
    CHECK(text.out == "F_0.25(precision 58.3, recall 7) = 40.7381\n");

    auto as_json = run({"eval", "--precision", "58.3", "--recall", "7", "--beta", "0.25",
                        "--json"});
    CHECK(as_json.code == 0);
    json j = json::parse(as_json.out);
    CHECK(j["beta"].get<double>() == 0.25);
    CHECK(std::abs(j["f_beta"].get<double>() - 40.738139) < 1e-4);

    auto partial = run({"eval", "--precision", "58.3", "--json"});
    CHECK(partial.code == 2);
    json err = parse_error_envelope(partial.err);
    CHECK(err["category"] == "config");
    CHECK(err["message"].get<std::string>().find("both") != std::string::npos);
}

TEST_CASE("synth writes the dataset and a replayable invocation") {
    TempDir dir;
    fs::path spec_path = dir.path / "spec.json";
    spill(spec_path, planted_spec(400).dump(2) + "\n");
    fs::path out_a = dir.path / "a";

    auto first = run({"synth", "--spec", spec_path.string(), "--seed", "11", "--out",
                      out_a.string()});
    CHECK(first.code == 0);
    CHECK(first.out.find("generated 400 records") != std::string::npos);

    std::string csv = slurp(out_a / "dataset.csv");
    CHECK(csv.rfind("id,label,", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 401);

    json metadata = json::parse(slurp(out_a / "metadata.json"));
    CHECK(metadata["generator"] == GeneratorConfig::from_json(planted_spec(400)).to_json());

    json invocation = json::parse(slurp(out_a / "invocation.json"));
    CHECK(invocation["command"] == "synth");
    CHECK(invocation["generator"] == metadata["generator"]);
    CHECK(invocation["count"] == -1);
    CHECK(invocation["training"]["seed"] == 11);

    SUBCASE("--count overrides the spec's record total") {
        fs::path out_c = dir.path / "c";
        auto smaller = run({"synth", "--spec", spec_path.string(), "--count", "60", "--seed",
                            "11", "--out", out_c.string()});
        CHECK(smaller.code == 0);
        std::string small_csv = slurp(out_c / "dataset.csv");
        CHECK(std::count(small_csv.begin(), small_csv.end(), '\n') == 61);
        json embedded = json::parse(slurp(out_c / "invocation.json"));
        CHECK(embedded["generator"]["count"] == 60);
        CHECK(embedded["count"] == -1);
    }

    SUBCASE("replaying the invocation reproduces the dataset byte for byte") {
        fs::path out_b = dir.path / "b";
        auto replay = run({"synth", "--config", (out_a / "invocation.json").string(), "--out",
                           out_b.string()});
        CHECK(replay.code == 0);
        CHECK(slurp(out_b / "dataset.csv") == csv);
        CHECK(slurp(out_b / "metadata.json") == slurp(out_a / "metadata.json"));
    }

    SUBCASE("a config saved by one command cannot drive another") {
        auto mismatch = run({"mine", "--config", (out_a / "invocation.json").string()});
        CHECK(mismatch.code == 2);
        CHECK(mismatch.err.find("saved by 'synth'") != std::string::npos);
    }

    SUBCASE("config loading rejects missing or malformed files") {
        auto missing = run({"synth", "--config", (dir.path / "nope.json").string()});
        CHECK(missing.code == 2);
        CHECK(missing.err.find("cannot open") != std::string::npos);

        fs::path broken = dir.path / "broken.json";
        spill(broken, "{not json");
        auto malformed = run({"synth", "--config", broken.string()});
        CHECK(malformed.code == 2);

        fs::path array = dir.path / "array.json";
        spill(array, "[1, 2]\n");
        auto nonobject = run({"synth", "--config", array.string()});
        CHECK(nonobject.code == 2);
        CHECK(nonobject.err.find("JSON object") != std::string::npos);
    }
}

TEST_CASE("mine surfaces the planted pair and saves rules.json") {
    TempDir dir;
    fs::path data = planted_csv(dir, 400, 11);
    fs::path out_m = dir.path / "m";

    auto mined = run({"mine", "--data", data.string(), "--min-support", "0.05",
                      "--min-confidence", "0.3", "--out", out_m.string(), "--json"});
    CHECK(mined.code == 0);
    json payload = json::parse(mined.out);
    CHECK(payload["transactions"] == 400);
    REQUIRE(!payload["rules"].empty());
    CHECK(slurp(out_m / "rules.json") == mined.out);

    bool found_pair = false;
    for (const auto& rule : payload["rules"]) {
        if (rule["antecedent"] == json::array({"perseverance", "vc_experience"}) &&
            rule["direction"] == "success") {
            found_pair = true;
            CHECK(rule["confidence"].get<double>() > 0.4);
        }
    }
    CHECK(found_pair);

    auto text = run({"mine", "--data", data.string(), "--min-support", "0.05",
                     "--min-confidence", "0.3", "--top", "5"});
    CHECK(text.code == 0);
    CHECK(text.out.find("rules from 400 records") != std::string::npos);
    CHECK(text.out.find(" -> ") != std::string::npos);

    auto replay = run({"mine", "--config", (out_m / "invocation.json").string(), "--out",
                       (dir.path / "m2").string()});
    CHECK(replay.code == 0);
    CHECK(slurp(dir.path / "m2" / "rules.json") == slurp(out_m / "rules.json"));
}

TEST_CASE("predict scores founders against a policy file") {
    TempDir dir;
    fs::path policy = dir.path / "policy.txt";
    spill(policy, "Success rules:\neducation AND work_experience,0.60\n\nFailure rules:\n");
    fs::path data = dir.path / "founders.csv";
    spill(data,
          "id,label,education,work_experience\n"
          "f1,1,0.7,0.2\n"
          "f2,0,0.1,0.9\n");

    auto stdout_mode = run({"predict", "--data", data.string(), "--policy", policy.string()});
    CHECK(stdout_mode.code == 0);
    CHECK(stdout_mode.out ==
          "id,p_success,p_failure,prediction\n"
          "f1,0.084000,0.000000,0\n"
          "f2,0.054000,0.000000,0\n");

    auto thresholded = run({"predict", "--data", data.string(), "--policy", policy.string(),
                            "--theta-success", "0.06"});
    CHECK(thresholded.code == 0);
    CHECK(thresholded.out.find("f1,0.084000,0.000000,1\n") != std::string::npos);
    CHECK(thresholded.out.find("f2,0.054000,0.000000,0\n") != std::string::npos);

    auto rescaled = run({"predict", "--data", data.string(), "--policy", policy.string(),
                         "--rescale"});
    CHECK(rescaled.code == 0);
    CHECK(rescaled.out.find("f1,0.070000,") != std::string::npos);

    fs::path out_p = dir.path / "p";
    auto saved = run({"predict", "--data", data.string(), "--policy", policy.string(), "--out",
                      out_p.string()});
    CHECK(saved.code == 0);
    CHECK(saved.out.find("wrote 2 predictions") != std::string::npos);
    CHECK(slurp(out_p / "predictions.csv") == stdout_mode.out);

    auto replay = run({"predict", "--config", (out_p / "invocation.json").string(), "--out",
                       (dir.path / "p2").string()});
    CHECK(replay.code == 0);
    CHECK(slurp(dir.path / "p2" / "predictions.csv") == slurp(out_p / "predictions.csv"));

    auto no_policy = run({"predict", "--data", data.string()});
    CHECK(no_policy.code == 2);
    CHECK(no_policy.err.find("needs --policy") != std::string::npos);
}

TEST_CASE("eval separates classes with a grid search and honors fixed thresholds") {
    TempDir dir;
    fs::path policy = dir.path / "policy.txt";
    spill(policy, "Success rules:\neducation AND work_experience,0.60\n\nFailure rules:\n");
    fs::path data = dir.path / "separable.csv";
    spill(data,
          "id,label,education,work_experience\n"
          "s1,1,0.9,0.9\n"
          "s2,1,0.9,0.9\n"
          "s3,1,0.9,0.9\n"
          "n1,0,0.1,0.1\n"
          "n2,0,0.1,0.1\n"
          "n3,0,0.1,0.1\n");

    fs::path out_e = dir.path / "e";
    auto searched = run({"eval", "--data", data.string(), "--policy", policy.string(),
                         "--search", "--beta", "0.25", "--grid-step", "0.02", "--json", "--out",
                         out_e.string()});
    CHECK(searched.code == 0);
    json metrics = json::parse(searched.out);
    CHECK(metrics["f_beta"].get<double>() == 1.0);
    CHECK(metrics["tp"] == 3);
    CHECK(metrics["fp"] == 0);
    CHECK(metrics["fn"] == 0);
    CHECK(metrics["tn"] == 3);
    double theta_s = metrics["theta_success"].get<double>();
    CHECK(theta_s >= 0.006);
    CHECK(theta_s < 0.486);
    CHECK(slurp(out_e / "metrics.json") == searched.out);

    auto fixed = run({"eval", "--data", data.string(), "--policy", policy.string(),
                      "--theta-success", "0.4", "--beta", "0.25"});
    CHECK(fixed.code == 0);
    CHECK(fixed.out.find("tp 3  fp 0  fn 0  tn 3") != std::string::npos);
    CHECK(fixed.out.find("F_0.25 1.0000") != std::string::npos);

    auto replay = run({"eval", "--config", (out_e / "invocation.json").string(), "--out",
                       (dir.path / "e2").string()});
    CHECK(replay.code == 0);
    CHECK(slurp(dir.path / "e2" / "metrics.json") == slurp(out_e / "metrics.json"));
}

TEST_CASE("train runs the mock loop end to end and replays byte for byte") {
    TempDir dir;
    fs::path data = planted_csv(dir, 400, 11);
    const std::string before = slurp(data);
    fs::path out_t = dir.path / "t";

    auto trained = run(cat({"train", "--data", data.string(), "--out", out_t.string(),
                            "--train-folds", "0,1", "--val-fold", "2", "--test-fold", "3",
                            "--seed", "7"},
                           small_train_args()));
    CHECK(trained.code == 0);
    CHECK(trained.out.find("final policy: iteration") != std::string::npos);
    for (const char* name : {"final_policy.txt", "metrics.json", "seeds.json", "config.json",
                             "invocation.json", "policy_001.txt", "policy_002.txt",
                             "calibration_001.json", "checkpoint_002.json", "status.json"}) {
        CAPTURE(name);
        CHECK(fs::exists(out_t / name));
    }
    CHECK(fs::exists(out_t / "prompts"));
    CHECK(slurp(data) == before);

    fs::path out_r = dir.path / "r";
    auto replay = run({"train", "--config", (out_t / "invocation.json").string(), "--out",
                       out_r.string(), "--json"});
    CHECK(replay.code == 0);
    json summary = json::parse(replay.out);
    CHECK(summary["rules"].get<std::size_t>() > 0);
    CHECK(summary["f_beta"].is_number());
    for (const char* name :
         {"final_policy.txt", "metrics.json", "seeds.json", "policy_002.txt",
          "calibration_001.json"}) {
        CAPTURE(name);
        CHECK(slurp(out_r / name) == slurp(out_t / name));
    }

    SUBCASE("fold roles must be four distinct indices") {
        auto overlap = run(cat({"train", "--data", data.string(), "--out",
                                (dir.path / "x").string(), "--train-folds", "0,1", "--val-fold",
                                "1", "--test-fold", "3"},
                               small_train_args()));
        CHECK(overlap.code == 2);
        CHECK(overlap.err.find("fold roles") != std::string::npos);

        auto short_list = run(cat({"train", "--data", data.string(), "--out",
                                   (dir.path / "y").string(), "--train-folds", "0", "--val-fold",
                                   "2", "--test-fold", "3"},
                               small_train_args()));
        CHECK(short_list.code == 2);
        CHECK(short_list.err.find("exactly two") != std::string::npos);
    }
}

TEST_CASE("crossval covers all twelve partitions and replays deterministically") {
    TempDir dir;
    fs::path data = planted_csv(dir, 480, 3);
    const std::string before = slurp(data);
    fs::path out_cv = dir.path / "cv";

    auto report = run(cat({"crossval", "--data", data.string(), "--out", out_cv.string(),
                           "--seed", "5"},
                          small_train_args()));
    CHECK(report.code == 0);
    CHECK(report.out.find("Average") != std::string::npos);
    CHECK(report.out.find("t01v2e3") != std::string::npos);
    CHECK(fs::exists(out_cv / "report.txt"));
    CHECK(fs::exists(out_cv / "partitions" / "t01v2e3" / "final_policy.txt"));
    CHECK(slurp(data) == before);

    json parsed = json::parse(slurp(out_cv / "report.json"));
    REQUIRE(parsed["partitions"].size() == 12);
    CHECK(parsed["complete"] == true);
    for (const auto& partition : parsed["partitions"]) CHECK(partition["completed"] == true);

    fs::path out_cv2 = dir.path / "cv2";
    auto replay = run({"crossval", "--config", (out_cv / "invocation.json").string(), "--out",
                       out_cv2.string(), "--json"});
    CHECK(replay.code == 0);
    CHECK(json::parse(replay.out) == parsed);
    CHECK(slurp(out_cv2 / "report.json") == slurp(out_cv / "report.json"));
    CHECK(slurp(out_cv2 / "partitions" / "t23v0e1" / "final_policy.txt") ==
          slurp(out_cv / "partitions" / "t23v0e1" / "final_policy.txt"));
}

TEST_CASE("crossval reports partial failure when partitions cannot train") {
    TempDir dir;
    // 80 records leave too few positives per partition to fill one batch.
    fs::path data = planted_csv(dir, 80, 9);
    fs::path out_cv = dir.path / "cv";

    auto report = run(cat({"crossval", "--data", data.string(), "--out", out_cv.string()},
                          small_train_args()));
    CHECK(report.code == 5);
    CHECK(report.err.find("12 of 12 partitions failed") != std::string::npos);
    json parsed = json::parse(slurp(out_cv / "report.json"));
    CHECK(parsed["complete"] == false);
    for (const auto& partition : parsed["partitions"]) {
        CHECK(partition["completed"] == false);
        CHECK(partition["error"].get<std::string>().find("positive") != std::string::npos);
    }
}

TEST_CASE("provider problems surface with provider or config exit codes") {
    TempDir dir;
    fs::path data = planted_csv(dir, 400, 11);

    auto bogus = run(cat({"train", "--data", data.string(), "--out",
                          (dir.path / "b").string(), "--provider", "bogus", "--json"},
                         small_train_args()));
    CHECK(bogus.code == 2);
    json config_err = parse_error_envelope(bogus.err);
    CHECK(config_err["category"] == "config");
    CHECK(config_err["message"].get<std::string>().find("unknown provider") !=
          std::string::npos);

    ::setenv("LLMAR_BASE_URL", "http://127.0.0.1:9/v1", 1);
    ::setenv("LLMAR_API_KEY", "test-key", 1);
    auto unreachable = run(cat({"train", "--data", data.string(), "--out",
                                (dir.path / "u").string(), "--provider", "remote", "--json"},
                               small_train_args()));
    ::unsetenv("LLMAR_BASE_URL");
    ::unsetenv("LLMAR_API_KEY");
    CHECK(unreachable.code == 4);
    json provider_err = parse_error_envelope(unreachable.err);
    CHECK(provider_err["category"] == "provider");
    json status = json::parse(slurp(dir.path / "u" / "status.json"));
    CHECK(status["completed"] == false);
}

TEST_CASE("broken inputs map onto schema, parse, and data exit codes") {
    TempDir dir;
    fs::path bad_header = dir.path / "bad.csv";
    spill(bad_header, "foo,bar\n1,2\n");
    auto schema = run({"mine", "--data", bad_header.string(), "--json"});
    CHECK(schema.code == 3);
    CHECK(parse_error_envelope(schema.err)["category"] == "schema");

    auto missing = run({"mine", "--data", (dir.path / "absent.csv").string()});
    CHECK(missing.code == 3);
    CHECK(missing.err.rfind("error (data): ", 0) == 0);

    fs::path data = dir.path / "founders.csv";
    spill(data,
          "id,label,education,work_experience\n"
          "f1,1,0.7,0.2\n");

    fs::path headerless = dir.path / "headerless.txt";
    spill(headerless, "education AND work_experience,0.60\n");
    auto parse_fail = run({"predict", "--data", data.string(), "--policy",
                           headerless.string(), "--json"});
    CHECK(parse_fail.code == 3);
    CHECK(parse_error_envelope(parse_fail.err)["category"] == "parse");

    fs::path unknown_trait = dir.path / "unknown_trait.txt";
    spill(unknown_trait, "Success rules:\nage,0.60\n");
    auto missing_fact = run({"predict", "--data", data.string(), "--policy",
                             unknown_trait.string(), "--json"});
    CHECK(missing_fact.code == 3);
    json fact_err = parse_error_envelope(missing_fact.err);
    CHECK(fact_err["category"] == "data");
    CHECK(fact_err["message"].get<std::string>().find("age") != std::string::npos);
}
