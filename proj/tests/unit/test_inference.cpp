#include "policyeval/errors.hpp"
#include "policyeval/inference.hpp"
#include "policyeval/metrics.hpp"
#include "policyeval/mock_server.hpp"
#include "policyeval/parsing.hpp"

#include <doctest.h>

#include <set>

#include "test_util.hpp"

using namespace policyeval;

namespace {

const PolicyText& policy() {
    static PolicyText p = PolicyText::load(testutil::asset_dir() / "policy");
    return p;
}

std::vector<Post> small_corpus() {
    return {
        {"p1", "first unique text", GoldLabel::non_antisemitic},
        {"p2", "second unique text", GoldLabel::antisemitic},
        {"p3", "third unique text", GoldLabel::non_antisemitic},
    };
}

MockScript yes_script() {
    MockScript script;
    for (const auto& post : small_corpus()) {
        script.posts.emplace_back(
            post.text,
            std::vector<MockScriptEntry>{{"Summary: s\nAntisemitic: Yes",
                                          FinishReason::stop}});
    }
    return script;
}

ModelSpec mock_model(const std::string& url = "http://127.0.0.1:1/v1") {
    ModelSpec m;
    m.name = "mock-model";
    m.endpoint_url = url;
    return m;
}

} // namespace

TEST_CASE("decode config factories enforce the per-mode invariants") {
    auto greedy = DecodeConfig::greedy();
    CHECK(greedy.temperature == 0.0);
    CHECK(greedy.num_runs == 1);
    auto sample = DecodeConfig::sample();
    CHECK(sample.num_runs == 5);
    CHECK(sample.temperature == doctest::Approx(0.6));
    CHECK(sample.top_p == doctest::Approx(0.9));
    auto sc = DecodeConfig::self_consistency();
    CHECK(sc.num_runs == 30);

    DecodeConfig bad = greedy;
    bad.temperature = 0.5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("run store rejects duplicates and reloads keys") {
    testutil::TempDir dir("store");
    const auto file = dir.path / "runs.jsonl";
    RunRecord r;
    r.model = "m";
    r.variant = {PromptKind::zs_beta, {}};
    r.post_id = "p1";
    r.run_index = 0;
    r.decode_mode = DecodeMode::greedy;
    r.response_text = "Antisemitic: Yes";
    r.prompt_chars = 100;
    r.timestamp = "2026-01-01T00:00:00Z";
    {
        RunStore store(file);
        CHECK(store.append(r));
        CHECK_FALSE(store.append(r));
        RunRecord other = r;
        other.run_index = 1;
        CHECK(store.append(other));
        CHECK(store.size() == 2);
    }
    RunStore reloaded(file);
    CHECK(reloaded.size() == 2);
    CHECK(reloaded.contains(r));
    auto all = RunStore::read_all(file);
    REQUIRE(all.size() == 2);
    CHECK(all[0].response_text == "Antisemitic: Yes");
    CHECK(all[0].prompt_chars == 100);
}

TEST_CASE("mock endpoint serves scripted responses") {
    SUBCASE("single entry answers and cycles") {
        MockScript script;
        script.posts.emplace_back(
            "the only post",
            std::vector<MockScriptEntry>{{"body\nAntisemitic: Yes", FinishReason::stop}});
        MockChatEndpoint endpoint(script);
        ChatRequest req;
        req.user_message = "Classify: the only post please";
        auto r1 = endpoint.complete(req);
        CHECK(r1.text == "body\nAntisemitic: Yes");
        auto r2 = endpoint.complete(req); // beyond script length: cycles
        CHECK(r2.text == r1.text);
    }
    SUBCASE("unscripted posts get the fixed refusal text") {
        MockChatEndpoint endpoint(yes_script());
        ChatRequest req;
        req.user_message = "something entirely unknown";
        auto r = endpoint.complete(req);
        CHECK(r.text == MockScript{}.unscripted_response);
    }
}

TEST_CASE("run_batch issues one record per post and run") {
    testutil::TempDir dir("batch");
    MockChatEndpoint endpoint(yes_script());
    auto model = mock_model();

    SUBCASE("greedy: one record per post at run_index 0") {
        RunStore store(dir.path / "g.jsonl");
        auto stats = run_batch(small_corpus(), policy(), model, {PromptKind::zs_beta, {}},
                               DecodeConfig::greedy(), endpoint, store);
        CHECK(stats.dispatched == 3);
        CHECK(store.size() == 3);
        for (const auto& r : RunStore::read_all(dir.path / "g.jsonl"))
            CHECK(r.run_index == 0);
    }
    SUBCASE("self-consistency: num_runs records per post") {
        RunStore store(dir.path / "sc.jsonl");
        run_batch(small_corpus(), policy(), model, {PromptKind::zs_beta, {}},
                  DecodeConfig::self_consistency(30), endpoint, store,
                  {.parallel = 8});
        CHECK(store.size() == 90);
    }
    SUBCASE("a complete store makes run_batch a no-op") {
        RunStore store(dir.path / "idem.jsonl");
        run_batch(small_corpus(), policy(), model, {PromptKind::zs_beta, {}},
                  DecodeConfig::greedy(), endpoint, store);
        auto again = run_batch(small_corpus(), policy(), model, {PromptKind::zs_beta, {}},
                               DecodeConfig::greedy(), endpoint, store);
        CHECK(again.dispatched == 0);
        CHECK(again.skipped == 3);
        CHECK(store.size() == 3);
    }
}

TEST_CASE("interrupted batch resumes to the identical key set") {
    testutil::TempDir dir("resume");
    auto model = mock_model();
    const DecodeConfig decode = DecodeConfig::self_consistency(10);

    MockChatEndpoint full_endpoint(yes_script());
    RunStore full(dir.path / "full.jsonl");
    run_batch(small_corpus(), policy(), model, {PromptKind::zs_beta, {}}, decode,
              full_endpoint, full, {.parallel = 4});

    MockChatEndpoint endpoint(yes_script());
    RunStore interrupted(dir.path / "interrupted.jsonl");
    run_batch(small_corpus(), policy(), model, {PromptKind::zs_beta, {}}, decode, endpoint,
              interrupted, {.parallel = 4, .max_new_records = 13});
    CHECK(interrupted.size() == 13);

    RunStore resumed(dir.path / "interrupted.jsonl");
    auto stats = run_batch(small_corpus(), policy(), model, {PromptKind::zs_beta, {}},
                           decode, endpoint, resumed, {.parallel = 4});
    CHECK(stats.skipped == 13);
    CHECK(resumed.size() == 30);

    auto keys = [](const std::filesystem::path& p) {
        std::set<std::string> out;
        for (const auto& r : RunStore::read_all(p)) out.insert(r.store_key());
        return out;
    };
    CHECK(keys(dir.path / "full.jsonl") == keys(dir.path / "interrupted.jsonl"));
}

TEST_CASE("captured requests carry the decode parameters") {
    testutil::TempDir dir("wire");
    auto model = mock_model();

    SUBCASE("greedy: temperature 0 and no nucleus truncation") {
        MockChatEndpoint endpoint(yes_script());
        RunStore store(dir.path / "g.jsonl");
        run_batch(small_corpus(), policy(), model, {PromptKind::zs_beta, {}},
                  DecodeConfig::greedy(7), endpoint, store);
        for (const auto& req : endpoint.captured_requests()) {
            CHECK(req.temperature == 0.0);
            CHECK_FALSE(req.top_p.has_value());
            REQUIRE(req.seed.has_value());
            CHECK(*req.seed == 7);
        }
    }
    SUBCASE("sampling: temperature 0.6, top_p 0.9, seed = base + run_index") {
        MockChatEndpoint endpoint(yes_script());
        RunStore store(dir.path / "s.jsonl");
        run_batch(small_corpus(), policy(), model, {PromptKind::zs_beta, {}},
                  DecodeConfig::sample(5, 100), endpoint, store, {.parallel = 1});
        std::set<long> seeds;
        for (const auto& req : endpoint.captured_requests()) {
            CHECK(req.temperature == doctest::Approx(0.6));
            REQUIRE(req.top_p.has_value());
            CHECK(*req.top_p == doctest::Approx(0.9));
            seeds.insert(*req.seed);
        }
        CHECK(seeds == std::set<long>{100, 101, 102, 103, 104});
    }
}

TEST_CASE("zs-as requests carry no system message") {
    testutil::TempDir dir("nosys");
    MockChatEndpoint endpoint(yes_script());
    auto model = mock_model();
    RunStore store(dir.path / "s.jsonl");
    run_batch(small_corpus(), policy(), model, {PromptKind::zs_as, {}},
              DecodeConfig::greedy(), endpoint, store);
    for (const auto& req : endpoint.captured_requests())
        CHECK_FALSE(req.system_message.has_value());

    MockChatEndpoint endpoint2(yes_script());
    RunStore store2(dir.path / "s2.jsonl");
    run_batch(small_corpus(), policy(), model, {PromptKind::zs_beta, {}},
              DecodeConfig::greedy(), endpoint2, store2);
    for (const auto& req : endpoint2.captured_requests()) {
        REQUIRE(req.system_message.has_value());
        CHECK(*req.system_message == policy().full_policy);
    }
}

TEST_CASE("token-limit truncation marks finish_reason=length") {
    testutil::TempDir dir("len");
    MockScript script;
    script.posts.emplace_back(
        "first unique text",
        std::vector<MockScriptEntry>{{"truncated out", FinishReason::length}});
    script.posts.emplace_back(
        "second unique text",
        std::vector<MockScriptEntry>{{"Summary: s\nAntisemitic: No", FinishReason::stop}});
    script.posts.emplace_back(
        "third unique text",
        std::vector<MockScriptEntry>{{"Summary: s\nAntisemitic: Yes", FinishReason::stop}});
    MockChatEndpoint endpoint(script);
    auto model = mock_model();
    RunStore store(dir.path / "l.jsonl");
    run_batch(small_corpus(), policy(), model, {PromptKind::zs_beta, {}},
              DecodeConfig::greedy(), endpoint, store);
    for (const auto& r : RunStore::read_all(dir.path / "l.jsonl")) {
        const bool hit_cap = r.output_tokens && *r.output_tokens == model.max_output_tokens;
        CHECK((r.finish_reason == FinishReason::length) == hit_cap);
    }
}

TEST_CASE("thirty scripted runs with 16 yes votes majority to yes") {
    testutil::TempDir dir("vote");
    MockScript script;
    std::vector<MockScriptEntry> entries;
    for (int i = 0; i < 30; ++i) {
        entries.push_back({i < 16 ? "Summary: s\nAntisemitic: Yes"
                                  : "Summary: s\nAntisemitic: No",
                           FinishReason::stop});
    }
    script.posts.emplace_back("first unique text", entries);
    MockChatEndpoint endpoint(script);
    auto model = mock_model();
    RunStore store(dir.path / "v.jsonl");
    std::vector<Post> one = {small_corpus()[0]};
    run_batch(one, policy(), model, {PromptKind::zs_beta, {}},
              DecodeConfig::self_consistency(30, 12345), endpoint, store);

    const RefusalPatterns refusals = RefusalPatterns::defaults();
    std::vector<ParsedResponse> parsed;
    for (const auto& r : RunStore::read_all(dir.path / "v.jsonl"))
        parsed.push_back(parse(r, model, refusals));
    auto vote = majority_vote(parsed);
    REQUIRE(vote.label.has_value());
    CHECK(*vote.label == Label::yes);
    CHECK(vote.yes_votes == 16);
    CHECK(vote.no_votes == 14);
}

TEST_CASE("http endpoint round trips through the mock server") {
    MockServer server(yes_script());
    server.start();
    HttpChatEndpoint endpoint(server.base_url());
    ChatRequest req;
    req.model = "mock-model";
    req.user_message = "Classify: second unique text";
    req.max_tokens = 256;
    auto result = endpoint.complete(req);
    CHECK(result.finish == FinishReason::stop);
    CHECK(result.text == "Summary: s\nAntisemitic: Yes");
    REQUIRE(result.completion_tokens.has_value());
    CHECK(server.chat_calls() == 1);
    server.stop();
}

TEST_CASE("transport failure after retries yields an error record") {
    // Nothing listens on this port; connection is refused immediately.
    HttpChatEndpoint endpoint("http://127.0.0.1:1/v1",
                              HttpRetryPolicy{1, std::chrono::milliseconds(1)});
    ChatRequest req;
    req.user_message = "anything";
    auto result = endpoint.complete(req);
    CHECK(result.finish == FinishReason::error);
    CHECK_FALSE(result.error.empty());
}
