#include "policyeval/errors.hpp"
#include "policyeval/prompts.hpp"
#include "policyeval/util.hpp"

#include <doctest.h>

#include <set>

#include "test_util.hpp"

using namespace policyeval;

namespace {

const PolicyText& policy() {
    static PolicyText p = PolicyText::load(testutil::asset_dir() / "policy");
    return p;
}

const Post kPost{"p1", "some example post", GoldLabel::non_antisemitic};

std::vector<std::string> numbered_thoughts(const std::string& user_message) {
    std::vector<std::string> out;
    for (const auto& line : policyeval::util::split_lines(user_message)) {
        if (line.size() > 3 && line[0] >= '1' && line[0] <= '9' && line[1] == '.' &&
            line[2] == ' ')
            out.push_back(line.substr(3));
    }
    return out;
}

} // namespace

TEST_CASE("policy assets are internally consistent") {
    CHECK(policy().full_policy.find(policy().definition_only) != std::string::npos);
    CHECK(policy().example_bullets().size() == 11);
    CHECK(policy().definition_only.find("certain perception of Jews") != std::string::npos);
}

TEST_CASE("variant id string round trip") {
    for (const char* s :
         {"zs-as", "zs-alpha", "zs-beta", "zs-cot", "guided-cot", "ablation:a1",
          "ablation:a5"}) {
        CHECK(PromptVariantId::from_string(s).to_string() == s);
    }
    CHECK_THROWS_AS(PromptVariantId::from_string("ablation:a6"), ConfigError);
    CHECK_THROWS_AS(PromptVariantId::from_string("few-shot"), ConfigError);
}

TEST_CASE("system message policy per variant") {
    auto as = render({PromptKind::zs_as, {}}, kPost, policy());
    CHECK_FALSE(as.system_message.has_value());

    auto alpha = render({PromptKind::zs_alpha, {}}, kPost, policy());
    REQUIRE(alpha.system_message.has_value());
    CHECK(alpha.system_message->find(policy().definition_only) != std::string::npos);
    for (const auto& bullet : policy().example_bullets()) {
        CHECK(alpha.system_message->find(bullet) == std::string::npos);
    }

    for (auto kind : {PromptKind::zs_beta, PromptKind::zs_cot, PromptKind::guided_cot}) {
        auto r = render({kind, {}}, kPost, policy());
        REQUIRE(r.system_message.has_value());
        CHECK(*r.system_message == policy().full_policy);
    }
}

TEST_CASE("every variant ends with the two-line output directive") {
    std::vector<PromptVariantId> all = {{PromptKind::zs_as, {}},
                                        {PromptKind::zs_alpha, {}},
                                        {PromptKind::zs_beta, {}},
                                        {PromptKind::zs_cot, {}},
                                        {PromptKind::guided_cot, {}}};
    for (const auto& v : list_ablation_suite()) all.push_back(v);
    for (const auto& v : all) {
        auto r = render(v, kPost, policy());
        auto lines = util::split_lines(r.user_message);
        REQUIRE(lines.size() >= 2);
        CHECK(lines[lines.size() - 2].find("Summary:") != std::string::npos);
        CHECK(lines[lines.size() - 1].find("Antisemitic:") != std::string::npos);
        CHECK(r.user_message.find(kPost.text) != std::string::npos);
    }
}

TEST_CASE("zs-cot carries the step-by-step cue") {
    auto r = render({PromptKind::zs_cot, {}}, kPost, policy());
    CHECK(r.user_message.find("Let's think step by step") != std::string::npos);
}

TEST_CASE("guided-cot instantiates all five thoughts") {
    auto r = render({PromptKind::guided_cot, {}}, kPost, policy());
    auto steps = numbered_thoughts(r.user_message);
    REQUIRE(steps.size() == 5);
    for (size_t i = 0; i < 5; ++i) CHECK(steps[i] == guided_thoughts()[i]);
}

TEST_CASE("render is deterministic") {
    auto a = render({PromptKind::guided_cot, {}}, kPost, policy());
    auto b = render({PromptKind::guided_cot, {}}, kPost, policy());
    CHECK(a.user_message == b.user_message);
    CHECK(a.system_message == b.system_message);
}

TEST_CASE("ablation drops exactly one thought and renumbers") {
    auto full = render({PromptKind::guided_cot, {}}, kPost, policy());
    const auto full_steps = numbered_thoughts(full.user_message);

    for (int excluded = 1; excluded <= 5; ++excluded) {
        auto r = render({PromptKind::ablation, excluded}, kPost, policy());
        auto steps = numbered_thoughts(r.user_message);
        REQUIRE(steps.size() == 4);

        std::set<std::string> removed(full_steps.begin(), full_steps.end());
        for (const auto& s : steps) removed.erase(s);
        REQUIRE(removed.size() == 1);
        CHECK(*removed.begin() == guided_thoughts()[excluded - 1]);

        // Renumbered consecutively 1..4.
        int expected = 1;
        for (const auto& line : util::split_lines(r.user_message)) {
            if (line.size() > 3 && line[1] == '.' && line[0] >= '1' && line[0] <= '9') {
                CHECK(line[0] - '0' == expected);
                ++expected;
            }
        }
    }
}

TEST_CASE("ablation A3 drops the promote-vs-awareness check") {
    auto r = render({PromptKind::ablation, 3}, kPost, policy());
    CHECK(r.user_message.find("calling out to promote") == std::string::npos);
    CHECK(r.user_message.find("sarcasm, criticism") != std::string::npos);
    CHECK(r.user_message.find("IHRA definition of antisemitism") != std::string::npos);
}

TEST_CASE("ablation suite enumerates each excluded thought once") {
    auto suite = list_ablation_suite();
    REQUIRE(suite.size() == 5);
    std::set<int> excluded;
    for (const auto& v : suite) {
        CHECK(v.kind == PromptKind::ablation);
        excluded.insert(*v.excluded_thought);
    }
    CHECK(excluded == std::set<int>{1, 2, 3, 4, 5});

    // A1 retains the other four thoughts.
    auto a1 = render(suite[0], kPost, policy());
    for (int i = 1; i < 5; ++i)
        CHECK(a1.user_message.find(guided_thoughts()[i]) != std::string::npos);
    CHECK(a1.user_message.find(guided_thoughts()[0]) == std::string::npos);
    // A5 excludes the stance-reflection step.
    auto a5 = render(suite[4], kPost, policy());
    CHECK(a5.user_message.find("stance is favorable") == std::string::npos);
}

TEST_CASE("render rejects bad inputs") {
    CHECK_THROWS_AS(render({PromptKind::ablation, 0}, kPost, policy()), ConfigError);
    CHECK_THROWS_AS(render({PromptKind::ablation, 6}, kPost, policy()), ConfigError);
    CHECK_THROWS_AS(render({PromptKind::ablation, std::nullopt}, kPost, policy()),
                    ConfigError);
    Post empty{"p2", "   ", GoldLabel::non_antisemitic};
    CHECK_THROWS_AS(render({PromptKind::zs_as, {}}, empty, policy()), ConfigError);
}
