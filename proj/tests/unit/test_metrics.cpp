#include "policyeval/errors.hpp"
#include "policyeval/metrics.hpp"

#include <doctest.h>

#include <algorithm>
#include <random>

using namespace policyeval;

namespace {

ParsedResponse valid(Label l) {
    ParsedResponse p;
    p.category = ResponseCategory::valid;
    p.label = l;
    return p;
}

ParsedResponse invalid_run() {
    ParsedResponse p;
    p.category = ResponseCategory::failure_refusal;
    return p;
}

std::vector<ParsedResponse> runs(std::size_t yes, std::size_t no, std::size_t bad = 0) {
    std::vector<ParsedResponse> out;
    for (std::size_t i = 0; i < yes; ++i) out.push_back(valid(Label::yes));
    for (std::size_t i = 0; i < no; ++i) out.push_back(valid(Label::no));
    for (std::size_t i = 0; i < bad; ++i) out.push_back(invalid_run());
    return out;
}

} // namespace

TEST_CASE("all-correct predictions score (1,1,1)") {
    std::map<std::string, Label> gold = {{"a", Label::yes}, {"b", Label::no},
                                         {"c", Label::yes}};
    auto s = score_positive_class(gold, gold);
    CHECK(s.precision == 1.0);
    CHECK(s.recall == 1.0);
    CHECK(s.f1 == 1.0);
}

TEST_CASE("hand-computed confusion example") {
    // tp=5, fp=3, fn=2, tn=1
    std::map<std::string, Label> preds, gold;
    int id = 0;
    auto add = [&](Label p, Label g) {
        const std::string key = "p" + std::to_string(id++);
        preds[key] = p;
        gold[key] = g;
    };
    for (int i = 0; i < 5; ++i) add(Label::yes, Label::yes);
    for (int i = 0; i < 3; ++i) add(Label::yes, Label::no);
    for (int i = 0; i < 2; ++i) add(Label::no, Label::yes);
    add(Label::no, Label::no);

    auto s = score_positive_class(preds, gold);
    CHECK(s.precision == doctest::Approx(0.625).epsilon(1e-12));
    CHECK(s.recall == doctest::Approx(5.0 / 7.0).epsilon(1e-12));
    CHECK(s.f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("degenerate precision is flagged, not divided") {
    std::map<std::string, Label> preds = {{"a", Label::no}, {"b", Label::no}};
    std::map<std::string, Label> gold = {{"a", Label::yes}, {"b", Label::no}};
    auto s = score_positive_class(preds, gold);
    CHECK(s.degenerate_precision);
    CHECK(s.precision == 0.0);
    CHECK(s.recall == 0.0);
    CHECK(s.f1 == 0.0);
}

TEST_CASE("key mismatch lists the difference") {
    std::map<std::string, Label> preds = {{"a", Label::yes}};
    std::map<std::string, Label> gold = {{"a", Label::yes}, {"b", Label::no}};
    CHECK_THROWS_WITH_AS(score_positive_class(preds, gold), doctest::Contains("b"),
                         MathError);
}

TEST_CASE("score equals a brute-force recount on random instances") {
    std::mt19937_64 gen(11);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 1 + gen() % 50;
        std::map<std::string, Label> preds, gold;
        for (std::size_t i = 0; i < n; ++i) {
            const std::string key = "k" + std::to_string(i);
            preds[key] = gen() % 2 ? Label::yes : Label::no;
            gold[key] = gen() % 2 ? Label::yes : Label::no;
        }
        std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
        for (const auto& [key, p] : preds) {
            const bool actual = gold[key] == Label::yes;
            if (p == Label::yes) (actual ? tp : fp)++;
            else (actual ? fn : tn)++;
        }
        auto s = score_positive_class(preds, gold);
        const double expect_p = (tp + fp) ? double(tp) / double(tp + fp) : 0.0;
        const double expect_r = (tp + fn) ? double(tp) / double(tp + fn) : 0.0;
        CHECK(s.precision == expect_p);
        CHECK(s.recall == expect_r);
        const double pr = expect_p + expect_r;
        CHECK(s.f1 == (pr > 0 ? 2 * expect_p * expect_r / pr : 0.0));
    }
}

TEST_CASE("majority vote over valid runs") {
    SUBCASE("clear majority") {
        auto v = majority_vote(runs(20, 10));
        REQUIRE(v.label.has_value());
        CHECK(*v.label == Label::yes);
        CHECK_FALSE(v.tie);
    }
    SUBCASE("tie resolves to no with the flag set") {
        auto v = majority_vote(runs(15, 15));
        REQUIRE(v.label.has_value());
        CHECK(*v.label == Label::no);
        CHECK(v.tie);
    }
    SUBCASE("invalid runs do not vote") {
        auto v = majority_vote(runs(10, 8, 12));
        REQUIRE(v.label.has_value());
        CHECK(*v.label == Label::yes);
        CHECK(v.invalid_runs == 12);
    }
    SUBCASE("all-invalid leaves the label absent") {
        auto v = majority_vote(runs(0, 0, 5));
        CHECK_FALSE(v.label.has_value());
    }
    SUBCASE("empty run list is an error") { CHECK_THROWS_AS(majority_vote({}), MathError); }
}

TEST_CASE("majority vote is permutation invariant") {
    auto base = runs(7, 5, 3);
    std::mt19937_64 gen(3);
    for (int i = 0; i < 10; ++i) {
        auto shuffled = base;
        std::shuffle(shuffled.begin(), shuffled.end(), gen);
        auto a = majority_vote(base);
        auto b = majority_vote(shuffled);
        CHECK(a.label == b.label);
        CHECK(a.tie == b.tie);
    }
}

TEST_CASE("average over runs is the component-wise mean") {
    SUBCASE("identity on a single triple") {
        auto m = average_over_runs({{1, 1, 1}});
        CHECK(m.precision == 1.0);
        CHECK(m.recall == 1.0);
        CHECK(m.f1 == 1.0);
    }
    SUBCASE("hand mean of two triples") {
        auto m = average_over_runs({{0.4, 0.6, 0.48}, {0.6, 0.6, 0.6}});
        CHECK(m.precision == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(m.recall == doctest::Approx(0.6).epsilon(1e-12));
        CHECK(m.f1 == doctest::Approx(0.54).epsilon(1e-12));
    }
    SUBCASE("five identical triples give that triple") {
        std::vector<ScoreTriple> five(5, ScoreTriple{0.3, 0.7, 0.42});
        auto m = average_over_runs(five);
        CHECK(m.precision == doctest::Approx(0.3).epsilon(1e-12));
        CHECK(m.f1 == doctest::Approx(0.42).epsilon(1e-12));
    }
    SUBCASE("bounded by component-wise min and max") {
        std::mt19937_64 gen(5);
        std::uniform_real_distribution<double> uni(0, 1);
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<ScoreTriple> triples;
            for (int i = 0; i < 6; ++i) triples.push_back({uni(gen), uni(gen), uni(gen)});
            auto m = average_over_runs(triples);
            auto [lo, hi] = std::minmax_element(
                triples.begin(), triples.end(),
                [](const ScoreTriple& a, const ScoreTriple& b) { return a.f1 < b.f1; });
            CHECK(m.f1 >= lo->f1 - 1e-12);
            CHECK(m.f1 <= hi->f1 + 1e-12);
        }
    }
    SUBCASE("empty is an error") { CHECK_THROWS_AS(average_over_runs({}), MathError); }
}

TEST_CASE("delta is the signed f1 difference") {
    ScoreTriple base{0.5, 0.5, 0.49};
    ScoreTriple other{0.5, 0.5, 0.44};
    CHECK(delta(base, base) == 0.0);
    CHECK(delta(base, other) == doctest::Approx(-0.05).epsilon(1e-12));
    CHECK(delta(base, other) == doctest::Approx(-delta(other, base)).epsilon(1e-15));
}
