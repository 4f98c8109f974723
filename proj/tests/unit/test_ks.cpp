#include "policyeval/divergence.hpp"
#include "policyeval/errors.hpp"

#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>

using namespace policyeval;

namespace {

// Exhaustive ECDF oracle: evaluate both empirical CDFs at every sample
// point of the union and take the suprema directly.
struct EcdfOracle {
    double two = 0, greater = 0, less = 0;
};

EcdfOracle ecdf_oracle(const std::vector<double>& pos, const std::vector<double>& neg) {
    std::set<double> points(pos.begin(), pos.end());
    points.insert(neg.begin(), neg.end());
    EcdfOracle out;
    for (double x : points) {
        const double f_pos =
            static_cast<double>(std::count_if(pos.begin(), pos.end(),
                                              [&](double v) { return v <= x; })) /
            static_cast<double>(pos.size());
        const double f_neg =
            static_cast<double>(std::count_if(neg.begin(), neg.end(),
                                              [&](double v) { return v <= x; })) /
            static_cast<double>(neg.size());
        out.greater = std::max(out.greater, f_pos - f_neg);
        out.less = std::max(out.less, f_neg - f_pos);
    }
    out.two = std::max(out.greater, out.less);
    return out;
}

} // namespace

TEST_CASE("identical samples: statistic 0, p = 1") {
    std::vector<double> x = {0.2, 0.4, 0.4, 0.9};
    for (auto alt : {KsAlternative::two_sided, KsAlternative::greater, KsAlternative::less}) {
        auto r = ks_two_sample(x, x, alt);
        CHECK(r.statistic == 0.0);
        CHECK(r.p_value == 1.0);
    }
}

TEST_CASE("disjoint supports: two-sided statistic 1") {
    auto r = ks_two_sample({0, 0, 0}, {1, 1, 1}, KsAlternative::two_sided);
    CHECK(r.statistic == 1.0);
    CHECK(r.m == 3);
    CHECK(r.n == 3);
}

TEST_CASE("shifted integers match the brute-force ECDF") {
    std::vector<double> pos = {1, 2, 3};
    std::vector<double> neg = {2, 3, 4};
    auto r = ks_two_sample(pos, neg, KsAlternative::two_sided);
    CHECK(r.statistic == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    auto oracle = ecdf_oracle(pos, neg);
    CHECK(r.statistic == oracle.two);
}

TEST_CASE("one-sided statistics are the signed suprema") {
    // pos entirely above neg: F_pos never exceeds F_neg.
    auto greater = ks_two_sample({2}, {1}, KsAlternative::greater);
    CHECK(greater.statistic == 0.0);
    CHECK(greater.p_value == 1.0);
    auto less = ks_two_sample({2}, {1}, KsAlternative::less);
    CHECK(less.statistic == 1.0);
    CHECK(less.p_value == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
}

TEST_CASE("random suite matches the oracle exactly") {
    std::mt19937_64 gen(77);
    for (int trial = 0; trial < 120; ++trial) {
        const std::size_t m = 1 + gen() % 20;
        const std::size_t n = 1 + gen() % 20;
        std::vector<double> pos(m), neg(n);
        // Coarse grid forces ties within and across samples.
        for (auto& v : pos) v = static_cast<double>(gen() % 8);
        for (auto& v : neg) v = static_cast<double>(gen() % 8);

        const auto oracle = ecdf_oracle(pos, neg);
        CHECK(ks_two_sample(pos, neg, KsAlternative::two_sided).statistic == oracle.two);
        CHECK(ks_two_sample(pos, neg, KsAlternative::greater).statistic == oracle.greater);
        CHECK(ks_two_sample(pos, neg, KsAlternative::less).statistic == oracle.less);
    }
}

// Dual theta-series form of the Kolmogorov survival function:
//   Q(l) = 1 - sqrt(2*pi)/l * sum_{j>=1} exp(-(2j-1)^2 pi^2 / (8 l^2))
// A mathematically distinct series from the implementation's alternating
// exponential sum, so agreement is a real cross-check.
static double kolmogorov_q_dual(double lambda) {
    if (lambda <= 0) return 1.0;
    const double pi = 3.14159265358979323846;
    double sum = 0;
    for (int j = 1; j <= 50; ++j) {
        const double t = (2.0 * j - 1.0) * pi;
        sum += std::exp(-t * t / (8.0 * lambda * lambda));
    }
    return std::clamp(1.0 - std::sqrt(2.0 * pi) / lambda * sum, 0.0, 1.0);
}

TEST_CASE("two-sided p-value agrees with the dual theta series") {
    std::mt19937_64 gen(91);
    std::uniform_real_distribution<double> uni(0, 1);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t m = 5 + gen() % 16;
        const std::size_t n = 5 + gen() % 16;
        std::vector<double> pos(m), neg(n);
        for (auto& v : pos) v = uni(gen);
        for (auto& v : neg) v = uni(gen) + 0.2 * (trial % 3);
        const auto r = ks_two_sample(pos, neg, KsAlternative::two_sided);
        const double en = std::sqrt(double(m) * double(n) / double(m + n));
        CHECK(r.p_value == doctest::Approx(kolmogorov_q_dual(r.statistic * en))
                               .epsilon(0)
                               .scale(1)
                               .epsilon(1e-9));
    }
    // Classic critical-value anchors for the limiting distribution.
    CHECK(kolmogorov_q_dual(1.3581) == doctest::Approx(0.05).epsilon(1e-3));
    CHECK(kolmogorov_q_dual(1.6276) == doctest::Approx(0.01).epsilon(1e-2));
}

TEST_CASE("one-sided p-value follows the closed form") {
    std::vector<double> pos = {0.1, 0.2, 0.3, 0.8};
    std::vector<double> neg = {0.4, 0.5, 0.6};
    const auto r = ks_two_sample(pos, neg, KsAlternative::greater);
    const double scale = 4.0 * 3.0 / 7.0;
    CHECK(r.p_value ==
          doctest::Approx(std::exp(-2.0 * r.statistic * r.statistic * scale))
              .epsilon(1e-15));
}

TEST_CASE("p-value is monotone non-increasing in the statistic") {
    // Construct samples of fixed sizes with growing separation.
    const std::size_t m = 10, n = 10;
    double last_two = 1.0, last_one = 1.0;
    for (int shift = 0; shift <= 10; ++shift) {
        std::vector<double> pos(m), neg(n);
        for (std::size_t i = 0; i < m; ++i) pos[i] = static_cast<double>(i);
        for (std::size_t i = 0; i < n; ++i) neg[i] = static_cast<double>(i) + shift;
        auto two = ks_two_sample(pos, neg, KsAlternative::two_sided);
        auto less = ks_two_sample(pos, neg, KsAlternative::less);
        CHECK(two.p_value <= last_two + 1e-15);
        CHECK(less.p_value <= last_one + 1e-15);
        last_two = two.p_value;
        last_one = less.p_value;
    }
}

TEST_CASE("empty samples are rejected") {
    CHECK_THROWS_AS(ks_two_sample({}, {1.0}, KsAlternative::two_sided), MathError);
    CHECK_THROWS_AS(ks_two_sample({1.0}, {}, KsAlternative::two_sided), MathError);
}

TEST_CASE("significance stars follow the table convention") {
    CHECK(significance_stars(0.0005) == "***");
    CHECK(significance_stars(0.005) == "**");
    CHECK(significance_stars(0.04) == "*");
    CHECK(significance_stars(0.06) == "");
    CHECK(significance_stars(0.05) == ""); // threshold itself is not significant
}

TEST_CASE("crossing verdict rules") {
    auto result = [](double p, KsAlternative alt) {
        KsResult r;
        r.p_value = p;
        r.alternative = alt;
        return r;
    };
    const double alpha = 0.05;
    SUBCASE("two-sided not significant") {
        CHECK(crossing_verdict(result(0.5, KsAlternative::two_sided),
                               result(0.01, KsAlternative::greater),
                               result(0.01, KsAlternative::less),
                               alpha) == CohesionVerdict::no_difference);
    }
    SUBCASE("both one-sided significant: the ECDFs must cross") {
        CHECK(crossing_verdict(result(0.001, KsAlternative::two_sided),
                               result(0.01, KsAlternative::greater),
                               result(0.02, KsAlternative::less),
                               alpha) == CohesionVerdict::crossing);
    }
    SUBCASE("only greater significant") {
        CHECK(crossing_verdict(result(0.001, KsAlternative::two_sided),
                               result(0.01, KsAlternative::greater),
                               result(0.9, KsAlternative::less),
                               alpha) == CohesionVerdict::positive_more_cohesive);
    }
    SUBCASE("only less significant") {
        CHECK(crossing_verdict(result(0.001, KsAlternative::two_sided),
                               result(0.9, KsAlternative::greater),
                               result(0.01, KsAlternative::less),
                               alpha) == CohesionVerdict::positive_less_cohesive);
    }
}
