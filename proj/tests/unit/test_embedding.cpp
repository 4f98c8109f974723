#include "policyeval/embedding.hpp"
#include "policyeval/errors.hpp"
#include "policyeval/mock_server.hpp"

#include <doctest.h>

#include <cmath>

#include "test_util.hpp"

using namespace policyeval;

namespace {

// Delegates to the hash provider while counting how many texts actually
// reach the provider (for the warm-cache contract).
class CountingProvider : public EmbeddingProvider {
public:
    explicit CountingProvider(std::size_t dim) : inner_(dim) {}
    std::string id() const override { return inner_.id(); }
    std::size_t dimension() const override { return inner_.dimension(); }
    std::vector<std::optional<std::vector<double>>> embed(
        const std::vector<std::string>& texts) override {
        embedded_texts += texts.size();
        return inner_.embed(texts);
    }
    std::size_t embedded_texts = 0;

private:
    HashEmbeddingProvider inner_;
};

// Fails on demand to exercise the missing-row path.
class FlakyProvider : public EmbeddingProvider {
public:
    std::string id() const override { return "flaky"; }
    std::size_t dimension() const override { return 4; }
    std::vector<std::optional<std::vector<double>>> embed(
        const std::vector<std::string>& texts) override {
        std::vector<std::optional<std::vector<double>>> out;
        for (const auto& t : texts) {
            if (t == "fail me") out.emplace_back(std::nullopt);
            else out.emplace_back(std::vector<double>{1, 2, 3, double(t.size())});
        }
        return out;
    }
};

} // namespace

TEST_CASE("hash provider is deterministic with fixed width") {
    HashEmbeddingProvider a(16), b(16);
    auto va = a.embed({"the same text", "another"});
    auto vb = b.embed({"the same text"});
    REQUIRE(va[0].has_value());
    CHECK(*va[0] == *vb[0]);
    CHECK(va[0]->size() == 16);
    CHECK(*va[0] != *va[1]);
    double norm = 0;
    for (double x : *va[0]) norm += x * x;
    CHECK(norm == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("embedding matrix enforces width and finiteness") {
    EmbeddingMatrix m;
    m.add_row({"p1", "a", "zs-beta"}, std::vector<double>{1, 2, 3});
    CHECK_THROWS_AS(m.add_row({"p2", "a", "zs-beta"}, std::vector<double>{1, 2}), MathError);
    CHECK_THROWS_AS(
        m.add_row({"p2", "a", "zs-beta"},
                  std::vector<double>{1, 2, std::numeric_limits<double>::infinity()}),
        MathError);
    m.add_missing_row({"p2", "a", "zs-beta"});
    CHECK(m.rows() == 2);
    CHECK(m.present_count() == 1);
}

TEST_CASE("matrix save/load round trip preserves keys and flags") {
    testutil::TempDir dir("embed");
    EmbeddingMatrix m;
    m.add_row({"p1", "a", "zs-beta"}, std::vector<double>{0.5, -1.5});
    m.add_row({"p2", "b", "zs-beta"}, std::vector<double>{2.25, 4.0});
    m.add_missing_row({"p3", "a", "zs-beta"});
    m.save(dir.path / "matrix");

    auto loaded = EmbeddingMatrix::load(dir.path / "matrix");
    REQUIRE(loaded.rows() == 3);
    CHECK(loaded.width() == 2);
    CHECK(loaded.key(0).post_id == "p1");
    CHECK(loaded.key(1).model == "b");
    CHECK(loaded.present(0));
    CHECK_FALSE(loaded.present(2));
    CHECK(loaded.row(1)[0] == 2.25);
    CHECK(loaded.row(1)[1] == 4.0);
}

TEST_CASE("embed_responses caches by content") {
    testutil::TempDir dir("cache");
    EmbeddingCache cache(dir.path / "store");
    CountingProvider provider(8);

    std::vector<EmbedItem> items = {
        {{"p1", "a", "zs-beta"}, "first text"},
        {{"p2", "a", "zs-beta"}, "second text"},
        {{"p3", "a", "zs-beta"}, "first text"}, // duplicate content
    };
    auto first = embed_responses(items, provider, &cache);
    CHECK(first.rows() == 3);
    CHECK(provider.embedded_texts == 3); // duplicates within a batch are not coalesced

    SUBCASE("identical content embeds to identical rows") {
        CHECK(std::equal(first.row(0).begin(), first.row(0).end(), first.row(2).begin()));
    }
    SUBCASE("a warm cache never calls the provider") {
        CountingProvider provider2(8);
        auto second = embed_responses(items, provider2, &cache);
        CHECK(provider2.embedded_texts == 0);
        for (std::size_t r = 0; r < 3; ++r)
            CHECK(std::equal(first.row(r).begin(), first.row(r).end(),
                             second.row(r).begin()));
    }
}

TEST_CASE("http provider round trips through the mock embeddings route") {
    MockScript script;
    script.posts.emplace_back("unused",
                              std::vector<MockScriptEntry>{{"x", FinishReason::stop}});
    MockServer server(script, 12);
    server.start();

    HttpEmbeddingProvider provider(server.base_url(), "embedder");
    auto vectors = provider.embed({"alpha text", "beta text"});
    REQUIRE(vectors.size() == 2);
    REQUIRE(vectors[0].has_value());
    REQUIRE(vectors[1].has_value());
    CHECK(vectors[0]->size() == 12);
    CHECK(provider.dimension() == 12);
    CHECK(server.embedding_calls() == 1); // one batch call

    // The mock embeddings route is the deterministic hash encoder.
    HashEmbeddingProvider reference(12);
    auto expect = reference.embed({"alpha text"});
    CHECK(*vectors[0] == **expect.begin());

    SUBCASE("an unreachable endpoint flags every row after retries") {
        HttpEmbeddingProvider dead("http://127.0.0.1:1/v1", "embedder", 0);
        auto out = dead.embed({"anything"});
        REQUIRE(out.size() == 1);
        CHECK_FALSE(out[0].has_value());
    }
    server.stop();
}

TEST_CASE("a totally failing provider is an error, not an empty matrix") {
    class DeadProvider : public EmbeddingProvider {
    public:
        std::string id() const override { return "dead"; }
        std::size_t dimension() const override { return 0; }
        std::vector<std::optional<std::vector<double>>> embed(
            const std::vector<std::string>& texts) override {
            return std::vector<std::optional<std::vector<double>>>(texts.size());
        }
    };
    DeadProvider provider;
    std::vector<EmbedItem> items = {{{"p1", "a", "zs-beta"}, "text"}};
    CHECK_THROWS_AS(embed_responses(items, provider, nullptr), MathError);
}

TEST_CASE("provider failures flag rows missing, preserving order") {
    FlakyProvider provider;
    std::vector<EmbedItem> items = {
        {{"p1", "a", "zs-beta"}, "ok one"},
        {{"p2", "a", "zs-beta"}, "fail me"},
        {{"p3", "a", "zs-beta"}, "ok two"},
    };
    auto m = embed_responses(items, provider, nullptr);
    REQUIRE(m.rows() == 3);
    CHECK(m.present(0));
    CHECK_FALSE(m.present(1));
    CHECK(m.present(2));
    CHECK(m.key(1).post_id == "p2");
    CHECK(m.rows_for_model("a").size() == 2);
}
