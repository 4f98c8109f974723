#pragma once

#include "policyeval/linalg.hpp"

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace policyeval {

struct EmbeddingKey {
    std::string post_id;
    std::string model;
    std::string variant;

    bool operator==(const EmbeddingKey&) const = default;
};

// Fixed-width response vectors aligned to (post, model, variant) keys.
// Rows whose provider call failed stay flagged missing; analyses exclude
// them symmetrically across models.
class EmbeddingMatrix {
public:
    EmbeddingMatrix() = default;
    explicit EmbeddingMatrix(std::size_t width) : width_(width) { matrix_.cols = width; }

    std::size_t width() const { return width_; }
    std::size_t rows() const { return keys_.size(); }

    // Values must be finite and match the width.
    void add_row(EmbeddingKey key, std::span<const double> values);
    void add_missing_row(EmbeddingKey key);

    std::span<const double> row(std::size_t i) const { return matrix_.row(i); }
    const EmbeddingKey& key(std::size_t i) const { return keys_[i]; }
    bool present(std::size_t i) const { return present_[i]; }
    std::size_t present_count() const;

    const linalg::Matrix& raw() const { return matrix_; }

    // Row indices for one model, in insertion order, present rows only.
    std::vector<std::size_t> rows_for_model(const std::string& model) const;
    // post_id -> row index for one model; throws on duplicate posts.
    std::map<std::string, std::size_t> post_index_for_model(const std::string& model) const;
    std::vector<std::string> models() const; // distinct, in first-seen order

    // Binary matrix file plus a line-json sidecar index.
    void save(const std::filesystem::path& base) const;
    static EmbeddingMatrix load(const std::filesystem::path& base);

    static EmbeddingMatrix from_rows(const std::vector<EmbeddingKey>& keys,
                                     const std::vector<std::vector<double>>& rows);

private:
    std::size_t width_ = 0;
    linalg::Matrix matrix_;
    std::vector<EmbeddingKey> keys_;
    std::vector<bool> present_;
};

class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual std::string id() const = 0; // cache namespace
    virtual std::size_t dimension() const = 0;
    // One entry per input; nullopt marks a failure after retries.
    virtual std::vector<std::optional<std::vector<double>>> embed(
        const std::vector<std::string>& texts) = 0;
};

// Deterministic offline encoder: hashed character trigrams, L2-normalized.
// Identical strings always map to identical rows.
class HashEmbeddingProvider : public EmbeddingProvider {
public:
    explicit HashEmbeddingProvider(std::size_t dim = 64);
    std::string id() const override;
    std::size_t dimension() const override { return dim_; }
    std::vector<std::optional<std::vector<double>>> embed(
        const std::vector<std::string>& texts) override;

private:
    std::size_t dim_;
};

// OpenAI-style /embeddings client; retries transport failures, then
// reports the row missing rather than aborting the batch.
class HttpEmbeddingProvider : public EmbeddingProvider {
public:
    HttpEmbeddingProvider(std::string base_url, std::string model, int max_retries = 3,
                          std::string api_key = {});
    ~HttpEmbeddingProvider() override;
    std::string id() const override;
    std::size_t dimension() const override; // 0 until the first successful call
    std::vector<std::optional<std::vector<double>>> embed(
        const std::vector<std::string>& texts) override;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Content-addressed vector store keyed by sha256(provider id + text).
class EmbeddingCache {
public:
    explicit EmbeddingCache(std::filesystem::path dir);
    std::optional<std::vector<double>> get(const std::string& provider_id,
                                           const std::string& text) const;
    void put(const std::string& provider_id, const std::string& text,
             std::span<const double> values);

private:
    std::filesystem::path entry_path(const std::string& provider_id,
                                     const std::string& text) const;
    std::filesystem::path dir_;
};

struct EmbedItem {
    EmbeddingKey key;
    std::string text;
};

// One row per item, cache-first; only cache misses reach the provider.
EmbeddingMatrix embed_responses(const std::vector<EmbedItem>& items,
                                EmbeddingProvider& provider, EmbeddingCache* cache = nullptr,
                                std::size_t batch_size = 64);

} // namespace policyeval
