#include "policyeval/embedding.hpp"

#include "policyeval/errors.hpp"
#include "policyeval/util.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <cmath>
#include <cstring>
#include <fstream>
#include <thread>

namespace policyeval {

using nlohmann::json;

void EmbeddingMatrix::add_row(EmbeddingKey key, std::span<const double> values) {
    if (width_ == 0) {
        width_ = values.size();
        matrix_.cols = width_;
    }
    if (values.size() != width_)
        throw MathError("embedding row width " + std::to_string(values.size()) +
                        " does not match matrix width " + std::to_string(width_));
    for (double v : values) {
        if (!std::isfinite(v)) throw MathError("non-finite embedding entry");
    }
    matrix_.data.insert(matrix_.data.end(), values.begin(), values.end());
    matrix_.rows += 1;
    keys_.push_back(std::move(key));
    present_.push_back(true);
}

void EmbeddingMatrix::add_missing_row(EmbeddingKey key) {
    if (width_ == 0)
        throw MathError("cannot flag a missing row before the matrix width is known");
    matrix_.data.insert(matrix_.data.end(), width_, 0.0);
    matrix_.rows += 1;
    keys_.push_back(std::move(key));
    present_.push_back(false);
}

std::size_t EmbeddingMatrix::present_count() const {
    std::size_t n = 0;
    for (bool p : present_) n += p;
    return n;
}

std::vector<std::size_t> EmbeddingMatrix::rows_for_model(const std::string& model) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < rows(); ++i) {
        if (keys_[i].model == model && present_[i]) out.push_back(i);
    }
    return out;
}

std::map<std::string, std::size_t> EmbeddingMatrix::post_index_for_model(
    const std::string& model) const {
    std::map<std::string, std::size_t> out;
    for (std::size_t i = 0; i < rows(); ++i) {
        if (keys_[i].model != model || !present_[i]) continue;
        if (!out.emplace(keys_[i].post_id, i).second)
            throw MathError("duplicate row for model " + model + ", post " + keys_[i].post_id);
    }
    return out;
}

std::vector<std::string> EmbeddingMatrix::models() const {
    std::vector<std::string> out;
    for (const auto& k : keys_) {
        bool seen = false;
        for (const auto& m : out) {
            if (m == k.model) { seen = true; break; }
        }
        if (!seen) out.push_back(k.model);
    }
    return out;
}

namespace {
constexpr char kEmbMagic[8] = {'P', 'E', 'M', 'B', '0', '0', '0', '1'};
}

void EmbeddingMatrix::save(const std::filesystem::path& base) const {
    std::filesystem::path bin = base;
    bin += ".embd";
    std::filesystem::path idx = base;
    idx += ".idx.jsonl";
    if (bin.has_parent_path()) std::filesystem::create_directories(bin.parent_path());

    std::ofstream out(bin, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write embedding matrix: " + bin.string());
    out.write(kEmbMagic, sizeof(kEmbMagic));
    const std::uint64_t r = rows();
    const std::uint64_t w = width_;
    out.write(reinterpret_cast<const char*>(&r), sizeof(r));
    out.write(reinterpret_cast<const char*>(&w), sizeof(w));
    out.write(reinterpret_cast<const char*>(matrix_.data.data()),
              static_cast<std::streamsize>(matrix_.data.size() * sizeof(double)));

    std::string lines;
    json header;
    header["width"] = w;
    header["rows"] = r;
    lines += header.dump() + "\n";
    for (std::size_t i = 0; i < rows(); ++i) {
        json obj;
        obj["post_id"] = keys_[i].post_id;
        obj["model"] = keys_[i].model;
        obj["variant"] = keys_[i].variant;
        obj["present"] = static_cast<bool>(present_[i]);
        lines += obj.dump() + "\n";
    }
    util::write_file(idx, lines);
}

EmbeddingMatrix EmbeddingMatrix::load(const std::filesystem::path& base) {
    std::filesystem::path bin = base;
    bin += ".embd";
    std::filesystem::path idx = base;
    idx += ".idx.jsonl";

    std::ifstream in(bin, std::ios::binary);
    if (!in) throw IngestError("cannot open embedding matrix: " + bin.string());
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kEmbMagic, sizeof(kEmbMagic)) != 0)
        throw IngestError("bad embedding matrix magic in " + bin.string());
    std::uint64_t r = 0, w = 0;
    in.read(reinterpret_cast<char*>(&r), sizeof(r));
    in.read(reinterpret_cast<char*>(&w), sizeof(w));
    EmbeddingMatrix m(static_cast<std::size_t>(w));
    m.matrix_ = linalg::Matrix(r, w);
    in.read(reinterpret_cast<char*>(m.matrix_.data.data()),
            static_cast<std::streamsize>(r * w * sizeof(double)));
    if (!in) throw IngestError("truncated embedding matrix: " + bin.string());

    bool header_seen = false;
    util::for_each_line(idx, [&](std::size_t, std::string_view line) {
        json obj = json::parse(line);
        if (!header_seen) {
            header_seen = true;
            if (obj.value("width", std::uint64_t(0)) != w ||
                obj.value("rows", std::uint64_t(0)) != r)
                throw IngestError("sidecar index disagrees with matrix shape: " +
                                  idx.string());
            return;
        }
        m.keys_.push_back(EmbeddingKey{obj.at("post_id").get<std::string>(),
                                       obj.at("model").get<std::string>(),
                                       obj.at("variant").get<std::string>()});
        m.present_.push_back(obj.value("present", true));
    });
    if (m.keys_.size() != r)
        throw IngestError("sidecar index row count mismatch in " + idx.string());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (double v : m.row(i)) {
            if (!std::isfinite(v)) throw IngestError("non-finite entry in " + bin.string());
        }
    }
    return m;
}

EmbeddingMatrix EmbeddingMatrix::from_rows(const std::vector<EmbeddingKey>& keys,
                                           const std::vector<std::vector<double>>& rows) {
    if (keys.size() != rows.size())
        throw MathError("from_rows: keys and rows must have the same length");
    EmbeddingMatrix m;
    for (std::size_t i = 0; i < rows.size(); ++i) m.add_row(keys[i], rows[i]);
    return m;
}

// ---------------------------------------------------------------------------
// Providers

HashEmbeddingProvider::HashEmbeddingProvider(std::size_t dim) : dim_(dim) {
    if (dim_ < 2) throw ConfigError("hash embedding dimension must be >= 2");
}

std::string HashEmbeddingProvider::id() const {
    return "hash-trigram-" + std::to_string(dim_);
}

std::vector<std::optional<std::vector<double>>> HashEmbeddingProvider::embed(
    const std::vector<std::string>& texts) {
    std::vector<std::optional<std::vector<double>>> out;
    out.reserve(texts.size());
    for (const auto& text : texts) {
        std::vector<double> v(dim_, 0.0);
        if (text.size() >= 3) {
            for (std::size_t i = 0; i + 3 <= text.size(); ++i) {
                const std::uint64_t h = util::fnv1a64(std::string_view(text).substr(i, 3));
                const std::size_t slot = h % dim_;
                v[slot] += (h >> 63) ? 1.0 : -1.0;
            }
        }
        double norm = 0;
        for (double x : v) norm += x * x;
        if (norm == 0) {
            v[util::fnv1a64(text) % dim_] = 1.0;
        } else {
            norm = std::sqrt(norm);
            for (double& x : v) x /= norm;
        }
        out.emplace_back(std::move(v));
    }
    return out;
}

struct HttpEmbeddingProvider::Impl {
    std::string host_port;
    std::string path_prefix;
    std::string model;
    int max_retries = 3;
    std::string api_key;
    std::size_t dim = 0;
};

HttpEmbeddingProvider::HttpEmbeddingProvider(std::string base_url, std::string model,
                                             int max_retries, std::string api_key)
    : impl_(std::make_unique<Impl>()) {
    const std::string scheme = "http://";
    if (base_url.rfind(scheme, 0) != 0)
        throw ConfigError("embedding endpoint must start with http:// , got: " + base_url);
    auto rest = base_url.substr(scheme.size());
    auto slash = rest.find('/');
    impl_->host_port = scheme + rest.substr(0, slash);
    impl_->path_prefix = slash == std::string::npos ? "" : rest.substr(slash);
    while (!impl_->path_prefix.empty() && impl_->path_prefix.back() == '/')
        impl_->path_prefix.pop_back();
    impl_->model = std::move(model);
    impl_->max_retries = max_retries;
    impl_->api_key = std::move(api_key);
}

HttpEmbeddingProvider::~HttpEmbeddingProvider() = default;

std::string HttpEmbeddingProvider::id() const { return "http-" + impl_->model; }

std::size_t HttpEmbeddingProvider::dimension() const { return impl_->dim; }

std::vector<std::optional<std::vector<double>>> HttpEmbeddingProvider::embed(
    const std::vector<std::string>& texts) {
    std::vector<std::optional<std::vector<double>>> out(texts.size());
    if (texts.empty()) return out;

    json body;
    body["model"] = impl_->model;
    body["input"] = texts;

    for (int attempt = 0; attempt <= impl_->max_retries; ++attempt) {
        httplib::Client client(impl_->host_port);
        client.set_read_timeout(300, 0);
        httplib::Headers headers;
        if (!impl_->api_key.empty())
            headers.emplace("Authorization", "Bearer " + impl_->api_key);
        auto res = client.Post(impl_->path_prefix + "/embeddings", headers, body.dump(),
                               "application/json");
        if (res && res->status == 200) {
            try {
                json payload = json::parse(res->body);
                for (const auto& item : payload.at("data")) {
                    const std::size_t index = item.at("index").get<std::size_t>();
                    if (index >= out.size()) continue;
                    std::vector<double> v = item.at("embedding").get<std::vector<double>>();
                    if (impl_->dim == 0) impl_->dim = v.size();
                    out[index] = std::move(v);
                }
                return out;
            } catch (const json::exception&) {
                // fall through to retry
            }
        }
        if (attempt < impl_->max_retries)
            std::this_thread::sleep_for(std::chrono::milliseconds(100 << attempt));
    }
    return out; // all nullopt: caller flags rows missing
}

// ---------------------------------------------------------------------------
// Cache

EmbeddingCache::EmbeddingCache(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
}

std::filesystem::path EmbeddingCache::entry_path(const std::string& provider_id,
                                                 const std::string& text) const {
    const std::string digest = util::sha256_hex(provider_id + "\x1f" + text);
    return dir_ / digest.substr(0, 2) / (digest.substr(2) + ".vec");
}

std::optional<std::vector<double>> EmbeddingCache::get(const std::string& provider_id,
                                                       const std::string& text) const {
    const auto path = entry_path(provider_id, text);
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    std::uint64_t width = 0;
    in.read(reinterpret_cast<char*>(&width), sizeof(width));
    std::vector<double> v(width);
    in.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(width * sizeof(double)));
    if (!in) return std::nullopt;
    return v;
}

void EmbeddingCache::put(const std::string& provider_id, const std::string& text,
                         std::span<const double> values) {
    const auto path = entry_path(provider_id, text);
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write cache entry: " + path.string());
    const std::uint64_t width = values.size();
    out.write(reinterpret_cast<const char*>(&width), sizeof(width));
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(double)));
}

// ---------------------------------------------------------------------------

EmbeddingMatrix embed_responses(const std::vector<EmbedItem>& items,
                                EmbeddingProvider& provider, EmbeddingCache* cache,
                                std::size_t batch_size) {
    if (batch_size == 0) batch_size = 1;
    std::vector<std::optional<std::vector<double>>> vectors(items.size());

    std::vector<std::size_t> misses;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (cache) {
            if (auto hit = cache->get(provider.id(), items[i].text)) {
                vectors[i] = std::move(hit);
                continue;
            }
        }
        misses.push_back(i);
    }

    for (std::size_t start = 0; start < misses.size(); start += batch_size) {
        const std::size_t end = std::min(start + batch_size, misses.size());
        std::vector<std::string> batch;
        batch.reserve(end - start);
        for (std::size_t i = start; i < end; ++i) batch.push_back(items[misses[i]].text);
        auto results = provider.embed(batch);
        if (results.size() != batch.size())
            throw MathError("embedding provider returned a mismatched batch size");
        for (std::size_t i = start; i < end; ++i) {
            auto& slot = results[i - start];
            if (slot) {
                if (cache) cache->put(provider.id(), items[misses[i]].text, *slot);
                vectors[misses[i]] = std::move(slot);
            }
        }
    }

    EmbeddingMatrix matrix;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (vectors[i]) matrix.add_row(items[i].key, *vectors[i]);
    }
    // Width is known only after the first present row, so flag misses in a
    // second pass while keeping the original order.
    bool any_missing = false;
    for (const auto& v : vectors) any_missing |= !v.has_value();
    if (any_missing) {
        if (matrix.rows() == 0)
            throw MathError("embedding provider failed for every input after retries");
        EmbeddingMatrix ordered(matrix.width());
        for (std::size_t i = 0; i < items.size(); ++i) {
            if (vectors[i]) ordered.add_row(items[i].key, *vectors[i]);
            else ordered.add_missing_row(items[i].key);
        }
        return ordered;
    }
    return matrix;
}

} // namespace policyeval
