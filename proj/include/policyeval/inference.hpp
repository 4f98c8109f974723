#pragma once

#include "policyeval/corpus.hpp"
#include "policyeval/prompts.hpp"

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

namespace policyeval {

struct ModelSpec {
    std::string name;
    std::string endpoint_url; // base URL, e.g. http://127.0.0.1:8080/v1
    bool is_reasoning = false;
    bool is_quantized = false;
    int max_output_tokens = 2048;
    std::string api_key_env;          // env var holding the bearer token, optional
    std::string think_open = "<think>";
    std::string think_close = "</think>";
};

enum class DecodeMode { greedy, sample, self_consistency };

const char* decode_mode_name(DecodeMode mode);
DecodeMode decode_mode_from_string(const std::string& s);

struct DecodeConfig {
    DecodeMode mode = DecodeMode::greedy;
    double temperature = 0.0;
    double top_p = 1.0;
    int num_runs = 1;
    long seed = 0;

    static DecodeConfig greedy(long seed = 0);
    static DecodeConfig sample(int num_runs = 5, long seed = 0);
    static DecodeConfig self_consistency(int num_runs = 30, long seed = 0);

    void validate() const; // enforces the per-mode invariants
};

enum class FinishReason { stop, length, error };

const char* finish_reason_name(FinishReason r);
FinishReason finish_reason_from_string(const std::string& s);

struct RunRecord {
    std::string model;
    PromptVariantId variant;
    std::string post_id;
    int run_index = 0;
    DecodeMode decode_mode = DecodeMode::greedy;
    std::string response_text;
    FinishReason finish_reason = FinishReason::stop;
    std::size_t prompt_chars = 0;
    std::optional<int> output_tokens;
    std::string timestamp; // UTC instant, informational only

    std::string store_key() const;
};

// Append-only line-json store of RunRecords. (model, variant, post_id,
// run_index, decode_mode) is unique; duplicate appends are rejected.
// Appends are serialized; analytics read completed files only.
class RunStore {
public:
    explicit RunStore(std::filesystem::path file);

    bool contains(const RunRecord& record) const;
    bool contains_key(const std::string& key) const;
    // Returns false if the key is already present.
    bool append(const RunRecord& record);
    std::size_t size() const;
    const std::filesystem::path& path() const { return file_; }

    static std::vector<RunRecord> read_all(const std::filesystem::path& file);

private:
    std::filesystem::path file_;
    std::unordered_set<std::string> keys_;
    mutable std::mutex mutex_;
};

struct ChatRequest {
    std::string model;
    std::optional<std::string> system_message;
    std::string user_message;
    double temperature = 0.0;
    std::optional<double> top_p; // absent = no nucleus truncation
    int max_tokens = 2048;
    std::optional<long> seed;
};

struct ChatResult {
    std::string text;
    FinishReason finish = FinishReason::stop;
    std::optional<int> completion_tokens;
    std::string error; // set when finish == error
};

class ChatEndpoint {
public:
    virtual ~ChatEndpoint() = default;
    virtual ChatResult complete(const ChatRequest& request) = 0;
};

struct HttpRetryPolicy {
    int max_retries = 3;
    std::chrono::milliseconds initial_backoff{1000}; // then 2s, 4s
};

// OpenAI-style chat-completions client over HTTP. Retries transport
// failures and retryable statuses (408/429/5xx) with exponential backoff,
// then reports finish = error instead of throwing.
class HttpChatEndpoint : public ChatEndpoint {
public:
    HttpChatEndpoint(std::string base_url, HttpRetryPolicy retry = {},
                     std::string api_key = {});
    ~HttpChatEndpoint() override;
    ChatResult complete(const ChatRequest& request) override;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Scripted offline endpoint. Each post maps to a response list; a request
// is matched to the post whose text appears in the user message. Entry
// selection is (seed + hash(user_message, model)) mod len when the request
// carries a seed, so parallel and resumed batches reproduce identical
// records and distinct model names draw distinct responses; without a
// seed a per-(post, model) counter cycles the list.
struct MockScriptEntry {
    std::string text;
    FinishReason finish = FinishReason::stop;
};

struct MockScript {
    // post text -> scripted responses (keyed by text because the wire
    // request carries the rendered prompt, not the post id)
    std::vector<std::pair<std::string, std::vector<MockScriptEntry>>> posts;
    std::string unscripted_response =
        "I cannot assist with that request.";

    static MockScript from_json_file(const std::filesystem::path& path);
};

class MockChatEndpoint : public ChatEndpoint {
public:
    explicit MockChatEndpoint(MockScript script);
    ChatResult complete(const ChatRequest& request) override;

    std::vector<ChatRequest> captured_requests() const;
    std::size_t call_count() const;

private:
    MockScript script_;
    std::map<std::string, std::size_t> counters_;
    std::vector<ChatRequest> captured_;
    mutable std::mutex mutex_;
};

// Shared selection rule so the in-process endpoint and the HTTP mock
// server behave identically.
const MockScriptEntry* select_mock_entry(const MockScript& script,
                                         const std::string& user_message,
                                         const std::string& model,
                                         std::optional<long> seed,
                                         std::map<std::string, std::size_t>& counters);

struct RunBatchOptions {
    int parallel = 4;
    std::size_t max_new_records = 0; // 0 = no limit; used to simulate interruption
};

struct RunBatchStats {
    std::size_t dispatched = 0;
    std::size_t skipped = 0; // already present (resume)
    std::size_t errors = 0;
};

// Issues every missing (post, run_index) request for one
// (model, variant, decode) cell with bounded parallelism. Present keys
// are skipped, so re-invoking after an interruption completes the store
// without duplicates.
RunBatchStats run_batch(const std::vector<Post>& corpus, const PolicyText& policy,
                        const ModelSpec& model, const PromptVariantId& variant,
                        const DecodeConfig& decode, ChatEndpoint& endpoint, RunStore& store,
                        const RunBatchOptions& options = {});

} // namespace policyeval
