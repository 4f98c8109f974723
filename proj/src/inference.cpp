#include "policyeval/inference.hpp"

#include "policyeval/errors.hpp"
#include "policyeval/util.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <atomic>
#include <fstream>
#include <thread>

namespace policyeval {

using nlohmann::json;

const char* decode_mode_name(DecodeMode mode) {
    switch (mode) {
    case DecodeMode::greedy: return "greedy";
    case DecodeMode::sample: return "sample";
    case DecodeMode::self_consistency: return "sc";
    }
    return "?";
}

DecodeMode decode_mode_from_string(const std::string& s) {
    const std::string v = util::to_lower(util::trim(s));
    if (v == "greedy") return DecodeMode::greedy;
    if (v == "sample") return DecodeMode::sample;
    if (v == "sc" || v == "self-consistency" || v == "self_consistency")
        return DecodeMode::self_consistency;
    throw ConfigError("unknown decode mode: \"" + s + "\"");
}

DecodeConfig DecodeConfig::greedy(long seed) {
    return DecodeConfig{DecodeMode::greedy, 0.0, 1.0, 1, seed};
}

DecodeConfig DecodeConfig::sample(int num_runs, long seed) {
    return DecodeConfig{DecodeMode::sample, 0.6, 0.9, num_runs, seed};
}

DecodeConfig DecodeConfig::self_consistency(int num_runs, long seed) {
    return DecodeConfig{DecodeMode::self_consistency, 0.6, 0.9, num_runs, seed};
}

void DecodeConfig::validate() const {
    if (num_runs < 1) throw ConfigError("num_runs must be >= 1");
    if (temperature < 0) throw ConfigError("temperature must be >= 0");
    if (top_p <= 0 || top_p > 1) throw ConfigError("top_p must be in (0, 1]");
    if (mode == DecodeMode::greedy && (temperature != 0.0 || num_runs != 1))
        throw ConfigError("greedy decode requires temperature 0 and num_runs 1");
}

const char* finish_reason_name(FinishReason r) {
    switch (r) {
    case FinishReason::stop: return "stop";
    case FinishReason::length: return "length";
    case FinishReason::error: return "error";
    }
    return "?";
}

FinishReason finish_reason_from_string(const std::string& s) {
    if (s == "stop") return FinishReason::stop;
    if (s == "length") return FinishReason::length;
    if (s == "error") return FinishReason::error;
    throw ConfigError("unknown finish reason: \"" + s + "\"");
}

std::string RunRecord::store_key() const {
    std::string key;
    key.reserve(model.size() + post_id.size() + 24);
    key += model;
    key += '\x1f';
    key += variant.to_string();
    key += '\x1f';
    key += post_id;
    key += '\x1f';
    key += std::to_string(run_index);
    key += '\x1f';
    key += decode_mode_name(decode_mode);
    return key;
}

namespace {

json record_to_json(const RunRecord& r) {
    json obj;
    obj["model"] = r.model;
    obj["variant"] = r.variant.to_string();
    obj["post_id"] = r.post_id;
    obj["run_index"] = r.run_index;
    obj["decode_mode"] = decode_mode_name(r.decode_mode);
    obj["response_text"] = r.response_text;
    obj["finish_reason"] = finish_reason_name(r.finish_reason);
    obj["prompt_chars"] = r.prompt_chars;
    if (r.output_tokens) obj["output_tokens"] = *r.output_tokens;
    else obj["output_tokens"] = nullptr;
    obj["timestamp"] = r.timestamp;
    return obj;
}

RunRecord record_from_json(const json& obj) {
    RunRecord r;
    r.model = obj.at("model").get<std::string>();
    r.variant = PromptVariantId::from_string(obj.at("variant").get<std::string>());
    r.post_id = obj.at("post_id").get<std::string>();
    r.run_index = obj.at("run_index").get<int>();
    r.decode_mode = decode_mode_from_string(obj.at("decode_mode").get<std::string>());
    r.response_text = obj.at("response_text").get<std::string>();
    r.finish_reason = finish_reason_from_string(obj.at("finish_reason").get<std::string>());
    r.prompt_chars = obj.at("prompt_chars").get<std::size_t>();
    if (obj.contains("output_tokens") && !obj.at("output_tokens").is_null())
        r.output_tokens = obj.at("output_tokens").get<int>();
    r.timestamp = obj.value("timestamp", "");
    return r;
}

} // namespace

RunStore::RunStore(std::filesystem::path file) : file_(std::move(file)) {
    if (std::filesystem::exists(file_)) {
        util::for_each_line(file_, [&](std::size_t line_no, std::string_view line) {
            RunRecord r;
            try {
                r = record_from_json(json::parse(line));
            } catch (const std::exception& e) {
                throw IngestError("run store " + file_.string() + " line " +
                                  std::to_string(line_no) + ": " + e.what());
            }
            if (!keys_.insert(r.store_key()).second)
                throw IngestError("run store " + file_.string() + " has duplicate key " +
                                  r.store_key());
        });
    } else if (file_.has_parent_path()) {
        std::filesystem::create_directories(file_.parent_path());
    }
}

bool RunStore::contains(const RunRecord& record) const {
    return contains_key(record.store_key());
}

bool RunStore::contains_key(const std::string& key) const {
    std::lock_guard lock(mutex_);
    return keys_.count(key) != 0;
}

bool RunStore::append(const RunRecord& record) {
    std::lock_guard lock(mutex_);
    if (!keys_.insert(record.store_key()).second) return false;
    std::ofstream out(file_, std::ios::binary | std::ios::app);
    if (!out) throw Error("cannot append to run store: " + file_.string());
    out << record_to_json(record).dump() << '\n';
    return true;
}

std::size_t RunStore::size() const {
    std::lock_guard lock(mutex_);
    return keys_.size();
}

std::vector<RunRecord> RunStore::read_all(const std::filesystem::path& file) {
    std::vector<RunRecord> records;
    util::for_each_line(file, [&](std::size_t line_no, std::string_view line) {
        try {
            records.push_back(record_from_json(json::parse(line)));
        } catch (const std::exception& e) {
            throw IngestError("run store " + file.string() + " line " +
                              std::to_string(line_no) + ": " + e.what());
        }
    });
    return records;
}

// ---------------------------------------------------------------------------
// HTTP endpoint

namespace {

json chat_request_body(const ChatRequest& request) {
    json body;
    body["model"] = request.model;
    json messages = json::array();
    if (request.system_message) {
        messages.push_back({{"role", "system"}, {"content", *request.system_message}});
    }
    messages.push_back({{"role", "user"}, {"content", request.user_message}});
    body["messages"] = std::move(messages);
    body["temperature"] = request.temperature;
    if (request.top_p) body["top_p"] = *request.top_p;
    body["max_tokens"] = request.max_tokens;
    if (request.seed) body["seed"] = *request.seed;
    return body;
}

bool retryable_status(int status) {
    return status == 408 || status == 429 || status >= 500;
}

} // namespace

struct HttpChatEndpoint::Impl {
    std::string host_port;
    std::string path_prefix;
    HttpRetryPolicy retry;
    std::string api_key;

    explicit Impl(std::string base_url) {
        // Split http://host:port/prefix into client target and path prefix.
        std::string url = std::move(base_url);
        const std::string scheme = "http://";
        if (url.rfind(scheme, 0) != 0)
            throw ConfigError("endpoint_url must start with http:// , got: " + url);
        auto rest = url.substr(scheme.size());
        auto slash = rest.find('/');
        host_port = scheme + rest.substr(0, slash);
        path_prefix = slash == std::string::npos ? "" : rest.substr(slash);
        while (!path_prefix.empty() && path_prefix.back() == '/') path_prefix.pop_back();
    }

    httplib::Client& thread_client() {
        // One keep-alive connection per worker thread and endpoint.
        thread_local std::map<std::string, std::unique_ptr<httplib::Client>> clients;
        auto& slot = clients[host_port];
        if (!slot) {
            slot = std::make_unique<httplib::Client>(host_port);
            slot->set_connection_timeout(10, 0);
            slot->set_read_timeout(300, 0);
            slot->set_keep_alive(true);
            slot->set_tcp_nodelay(true);
        }
        return *slot;
    }

    ChatResult post_once(const ChatRequest& request, std::string& transient_error) {
        httplib::Client& client = thread_client();
        httplib::Headers headers;
        if (!api_key.empty()) headers.emplace("Authorization", "Bearer " + api_key);
        auto res = client.Post(path_prefix + "/chat/completions", headers,
                               chat_request_body(request).dump(), "application/json");
        if (!res) {
            transient_error = "transport: " + httplib::to_string(res.error());
            return ChatResult{"", FinishReason::error, std::nullopt, transient_error};
        }
        if (res->status != 200) {
            std::string msg = "http " + std::to_string(res->status);
            if (retryable_status(res->status)) {
                transient_error = msg;
            }
            return ChatResult{"", FinishReason::error, std::nullopt, msg};
        }
        try {
            json payload = json::parse(res->body);
            const auto& choice = payload.at("choices").at(0);
            ChatResult result;
            result.text = choice.at("message").at("content").get<std::string>();
            const std::string finish = choice.value("finish_reason", "stop");
            result.finish = finish == "length" ? FinishReason::length : FinishReason::stop;
            if (payload.contains("usage") &&
                payload["usage"].contains("completion_tokens")) {
                result.completion_tokens = payload["usage"]["completion_tokens"].get<int>();
            }
            return result;
        } catch (const json::exception& e) {
            return ChatResult{"", FinishReason::error, std::nullopt,
                              std::string("bad response payload: ") + e.what()};
        }
    }
};

HttpChatEndpoint::HttpChatEndpoint(std::string base_url, HttpRetryPolicy retry,
                                   std::string api_key)
    : impl_(std::make_unique<Impl>(std::move(base_url))) {
    impl_->retry = retry;
    impl_->api_key = std::move(api_key);
}

HttpChatEndpoint::~HttpChatEndpoint() = default;

ChatResult HttpChatEndpoint::complete(const ChatRequest& request) {
    auto backoff = impl_->retry.initial_backoff;
    ChatResult last;
    for (int attempt = 0; attempt <= impl_->retry.max_retries; ++attempt) {
        std::string transient;
        last = impl_->post_once(request, transient);
        if (last.finish != FinishReason::error || transient.empty()) return last;
        if (attempt < impl_->retry.max_retries) {
            std::this_thread::sleep_for(backoff);
            backoff *= 2;
        }
    }
    return last;
}

// ---------------------------------------------------------------------------
// Mock endpoint

MockScript MockScript::from_json_file(const std::filesystem::path& path) {
    json obj = json::parse(util::read_file(path));
    MockScript script;
    if (obj.contains("unscripted_response"))
        script.unscripted_response = obj.at("unscripted_response").get<std::string>();
    if (!obj.contains("posts") || !obj.at("posts").is_object())
        throw ConfigError("mock script needs a \"posts\" object of text -> responses");
    for (const auto& [text, entries] : obj.at("posts").items()) {
        std::vector<MockScriptEntry> list;
        for (const auto& e : entries) {
            MockScriptEntry entry;
            if (e.is_string()) {
                entry.text = e.get<std::string>();
            } else {
                entry.text = e.at("text").get<std::string>();
                if (e.contains("finish_reason"))
                    entry.finish = finish_reason_from_string(e.at("finish_reason"));
            }
            list.push_back(std::move(entry));
        }
        if (list.empty()) throw ConfigError("mock script entry for a post is empty");
        script.posts.emplace_back(text, std::move(list));
    }
    if (script.posts.empty()) throw ConfigError("mock script has no posts");
    return script;
}

const MockScriptEntry* select_mock_entry(const MockScript& script,
                                         const std::string& user_message,
                                         const std::string& model,
                                         std::optional<long> seed,
                                         std::map<std::string, std::size_t>& counters) {
    for (const auto& [post_text, entries] : script.posts) {
        if (user_message.find(post_text) == std::string::npos) continue;
        std::size_t index;
        if (seed) {
            const std::uint64_t mix = static_cast<std::uint64_t>(*seed) +
                                      util::fnv1a64(user_message) + util::fnv1a64(model);
            index = static_cast<std::size_t>(mix % entries.size());
        } else {
            index = counters[post_text + '\x1f' + model]++ % entries.size();
        }
        return &entries[index];
    }
    return nullptr;
}

MockChatEndpoint::MockChatEndpoint(MockScript script) : script_(std::move(script)) {
    if (script_.posts.empty()) throw ConfigError("mock endpoint needs a non-empty script");
}

ChatResult MockChatEndpoint::complete(const ChatRequest& request) {
    std::lock_guard lock(mutex_);
    captured_.push_back(request);
    const MockScriptEntry* entry = select_mock_entry(script_, request.user_message,
                                                     request.model, request.seed, counters_);
    ChatResult result;
    if (!entry) {
        result.text = script_.unscripted_response;
        result.finish = FinishReason::stop;
        result.completion_tokens = static_cast<int>(result.text.size() / 4 + 1);
        return result;
    }
    result.text = entry->text;
    result.finish = entry->finish;
    if (entry->finish == FinishReason::length) {
        result.completion_tokens = request.max_tokens;
    } else {
        result.completion_tokens =
            std::min(static_cast<int>(entry->text.size() / 4 + 1), request.max_tokens - 1);
    }
    return result;
}

std::vector<ChatRequest> MockChatEndpoint::captured_requests() const {
    std::lock_guard lock(mutex_);
    return captured_;
}

std::size_t MockChatEndpoint::call_count() const {
    std::lock_guard lock(mutex_);
    return captured_.size();
}

// ---------------------------------------------------------------------------
// Batch runner

RunBatchStats run_batch(const std::vector<Post>& corpus, const PolicyText& policy,
                        const ModelSpec& model, const PromptVariantId& variant,
                        const DecodeConfig& decode, ChatEndpoint& endpoint, RunStore& store,
                        const RunBatchOptions& options) {
    decode.validate();
    if (options.parallel < 1) throw ConfigError("parallel must be >= 1");

    struct Task {
        std::size_t post_index;
        int run_index;
    };
    std::vector<Task> tasks;
    RunBatchStats stats;

    std::vector<RenderedPrompt> prompts;
    prompts.reserve(corpus.size());
    for (const auto& post : corpus) prompts.push_back(render(variant, post, policy));

    for (std::size_t p = 0; p < corpus.size(); ++p) {
        for (int r = 0; r < decode.num_runs; ++r) {
            RunRecord probe;
            probe.model = model.name;
            probe.variant = variant;
            probe.post_id = corpus[p].post_id;
            probe.run_index = r;
            probe.decode_mode = decode.mode;
            if (store.contains(probe)) {
                ++stats.skipped;
            } else {
                tasks.push_back({p, r});
            }
        }
    }
    if (options.max_new_records > 0 && tasks.size() > options.max_new_records) {
        tasks.resize(options.max_new_records);
    }

    std::atomic<std::size_t> next{0};
    std::atomic<std::size_t> errors{0};
    auto worker = [&] {
        for (;;) {
            const std::size_t t = next.fetch_add(1);
            if (t >= tasks.size()) return;
            const Task& task = tasks[t];
            const Post& post = corpus[task.post_index];
            const RenderedPrompt& prompt = prompts[task.post_index];

            ChatRequest request;
            request.model = model.name;
            request.system_message = prompt.system_message;
            request.user_message = prompt.user_message;
            request.temperature = decode.temperature;
            if (decode.mode != DecodeMode::greedy) request.top_p = decode.top_p;
            request.max_tokens = model.max_output_tokens;
            request.seed = decode.seed + task.run_index;

            ChatResult result = endpoint.complete(request);
            if (result.finish == FinishReason::error) errors.fetch_add(1);

            RunRecord record;
            record.model = model.name;
            record.variant = variant;
            record.post_id = post.post_id;
            record.run_index = task.run_index;
            record.decode_mode = decode.mode;
            record.response_text = result.text;
            record.finish_reason = result.finish;
            record.prompt_chars = prompt.total_chars();
            record.output_tokens = result.completion_tokens;
            record.timestamp = util::utc_timestamp();
            store.append(record);
        }
    };

    const int workers = std::min<std::size_t>(options.parallel, std::max<std::size_t>(tasks.size(), 1));
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();

    stats.dispatched = tasks.size();
    stats.errors = errors.load();
    return stats;
}

} // namespace policyeval
