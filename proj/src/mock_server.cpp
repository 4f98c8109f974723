#include "policyeval/mock_server.hpp"

#include "policyeval/embedding.hpp"
#include "policyeval/errors.hpp"
#include "policyeval/util.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <atomic>
#include <thread>

namespace policyeval {

using nlohmann::json;

struct MockServer::Impl {
    MockScript script;
    std::size_t embedding_dim;
    httplib::Server server;
    std::thread thread;
    int port = 0;
    std::map<std::string, std::size_t> counters;
    std::mutex mutex;
    std::atomic<std::size_t> chat_calls{0};
    std::atomic<std::size_t> embedding_calls{0};

    void handle_chat(const httplib::Request& req, httplib::Response& res) {
        chat_calls.fetch_add(1);
        json body;
        try {
            body = json::parse(req.body);
        } catch (const json::exception&) {
            res.status = 400;
            res.set_content(R"({"error":{"message":"bad json"}})", "application/json");
            return;
        }
        std::string user_message;
        for (const auto& msg : body.value("messages", json::array())) {
            if (msg.value("role", "") == "user") user_message = msg.value("content", "");
        }
        std::optional<long> seed;
        if (body.contains("seed") && body["seed"].is_number()) seed = body["seed"].get<long>();
        const int max_tokens = body.value("max_tokens", 2048);

        const MockScriptEntry* entry;
        {
            std::lock_guard lock(mutex);
            entry = select_mock_entry(script, user_message, body.value("model", ""), seed,
                                      counters);
        }
        std::string text = entry ? entry->text : script.unscripted_response;
        FinishReason finish = entry ? entry->finish : FinishReason::stop;
        int completion_tokens =
            finish == FinishReason::length
                ? max_tokens
                : std::min(static_cast<int>(text.size() / 4 + 1), max_tokens - 1);

        json out;
        out["object"] = "chat.completion";
        out["model"] = body.value("model", "mock");
        out["choices"] = json::array({{{"index", 0},
                                       {"message", {{"role", "assistant"}, {"content", text}}},
                                       {"finish_reason", finish_reason_name(finish)}}});
        out["usage"] = {{"completion_tokens", completion_tokens}};
        res.set_content(out.dump(), "application/json");
    }

    void handle_embeddings(const httplib::Request& req, httplib::Response& res) {
        embedding_calls.fetch_add(1);
        json body;
        try {
            body = json::parse(req.body);
        } catch (const json::exception&) {
            res.status = 400;
            res.set_content(R"({"error":{"message":"bad json"}})", "application/json");
            return;
        }
        std::vector<std::string> inputs;
        if (body.contains("input")) {
            if (body["input"].is_string()) {
                inputs.push_back(body["input"].get<std::string>());
            } else {
                for (const auto& item : body["input"]) inputs.push_back(item.get<std::string>());
            }
        }
        HashEmbeddingProvider provider(embedding_dim);
        json data = json::array();
        auto vectors = provider.embed(inputs);
        for (std::size_t i = 0; i < vectors.size(); ++i) {
            json row;
            row["index"] = i;
            row["embedding"] = *vectors[i];
            data.push_back(std::move(row));
        }
        json out;
        out["object"] = "list";
        out["data"] = std::move(data);
        res.set_content(out.dump(), "application/json");
    }
};

MockServer::MockServer(MockScript script, std::size_t embedding_dim)
    : impl_(std::make_unique<Impl>()) {
    impl_->script = std::move(script);
    impl_->embedding_dim = embedding_dim;
    impl_->server.set_tcp_nodelay(true);

    auto chat = [this](const httplib::Request& req, httplib::Response& res) {
        impl_->handle_chat(req, res);
    };
    auto embeddings = [this](const httplib::Request& req, httplib::Response& res) {
        impl_->handle_embeddings(req, res);
    };
    impl_->server.Post("/v1/chat/completions", chat);
    impl_->server.Post("/chat/completions", chat);
    impl_->server.Post("/v1/embeddings", embeddings);
    impl_->server.Post("/embeddings", embeddings);
}

MockServer::~MockServer() { stop(); }

void MockServer::start(int port) {
    if (port > 0) {
        if (!impl_->server.bind_to_port("127.0.0.1", port))
            throw Error("mock server failed to bind port " + std::to_string(port));
        impl_->port = port;
    } else {
        impl_->port = impl_->server.bind_to_any_port("127.0.0.1");
    }
    if (impl_->port <= 0) throw Error("mock server failed to bind a port");
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
}

void MockServer::stop() {
    if (impl_->thread.joinable()) {
        impl_->server.stop();
        impl_->thread.join();
    }
}

int MockServer::port() const { return impl_->port; }

std::string MockServer::base_url() const {
    return "http://127.0.0.1:" + std::to_string(impl_->port) + "/v1";
}

std::size_t MockServer::chat_calls() const { return impl_->chat_calls.load(); }

std::size_t MockServer::embedding_calls() const { return impl_->embedding_calls.load(); }

} // namespace policyeval
