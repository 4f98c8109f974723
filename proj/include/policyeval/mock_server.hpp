#pragma once

#include "policyeval/inference.hpp"

#include <memory>

namespace policyeval {

// In-process HTTP server speaking the chat-completions and embeddings wire
// format, backed by a MockScript. Lets the full pipeline run offline
// against a real socket.
class MockServer {
public:
    // embedding_dim controls the /embeddings route; vectors are a
    // deterministic hash of the input text.
    explicit MockServer(MockScript script, std::size_t embedding_dim = 32);
    ~MockServer();

    MockServer(const MockServer&) = delete;
    MockServer& operator=(const MockServer&) = delete;

    // Binds 127.0.0.1 (an ephemeral port when 0) and serves until stop().
    void start(int port = 0);
    void stop();

    int port() const;
    std::string base_url() const; // http://127.0.0.1:<port>/v1

    std::size_t chat_calls() const;
    std::size_t embedding_calls() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace policyeval
