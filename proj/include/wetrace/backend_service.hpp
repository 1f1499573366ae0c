#pragma once

// HTTP face of the relay store.
//
//   POST /v1/messages   {"pow_nonce": <hex u64 le>, "messages": [<base64>]}
//                       -> {"accepted": n} | {"error": <string>}
//   GET  /v1/messages?cursor=N
//                       -> {"cursor": M, "messages": [<base64>]}
//
// Attested publishers may send "Authorization: Bearer <token>" instead of
// proof-of-work when the server was started with a token.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <ctime>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "wetrace/backend.hpp"
#include "wetrace/bytes.hpp"

namespace wetrace {

inline std::string encode_nonce(uint64_t nonce) {
    Bytes raw;
    put_u64_le(raw, nonce);
    return to_hex(raw);
}

inline std::optional<uint64_t> decode_nonce(const std::string& hex) {
    try {
        const Bytes raw = from_hex(hex);
        if (raw.size() != 8) {
            return std::nullopt;
        }
        return get_u64_le(raw);
    } catch (const std::invalid_argument&) {
        return std::nullopt;
    }
}

class BackendService {
public:
    explicit BackendService(BackendStore::Options options,
                            int64_t purge_interval = 60)
        : store_(options), purge_interval_(purge_interval) {
        server_.Post("/v1/messages", [this](const httplib::Request& req,
                                            httplib::Response& res) {
            handle_publish(req, res);
        });
        server_.Get("/v1/messages", [this](const httplib::Request& req,
                                           httplib::Response& res) {
            handle_poll(req, res);
        });
    }

    ~BackendService() { stop(); }

    BackendStore& store() { return store_; }
    int port() const { return port_; }

    // Binds and serves on background threads; false if the bind fails.
    // Pass port 0 for an ephemeral port.
    bool start(const std::string& host, int port) {
        if (port == 0) {
            port_ = server_.bind_to_any_port(host);
            if (port_ < 0) {
                return false;
            }
        } else {
            if (!server_.bind_to_port(host, port)) {
                return false;
            }
            port_ = port;
        }
        server_thread_ = std::thread([this] { server_.listen_after_bind(); });
        purge_thread_ = std::thread([this] { purge_loop(); });
        server_.wait_until_ready();
        return true;
    }

    void wait() {
        if (server_thread_.joinable()) {
            server_thread_.join();
        }
    }

    void stop() {
        {
            std::lock_guard lock(purge_mutex_);
            stopping_ = true;
        }
        purge_cv_.notify_all();
        server_.stop();
        if (server_thread_.joinable()) {
            server_thread_.join();
        }
        if (purge_thread_.joinable()) {
            purge_thread_.join();
        }
    }

private:
    void handle_publish(const httplib::Request& req, httplib::Response& res) {
        nlohmann::json body;
        try {
            body = nlohmann::json::parse(req.body);
        } catch (const nlohmann::json::exception&) {
            return fail(res, "malformed request body");
        }
        if (!body.contains("messages") || !body["messages"].is_array()) {
            return fail(res, "malformed request body");
        }

        PublishRequest request;
        for (const auto& item : body["messages"]) {
            if (!item.is_string()) {
                return fail(res, "malformed request body");
            }
            auto blob = from_base64(item.get<std::string>());
            if (!blob) {
                return fail(res, "malformed request body");
            }
            request.messages.push_back(std::move(*blob));
        }
        if (body.contains("pow_nonce")) {
            auto nonce = decode_nonce(body["pow_nonce"].get<std::string>());
            if (!nonce) {
                return fail(res, "malformed request body");
            }
            request.pow_nonce = *nonce;
        }
        const std::string auth = req.get_header_value("Authorization");
        if (auth.rfind("Bearer ", 0) == 0) {
            request.token = auth.substr(7);
        }

        try {
            const size_t accepted =
                store_.publish(request, std::time(nullptr));
            nlohmann::json out;
            out["accepted"] = accepted;
            res.set_content(out.dump(), "application/json");
        } catch (const std::runtime_error& e) {
            fail(res, e.what());
        }
    }

    void handle_poll(const httplib::Request& req, httplib::Response& res) {
        uint64_t cursor = 0;
        if (req.has_param("cursor")) {
            try {
                cursor = std::stoull(req.get_param_value("cursor"));
            } catch (const std::exception&) {
                return fail(res, "malformed cursor");
            }
        }
        const PollPage page = store_.poll(cursor);
        nlohmann::json out;
        out["cursor"] = page.cursor;
        auto& messages = out["messages"] = nlohmann::json::array();
        for (const auto& blob : page.messages) {
            messages.push_back(to_base64(blob));
        }
        res.set_content(out.dump(), "application/json");
    }

    static void fail(httplib::Response& res, const std::string& message) {
        nlohmann::json out;
        out["error"] = message;
        res.status = 400;
        res.set_content(out.dump(), "application/json");
    }

    void purge_loop() {
        std::unique_lock lock(purge_mutex_);
        while (!stopping_) {
            purge_cv_.wait_for(lock, std::chrono::seconds(purge_interval_),
                               [this] { return stopping_; });
            if (!stopping_) {
                store_.purge(std::time(nullptr));
            }
        }
    }

    BackendStore store_;
    int64_t purge_interval_;
    httplib::Server server_;
    std::thread server_thread_;
    std::thread purge_thread_;
    std::mutex purge_mutex_;
    std::condition_variable purge_cv_;
    bool stopping_ = false;
    int port_ = -1;
};

// Client side of the same wire format, shared by the device agent and the
// integration tests.
class BackendClient {
public:
    BackendClient(const std::string& host, int port) : client_(host, port) {
        client_.set_connection_timeout(5);
        client_.set_read_timeout(30);
    }

    explicit BackendClient(const std::string& url) : client_(url) {
        client_.set_connection_timeout(5);
        client_.set_read_timeout(30);
    }

    struct PublishReply {
        bool ok = false;
        size_t accepted = 0;
        std::string error;
    };

    PublishReply publish(const std::vector<Bytes>& messages, int difficulty,
                         const std::optional<std::string>& token = {}) {
        uint64_t nonce = 0;
        if (!token) {
            nonce = solve_pow(batch_digest(messages), difficulty);
        }
        return publish_with_nonce(messages, nonce, token);
    }

    PublishReply publish_with_nonce(
        const std::vector<Bytes>& messages, uint64_t nonce,
        const std::optional<std::string>& token = {}) {
        nlohmann::json body;
        body["pow_nonce"] = encode_nonce(nonce);
        auto& items = body["messages"] = nlohmann::json::array();
        for (const auto& blob : messages) {
            items.push_back(to_base64(blob));
        }
        httplib::Headers headers;
        if (token) {
            headers.emplace("Authorization", "Bearer " + *token);
        }
        const auto res = client_.Post("/v1/messages", headers, body.dump(),
                                      "application/json");
        PublishReply reply;
        if (!res) {
            reply.error = "backend unreachable";
            return reply;
        }
        const auto parsed = nlohmann::json::parse(res->body, nullptr, false);
        if (parsed.is_discarded()) {
            reply.error = "malformed backend response";
            return reply;
        }
        if (parsed.contains("accepted")) {
            reply.ok = true;
            reply.accepted = parsed["accepted"].get<size_t>();
        } else {
            reply.error = parsed.value("error", "unknown backend error");
        }
        return reply;
    }

    struct PollReply {
        bool ok = false;
        uint64_t cursor = 0;
        std::vector<Bytes> messages;
        std::string error;
    };

    PollReply poll(uint64_t cursor) {
        const auto res = client_.Get("/v1/messages?cursor=" +
                                     std::to_string(cursor));
        PollReply reply;
        if (!res) {
            reply.error = "backend unreachable";
            return reply;
        }
        const auto parsed = nlohmann::json::parse(res->body, nullptr, false);
        if (parsed.is_discarded() || !parsed.contains("cursor") ||
            !parsed.contains("messages")) {
            reply.error = "malformed backend response";
            return reply;
        }
        reply.cursor = parsed["cursor"].get<uint64_t>();
        for (const auto& item : parsed["messages"]) {
            auto blob = from_base64(item.get<std::string>());
            if (!blob) {
                reply.error = "malformed backend response";
                return reply;
            }
            reply.messages.push_back(std::move(*blob));
        }
        reply.ok = true;
        return reply;
    }

private:
    httplib::Client client_;
};

}  // namespace wetrace
