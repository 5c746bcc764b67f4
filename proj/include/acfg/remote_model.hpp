// Copyright 2026 The acfg Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <netdb.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "acfg/model.hpp"

/**
 * @file remote_model.hpp
 * Line-delimited JSON protocol for out-of-process model backends.
 *
 *   server, once on connect: {"op":"hello","version":1,"vocab_size":V,"mask_id":M[,"tokens":[...]]}
 *   request:  {"id":N,"op":"logits","tokens":[...],"prompt_len":P}
 *   response: {"id":N,"logits":[[...] x len],"vocab_size":V}
 *   failure:  {"id":N,"error":"reason"}
 *
 * One JSON object per line, UTF-8. Logits travel as float32 values.
 */

namespace acfg
{
namespace protocol
{
inline constexpr int kVersion = 1;

struct Hello
{
    int version = 0;
    std::size_t vocab_size = 0;
    TokenId mask_id = 0;
    std::vector<std::string> tokens;  ///< optional display strings
};

inline std::string encode_hello(std::size_t vocab_size, TokenId mask_id, const std::vector<std::string>& tokens = {})
{
    nlohmann::json j{{"op", "hello"}, {"version", kVersion}, {"vocab_size", vocab_size}, {"mask_id", mask_id}};
    if (!tokens.empty()) j["tokens"] = tokens;
    return j.dump();
}

inline std::string encode_request(std::int64_t id, const TokenSeq& seq)
{
    return nlohmann::json{{"id", id}, {"op", "logits"}, {"tokens", seq.ids}, {"prompt_len", seq.prompt_len}}.dump();
}

inline std::string encode_response(std::int64_t id, const LogitMatrix& logits)
{
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t r = 0; r < logits.rows(); ++r)
    {
        nlohmann::json row = nlohmann::json::array();
        for (float v : logits.row(r)) row.push_back(v);
        rows.push_back(std::move(row));
    }
    return nlohmann::json{{"id", id}, {"logits", std::move(rows)}, {"vocab_size", logits.cols()}}.dump();
}

inline std::string encode_error(std::int64_t id, const std::string& reason)
{
    return nlohmann::json{{"id", id}, {"error", reason}}.dump();
}

namespace detail
{
inline nlohmann::json parse_object(const std::string& line)
{
    nlohmann::json j;
    try
    {
        j = nlohmann::json::parse(line);
    }
    catch (const nlohmann::json::exception&)
    {
        throw ProtocolError("malformed line: " + acfg::detail::excerpt(line));
    }
    if (!j.is_object()) throw ProtocolError("expected a JSON object: " + acfg::detail::excerpt(line));
    return j;
}
}  // namespace detail

inline Hello decode_hello(const std::string& line)
{
    const auto j = detail::parse_object(line);
    if (!j.contains("op") || j["op"] != "hello") throw ProtocolError("expected hello: " + acfg::detail::excerpt(line));
    try
    {
        Hello h{j.at("version").get<int>(), j.at("vocab_size").get<std::size_t>(), j.at("mask_id").get<TokenId>(),
                j.value("tokens", std::vector<std::string>{})};
        if (h.version != kVersion)
            throw ProtocolError("unsupported protocol version " + std::to_string(h.version));
        if (h.vocab_size == 0 || h.mask_id < 0 || static_cast<std::size_t>(h.mask_id) >= h.vocab_size ||
            (!h.tokens.empty() && h.tokens.size() != h.vocab_size))
            throw ProtocolError("hello advertises an inconsistent vocabulary: " + acfg::detail::excerpt(line));
        return h;
    }
    catch (const nlohmann::json::exception&)
    {
        throw ProtocolError("malformed hello: " + acfg::detail::excerpt(line));
    }
}

struct Request
{
    std::int64_t id = 0;
    TokenSeq seq;
};

/// Server side: parses one request line.
inline Request decode_request(const std::string& line)
{
    const auto j = detail::parse_object(line);
    try
    {
        if (j.at("op").get<std::string>() != "logits") throw ProtocolError("unknown op: " + j.at("op").dump());
        Request r;
        r.id = j.at("id").get<std::int64_t>();
        r.seq.ids = j.at("tokens").get<std::vector<TokenId>>();
        r.seq.prompt_len = j.at("prompt_len").get<std::size_t>();
        if (r.seq.prompt_len > r.seq.ids.size()) throw ProtocolError("prompt_len exceeds token count");
        return r;
    }
    catch (const nlohmann::json::exception&)
    {
        throw ProtocolError("malformed request: " + acfg::detail::excerpt(line));
    }
}

/// Client side: validates id echo, shape and finiteness, then returns the logits.
inline LogitMatrix decode_response(const std::string& line, std::int64_t expected_id, std::size_t rows,
                                   std::size_t vocab_size)
{
    const auto j = detail::parse_object(line);
    const auto id_it = j.find("id");
    if (id_it == j.end() || !id_it->is_number_integer())
        throw ProtocolError("response without integer id: " + acfg::detail::excerpt(line));
    if (id_it->get<std::int64_t>() != expected_id)
        throw ProtocolError("response id " + id_it->dump() + " does not echo request id " +
                            std::to_string(expected_id));
    if (auto err = j.find("error"); err != j.end())
        throw ProtocolError("server error for request " + std::to_string(expected_id) + ": " + err->dump());

    const auto vs = j.find("vocab_size");
    if (vs == j.end() || !vs->is_number_integer() || vs->get<std::int64_t>() != static_cast<std::int64_t>(vocab_size))
        throw ProtocolError("response vocab_size mismatch: " + acfg::detail::excerpt(line));
    const auto lg = j.find("logits");
    if (lg == j.end() || !lg->is_array()) throw ProtocolError("response without logits: " + acfg::detail::excerpt(line));
    if (lg->size() != rows)
        throw ProtocolError("response has " + std::to_string(lg->size()) + " logit rows, expected " +
                            std::to_string(rows));

    LogitMatrix out(rows, vocab_size);
    for (std::size_t r = 0; r < rows; ++r)
    {
        const auto& row = (*lg)[r];
        if (!row.is_array() || row.size() != vocab_size)
            throw ProtocolError("logit row " + std::to_string(r) + " has the wrong width");
        for (std::size_t c = 0; c < vocab_size; ++c)
        {
            if (!row[c].is_number()) throw ProtocolError("non-numeric logit at row " + std::to_string(r));
            const auto v = static_cast<float>(row[c].get<double>());
            if (!std::isfinite(v)) throw ProtocolError("non-finite logit at row " + std::to_string(r));
            out(r, c) = v;
        }
    }
    return out;
}
}  // namespace protocol

/// A bidirectional newline-framed byte stream over a socket descriptor.
class LineChannel
{
public:
    explicit LineChannel(int fd) : fd_(fd) {}
    LineChannel(const LineChannel&) = delete;
    LineChannel& operator=(const LineChannel&) = delete;
    virtual ~LineChannel()
    {
        if (fd_ >= 0) ::close(fd_);
    }

    void write_line(const std::string& line)
    {
        std::string data = line + '\n';
        std::size_t sent = 0;
        while (sent < data.size())
        {
            const auto n = ::send(fd_, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
            if (n < 0)
            {
                if (errno == EINTR) continue;
                throw TransportError(std::string("write failed: ") + std::strerror(errno));
            }
            sent += static_cast<std::size_t>(n);
        }
    }

    /// Next line without its terminator. Throws TransportError on timeout or
    /// a clean close, ProtocolError if the peer closes mid-line.
    std::string read_line(std::chrono::milliseconds timeout)
    {
        const auto deadline = std::chrono::steady_clock::now() + timeout;
        for (;;)
        {
            if (auto nl = buffer_.find('\n'); nl != std::string::npos)
            {
                std::string line = buffer_.substr(0, nl);
                buffer_.erase(0, nl + 1);
                if (!line.empty() && line.back() == '\r') line.pop_back();
                return line;
            }
            const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
                deadline - std::chrono::steady_clock::now());
            if (left.count() <= 0) throw TransportError("timed out waiting for a response line");
            pollfd p{fd_, POLLIN, 0};
            const int rc = ::poll(&p, 1, static_cast<int>(left.count()));
            if (rc < 0)
            {
                if (errno == EINTR) continue;
                throw TransportError(std::string("poll failed: ") + std::strerror(errno));
            }
            if (rc == 0) continue;
            char chunk[65536];
            const auto n = ::recv(fd_, chunk, sizeof chunk, 0);
            if (n < 0)
            {
                if (errno == EINTR) continue;
                throw TransportError(std::string("read failed: ") + std::strerror(errno));
            }
            if (n == 0)
            {
                if (!buffer_.empty())
                    throw ProtocolError("peer closed mid-line (truncated): " + detail::excerpt(buffer_));
                throw TransportError("peer closed the connection");
            }
            buffer_.append(chunk, static_cast<std::size_t>(n));
        }
    }

protected:
    int fd_ = -1;

private:
    std::string buffer_;
};

/**
 * Runs `/bin/sh -c command` in its own process group with stdin/stdout
 * connected to a socket pair. On destruction the group gets half a second to
 * exit after EOF, then SIGKILL.
 */
class SubprocessChannel final : public LineChannel
{
public:
    explicit SubprocessChannel(const std::string& command) : LineChannel(-1)
    {
        int fds[2];
        if (::socketpair(AF_UNIX, SOCK_STREAM, 0, fds) != 0)
            throw TransportError(std::string("socketpair failed: ") + std::strerror(errno));
        pid_ = ::fork();
        if (pid_ < 0)
        {
            ::close(fds[0]);
            ::close(fds[1]);
            throw TransportError(std::string("fork failed: ") + std::strerror(errno));
        }
        if (pid_ == 0)
        {
            ::setpgid(0, 0);
            ::close(fds[0]);
            ::dup2(fds[1], STDIN_FILENO);
            ::dup2(fds[1], STDOUT_FILENO);
            ::close(fds[1]);
            ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
            ::_exit(127);
        }
        ::close(fds[1]);
        fd_ = fds[0];
    }

    ~SubprocessChannel() override
    {
        ::shutdown(fd_, SHUT_RDWR);
        for (int i = 0; i < 50; ++i)
        {
            if (::waitpid(pid_, nullptr, WNOHANG) != 0) return;
            ::usleep(10000);
        }
        ::kill(-pid_, SIGKILL);
        ::waitpid(pid_, nullptr, 0);
    }

private:
    pid_t pid_ = -1;
};

class TcpChannel final : public LineChannel
{
public:
    TcpChannel(const std::string& host, const std::string& port) : LineChannel(-1)
    {
        addrinfo hints{};
        hints.ai_family = AF_UNSPEC;
        hints.ai_socktype = SOCK_STREAM;
        addrinfo* res = nullptr;
        if (int rc = ::getaddrinfo(host.c_str(), port.c_str(), &hints, &res); rc != 0)
            throw TransportError("cannot resolve " + host + ":" + port + ": " + ::gai_strerror(rc));
        std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(res, ::freeaddrinfo);
        for (auto* a = res; a; a = a->ai_next)
        {
            const int fd = ::socket(a->ai_family, a->ai_socktype, a->ai_protocol);
            if (fd < 0) continue;
            if (::connect(fd, a->ai_addr, a->ai_addrlen) == 0)
            {
                fd_ = fd;
                return;
            }
            ::close(fd);
        }
        throw TransportError("cannot connect to " + host + ":" + port);
    }
};

/**
 * Model backend living in another process, reached over stdio or TCP.
 *
 * Endpoint descriptors: "stdio:<shell command>" or "tcp:<host>:<port>".
 * Requests on one connection are serialized; use one RemoteModel per thread
 * for parallel decoding.
 */
class RemoteModel
{
public:
    explicit RemoteModel(const std::string& endpoint,
                         std::chrono::milliseconds timeout = std::chrono::milliseconds(10000))
        : timeout_(timeout)
    {
        if (endpoint.rfind("stdio:", 0) == 0)
            channel_ = std::make_unique<SubprocessChannel>(endpoint.substr(6));
        else if (endpoint.rfind("tcp:", 0) == 0)
        {
            const auto rest = endpoint.substr(4);
            const auto colon = rest.rfind(':');
            if (colon == std::string::npos || colon == 0 || colon + 1 == rest.size())
                throw InvalidConfig("tcp endpoint must look like tcp:<host>:<port>");
            channel_ = std::make_unique<TcpChannel>(rest.substr(0, colon), rest.substr(colon + 1));
        }
        else
            throw InvalidConfig("endpoint must start with stdio: or tcp: (got '" + endpoint + "')");

        hello_ = protocol::decode_hello(channel_->read_line(timeout_));
        vocab_ = Vocab(hello_.vocab_size, hello_.mask_id, hello_.tokens);
    }

    const Vocab& vocab() const { return vocab_; }
    const protocol::Hello& hello() const { return hello_; }
    std::int64_t requests_sent() const { return next_id_; }

    LogitMatrix logits(const TokenSeq& seq)
    {
        seq.validate(vocab_);
        std::lock_guard lock(mu_);
        const std::int64_t id = next_id_++;
        channel_->write_line(protocol::encode_request(id, seq));
        for (;;)
        {
            std::string line = channel_->read_line(timeout_);
            // Late answers to requests that already timed out are dropped.
            if (is_stale(line, id)) continue;
            return protocol::decode_response(line, id, seq.size(), vocab_.size);
        }
    }

private:
    static bool is_stale(const std::string& line, std::int64_t current)
    {
        const auto j = nlohmann::json::parse(line, nullptr, false);
        if (!j.is_object()) return false;
        const auto it = j.find("id");
        return it != j.end() && it->is_number_integer() && it->get<std::int64_t>() >= 0 &&
               it->get<std::int64_t>() < current;
    }

    std::chrono::milliseconds timeout_;
    std::unique_ptr<LineChannel> channel_;
    protocol::Hello hello_;
    Vocab vocab_;
    std::mutex mu_;
    std::int64_t next_id_ = 0;
};

}  // namespace acfg
