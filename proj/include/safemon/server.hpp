#pragma once

// HTTP + WebSocket front end for SessionRegistry (Boost.Beast, asynchronous,
// single io_context). Protocol reference: docs/protocol.md.

#include <chrono>
#include <deque>
#include <memory>
#include <optional>
#include <regex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <boost/asio/dispatch.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/asio/steady_timer.hpp>
#include <boost/asio/strand.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "safemon/errors.hpp"
#include "safemon/json_io.hpp"
#include "safemon/session.hpp"

namespace safemon {

struct ApiResponse {
  unsigned status = 200;
  io::json body;
};

inline ApiResponse error_response(const std::exception& e) {
  unsigned code = 500;
  std::string cls = "internal";
  if (const auto* err = dynamic_cast<const Error*>(&e)) {
    switch (err->error_class()) {
      case ErrorClass::configuration: code = 400; cls = "configuration"; break;
      case ErrorClass::misuse: code = 400; cls = "misuse"; break;
      case ErrorClass::data: code = 422; cls = "data"; break;
      case ErrorClass::state: code = 409; cls = "state"; break;
      case ErrorClass::infeasible: code = 422; cls = "infeasible"; break;
    }
  }
  return {code, {{"v", protocol_version}, {"type", "error"}, {"error", {{"class", cls}, {"message", e.what()}}}}};
}

inline SessionOptions session_options_from_json(const io::json& j) {
  SessionOptions o;
  if (j.is_null()) return o;
  if (!j.is_object()) throw MisuseError("session request must be an object");
  try {
    if (j.contains("epsilon")) o.epsilon = j.at("epsilon").get<double>();
    if (j.contains("seed") && !j.at("seed").is_null()) o.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("mode")) {
      const auto m = j.at("mode").get<std::string>();
      if (m == "scripted") o.mode = ControlMode::scripted;
      else if (m == "free_stick") o.mode = ControlMode::free_stick;
      else throw MisuseError("unknown mode '" + m + "'");
    }
    if (j.contains("pacing")) {
      const auto p = j.at("pacing").get<std::string>();
      if (p == "lockstep") o.pacing = Pacing::lockstep;
      else if (p == "realtime") o.pacing = Pacing::realtime;
      else throw MisuseError("unknown pacing '" + p + "'");
    }
  } catch (const io::json::exception& e) {
    throw MisuseError(std::string("session request: ") + e.what());
  }
  return o;
}

inline PilotCommand command_from_json(const io::json& j) {
  PilotCommand c;
  if (j.is_null()) return c;
  try {
    if (j.contains("aileron")) c.aileron = j.at("aileron").get<double>();
    if (j.contains("rudder")) c.rudder = j.at("rudder").get<double>();
  } catch (const io::json::exception& e) {
    throw MisuseError(std::string("command: ") + e.what());
  }
  return c;
}

/// Transport-independent request router.
class Api {
public:
  explicit Api(std::shared_ptr<SessionRegistry> registry) : registry_(std::move(registry)) {}

  [[nodiscard]] SessionRegistry& registry() { return *registry_; }

  ApiResponse handle(const std::string& method, const std::string& target, const std::string& body) {
    try {
      static const std::regex session_re(R"(^/api/v1/sessions/([0-9a-f]+)(/(step|abort|debrief))?$)");
      const auto payload = body.empty() ? io::json(nullptr) : io::parse(body, "request body");
      if (target == "/api/v1/artifact" && method == "GET") return {200, artifact_metadata()};
      if (target == "/api/v1/sessions" && method == "POST") {
        auto s = registry_->create(session_options_from_json(payload));
        return {201, created(*s)};
      }
      std::smatch m;
      if (std::regex_match(target, m, session_re)) {
        auto s = registry_->find(m[1]);
        if (!s) return {404, {{"v", protocol_version}, {"type", "error"}, {"error", {{"class", "not_found"}, {"message", "unknown session"}}}}};
        const std::string action = m[3];
        if (action.empty() && method == "GET") return {200, to_json(s->latest(), s->id())};
        if (action == "step" && method == "POST") return {200, to_json(s->step(command_from_json(payload)), s->id())};
        if (action == "abort" && method == "POST") {
          const auto st = s->abort();
          return {200, {{"v", protocol_version}, {"type", "status"}, {"session", s->id()}, {"status", to_string(st)}}};
        }
        if (action == "debrief" && method == "GET") return {200, to_json(s->debrief())};
      }
      return {404, {{"v", protocol_version}, {"type", "error"}, {"error", {{"class", "not_found"}, {"message", method + " " + target}}}}};
    } catch (const std::exception& e) {
      return error_response(e);
    }
  }

  [[nodiscard]] io::json artifact_metadata() const {
    const auto& m = registry_->monitor();
    return {{"v", protocol_version},
            {"type", "artifact"},
            {"method", m.meta().method},
            {"N", m.calibration_size()},
            {"dt", m.meta().dt},
            {"t_early_steps", m.meta().t_early_steps},
            {"buffer_k", m.meta().buffer_k},
            {"transform", transform_tag(m.transform())},
            {"score", score_tag(m.score_kind())},
            {"ny_limit", io::extended_to_json(registry_->plant().ny_limit)},
            {"horizon_steps", registry_->plant().steps()},
            {"saturation", registry_->plant().saturation}};
  }

  [[nodiscard]] static io::json created(const Session& s) {
    return {{"v", protocol_version},
            {"type", "session"},
            {"session", s.id()},
            {"epsilon", s.options().epsilon},
            {"mode", to_string(s.options().mode)},
            {"pacing", to_string(s.options().pacing)},
            {"telemetry", to_json(s.latest(), s.id())}};
  }

  /// Handles one stream message; returns the reply (nullopt for "control").
  std::optional<io::json> stream_message(Session& s, const std::string& text, PilotCommand& stick) {
    try {
      const auto j = io::parse(text, "stream message");
      const auto type = io::require(j, "type", "stream message").get<std::string>();
      if (type == "step") return to_json(s.step(command_from_json(j)), s.id());
      if (type == "control") {
        stick = command_from_json(j);
        return std::nullopt;
      }
      if (type == "abort")
        return io::json{{"v", protocol_version}, {"type", "status"}, {"session", s.id()}, {"status", to_string(s.abort())}};
      throw MisuseError("unknown message type '" + type + "'");
    } catch (const std::exception& e) {
      return error_response(e).body;
    }
  }

private:
  std::shared_ptr<SessionRegistry> registry_;
};

namespace net {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace asio = boost::asio;
using tcp = asio::ip::tcp;

class StreamSession : public std::enable_shared_from_this<StreamSession> {
public:
  StreamSession(tcp::socket&& socket, std::shared_ptr<Api> api, std::shared_ptr<Session> session)
      : ws_(std::move(socket)), api_(std::move(api)), session_(std::move(session)), timer_(ws_.get_executor()) {}

  void run(http::request<http::string_body> req) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(req, beast::bind_front_handler(&StreamSession::on_accept, shared_from_this()));
  }

private:
  void on_accept(beast::error_code ec) {
    if (ec) return;
    if (session_->options().pacing == Pacing::realtime) schedule_tick();
    do_read();
  }

  void schedule_tick() {
    timer_.expires_after(std::chrono::milliseconds(static_cast<long>(1000.0 * 0.05)));
    timer_.async_wait([self = shared_from_this()](beast::error_code ec) {
      if (ec || self->closed_) return;
      if (self->session_->status() != SessionStatus::running) return;
      try {
        self->send(to_json(self->session_->step(self->stick_), self->session_->id()).dump());
      } catch (const std::exception& e) {
        self->send(error_response(e).body.dump());
      }
      if (self->session_->status() == SessionStatus::running) self->schedule_tick();
    });
  }

  void do_read() { ws_.async_read(buffer_, beast::bind_front_handler(&StreamSession::on_read, shared_from_this())); }

  void on_read(beast::error_code ec, std::size_t) {
    if (ec) {
      closed_ = true;
      timer_.cancel();
      return;
    }
    const std::string text = beast::buffers_to_string(buffer_.data());
    buffer_.consume(buffer_.size());
    if (auto reply = api_->stream_message(*session_, text, stick_)) send(reply->dump());
    do_read();
  }

  void send(std::string msg) {
    outbox_.push_back(std::move(msg));
    if (outbox_.size() == 1) do_write();
  }

  void do_write() {
    ws_.text(true);
    ws_.async_write(asio::buffer(outbox_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->closed_ = true;
        return;
      }
      self->outbox_.pop_front();
      if (!self->outbox_.empty()) self->do_write();
    });
  }

  websocket::stream<beast::tcp_stream> ws_;
  std::shared_ptr<Api> api_;
  std::shared_ptr<Session> session_;
  asio::steady_timer timer_;
  beast::flat_buffer buffer_;
  std::deque<std::string> outbox_;
  PilotCommand stick_{};
  bool closed_ = false;
};

class HttpSession : public std::enable_shared_from_this<HttpSession> {
public:
  HttpSession(tcp::socket&& socket, std::shared_ptr<Api> api) : stream_(std::move(socket)), api_(std::move(api)) {}

  void run() {
    asio::dispatch(stream_.get_executor(), beast::bind_front_handler(&HttpSession::do_read, shared_from_this()));
  }

private:
  void do_read() {
    req_ = {};
    stream_.expires_after(std::chrono::seconds(60));
    http::async_read(stream_, buffer_, req_, beast::bind_front_handler(&HttpSession::on_read, shared_from_this()));
  }

  void on_read(beast::error_code ec, std::size_t) {
    if (ec) {
      stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
      return;
    }
    const std::string target(req_.target());
    if (websocket::is_upgrade(req_)) {
      static const std::regex stream_re(R"(^/api/v1/sessions/([0-9a-f]+)/stream$)");
      std::smatch m;
      if (std::regex_match(target, m, stream_re)) {
        if (auto s = api_->registry().find(m[1])) {
          stream_.expires_never();
          std::make_shared<StreamSession>(stream_.release_socket(), api_, s)->run(std::move(req_));
          return;
        }
      }
    }
    const auto r = api_->handle(std::string(req_.method_string()), target, req_.body());
    auto res = std::make_shared<http::response<http::string_body>>(static_cast<http::status>(r.status), req_.version());
    res->set(http::field::content_type, "application/json");
    res->set(http::field::access_control_allow_origin, "*");
    res->keep_alive(req_.keep_alive());
    res->body() = r.body.dump();
    res->prepare_payload();
    http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code ec, std::size_t) {
      if (ec) return;
      if (!res->keep_alive()) {
        self->stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
        return;
      }
      self->do_read();
    });
  }

  beast::tcp_stream stream_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> req_;
  std::shared_ptr<Api> api_;
};

}  // namespace net

/// Listens on address:port (port 0 picks a free port) and serves the API on
/// `threads` worker threads until stop().
class MonitorServer {
public:
  MonitorServer(std::shared_ptr<SessionRegistry> registry, const std::string& address, unsigned short port)
      : api_(std::make_shared<Api>(std::move(registry))), acceptor_(ioc_) {
    namespace asio = boost::asio;
    const net::tcp::endpoint ep(asio::ip::make_address(address), port);
    acceptor_.open(ep.protocol());
    acceptor_.set_option(asio::socket_base::reuse_address(true));
    acceptor_.bind(ep);
    acceptor_.listen(asio::socket_base::max_listen_connections);
  }

  ~MonitorServer() { stop(); }

  [[nodiscard]] unsigned short port() const { return acceptor_.local_endpoint().port(); }

  void start(unsigned threads = 1) {
    do_accept();
    for (unsigned i = 0; i < std::max(1u, threads); ++i) workers_.emplace_back([this] { ioc_.run(); });
  }

  /// Blocks the calling thread serving requests.
  void run() {
    do_accept();
    ioc_.run();
  }

  void stop() {
    ioc_.stop();
    for (auto& t : workers_)
      if (t.joinable()) t.join();
    workers_.clear();
  }

private:
  void do_accept() {
    acceptor_.async_accept(boost::asio::make_strand(ioc_), [this](boost::beast::error_code ec, net::tcp::socket socket) {
      if (!ec) std::make_shared<net::HttpSession>(std::move(socket), api_)->run();
      if (acceptor_.is_open()) do_accept();
    });
  }

  boost::asio::io_context ioc_;
  std::shared_ptr<Api> api_;
  net::tcp::acceptor acceptor_;
  std::vector<std::thread> workers_;
};

}  // namespace safemon
