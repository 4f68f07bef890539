#include <httplib.h>

#include <stdexcept>

#include "utaug/errors.hpp"
#include "utaug/trial.hpp"

namespace utaug {

namespace {

struct ErrorInfo {
  int status;
  const char* code;
};

/// Maps the exception in flight to an HTTP status and a machine-readable code.
ErrorInfo classify_current_exception(std::string& message) {
  try {
    throw;
  } catch (const EndOfTrial& e) {
    message = e.what();
    return {410, "end_of_trial"};
  } catch (const NotFoundError& e) {
    message = e.what();
    return {404, "not_found"};
  } catch (const ConflictError& e) {
    message = e.what();
    return {409, "conflict"};
  } catch (const InvalidStateError& e) {
    message = e.what();
    return {409, "invalid_state"};
  } catch (const nlohmann::json::exception& e) {
    message = std::string("malformed request body: ") + e.what();
    return {400, "invalid_argument"};
  } catch (const std::invalid_argument& e) {
    message = e.what();
    return {400, "invalid_argument"};
  } catch (const std::exception& e) {
    message = e.what();
    return {500, "internal"};
  }
}

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <typename Handler>
httplib::Server::Handler guarded(Handler h) {
  return [h](const httplib::Request& req, httplib::Response& res) {
    try {
      h(req, res);
    } catch (...) {
      std::string message;
      const auto info = classify_current_exception(message);
      send_json(res, info.status, {{"error", {{"code", info.code}, {"message", message}}}});
    }
  };
}

nlohmann::json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return nlohmann::json::object();
  return nlohmann::json::parse(req.body);
}

[[noreturn]] void rethrow_remote(int status, const std::string& body) {
  std::string code = "internal", message = body;
  try {
    const auto j = nlohmann::json::parse(body);
    code = j.at("error").at("code").get<std::string>();
    message = j.at("error").at("message").get<std::string>();
  } catch (const nlohmann::json::exception&) {
  }
  if (code == "end_of_trial") throw EndOfTrial(message);
  if (code == "not_found") throw NotFoundError(message);
  if (code == "conflict") throw ConflictError(message);
  if (code == "invalid_state") throw InvalidStateError(message);
  if (code == "invalid_argument") throw std::invalid_argument(message);
  throw std::runtime_error("HTTP " + std::to_string(status) + ": " + message);
}

}  // namespace

struct TrialHttpServer::Impl {
  TrialService& service;
  httplib::Server server;

  explicit Impl(TrialService& s) : service(s) {
    server.Post("/trials", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const auto trial = service.create_trial(create_trial_request_from_json(parse_body(req)));
                  send_json(res, 201,
                            {{"trial_id", trial.trial_id},
                             {"n_images", trial.size()},
                             {"n_with_cracks", trial.n_with_cracks},
                             {"mode", to_string(trial.mode)},
                             {"dataset_hash", trial.dataset_hash}});
                }));
    server.Post(R"(/trials/([^/]+)/sessions)",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const auto body = parse_body(req);
                  const auto s = service.create_session(req.matches[1], body.at("subject_id").get<std::string>());
                  const auto trial = service.get_trial(s.trial_id);
                  send_json(res, 201,
                            {{"session_id", s.session_id},
                             {"trial_id", s.trial_id},
                             {"subject_id", s.subject_id},
                             {"n_images", trial.size()},
                             {"mode", to_string(trial.mode)}});
                }));
    server.Get(R"(/sessions/([^/]+)/next)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 const auto img = service.next_image(req.matches[1]);
                 if (req.get_param_value("format") == "raw") {
                   std::string bytes(img.pixels.size() * 4, '\0');
                   for (std::size_t i = 0; i < img.pixels.size(); ++i) {
                     const auto u = std::bit_cast<std::uint32_t>(img.pixels[i]);
                     for (int b = 0; b < 4; ++b) bytes[i * 4 + b] = static_cast<char>((u >> (8 * b)) & 0xff);
                   }
                   res.set_header("X-Image-Index", std::to_string(img.image_index));
                   res.set_header("X-Image-N", std::to_string(img.n));
                   res.set_header("X-Images-Remaining", std::to_string(img.n_remaining));
                   res.set_content(bytes, "application/octet-stream");
                   return;
                 }
                 send_json(res, 200, next_image_to_json(img));
               }));
    server.Post(R"(/sessions/([^/]+)/responses)",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const auto body = parse_body(req);
                  const auto ack = service.submit_response(
                      req.matches[1], body.at("image_index").get<std::size_t>(),
                      body.value("marks_mm", std::vector<double>{}), body.value("gain_db", 0.0));
                  send_json(res, 200, ack_to_json(ack));
                }));
    server.Get(R"(/sessions/([^/]+)/report)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 send_json(res, 200, service.session_report(req.matches[1]));
               }));
    server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (res.body.empty()) {
        send_json(res, res.status,
                  {{"error", {{"code", res.status == 404 ? "not_found" : "http_error"},
                              {"message", "no such route"}}}});
      }
    });
  }
};

TrialHttpServer::TrialHttpServer(TrialService& service) : impl_(std::make_unique<Impl>(service)) {}
TrialHttpServer::~TrialHttpServer() { stop(); }

int TrialHttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int p = impl_->server.bind_to_any_port(host);
    if (p < 0) throw std::runtime_error("cannot bind " + host);
    return p;
  }
  if (!impl_->server.bind_to_port(host, port)) {
    throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  }
  return port;
}

void TrialHttpServer::listen() { impl_->server.listen_after_bind(); }

void TrialHttpServer::stop() {
  if (impl_) impl_->server.stop();
}

struct HttpTrialClient::Impl {
  httplib::Client client;
  Impl(const std::string& host, int port) : client(host, port) {
    client.set_read_timeout(120, 0);
    client.set_write_timeout(120, 0);
  }

  nlohmann::json call(const char* method, const std::string& path, const nlohmann::json* body) {
    httplib::Result r = body ? client.Post(path, body->dump(), "application/json")
                             : client.Get(path);
    if (!r) throw std::runtime_error(std::string(method) + " " + path + " failed: " + httplib::to_string(r.error()));
    if (r->status < 200 || r->status >= 300) rethrow_remote(r->status, r->body);
    return nlohmann::json::parse(r->body);
  }
};

HttpTrialClient::HttpTrialClient(std::string host, int port) : impl_(std::make_unique<Impl>(host, port)) {}
HttpTrialClient::~HttpTrialClient() = default;

nlohmann::json HttpTrialClient::create_trial(const CreateTrialRequest& request) {
  const auto body = create_trial_request_to_json(request);
  return impl_->call("POST", "/trials", &body);
}

Session HttpTrialClient::create_session(const std::string& trial_id, const std::string& subject_id) {
  const nlohmann::json body = {{"subject_id", subject_id}};
  const auto j = impl_->call("POST", "/trials/" + trial_id + "/sessions", &body);
  Session s;
  s.session_id = j.at("session_id").get<std::string>();
  s.trial_id = j.at("trial_id").get<std::string>();
  s.subject_id = j.at("subject_id").get<std::string>();
  return s;
}

std::optional<NextImage> HttpTrialClient::next_image(const std::string& session_id) {
  try {
    return next_image_from_json(impl_->call("GET", "/sessions/" + session_id + "/next", nullptr));
  } catch (const EndOfTrial&) {
    return std::nullopt;
  }
}

SubmitAck HttpTrialClient::submit_response(const std::string& session_id, std::size_t image_index,
                                           const std::vector<double>& marks_mm, double gain_db) {
  const nlohmann::json body = {{"image_index", image_index}, {"marks_mm", marks_mm}, {"gain_db", gain_db}};
  return ack_from_json(impl_->call("POST", "/sessions/" + session_id + "/responses", &body));
}

nlohmann::json HttpTrialClient::session_report(const std::string& session_id) {
  return impl_->call("GET", "/sessions/" + session_id + "/report", nullptr);
}

}  // namespace utaug
