#include <doctest.h>

#include <httplib.h>

#include <cstring>
#include <thread>

#include "trial_fixture.hpp"
#include "utaug/errors.hpp"

using namespace utaug;

namespace {

/// Service plus server on a free loopback port, listening on a background thread.
struct LiveServer {
  TrialService service;
  TrialHttpServer server{service};
  int port = 0;
  std::thread thread;

  LiveServer() {
    port = server.bind("127.0.0.1", 0);
    thread = std::thread([this] { server.listen(); });
  }
  ~LiveServer() {
    server.stop();
    thread.join();
  }
};

nlohmann::json body_of(const httplib::Result& r) { return nlohmann::json::parse(r->body); }

}  // namespace

TEST_CASE("http status codes") {
  LiveServer live;
  httplib::Client c("127.0.0.1", live.port);

  auto r = c.Post("/trials", create_trial_request_to_json(pool_request(3, 1)).dump(), "application/json");
  REQUIRE(r);
  CHECK(r->status == 201);
  const auto tid = body_of(r).at("trial_id").get<std::string>();
  CHECK(body_of(r).at("n_images") == 3);

  r = c.Post("/trials", "{not json", "application/json");
  CHECK(r->status == 400);
  CHECK(body_of(r).at("error").at("code") == "invalid_argument");

  r = c.Post("/trials/trial-missing/sessions", R"({"subject_id":"x"})", "application/json");
  CHECK(r->status == 404);
  CHECK(body_of(r).at("error").at("code") == "not_found");

  r = c.Get("/no/such/route");
  CHECK(r->status == 404);

  r = c.Post("/trials/" + tid + "/sessions", R"({"subject_id":"frank"})", "application/json");
  REQUIRE(r->status == 201);
  const auto sid = body_of(r).at("session_id").get<std::string>();

  r = c.Get("/sessions/" + sid + "/report");
  CHECK(r->status == 409);
  CHECK(body_of(r).at("error").at("code") == "invalid_state");

  r = c.Post("/sessions/" + sid + "/responses", R"({"image_index":2})", "application/json");
  CHECK(r->status == 409);
  CHECK(body_of(r).at("error").at("code") == "conflict");

  r = c.Post("/sessions/" + sid + "/responses", R"({"image_index":0,"marks_mm":[-3.0]})", "application/json");
  CHECK(r->status == 400);

  r = c.Get("/sessions/" + sid + "/next?format=raw");
  REQUIRE(r->status == 200);
  CHECK(r->get_header_value("X-Image-Index") == "0");
  CHECK(r->get_header_value("X-Image-N") == "16");
  CHECK(r->get_header_value("X-Images-Remaining") == "3");
  REQUIRE(r->body.size() == 256 * 4);
  std::vector<float> raw(256);
  std::memcpy(raw.data(), r->body.data(), r->body.size());
  CHECK(raw == live.service.next_image(sid).pixels);

  for (int i = 0; i < 3; ++i) {
    r = c.Post("/sessions/" + sid + "/responses", nlohmann::json{{"image_index", i}}.dump(), "application/json");
    CHECK(r->status == 200);
  }
  CHECK(body_of(r).at("completed").get<bool>());
  r = c.Get("/sessions/" + sid + "/next");
  CHECK(r->status == 410);
  CHECK(body_of(r).at("error").at("code") == "end_of_trial");
  r = c.Get("/sessions/" + sid + "/report");
  CHECK(r->status == 200);
  CHECK(body_of(r).at("false_call_count") == 0);
}

TEST_CASE("http client and local client agree") {
  LiveServer live;
  HttpTrialClient http("127.0.0.1", live.port);
  const auto created = http.create_trial(pool_request(40, 15, TrialMode::learning));
  const auto tid = created.at("trial_id").get<std::string>();

  nn::Network net(pool_network_config());
  net.init_he(4);
  const auto remote = run_ml_subject(http, tid, net);

  TrialService local;
  local.create_trial(pool_request(40, 15, TrialMode::learning));
  LocalTrialClient lc(local);
  const auto here = run_ml_subject(lc, tid, net);

  auto a = http.session_report(remote), b = lc.session_report(here);
  CHECK(a.at("session_id") == remote);
  a.erase("session_id");
  b.erase("session_id");
  CHECK(a == b);

  CHECK_FALSE(http.next_image(remote).has_value());
  CHECK_THROWS_AS(http.submit_response(remote, 40, {}, 0.0), ConflictError);
  CHECK_THROWS_AS(http.create_session("trial-missing", "x"), NotFoundError);
  CHECK_THROWS_AS(http.create_session(tid, "bad id"), std::invalid_argument);

  const auto s = http.create_session(tid, "gina");
  const auto img = http.next_image(s.session_id);
  REQUIRE(img.has_value());
  const auto ack = http.submit_response(s.session_id, 0, {}, 2.0);
  REQUIRE(ack.feedback.has_value());
  CHECK(ack.feedback->has_flaw == live.service.get_trial(tid).truth[0].has_flaw);
  CHECK_THROWS_AS(http.session_report(s.session_id), InvalidStateError);
}
