#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>

#include "anomagent/agent_loop.hpp"
#include "anomagent/config.hpp"
#include "anomagent/error.hpp"
#include "anomagent/tools.hpp"
#include "testutil.hpp"

using namespace anomagent;
using namespace testutil;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::IoError;
}

Trajectory base_trajectory(int extra_images = 0) {
  Trajectory t{{"bottle", "crack", "normal.png"}, {}, {"normal.png"}};
  for (int i = 0; i < extra_images; ++i) {
    t.images.push_back("gen_" + std::to_string(i + 2));
  }
  return t;
}

// In-process HTTP fixture. Handlers run on a server thread; counters are
// atomic so the test thread can assert on call volume.
class LocalServer {
 public:
  LocalServer() {
    port_ = server_.bind_to_any_port("127.0.0.1");
    REQUIRE(port_ > 0);
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~LocalServer() {
    server_.stop();
    thread_.join();
  }

  std::string endpoint() const {
    return "http://127.0.0.1:" + std::to_string(port_);
  }

  httplib::Server& raw() { return server_; }

  BackendConfig config(int max_retries = 3) const {
    BackendConfig cfg;
    cfg.kind = "remote";
    cfg.endpoint = endpoint();
    cfg.model = "test-model";
    cfg.max_retries = max_retries;
    cfg.backoff_initial_seconds = 0.001;
    return cfg;
  }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
};

void reply_chat(httplib::Response& res, const std::string& content) {
  Json body = Json::object();
  body["choices"] = Json::array(
      {Json{{"message", Json{{"role", "assistant"}, {"content", content}}}}});
  res.set_content(body.dump(), "application/json");
}

}  // namespace

TEST_CASE("verdict content round-trips and is range-checked") {
  QualityVerdict v{3, 4, "decent"};
  CHECK(v.score() == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(QualityVerdict::from_content(v.to_content()) == v);

  // scalar score optional but must agree when present
  Json ok = v.to_content();
  ok.erase("score");
  CHECK(QualityVerdict::from_content(ok) == v);

  Json bad_score = v.to_content();
  bad_score["score"] = 0.9;
  CHECK(code_of([&] { QualityVerdict::from_content(bad_score); }) ==
        ErrorCode::BadResponse);

  CHECK(code_of([] {
          QualityVerdict::from_content(
              Json{{"location_score", 6}, {"quality_score", 0}, {"review", "r"}});
        }) == ErrorCode::BadResponse);
  CHECK(code_of([] {
          QualityVerdict::from_content(
              Json{{"location_score", 1}, {"review", "r"}});
        }) == ErrorCode::BadResponse);
  CHECK(code_of([] {
          QualityVerdict::from_content(Json{{"location_score", 1.5},
                                            {"quality_score", 2},
                                            {"review", "r"}});
        }) == ErrorCode::BadResponse);
}

TEST_CASE("sim script JSON round-trip and strictness") {
  SimScript s = SimScript::default_script();
  s.qe_score_sequence = {{2, 3, "first"}, {4, 5, "second"}};
  s.kr_knowledge_table["bottle"]["crack"] = "cracks follow stress lines";
  const SimScript back = SimScript::from_json(s.to_json());
  CHECK(back.qe_score_sequence == s.qe_score_sequence);
  CHECK(back.kr_knowledge_table == s.kr_knowledge_table);
  CHECK(back.pg_prompt_template == s.pg_prompt_template);

  CHECK(code_of([] { SimScript::from_json(Json{{"bogus", 1}}); }) ==
        ErrorCode::ConfigError);
  CHECK(code_of([] {
          SimScript::from_json(Json{{"qe_score_sequence", Json::array()}});
        }) == ErrorCode::ConfigError);
  CHECK(code_of([] { SimScript::from_json(Json::array()); }) ==
        ErrorCode::ConfigError);

  TempDir dir("script");
  write_file(dir.file("s.json"), s.to_json().dump());
  const SimScript loaded = load_sim_script(dir.file("s.json"));
  CHECK(loaded.qe_score_sequence == s.qe_score_sequence);
  CHECK(code_of([&] { load_sim_script(dir.file("missing.json")); }) ==
        ErrorCode::ConfigError);
  write_file(dir.file("bad.json"), "{nope");
  CHECK(code_of([&] { load_sim_script(dir.file("bad.json")); }) ==
        ErrorCode::ConfigError);
}

TEST_CASE("simulated backend is a pure function of seed, script, and ordinal") {
  SimScript script = SimScript::default_script();
  script.qe_score_sequence = {{1, 2, "a"}, {3, 4, "b"}};
  const Trajectory ctx = base_trajectory(1);
  const Json qe_args{{"anomaly_image", 2}, {"item_name", "bottle"}, {"anomaly_type", "crack"}};

  for (bool jitter : {false, true}) {
    CAPTURE(jitter);
    SimulatedBackend a(42, script, jitter);
    SimulatedBackend b(42, script, jitter);
    for (int i = 0; i < 5; ++i) {
      const Observation oa = a.invoke(ToolName::QE, qe_args, ctx);
      const Observation ob = b.invoke(ToolName::QE, qe_args, ctx);
      CHECK(oa.payload == ob.payload);
    }
    CHECK(a.qe_calls() == 5);
  }
}

TEST_CASE("script verdicts are consumed in order and the last one repeats") {
  SimScript script = SimScript::default_script();
  script.qe_score_sequence = {{1, 1, "first"}, {2, 2, "second"}, {5, 4, "third"}};
  SimulatedBackend backend(7, script, false);
  const Trajectory ctx = base_trajectory(1);
  const Json args{{"anomaly_image", 2}, {"item_name", "i"}, {"anomaly_type", "t"}};

  std::vector<std::string> reviews;
  for (int i = 0; i < 5; ++i) {
    const auto obs = backend.invoke(ToolName::QE, args, ctx);
    reviews.push_back(obs.payload.content.at("review").get<std::string>());
  }
  CHECK(reviews == std::vector<std::string>{"first", "second", "third", "third", "third"});
}

TEST_CASE("seed jitter stays on the 0..5 grid and varies with the seed") {
  SimScript script = SimScript::default_script();
  script.qe_score_sequence = {{5, 0, "edge"}};
  const Trajectory ctx = base_trajectory(1);
  const Json args{{"anomaly_image", 2}, {"item_name", "i"}, {"anomaly_type", "t"}};

  bool any_differs = false;
  for (std::uint64_t seed = 0; seed < 64; ++seed) {
    SimulatedBackend backend(seed, script, true);
    const auto obs = backend.invoke(ToolName::QE, args, ctx);
    const int l = obs.payload.content.at("location_score").get<int>();
    const int q = obs.payload.content.at("quality_score").get<int>();
    CHECK(l >= 0);
    CHECK(l <= 5);
    CHECK(q >= 0);
    CHECK(q <= 5);
    any_differs = any_differs || l != 5 || q != 0;
  }
  CHECK(any_differs);
}

TEST_CASE("sim backend fills the other tool observations deterministically") {
  SimScript script = SimScript::default_script();
  script.kr_knowledge_table["bottle"]["crack"] = "glass cracks radiate";
  SimulatedBackend backend(3, script, false);
  Trajectory ctx = base_trajectory();

  SUBCASE("prompt template slots") {
    const auto obs = backend.invoke(
        ToolName::PG,
        Json{{"image", 1}, {"item_name", "bottle"}, {"anomaly_type", "crack"}}, ctx);
    const auto prompt = obs.payload.content.at("prompt").get<std::string>();
    CHECK(prompt.find("crack") != std::string::npos);
    CHECK(prompt.find("bottle") != std::string::npos);
    CHECK(prompt.find("{item_name}") == std::string::npos);
  }
  SUBCASE("image generation appends the next index") {
    const auto obs = backend.invoke(
        ToolName::IG, Json{{"prompt", "p"}, {"target_image", 1}}, ctx);
    CHECK(obs.payload.content.at("new_image_index").get<std::int64_t>() == 2);
    REQUIRE(obs.new_image.has_value());
    CHECK(*obs.new_image == "synth_2_of_normal.png");
  }
  SUBCASE("knowledge table hit and fallback") {
    auto obs = backend.invoke(
        ToolName::KR, Json{{"item_name", "bottle"}, {"anomaly_type", "crack"}}, ctx);
    CHECK(obs.payload.content.at("knowledge").get<std::string>() ==
          "glass cracks radiate");
    obs = backend.invoke(
        ToolName::KR, Json{{"item_name", "carpet"}, {"anomaly_type", "hole"}}, ctx);
    CHECK(obs.payload.content.at("knowledge").get<std::string>().find(
              "No curated guidance") == 0);
  }
  SUBCASE("mask references the resolved registry entry") {
    const auto obs =
        backend.invoke(ToolName::MG, Json{{"anomaly_image", 1}}, ctx);
    CHECK(obs.payload.content.at("mask_reference").get<std::string>() ==
          "mask_of_normal.png");
  }
  SUBCASE("reverse normalization is a pure prefix transform") {
    CHECK(backend.reverse_normalize("anomaly.png") == "normal_of_anomaly.png");
  }
}

TEST_CASE("sim backend rejects bad arguments and dangling images") {
  SimulatedBackend backend(1, SimScript::default_script(), false);
  const Trajectory ctx = base_trajectory();

  CHECK(code_of([&] {
          backend.invoke(ToolName::MG, Json{{"image", 1}}, ctx);
        }) == ErrorCode::SchemaViolation);
  CHECK(code_of([&] {
          backend.invoke(ToolName::MG, Json{{"anomaly_image", 2}}, ctx);
        }) == ErrorCode::DanglingImage);
  CHECK(code_of([&] {
          backend.invoke(ToolName::IG, Json{{"prompt", "p"}, {"target_image", 9}}, ctx);
        }) == ErrorCode::DanglingImage);
  CHECK(code_of([&] {
          backend.invoke(ToolName::QE,
                         Json{{"anomaly_image", 1}, {"item_name", 5},
                              {"anomaly_type", "t"}},
                         ctx);
        }) == ErrorCode::SchemaViolation);
}

TEST_CASE("backend factory splits seeds into independent sim instances") {
  Config cfg;
  cfg.backend.kind = "sim";
  BackendFactory factory(cfg);
  auto a = factory.make(10);
  auto b = factory.make(11);
  auto* sa = dynamic_cast<SimulatedBackend*>(a.get());
  auto* sb = dynamic_cast<SimulatedBackend*>(b.get());
  REQUIRE(sa != nullptr);
  REQUIRE(sb != nullptr);
  CHECK(sa->seed() == 10);
  CHECK(sb->seed() == 11);
  CHECK(sa->qe_calls() == 0);
}

TEST_CASE("remote backend drives all five tools over HTTP") {
  LocalServer server;
  std::atomic<int> chat_calls{0};
  std::atomic<int> edit_calls{0};
  std::string last_model;
  std::string last_system;

  server.raw().Post("/v1/chat/completions",
                    [&](const httplib::Request& req, httplib::Response& res) {
                      ++chat_calls;
                      const Json body = Json::parse(req.body);
                      last_model = body.at("model").get<std::string>();
                      const auto& messages = body.at("messages");
                      last_system = messages.at(0).at("content").get<std::string>();
                      const std::string user =
                          messages.at(1).at("content").get<std::string>();
                      if (user.find("anomaly_image") != std::string::npos) {
                        reply_chat(res,
                                   Json{{"location_score", 4},
                                        {"quality_score", 5},
                                        {"review", "well blended"},
                                        {"score", 0.9}}
                                       .dump());
                      } else if (user.find("item_name") != std::string::npos &&
                                 last_system.find("prompt") != std::string::npos) {
                        reply_chat(res, "put a crack on the bottle");
                      } else {
                        reply_chat(res, "cracks follow the glass seam");
                      }
                    });
  server.raw().Post("/v1/images/edits",
                    [&](const httplib::Request& req, httplib::Response& res) {
                      ++edit_calls;
                      const Json body = Json::parse(req.body);
                      const std::string image = body.at("image").get<std::string>();
                      res.set_content(Json{{"image", "edited_" + image}}.dump(),
                                      "application/json");
                    });

  RemoteBackend backend(server.config());
  Trajectory ctx = base_trajectory();

  const auto pg = backend.invoke(
      ToolName::PG,
      Json{{"image", 1}, {"item_name", "bottle"}, {"anomaly_type", "crack"}}, ctx);
  CHECK(pg.payload.content.at("prompt").get<std::string>() ==
        "put a crack on the bottle");
  CHECK(last_model == "test-model");

  const auto ig = backend.invoke(
      ToolName::IG, Json{{"prompt", "p"}, {"target_image", 1}}, ctx);
  CHECK(ig.payload.content.at("new_image_index").get<std::int64_t>() == 2);
  REQUIRE(ig.new_image.has_value());
  CHECK(*ig.new_image == "edited_normal.png");
  ctx.images.push_back(*ig.new_image);

  const auto qe = backend.invoke(
      ToolName::QE,
      Json{{"anomaly_image", 2}, {"item_name", "bottle"}, {"anomaly_type", "crack"}},
      ctx);
  CHECK(qe.payload.content.at("score").get<double>() == doctest::Approx(0.9));
  CHECK(qe.payload.content.at("review").get<std::string>() == "well blended");

  const auto kr = backend.invoke(
      ToolName::KR, Json{{"item_name", "bottle"}, {"anomaly_type", "crack"}}, ctx);
  CHECK(kr.payload.content.at("knowledge").get<std::string>() ==
        "cracks follow the glass seam");

  const auto mg = backend.invoke(ToolName::MG, Json{{"anomaly_image", 2}}, ctx);
  CHECK(mg.payload.content.at("mask_reference").get<std::string>() ==
        "edited_edited_normal.png");

  CHECK(backend.reverse_normalize("defect.png") == "edited_defect.png");

  CHECK(chat_calls.load() == 3);
  CHECK(edit_calls.load() == 3);
}

TEST_CASE("remote backend sends the bearer token when configured") {
  LocalServer server;
  std::string seen_auth;
  server.raw().Post("/v1/chat/completions",
                    [&](const httplib::Request& req, httplib::Response& res) {
                      seen_auth = req.get_header_value("Authorization");
                      reply_chat(res, "text");
                    });
  BackendConfig cfg = server.config();
  cfg.api_key = "sk-test-123";
  RemoteBackend backend(cfg);
  const Trajectory ctx = base_trajectory();
  backend.invoke(ToolName::KR, Json{{"item_name", "a"}, {"anomaly_type", "b"}}, ctx);
  CHECK(seen_auth == "Bearer sk-test-123");
}

TEST_CASE("transient 5xx responses are retried then succeed") {
  LocalServer server;
  std::atomic<int> calls{0};
  server.raw().Post("/v1/images/edits",
                    [&](const httplib::Request&, httplib::Response& res) {
                      if (++calls < 3) {
                        res.status = 503;
                        res.set_content("overloaded", "text/plain");
                        return;
                      }
                      res.set_content(Json{{"image", "ok.png"}}.dump(),
                                      "application/json");
                    });
  RemoteBackend backend(server.config(4));
  CHECK(backend.reverse_normalize("x.png") == "ok.png");
  CHECK(calls.load() == 3);
}

TEST_CASE("4xx responses fail immediately without retry") {
  LocalServer server;
  std::atomic<int> calls{0};
  server.raw().Post("/v1/images/edits",
                    [&](const httplib::Request&, httplib::Response& res) {
                      ++calls;
                      res.status = 422;
                      res.set_content("bad request", "text/plain");
                    });
  RemoteBackend backend(server.config(5));
  CHECK(code_of([&] { backend.reverse_normalize("x.png"); }) ==
        ErrorCode::BadResponse);
  CHECK(calls.load() == 1);
}

TEST_CASE("persistent 5xx exhausts retries into BackendUnavailable") {
  LocalServer server;
  std::atomic<int> calls{0};
  server.raw().Post("/v1/images/edits",
                    [&](const httplib::Request&, httplib::Response& res) {
                      ++calls;
                      res.status = 500;
                    });
  RemoteBackend backend(server.config(3));
  CHECK(code_of([&] { backend.reverse_normalize("x.png"); }) ==
        ErrorCode::BackendUnavailable);
  CHECK(calls.load() == 3);
}

TEST_CASE("transport failure on a closed port becomes BackendUnavailable") {
  BackendConfig cfg;
  cfg.kind = "remote";
  // Bind-then-close to find a port with nothing listening.
  int port = 0;
  {
    httplib::Server probe;
    port = probe.bind_to_any_port("127.0.0.1");
  }
  cfg.endpoint = "http://127.0.0.1:" + std::to_string(port);
  cfg.max_retries = 2;
  cfg.backoff_initial_seconds = 0.001;
  RemoteBackend backend(cfg);
  CHECK(code_of([&] { backend.reverse_normalize("x.png"); }) ==
        ErrorCode::BackendUnavailable);
}

TEST_CASE("judge replies that are not valid verdicts become BadResponse") {
  LocalServer server;
  std::string reply = "not json at all";
  server.raw().Post("/v1/chat/completions",
                    [&](const httplib::Request&, httplib::Response& res) {
                      reply_chat(res, reply);
                    });
  RemoteBackend backend(server.config());
  const Trajectory ctx = base_trajectory();
  const Json args{{"anomaly_image", 1}, {"item_name", "i"}, {"anomaly_type", "t"}};

  CHECK(code_of([&] { backend.invoke(ToolName::QE, args, ctx); }) ==
        ErrorCode::BadResponse);
  reply = Json{{"location_score", 9}, {"quality_score", 1}, {"review", "r"}}.dump();
  CHECK(code_of([&] { backend.invoke(ToolName::QE, args, ctx); }) ==
        ErrorCode::BadResponse);
}

TEST_CASE("malformed chat envelopes become BadResponse") {
  LocalServer server;
  std::string body = "plain text, not JSON";
  server.raw().Post("/v1/chat/completions",
                    [&](const httplib::Request&, httplib::Response& res) {
                      res.set_content(body, "text/plain");
                    });
  RemoteBackend backend(server.config());
  const Trajectory ctx = base_trajectory();
  const Json args{{"item_name", "i"}, {"anomaly_type", "t"}};

  CHECK(code_of([&] { backend.invoke(ToolName::KR, args, ctx); }) ==
        ErrorCode::BadResponse);
  body = Json{{"choices", Json::array()}}.dump();
  CHECK(code_of([&] { backend.invoke(ToolName::KR, args, ctx); }) ==
        ErrorCode::BadResponse);
}

TEST_CASE("remote backend requires an endpoint") {
  BackendConfig cfg;
  cfg.kind = "remote";
  CHECK(code_of([&] { RemoteBackend backend(cfg); }) == ErrorCode::ConfigError);
}

TEST_CASE("remote policy parses one thinking plus one action per turn") {
  LocalServer server;
  std::string reply;
  std::vector<Json> seen_bodies;
  std::vector<Json> seen_messages;
  server.raw().Post("/v1/chat/completions",
                    [&](const httplib::Request& req, httplib::Response& res) {
                      const Json body = Json::parse(req.body);
                      seen_bodies.push_back(body);
                      seen_messages.push_back(body.at("messages"));
                      reply_chat(res, reply);
                    });

  BackendConfig cfg = server.config();
  RemotePolicy policy(cfg, 0.3);
  LoopConfig loop;
  Trajectory t = base_trajectory();

  SUBCASE("tool-call turn") {
    reply =
        "<thinking>draft the prompt</thinking>\n"
        "<tool_call>{\"name\":\"prompt_gen\",\"arguments\":{\"image\":1,"
        "\"item_name\":\"bottle\",\"anomaly_type\":\"crack\"}}</tool_call>\n";
    const PolicyTurn turn = policy.next_turn(t, loop);
    CHECK(turn.thinking == "draft the prompt");
    REQUIRE_FALSE(turn.is_answer());
    CHECK(turn.call().name == ToolName::PG);
    // First round: system prompt plus the per-task user message.
    REQUIRE(seen_messages.size() == 1);
    REQUIRE(seen_messages[0].size() == 2);
    CHECK(seen_messages[0][0].at("role") == "system");
    CHECK(seen_messages[0][1].at("role") == "user");
    const auto user = seen_messages[0][1].at("content").get<std::string>();
    CHECK(user.find("bottle") != std::string::npos);
    CHECK(user.find("crack") != std::string::npos);
  }

  SUBCASE("answer turn") {
    reply =
        "<thinking>finish up</thinking>\n"
        "<answer>{\"status\":\"success\",\"final_image_index\":1,"
        "\"mask_generated\":true,\"synthesis_logic\":\"done\"}</answer>\n";
    const PolicyTurn turn = policy.next_turn(t, loop);
    CHECK(turn.is_answer());
    CHECK(turn.answer().final_image_index == 1);
  }

  SUBCASE("prior transcript is replayed as alternating chat turns") {
    reply =
        "<thinking>next</thinking>\n"
        "<tool_call>{\"name\":\"image_gen\",\"arguments\":{\"prompt\":\"p\","
        "\"target_image\":1}}</tool_call>\n";
    t.segments = {think("a"), call_pg(1, "bottle", "crack"), ret_pg("drafted")};
    policy.next_turn(t, loop);
    REQUIRE(seen_messages.size() == 1);
    // system, user task, assistant (thinking+call), user (tool return)
    REQUIRE(seen_messages[0].size() == 4);
    CHECK(seen_messages[0][2].at("role") == "assistant");
    CHECK(seen_messages[0][3].at("role") == "user");
    const auto assistant = seen_messages[0][2].at("content").get<std::string>();
    CHECK(assistant.find("<thinking>a</thinking>") != std::string::npos);
    CHECK(assistant.find("prompt_gen") != std::string::npos);
    const auto observed = seen_messages[0][3].at("content").get<std::string>();
    CHECK(observed.find("<tool_return>") != std::string::npos);
    CHECK(observed.find("drafted") != std::string::npos);
  }

  SUBCASE("replies with the wrong shape are policy errors") {
    reply = "<thinking>only thought, no action</thinking>";
    CHECK(code_of([&] { policy.next_turn(t, loop); }) == ErrorCode::PolicyError);

    reply =
        "<tool_call>{\"name\":\"mask_gen\",\"arguments\":{\"anomaly_image\":1}}"
        "</tool_call>";
    CHECK(code_of([&] { policy.next_turn(t, loop); }) == ErrorCode::PolicyError);

    reply =
        "<thinking>a</thinking>\n<thinking>b</thinking>\n"
        "<answer>{\"status\":\"success\",\"final_image_index\":1,"
        "\"mask_generated\":true,\"synthesis_logic\":\"s\"}</answer>";
    CHECK(code_of([&] { policy.next_turn(t, loop); }) == ErrorCode::PolicyError);

    reply = "no tags here";
    CHECK(code_of([&] { policy.next_turn(t, loop); }) == ErrorCode::PolicyError);
  }

  SUBCASE("temperature is forwarded") {
    reply =
        "<thinking>t</thinking>\n"
        "<answer>{\"status\":\"success\",\"final_image_index\":1,"
        "\"mask_generated\":true,\"synthesis_logic\":\"s\"}</answer>";
    policy.next_turn(t, loop);
    REQUIRE_FALSE(seen_bodies.empty());
    CHECK(seen_bodies.back().at("temperature").get<double>() ==
          doctest::Approx(0.3).epsilon(1e-12));
  }
}
