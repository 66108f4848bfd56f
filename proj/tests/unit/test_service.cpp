#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <httplib.h>

#include <chrono>
#include <fstream>
#include <thread>

#include "pv/config.hpp"
#include "pv/digest.hpp"
#include "pv/errors.hpp"
#include "pv/service.hpp"
#include "support.hpp"

using namespace pv;
using nlohmann::json;

namespace {

struct Loaded {
  AppConfig cfg = pvtest::fixture_config();
  ModelBundle bundle = load_model(cfg);
  Decoder decoder = load_configured_decoder(cfg);
  DatasetManifest manifest = load_dataset(cfg);
};

const Loaded& fixture() {
  static const Loaded f;
  return f;
}

// One service shared by the handler tests; the partition is the slow part.
ExplanationService& service() {
  static ExplanationService svc;
  static const bool once = [] {
    svc.load(fixture().bundle, load_configured_decoder(fixture().cfg), fixture().manifest);
    return true;
  }();
  (void)once;
  return svc;
}

std::string first_id(Outcome o) { return service().partition()->ids(o).front(); }

json wait_done(ExplanationService& svc, const std::string& id) {
  svc.wait_idle();
  const auto r = svc.job(id);
  REQUIRE(r.status == 200);
  return r.body;
}

}  // namespace

TEST_CASE("503 before a model is loaded") {
  ExplanationService idle;
  CHECK_FALSE(idle.loaded());
  CHECK(idle.classes().status == 503);
  CHECK(idle.samples({}).status == 503);
  CHECK(idle.submit({{"sample_id", "x"}}).status == 503);
  CHECK(idle.partition() == nullptr);
}

TEST_CASE("load rejects mismatched artefacts") {
  ExplanationService svc;
  DatasetManifest m = fixture().manifest;
  m.class_names.back() = "not-a-class";
  CHECK_THROWS_AS(svc.load(fixture().bundle, load_configured_decoder(fixture().cfg), m), ConfigError);
  CHECK_THROWS_AS(svc.load(fixture().bundle, build_decoder(DecoderConfig::halving({8, 4, 4}, 32, 32, 16), 1), fixture().manifest), ConfigError);
  CHECK_FALSE(svc.loaded());
}

TEST_CASE("classes") {
  const auto r = service().classes();
  CHECK(r.status == 200);
  CHECK(r.body.at("classes").get<std::vector<std::string>>() == fixture().bundle.class_names());
}

TEST_CASE("samples: filters and pagination") {
  auto& svc = service();
  const OutcomePartition& p = *svc.partition();
  const auto all = svc.samples({{"page_size", "500"}});
  CHECK(all.status == 200);
  CHECK(all.body.at("total") == p.evaluated.size());
  CHECK(all.body.at("items").size() == std::min<std::size_t>(500, p.evaluated.size()));
  CHECK(svc.samples({}).body.at("page_size") == 50);

  for (Outcome o : {Outcome::correct, Outcome::incorrect, Outcome::mixed}) {
    const auto r = svc.samples({{"outcome", to_string(o)}, {"page_size", "500"}});
    REQUIRE(r.status == 200);
    CHECK(r.body.at("total") == p.ids(o).size());
    for (const auto& it : r.body.at("items")) CHECK(it.at("outcome") == to_string(o));
  }

  const std::string cls = fixture().bundle.class_names()[2];
  const auto by_name = svc.samples({{"class", cls}, {"page_size", "500"}});
  const auto by_index = svc.samples({{"class", "2"}, {"page_size", "500"}});
  CHECK(by_name.body == by_index.body);
  for (const auto& it : by_name.body.at("items")) {
    const auto t = it.at("targets").get<std::vector<std::string>>();
    const auto pr = it.at("prediction").get<std::vector<std::string>>();
    CHECK((std::ranges::count(t, cls) + std::ranges::count(pr, cls)) > 0);
  }

  const auto p1 = svc.samples({{"page", "1"}, {"page_size", "7"}});
  const auto p2 = svc.samples({{"page", "2"}, {"page_size", "7"}});
  REQUIRE(p2.body.at("items").size() == 7);
  CHECK(p2.body.at("items")[0].at("sample_id") == all.body.at("items")[7].at("sample_id"));
  CHECK(p1.body.at("items")[6].at("sample_id") == all.body.at("items")[6].at("sample_id"));
  CHECK(svc.samples({{"page", "100000"}}).body.at("items").empty());

  CHECK(svc.samples({{"outcome", "wrong"}}).status == 400);
  CHECK(svc.samples({{"class", "zebra"}}).status == 400);
  CHECK(svc.samples({{"page", "0"}}).status == 400);
  CHECK(svc.samples({{"page", "x"}}).status == 400);
  CHECK(svc.samples({{"page_size", "501"}}).status == 400);
  CHECK(svc.samples({{"colour", "red"}}).status == 400);
}

TEST_CASE("submit: validation, top-class default and coalescing") {
  auto& svc = service();
  CHECK(svc.submit(json::array()).status == 400);
  CHECK(svc.submit({{"sample_id", 3}}).status == 400);
  CHECK(svc.submit({{"sample_id", "no-such-sample"}}).status == 404);
  const std::string id = first_id(Outcome::incorrect);
  CHECK(svc.submit({{"sample_id", id}, {"class_index", 999}}).status == 422);
  CHECK(svc.submit({{"sample_id", id}, {"class_index", "zebra"}}).status == 422);
  CHECK(svc.submit({{"sample_id", id}, {"class_index", -1}}).status == 422);
  CHECK(svc.job("feedface").status == 404);

  const EvaluatedSample& e = *svc.partition()->find(id);
  const auto first = svc.submit({{"sample_id", id}});
  CHECK(first.status == 202);
  CHECK(first.body.at("class_index") == e.top_class);
  const auto again = svc.submit({{"sample_id", id}, {"class_index", e.top_class}});
  CHECK(again.status == 200);
  CHECK(again.body.at("job_id") == first.body.at("job_id"));
  const auto named = svc.submit({{"sample_id", id}, {"class_index", fixture().bundle.class_names()[e.top_class]}});
  CHECK(named.body.at("job_id") == first.body.at("job_id"));

  const json done = wait_done(svc, first.body.at("job_id"));
  CHECK(done.at("status") == "done");
  const json& result = done.at("result");
  CHECK(result.at("sample_id") == id);
  CHECK(result.at("scores").size() == fixture().bundle.class_names().size());
  for (const char* name : {"input", "saliency", "overlay", "reconstruction", "pv", "panel"})
    CHECK(result.at("assets").contains(name));
}

TEST_CASE("served assets are byte-identical to a direct render") {
  auto& svc = service();
  const std::string id = first_id(Outcome::correct);
  const int other = (svc.partition()->find(id)->top_class + 1) % fixture().bundle.class_count();
  const auto sub = svc.submit({{"sample_id", id}, {"class_index", other}});
  const json done = wait_done(svc, sub.body.at("job_id"));
  REQUIRE(done.at("status") == "done");

  const Loaded& f = fixture();
  const Encoder enc(f.bundle);
  const auto record = explain_sample(f.bundle, enc, f.decoder, f.manifest, id, other);
  const auto direct = encode_assets(record, {4, f.bundle.class_names()});
  for (const auto& a : direct) {
    const std::string url = done.at("result").at("assets").at(a.name);
    CHECK(url == "/assets/" + a.digest + ".png");
    const auto served = svc.asset(a.digest);
    REQUIRE(served);
    CHECK(*served == a.png);
    CHECK(sha256_hex(*served) == a.digest);
  }
  CHECK_FALSE(svc.asset(std::string(64, '0')));
}

TEST_CASE("asset directory receives the PNGs") {
  const auto dir = pvtest::scratch_dir("service_assets");
  ExplanationService svc(ServiceOptions{.asset_dir = dir});
  svc.load(fixture().bundle, load_configured_decoder(fixture().cfg), fixture().manifest);
  const auto sub = svc.submit({{"sample_id", svc.partition()->ids(Outcome::mixed).front()}});
  const json done = wait_done(svc, sub.body.at("job_id"));
  REQUIRE(done.at("status") == "done");
  for (const auto& [name, url] : done.at("result").at("assets").items()) {
    const std::string file = url.get<std::string>().substr(std::string("/assets/").size());
    const auto p = dir / file;
    REQUIRE(std::filesystem::exists(p));
    std::ifstream in(p, std::ios::binary);
    const std::string bytes((std::istreambuf_iterator<char>(in)), {});
    CHECK(*svc.asset(file.substr(0, 64)) == bytes);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("http front end") {
  auto& svc = service();
  HttpServer server(svc);
  const int port = server.bind("127.0.0.1", 0);
  REQUIRE(port > 0);
  server.start();
  httplib::Client cli("127.0.0.1", port);
  cli.set_read_timeout(60, 0);

  auto classes = cli.Get("/api/classes");
  REQUIRE(classes);
  CHECK(classes->status == 200);
  CHECK(classes->get_header_value("Content-Type") == "application/json");
  CHECK(classes->get_header_value("Access-Control-Allow-Origin") == "*");
  CHECK(json::parse(classes->body).at("classes").size() == fixture().bundle.class_names().size());

  auto samples = cli.Get("/api/samples?outcome=incorrect&page_size=3");
  REQUIRE(samples);
  CHECK(samples->status == 200);
  CHECK(json::parse(samples->body).at("items").size() == 3);
  CHECK(cli.Get("/api/samples?outcome=bogus")->status == 400);

  auto bad = cli.Post("/api/explanations", "{not json", "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 400);
  CHECK(cli.Post("/api/explanations", json{{"sample_id", "nope"}}.dump(), "application/json")->status == 404);

  const std::string id = svc.partition()->ids(Outcome::incorrect).back();
  auto posted = cli.Post("/api/explanations", json{{"sample_id", id}}.dump(), "application/json");
  REQUIRE(posted);
  CHECK((posted->status == 202 || posted->status == 200));
  const std::string job = json::parse(posted->body).at("job_id");

  json status;
  for (int i = 0; i < 600; ++i) {
    auto r = cli.Get("/api/explanations/" + job);
    REQUIRE(r);
    status = json::parse(r->body);
    if (status.at("status") == "done" || status.at("status") == "failed") break;
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
  REQUIRE(status.at("status") == "done");
  CHECK(cli.Get("/api/explanations/0123abcd")->status == 404);

  for (const auto& [name, url] : status.at("result").at("assets").items()) {
    auto png = cli.Get(url.get<std::string>());
    REQUIRE(png);
    CHECK(png->status == 200);
    CHECK(png->get_header_value("Content-Type") == "image/png");
    const std::string digest = url.get<std::string>().substr(8, 64);
    CHECK(png->body == *svc.asset(digest));
    CHECK(png->body.substr(1, 3) == "PNG");
  }
  CHECK(cli.Get("/assets/" + std::string(64, 'a') + ".png")->status == 404);
  server.stop();
}
