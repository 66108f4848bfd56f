#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <iostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "pv/cli.hpp"
#include "pv/config.hpp"
#include "pv/digest.hpp"
#include "pv/service.hpp"
#include "support.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = 0;
  std::string out, err;
};

Run pv_run(std::vector<std::string> args) {
  args.insert(args.begin(), "pv");
  std::ostringstream out, err;
  auto* old_out = std::cout.rdbuf(out.rdbuf());
  auto* old_err = std::cerr.rdbuf(err.rdbuf());
  Run r;
  r.code = pv::cli::run(args);
  std::cout.rdbuf(old_out);
  std::cerr.rdbuf(old_err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string config_path() { return (pvtest::fixture_dir() / "config.json").string(); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

json json_error(const Run& r) { return json::parse(r.err.substr(0, r.err.find('\n'))); }

// First incorrect sample of the eval split, found through the service's partition.
std::string some_sample(pv::Outcome o) {
  const auto cfg = pvtest::fixture_config();
  const auto bundle = pv::load_model(cfg);
  const auto manifest = pv::load_dataset(cfg);
  return pv::partition_by_outcome(bundle, manifest, cfg.threshold, cfg.eval_split).ids(o).front();
}

void check_manifest(const fs::path& dir, const std::string& command) {
  const json m = json::parse(slurp(dir / "manifest.json"));
  CHECK(m.at("command") == command);
  CHECK_FALSE(m.at("outputs").empty());
  for (const auto& o : m.at("outputs")) {
    const fs::path p = dir / o.at("path").get<std::string>();
    REQUIRE(fs::exists(p));
    CHECK(pv::sha256_hex(slurp(p)) == o.at("sha256"));
  }
}

}  // namespace

TEST_CASE("exit codes") {
  CHECK(pv_run({"--help"}).code == 0);
  CHECK(pv_run({"--no-such-flag"}).code == 1);
  CHECK(pv_run({"explain", "--config", config_path()}).code == 1);  // --sample missing
  CHECK(pv_run({"train", "--config", config_path(), "--epochs", "0"}).code == 1);
  CHECK(pv_run({"train", "--config", config_path(), "--mode", "median"}).code == 1);

  const Run missing_cfg = pv_run({"--json-errors", "explain", "--config", "/nonexistent/config.json", "--sample", "x"});
  CHECK(missing_cfg.code == 1);
  CHECK(json_error(missing_cfg).at("exit_code") == 1);

  const Run bad_sample = pv_run({"--json-errors", "explain", "--config", config_path(), "--sample", "no-such-sample",
                                 "--out", pvtest::scratch_dir("cli_bad").string()});
  CHECK(bad_sample.code == 1);
  const json e = json_error(bad_sample);
  CHECK(e.at("error").at("message").get<std::string>().find("no-such-sample") != std::string::npos);

  const Run bad_class = pv_run({"explain", "--config", config_path(), "--sample", some_sample(pv::Outcome::correct),
                                "--class", "zebra", "--out", pvtest::scratch_dir("cli_bad").string()});
  CHECK(bad_class.code == 1);
  CHECK(bad_class.err.find("zebra") != std::string::npos);

  // Divergence is a runtime failure.
  const auto dir = pvtest::scratch_dir("cli_diverge");
  const Run diverged = pv_run({"--json-errors", "train", "--config", config_path(), "--lr", "1e300", "--epochs", "1",
                               "--limit", "64", "--no-eval", "--out", dir.string()});
  CHECK(diverged.code == 2);
  CHECK(json_error(diverged).at("error").at("kind") == "numeric");
  CHECK(fs::exists(dir / "checkpoints" / "diverged.ckpt"));
  fs::remove_all(dir);
}

TEST_CASE("explain defaults to the top class and matches the API byte for byte") {
  const std::string sample = some_sample(pv::Outcome::incorrect);
  const auto dir = pvtest::scratch_dir("cli_explain");
  const Run r = pv_run({"explain", "--config", config_path(), "--sample", sample, "--out", dir.string()});
  REQUIRE(r.code == 0);
  const json record = json::parse(slurp(dir / "record.json"));
  CHECK(record.at("sample_id") == sample);
  CHECK(record.at("class_index") == record.at("top_class"));
  check_manifest(dir, "explain");

  const auto cfg = pvtest::fixture_config();
  pv::ExplanationService svc;
  svc.load(pv::load_model(cfg), pv::load_configured_decoder(cfg), pv::load_dataset(cfg));
  const auto sub = svc.submit({{"sample_id", sample}});
  svc.wait_idle();
  const json done = svc.job(sub.body.at("job_id")).body;
  REQUIRE(done.at("status") == "done");
  CHECK(done.at("class_index") == record.at("class_index"));
  for (const auto& [name, digest] : record.at("assets").items()) {
    const std::string cli_png = slurp(dir / (name + ".png"));
    CHECK(pv::sha256_hex(cli_png) == digest);
    const auto api_png = svc.asset(digest);
    REQUIRE(api_png);
    CHECK(*api_png == cli_png);
    CHECK(done.at("result").at("assets").at(name) == "/assets/" + digest.get<std::string>() + ".png");
  }

  const auto dir2 = pvtest::scratch_dir("cli_explain_cls");
  REQUIRE(pv_run({"explain", "--config", config_path(), "--sample", sample, "--class", "0", "--layout", "pv", "--out",
                  dir2.string()})
              .code == 0);
  CHECK(json::parse(slurp(dir2 / "record.json")).at("class_index") == 0);
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST_CASE("quiz export and response scoring") {
  const auto dir = pvtest::scratch_dir("cli_quiz");
  const Run r = pv_run({"quiz", "--config", config_path(), "--n-correct", "16", "--n-incorrect", "14", "--seed", "7",
                        "--out", dir.string()});
  REQUIRE(r.code == 0);
  check_manifest(dir, "quiz");
  const json quiz = json::parse(slurp(dir / "quiz.json"));
  REQUIRE(quiz.at("questions").size() == 30);
  for (const char* variant : {"gradcam", "pv"}) {
    REQUIRE(quiz.at("variants").at(variant).size() == 30);
    for (const auto& v : quiz.at("variants").at(variant)) {
      const fs::path png = dir / v.at("asset").get<std::string>();
      REQUIRE(fs::exists(png));
      CHECK(pv::sha256_hex(slurp(png)) == v.at("panel_digest"));
    }
  }

  // One perfect user and one who always abstains, in each survey.
  std::ofstream csv(dir / "gc.csv");
  csv << "user_id,question_id,chosen_option\n";
  for (const auto& q : quiz.at("questions")) {
    csv << "ann," << q.at("question_id").get<std::string>() << "," << q.at("model_prediction").get<std::string>() << "\n";
    csv << "bob," << q.at("question_id").get<std::string>() << ",I just can't tell\n";
  }
  csv.close();
  fs::copy_file(dir / "gc.csv", dir / "pv.csv");
  const auto out = dir / "scores";
  const Run s = pv_run({"eval", "responses", "--quiz", (dir / "quiz.json").string(), "--gradcam",
                        (dir / "gc.csv").string(), "--pv", (dir / "pv.csv").string(), "--out", out.string()});
  REQUIRE(s.code == 0);
  const json scores = json::parse(slurp(out / "scores.json"));
  CHECK(scores.at("gradcam").at("correct").at("accuracy") == doctest::Approx(0.5));
  CHECK(scores.at("mann_whitney").at("incorrect").at("u") == doctest::Approx(2.0));
  CHECK(scores.at("mann_whitney").at("incorrect").at("tail") == "less");

  const Run lonely = pv_run({"eval", "responses", "--quiz", (dir / "quiz.json").string(), "--gradcam",
                             (dir / "gc.csv").string(), "--out", out.string()});
  CHECK(lonely.code == 1);
  fs::remove_all(dir);
}
