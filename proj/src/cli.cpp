#include "pv/cli.hpp"

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "pv/config.hpp"
#include "pv/desk.hpp"
#include "pv/digest.hpp"
#include "pv/errors.hpp"
#include "pv/evaluation.hpp"
#include "pv/image_io.hpp"
#include "pv/pv_compose.hpp"
#include "pv/service.hpp"
#include "pv/trainer.hpp"

namespace pv::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::atomic<bool> g_interrupted{false};

/// Collects every file a command writes so it can be indexed in manifest.json.
class OutputDir {
 public:
  OutputDir(fs::path root, std::string command) : root_(std::move(root)), command_(std::move(command)) {
    fs::create_directories(root_);
  }

  fs::path write(const std::string& rel, const std::string& bytes) {
    const fs::path p = root_ / rel;
    fs::create_directories(p.parent_path());
    std::ofstream f(p, std::ios::binary);
    if (!f) throw BackendError("cannot write '" + p.string() + "'");
    f << bytes;
    record(rel, bytes);
    return p;
  }

  fs::path write_json(const std::string& rel, const json& j) { return write(rel, j.dump(2) + "\n"); }

  void record(const std::string& rel, const std::string& bytes) {
    outputs_[rel] = sha256_hex(bytes);
  }

  void finish(const std::vector<std::string>& args) {
    json outs = json::array();
    for (const auto& [rel, digest] : outputs_) outs.push_back({{"path", rel}, {"sha256", digest}});
    const json m{{"command", command_}, {"args", args}, {"outputs", outs}};
    std::ofstream(root_ / "manifest.json") << m.dump(2) << "\n";
  }

  const fs::path& root() const { return root_; }

 private:
  fs::path root_;
  std::string command_;
  std::map<std::string, std::string> outputs_;
};

AppConfig load_config(const std::string& path) {
  if (path.empty()) throw ArgumentError("--config is required");
  AppConfig cfg = AppConfig::load(path);
  cfg.apply_env();
  return cfg;
}

std::optional<int> resolve_class(const ModelBundle& bundle, const std::string& s) {
  if (s.empty()) return std::nullopt;
  const auto& names = bundle.class_names();
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == s) return static_cast<int>(i);
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used == s.size() && v >= 0 && v < bundle.class_count()) return v;
  } catch (const std::exception&) {
  }
  throw ValidationError("unknown class '" + s + "'");
}

ImageSet split_set(const DatasetManifest& m, const std::string& split, int w, int h, int limit = -1) {
  auto samples = m.split(split);
  if (samples.empty()) throw ValidationError("dataset has no samples in split '" + split + "'");
  if (limit > 0 && static_cast<int>(samples.size()) > limit) samples.resize(static_cast<std::size_t>(limit));
  return load_image_set(m, samples, w, h, m.root.filename().string() + ":" + split);
}

std::string html_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string join_labels(const std::set<int>& s, const std::vector<std::string>& names) {
  std::string out;
  for (int c : s) out += (out.empty() ? "" : ", ") + names[static_cast<std::size_t>(c)];
  return out.empty() ? "(none)" : out;
}

struct Common {
  std::string config;
  std::string out;
};

// ---- fixture ----------------------------------------------------------------

struct FixtureArgs {
  std::string out;
  desk::FixtureOptions opts;
};

int cmd_fixture(const FixtureArgs& a) {
  const auto p = desk::write_fixture(a.out, a.opts);
  std::cout << p.config.string() << "\n";
  return 0;
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
  Common c;
  std::optional<int> epochs, batch_size, ssim_window, limit;
  std::optional<double> lr;
  std::optional<unsigned long long> seed;
  std::string mode, dataset_id;
  std::vector<double> alpha;
  bool no_eval = false;
};

int cmd_train(const TrainArgs& a, const std::vector<std::string>& args) {
  AppConfig cfg = load_config(a.c.config);
  TrainConfig tc = cfg.train;
  if (a.epochs) tc.epochs = *a.epochs;
  if (a.batch_size) tc.batch_size = *a.batch_size;
  if (a.lr) tc.learning_rate = *a.lr;
  if (a.seed) tc.seed = *a.seed;
  if (!a.mode.empty()) tc.normalization_mode = parse_normalization_mode(a.mode);
  if (!a.alpha.empty()) tc.loss_weights = {a.alpha.at(0), a.alpha.at(1), a.alpha.at(2)};
  if (a.ssim_window) tc.ssim.window = *a.ssim_window;
  if (!a.dataset_id.empty()) tc.dataset_id = a.dataset_id;
  tc.validate();

  const ModelBundle bundle = load_model(cfg);
  const Encoder enc(bundle);
  const DatasetManifest manifest = load_dataset(cfg);
  const Dims in = bundle.input_dims();
  const ImageSet train = split_set(manifest, cfg.train_split, in.width, in.height, a.limit.value_or(-1));
  if (tc.dataset_id.empty()) tc.dataset_id = train.dataset_id;
  std::optional<ImageSet> eval;
  if (!a.no_eval && cfg.eval_split) eval = split_set(manifest, *cfg.eval_split, in.width, in.height);

  const DecoderConfig dcfg =
      cfg.decoder_config ? *cfg.decoder_config : DecoderConfig::halving(bundle.latent_dims(), in.height, in.width, 32);
  OutputDir out(a.c.out.empty() ? "train_out" : a.c.out, "train");
  std::ofstream log(out.root() / "train_log.jsonl");
  TrainOptions opts;
  opts.eval_set = eval ? &*eval : nullptr;
  opts.checkpoint_dir = out.root() / "checkpoints";
  opts.on_step = [&](const json& line) { log << line.dump() << "\n"; };
  opts.on_epoch = [&](int epoch, const LossReport& r) {
    std::cerr << "epoch " << epoch << " composite " << r.composite << " mse " << r.mse << " ssim " << r.ssim_loss
              << " dsim " << r.dsim << "\n";
  };
  const Checkpoint ck = train_decoder(tc, enc, build_decoder(dcfg, tc.seed), train, opts);
  log.close();
  {
    std::ifstream f(out.root() / "train_log.jsonl", std::ios::binary);
    out.record("train_log.jsonl", std::string(std::istreambuf_iterator<char>(f), {}));
  }
  ck.save(out.root() / "decoder.ckpt");
  {
    std::ifstream f(out.root() / "decoder.ckpt", std::ios::binary);
    out.record("decoder.ckpt", std::string(std::istreambuf_iterator<char>(f), {}));
  }
  out.write_json("history.json", ck.provenance());
  out.finish(args);
  return 0;
}

// ---- explain ----------------------------------------------------------------

struct ExplainArgs {
  Common c;
  std::string sample, cls, layout = "quad";
  int scale = 4;
};

int cmd_explain(const ExplainArgs& a, const std::vector<std::string>& args) {
  const AppConfig cfg = load_config(a.c.config);
  const ModelBundle bundle = load_model(cfg);
  const Encoder enc(bundle);
  const Decoder dec = load_configured_decoder(cfg);
  const DatasetManifest manifest = load_dataset(cfg);
  const PanelLayout layout = parse_panel_layout(a.layout);
  const ExplanationRecord r =
      explain_sample(bundle, enc, dec, manifest, a.sample, resolve_class(bundle, a.cls), cfg.threshold);
  const PanelOptions popts{a.scale, bundle.class_names()};
  OutputDir out(a.c.out.empty() ? "explain_out" : a.c.out, "explain");
  json record = r.to_json(bundle.class_names());
  json assets = json::object();
  for (const auto& asset : encode_assets(r, popts)) {
    if (asset.name == "panel" && layout != PanelLayout::quad) continue;
    out.write(asset.name + ".png", asset.png);
    assets[asset.name] = asset.digest;
  }
  if (layout != PanelLayout::quad) {
    const std::string png = encode_png(render_panel(r, layout, popts));
    out.write("panel.png", png);
    assets["panel"] = sha256_hex(png);
  }
  record["assets"] = assets;
  record["layout"] = a.layout;
  out.write_json("record.json", record);
  out.finish(args);
  std::cout << record.dump() << "\n";
  return 0;
}

// ---- report -----------------------------------------------------------------

struct ReportArgs {
  Common c;
  std::string outcome = "incorrect", split;
  int limit = 24;
  int scale = 4;
};

int cmd_report(const ReportArgs& a, const std::vector<std::string>& args) {
  const AppConfig cfg = load_config(a.c.config);
  const ModelBundle bundle = load_model(cfg);
  const Encoder enc(bundle);
  const Decoder dec = load_configured_decoder(cfg);
  const DatasetManifest manifest = load_dataset(cfg);
  std::optional<std::string> split = cfg.eval_split;
  if (!a.split.empty()) split = a.split == "all" ? std::nullopt : std::optional(a.split);
  const OutcomePartition part = partition_by_outcome(bundle, manifest, cfg.threshold, split);
  std::vector<std::string> ids;
  if (a.outcome == "all") {
    for (const auto& e : part.evaluated) ids.push_back(e.sample_id);
  } else {
    ids = part.ids(parse_outcome(a.outcome));
  }
  if (a.limit >= 0 && static_cast<int>(ids.size()) > a.limit) ids.resize(static_cast<std::size_t>(a.limit));

  OutputDir out(a.c.out.empty() ? "report_out" : a.c.out, "report");
  const auto& names = bundle.class_names();
  std::string rows;
  json entries = json::array();
  for (const auto& id : ids) {
    const ExplanationRecord r = explain_sample(bundle, enc, dec, manifest, id, std::nullopt, cfg.threshold);
    std::map<std::string, std::string> files;
    for (const auto& [name, layout] : {std::pair{"input", PanelLayout::input}, std::pair{"overlay", PanelLayout::overlay},
                                       std::pair{"pv", PanelLayout::pv}}) {
      const std::string png = encode_png(render_panel(r, layout, {a.scale, names}));
      const std::string rel = "assets/" + sha256_hex(png) + ".png";
      out.write(rel, png);
      files[name] = rel;
    }
    const EvaluatedSample* e = part.find(id);
    const std::string cls = names[static_cast<std::size_t>(r.class_index)];
    rows += "<tr><td><b>" + html_escape(id) + "</b><br>outcome: " + to_string(e->outcome) +
            "<br>targets: " + html_escape(join_labels(e->targets, names)) +
            "<br>predicted: " + html_escape(join_labels(e->prediction, names)) + "<br>top class: " + html_escape(cls) +
            "</td><td><img src=\"" + files["input"] + "\"></td><td><img src=\"" + files["overlay"] +
            "\"></td><td><img src=\"" + files["pv"] + "\"></td></tr>\n";
    json entry = r.to_json(names);
    entry["files"] = files;
    entries.push_back(entry);
  }
  const std::string html =
      "<!doctype html>\n<html><head><meta charset=\"utf-8\"><title>PV report</title><style>"
      "body{font-family:sans-serif}td{padding:6px;vertical-align:top}img{image-rendering:pixelated}"
      "</style></head><body>\n<h1>Explanations: " + html_escape(a.outcome) + " (" + std::to_string(ids.size()) +
      " samples)</h1>\n<table>\n<tr><th>sample</th><th>input</th><th>Grad-CAM</th><th>PV</th></tr>\n" + rows +
      "</table>\n</body></html>\n";
  out.write("index.html", html);
  out.write_json("report.json", {{"outcome", a.outcome},
                                 {"threshold", cfg.threshold},
                                 {"counts",
                                  {{"correct", part.correct.size()},
                                   {"incorrect", part.incorrect.size()},
                                   {"mixed", part.mixed.size()}}},
                                 {"samples", entries}});
  out.finish(args);
  return 0;
}

// ---- quiz -------------------------------------------------------------------

struct QuizArgs {
  Common c;
  std::optional<int> n_correct, n_incorrect;
  std::optional<unsigned long long> seed;
  std::string split;
  int scale = 4;
};

int cmd_quiz(const QuizArgs& a, const std::vector<std::string>& args) {
  const AppConfig cfg = load_config(a.c.config);
  const ModelBundle bundle = load_model(cfg);
  const Encoder enc(bundle);
  const Decoder dec = load_configured_decoder(cfg);
  const DatasetManifest manifest = load_dataset(cfg);
  std::optional<std::string> split = cfg.eval_split;
  if (!a.split.empty()) split = a.split == "all" ? std::nullopt : std::optional(a.split);
  const OutcomePartition part = partition_by_outcome(bundle, manifest, cfg.threshold, split);
  const QuizBundle q = build_quiz_export(bundle, enc, dec, manifest, part, a.n_correct.value_or(cfg.quiz_correct),
                                         a.n_incorrect.value_or(cfg.quiz_incorrect), a.seed.value_or(cfg.quiz_seed),
                                         a.scale);
  OutputDir out(a.c.out.empty() ? "quiz_out" : a.c.out, "quiz");
  for (const auto& asset : q.assets) out.write("assets/" + asset.digest + ".png", asset.png);
  out.write_json("quiz.json", q.quiz.to_json());
  out.finish(args);
  std::cout << q.quiz.questions.size() << " questions\n";
  return 0;
}

// ---- eval -------------------------------------------------------------------

struct EvalArgs {
  Common c;
  std::string decoder_a, decoder_b;
  unsigned long long untrained_seed = 12345;
  std::string quiz, responses, gradcam, pv;
};

int cmd_eval_metrics(const EvalArgs& a, const std::vector<std::string>& args) {
  const AppConfig cfg = load_config(a.c.config);
  const ModelBundle bundle = load_model(cfg);
  const Encoder enc(bundle);
  const Decoder dec = load_configured_decoder(cfg);
  const DatasetManifest manifest = load_dataset(cfg);
  if (!cfg.eval_split) throw ConfigError("config names no evaluation split (dataset.split)");
  const Dims in = bundle.input_dims();
  const ImageSet eval = split_set(manifest, *cfg.eval_split, in.width, in.height);
  const ImageSet train = split_set(manifest, cfg.train_split, in.width, in.height);
  const LossReport r = evaluate_reconstruction(enc, dec, eval, cfg.train.loss_weights, cfg.train.ssim,
                                                cfg.train.normalization_mode);
  const double baseline = mse_loss(eval.images, mean_image_batch(train.images, eval.size()), NormalizationMode::mean);
  const OutcomePartition part = partition_by_outcome(bundle, manifest, cfg.threshold, cfg.eval_split);
  const json j{{"reconstruction", r.to_json(0)},
               {"mean_image_baseline_mse", baseline},
               {"eval_samples", eval.size()},
               {"classifier_digest", bundle.current_digest()},
               {"decoder_digest", dec.digest()},
               {"partition",
                {{"threshold", cfg.threshold},
                 {"correct", part.correct.size()},
                 {"incorrect", part.incorrect.size()},
                 {"mixed", part.mixed.size()}}}};
  OutputDir out(a.c.out.empty() ? "eval_out" : a.c.out, "eval metrics");
  out.write_json("metrics.json", j);
  out.finish(args);
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_eval_invariance(const EvalArgs& a, const std::vector<std::string>& args) {
  const AppConfig cfg = load_config(a.c.config);
  const ModelBundle bundle = load_model(cfg);
  const Encoder enc(bundle);
  const DatasetManifest manifest = load_dataset(cfg);
  if (!cfg.eval_split) throw ConfigError("config names no evaluation split (dataset.split)");
  const Decoder da = load_decoder(a.decoder_a).first;
  const Decoder db = load_decoder(a.decoder_b).first;
  const Decoder du = build_decoder(da.config(), a.untrained_seed);
  const Dims in = bundle.input_dims();
  const ImageSet eval = split_set(manifest, *cfg.eval_split, in.width, in.height);
  const InvarianceReport r = decoder_invariance(da, db, du, enc, eval, cfg.train.ssim);
  OutputDir out(a.c.out.empty() ? "eval_out" : a.c.out, "eval invariance");
  out.write_json("invariance.json", r.to_json());
  out.finish(args);
  std::cout << r.to_json()["summary"].dump() << "\n";
  return 0;
}

int cmd_eval_responses(const EvalArgs& a, const std::vector<std::string>& args) {
  const QuizExport quiz = QuizExport::load(a.quiz);
  json j = json::object();
  if (!a.responses.empty()) j["responses"] = score_responses(quiz.questions, read_responses_csv(fs::path(a.responses))).to_json();
  if (!a.gradcam.empty() || !a.pv.empty()) {
    if (a.gradcam.empty() || a.pv.empty()) throw ArgumentError("--gradcam and --pv must be given together");
    const ScoreSummary g = score_responses(quiz.questions, read_responses_csv(fs::path(a.gradcam)));
    const ScoreSummary p = score_responses(quiz.questions, read_responses_csv(fs::path(a.pv)));
    auto per_user = [](const ScoreSummary& s, Outcome o) {
      std::vector<double> v;
      for (const auto& u : s.per_user)
        if ((o == Outcome::correct ? u.correct_total : u.incorrect_total) > 0) v.push_back(u.accuracy(o));
      return v;
    };
    auto test = [&](Outcome o, Tail tail) {
      const auto gv = per_user(g, o), pv = per_user(p, o);
      if (gv.empty() || pv.empty()) throw ValidationError("both surveys need responses on the " + to_string(o) + " subset");
      const auto r = mann_whitney_u(gv, pv, tail);
      return json{{"u", r.u}, {"z", r.z}, {"p", r.p}, {"tail", tail == Tail::less ? "less" : "greater"},
                  {"n_gradcam", gv.size()}, {"n_pv", pv.size()}};
    };
    j["gradcam"] = g.to_json();
    j["pv"] = p.to_json();
    // H1 on incorrect: Acc(Grad-CAM) < Acc(PV); on correct: Acc(Grad-CAM) > Acc(PV).
    j["mann_whitney"] = {{"incorrect", test(Outcome::incorrect, Tail::less)},
                         {"correct", test(Outcome::correct, Tail::greater)}};
  }
  if (j.empty()) throw ArgumentError("give --responses, or --gradcam with --pv");
  OutputDir out(a.c.out.empty() ? "eval_out" : a.c.out, "eval responses");
  out.write_json("scores.json", j);
  out.finish(args);
  std::cout << j.dump() << "\n";
  return 0;
}

// ---- serve ------------------------------------------------------------------

struct ServeArgs {
  Common c;
  std::string host, ready_file;
  std::optional<int> port;
  std::optional<std::string> split;
};

int cmd_serve(const ServeArgs& a) {
  const AppConfig cfg = load_config(a.c.config);
  ServiceOptions so;
  so.asset_dir = cfg.asset_dir;
  so.threshold = cfg.threshold;
  so.split = a.split ? (*a.split == "all" ? std::nullopt : a.split) : cfg.eval_split;
  ExplanationService service(so);
  HttpServer server(service);
  const std::string host = a.host.empty() ? cfg.host : a.host;
  const int port = server.bind(host, a.port.value_or(cfg.port));
  // Listen first so /api/classes can answer 503 while the model loads.
  server.start();
  std::cerr << "listening on http://" << host << ":" << port << "\n";
  service.load(load_model(cfg), load_configured_decoder(cfg), load_dataset(cfg));
  if (!a.ready_file.empty()) std::ofstream(a.ready_file) << port << "\n";
  std::signal(SIGINT, [](int) { g_interrupted = true; });
  std::signal(SIGTERM, [](int) { g_interrupted = true; });
  while (!g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  server.stop();
  service.shutdown();
  return 0;
}

void print_error(bool as_json, std::string_view kind, const std::string& message, const std::string& stage,
                 int code) {
  if (as_json) {
    json e{{"kind", kind}, {"message", message}};
    if (!stage.empty()) e["stage"] = stage;
    std::cerr << json{{"error", e}, {"exit_code", code}}.dump() << "\n";
  } else {
    std::cerr << "pv: " << kind << " error" << (stage.empty() ? "" : " in " + stage) << ": " << message << "\n";
  }
}

}  // namespace

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  argv.push_back(nullptr);
  return run(static_cast<int>(args.size()), argv.data());
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args(argv, argv + argc);
  const bool json_errors = std::ranges::find(args, "--json-errors") != args.end();

  CLI::App app{"Perception Visualization toolkit", "pv"};
  app.require_subcommand(1);
  app.fallthrough();
  bool json_flag = false;
  app.add_flag("--json-errors", json_flag, "Print errors as JSON on stderr");

  auto add_common = [](CLI::App* sub, Common& c, bool config_required = true) {
    auto* opt = sub->add_option("--config", c.config, "Shared JSON config file");
    if (config_required) opt->required();
    sub->add_option("--out", c.out, "Output directory (gets a manifest.json)");
  };

  FixtureArgs fx;
  auto* fixture = app.add_subcommand("fixture", "Generate the desk-scale dataset, classifier, decoder and config");
  fixture->add_option("--out", fx.out, "Fixture directory")->required();
  fixture->add_option("--train", fx.opts.dataset.train, "Training images");
  fixture->add_option("--eval", fx.opts.dataset.eval, "Held-out images");
  fixture->add_option("--data-seed", fx.opts.dataset.seed, "Dataset seed");
  fixture->add_option("--classifier-epochs", fx.opts.classifier.epochs, "Classifier epochs");
  fixture->add_option("--decoder-epochs", fx.opts.decoder_epochs, "Preview decoder epochs");
  fixture->add_option("--decoder-samples", fx.opts.decoder_samples, "Preview decoder training images");
  fixture->add_flag("--verbose", fx.opts.verbose, "Log progress");

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Train an inversion decoder against the frozen encoder");
  add_common(train, tr.c);
  train->add_option("--epochs", tr.epochs)->check(CLI::PositiveNumber);
  train->add_option("--batch-size", tr.batch_size)->check(CLI::PositiveNumber);
  train->add_option("--lr", tr.lr)->check(CLI::PositiveNumber);
  train->add_option("--seed", tr.seed);
  train->add_option("--mode", tr.mode)->check(CLI::IsMember({"paper_sum", "mean", "relative"}));
  train->add_option("--alpha", tr.alpha, "Loss weights mse,ssim,dsim")->delimiter(',')->expected(3);
  train->add_option("--ssim-window", tr.ssim_window)->check(CLI::PositiveNumber);
  train->add_option("--dataset-id", tr.dataset_id);
  train->add_option("--limit", tr.limit, "Use only the first N training images")->check(CLI::PositiveNumber);
  train->add_flag("--no-eval", tr.no_eval, "Skip held-out evaluation and keep the last epoch");

  ExplainArgs ex;
  auto* explain_cmd = app.add_subcommand("explain", "Explain one sample");
  add_common(explain_cmd, ex.c);
  explain_cmd->add_option("--sample", ex.sample)->required();
  explain_cmd->add_option("--class", ex.cls, "Class name or index (default: top predicted class)");
  explain_cmd->add_option("--layout", ex.layout)
      ->check(CLI::IsMember({"triptych", "quad", "pv", "saliency", "reconstruction", "input", "overlay"}));
  explain_cmd->add_option("--scale", ex.scale)->check(CLI::Range(1, 32));

  ReportArgs rp;
  auto* report = app.add_subcommand("report", "HTML gallery of input | Grad-CAM | PV over a partition");
  add_common(report, rp.c);
  report->add_option("--outcome", rp.outcome)->check(CLI::IsMember({"correct", "incorrect", "mixed", "all"}));
  report->add_option("--split", rp.split, "Split to evaluate ('all' for every sample)");
  report->add_option("--limit", rp.limit);
  report->add_option("--scale", rp.scale)->check(CLI::Range(1, 32));

  QuizArgs qz;
  auto* quiz = app.add_subcommand("quiz", "Export the simulatability quiz with Grad-CAM and PV panels");
  add_common(quiz, qz.c);
  quiz->add_option("--n-correct", qz.n_correct)->check(CLI::NonNegativeNumber);
  quiz->add_option("--n-incorrect", qz.n_incorrect)->check(CLI::NonNegativeNumber);
  quiz->add_option("--seed", qz.seed);
  quiz->add_option("--split", qz.split);
  quiz->add_option("--scale", qz.scale)->check(CLI::Range(1, 32));

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Reconstruction metrics, decoder invariance, response scoring");
  eval->require_subcommand(1);
  auto* metrics = eval->add_subcommand("metrics", "Held-out reconstruction metrics");
  add_common(metrics, ev.c);
  auto* invariance = eval->add_subcommand("invariance", "Compare two independently trained decoders");
  add_common(invariance, ev.c);
  invariance->add_option("--decoder-a", ev.decoder_a)->required()->check(CLI::ExistingFile);
  invariance->add_option("--decoder-b", ev.decoder_b)->required()->check(CLI::ExistingFile);
  invariance->add_option("--untrained-seed", ev.untrained_seed);
  auto* responses = eval->add_subcommand("responses", "Score quiz responses");
  add_common(responses, ev.c, false);
  responses->add_option("--quiz", ev.quiz)->required();
  responses->add_option("--responses", ev.responses, "CSV user_id,question_id,chosen_option");
  responses->add_option("--gradcam", ev.gradcam, "Responses to the Grad-CAM survey");
  responses->add_option("--pv", ev.pv, "Responses to the PV survey");

  ServeArgs sv;
  auto* serve = app.add_subcommand("serve", "Run the workbench HTTP API");
  add_common(serve, sv.c);
  serve->add_option("--host", sv.host);
  serve->add_option("--port", sv.port)->check(CLI::Range(0, 65535));
  serve->add_option("--split", sv.split, "Split listed by /api/samples ('all' for every sample)");
  serve->add_option("--ready-file", sv.ready_file, "Write the bound port here once the model is loaded");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    if (json_errors) {
      print_error(true, "argument", e.what(), "", 1);
    } else {
      app.exit(e);
    }
    return 1;
  }

  try {
    if (*fixture) return cmd_fixture(fx);
    if (*train) return cmd_train(tr, args);
    if (*explain_cmd) return cmd_explain(ex, args);
    if (*report) return cmd_report(rp, args);
    if (*quiz) return cmd_quiz(qz, args);
    if (*metrics) return cmd_eval_metrics(ev, args);
    if (*invariance) return cmd_eval_invariance(ev, args);
    if (*responses) return cmd_eval_responses(ev, args);
    if (*serve) return cmd_serve(sv);
  } catch (const Error& e) {
    const int code = e.is_validation() ? 1 : 2;
    print_error(json_errors, to_string(e.kind()), e.what(), e.stage(), code);
    return code;
  } catch (const std::exception& e) {
    print_error(json_errors, "runtime", e.what(), "", 2);
    return 2;
  }
  return 2;
}

}  // namespace pv::cli
