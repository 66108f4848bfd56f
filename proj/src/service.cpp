#include "pv/service.hpp"

#include <fstream>

#include <httplib.h>

#include "pv/digest.hpp"
#include "pv/errors.hpp"

namespace pv {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(JobStatus s) {
  switch (s) {
    case JobStatus::queued: return "queued";
    case JobStatus::running: return "running";
    case JobStatus::done: return "done";
    case JobStatus::failed: return "failed";
  }
  return "failed";
}

json ExplanationJob::to_json() const {
  json j{{"job_id", id}, {"sample_id", sample_id}, {"class_index", class_index}, {"status", to_string(status)}};
  if (status == JobStatus::failed) {
    j["error"] = error;
    j["stage"] = stage;
  }
  if (status == JobStatus::done) j["result"] = result;
  return j;
}

struct ExplanationService::Model {
  ModelBundle bundle;
  Encoder encoder;
  Decoder decoder;
  DatasetManifest manifest;
  OutcomePartition partition;
  std::map<std::string, std::size_t> index;  // sample id -> position in partition.evaluated
};

ExplanationService::ExplanationService(ServiceOptions opts) : opts_(std::move(opts)) {
  worker_ = std::thread([this] { worker_loop(); });
}

ExplanationService::~ExplanationService() { shutdown(); }

void ExplanationService::shutdown() {
  {
    std::lock_guard lock(mutex_);
    stop_ = true;
  }
  cv_.notify_all();
  if (worker_.joinable()) worker_.join();
}

void ExplanationService::load(ModelBundle bundle, Decoder decoder, DatasetManifest manifest) {
  if (manifest.class_names != bundle.class_names())
    throw ConfigError("dataset classes do not match the model's class list");
  if (decoder.config().latent != bundle.latent_dims())
    throw ConfigError("decoder latent shape does not match the model's latent layer");
  OutcomePartition partition = partition_by_outcome(bundle, manifest, opts_.threshold);
  Encoder enc(bundle);
  auto model = std::make_shared<Model>(Model{std::move(bundle), std::move(enc), std::move(decoder), std::move(manifest),
                                             std::move(partition), {}});
  for (std::size_t i = 0; i < model->partition.evaluated.size(); ++i)
    model->index[model->partition.evaluated[i].sample_id] = i;
  std::lock_guard lock(mutex_);
  model_ = std::move(model);
}

bool ExplanationService::loaded() const {
  std::lock_guard lock(mutex_);
  return model_ != nullptr;
}

const OutcomePartition* ExplanationService::partition() const {
  std::lock_guard lock(mutex_);
  return model_ ? &model_->partition : nullptr;
}

namespace {
ExplanationService::Reply error_reply(int status, const std::string& message) {
  return {status, {{"error", message}}};
}

std::optional<int> parse_int(const std::string& s) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used != s.size()) return std::nullopt;
    return v;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

std::optional<int> class_by_name_or_index(const std::vector<std::string>& names, const std::string& s) {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == s) return static_cast<int>(i);
  if (auto v = parse_int(s); v && *v >= 0 && *v < static_cast<int>(names.size())) return v;
  return std::nullopt;
}
}  // namespace

ExplanationService::Reply ExplanationService::classes() const {
  std::shared_ptr<const Model> m;
  {
    std::lock_guard lock(mutex_);
    m = model_;
  }
  if (!m) return error_reply(503, "model not loaded");
  return {200, {{"classes", m->bundle.class_names()}}};
}

ExplanationService::Reply ExplanationService::samples(const std::map<std::string, std::string>& query) const {
  std::shared_ptr<const Model> m;
  {
    std::lock_guard lock(mutex_);
    m = model_;
  }
  if (!m) return error_reply(503, "model not loaded");
  std::optional<Outcome> outcome;
  std::optional<int> cls;
  int page = 1, page_size = opts_.default_page_size;
  for (const auto& [key, value] : query) {
    if (key == "outcome") {
      if (value.empty()) continue;
      if (value != "correct" && value != "incorrect" && value != "mixed")
        return error_reply(400, "unknown outcome '" + value + "'");
      outcome = parse_outcome(value);
    } else if (key == "class") {
      if (value.empty()) continue;
      cls = class_by_name_or_index(m->bundle.class_names(), value);
      if (!cls) return error_reply(400, "unknown class '" + value + "'");
    } else if (key == "page") {
      const auto v = parse_int(value);
      if (!v || *v < 1) return error_reply(400, "page must be a positive integer");
      page = *v;
    } else if (key == "page_size") {
      const auto v = parse_int(value);
      if (!v || *v < 1 || *v > opts_.max_page_size)
        return error_reply(400, "page_size must lie in [1, " + std::to_string(opts_.max_page_size) + "]");
      page_size = *v;
    } else {
      return error_reply(400, "unknown filter '" + key + "'");
    }
  }
  const auto& names = m->bundle.class_names();
  auto label_list = [&](const std::set<int>& s) {
    json a = json::array();
    for (int c : s) a.push_back(names[static_cast<std::size_t>(c)]);
    return a;
  };
  std::vector<const EvaluatedSample*> hits;
  for (const auto& e : m->partition.evaluated) {
    if (opts_.split) {
      const Sample* s = m->manifest.find(e.sample_id);
      if (!s || s->split != *opts_.split) continue;
    }
    if (outcome && e.outcome != *outcome) continue;
    if (cls && !e.targets.contains(*cls) && !e.prediction.contains(*cls)) continue;
    hits.push_back(&e);
  }
  json items = json::array();
  const std::size_t first = static_cast<std::size_t>(page - 1) * static_cast<std::size_t>(page_size);
  for (std::size_t i = first; i < hits.size() && i < first + static_cast<std::size_t>(page_size); ++i) {
    const auto& e = *hits[i];
    items.push_back({{"sample_id", e.sample_id},
                     {"outcome", to_string(e.outcome)},
                     {"targets", label_list(e.targets)},
                     {"prediction", label_list(e.prediction)},
                     {"top_class", e.top_class},
                     {"posteriors", e.scores.posteriors}});
  }
  return {200, {{"total", hits.size()}, {"page", page}, {"page_size", page_size}, {"items", items}}};
}

std::string ExplanationService::job_id(const std::string& sample_id, int class_index) const {
  return sha256_hex(sample_id + "\x1f" + std::to_string(class_index) + "\x1f" + model_->bundle.weight_digest() + "\x1f" +
                    model_->decoder.digest())
      .substr(0, 24);
}

ExplanationService::Reply ExplanationService::submit(const json& body) {
  std::unique_lock lock(mutex_);
  if (!model_) return error_reply(503, "model not loaded");
  if (!body.is_object() || !body.contains("sample_id") || !body.at("sample_id").is_string())
    return error_reply(400, "request body must be an object with a string sample_id");
  const std::string sample_id = body.at("sample_id").get<std::string>();
  const auto it = model_->index.find(sample_id);
  if (it == model_->index.end()) return error_reply(404, "unknown sample '" + sample_id + "'");
  int cls = model_->partition.evaluated[it->second].top_class;
  if (body.contains("class_index") && !body.at("class_index").is_null()) {
    const json& c = body.at("class_index");
    std::optional<int> parsed;
    if (c.is_number_integer()) {
      const auto v = c.get<long long>();
      if (v >= 0 && v < model_->bundle.class_count()) parsed = static_cast<int>(v);
    } else if (c.is_string()) {
      const auto& names = model_->bundle.class_names();
      for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == c.get<std::string>()) parsed = static_cast<int>(i);
    }
    if (!parsed) return error_reply(422, "invalid class_index " + c.dump());
    cls = *parsed;
  }
  const std::string id = job_id(sample_id, cls);
  if (auto existing = jobs_.find(id); existing != jobs_.end()) return {200, existing->second.to_json()};
  ExplanationJob job;
  job.id = id;
  job.sample_id = sample_id;
  job.class_index = cls;
  jobs_[id] = job;
  queue_.push_back(id);
  lock.unlock();
  cv_.notify_all();
  return {202, job.to_json()};
}

ExplanationService::Reply ExplanationService::job(const std::string& id) const {
  std::lock_guard lock(mutex_);
  const auto it = jobs_.find(id);
  if (it == jobs_.end()) return error_reply(404, "unknown job '" + id + "'");
  return {it->second.status == JobStatus::failed ? 500 : 200, it->second.to_json()};
}

std::optional<std::string> ExplanationService::asset(const std::string& digest) const {
  std::lock_guard lock(mutex_);
  const auto it = assets_.find(digest);
  if (it == assets_.end()) return std::nullopt;
  return it->second;
}

void ExplanationService::wait_idle() {
  std::unique_lock lock(mutex_);
  idle_cv_.wait(lock, [&] { return (queue_.empty() && !busy_) || stop_; });
}

void ExplanationService::worker_loop() {
  std::unique_lock lock(mutex_);
  for (;;) {
    cv_.wait(lock, [&] { return stop_ || !queue_.empty(); });
    if (stop_) break;
    const std::string id = queue_.front();
    queue_.pop_front();
    busy_ = true;
    jobs_[id].status = JobStatus::running;
    lock.unlock();
    run_job(id);
    lock.lock();
    busy_ = false;
    if (queue_.empty()) idle_cv_.notify_all();
  }
  busy_ = false;
  idle_cv_.notify_all();
}

void ExplanationService::run_job(const std::string& id) {
  std::shared_ptr<const Model> m;
  std::string sample_id;
  int cls = 0;
  {
    std::lock_guard lock(mutex_);
    m = model_;
    sample_id = jobs_[id].sample_id;
    cls = jobs_[id].class_index;
  }
  std::string error, stage;
  json result;
  std::vector<EncodedAsset> encoded;
  try {
    const ExplanationRecord record =
        explain_sample(m->bundle, m->encoder, m->decoder, m->manifest, sample_id, cls, opts_.threshold);
    try {
      encoded = encode_assets(record, {opts_.panel_scale, m->bundle.class_names()});
    } catch (Error& e) {
      if (e.stage().empty()) e.set_stage("render");
      throw;
    }
    result = record.to_json(m->bundle.class_names());
    json urls = json::object();
    for (const auto& a : encoded) urls[a.name] = "/assets/" + a.digest + ".png";
    result["assets"] = urls;
    result["class_names"] = m->bundle.class_names();
    json scores = json::object();
    for (std::size_t i = 0; i < record.scores.posteriors.size(); ++i)
      scores[m->bundle.class_names()[i]] = record.scores.posteriors[i];
    result["scores"] = scores;
    if (!opts_.asset_dir.empty()) {
      fs::create_directories(opts_.asset_dir);
      for (const auto& a : encoded) {
        const fs::path p = opts_.asset_dir / (a.digest + ".png");
        if (!fs::exists(p)) std::ofstream(p, std::ios::binary) << a.png;
      }
    }
  } catch (const Error& e) {
    error = e.what();
    stage = e.stage().empty() ? std::string(to_string(e.kind())) : e.stage();
  } catch (const std::exception& e) {
    error = e.what();
    stage = "explain";
  }
  std::lock_guard lock(mutex_);
  ExplanationJob& job = jobs_[id];
  if (error.empty()) {
    for (auto& a : encoded) assets_.emplace(a.digest, std::move(a.png));
    job.result = std::move(result);
    job.status = JobStatus::done;
  } else {
    job.error = error;
    job.stage = stage;
    job.status = JobStatus::failed;
  }
}

struct HttpServer::Impl {
  ExplanationService& service;
  httplib::Server server;
  std::thread thread;

  explicit Impl(ExplanationService& s) : service(s) {}
};

namespace {
void send(httplib::Response& res, const ExplanationService::Reply& r) {
  res.status = r.status;
  res.set_content(r.body.dump(), "application/json");
}
}  // namespace

HttpServer::HttpServer(ExplanationService& service) : impl_(std::make_unique<Impl>(service)) {
  auto& svr = impl_->server;
  auto& svc = impl_->service;
  svr.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
  svr.Get("/api/classes", [&svc](const httplib::Request&, httplib::Response& res) { send(res, svc.classes()); });
  svr.Get("/api/samples", [&svc](const httplib::Request& req, httplib::Response& res) {
    std::map<std::string, std::string> q;
    for (const auto& [k, v] : req.params) q[k] = v;
    send(res, svc.samples(q));
  });
  svr.Post("/api/explanations", [&svc](const httplib::Request& req, httplib::Response& res) {
    const json body = json::parse(req.body, nullptr, false);
    if (body.is_discarded()) return send(res, {400, {{"error", "request body is not valid JSON"}}});
    send(res, svc.submit(body));
  });
  svr.Get(R"(/api/explanations/([0-9a-f]+))", [&svc](const httplib::Request& req, httplib::Response& res) {
    send(res, svc.job(req.matches[1]));
  });
  svr.Get(R"(/assets/([0-9a-f]{64})\.png)", [&svc](const httplib::Request& req, httplib::Response& res) {
    const auto png = svc.asset(req.matches[1]);
    if (!png) return send(res, {404, {{"error", "unknown asset"}}});
    res.set_header("Cache-Control", "public, max-age=31536000, immutable");
    res.set_content(*png, "image/png");
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw BackendError("cannot bind " + host + ":" + std::to_string(port));
  return bound;
}

void HttpServer::run() { impl_->server.listen_after_bind(); }

void HttpServer::start() {
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

void HttpServer::stop() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace pv
