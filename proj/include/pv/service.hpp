#pragma once

#include <condition_variable>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "pv/data_ingest.hpp"
#include "pv/decoder.hpp"
#include "pv/model_core.hpp"
#include "pv/pv_compose.hpp"

namespace pv {

enum class JobStatus { queued, running, done, failed };
std::string to_string(JobStatus s);

struct ExplanationJob {
  std::string id;
  std::string sample_id;
  int class_index = 0;
  JobStatus status = JobStatus::queued;
  std::string error;
  std::string stage;
  nlohmann::json result;  // set when done

  nlohmann::json to_json() const;
};

struct ServiceOptions {
  /// On-disk copy of the asset cache; empty keeps assets in memory only.
  std::filesystem::path asset_dir;
  double threshold = 0.5;
  /// Restrict the listed samples to one split.
  std::optional<std::string> split;
  int panel_scale = 4;
  int default_page_size = 50;
  int max_page_size = 500;
};

/// Transport-independent workbench backend. Every handler returns an HTTP
/// status and a JSON body. Explanations run on one worker thread in
/// submission order; reads never block on it.
class ExplanationService {
 public:
  struct Reply {
    int status = 200;
    nlohmann::json body;
  };

  explicit ExplanationService(ServiceOptions opts = {});
  ~ExplanationService();
  ExplanationService(const ExplanationService&) = delete;
  ExplanationService& operator=(const ExplanationService&) = delete;

  /// Installs the model, decoder and dataset and computes the outcome partition.
  void load(ModelBundle bundle, Decoder decoder, DatasetManifest manifest);
  bool loaded() const;

  Reply classes() const;
  Reply samples(const std::map<std::string, std::string>& query) const;
  Reply submit(const nlohmann::json& body);
  Reply job(const std::string& id) const;
  /// PNG bytes for a content digest.
  std::optional<std::string> asset(const std::string& digest) const;

  /// Blocks until the queue is empty and the worker is idle.
  void wait_idle();
  void shutdown();

  const OutcomePartition* partition() const;

 private:
  struct Model;
  void worker_loop();
  void run_job(const std::string& id);
  std::string job_id(const std::string& sample_id, int class_index) const;

  ServiceOptions opts_;
  std::shared_ptr<const Model> model_;
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::condition_variable idle_cv_;
  std::map<std::string, ExplanationJob> jobs_;
  std::deque<std::string> queue_;
  std::map<std::string, std::string> assets_;
  bool busy_ = false;
  bool stop_ = false;
  std::thread worker_;
};

/// cpp-httplib front end for an ExplanationService.
class HttpServer {
 public:
  explicit HttpServer(ExplanationService& service);
  ~HttpServer();

  /// Binds; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves on the calling thread until stop().
  void run();
  /// Serves on a background thread.
  void start();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace pv
