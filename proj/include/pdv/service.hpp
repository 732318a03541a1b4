#pragma once

// JSON request/response service. Galleries are loaded once; sessions cache a
// prepared query so parameter retrials never touch the data source again.

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <span>
#include <string>

#include "pdv/io.hpp"
#include "pdv/retrieval.hpp"

namespace pdv::service {

/// Every disk read the service performs goes through this interface.
class DataSource {
 public:
  virtual ~DataSource() = default;
  virtual EmbeddingRecords read_embeddings(const std::filesystem::path& path) = 0;
  virtual std::string read_text(const std::filesystem::path& path) = 0;
};

class FileDataSource final : public DataSource {
 public:
  EmbeddingRecords read_embeddings(const std::filesystem::path& path) override;
  std::string read_text(const std::filesystem::path& path) override;
};

struct ServiceConfig {
  std::size_t max_sessions = 1024;
  std::size_t default_k = 50;
  unsigned eval_threads = 2;
};

/// Reads PDV_MAX_SESSIONS over the defaults.
ServiceConfig config_from_env(ServiceConfig base = {});

/// Interactive ranges: alpha_t in [-0.5, 3], alpha_i in [-0.5, 2], beta in [0, 1].
struct ClampedParams {
  PDVParams params;
  bool clamped = false;
};
ClampedParams clamp_params(const PDVParams& requested);

struct ApiResponse {
  int status = 200;
  Json body;
};

class Service {
 public:
  explicit Service(ServiceConfig config = {}, std::shared_ptr<DataSource> source = nullptr);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Endpoint handlers. Each throws pdv::Error for client-visible failures.
  Json create_gallery(const Json& body);
  Json create_gallery_from_bytes(std::span<const std::byte> bytes);
  Json create_session(const Json& body);
  Json rerank(const std::string& session_id, const Json& body);
  Json apply_filter(const std::string& session_id, const Json& body);
  Json tune(const std::string& session_id, const Json& body);
  Json simulate(const Json& body);
  Json evaluate(const Json& body);
  Json job_status(const std::string& job_id);
  Json health() const;

  /// Transport-independent routing; maps pdv::Error to status codes.
  ApiResponse handle(const std::string& method, const std::string& path, const std::string& body,
                     const std::string& content_type = "application/json");

  std::size_t session_count() const;
  std::size_t gallery_count() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// HTTP binding over cpp-httplib.
class HttpServer {
 public:
  explicit HttpServer(Service& service);
  ~HttpServer();

  /// Binds; port 0 picks a free port. Returns the bound port or -1.
  int bind(const std::string& host, int port);
  /// Blocks serving requests until stop().
  bool listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace pdv::service
