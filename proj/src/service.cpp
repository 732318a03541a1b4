#include "pdv/service.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <future>
#include <list>
#include <map>
#include <regex>
#include <unordered_map>

#include "httplib.h"
#include "pdv/error.hpp"
#include "pdv/geosim.hpp"
#include "pdv/metrics.hpp"
#include "pdv/tuner.hpp"

namespace pdv::service {

namespace {

constexpr double kAlphaTMin = -0.5;
constexpr double kAlphaTMax = 3.0;
constexpr double kAlphaIMin = -0.5;
constexpr double kAlphaIMax = 2.0;

Json parse_body(const std::string& body) {
  if (body.empty()) return Json::object();
  try {
    return Json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::schema_violation, std::string("request body is not valid JSON: ") + e.what());
  }
}

std::string string_field(const Json& body, const char* key) {
  if (!body.is_object() || !body.contains(key) || !body.at(key).is_string()) {
    throw Error(ErrorCode::schema_violation, std::string("request needs string field '") + key + "'");
  }
  return body.at(key).get<std::string>();
}

std::size_t k_field(const Json& body, std::size_t fallback) {
  if (!body.contains("k")) return fallback;
  const Json& v = body.at("k");
  if (!v.is_number_integer() || v.get<std::int64_t>() < 1) {
    throw Error(ErrorCode::invalid_parameter, "k must be a positive integer");
  }
  return v.get<std::size_t>();
}

int status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::unknown_session:
    case ErrorCode::unknown_gallery:
    case ErrorCode::unknown_job:
      return 404;
    case ErrorCode::degenerate_query:
      return 422;
    default:
      return 400;
  }
}

Json error_body(std::string_view code, const std::string& message) {
  return Json{{"error", Json{{"code", code}, {"message", message}}}};
}

}  // namespace

EmbeddingRecords FileDataSource::read_embeddings(const std::filesystem::path& path) {
  return load_embedding_file(path);
}

std::string FileDataSource::read_text(const std::filesystem::path& path) {
  return read_file_text(path);
}

ServiceConfig config_from_env(ServiceConfig base) {
  if (const char* v = std::getenv("PDV_MAX_SESSIONS")) {
    const long n = std::strtol(v, nullptr, 10);
    if (n > 0) base.max_sessions = static_cast<std::size_t>(n);
  }
  return base;
}

ClampedParams clamp_params(const PDVParams& requested) {
  validate_params({requested.alpha_t, requested.alpha_i, 0.0});
  ClampedParams out;
  out.params.alpha_t = std::clamp(requested.alpha_t, kAlphaTMin, kAlphaTMax);
  out.params.alpha_i = std::clamp(requested.alpha_i, kAlphaIMin, kAlphaIMax);
  out.params.beta = std::isnan(requested.beta) ? 1.0 : std::clamp(requested.beta, 0.0, 1.0);
  out.clamped = !(out.params == requested);
  return out;
}

struct Session {
  std::string id;
  std::string gallery_id;
  RerankSession state;
  PDVParams last_params = kBaselineParams;
  std::size_t last_k = 0;
  Embedding last_query;
  std::mutex mutex;

  Session(std::string sid, std::string gid, std::shared_ptr<const Gallery> gallery,
          const QueryBundle& bundle)
      : id(std::move(sid)), gallery_id(std::move(gid)), state(std::move(gallery), bundle) {}
};

struct Job {
  std::string id;
  std::atomic<std::size_t> done{0};
  std::atomic<std::size_t> total{0};
  std::shared_future<Json> result;
};

struct Service::Impl {
  ServiceConfig config;
  std::shared_ptr<DataSource> source;

  mutable std::shared_mutex galleries_mutex;
  std::map<std::string, std::shared_ptr<const Gallery>> galleries;
  std::uint64_t next_gallery = 1;

  // LRU: front is most recently used.
  mutable std::mutex sessions_mutex;
  std::list<std::shared_ptr<Session>> lru;
  std::unordered_map<std::string, std::list<std::shared_ptr<Session>>::iterator> sessions;
  std::uint64_t next_session = 1;

  std::mutex jobs_mutex;
  std::map<std::string, std::shared_ptr<Job>> jobs;
  std::uint64_t next_job = 1;

  std::string add_gallery(Gallery g) {
    std::unique_lock lock(galleries_mutex);
    std::string id = "g" + std::to_string(next_gallery++);
    galleries.emplace(id, std::make_shared<const Gallery>(std::move(g)));
    return id;
  }

  std::shared_ptr<const Gallery> gallery(const std::string& id) const {
    std::shared_lock lock(galleries_mutex);
    const auto it = galleries.find(id);
    if (it == galleries.end()) throw Error(ErrorCode::unknown_gallery, "unknown gallery '" + id + "'");
    return it->second;
  }

  std::shared_ptr<Session> session(const std::string& id) {
    std::lock_guard lock(sessions_mutex);
    const auto it = sessions.find(id);
    if (it == sessions.end()) throw Error(ErrorCode::unknown_session, "unknown session '" + id + "'");
    lru.splice(lru.begin(), lru, it->second);
    return *it->second;
  }

  void add_session(std::shared_ptr<Session> s) {
    std::lock_guard lock(sessions_mutex);
    lru.push_front(s);
    sessions[s->id] = lru.begin();
    while (lru.size() > std::max<std::size_t>(1, config.max_sessions)) {
      sessions.erase(lru.back()->id);
      lru.pop_back();
    }
  }

  std::string allocate_session_id() {
    std::lock_guard lock(sessions_mutex);
    return "s" + std::to_string(next_session++);
  }

  Json ranking_response(const Session& s, const RerankOutcome& outcome, bool clamped) const {
    Json body = to_json(outcome.ranking);
    body["session_id"] = s.id;
    body["clamped"] = clamped;
    body["filter_fallback"] = outcome.filter_fallback;
    body["candidates"] = outcome.candidates;
    return body;
  }

  Json run_evaluate(const Json& body, Job* job) {
    const auto g = gallery(string_field(body, "gallery_id"));
    QueryManifest manifest;
    std::filesystem::path base;
    if (body.contains("manifest")) {
      manifest = manifest_from_json(body.at("manifest"));
      if (body.contains("base_dir")) base = string_field(body, "base_dir");
    } else {
      const std::filesystem::path path = string_field(body, "manifest_path");
      Json doc;
      try {
        doc = Json::parse(source->read_text(path));
      } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::schema_violation, std::string("manifest: ") + e.what());
      }
      manifest = manifest_from_json(doc);
      base = path.parent_path();
    }
    EmbeddingStore store;
    for (const auto& file : manifest.embedding_files) store.add(source->read_embeddings(base / file));
    const ResolvedManifest resolved = resolve_manifest(manifest, store);

    const PDVParams params = params_from_json(body.value("params", Json()));
    std::vector<std::size_t> ks{1, 5, 10, 50};
    if (body.contains("ks")) ks = body.at("ks").get<std::vector<std::size_t>>();

    EvalOptions options;
    options.threads = config.eval_threads;
    if (job) {
      job->total = resolved.bundles.size();
      options.progress = [job](std::size_t done, std::size_t) { job->done = done; };
    }
    return to_json(evaluate_manifest(*g, resolved.bundles, params, ks, options));
  }
};

Service::Service(ServiceConfig config, std::shared_ptr<DataSource> source)
    : impl_(std::make_unique<Impl>()) {
  impl_->config = config;
  impl_->source = source ? std::move(source) : std::make_shared<FileDataSource>();
}

Service::~Service() {
  // Outstanding evaluation jobs finish before their state is torn down.
  std::lock_guard lock(impl_->jobs_mutex);
  for (auto& [id, job] : impl_->jobs) {
    if (job->result.valid()) job->result.wait();
  }
}

Json Service::create_gallery(const Json& body) {
  const std::string path = string_field(body, "path");
  Gallery g = Gallery::build(impl_->source->read_embeddings(path));
  const Json info{{"size", g.size()}, {"dim", g.dim()}};
  Json out{{"gallery_id", impl_->add_gallery(std::move(g))}};
  out.update(info);
  return out;
}

Json Service::create_gallery_from_bytes(std::span<const std::byte> bytes) {
  Gallery g = Gallery::build(parse_embeddings(bytes));
  const Json info{{"size", g.size()}, {"dim", g.dim()}};
  Json out{{"gallery_id", impl_->add_gallery(std::move(g))}};
  out.update(info);
  return out;
}

Json Service::create_session(const Json& body) {
  const std::string gallery_id = string_field(body, "gallery_id");
  auto g = impl_->gallery(gallery_id);
  if (!body.contains("bundle")) throw Error(ErrorCode::schema_violation, "request needs 'bundle'");
  const QueryBundle bundle = bundle_from_json(body.at("bundle"));
  const std::size_t k = k_field(body, impl_->config.default_k);

  auto s = std::make_shared<Session>(impl_->allocate_session_id(), gallery_id, std::move(g), bundle);
  const RerankOutcome outcome = s->state.rerank(kBaselineParams, k, false);
  s->last_query = outcome.query;
  s->last_k = k;
  Json out = impl_->ranking_response(*s, outcome, false);
  out["gallery_id"] = gallery_id;
  impl_->add_session(std::move(s));
  return out;
}

Json Service::rerank(const std::string& session_id, const Json& body) {
  auto s = impl_->session(session_id);
  std::lock_guard lock(s->mutex);
  const ClampedParams p = clamp_params(params_from_json(body, s->last_params));
  const std::size_t k = k_field(body, s->last_k);
  const bool use_filter = body.value("use_filter", false);
  const RerankOutcome outcome = s->state.rerank(p.params, k, use_filter);
  s->last_params = p.params;
  s->last_k = k;
  s->last_query = outcome.query;
  return impl_->ranking_response(*s, outcome, p.clamped);
}

Json Service::apply_filter(const std::string& session_id, const Json& body) {
  auto s = impl_->session(session_id);
  std::lock_guard lock(s->mutex);
  const std::size_t total = s->state.gallery().size();
  if (body.value("clear", false)) {
    s->state.clear_filter();
    return Json{{"session_id", s->id}, {"kept_count", total}, {"total", total}, {"active", false}};
  }
  FilterSpec spec;
  spec.mode = filter_mode_from_name(body.value("mode", std::string("drop_if_distance_above")));
  if (!body.contains("threshold") || !body.at("threshold").is_number()) {
    throw Error(ErrorCode::schema_violation, "filter request needs numeric 'threshold'");
  }
  spec.threshold = body.at("threshold").get<double>();
  spec.source_ranking = s->id;
  CandidateSet kept = filter_candidates(s->state.gallery(), s->last_query, spec);
  const std::size_t kept_count = kept.size();
  s->state.set_filter(std::move(kept));
  return Json{{"session_id", s->id},
              {"kept_count", kept_count},
              {"total", total},
              {"active", true},
              {"mode", filter_mode_name(spec.mode)},
              {"threshold", spec.threshold}};
}

Json Service::tune(const std::string& session_id, const Json& body) {
  auto s = impl_->session(session_id);
  std::lock_guard lock(s->mutex);
  double alpha_t = s->last_params.alpha_t;
  if (body.contains("alpha_t")) {
    if (!body.at("alpha_t").is_number()) throw Error(ErrorCode::schema_violation, "alpha_t must be a number");
    alpha_t = body.at("alpha_t").get<double>();
  }
  alpha_t = clamp_params({alpha_t, 1.0, 1.0}).params.alpha_t;
  Json out = to_json(tune_alpha_i(s->state.prepared(), alpha_t));
  out["alpha_t"] = alpha_t;
  out["session_id"] = s->id;
  return out;
}

Json Service::simulate(const Json& body) {
  const SimConfig config = sim_config_from_json(body);
  const auto cells = theta_heatmap(config);
  Json arr = Json::array();
  for (const auto& c : cells) arr.push_back(to_json(c));
  return Json{{"config", to_json(config)}, {"cells", std::move(arr)}};
}

Json Service::evaluate(const Json& body) {
  if (!body.value("async", false)) return impl_->run_evaluate(body, nullptr);
  auto job = std::make_shared<Job>();
  {
    std::lock_guard lock(impl_->jobs_mutex);
    job->id = "j" + std::to_string(impl_->next_job++);
    impl_->jobs.emplace(job->id, job);
  }
  Impl* impl = impl_.get();
  job->result = std::async(std::launch::async, [impl, body, raw = job.get()] {
                  return impl->run_evaluate(body, raw);
                }).share();
  return Json{{"job_id", job->id}, {"state", "running"}};
}

Json Service::job_status(const std::string& job_id) {
  std::shared_ptr<Job> job;
  {
    std::lock_guard lock(impl_->jobs_mutex);
    const auto it = impl_->jobs.find(job_id);
    if (it == impl_->jobs.end()) throw Error(ErrorCode::unknown_job, "unknown job '" + job_id + "'");
    job = it->second;
  }
  Json out{{"job_id", job_id}, {"done", job->done.load()}, {"total", job->total.load()}};
  if (job->result.wait_for(std::chrono::seconds(0)) != std::future_status::ready) {
    out["state"] = "running";
    return out;
  }
  try {
    out["report"] = job->result.get();
    out["state"] = "finished";
  } catch (const Error& e) {
    out["state"] = "failed";
    out["error"] = error_body(e.code_name(), e.what()).at("error");
  } catch (const std::exception& e) {
    out["state"] = "failed";
    out["error"] = error_body("internal", e.what()).at("error");
  }
  return out;
}

Json Service::health() const {
  return Json{{"status", "ok"}, {"galleries", gallery_count()}, {"sessions", session_count()}};
}

std::size_t Service::session_count() const {
  std::lock_guard lock(impl_->sessions_mutex);
  return impl_->sessions.size();
}

std::size_t Service::gallery_count() const {
  std::shared_lock lock(impl_->galleries_mutex);
  return impl_->galleries.size();
}

ApiResponse Service::handle(const std::string& method, const std::string& path,
                            const std::string& body, const std::string& content_type) {
  static const std::regex session_route(R"(^/sessions/([^/]+)/(rerank|filter|tune)$)");
  static const std::regex job_route(R"(^/jobs/([^/]+)$)");
  try {
    std::smatch m;
    if (method == "GET" && path == "/healthz") return {200, health()};
    if (method == "GET" && std::regex_match(path, m, job_route)) return {200, job_status(m[1])};
    if (method != "POST") {
      return {405, error_body("method_not_allowed", method + " " + path)};
    }
    if (path == "/galleries") {
      if (content_type.rfind("application/octet-stream", 0) == 0) {
        const auto* data = reinterpret_cast<const std::byte*>(body.data());
        return {201, create_gallery_from_bytes(std::span<const std::byte>(data, body.size()))};
      }
      return {201, create_gallery(parse_body(body))};
    }
    if (path == "/sessions") return {201, create_session(parse_body(body))};
    if (path == "/simulate") return {200, simulate(parse_body(body))};
    if (path == "/evaluate") {
      const Json req = parse_body(body);
      Json out = evaluate(req);
      return {req.value("async", false) ? 202 : 200, std::move(out)};
    }
    if (std::regex_match(path, m, session_route)) {
      const std::string id = m[1];
      const std::string action = m[2];
      const Json req = parse_body(body);
      if (action == "rerank") return {200, rerank(id, req)};
      if (action == "filter") return {200, apply_filter(id, req)};
      return {200, tune(id, req)};
    }
    return {404, error_body("not_found", path)};
  } catch (const Error& e) {
    return {status_for(e.code()), error_body(e.code_name(), e.what())};
  } catch (const nlohmann::json::exception& e) {
    return {400, error_body("schema_violation", e.what())};
  } catch (const std::exception& e) {
    return {500, error_body("internal", e.what())};
  }
}

struct HttpServer::Impl {
  Service& service;
  httplib::Server server;

  explicit Impl(Service& s) : service(s) {
    auto forward = [this](const httplib::Request& req, httplib::Response& res) {
      const ApiResponse r =
          service.handle(req.method, req.path, req.body, req.get_header_value("Content-Type"));
      res.status = r.status;
      res.set_content(r.body.dump(), "application/json");
    };
    server.Get(".*", forward);
    server.Post(".*", forward);
  }
};

HttpServer::HttpServer(Service& service) : impl_(std::make_unique<Impl>(service)) {}
HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) return impl_->server.bind_to_any_port(host);
  return impl_->server.bind_to_port(host, port) ? port : -1;
}

bool HttpServer::listen() { return impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_) impl_->server.stop();
}

}  // namespace pdv::service
