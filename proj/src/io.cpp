#include "pdv/io.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "pdv/error.hpp"

namespace pdv {

namespace {

constexpr std::size_t kHeaderSize = 4 + 4 + 8;

void put_u32(std::vector<std::byte>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFFu));
}

void put_u64(std::vector<std::byte>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFFu));
}

std::uint64_t get_le(std::span<const std::byte> bytes, std::size_t at, int width) {
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) {
    v |= static_cast<std::uint64_t>(std::to_integer<std::uint8_t>(bytes[at + i])) << (8 * i);
  }
  return v;
}

[[noreturn]] void schema(const std::string& message) {
  throw Error(ErrorCode::schema_violation, "manifest: " + message);
}

std::string shortest(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

const Json& require(const Json& doc, const char* key, const std::string& where) {
  if (!doc.is_object() || !doc.contains(key)) schema(where + ": missing field '" + key + "'");
  return doc.at(key);
}

std::string require_string(const Json& doc, const char* key, const std::string& where) {
  const Json& v = require(doc, key, where);
  if (!v.is_string()) schema(where + ": field '" + key + "' must be a string");
  return v.get<std::string>();
}

std::optional<std::string> optional_string(const Json& doc, const char* key,
                                           const std::string& where) {
  if (!doc.contains(key) || doc.at(key).is_null()) return std::nullopt;
  if (!doc.at(key).is_string()) schema(where + ": field '" + key + "' must be a string");
  return doc.at(key).get<std::string>();
}

std::vector<std::string> string_list(const Json& v, const std::string& where) {
  if (!v.is_array()) schema(where + " must be an array of strings");
  std::vector<std::string> out;
  for (const auto& item : v) {
    if (!item.is_string()) schema(where + " must be an array of strings");
    out.push_back(item.get<std::string>());
  }
  return out;
}

Embedding embedding_from_json(const Json& v, const std::string& where) {
  if (!v.is_array() || v.empty()) {
    throw Error(ErrorCode::schema_violation, where + " must be a non-empty array of numbers");
  }
  std::vector<float> values;
  values.reserve(v.size());
  for (const auto& x : v) {
    if (!x.is_number()) throw Error(ErrorCode::schema_violation, where + " must contain numbers");
    values.push_back(static_cast<float>(x.get<double>()));
  }
  return Embedding(std::move(values));
}

Json embedding_to_json(const Embedding& e) {
  Json arr = Json::array();
  for (const float v : e.values()) arr.push_back(static_cast<double>(v));
  return arr;
}

Json table_to_json(const MetricTable& table) {
  Json obj = Json::object();
  for (const auto& [name, value] : table.items()) obj[name] = value;
  return obj;
}

MetricTable table_from_json(const Json& obj) {
  if (!obj.is_object()) throw Error(ErrorCode::schema_violation, "report: per_metric must be an object");
  MetricTable table;
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!it.value().is_number()) {
      throw Error(ErrorCode::schema_violation, "report: metric '" + it.key() + "' is not a number");
    }
    table.set(it.key(), it.value().get<double>());
  }
  return table;
}

double number_or(const Json& doc, const char* key, double fallback) {
  if (!doc.contains(key)) return fallback;
  if (!doc.at(key).is_number()) {
    throw Error(ErrorCode::schema_violation, std::string("field '") + key + "' must be a number");
  }
  return doc.at(key).get<double>();
}

}  // namespace

std::vector<std::byte> serialize_embeddings(const EmbeddingRecords& records) {
  if (records.ids.size() != records.embeddings.size()) {
    throw Error(ErrorCode::schema_violation, "ids and embeddings differ in length");
  }
  const std::uint32_t dim =
      records.embeddings.empty() ? 1u : static_cast<std::uint32_t>(records.embeddings.front().dim());
  std::vector<std::byte> out;
  out.reserve(kHeaderSize + records.size() * (dim * 4 + 16));
  for (const char c : kEmbeddingMagic) out.push_back(static_cast<std::byte>(c));
  put_u32(out, dim);
  put_u64(out, records.size());
  for (const auto& id : records.ids) {
    put_u32(out, static_cast<std::uint32_t>(id.size()));
    for (const char c : id) out.push_back(static_cast<std::byte>(c));
  }
  for (const auto& e : records.embeddings) {
    if (e.dim() != dim) throw Error(ErrorCode::dimension_mismatch, "records have mixed dimensions");
    for (const float v : e.values()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

EmbeddingRecords parse_embeddings(std::span<const std::byte> bytes) {
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), kEmbeddingMagic, 4) != 0) {
    throw Error(ErrorCode::bad_magic, "embedding file does not start with PDV1");
  }
  if (bytes.size() < kHeaderSize) {
    throw Error(ErrorCode::truncated_file, "embedding file shorter than its header");
  }
  const auto dim = static_cast<std::size_t>(get_le(bytes, 4, 4));
  const std::uint64_t count = get_le(bytes, 8, 8);
  if (dim == 0) throw Error(ErrorCode::bad_header, "embedding file declares dim 0");

  EmbeddingRecords out;
  std::size_t at = kHeaderSize;
  std::unordered_set<std::string> seen;
  for (std::uint64_t i = 0; i < count; ++i) {
    if (bytes.size() - at < 4) {
      throw Error(ErrorCode::truncated_file, "embedding file ends inside id table");
    }
    const auto len = static_cast<std::size_t>(get_le(bytes, at, 4));
    at += 4;
    if (bytes.size() - at < len) {
      throw Error(ErrorCode::truncated_file, "embedding file ends inside id table");
    }
    std::string id(reinterpret_cast<const char*>(bytes.data() + at), len);
    at += len;
    if (!seen.insert(id).second) {
      throw Error(ErrorCode::duplicate_id, "embedding file repeats id '" + id + "'");
    }
    out.ids.push_back(std::move(id));
  }

  const std::size_t remaining = bytes.size() - at;
  const std::size_t row_bytes = dim * 4;
  if (count > remaining / row_bytes) {
    throw Error(ErrorCode::truncated_file, "embedding file holds fewer rows than declared");
  }
  if (remaining != count * row_bytes) {
    throw Error(ErrorCode::trailing_data, "embedding file has bytes after the last row");
  }
  out.embeddings.reserve(count);
  for (std::uint64_t r = 0; r < count; ++r) {
    std::vector<float> values(dim);
    for (std::size_t c = 0; c < dim; ++c) {
      values[c] = std::bit_cast<float>(static_cast<std::uint32_t>(get_le(bytes, at, 4)));
      at += 4;
      if (!std::isfinite(values[c])) {
        throw Error(ErrorCode::non_finite_value,
                    "non-finite value in row '" + out.ids[r] + "' at coordinate " + std::to_string(c));
      }
    }
    out.embeddings.emplace_back(std::move(values));
  }
  return out;
}

std::vector<std::byte> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_failure, "cannot open '" + path.string() + "' for reading");
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrorCode::io_failure, "read error on '" + path.string() + "'");
  std::vector<std::byte> out(raw.size());
  std::memcpy(out.data(), raw.data(), raw.size());
  return out;
}

std::string read_file_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_failure, "cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::io_failure, "cannot open '" + path.string() + "' for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.flush();
  if (!out) throw Error(ErrorCode::io_failure, "write error on '" + path.string() + "'");
}

void write_embedding_file(const std::filesystem::path& path, const EmbeddingRecords& records) {
  const auto bytes = serialize_embeddings(records);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::io_failure, "cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw Error(ErrorCode::io_failure, "write error on '" + path.string() + "'");
}

EmbeddingRecords load_embedding_file(const std::filesystem::path& path) {
  return parse_embeddings(read_file_bytes(path));
}

EmbeddingRecords import_embedding_csv(std::istream& in) {
  EmbeddingRecords out;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    std::stringstream fields(line);
    std::string id;
    std::getline(fields, id, ',');
    std::vector<float> values;
    std::string cell;
    while (std::getline(fields, cell, ',')) {
      double v = 0.0;
      const char* first = cell.data();
      const char* last = cell.data() + cell.size();
      while (first < last && *first == ' ') ++first;
      const auto res = std::from_chars(first, last, v);
      if (res.ec != std::errc() || res.ptr != last) {
        throw Error(ErrorCode::schema_violation,
                    "csv line " + std::to_string(line_no) + ": bad number '" + cell + "'");
      }
      if (!std::isfinite(v)) {
        throw Error(ErrorCode::non_finite_value, "csv line " + std::to_string(line_no));
      }
      values.push_back(static_cast<float>(v));
    }
    if (values.empty()) {
      throw Error(ErrorCode::schema_violation, "csv line " + std::to_string(line_no) + ": no values");
    }
    if (!out.embeddings.empty() && values.size() != out.embeddings.front().dim()) {
      throw Error(ErrorCode::dimension_mismatch, "csv line " + std::to_string(line_no));
    }
    if (!seen.insert(id).second) throw Error(ErrorCode::duplicate_id, "csv repeats id '" + id + "'");
    out.ids.push_back(id);
    out.embeddings.emplace_back(std::move(values));
  }
  return out;
}

EmbeddingRecords import_embedding_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_failure, "cannot open '" + path.string() + "' for reading");
  return import_embedding_csv(in);
}

QueryManifest manifest_from_json(const Json& doc) {
  if (!doc.is_object()) schema("document must be an object");
  QueryManifest m;
  m.dataset_name = require_string(doc, "dataset_name", "manifest");
  if (doc.contains("groups")) m.groups = string_list(doc.at("groups"), "groups");
  if (doc.contains("embedding_files")) {
    m.embedding_files = string_list(doc.at("embedding_files"), "embedding_files");
  }
  const Json& queries = require(doc, "queries", "manifest");
  if (!queries.is_array() || queries.empty()) schema("queries must be a non-empty array");

  std::unordered_set<std::string> ids;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const Json& q = queries[i];
    const std::string where = "queries[" + std::to_string(i) + "]";
    ManifestQuery mq;
    mq.query_id = require_string(q, "query_id", where);
    if (!ids.insert(mq.query_id).second) schema(where + ": duplicate query_id '" + mq.query_id + "'");
    mq.group = optional_string(q, "group", where).value_or("");
    if (!mq.group.empty() && !m.groups.empty() &&
        std::find(m.groups.begin(), m.groups.end(), mq.group) == m.groups.end()) {
      schema(where + ": group '" + mq.group + "' is not declared in groups");
    }
    mq.ref_text_key = require_string(q, "ref_text_key", where);
    mq.composed_text_key = require_string(q, "composed_text_key", where);
    mq.ref_image_key = require_string(q, "ref_image_key", where);
    mq.target_ids = string_list(require(q, "target_ids", where), where + ".target_ids");
    if (mq.target_ids.empty()) schema(where + ": target_ids must be non-empty");
    if (q.contains("subset_ids") && !q.at("subset_ids").is_null()) {
      mq.subset_ids = string_list(q.at("subset_ids"), where + ".subset_ids");
      for (const auto& t : mq.target_ids) {
        if (std::find(mq.subset_ids->begin(), mq.subset_ids->end(), t) == mq.subset_ids->end()) {
          schema(where + ": target '" + t + "' is missing from subset_ids");
        }
      }
    }
    mq.prompt_text = optional_string(q, "prompt_text", where);
    mq.image_url = optional_string(q, "image_url", where);
    mq.target_embedding_key = optional_string(q, "target_embedding_key", where);
    m.queries.push_back(std::move(mq));
  }
  return m;
}

Json manifest_to_json(const QueryManifest& manifest) {
  Json doc;
  doc["dataset_name"] = manifest.dataset_name;
  doc["groups"] = manifest.groups;
  doc["embedding_files"] = manifest.embedding_files;
  Json queries = Json::array();
  for (const auto& q : manifest.queries) {
    Json j;
    j["query_id"] = q.query_id;
    if (!q.group.empty()) j["group"] = q.group;
    j["ref_text_key"] = q.ref_text_key;
    j["composed_text_key"] = q.composed_text_key;
    j["ref_image_key"] = q.ref_image_key;
    j["target_ids"] = q.target_ids;
    if (q.subset_ids) j["subset_ids"] = *q.subset_ids;
    if (q.prompt_text) j["prompt_text"] = *q.prompt_text;
    if (q.image_url) j["image_url"] = *q.image_url;
    if (q.target_embedding_key) j["target_embedding_key"] = *q.target_embedding_key;
    queries.push_back(std::move(j));
  }
  doc["queries"] = std::move(queries);
  return doc;
}

QueryManifest read_manifest_document(const std::filesystem::path& path) {
  const std::string text = read_file_text(path);
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    schema(path.string() + ": " + e.what());
  }
  return manifest_from_json(doc);
}

void write_manifest(const std::filesystem::path& path, const QueryManifest& manifest) {
  write_file_text(path, manifest_to_json(manifest).dump(2) + "\n");
}

void EmbeddingStore::add(const EmbeddingRecords& records) {
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!entries_.emplace(records.ids[i], records.embeddings[i]).second) {
      throw Error(ErrorCode::schema_violation,
                  "embedding key '" + records.ids[i] + "' appears in more than one file");
    }
  }
}

const Embedding* EmbeddingStore::find(const std::string& key) const {
  const auto it = entries_.find(key);
  return it == entries_.end() ? nullptr : &it->second;
}

ResolvedManifest resolve_manifest(const QueryManifest& manifest, const EmbeddingStore& store) {
  auto lookup = [&](const std::string& key, const std::string& query_id) -> const Embedding& {
    const Embedding* e = store.find(key);
    if (!e) {
      throw Error(ErrorCode::unresolved_key,
                  "query " + query_id + ": embedding key '" + key + "' not found");
    }
    return *e;
  };
  ResolvedManifest out;
  out.manifest = manifest;
  for (const auto& q : manifest.queries) {
    QueryBundle b;
    b.query_id = q.query_id;
    b.ref_text = lookup(q.ref_text_key, q.query_id);
    b.composed_text = lookup(q.composed_text_key, q.query_id);
    b.ref_image = lookup(q.ref_image_key, q.query_id);
    b.target_ids = q.target_ids;
    b.subset_ids = q.subset_ids;
    b.prompt_text = q.prompt_text;
    b.group = q.group;
    try {
      validate_bundle(b, true);
    } catch (const Error& e) {
      throw Error(ErrorCode::schema_violation, std::string("manifest: ") + e.what());
    }
    std::optional<Embedding> target;
    if (q.target_embedding_key) {
      const Embedding& t = lookup(*q.target_embedding_key, q.query_id);
      if (t.dim() != b.ref_text.dim()) {
        throw Error(ErrorCode::schema_violation,
                    "manifest: query " + q.query_id + ": target embedding dimension mismatch");
      }
      target = t;
    }
    out.bundles.push_back(std::move(b));
    out.target_embeddings.push_back(std::move(target));
  }
  return out;
}

ResolvedManifest load_manifest(const std::filesystem::path& path) {
  const QueryManifest manifest = read_manifest_document(path);
  EmbeddingStore store;
  const auto base = path.parent_path();
  for (const auto& file : manifest.embedding_files) store.add(load_embedding_file(base / file));
  return resolve_manifest(manifest, store);
}

Json to_json(const PDVParams& params) {
  return Json{{"alpha_t", params.alpha_t}, {"alpha_i", params.alpha_i}, {"beta", params.beta}};
}

PDVParams params_from_json(const Json& doc, const PDVParams& defaults) {
  if (doc.is_null()) return defaults;
  if (!doc.is_object()) throw Error(ErrorCode::schema_violation, "params must be an object");
  return {number_or(doc, "alpha_t", defaults.alpha_t), number_or(doc, "alpha_i", defaults.alpha_i),
          number_or(doc, "beta", defaults.beta)};
}

Json to_json(const RankedList& ranked) {
  Json entries = Json::array();
  for (std::size_t i = 0; i < ranked.entries.size(); ++i) {
    entries.push_back(
        Json{{"rank", i + 1}, {"id", ranked.entries[i].id}, {"score", ranked.entries[i].score}});
  }
  return Json{{"query_id", ranked.query_id},
              {"params_used", to_json(ranked.params_used)},
              {"entries", std::move(entries)}};
}

Json to_json(const EvalReport& report) {
  Json doc;
  doc["num_queries"] = report.num_queries;
  doc["params_used"] = to_json(report.params_used);
  doc["per_metric"] = table_to_json(report.per_metric);
  doc["warnings"] = report.warnings;
  Json groups = Json::array();
  for (const auto& g : report.per_group) {
    groups.push_back(Json{{"group", g.group},
                          {"num_queries", g.num_queries},
                          {"per_metric", table_to_json(g.metrics)}});
  }
  doc["per_group"] = std::move(groups);
  return doc;
}

EvalReport report_from_json(const Json& doc) {
  try {
    EvalReport r;
    r.num_queries = doc.at("num_queries").get<std::size_t>();
    r.params_used = params_from_json(doc.at("params_used"));
    r.per_metric = table_from_json(doc.at("per_metric"));
    if (doc.contains("warnings")) r.warnings = doc.at("warnings").get<std::vector<std::string>>();
    if (doc.contains("per_group")) {
      for (const auto& g : doc.at("per_group")) {
        r.per_group.push_back({g.at("group").get<std::string>(),
                               g.at("num_queries").get<std::size_t>(),
                               table_from_json(g.at("per_metric"))});
      }
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::schema_violation, std::string("report: ") + e.what());
  }
}

std::string format_report(const EvalReport& report, ReportFormat format) {
  if (format == ReportFormat::json) return to_json(report).dump(2) + "\n";
  std::ostringstream out;
  out << "# num_queries=" << report.num_queries << "\n";
  out << "# alpha_t=" << shortest(report.params_used.alpha_t)
      << ",alpha_i=" << shortest(report.params_used.alpha_i)
      << ",beta=" << shortest(report.params_used.beta) << "\n";
  if (!report.warnings.empty()) {
    out << "# degenerate_queries=";
    for (std::size_t i = 0; i < report.warnings.size(); ++i) {
      out << (i ? ";" : "") << report.warnings[i];
    }
    out << "\n";
  }
  out << "metric,value\n";
  for (const auto& [name, value] : report.per_metric.items()) out << name << "," << fixed6(value) << "\n";
  for (const auto& g : report.per_group) {
    for (const auto& [name, value] : g.metrics.items()) {
      out << g.group << "/" << name << "," << fixed6(value) << "\n";
    }
  }
  return out.str();
}

void write_report(const EvalReport& report, const std::filesystem::path& path, ReportFormat format) {
  write_file_text(path, format_report(report, format));
}

EvalReport read_report_json(const std::filesystem::path& path) {
  Json doc;
  try {
    doc = Json::parse(read_file_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::schema_violation, std::string("report: ") + e.what());
  }
  return report_from_json(doc);
}

Json to_json(const TuneResult& result) {
  return Json{{"alpha_i", result.alpha_i},
              {"loss", result.loss},
              {"iterations", result.iterations},
              {"converged", result.converged}};
}

Json to_json(const SimConfig& config) {
  return Json{{"theta0_deg", config.theta0_deg}, {"mag_ratio", config.mag_ratio},
              {"dim", config.dim},               {"random_completions", config.random_completions},
              {"seed", config.seed},             {"phi_grid_deg", config.phi_grid_deg},
              {"alpha_grid", config.alpha_grid}};
}

SimConfig sim_config_from_json(const Json& doc) {
  if (!doc.is_object()) throw Error(ErrorCode::schema_violation, "simulation config must be an object");
  SimConfig c;
  c.theta0_deg = number_or(doc, "theta0_deg", c.theta0_deg);
  c.mag_ratio = number_or(doc, "mag_ratio", c.mag_ratio);
  c.dim = static_cast<int>(number_or(doc, "dim", c.dim));
  c.random_completions = static_cast<int>(number_or(doc, "random_completions", 0));
  c.seed = static_cast<std::uint64_t>(number_or(doc, "seed", 0));
  auto grid = [&](const char* list_key, const char* range_key) {
    if (doc.contains(list_key)) {
      const Json& v = doc.at(list_key);
      if (!v.is_array()) throw Error(ErrorCode::schema_violation, std::string(list_key) + " must be an array");
      std::vector<double> out;
      for (const auto& x : v) {
        if (!x.is_number()) throw Error(ErrorCode::schema_violation, std::string(list_key) + " must hold numbers");
        out.push_back(x.get<double>());
      }
      return out;
    }
    if (doc.contains(range_key)) {
      const Json& r = doc.at(range_key);
      return make_grid(number_or(r, "from", 0.0), number_or(r, "to", 0.0), number_or(r, "step", 1.0));
    }
    throw Error(ErrorCode::schema_violation,
                std::string("simulation config needs ") + list_key + " or " + range_key);
  };
  c.phi_grid_deg = grid("phi_grid_deg", "phi");
  c.alpha_grid = grid("alpha_grid", "alpha");
  return c;
}

Json to_json(const HeatmapCell& cell) {
  Json j{{"phi_deg", cell.phi_deg}, {"alpha", cell.alpha}, {"valid", cell.valid}};
  if (cell.valid) {
    j["theta_deg"] = cell.theta_deg;
  } else {
    j["theta_deg"] = nullptr;
  }
  return j;
}

void write_heatmap_csv(std::ostream& out, const SimConfig& config,
                       std::span<const HeatmapCell> cells) {
  out << "# " << to_json(config).dump() << "\n";
  out << "phi_deg,alpha,theta_deg\n";
  for (const auto& cell : cells) {
    out << shortest(cell.phi_deg) << "," << shortest(cell.alpha) << ","
        << (cell.valid ? shortest(cell.theta_deg) : std::string("nan")) << "\n";
  }
}

namespace {

Json summary_to_json(const PhiSummary& s) {
  Json j{{"count", s.count}, {"mean_deg", s.mean_deg}, {"median_deg", s.median_deg},
         {"stddev_deg", s.stddev_deg}};
  if (!s.group.empty()) j["group"] = s.group;
  return j;
}

}  // namespace

Json to_json(const PhiReport& report) {
  Json groups = Json::array();
  for (const auto& g : report.per_group) groups.push_back(summary_to_json(g));
  return Json{{"overall", summary_to_json(report.overall)},
              {"per_group", std::move(groups)},
              {"skipped", report.skipped}};
}

QueryBundle bundle_from_json(const Json& doc) {
  if (!doc.is_object()) throw Error(ErrorCode::schema_violation, "bundle must be an object");
  QueryBundle b;
  try {
    b.query_id = doc.value("query_id", std::string("query"));
    b.ref_text = embedding_from_json(doc.at("ref_text"), "ref_text");
    b.composed_text = embedding_from_json(doc.at("composed_text"), "composed_text");
    b.ref_image = embedding_from_json(doc.at("ref_image"), "ref_image");
    if (doc.contains("target_ids")) b.target_ids = string_list(doc.at("target_ids"), "target_ids");
    if (doc.contains("subset_ids") && !doc.at("subset_ids").is_null()) {
      b.subset_ids = string_list(doc.at("subset_ids"), "subset_ids");
    }
    if (doc.contains("prompt_text") && doc.at("prompt_text").is_string()) {
      b.prompt_text = doc.at("prompt_text").get<std::string>();
    }
    if (doc.contains("group") && doc.at("group").is_string()) b.group = doc.at("group").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::schema_violation, std::string("bundle: ") + e.what());
  }
  validate_bundle(b, false);
  return b;
}

Json to_json(const QueryBundle& bundle) {
  Json j;
  j["query_id"] = bundle.query_id;
  j["ref_text"] = embedding_to_json(bundle.ref_text);
  j["composed_text"] = embedding_to_json(bundle.composed_text);
  j["ref_image"] = embedding_to_json(bundle.ref_image);
  j["target_ids"] = bundle.target_ids;
  if (bundle.subset_ids) j["subset_ids"] = *bundle.subset_ids;
  if (bundle.prompt_text) j["prompt_text"] = *bundle.prompt_text;
  if (!bundle.group.empty()) j["group"] = bundle.group;
  return j;
}

std::string filter_mode_name(FilterMode mode) {
  return mode == FilterMode::drop_if_distance_above ? "drop_if_distance_above"
                                                    : "keep_if_similarity_at_least";
}

FilterMode filter_mode_from_name(const std::string& name) {
  if (name == "drop_if_distance_above" || name == "distance") return FilterMode::drop_if_distance_above;
  if (name == "keep_if_similarity_at_least" || name == "similarity") {
    return FilterMode::keep_if_similarity_at_least;
  }
  throw Error(ErrorCode::invalid_parameter, "unknown filter mode '" + name + "'");
}

}  // namespace pdv
