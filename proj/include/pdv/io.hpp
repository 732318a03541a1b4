#pragma once

// File formats and JSON mappings.
//
// Embedding file layout (all integers little-endian):
//   magic   4 bytes  "PDV1"
//   dim     u32
//   count   u64
//   ids     count x (u32 byte length, UTF-8 bytes)
//   data    count x dim IEEE-754 binary32, row-major
// The payload must end exactly after the last float.

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "pdv/core.hpp"
#include "pdv/geosim.hpp"
#include "pdv/metrics.hpp"
#include "pdv/retrieval.hpp"
#include "pdv/tuner.hpp"

namespace pdv {

using Json = nlohmann::ordered_json;

inline constexpr char kEmbeddingMagic[4] = {'P', 'D', 'V', '1'};

std::vector<std::byte> serialize_embeddings(const EmbeddingRecords& records);
/// Throws bad_magic, bad_header, truncated_file, trailing_data,
/// non_finite_value, duplicate_id.
EmbeddingRecords parse_embeddings(std::span<const std::byte> bytes);

void write_embedding_file(const std::filesystem::path& path, const EmbeddingRecords& records);
EmbeddingRecords load_embedding_file(const std::filesystem::path& path);

/// One-way import of `id,v1,...,vD` rows. Blank lines and `#` lines are skipped.
EmbeddingRecords import_embedding_csv(std::istream& in);
EmbeddingRecords import_embedding_csv(const std::filesystem::path& path);

std::vector<std::byte> read_file_bytes(const std::filesystem::path& path);
std::string read_file_text(const std::filesystem::path& path);
void write_file_text(const std::filesystem::path& path, const std::string& text);

struct ManifestQuery {
  std::string query_id;
  std::string group;
  std::string ref_text_key;
  std::string composed_text_key;
  std::string ref_image_key;
  std::vector<std::string> target_ids;
  std::optional<std::vector<std::string>> subset_ids;
  std::optional<std::string> prompt_text;
  std::optional<std::string> image_url;
  std::optional<std::string> target_embedding_key;  // enables phi measurement

  bool operator==(const ManifestQuery&) const = default;
};

struct QueryManifest {
  std::string dataset_name;
  std::vector<std::string> groups;
  std::vector<std::string> embedding_files;  // relative to the manifest's directory
  std::vector<ManifestQuery> queries;

  bool operator==(const QueryManifest&) const = default;
};

/// Throws schema_violation naming the offending field.
QueryManifest manifest_from_json(const Json& doc);
Json manifest_to_json(const QueryManifest& manifest);
QueryManifest read_manifest_document(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const QueryManifest& manifest);

/// Union of embedding files addressed by id. A key present in two files is a
/// schema_violation.
class EmbeddingStore {
 public:
  void add(const EmbeddingRecords& records);
  const Embedding* find(const std::string& key) const;
  std::size_t size() const noexcept { return entries_.size(); }

 private:
  std::map<std::string, Embedding> entries_;
};

struct ResolvedManifest {
  QueryManifest manifest;
  std::vector<QueryBundle> bundles;
  std::vector<std::optional<Embedding>> target_embeddings;  // parallel to bundles
};

/// Throws unresolved_key naming the missing key, or schema_violation.
ResolvedManifest resolve_manifest(const QueryManifest& manifest, const EmbeddingStore& store);

/// Reads the manifest and every embedding file it references.
ResolvedManifest load_manifest(const std::filesystem::path& path);

enum class ReportFormat { json, csv };

std::string format_report(const EvalReport& report, ReportFormat format);
void write_report(const EvalReport& report, const std::filesystem::path& path, ReportFormat format);
EvalReport report_from_json(const Json& doc);
EvalReport read_report_json(const std::filesystem::path& path);

/// `# config` comment line, header `phi_deg,alpha,theta_deg`, one row per cell.
void write_heatmap_csv(std::ostream& out, const SimConfig& config,
                       std::span<const HeatmapCell> cells);

// Wire mappings shared by the service and the CLI.
Json to_json(const PDVParams& params);
PDVParams params_from_json(const Json& doc, const PDVParams& defaults = kBaselineParams);
Json to_json(const RankedList& ranked);
Json to_json(const EvalReport& report);
Json to_json(const TuneResult& result);
Json to_json(const SimConfig& config);
SimConfig sim_config_from_json(const Json& doc);
Json to_json(const HeatmapCell& cell);
Json to_json(const PhiReport& report);
QueryBundle bundle_from_json(const Json& doc);
Json to_json(const QueryBundle& bundle);

std::string filter_mode_name(FilterMode mode);
FilterMode filter_mode_from_name(const std::string& name);

}  // namespace pdv
