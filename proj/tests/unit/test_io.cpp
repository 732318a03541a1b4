#include <bit>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "doctest.h"
#include "pdv/error.hpp"
#include "pdv/io.hpp"
#include "support/fixtures.hpp"
#include "support/generators.hpp"

using namespace pdv;
using pdv::test::Rng;
using pdv::test::TempDir;
using pdv::test::awkward_records;
using pdv::test::bit_equal;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected pdv::Error");
  return ErrorCode::io_failure;
}

std::vector<std::byte> header(std::uint32_t dim, std::uint64_t count) {
  EmbeddingRecords none;
  std::vector<std::byte> h = serialize_embeddings(none);
  for (int i = 0; i < 4; ++i) h[4 + i] = static_cast<std::byte>((dim >> (8 * i)) & 0xFF);
  for (int i = 0; i < 8; ++i) h[8 + i] = static_cast<std::byte>((count >> (8 * i)) & 0xFF);
  return h;
}

ManifestQuery query(const std::string& id, std::vector<std::string> targets) {
  ManifestQuery q;
  q.query_id = id;
  q.ref_text_key = id + "/ref_text";
  q.composed_text_key = id + "/composed_text";
  q.ref_image_key = id + "/ref_image";
  q.target_ids = std::move(targets);
  return q;
}

}  // namespace

TEST_CASE("embedding file layout") {
  EmbeddingRecords r;
  r.ids = {"ab"};
  r.embeddings = {Embedding({1.0f, -2.0f})};
  const auto bytes = serialize_embeddings(r);
  const std::vector<std::uint8_t> expected{'P', 'D', 'V', '1', 2, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0,
                                           2,   0,   0,   0,   'a', 'b',
                                           0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0xc0};
  REQUIRE(bytes.size() == expected.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) CHECK(std::to_integer<std::uint8_t>(bytes[i]) == expected[i]);
  CHECK(bit_equal(parse_embeddings(bytes), r));
}

TEST_CASE("embedding file round trips bit for bit") {
  Rng rng(80);
  TempDir dir;
  for (int t = 0; t < 100; ++t) {
    const EmbeddingRecords r = awkward_records(rng, static_cast<std::size_t>(t % 13), 1 + t % 9);
    const auto bytes = serialize_embeddings(r);
    CHECK(bit_equal(parse_embeddings(bytes), r));
    const auto path = dir / ("e" + std::to_string(t) + ".pdv");
    write_embedding_file(path, r);
    CHECK(bit_equal(load_embedding_file(path), r));
    CHECK(read_file_bytes(path) == bytes);
  }
}

TEST_CASE("embedding file errors") {
  EmbeddingRecords r;
  r.ids = {"a", "b"};
  r.embeddings = {Embedding({1.0f, 2.0f}), Embedding({3.0f, 4.0f})};
  const auto good = serialize_embeddings(r);

  auto bad = good;
  bad[0] = std::byte{'X'};
  CHECK(code_of([&] { parse_embeddings(bad); }) == ErrorCode::bad_magic);

  CHECK(code_of([&] { parse_embeddings(std::span(good).first(10)); }) == ErrorCode::truncated_file);
  CHECK(code_of([&] { parse_embeddings(header(0, 0)); }) == ErrorCode::bad_header);
  CHECK(code_of([&] { parse_embeddings(std::span(good).first(good.size() - 1)); }) ==
        ErrorCode::truncated_file);
  CHECK(code_of([&] { parse_embeddings(std::span(good).first(20)); }) == ErrorCode::truncated_file);

  auto longer = good;
  longer.push_back(std::byte{0});
  CHECK(code_of([&] { parse_embeddings(longer); }) == ErrorCode::trailing_data);

  // Huge declared count must not overflow the size check.
  CHECK(code_of([&] { parse_embeddings(header(4, std::numeric_limits<std::uint64_t>::max())); }) ==
        ErrorCode::truncated_file);

  auto nan = good;
  const auto qnan = std::bit_cast<std::uint32_t>(std::numeric_limits<float>::quiet_NaN());
  for (int i = 0; i < 4; ++i) nan[nan.size() - 4 + i] = static_cast<std::byte>((qnan >> (8 * i)) & 0xFF);
  CHECK(code_of([&] { parse_embeddings(nan); }) == ErrorCode::non_finite_value);

  EmbeddingRecords dup = r;
  dup.ids = {"a", "a"};
  CHECK(code_of([&] { parse_embeddings(serialize_embeddings(dup)); }) == ErrorCode::duplicate_id);

  CHECK(code_of([&] { load_embedding_file("/nonexistent/dir/x.pdv"); }) == ErrorCode::io_failure);
  CHECK(code_of([&] { write_embedding_file("/nonexistent/dir/x.pdv", r); }) == ErrorCode::io_failure);
}

TEST_CASE("loading preserves order and never deduplicates") {
  EmbeddingRecords r;
  r.ids = {"z", "a", "m"};
  r.embeddings = {Embedding({1.0f}), Embedding({1.0f}), Embedding({2.0f})};
  CHECK(parse_embeddings(serialize_embeddings(r)).ids == r.ids);
}

TEST_CASE("csv import") {
  std::istringstream in("# header comment\nx, 1.5,2\n\ny,-3,4e-2\r\n");
  const EmbeddingRecords r = import_embedding_csv(in);
  CHECK(r.ids == std::vector<std::string>{"x", "y"});
  CHECK(r.embeddings[0] == Embedding({1.5f, 2.0f}));
  CHECK(r.embeddings[1] == Embedding({-3.0f, 0.04f}));

  std::istringstream ragged("a,1,2\nb,1\n");
  CHECK(code_of([&] { import_embedding_csv(ragged); }) == ErrorCode::dimension_mismatch);
  std::istringstream junk("a,1,zz\n");
  CHECK(code_of([&] { import_embedding_csv(junk); }) == ErrorCode::schema_violation);
  std::istringstream inf("a,inf\n");
  CHECK(code_of([&] { import_embedding_csv(inf); }) == ErrorCode::non_finite_value);
  std::istringstream dup("a,1\na,2\n");
  CHECK(code_of([&] { import_embedding_csv(dup); }) == ErrorCode::duplicate_id);
  std::istringstream empty_row("a\n");
  CHECK(code_of([&] { import_embedding_csv(empty_row); }) == ErrorCode::schema_violation);
}

TEST_CASE("manifest parsing") {
  const Json doc = Json::parse(R"({
    "dataset_name": "demo",
    "groups": ["shirt"],
    "embedding_files": ["emb.pdv"],
    "queries": [
      {"query_id": "q1", "group": "shirt", "ref_text_key": "rt", "composed_text_key": "ct",
       "ref_image_key": "ri", "target_ids": ["g1"], "subset_ids": ["g1", "g2"],
       "prompt_text": "is red", "image_url": "http://x/1.jpg", "target_embedding_key": "g1"}
    ]})");
  const QueryManifest m = manifest_from_json(doc);
  CHECK(m.dataset_name == "demo");
  REQUIRE(m.queries.size() == 1);
  CHECK(m.queries[0].subset_ids == std::optional<std::vector<std::string>>({"g1", "g2"}));
  CHECK(m.queries[0].prompt_text == std::optional<std::string>("is red"));
  CHECK(manifest_from_json(manifest_to_json(m)) == m);

  auto broken = [&](auto mutate) {
    Json d = doc;
    mutate(d);
    return code_of([&] { manifest_from_json(d); });
  };
  CHECK(broken([](Json& d) { d.erase("dataset_name"); }) == ErrorCode::schema_violation);
  CHECK(broken([](Json& d) { d["queries"] = Json::array(); }) == ErrorCode::schema_violation);
  CHECK(broken([](Json& d) { d["queries"][0]["target_ids"] = Json::array(); }) == ErrorCode::schema_violation);
  CHECK(broken([](Json& d) { d["queries"][0].erase("ref_image_key"); }) == ErrorCode::schema_violation);
  CHECK(broken([](Json& d) { d["queries"][0]["group"] = "dress"; }) == ErrorCode::schema_violation);
  CHECK(broken([](Json& d) { d["queries"][0]["subset_ids"] = {"g2"}; }) == ErrorCode::schema_violation);
  CHECK(broken([](Json& d) { d["queries"].push_back(d["queries"][0]); }) == ErrorCode::schema_violation);
  CHECK(broken([](Json& d) { d["queries"][0]["query_id"] = 7; }) == ErrorCode::schema_violation);
  try {
    Json d = doc;
    d["queries"][0].erase("composed_text_key");
    manifest_from_json(d);
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("composed_text_key") != std::string::npos);
  }
}

TEST_CASE("manifest round trips structurally") {
  Rng rng(81);
  TempDir dir;
  for (int t = 0; t < 100; ++t) {
    const QueryManifest m = test::random_manifest(rng, t);
    const auto path = dir / ("m" + std::to_string(t) + ".json");
    write_manifest(path, m);
    CHECK(read_manifest_document(path) == m);
  }
}

TEST_CASE("manifest resolution") {
  TempDir dir;
  Rng rng(82);
  EmbeddingRecords emb;
  for (const char* key : {"q1/ref_text", "q1/composed_text", "q1/ref_image"}) {
    emb.ids.push_back(key);
    emb.embeddings.push_back(test::random_embedding(rng, 4));
  }
  EmbeddingRecords gallery;
  gallery.ids = {"g1", "g2"};
  gallery.embeddings = {test::random_embedding(rng, 4), test::random_embedding(rng, 4)};
  write_embedding_file(dir / "queries.pdv", emb);
  std::filesystem::create_directories(dir / "sub");
  write_embedding_file(dir / "sub" / "gallery.pdv", gallery);

  QueryManifest m;
  m.dataset_name = "demo";
  m.embedding_files = {"queries.pdv", "sub/gallery.pdv"};
  ManifestQuery q = query("q1", {"g1"});
  q.target_embedding_key = "g1";
  q.group = "dress";
  m.queries = {q};
  write_manifest(dir / "manifest.json", m);

  const ResolvedManifest r = load_manifest(dir / "manifest.json");
  REQUIRE(r.bundles.size() == 1);
  CHECK(r.bundles[0].ref_text == emb.embeddings[0]);
  CHECK(r.bundles[0].composed_text == emb.embeddings[1]);
  CHECK(r.bundles[0].ref_image == emb.embeddings[2]);
  CHECK(r.bundles[0].group == "dress");
  CHECK(r.target_embeddings[0] == std::optional<Embedding>(gallery.embeddings[0]));

  EmbeddingStore store;
  store.add(emb);
  CHECK(code_of([&] { store.add(emb); }) == ErrorCode::schema_violation);
  m.queries[0].ref_image_key = "missing";
  try {
    resolve_manifest(m, store);
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::unresolved_key);
    CHECK(std::string(e.what()).find("missing") != std::string::npos);
  }

  write_file_text(dir / "bad.json", "{ not json");
  CHECK(code_of([&] { read_manifest_document(dir / "bad.json"); }) == ErrorCode::schema_violation);
}

TEST_CASE("report formats") {
  EvalReport r;
  r.num_queries = 2;
  r.params_used = {1.5, 0.25, 0.5};
  r.per_metric.set("recall@10", 0.5);
  r.per_metric.set("map@10", 1.0 / 3.0);
  r.per_group.push_back({"shirt", 1, {}});
  r.per_group[0].metrics.set("recall@10", 1.0);

  const std::string csv = format_report(r, ReportFormat::csv);
  CHECK(csv.find("recall@10,0.500000\n") != std::string::npos);
  CHECK(csv.find("map@10,0.333333\n") != std::string::npos);
  CHECK(csv.find("shirt/recall@10,1.000000\n") != std::string::npos);
  CHECK(csv.find("# alpha_t=1.5,alpha_i=0.25,beta=0.5\n") != std::string::npos);
  CHECK(csv.find("metric,value\n") != std::string::npos);
  CHECK(csv.find("degenerate") == std::string::npos);
  r.warnings = {"qa", "qb"};
  CHECK(format_report(r, ReportFormat::csv).find("# degenerate_queries=qa;qb\n") != std::string::npos);

  TempDir dir;
  write_report(r, dir / "r.json", ReportFormat::json);
  CHECK(read_report_json(dir / "r.json") == r);
  CHECK(report_from_json(to_json(r)) == r);
  CHECK(code_of([&] { write_report(r, "/nonexistent/dir/r.json", ReportFormat::json); }) ==
        ErrorCode::io_failure);
}

TEST_CASE("heatmap csv") {
  SimConfig cfg;
  cfg.phi_grid_deg = {0.0, 45.0};
  cfg.alpha_grid = {0.5};
  const std::vector<HeatmapCell> cells{{0.0, 0.5, 12.25, true}, {45.0, 0.5, 0.0, false}};
  std::ostringstream out;
  write_heatmap_csv(out, cfg, cells);
  std::istringstream lines(out.str());
  std::string first, second, third, fourth;
  std::getline(lines, first);
  std::getline(lines, second);
  std::getline(lines, third);
  std::getline(lines, fourth);
  CHECK(first.rfind("# {", 0) == 0);
  CHECK(sim_config_from_json(Json::parse(first.substr(2))).phi_grid_deg == cfg.phi_grid_deg);
  CHECK(second == "phi_deg,alpha,theta_deg");
  CHECK(third == "0,0.5,12.25");
  CHECK(fourth == "45,0.5,nan");
}

TEST_CASE("wire mappings") {
  CHECK(params_from_json(Json{{"alpha_t", 2.0}}) == PDVParams{2.0, 1.0, 1.0});
  CHECK(params_from_json(nullptr, {0.1, 0.2, 0.3}) == PDVParams{0.1, 0.2, 0.3});
  CHECK(code_of([] { params_from_json(Json{{"beta", "x"}}); }) == ErrorCode::schema_violation);

  const SimConfig c = sim_config_from_json(
      Json::parse(R"({"theta0_deg": 30, "phi": {"from": 0, "to": 90, "step": 10}, "alpha_grid": [1, 2]})"));
  CHECK(c.theta0_deg == 30.0);
  CHECK(c.phi_grid_deg.size() == 10);
  CHECK(c.alpha_grid == std::vector<double>{1.0, 2.0});
  CHECK(code_of([] { sim_config_from_json(Json::parse(R"({"alpha_grid": [1]})")); }) ==
        ErrorCode::schema_violation);

  Rng rng(83);
  QueryBundle b = test::random_bundle(rng, 5, "qq");
  b.target_ids = {"t"};
  b.subset_ids = std::vector<std::string>{"t", "u"};
  b.prompt_text = "make it striped";
  b.group = "toptee";
  CHECK(bundle_from_json(to_json(b)) == b);

  RankedList rl;
  rl.query_id = "qq";
  rl.entries = {{"x", 0.75}, {"y", 0.5}};
  const Json j = to_json(rl);
  CHECK(j["entries"][1]["rank"] == 2);
  CHECK(j["entries"][0]["score"].get<double>() == 0.75);

  CHECK(filter_mode_from_name(filter_mode_name(FilterMode::keep_if_similarity_at_least)) ==
        FilterMode::keep_if_similarity_at_least);
  CHECK(filter_mode_from_name("distance") == FilterMode::drop_if_distance_above);
  CHECK(code_of([] { filter_mode_from_name("nearest"); }) == ErrorCode::invalid_parameter);
}
