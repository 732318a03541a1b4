#include "pdv/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "pdv/error.hpp"
#include "pdv/geosim.hpp"
#include "pdv/io.hpp"
#include "pdv/metrics.hpp"
#include "pdv/retrieval.hpp"
#include "pdv/service.hpp"
#include "pdv/tuner.hpp"

namespace pdv::cli {

namespace {

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

/// "from:to:step", a single number, or a comma list.
std::vector<double> parse_grid(const std::string& spec) {
  auto number = [&](const std::string& s) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != s.size() || s.empty()) {
      throw Error(ErrorCode::invalid_parameter, "bad number '" + s + "' in grid '" + spec + "'");
    }
    return v;
  };
  std::vector<std::string> parts;
  const char sep = spec.find(':') != std::string::npos ? ':' : ',';
  std::stringstream ss(spec);
  std::string part;
  while (std::getline(ss, part, sep)) parts.push_back(part);
  if (sep == ':') {
    if (parts.size() != 3) throw Error(ErrorCode::invalid_parameter, "grid must be from:to:step");
    return make_grid(number(parts[0]), number(parts[1]), number(parts[2]));
  }
  std::vector<double> out;
  for (const auto& p : parts) out.push_back(number(p));
  return out;
}

struct ParamFlags {
  double alpha_t = 1.0;
  double alpha_i = 1.0;
  double beta = 1.0;

  void attach(CLI::App* app) {
    app->add_option("--alpha-t", alpha_t, "Text composition scale")->capture_default_str();
    app->add_option("--alpha-i", alpha_i, "Image composition scale")->capture_default_str();
    app->add_option("--beta", beta, "Fusion weight in [0,1] (1 = text only)")->capture_default_str();
  }
  PDVParams params() const { return {alpha_t, alpha_i, beta}; }
};

const QueryBundle& pick_bundle(const ResolvedManifest& m, const std::string& query_id) {
  if (query_id.empty()) return m.bundles.front();
  for (const auto& b : m.bundles) {
    if (b.query_id == query_id) return b;
  }
  throw Error(ErrorCode::unresolved_key, "query '" + query_id + "' not in manifest");
}

ReportFormat report_format(const std::string& name, const std::string& out_path) {
  if (name == "json") return ReportFormat::json;
  if (name == "csv") return ReportFormat::csv;
  if (out_path.size() >= 4 && out_path.substr(out_path.size() - 4) == ".csv") return ReportFormat::csv;
  return ReportFormat::json;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Composed image retrieval with prompt directional vectors", "pdv"};
  app.require_subcommand(1);

  // rank
  auto* rank = app.add_subcommand("rank", "Rank a gallery for one query");
  std::string rank_gallery, rank_bundle, rank_query, rank_format = "table";
  std::size_t rank_k = 10;
  bool rank_no_pdv = false;
  ParamFlags rank_params;
  rank->add_option("--gallery", rank_gallery, "Gallery embedding file")->required();
  rank->add_option("--bundle", rank_bundle, "Manifest holding the query")->required();
  rank->add_option("--query", rank_query, "Query id (default: first in manifest)");
  rank->add_option("--topk", rank_k, "Number of results")->capture_default_str();
  rank->add_option("--format", rank_format, "table or json")->check(CLI::IsMember({"table", "json"}));
  rank->add_flag("--no-pdv", rank_no_pdv, "Rank the normalized composed text embedding directly");
  rank_params.attach(rank);

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a manifest against a gallery");
  std::string eval_gallery, eval_manifest, eval_out, eval_format = "auto";
  std::vector<std::size_t> eval_ks{1, 5, 10, 50};
  unsigned eval_threads = 1;
  ParamFlags eval_params;
  eval->add_option("--gallery", eval_gallery, "Gallery embedding file")->required();
  eval->add_option("--manifest", eval_manifest, "Query manifest")->required();
  eval->add_option("--ks", eval_ks, "Cutoffs, comma separated")->delimiter(',');
  eval->add_option("--out", eval_out, "Report path (stdout when omitted)");
  eval->add_option("--format", eval_format, "json, csv or auto (by extension)")
      ->check(CLI::IsMember({"auto", "json", "csv"}));
  eval->add_option("--threads", eval_threads, "Worker threads")->capture_default_str();
  eval_params.attach(eval);

  // tune
  auto* tune = app.add_subcommand("tune", "Tune alpha_i per query toward the composed text embedding");
  std::string tune_manifest, tune_format = "table";
  double tune_alpha_t = 1.0;
  tune->add_option("--manifest", tune_manifest, "Query manifest")->required();
  tune->add_option("--alpha-t", tune_alpha_t, "Text composition scale held fixed")->capture_default_str();
  tune->add_option("--format", tune_format, "table or json")->check(CLI::IsMember({"table", "json"}));

  // simulate
  auto* sim = app.add_subcommand("simulate", "Sweep theta over (phi, alpha)");
  SimConfig sim_config;
  std::string sim_phi = "0:90:10", sim_alpha = "0:3:0.1", sim_out;
  sim->add_option("--theta0", sim_config.theta0_deg, "Reference/target angle in degrees")->capture_default_str();
  sim->add_option("--mag-ratio", sim_config.mag_ratio, "|prompt residual| / |ideal residual|")
      ->capture_default_str();
  sim->add_option("--phi", sim_phi, "phi grid in degrees, from:to:step")->capture_default_str();
  sim->add_option("--alpha", sim_alpha, "alpha grid, from:to:step")->capture_default_str();
  sim->add_option("--dim", sim_config.dim, "Ambient dimension (>= 3)")->capture_default_str();
  sim->add_option("--completions", sim_config.random_completions,
                  "Average over this many random out-of-plane directions (0 = fixed axis)");
  sim->add_option("--seed", sim_config.seed, "Seed for random completions");
  sim->add_option("--out", sim_out, "CSV path (stdout when omitted)");

  // filter-study
  auto* study = app.add_subcommand("filter-study", "Kept ratio and recall change across filter thresholds");
  std::string study_gallery, study_manifest, study_thresholds = "0.5:0.9:0.05",
                                             study_mode = "drop_if_distance_above";
  std::vector<std::size_t> study_ks{10, 50};
  ParamFlags study_params;
  study->add_option("--gallery", study_gallery, "Gallery embedding file")->required();
  study->add_option("--manifest", study_manifest, "Query manifest")->required();
  study->add_option("--threshold,--thresholds", study_thresholds, "Threshold sweep, from:to:step or list")
      ->capture_default_str();
  study->add_option("--mode", study_mode, "drop_if_distance_above or keep_if_similarity_at_least")
      ->capture_default_str();
  study->add_option("--ks", study_ks, "Cutoffs, comma separated")->delimiter(',');
  study_params.attach(study);

  // phi
  auto* phi = app.add_subcommand("phi", "Measure prompt/ideal residual angles over a manifest");
  std::string phi_manifest, phi_gallery;
  phi->add_option("--manifest", phi_manifest, "Query manifest")->required();
  phi->add_option("--gallery", phi_gallery,
                  "Gallery used for the first target id when a query has no target embedding");

  // import-csv
  auto* import = app.add_subcommand("import-csv", "Convert id,v1,...,vD rows to an embedding file");
  std::string import_in, import_out;
  import->add_option("--in", import_in, "CSV input")->required();
  import->add_option("--out", import_out, "Embedding file output")->required();

  // serve
  auto* serve = app.add_subcommand("serve", "Run the HTTP service");
  std::string serve_host = "127.0.0.1";
  int serve_port = 8080;
  if (const char* env = std::getenv("PDV_PORT")) serve_port = std::atoi(env);
  std::size_t serve_sessions = service::config_from_env().max_sessions;
  serve->add_option("--host", serve_host, "Bind address")->capture_default_str();
  serve->add_option("--port", serve_port, "Port (env PDV_PORT)")->capture_default_str();
  serve->add_option("--max-sessions", serve_sessions, "Session cache size (env PDV_MAX_SESSIONS)")
      ->capture_default_str();

  std::vector<const char*> argv{"pdv"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "pdv: " << e.what() << "\n";
    if (const auto* sub = app.get_subcommands().empty() ? nullptr : app.get_subcommands().front()) {
      err << sub->help();
    }
    return kExitUsage;
  }

  try {
    if (rank->parsed()) {
      const Gallery gallery = Gallery::build(load_embedding_file(rank_gallery));
      const ResolvedManifest m = load_manifest(rank_bundle);
      const QueryBundle& bundle = pick_bundle(m, rank_query);
      const PDVParams params = rank_params.params();
      const Embedding query =
          rank_no_pdv ? normalize(bundle.composed_text) : compute_query_embedding(bundle, params);
      RankedList ranked = rank_topk(gallery, query, rank_k);
      ranked.query_id = bundle.query_id;
      ranked.params_used = rank_no_pdv ? kBaselineParams : params;
      if (rank_format == "json") {
        out << to_json(ranked).dump(2) << "\n";
      } else {
        out << "rank\tid\tscore\n";
        for (std::size_t i = 0; i < ranked.entries.size(); ++i) {
          out << i + 1 << "\t" << ranked.entries[i].id << "\t" << fixed(ranked.entries[i].score) << "\n";
        }
      }
      return kExitOk;
    }

    if (eval->parsed()) {
      const Gallery gallery = Gallery::build(load_embedding_file(eval_gallery));
      const ResolvedManifest m = load_manifest(eval_manifest);
      EvalOptions options;
      options.threads = eval_threads;
      const EvalReport report = evaluate_manifest(gallery, m.bundles, eval_params.params(), eval_ks, options);
      const ReportFormat format = report_format(eval_format, eval_out);
      if (eval_out.empty()) {
        out << format_report(report, format);
      } else {
        write_report(report, eval_out, format);
      }
      for (const auto& w : report.warnings) err << "pdv: warning: degenerate query " << w << "\n";
      return kExitOk;
    }

    if (tune->parsed()) {
      const ResolvedManifest m = load_manifest(tune_manifest);
      const DatasetTuning t = tune_dataset(m.bundles, tune_alpha_t);
      if (tune_format == "json") {
        Json doc;
        doc["alpha_t"] = tune_alpha_t;
        Json per = Json::array();
        for (const auto& [qid, r] : t.per_query) {
          Json j = to_json(r);
          j["query_id"] = qid;
          per.push_back(std::move(j));
        }
        doc["per_query"] = std::move(per);
        doc["mean_alpha_i"] = t.mean_alpha_i;
        Json groups = Json::array();
        for (const auto& g : t.per_group) {
          groups.push_back(Json{{"group", g.group}, {"num_queries", g.num_queries}, {"mean_alpha_i", g.mean_alpha_i}});
        }
        doc["per_group"] = std::move(groups);
        out << doc.dump(2) << "\n";
      } else {
        out << "query_id\talpha_i\tloss\titerations\tconverged\n";
        for (const auto& [qid, r] : t.per_query) {
          out << qid << "\t" << fixed(r.alpha_i) << "\t" << fixed(r.loss) << "\t" << r.iterations << "\t"
              << (r.converged ? "yes" : "no") << "\n";
        }
        for (const auto& g : t.per_group) {
          out << "# group " << g.group << " mean_alpha_i=" << fixed(g.mean_alpha_i) << " (" << g.num_queries
              << " queries)\n";
        }
        out << "# mean_alpha_i=" << fixed(t.mean_alpha_i) << "\n";
      }
      return kExitOk;
    }

    if (sim->parsed()) {
      sim_config.phi_grid_deg = parse_grid(sim_phi);
      sim_config.alpha_grid = parse_grid(sim_alpha);
      const auto cells = theta_heatmap(sim_config);
      if (sim_out.empty()) {
        write_heatmap_csv(out, sim_config, cells);
      } else {
        std::ofstream f(sim_out, std::ios::trunc);
        if (!f) throw Error(ErrorCode::io_failure, "cannot open '" + sim_out + "' for writing");
        write_heatmap_csv(f, sim_config, cells);
        if (!f) throw Error(ErrorCode::io_failure, "write error on '" + sim_out + "'");
      }
      return kExitOk;
    }

    if (study->parsed()) {
      const Gallery gallery = Gallery::build(load_embedding_file(study_gallery));
      const ResolvedManifest m = load_manifest(study_manifest);
      const auto thresholds = parse_grid(study_thresholds);
      const auto rows = filter_study(gallery, m.bundles, study_params.params(),
                                     filter_mode_from_name(study_mode), thresholds, study_ks);
      out << "threshold,filtered_ratio,fallbacks";
      for (const auto k : study_ks) {
        out << ",recall@" << k << ",filtered_recall@" << k << ",delta_recall@" << k;
      }
      out << "\n";
      for (const auto& row : rows) {
        out << fixed(row.threshold, 4) << "," << fixed(row.filtered_ratio) << "," << row.fallbacks;
        for (const auto k : study_ks) {
          const std::string name = "recall@" + std::to_string(k);
          const double full = row.unfiltered.at(name);
          const double kept = row.filtered.at(name);
          out << "," << fixed(full) << "," << fixed(kept) << "," << fixed(kept - full);
        }
        out << "\n";
      }
      return kExitOk;
    }

    if (phi->parsed()) {
      const ResolvedManifest m = load_manifest(phi_manifest);
      std::optional<Gallery> gallery;
      if (!phi_gallery.empty()) gallery = Gallery::build(load_embedding_file(phi_gallery));
      std::vector<QueryBundle> bundles;
      std::vector<Embedding> targets;
      for (std::size_t i = 0; i < m.bundles.size(); ++i) {
        if (m.target_embeddings[i]) {
          targets.push_back(*m.target_embeddings[i]);
        } else if (gallery) {
          const auto row = gallery->find(m.bundles[i].target_ids.front());
          if (!row) continue;
          const auto r = gallery->row(*row);
          targets.emplace_back(std::vector<float>(r.begin(), r.end()));
        } else {
          continue;
        }
        bundles.push_back(m.bundles[i]);
      }
      if (bundles.empty()) {
        throw Error(ErrorCode::all_bundles_degenerate, "no query has a target embedding to measure against");
      }
      const PhiReport report = phi_report(bundles, targets);
      Json doc = to_json(report);
      doc["unmeasured"] = m.bundles.size() - bundles.size();
      out << doc.dump(2) << "\n";
      return kExitOk;
    }

    if (import->parsed()) {
      const EmbeddingRecords records = import_embedding_csv(std::filesystem::path(import_in));
      write_embedding_file(import_out, records);
      out << "wrote " << records.size() << " records to " << import_out << "\n";
      return kExitOk;
    }

    if (serve->parsed()) {
      service::ServiceConfig config = service::config_from_env();
      config.max_sessions = serve_sessions;
      service::Service svc(config);
      service::HttpServer http(svc);
      const int port = http.bind(serve_host, serve_port);
      if (port < 0) {
        err << "pdv: cannot bind " << serve_host << ":" << serve_port << "\n";
        return kExitData;
      }
      err << "pdv: listening on " << serve_host << ":" << port << "\n";
      return http.listen() ? kExitOk : kExitData;
    }
  } catch (const Error& e) {
    err << "pdv: " << e.code_name() << ": " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "pdv: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace pdv::cli
