#include <cmath>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "faircop/corpus.hpp"
#include "faircop/metrics.hpp"
#include "faircop/network.hpp"
#include "faircop/service.hpp"
#include "faircop/simulator.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace faircop;

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) {
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void emit(const std::string& text, const std::string& out) {
  if (out.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream f(out, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + out);
  f << text;
}

// "name:dim[:noise]" entries, comma separated
std::vector<ViewSpec> parse_view_specs(const std::string& spec, double default_noise) {
  std::vector<ViewSpec> out;
  for (const auto& item : split(spec, ',')) {
    const auto f = split(item, ':');
    if (f.size() < 2 || f.size() > 3) throw std::invalid_argument("bad view spec '" + item + "'");
    ViewSpec v{f[0], std::stoul(f[1]), default_noise};
    if (f.size() == 3) v.noise_sigma = std::stod(f[2]);
    out.push_back(v);
  }
  return out;
}

std::vector<AttributeSpec> load_schema(const fs::path& p) {
  const auto j = json::parse(slurp(p));
  const auto& attrs = j.is_array() ? j : j.at("attributes");
  std::vector<AttributeSpec> out;
  for (const auto& a : attrs) {
    AttributeSpec s;
    s.name = a.at("name").get<std::string>();
    if (a.contains("values")) {
      s.values = a["values"].get<std::vector<std::string>>();
    } else {
      s = numbered_attribute(s.name, a.at("classes").get<std::size_t>());
    }
    s.sensitive = a.value("sensitive", false);
    out.push_back(std::move(s));
  }
  return out;
}

EngineConfig engine_config(const std::string& algorithm, const std::string& config_file) {
  EngineConfig cfg;
  if (!config_file.empty()) cfg = apply_overrides(cfg, json::parse(slurp(config_file)));
  if (!algorithm.empty()) cfg.algorithm = parse_algorithm(algorithm);
  return cfg;
}

// Numeric matrix from an FCPE file or a CSV (optional header row).
DenseMatrix load_numeric(const fs::path& p) {
  if (p.extension() == ".fcpe") return matrix_from_view(read_matrix_file(p));
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  DenseMatrix m;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    std::vector<double> row;
    try {
      for (const auto& c : cells) row.push_back(std::stod(c));
    } catch (const std::invalid_argument&) {
      if (first) {
        first = false;
        continue;
      }
      throw std::invalid_argument(p.string() + ": non-numeric row '" + line + "'");
    }
    first = false;
    if (m.cols == 0) m.cols = row.size();
    if (row.size() != m.cols) throw std::invalid_argument(p.string() + ": ragged rows");
    m.data.insert(m.data.end(), row.begin(), row.end());
    ++m.rows;
  }
  return m;
}

// Categorical columns from a CSV with a header row.
std::vector<CategoricalFactor> load_categorical(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument(p.string() + ": empty file");
  std::vector<CategoricalFactor> out;
  for (const auto& name : split(line, ',')) out.push_back({name, {}});
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    if (cells.size() != out.size()) throw std::invalid_argument(p.string() + ": ragged rows");
    for (std::size_t c = 0; c < cells.size(); ++c) out[c].values.push_back(cells[c]);
  }
  return out;
}

DenseMatrix encode_factors(const std::vector<CategoricalFactor>& factors) {
  if (factors.empty()) throw std::invalid_argument("no factors");
  DenseMatrix v(factors.front().values.size(), factors.size());
  for (std::size_t j = 0; j < factors.size(); ++j) {
    std::set<std::string> classes(factors[j].values.begin(), factors[j].values.end());
    const std::vector<std::string> sorted(classes.begin(), classes.end());
    for (std::size_t i = 0; i < v.rows; ++i) {
      v.at(i, j) = static_cast<double>(
          std::lower_bound(sorted.begin(), sorted.end(), factors[j].values[i]) - sorted.begin());
    }
  }
  return v;
}

json vec_json(const std::vector<double>& xs) {
  json a = json::array();
  for (double x : xs) a.push_back(std::isnan(x) ? json(nullptr) : json(x));
  return a;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Interactive facial image retrieval with contrastive personalization"};
  app.set_config("--config", "", "TOML/INI file with option defaults");
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus");
  std::size_t synth_n = 2000;
  std::string synth_schema, synth_views = "facenet:128,hog:64,mix:32", synth_out;
  double synth_noise = 0.1, synth_scale = 1.0;
  std::uint64_t synth_seed = 0;
  synth->add_option("--n", synth_n, "Number of records")->capture_default_str();
  synth->add_option("--schema", synth_schema, "Attribute schema JSON (default: face-like, 8 attributes)");
  synth->add_option("--views", synth_views, "Views as name:dim[:noise],...")->capture_default_str();
  synth->add_option("--noise", synth_noise, "Default per-view noise sigma")->capture_default_str();
  synth->add_option("--prototype-scale", synth_scale)->capture_default_str();
  synth->add_option("--seed", synth_seed)->capture_default_str();
  synth->add_option("--out", synth_out, "Output directory")->required();

  // simulate
  auto* sim = app.add_subcommand("simulate", "Run one simulated retrieval session");
  std::string sim_corpus, sim_alg = "faircop", sim_views = "facenet+hog+mix", sim_target, sim_log,
                          sim_engine_cfg, sim_init_net, sim_out;
  std::uint64_t sim_seed = 0;
  std::size_t sim_max = 1000;
  sim->add_option("--corpus", sim_corpus)->required();
  sim->add_option("--algorithm", sim_alg, "faircop|centroid|rocchio|random")->capture_default_str();
  sim->add_option("--views", sim_views, "Views the simulated user compares on")->capture_default_str();
  sim->add_option("--seed", sim_seed)->capture_default_str();
  sim->add_option("--target", sim_target, "Plant this image id as the target");
  sim->add_option("--max-iterations", sim_max)->capture_default_str();
  sim->add_option("--engine-config", sim_engine_cfg, "Engine config JSON");
  sim->add_option("--init-net", sim_init_net, "Network checkpoint to start from");
  sim->add_option("--log", sim_log, "Write the per-iteration JSONL log here");
  sim->add_option("--out", sim_out, "Write the summary JSON here instead of stdout");

  // experiment
  auto* exp = app.add_subcommand("experiment", "Run the multi-algorithm simulation grid");
  std::string exp_corpus, exp_algs = "faircop,rocchio,random", exp_combos = "facenet+hog+mix",
                          exp_engine_cfg, exp_out;
  std::size_t exp_runs = 10, exp_jobs = 1, exp_max = 1000;
  std::uint64_t exp_seed = 0;
  exp->add_option("--corpus", exp_corpus)->required();
  exp->add_option("--algorithms", exp_algs)->capture_default_str();
  exp->add_option("--views-combos", exp_combos, "Comma-separated view combos, e.g. mix,facenet+mix")
      ->capture_default_str();
  exp->add_option("--runs", exp_runs)->capture_default_str();
  exp->add_option("--seed", exp_seed)->capture_default_str();
  exp->add_option("--jobs", exp_jobs)->capture_default_str();
  exp->add_option("--max-iterations", exp_max)->capture_default_str();
  exp->add_option("--engine-config", exp_engine_cfg, "Engine config JSON applied to every algorithm");
  exp->add_option("--out", exp_out, "Report directory")->required();

  // metrics
  auto* met = app.add_subcommand("metrics", "Representation metrics");
  met->require_subcommand(1);
  std::string m_emb, m_factors, m_corpus, m_view, m_out, m_regressor = "boosted_stumps", m_selected;
  std::uint64_t m_seed = 0;
  std::size_t m_k = 5;
  auto add_inputs = [&](CLI::App* c) {
    c->add_option("--embeddings", m_emb, "FCPE or CSV matrix");
    c->add_option("--factors", m_factors, "CSV with a header row");
    c->add_option("--corpus", m_corpus, "Take embeddings and factors from a corpus instead");
    c->add_option("--view", m_view, "Corpus view to use")->default_val("mix");
    c->add_option("--seed", m_seed)->capture_default_str();
    c->add_option("--out", m_out);
  };
  auto* m_dci = met->add_subcommand("dci", "Disentanglement, completeness, informativeness");
  add_inputs(m_dci);
  m_dci->add_option("--regressor", m_regressor, "boosted_stumps|ridge")->capture_default_str();
  auto* m_fair = met->add_subcommand("fairness", "Pairwise attribute fairness heatmaps");
  add_inputs(m_fair);
  m_fair->add_option("--k", m_k, "Neighbors for the K-NN classifier")->capture_default_str();
  auto* m_dist = met->add_subcommand("dist", "Attribute distribution of a selection vs the corpus");
  m_dist->add_option("--corpus", m_corpus)->required();
  m_dist->add_option("--selected", m_selected, "File with one image id per line")->required();
  m_dist->add_option("--out", m_out);

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "Contrastive pretraining of the projection network");
  std::string pre_corpus, pre_view = "mix", pre_out, pre_hidden = "128";
  PretrainConfig pcfg;
  std::size_t pre_output = 64;
  pre->add_option("--corpus", pre_corpus)->required();
  pre->add_option("--view", pre_view)->capture_default_str();
  pre->add_option("--steps", pcfg.steps)->capture_default_str();
  pre->add_option("--batch-size", pcfg.batch_size)->capture_default_str();
  pre->add_option("--noise", pcfg.noise_sigma)->capture_default_str();
  pre->add_option("--lr", pcfg.train.learning_rate)->capture_default_str();
  pre->add_option("--tau", pcfg.train.tau)->capture_default_str();
  pre->add_option("--weight-decay", pcfg.weight_decay)->capture_default_str();
  pre->add_option("--seed", pcfg.train.seed)->capture_default_str();
  pre->add_option("--hidden", pre_hidden, "Hidden widths, comma separated")->capture_default_str();
  pre->add_option("--output-dim", pre_output)->capture_default_str();
  pre->add_flag("--positive-in-denominator", pcfg.include_positive_in_denominator);
  pre->add_option("--out", pre_out, "Checkpoint JSON")->required();

  // serve
  auto* srv = app.add_subcommand("serve", "Run the HTTP session service");
  std::string srv_cfg, srv_corpus, srv_images, srv_addr, srv_data;
  srv->add_option("--service-config", srv_cfg, "Service config JSON");
  srv->add_option("--corpus", srv_corpus);
  srv->add_option("--image-root", srv_images);
  srv->add_option("--addr", srv_addr, "host:port");
  srv->add_option("--data-dir", srv_data);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      SynthConfig cfg;
      cfg.n = synth_n;
      cfg.attributes = synth_schema.empty() ? face_like_schema() : load_schema(synth_schema);
      cfg.views = parse_view_specs(synth_views, synth_noise);
      cfg.seed = synth_seed;
      cfg.prototype_scale = synth_scale;
      save_corpus(synthesize_corpus(cfg), synth_out);
      std::cerr << "wrote " << synth_n << " records to " << synth_out << "\n";
    } else if (*sim) {
      const auto corpus = load_corpus(sim_corpus);
      auto ecfg = engine_config(sim_alg, sim_engine_cfg);
      if (!sim_init_net.empty()) {
        ecfg.initial_net = std::make_shared<ProjectionNet>(from_checkpoint_json(slurp(sim_init_net)));
      }
      SimulatorConfig scfg;
      scfg.weights = parse_view_combo(sim_views).weights;
      scfg.max_iterations = sim_max;
      SimulationOptions opts;
      if (!sim_target.empty()) opts.planted_target = sim_target;
      const auto log = run_simulation(corpus, scfg, ecfg, sim_seed, opts);
      if (!sim_log.empty()) emit(log.to_jsonl(), sim_log);
      json summary{{"algorithm", log.algorithm},    {"target", log.target},
                   {"seed", log.seed},              {"converged", log.converged},
                   {"iterations", log.n_iterations}, {"max_iterations", log.max_iterations}};
      summary["ar"] = log.iterations.empty() ? json(nullptr) : json(average_relevance(log));
      const bool scored = std::any_of(log.iterations.begin(), log.iterations.end(),
                                      [](const IterationRecord& r) { return r.target_rank.has_value(); });
      summary["pr"] = scored ? json(percentile_rank(log)) : json(nullptr);
      emit(summary.dump(2) + "\n", sim_out);
    } else if (*exp) {
      const auto corpus = load_corpus(exp_corpus);
      ExperimentConfig cfg;
      for (const auto& a : split(exp_algs, ',')) cfg.algorithms.push_back(engine_config(a, exp_engine_cfg));
      for (const auto& c : split(exp_combos, ',')) cfg.combos.push_back(parse_view_combo(c));
      cfg.runs_per_cell = exp_runs;
      cfg.seed = exp_seed;
      cfg.jobs = exp_jobs;
      cfg.simulator.max_iterations = exp_max;
      const auto report = run_experiment(corpus, cfg);
      fs::create_directories(exp_out);
      emit(report.to_csv(), (fs::path(exp_out) / "report.csv").string());
      emit(report.to_json().dump(2) + "\n", (fs::path(exp_out) / "report.json").string());
      emit(report.to_markdown(), (fs::path(exp_out) / "report.md").string());
      std::cout << report.to_markdown();
    } else if (*met) {
      if (*m_dist) {
        const auto corpus = load_corpus(m_corpus);
        std::vector<std::string> ids;
        std::istringstream in(slurp(m_selected));
        for (std::string line; std::getline(in, line);) {
          if (!line.empty()) ids.push_back(line);
        }
        json out = json::array();
        for (const auto& d : distribution_similarity(corpus, ids)) {
          out.push_back({{"attribute", d.attribute},
                         {"classes", d.classes},
                         {"full", d.full},
                         {"selected", d.selected},
                         {"total_variation", d.total_variation}});
        }
        emit(out.dump(2) + "\n", m_out);
        return 0;
      }
      DenseMatrix z;
      std::vector<CategoricalFactor> factors;
      if (!m_corpus.empty()) {
        const auto corpus = load_corpus(m_corpus);
        z = matrix_from_view(corpus.view(m_view));
        factors = factors_from_corpus(corpus);
      } else {
        if (m_emb.empty() || m_factors.empty()) {
          throw std::invalid_argument("need --embeddings and --factors, or --corpus");
        }
        z = load_numeric(m_emb);
        factors = load_categorical(m_factors);
      }
      if (*m_dci) {
        RegressionConfig rc;
        rc.regressor = parse_regressor(m_regressor);
        rc.seed = m_seed;
        const auto v = encode_factors(factors);
        const auto scores = dci(fit_importance(z, v, rc));
        const auto info = informativeness(z, v, rc);
        json names = json::array();
        for (const auto& f : factors) names.push_back(f.name);
        emit(json{{"disentanglement", scores.disentanglement},
                  {"completeness", scores.completeness},
                  {"informativeness", info.informativeness},
                  {"factors", names},
                  {"completeness_per_factor", vec_json(scores.completeness_per_factor)},
                  {"informativeness_per_factor", vec_json(info.per_factor)},
                  {"disentanglement_per_latent", vec_json(scores.disentanglement_per_latent)},
                  {"warnings", scores.warnings},
                  {"regressor", m_regressor},
                  {"informativeness_norm", "1 - MAE on min-max scaled factors"}}
                     .dump(2) +
                 "\n",
             m_out);
      } else {
        const auto rep = fairness(z, factors, m_k, m_seed);
        json pairs = json::array();
        for (const auto& p : rep.pairs) {
          pairs.push_back({{"target", p.target},
                           {"sensitive", p.sensitive},
                           {"target_classes", p.target_classes},
                           {"sensitive_classes", p.sensitive_classes},
                           {"cells", p.cells},
                           {"f_score", p.f_score},
                           {"dp_gap", p.dp_gap}});
        }
        emit(json{{"f_score", rep.f_score},
                  {"dp_gap", rep.dp_gap},
                  {"k", m_k},
                  {"split_seed", rep.split_seed_used},
                  {"pairs", pairs}}
                     .dump(2) +
                 "\n",
             m_out);
      }
    } else if (*pre) {
      const auto corpus = load_corpus(pre_corpus);
      const auto& view = corpus.view(pre_view);
      std::vector<std::size_t> hidden;
      for (const auto& h : split(pre_hidden, ',')) hidden.push_back(std::stoul(h));
      auto net = init_net(view.dim, hidden, pre_output, pcfg.train.seed);
      const auto result = pretrain(std::move(net), view, pcfg);
      emit(to_checkpoint_json(result.net), pre_out);
      if (!result.losses.empty()) {
        std::cerr << "pretrain: " << result.losses.size() << " steps, loss "
                  << result.losses.front() << " -> " << result.losses.back() << "\n";
      }
    } else if (*srv) {
      auto cfg = load_service_config(srv_cfg.empty() ? std::nullopt
                                                     : std::optional<fs::path>(srv_cfg));
      if (!srv_corpus.empty()) cfg.corpus_path = srv_corpus;
      if (!srv_images.empty()) cfg.image_root = srv_images;
      if (!srv_data.empty()) cfg.data_dir = srv_data;
      if (!srv_addr.empty()) {
        const auto colon = srv_addr.rfind(':');
        if (colon == std::string::npos) throw std::invalid_argument("--addr must be host:port");
        cfg.host = srv_addr.substr(0, colon);
        cfg.port = std::stoi(srv_addr.substr(colon + 1));
      }
      cfg.validate();
      auto corpus = std::make_shared<const Corpus>(load_corpus(cfg.corpus_path));
      Service service(corpus, cfg);
      serve(service);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
