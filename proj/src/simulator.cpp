#include "faircop/simulator.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <sstream>

namespace faircop {

using json = nlohmann::json;

void SimulatorConfig::validate(const Corpus& corpus) const {
  bool any = false;
  for (const auto& [name, w] : weights) {
    if (!corpus.has_view(name)) throw std::invalid_argument("simulator: corpus has no view '" + name + "'");
    if (!(w >= 0)) throw std::invalid_argument("simulator: weights must be >= 0");
    any = any || w > 0;
  }
  if (!any) throw std::invalid_argument("simulator: at least one weight must be positive");
  if (update_period < 1) throw std::invalid_argument("simulator: update_period must be >= 1");
  if (std::abs(decay + blend - 1.0) > 1e-12 || decay < 0 || blend < 0) {
    throw std::invalid_argument("simulator: decay + blend must equal 1");
  }
  if (max_iterations < 1) throw std::invalid_argument("simulator: max_iterations must be >= 1");
}

double weighted_similarity(std::size_t a, std::size_t b, const Corpus& corpus,
                           const ViewWeights& weights) {
  double num = 0.0;
  double den = 0.0;
  for (const auto& [name, w] : weights) {
    if (w == 0) continue;
    const auto& view = corpus.view(name);
    num += w * cosine_sim(to_vector(view.row(a)), to_vector(view.row(b)));
    den += w;
  }
  if (den <= 0) throw std::invalid_argument("weighted_similarity: weights sum to zero");
  return num / den;
}

double weighted_similarity(const std::string& a_id, const std::string& b_id, const Corpus& corpus,
                           const ViewWeights& weights) {
  return weighted_similarity(corpus.require_index(a_id), corpus.require_index(b_id), corpus, weights);
}

double init_threshold(const Corpus& corpus, std::size_t target, const SimulatorConfig& cfg,
                      Rng& rng) {
  std::vector<std::size_t> others;
  others.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (i != target) others.push_back(i);
  }
  // a lone image has nothing to compare against; it is its own best match
  if (others.empty()) return 0.0;
  const auto sample = sample_without_replacement(std::move(others), cfg.threshold_sample_size, rng);
  double sum = 0.0;
  for (auto s : sample) sum += weighted_similarity(target, s, corpus, cfg.weights);
  return sum / static_cast<double>(sample.size());
}

Judgment judge(std::span<const std::size_t> shown, SimState& state, const Corpus& corpus,
               const SimulatorConfig& cfg) {
  Judgment j;
  for (auto s : shown) {
    const double sim_val = weighted_similarity(state.target, s, corpus, cfg.weights);
    if (sim_val > state.thr) {
      j.similar.push_back(s);
      state.stemp[s] = sim_val;
    } else {
      j.dissimilar.push_back(s);
    }
  }
  return j;
}

double update_threshold(SimState& state, const SimulatorConfig& cfg) {
  if (state.stemp.empty()) return state.thr;
  double u = 0.0;
  for (const auto& [_, v] : state.stemp) u += v;
  u /= static_cast<double>(state.stemp.size());
  state.thr = cfg.decay * state.thr + cfg.blend * u;
  state.stemp.clear();
  return state.thr;
}

std::string SimulationLog::to_jsonl() const {
  std::ostringstream out;
  for (const auto& r : iterations) {
    json j{{"iter", r.iter},       {"shown", r.shown},     {"similar", r.similar},
           {"thr", r.thr},         {"trained", r.trained}, {"candidates", r.candidates}};
    if (r.loss) j["loss"] = *r.loss;
    if (r.target_rank) j["target_rank"] = *r.target_rank;
    out << j.dump() << '\n';
  }
  json summary{{"algorithm", algorithm},   {"target", target},
               {"seed", seed},             {"converged", converged},
               {"iterations", n_iterations}, {"max_iterations", max_iterations}};
  out << json{{"summary", summary}}.dump() << '\n';
  return out.str();
}

SimulationLog SimulationLog::from_jsonl(const std::string& text) {
  SimulationLog log;
  std::istringstream in(text);
  std::string line;
  bool have_summary = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = json::parse(line);
    if (j.contains("summary")) {
      const auto& s = j["summary"];
      log.algorithm = s.at("algorithm").get<std::string>();
      log.target = s.at("target").get<std::string>();
      log.seed = s.at("seed").get<std::uint64_t>();
      log.converged = s.at("converged").get<bool>();
      log.n_iterations = s.at("iterations").get<std::size_t>();
      log.max_iterations = s.at("max_iterations").get<std::size_t>();
      have_summary = true;
      continue;
    }
    IterationRecord r;
    r.iter = j.at("iter").get<std::size_t>();
    r.shown = j.at("shown").get<std::vector<std::string>>();
    r.similar = j.at("similar").get<std::vector<std::string>>();
    r.thr = j.at("thr").get<double>();
    r.trained = j.value("trained", false);
    r.candidates = j.value("candidates", std::size_t{0});
    if (j.contains("loss")) r.loss = j["loss"].get<double>();
    if (j.contains("target_rank")) r.target_rank = j["target_rank"].get<std::size_t>();
    log.iterations.push_back(std::move(r));
  }
  if (!have_summary) throw std::invalid_argument("simulation log has no summary line");
  return log;
}

SimulationLog run_simulation(const Corpus& corpus, const SimulatorConfig& sim_cfg,
                             EngineConfig engine_cfg, std::uint64_t seed,
                             const SimulationOptions& options) {
  const auto started = std::chrono::steady_clock::now();
  sim_cfg.validate(corpus);
  engine_cfg.seed = seed;
  engine_cfg.max_iterations = sim_cfg.max_iterations;

  std::seed_seq seq{seed, std::uint64_t{0x51}};
  Rng rng(seq);
  SimState state;
  if (options.planted_target) {
    state.target = corpus.require_index(*options.planted_target);
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, corpus.size() - 1);
    state.target = pick(rng);
  }
  state.thr = init_threshold(corpus, state.target, sim_cfg, rng);

  SimulationLog log;
  log.algorithm = to_string(engine_cfg.algorithm);
  log.target = corpus.id(state.target);
  log.seed = seed;
  log.max_iterations = sim_cfg.max_iterations;

  Session session(corpus, options.constraints, std::move(engine_cfg));
  while (true) {
    const auto& shown = session.batch();
    if (std::find(shown.begin(), shown.end(), state.target) != shown.end()) {
      log.converged = true;
      log.n_iterations = session.report_target(log.target);
      break;
    }
    if (session.status() != SessionStatus::active) break;

    IterationRecord rec;
    rec.iter = state.iter;
    rec.thr = state.thr;
    for (auto idx : shown) rec.shown.push_back(corpus.id(idx));
    const Judgment j = judge(shown, state, corpus, sim_cfg);
    for (auto idx : j.similar) rec.similar.push_back(corpus.id(idx));

    const auto step = session.submit_feedback_indices(j.similar);
    rec.trained = step.trained;
    rec.loss = step.loss;
    const auto& ranking = session.last_ranking();
    rec.candidates = ranking.size();
    for (std::size_t r = 0; r < ranking.size(); ++r) {
      if (ranking[r].index == state.target) {
        rec.target_rank = r;
        break;
      }
    }
    log.iterations.push_back(std::move(rec));

    ++state.iter;
    if (state.iter % sim_cfg.update_period == 0) update_threshold(state, sim_cfg);
  }
  if (!log.converged) log.n_iterations = sim_cfg.max_iterations;
  log.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return log;
}

}  // namespace faircop
