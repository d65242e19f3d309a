#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "faircop/corpus.hpp"
#include "faircop/engine.hpp"
#include "json.hpp"

namespace faircop {

using ViewWeights = std::map<std::string, double>;

struct SimulatorConfig {
  ViewWeights weights{{"facenet", 1.0}, {"hog", 1.0}, {"mix", 1.0}};
  std::size_t threshold_sample_size = 1000;
  std::size_t update_period = 15;
  double decay = 0.95;
  double blend = 0.05;
  std::size_t max_iterations = 1000;

  void validate(const Corpus& corpus) const;
};

/// Weight-normalized mean of per-view cosine similarities.
double weighted_similarity(std::size_t a, std::size_t b, const Corpus& corpus,
                           const ViewWeights& weights);
double weighted_similarity(const std::string& a_id, const std::string& b_id, const Corpus& corpus,
                           const ViewWeights& weights);

struct SimState {
  std::size_t target = 0;
  double thr = 0.0;
  // Similar-judged images since the last threshold update, with their SimVal.
  std::map<std::size_t, double> stemp;
  std::size_t iter = 0;
};

/// Mean weighted similarity of the target to min(n-1, sample size) other images.
double init_threshold(const Corpus& corpus, std::size_t target, const SimulatorConfig& cfg,
                      Rng& rng);

struct Judgment {
  std::vector<std::size_t> similar;
  std::vector<std::size_t> dissimilar;
};

/// SimVal > thr (strict) marks an image similar; similar ones join STemp.
Judgment judge(std::span<const std::size_t> shown, SimState& state, const Corpus& corpus,
               const SimulatorConfig& cfg);

/// thr <- decay*thr + blend*mean(STemp); clears STemp. No-op on an empty STemp.
double update_threshold(SimState& state, const SimulatorConfig& cfg);

struct IterationRecord {
  std::size_t iter = 0;
  std::vector<std::string> shown;
  std::vector<std::string> similar;
  double thr = 0.0;
  bool trained = false;
  std::optional<double> loss;
  // Target position among the candidates the engine scored this round.
  std::optional<std::size_t> target_rank;
  std::size_t candidates = 0;
};

struct SimulationLog {
  std::string algorithm;
  std::string target;
  std::uint64_t seed = 0;
  std::vector<IterationRecord> iterations;
  bool converged = false;
  std::size_t n_iterations = 0;
  std::size_t max_iterations = 0;
  double wall_seconds = 0.0;  // not serialized; keeps the JSONL reproducible

  std::string to_jsonl() const;
  static SimulationLog from_jsonl(const std::string& text);
};

struct SimulationOptions {
  std::optional<std::string> planted_target;
  AttributeFilter constraints;
};

/// Drives one engine session with the simulated user until the target shows
/// up in a batch or max_iterations rounds pass.
SimulationLog run_simulation(const Corpus& corpus, const SimulatorConfig& sim_cfg,
                             EngineConfig engine_cfg, std::uint64_t seed,
                             const SimulationOptions& options = {});

// --- experiments -------------------------------------------------------------

struct ViewCombo {
  std::string name;  // e.g. "facenet+mix+hog"
  ViewWeights weights;
};

/// "facenet+mix" -> weight 1 on each listed view.
ViewCombo parse_view_combo(const std::string& spec);

struct RunSummary {
  std::uint64_t seed = 0;
  std::string target;
  bool converged = false;
  std::size_t n_iterations = 0;
  double ar = 0.0;
  std::optional<double> pr;
};

struct ExperimentCell {
  std::string algorithm;
  std::string combo;
  std::vector<RunSummary> runs;
  double aci = 0.0;
  double ar = 0.0;
  std::optional<double> pr;
};

struct ExperimentReport {
  std::vector<std::string> algorithms;
  std::vector<ViewCombo> combos;
  std::size_t runs_per_cell = 0;
  std::vector<ExperimentCell> cells;  // algorithm-major, then combo

  const ExperimentCell& cell(const std::string& algorithm, const std::string& combo) const;
  std::string to_csv() const;
  nlohmann::json to_json() const;
  std::string to_markdown() const;
};

struct ExperimentConfig {
  std::vector<EngineConfig> algorithms;
  std::vector<ViewCombo> combos;
  SimulatorConfig simulator;
  std::size_t runs_per_cell = 10;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
};

/// Run r of every cell uses seed + r, so all algorithms chase the same targets.
ExperimentReport run_experiment(const Corpus& corpus, const ExperimentConfig& cfg);

}  // namespace faircop
