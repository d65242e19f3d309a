#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "faircop/corpus.hpp"
#include "faircop/network.hpp"
#include "json.hpp"

namespace faircop {

enum class Algorithm { faircop, centroid, rocchio, random };
enum class SessionStatus { active, converged, exhausted, abandoned };

std::string to_string(Algorithm a);
std::string to_string(SessionStatus s);
Algorithm parse_algorithm(const std::string& name);

struct RocchioParams {
  double alpha = 1.0;
  double beta = 0.75;
  double gamma = 0.15;
};

struct EngineConfig {
  Algorithm algorithm = Algorithm::faircop;
  std::size_t k = 12;
  std::size_t u = 4;
  std::size_t prev_samp = 24;
  std::size_t epochs = 10;
  std::size_t train_every = 2;
  std::size_t explore_history_every = 3;
  LossKind loss_kind = LossKind::scloss;
  double tau = 0.5;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::adam;
  // Input to f: a single view, or (when view_weights is non-empty) the
  // concatenation of the weighted views in name order.
  std::string view_name = "mix";
  std::map<std::string, double> view_weights;
  std::vector<std::size_t> hidden_dims{128};
  std::size_t output_dim = 64;
  std::size_t max_iterations = 1000;
  std::uint64_t seed = 0;
  RocchioParams rocchio;
  // Replaces the freshly initialized network (pretrained or hand-built).
  std::shared_ptr<const ProjectionNet> initial_net;

  std::size_t batch_size() const { return k + u; }
  void validate(const Corpus& corpus) const;
};

nlohmann::json to_json(const EngineConfig& cfg);
/// Applies the fields present in `overrides` on top of `base`.
EngineConfig apply_overrides(EngineConfig base, const nlohmann::json& overrides);

class SessionError : public std::runtime_error {
 public:
  enum class Kind { not_active, not_in_batch, no_match };
  SessionError(Kind kind, const std::string& what, std::vector<std::string> offenders = {})
      : std::runtime_error(what), kind_(kind), offenders_(std::move(offenders)) {}
  Kind kind() const { return kind_; }
  const std::vector<std::string>& offenders() const { return offenders_; }

 private:
  Kind kind_;
  std::vector<std::string> offenders_;
};

struct FeedbackEvent {
  std::size_t iter = 0;
  std::vector<std::string> shown;
  std::vector<std::string> similar;
  std::int64_t timestamp_ms = 0;
  bool trained = false;
  std::optional<double> loss;
  std::optional<std::string> reported;  // set on the closing report event

  bool operator==(const FeedbackEvent&) const = default;
};

nlohmann::json to_json(const FeedbackEvent& ev);
FeedbackEvent feedback_event_from_json(const nlohmann::json& j);

struct ScoredCandidate {
  std::size_t index = 0;
  double score = 0.0;
};

struct StepResult {
  SessionStatus status = SessionStatus::active;
  std::vector<std::size_t> batch;
  bool trained = false;
  std::optional<double> loss;
};

/// Rows of the engine's input space (one view or a weighted concatenation).
struct BaseEmbeddings {
  std::size_t dim = 0;
  std::vector<double> data;
  std::span<const double> row(std::size_t i) const { return {data.data() + i * dim, dim}; }
};

BaseEmbeddings make_base_embeddings(const Corpus& corpus, const EngineConfig& cfg);

/// Sorts by score descending, ties by id ascending.
void rank_candidates(const Corpus& corpus, std::vector<ScoredCandidate>& scored);

/// Classical Rocchio query update; an empty set contributes nothing.
struct RocchioState {
  Vector query;
  RocchioParams params;
};
void rocchio_update(RocchioState& state, const std::vector<Vector>& similar,
                    const std::vector<Vector>& dissimilar);

/// Top-`count` candidates by cosine similarity to `query`.
std::vector<ScoredCandidate> rank_by_cosine(const Corpus& corpus, const BaseEmbeddings& base,
                                            std::span<const std::size_t> candidates,
                                            const Vector& query);

/// Uniform sample without replacement; returns fewer when the pool is small.
std::vector<std::size_t> sample_without_replacement(std::vector<std::size_t> pool,
                                                    std::size_t count, Rng& rng);

/// One relevance-feedback session over a shared, immutable corpus.
class Session {
 public:
  /// Draws the first stratified batch from the records matching `constraints`.
  Session(const Corpus& corpus, AttributeFilter constraints, EngineConfig cfg);

  StepResult submit_feedback(const std::vector<std::string>& similar_ids);
  StepResult submit_feedback_indices(std::span<const std::size_t> similar);

  /// Closes the session as converged; returns N, the iteration count.
  std::size_t report_target(const std::string& id);

  const Corpus& corpus() const { return *corpus_; }
  const EngineConfig& config() const { return cfg_; }
  const AttributeFilter& constraints() const { return constraints_; }
  SessionStatus status() const { return status_; }
  std::size_t iteration() const { return iter_; }
  const std::vector<std::size_t>& batch() const { return batch_; }
  std::vector<std::string> batch_ids() const;
  const std::vector<std::size_t>& similar_all() const { return similar_all_; }
  const std::vector<std::size_t>& dissimilar_all() const { return dissimilar_all_; }
  std::size_t remaining_count() const { return remaining_count_; }
  bool in_remaining(std::size_t index) const { return in_rem_[index]; }
  const ProjectionNet& net() const { return net_; }
  const std::vector<FeedbackEvent>& event_log() const { return events_; }
  std::optional<std::size_t> converged_at() const { return converged_at_; }

  /// Candidates scored in the last step, best first. Empty when the last
  /// batch came from the random fallback (or no feedback yet).
  const std::vector<ScoredCandidate>& last_ranking() const { return ranking_; }

  /// f(embed(record)) for FaIRCoP; the base embedding for the baselines.
  Vector project(std::size_t index) const;

  /// Throws std::logic_error when the set partition is broken.
  void check_invariants() const;

 private:
  enum class Label : std::uint8_t { unseen, pending, similar, dissimilar };

  void relabel(std::size_t index, Label label);
  bool train_anchored(const std::vector<std::size_t>& s, const std::vector<std::size_t>& d,
                      double& loss);
  std::vector<std::size_t> fallback_batch(std::size_t count);
  std::vector<std::size_t> next_batch_scored(std::size_t iter_before);
  std::vector<std::size_t> next_batch_rocchio(const std::vector<std::size_t>& s,
                                              const std::vector<std::size_t>& d);
  std::vector<std::size_t> next_batch_random();
  std::vector<std::size_t> rem_indices() const;
  void take_from_rem(const std::vector<std::size_t>& shown);

  const Corpus* corpus_;
  AttributeFilter constraints_;
  EngineConfig cfg_;
  std::shared_ptr<const BaseEmbeddings> base_;
  ProjectionNet net_;
  OptimizerState opt_;
  Rng batch_rng_;
  Rng train_rng_;
  RocchioState rocchio_;

  std::vector<Label> label_;
  std::vector<bool> in_rem_;
  std::size_t remaining_count_ = 0;
  std::vector<std::size_t> similar_all_;
  std::vector<std::size_t> dissimilar_all_;
  std::vector<std::size_t> batch_;
  std::vector<ScoredCandidate> ranking_;
  std::size_t iter_ = 0;
  SessionStatus status_ = SessionStatus::active;
  std::optional<std::size_t> converged_at_;
  std::vector<FeedbackEvent> events_;
};

}  // namespace faircop
