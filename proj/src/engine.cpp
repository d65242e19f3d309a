#include "faircop/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <set>
#include <unordered_set>

namespace faircop {

using json = nlohmann::json;

// --- names -------------------------------------------------------------------

std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::faircop: return "faircop";
    case Algorithm::centroid: return "centroid";
    case Algorithm::rocchio: return "rocchio";
    case Algorithm::random: return "random";
  }
  return "?";
}

std::string to_string(SessionStatus s) {
  switch (s) {
    case SessionStatus::active: return "active";
    case SessionStatus::converged: return "converged";
    case SessionStatus::exhausted: return "exhausted";
    case SessionStatus::abandoned: return "abandoned";
  }
  return "?";
}

Algorithm parse_algorithm(const std::string& name) {
  if (name == "faircop") return Algorithm::faircop;
  if (name == "centroid" || name == "facefetch") return Algorithm::centroid;
  if (name == "rocchio") return Algorithm::rocchio;
  if (name == "random") return Algorithm::random;
  throw std::invalid_argument("unknown algorithm '" + name + "'");
}

// --- config ------------------------------------------------------------------

void EngineConfig::validate(const Corpus& corpus) const {
  if (k < 1) throw std::invalid_argument("engine: k must be >= 1");
  if (epochs < 1) throw std::invalid_argument("engine: epochs must be >= 1");
  if (train_every < 1 || explore_history_every < 1) {
    throw std::invalid_argument("engine: periods must be >= 1");
  }
  if (!(tau > 0)) throw std::invalid_argument("engine: tau must be > 0");
  if (!(learning_rate >= 0)) throw std::invalid_argument("engine: learning_rate must be >= 0");
  if (output_dim < 1) throw std::invalid_argument("engine: output_dim must be >= 1");
  if (max_iterations < 1) throw std::invalid_argument("engine: max_iterations must be >= 1");
  if (rocchio.alpha < 0 || rocchio.beta < 0 || rocchio.gamma < 0) {
    throw std::invalid_argument("engine: Rocchio weights must be >= 0");
  }
  if (view_weights.empty()) {
    if (!corpus.has_view(view_name)) {
      throw std::invalid_argument("engine: corpus has no view '" + view_name + "'");
    }
  } else {
    bool any = false;
    for (const auto& [name, w] : view_weights) {
      if (!corpus.has_view(name)) throw std::invalid_argument("engine: corpus has no view '" + name + "'");
      if (!(w >= 0)) throw std::invalid_argument("engine: view weight must be >= 0");
      any = any || w > 0;
    }
    if (!any) throw std::invalid_argument("engine: at least one view weight must be positive");
  }
}

namespace {

std::string loss_name(LossKind k) { return k == LossKind::scloss ? "scloss" : "scloss_alt"; }

LossKind parse_loss(const std::string& s) {
  if (s == "scloss") return LossKind::scloss;
  if (s == "scloss_alt") return LossKind::scloss_alt;
  throw std::invalid_argument("unknown loss_kind '" + s + "'");
}

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "sgd") return OptimizerKind::sgd;
  throw std::invalid_argument("unknown optimizer '" + s + "'");
}

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

}  // namespace

json to_json(const EngineConfig& cfg) {
  return json{{"algorithm", to_string(cfg.algorithm)},
              {"k", cfg.k},
              {"u", cfg.u},
              {"prev_samp", cfg.prev_samp},
              {"epochs", cfg.epochs},
              {"train_every", cfg.train_every},
              {"explore_history_every", cfg.explore_history_every},
              {"loss_kind", loss_name(cfg.loss_kind)},
              {"tau", cfg.tau},
              {"learning_rate", cfg.learning_rate},
              {"optimizer", cfg.optimizer == OptimizerKind::adam ? "adam" : "sgd"},
              {"view_name", cfg.view_name},
              {"view_weights", cfg.view_weights},
              {"hidden_dims", cfg.hidden_dims},
              {"output_dim", cfg.output_dim},
              {"max_iterations", cfg.max_iterations},
              {"seed", cfg.seed},
              {"rocchio",
               {{"alpha", cfg.rocchio.alpha}, {"beta", cfg.rocchio.beta}, {"gamma", cfg.rocchio.gamma}}}};
}

EngineConfig apply_overrides(EngineConfig cfg, const json& o) {
  if (!o.is_object()) throw std::invalid_argument("config overrides must be a JSON object");
  static const std::set<std::string> known{
      "algorithm", "k", "u", "prev_samp", "epochs", "train_every", "explore_history_every",
      "loss_kind", "tau", "learning_rate", "optimizer", "view_name", "view_weights",
      "hidden_dims", "output_dim", "max_iterations", "seed", "rocchio"};
  for (const auto& [key, _] : o.items()) {
    if (!known.contains(key)) throw std::invalid_argument("unknown engine config field '" + key + "'");
  }
  try {
    if (o.contains("algorithm")) cfg.algorithm = parse_algorithm(o["algorithm"].get<std::string>());
    if (o.contains("k")) cfg.k = o["k"].get<std::size_t>();
    if (o.contains("u")) cfg.u = o["u"].get<std::size_t>();
    if (o.contains("prev_samp")) cfg.prev_samp = o["prev_samp"].get<std::size_t>();
    if (o.contains("epochs")) cfg.epochs = o["epochs"].get<std::size_t>();
    if (o.contains("train_every")) cfg.train_every = o["train_every"].get<std::size_t>();
    if (o.contains("explore_history_every")) {
      cfg.explore_history_every = o["explore_history_every"].get<std::size_t>();
    }
    if (o.contains("loss_kind")) cfg.loss_kind = parse_loss(o["loss_kind"].get<std::string>());
    if (o.contains("tau")) cfg.tau = o["tau"].get<double>();
    if (o.contains("learning_rate")) cfg.learning_rate = o["learning_rate"].get<double>();
    if (o.contains("optimizer")) cfg.optimizer = parse_optimizer(o["optimizer"].get<std::string>());
    if (o.contains("view_name")) cfg.view_name = o["view_name"].get<std::string>();
    if (o.contains("view_weights")) {
      cfg.view_weights = o["view_weights"].get<std::map<std::string, double>>();
    }
    if (o.contains("hidden_dims")) cfg.hidden_dims = o["hidden_dims"].get<std::vector<std::size_t>>();
    if (o.contains("output_dim")) cfg.output_dim = o["output_dim"].get<std::size_t>();
    if (o.contains("max_iterations")) cfg.max_iterations = o["max_iterations"].get<std::size_t>();
    if (o.contains("seed")) cfg.seed = o["seed"].get<std::uint64_t>();
    if (o.contains("rocchio")) {
      const auto& r = o["rocchio"];
      cfg.rocchio.alpha = r.value("alpha", cfg.rocchio.alpha);
      cfg.rocchio.beta = r.value("beta", cfg.rocchio.beta);
      cfg.rocchio.gamma = r.value("gamma", cfg.rocchio.gamma);
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("bad engine config value: ") + e.what());
  }
  return cfg;
}

json to_json(const FeedbackEvent& ev) {
  json j{{"iter", ev.iter},
         {"shown", ev.shown},
         {"similar", ev.similar},
         {"timestamp_ms", ev.timestamp_ms},
         {"trained", ev.trained}};
  if (ev.loss) j["loss"] = *ev.loss;
  if (ev.reported) j["reported"] = *ev.reported;
  return j;
}

FeedbackEvent feedback_event_from_json(const json& j) {
  FeedbackEvent ev;
  ev.iter = j.at("iter").get<std::size_t>();
  ev.shown = j.at("shown").get<std::vector<std::string>>();
  ev.similar = j.at("similar").get<std::vector<std::string>>();
  ev.timestamp_ms = j.value("timestamp_ms", std::int64_t{0});
  ev.trained = j.value("trained", false);
  if (j.contains("loss")) ev.loss = j["loss"].get<double>();
  if (j.contains("reported")) ev.reported = j["reported"].get<std::string>();
  return ev;
}

// --- helpers -----------------------------------------------------------------

BaseEmbeddings make_base_embeddings(const Corpus& corpus, const EngineConfig& cfg) {
  std::vector<std::pair<const EmbeddingView*, double>> parts;
  if (cfg.view_weights.empty()) {
    parts.emplace_back(&corpus.view(cfg.view_name), 1.0);
  } else {
    for (const auto& [name, w] : cfg.view_weights) {
      if (w > 0) parts.emplace_back(&corpus.view(name), w);
    }
  }
  BaseEmbeddings base;
  for (const auto& [view, _] : parts) base.dim += view->dim;
  base.data.resize(corpus.size() * base.dim);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    double* out = base.data.data() + i * base.dim;
    for (const auto& [view, w] : parts) {
      for (float x : view->row(i)) *out++ = w * static_cast<double>(x);
    }
  }
  return base;
}

void rank_candidates(const Corpus& corpus, std::vector<ScoredCandidate>& scored) {
  std::sort(scored.begin(), scored.end(), [&](const ScoredCandidate& a, const ScoredCandidate& b) {
    if (a.score != b.score) return a.score > b.score;
    return corpus.id(a.index) < corpus.id(b.index);
  });
}

void rocchio_update(RocchioState& state, const std::vector<Vector>& similar,
                    const std::vector<Vector>& dissimilar) {
  const auto& p = state.params;
  for (auto& q : state.query) q *= p.alpha;
  if (!similar.empty()) {
    const auto c = centroid(similar);
    if (c.size() != state.query.size()) throw std::invalid_argument("rocchio: dimension mismatch");
    for (std::size_t i = 0; i < c.size(); ++i) state.query[i] += p.beta * c[i];
  }
  if (!dissimilar.empty()) {
    const auto c = centroid(dissimilar);
    if (c.size() != state.query.size()) throw std::invalid_argument("rocchio: dimension mismatch");
    for (std::size_t i = 0; i < c.size(); ++i) state.query[i] -= p.gamma * c[i];
  }
}

std::vector<ScoredCandidate> rank_by_cosine(const Corpus& corpus, const BaseEmbeddings& base,
                                            std::span<const std::size_t> candidates,
                                            const Vector& query) {
  std::vector<ScoredCandidate> scored;
  scored.reserve(candidates.size());
  for (std::size_t idx : candidates) scored.push_back({idx, cosine_sim(base.row(idx), query)});
  rank_candidates(corpus, scored);
  return scored;
}

std::vector<std::size_t> sample_without_replacement(std::vector<std::size_t> pool,
                                                    std::size_t count, Rng& rng) {
  count = std::min(count, pool.size());
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(count);
  return pool;
}

// --- Session -----------------------------------------------------------------

namespace {

Rng derived_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{seed, stream};
  return Rng(seq);
}

}  // namespace

Session::Session(const Corpus& corpus, AttributeFilter constraints, EngineConfig cfg)
    : corpus_(&corpus),
      constraints_(std::move(constraints)),
      cfg_(std::move(cfg)),
      batch_rng_(derived_rng(cfg_.seed, 1)),
      train_rng_(derived_rng(cfg_.seed, 2)) {
  cfg_.validate(corpus);
  const auto matching = matching_indices(corpus, constraints_);
  if (matching.empty()) {
    throw SessionError(SessionError::Kind::no_match, "constraints match no records");
  }
  base_ = std::make_shared<BaseEmbeddings>(make_base_embeddings(corpus, cfg_));

  if (cfg_.algorithm == Algorithm::faircop) {
    if (cfg_.initial_net) {
      if (cfg_.initial_net->input_dim() != base_->dim) {
        throw std::invalid_argument("engine: initial network input dim does not match embeddings");
      }
      net_ = *cfg_.initial_net;
    } else {
      Rng seeder = derived_rng(cfg_.seed, 3);
      net_ = init_net(base_->dim, cfg_.hidden_dims, cfg_.output_dim, seeder());
    }
    opt_ = make_optimizer(cfg_.optimizer, cfg_.learning_rate);
  }
  rocchio_.query.assign(base_->dim, 0.0);
  rocchio_.params = cfg_.rocchio;

  label_.assign(corpus.size(), Label::unseen);
  in_rem_.assign(corpus.size(), true);
  remaining_count_ = corpus.size();
  batch_ = stratified_sample_indices(corpus, matching, cfg_.batch_size(), batch_rng_);
  take_from_rem(batch_);
}

std::vector<std::string> Session::batch_ids() const {
  std::vector<std::string> ids;
  ids.reserve(batch_.size());
  for (auto i : batch_) ids.push_back(corpus_->id(i));
  return ids;
}

Vector Session::project(std::size_t index) const {
  const auto row = base_->row(index);
  if (cfg_.algorithm == Algorithm::faircop) return net_.forward(row);
  return Vector(row.begin(), row.end());
}

StepResult Session::submit_feedback(const std::vector<std::string>& similar_ids) {
  std::vector<std::size_t> indices;
  std::vector<std::string> unknown;
  for (const auto& id : similar_ids) {
    if (auto idx = corpus_->index_of(id)) {
      indices.push_back(*idx);
    } else {
      unknown.push_back(id);
    }
  }
  if (!unknown.empty()) {
    if (status_ != SessionStatus::active) {
      throw SessionError(SessionError::Kind::not_active, "session is " + to_string(status_));
    }
    throw SessionError(SessionError::Kind::not_in_batch, "ids not in the current batch", unknown);
  }
  return submit_feedback_indices(indices);
}

StepResult Session::submit_feedback_indices(std::span<const std::size_t> similar) {
  if (status_ != SessionStatus::active) {
    throw SessionError(SessionError::Kind::not_active, "session is " + to_string(status_));
  }
  const std::unordered_set<std::size_t> in_batch(batch_.begin(), batch_.end());
  std::unordered_set<std::size_t> chosen;
  std::vector<std::string> offenders;
  for (std::size_t idx : similar) {
    if (!in_batch.contains(idx)) {
      offenders.push_back(idx < corpus_->size() ? corpus_->id(idx) : std::to_string(idx));
    } else {
      chosen.insert(idx);
    }
  }
  if (!offenders.empty()) {
    throw SessionError(SessionError::Kind::not_in_batch, "ids not in the current batch", offenders);
  }

  // 1. split the shown batch; relabeled history leaves its old set
  std::vector<std::size_t> s, d;
  for (std::size_t idx : batch_) (chosen.contains(idx) ? s : d).push_back(idx);
  for (std::size_t idx : s) {
    if (label_[idx] == Label::dissimilar) relabel(idx, Label::unseen);
  }
  for (std::size_t idx : d) {
    if (label_[idx] == Label::similar) relabel(idx, Label::unseen);
  }

  // 2. periodic anchored training
  StepResult result;
  if (cfg_.algorithm == Algorithm::faircop && iter_ % cfg_.train_every == 0) {
    double loss = 0.0;
    if (train_anchored(s, d, loss)) {
      result.trained = true;
      result.loss = loss;
    }
  }

  // 3. merge into the all-time sets
  for (std::size_t idx : s) relabel(idx, Label::similar);
  for (std::size_t idx : d) relabel(idx, Label::dissimilar);

  FeedbackEvent ev;
  ev.iter = iter_;
  ev.shown = batch_ids();
  for (std::size_t idx : s) ev.similar.push_back(corpus_->id(idx));
  ev.timestamp_ms = now_ms();
  ev.trained = result.trained;
  ev.loss = result.loss;

  // 4-5. rank the unseen pool and assemble the next batch
  std::vector<std::size_t> next;
  switch (cfg_.algorithm) {
    case Algorithm::faircop:
    case Algorithm::centroid: next = next_batch_scored(iter_); break;
    case Algorithm::rocchio: next = next_batch_rocchio(s, d); break;
    case Algorithm::random: next = next_batch_random(); break;
  }
  batch_ = std::move(next);
  take_from_rem(batch_);
  events_.push_back(std::move(ev));

  // 6. advance and check termination
  ++iter_;
  if (batch_.empty()) {
    status_ = SessionStatus::exhausted;
  } else if (iter_ >= cfg_.max_iterations) {
    status_ = SessionStatus::abandoned;
  }
  result.status = status_;
  result.batch = batch_;
  return result;
}

std::size_t Session::report_target(const std::string& id) {
  if (status_ != SessionStatus::active) {
    throw SessionError(SessionError::Kind::not_active, "session is " + to_string(status_));
  }
  const auto idx = corpus_->index_of(id);
  if (!idx || std::find(batch_.begin(), batch_.end(), *idx) == batch_.end()) {
    throw SessionError(SessionError::Kind::not_in_batch, "image is not in the current batch", {id});
  }
  status_ = SessionStatus::converged;
  converged_at_ = iter_;
  FeedbackEvent ev;
  ev.iter = iter_;
  ev.shown = batch_ids();
  ev.timestamp_ms = now_ms();
  ev.reported = id;
  events_.push_back(std::move(ev));
  return iter_;
}

void Session::relabel(std::size_t index, Label label) {
  const Label old = label_[index];
  if (old == label) return;
  auto erase = [index](std::vector<std::size_t>& v) {
    v.erase(std::remove(v.begin(), v.end(), index), v.end());
  };
  if (old == Label::similar) erase(similar_all_);
  if (old == Label::dissimilar) erase(dissimilar_all_);
  if (label == Label::similar) similar_all_.push_back(index);
  if (label == Label::dissimilar) dissimilar_all_.push_back(index);
  label_[index] = label;
}

bool Session::train_anchored(const std::vector<std::size_t>& s, const std::vector<std::size_t>& d,
                             double& loss) {
  // history excludes the images being labeled right now
  auto history = [](const std::vector<std::size_t>& all, const std::vector<std::size_t>& current) {
    const std::unordered_set<std::size_t> cur(current.begin(), current.end());
    std::vector<std::size_t> pool;
    for (auto idx : all) {
      if (!cur.contains(idx)) pool.push_back(idx);
    }
    return pool;
  };
  auto s_batch = sample_without_replacement(history(similar_all_, s), cfg_.prev_samp, train_rng_);
  auto d_batch = sample_without_replacement(history(dissimilar_all_, d), cfg_.prev_samp, train_rng_);
  s_batch.insert(s_batch.end(), s.begin(), s.end());
  d_batch.insert(d_batch.end(), d.begin(), d.end());
  if (s_batch.size() < 2 || d_batch.size() < min_dissimilar(cfg_.loss_kind)) return false;

  auto embed = [this](const std::vector<std::size_t>& ids) {
    std::vector<Vector> out;
    out.reserve(ids.size());
    for (auto idx : ids) {
      const auto row = base_->row(idx);
      out.emplace_back(row.begin(), row.end());
    }
    return out;
  };
  const auto s_vecs = embed(s_batch);
  const auto d_vecs = embed(d_batch);
  const TrainConfig tc{cfg_.epochs, cfg_.learning_rate, cfg_.tau, cfg_.seed};
  for (std::size_t e = 0; e < cfg_.epochs; ++e) {
    loss = train_step(net_, s_vecs, d_vecs, tc, cfg_.loss_kind, opt_);
  }
  return true;
}

std::vector<std::size_t> Session::rem_indices() const {
  std::vector<std::size_t> out;
  out.reserve(remaining_count_);
  for (std::size_t i = 0; i < in_rem_.size(); ++i) {
    if (in_rem_[i]) out.push_back(i);
  }
  return out;
}

void Session::take_from_rem(const std::vector<std::size_t>& shown) {
  for (auto idx : shown) {
    if (in_rem_[idx]) {
      in_rem_[idx] = false;
      --remaining_count_;
      label_[idx] = Label::pending;
    }
  }
}

std::vector<std::size_t> Session::fallback_batch(std::size_t count) {
  const auto rem = rem_indices();
  std::vector<std::size_t> preferred, rest;
  for (auto idx : rem) {
    (matches(corpus_->record(idx), constraints_) ? preferred : rest).push_back(idx);
  }
  auto out = stratified_sample_indices(*corpus_, preferred, count, batch_rng_);
  if (out.size() < count) {
    auto more = stratified_sample_indices(*corpus_, rest, count - out.size(), batch_rng_);
    out.insert(out.end(), more.begin(), more.end());
  }
  return out;
}

std::vector<std::size_t> Session::next_batch_scored(std::size_t iter_before) {
  ranking_.clear();
  if (similar_all_.empty()) return fallback_batch(cfg_.batch_size());

  std::vector<Vector> s_proj;
  for (auto idx : similar_all_) s_proj.push_back(project(idx));
  const Vector s_center = centroid(s_proj);
  Vector d_center;
  const bool use_alt =
      cfg_.loss_kind == LossKind::scloss_alt && cfg_.algorithm == Algorithm::faircop &&
      !dissimilar_all_.empty();
  if (use_alt) {
    std::vector<Vector> d_proj;
    for (auto idx : dissimilar_all_) d_proj.push_back(project(idx));
    d_center = centroid(d_proj);
  }

  const auto rem = rem_indices();
  ranking_.reserve(rem.size());
  for (auto idx : rem) {
    const Vector p = project(idx);
    double sc = cosine_sim(p, s_center);
    if (use_alt) sc -= cosine_sim(p, d_center);
    ranking_.push_back({idx, sc});
  }
  rank_candidates(*corpus_, ranking_);

  const std::size_t top = std::min(cfg_.k, ranking_.size());
  std::vector<std::size_t> next;
  for (std::size_t r = 0; r < top; ++r) next.push_back(ranking_[r].index);

  std::vector<std::size_t> pool;
  if (iter_before % cfg_.explore_history_every == 0) {
    // re-show labeled history, skipping the batch that was just judged
    const std::unordered_set<std::size_t> just_shown(batch_.begin(), batch_.end());
    for (auto idx : similar_all_) {
      if (!just_shown.contains(idx)) pool.push_back(idx);
    }
    for (auto idx : dissimilar_all_) {
      if (!just_shown.contains(idx)) pool.push_back(idx);
    }
  } else {
    for (std::size_t r = top; r < ranking_.size(); ++r) pool.push_back(ranking_[r].index);
    std::sort(pool.begin(), pool.end());
  }
  const auto extra = sample_without_replacement(std::move(pool), cfg_.u, batch_rng_);
  std::unordered_set<std::size_t> present(next.begin(), next.end());
  for (auto idx : extra) {
    if (present.insert(idx).second) next.push_back(idx);
  }
  return next;
}

std::vector<std::size_t> Session::next_batch_rocchio(const std::vector<std::size_t>& s,
                                                     const std::vector<std::size_t>& d) {
  auto embed = [this](const std::vector<std::size_t>& ids) {
    std::vector<Vector> out;
    for (auto idx : ids) {
      const auto row = base_->row(idx);
      out.emplace_back(row.begin(), row.end());
    }
    return out;
  };
  rocchio_update(rocchio_, embed(s), embed(d));
  ranking_.clear();
  if (norm(rocchio_.query) < kZeroNorm) return fallback_batch(cfg_.batch_size());
  const auto rem = rem_indices();
  ranking_ = rank_by_cosine(*corpus_, *base_, rem, rocchio_.query);
  std::vector<std::size_t> next;
  for (std::size_t r = 0; r < std::min(cfg_.batch_size(), ranking_.size()); ++r) {
    next.push_back(ranking_[r].index);
  }
  return next;
}

std::vector<std::size_t> Session::next_batch_random() {
  auto order = rem_indices();
  std::shuffle(order.begin(), order.end(), batch_rng_);
  ranking_.clear();
  ranking_.reserve(order.size());
  for (std::size_t r = 0; r < order.size(); ++r) {
    ranking_.push_back({order[r], -static_cast<double>(r)});
  }
  order.resize(std::min(cfg_.batch_size(), order.size()));
  return order;
}

void Session::check_invariants() const {
  auto fail = [](const std::string& what) { throw std::logic_error("session invariant: " + what); };
  std::vector<int> in_s(corpus_->size(), 0), in_d(corpus_->size(), 0);
  for (auto idx : similar_all_) {
    if (++in_s[idx] > 1) fail("duplicate in S_all");
    if (label_[idx] != Label::similar) fail("S_all label mismatch");
  }
  for (auto idx : dissimilar_all_) {
    if (++in_d[idx] > 1) fail("duplicate in D_all");
    if (in_s[idx]) fail("S_all and D_all intersect");
    if (label_[idx] != Label::dissimilar) fail("D_all label mismatch");
  }
  std::size_t rem = 0;
  for (std::size_t i = 0; i < corpus_->size(); ++i) {
    if (in_rem_[i]) {
      ++rem;
      if (in_s[i] || in_d[i]) fail("labeled image still in Rem");
      if (label_[i] != Label::unseen) fail("Rem member not unseen");
    }
  }
  if (rem != remaining_count_) fail("remaining count drift");
  if (batch_.size() > cfg_.batch_size()) fail("batch larger than k+u");
  std::set<std::size_t> seen;
  for (auto idx : batch_) {
    if (!seen.insert(idx).second) fail("duplicate in batch");
    if (in_rem_[idx]) fail("batch member still in Rem");
  }
  for (std::size_t i = 0; i < corpus_->size(); ++i) {
    if (label_[i] == Label::pending && !seen.contains(i)) fail("pending image not in batch");
    if (label_[i] == Label::unseen && !in_rem_[i]) fail("unlabeled image outside Rem");
  }
}

}  // namespace faircop
