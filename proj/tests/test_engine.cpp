#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>

#include "faircop/engine.hpp"
#include "fixtures.hpp"

using namespace faircop;
using faircop::testing::small_corpus;

namespace {

// Marks as similar every shown image whose mix-view cosine to `target`
// exceeds `thr`; a stand-in user that is independent of the engine.
std::vector<std::size_t> pick_similar(const Corpus& c, const std::vector<std::size_t>& shown,
                                      std::size_t target, double thr) {
  std::vector<std::size_t> out;
  const auto t = to_vector(c.view("mix").row(target));
  for (auto idx : shown) {
    if (cosine_sim(to_vector(c.view("mix").row(idx)), t) > thr) out.push_back(idx);
  }
  return out;
}

EngineConfig small_config(Algorithm a, std::uint64_t seed = 1) {
  EngineConfig cfg;
  cfg.algorithm = a;
  cfg.seed = seed;
  cfg.hidden_dims = {16};
  cfg.output_dim = 8;
  return cfg;
}

}  // namespace

TEST(Config, ValidateRejectsBadValues) {
  const auto c = small_corpus(40);
  EngineConfig cfg;
  cfg.k = 0;
  EXPECT_THROW(cfg.validate(c), std::invalid_argument);
  cfg = {};
  cfg.tau = 0;
  EXPECT_THROW(cfg.validate(c), std::invalid_argument);
  cfg = {};
  cfg.view_name = "nope";
  EXPECT_THROW(cfg.validate(c), std::invalid_argument);
  cfg = {};
  cfg.train_every = 0;
  EXPECT_THROW(cfg.validate(c), std::invalid_argument);
  EXPECT_NO_THROW(EngineConfig{}.validate(c));
}

TEST(Config, JsonRoundTripAndUnknownField) {
  EngineConfig cfg;
  cfg.algorithm = Algorithm::rocchio;
  cfg.k = 7;
  cfg.tau = 0.25;
  cfg.hidden_dims = {32, 16};
  cfg.view_weights = {{"mix", 2.0}, {"hog", 0.5}};
  cfg.seed = 123;
  const auto back = apply_overrides(EngineConfig{}, to_json(cfg));
  EXPECT_EQ(to_json(back), to_json(cfg));
  EXPECT_THROW(apply_overrides(EngineConfig{}, {{"bogus", 1}}), std::invalid_argument);
  EXPECT_THROW(apply_overrides(EngineConfig{}, {{"k", "many"}}), std::invalid_argument);
  EXPECT_EQ(parse_algorithm("facefetch"), Algorithm::centroid);
  EXPECT_THROW(parse_algorithm("magic"), std::invalid_argument);
}

TEST(Ranking, TiesBrokenById) {
  const auto c = small_corpus(10);
  std::vector<ScoredCandidate> s{{5, 0.5}, {2, 0.5}, {7, 0.9}, {1, 0.5}};
  rank_candidates(c, s);
  EXPECT_EQ(s[0].index, 7u);
  // ids are zero-padded so id order is index order
  EXPECT_EQ(s[1].index, 1u);
  EXPECT_EQ(s[2].index, 2u);
  EXPECT_EQ(s[3].index, 5u);
}

TEST(Rocchio, ClosedFormUpdate) {
  RocchioState st{{1, 0}, {1.0, 0.75, 0.15}};
  rocchio_update(st, {{0, 2}, {0, 4}}, {{2, 0}});
  EXPECT_NEAR(st.query[0], 1.0 - 0.15 * 2, 1e-12);
  EXPECT_NEAR(st.query[1], 0.75 * 3, 1e-12);
  rocchio_update(st, {}, {});
  EXPECT_NEAR(st.query[0], 0.7, 1e-12);
}

TEST(Sampling, WithoutReplacement) {
  Rng rng(3);
  auto s = sample_without_replacement({1, 2, 3, 4, 5}, 3, rng);
  EXPECT_EQ(s.size(), 3u);
  EXPECT_EQ(std::set<std::size_t>(s.begin(), s.end()).size(), 3u);
  EXPECT_EQ(sample_without_replacement({1, 2}, 5, rng).size(), 2u);
}

TEST(Session, FirstBatchHasKPlusU) {
  const auto c = small_corpus(200);
  Session s(c, {}, small_config(Algorithm::faircop));
  EXPECT_EQ(s.batch().size(), 16u);
  EXPECT_EQ(s.remaining_count(), 200u - 16);
  EXPECT_EQ(s.iteration(), 0u);
  s.check_invariants();
}

TEST(Session, ConstraintsRestrictFirstBatch) {
  const auto c = small_corpus(300);
  Session s(c, {{"gender", {"male"}}, {"hair", {"short", "bald"}}}, small_config(Algorithm::centroid));
  for (auto idx : s.batch()) {
    EXPECT_EQ(c.record(idx).attributes.at("gender"), "male");
    EXPECT_NE(c.record(idx).attributes.at("hair"), "long");
  }
}

TEST(Session, ConstraintErrors) {
  const auto c = small_corpus(50);
  EXPECT_THROW(Session(c, {{"hat", {"x"}}}, small_config(Algorithm::faircop)), UnknownAttributeError);
  // gender=0 and gender=1 are both valid, but no record has neither
  AttributeFilter none{{"gender", {}}};
  try {
    Session(c, none, small_config(Algorithm::faircop));
    FAIL();
  } catch (const SessionError& e) {
    EXPECT_EQ(e.kind(), SessionError::Kind::no_match);
  }
}

TEST(Session, RejectsIdsOutsideBatch) {
  const auto c = small_corpus(100);
  Session s(c, {}, small_config(Algorithm::faircop));
  std::string outside;
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (std::find(s.batch().begin(), s.batch().end(), i) == s.batch().end()) {
      outside = c.id(i);
      break;
    }
  }
  try {
    s.submit_feedback({s.batch_ids()[0], outside, "ghost"});
    FAIL();
  } catch (const SessionError& e) {
    EXPECT_EQ(e.kind(), SessionError::Kind::not_in_batch);
    EXPECT_EQ(e.offenders(), (std::vector<std::string>{"ghost"}));
  }
  try {
    s.submit_feedback({outside});
    FAIL();
  } catch (const SessionError& e) {
    EXPECT_EQ(e.offenders(), (std::vector<std::string>{outside}));
  }
  EXPECT_EQ(s.iteration(), 0u);
}

TEST(Session, EmptyFeedbackFallsBackToStratified) {
  const auto c = small_corpus(100);
  Session s(c, {}, small_config(Algorithm::faircop));
  const auto r = s.submit_feedback({});
  EXPECT_EQ(r.status, SessionStatus::active);
  EXPECT_EQ(r.batch.size(), 16u);
  EXPECT_FALSE(r.trained);
  EXPECT_TRUE(s.last_ranking().empty());
  EXPECT_EQ(s.dissimilar_all().size(), 16u);
  s.check_invariants();
}

TEST(Session, CountsAfterFeedback) {
  const auto c = small_corpus(120);
  Session s(c, {}, small_config(Algorithm::faircop));
  const auto ids = s.batch_ids();
  s.submit_feedback({ids[0], ids[3], ids[5]});
  EXPECT_EQ(s.similar_all().size(), 3u);
  EXPECT_EQ(s.dissimilar_all().size(), 13u);
  // round 0 explores history, and the only history is the batch just judged
  EXPECT_EQ(s.batch().size(), 12u);
  EXPECT_EQ(s.remaining_count(), 120u - 16 - 12);
  EXPECT_EQ(s.iteration(), 1u);
  EXPECT_EQ(s.event_log().size(), 1u);
  EXPECT_EQ(s.event_log()[0].similar.size(), 3u);
}

TEST(Session, TrainsOnScheduleWithEnoughLabels) {
  const auto c = small_corpus(300);
  Session s(c, {}, small_config(Algorithm::faircop));
  auto ids = s.batch_ids();
  auto r = s.submit_feedback({ids[0], ids[1], ids[2]});
  EXPECT_TRUE(r.trained);  // iter 0 is a training round
  ASSERT_TRUE(r.loss.has_value());
  EXPECT_TRUE(std::isfinite(*r.loss));
  ids = s.batch_ids();
  r = s.submit_feedback({ids[0]});
  EXPECT_FALSE(r.trained);  // iter 1 is not
}

TEST(Session, BaselinesNeverTrain) {
  const auto c = small_corpus(200);
  for (auto a : {Algorithm::centroid, Algorithm::rocchio, Algorithm::random}) {
    Session s(c, {}, small_config(a));
    const auto ids = s.batch_ids();
    const auto r = s.submit_feedback({ids[0], ids[1]});
    EXPECT_FALSE(r.trained);
    EXPECT_EQ(r.batch.size(), a == Algorithm::centroid ? 12u : 16u);
  }
}

TEST(Session, InvariantsHoldUnderRandomFeedback) {
  const auto c = small_corpus(150);
  std::mt19937_64 rng(77);
  for (auto a : {Algorithm::faircop, Algorithm::centroid, Algorithm::rocchio, Algorithm::random}) {
    auto cfg = small_config(a, 5);
    cfg.epochs = 2;
    Session s(c, {}, cfg);
    while (s.status() == SessionStatus::active) {
      std::vector<std::string> pick;
      for (const auto& id : s.batch_ids()) {
        if (rng() % 3 == 0) pick.push_back(id);
      }
      s.submit_feedback(pick);
      s.check_invariants();
      const std::set<std::size_t> sa(s.similar_all().begin(), s.similar_all().end());
      for (auto idx : s.dissimilar_all()) EXPECT_FALSE(sa.count(idx));
    }
    // 150 images, 16 new per round at most: the pool runs dry
    EXPECT_EQ(s.status(), SessionStatus::exhausted);
  }
}

TEST(Session, RelabelingMovesBetweenSets) {
  const auto c = small_corpus(200);
  auto cfg = small_config(Algorithm::centroid);
  cfg.explore_history_every = 1;
  Session s(c, {}, cfg);
  s.submit_feedback({s.batch_ids()[0]});
  // history is re-shown every round, so earlier dissimilar images flip
  bool flipped = false;
  for (int round = 0; round < 6 && s.status() == SessionStatus::active; ++round) {
    const auto before = s.dissimilar_all();
    s.submit_feedback(s.batch_ids());
    s.check_invariants();
    flipped = flipped || s.dissimilar_all().size() < before.size();
  }
  EXPECT_TRUE(flipped);
  for (auto idx : s.dissimilar_all()) {
    EXPECT_EQ(std::count(s.similar_all().begin(), s.similar_all().end(), idx), 0);
  }
}

TEST(Session, AbandonsAtMaxIterations) {
  const auto c = small_corpus(400);
  auto cfg = small_config(Algorithm::random);
  cfg.max_iterations = 3;
  Session s(c, {}, cfg);
  s.submit_feedback({});
  s.submit_feedback({});
  const auto r = s.submit_feedback({});
  EXPECT_EQ(r.status, SessionStatus::abandoned);
  EXPECT_THROW(s.submit_feedback({}), SessionError);
}

TEST(Session, ReportTarget) {
  const auto c = small_corpus(100);
  Session s(c, {}, small_config(Algorithm::faircop));
  s.submit_feedback({});
  const auto id = s.batch_ids()[2];
  EXPECT_THROW(s.report_target("ghost"), SessionError);
  EXPECT_EQ(s.report_target(id), 1u);
  EXPECT_EQ(s.status(), SessionStatus::converged);
  EXPECT_EQ(s.converged_at(), 1u);
  EXPECT_EQ(s.event_log().back().reported, id);
  EXPECT_THROW(s.report_target(id), SessionError);
}

TEST(Session, DeterministicPerSeed) {
  const auto c = small_corpus(250);
  for (auto a : {Algorithm::faircop, Algorithm::rocchio, Algorithm::random}) {
    Session s1(c, {}, small_config(a, 9));
    Session s2(c, {}, small_config(a, 9));
    for (int round = 0; round < 6; ++round) {
      ASSERT_EQ(s1.batch(), s2.batch());
      const auto sim = pick_similar(c, s1.batch(), 0, 0.3);
      s1.submit_feedback_indices(sim);
      s2.submit_feedback_indices(sim);
    }
    EXPECT_EQ(s1.net(), s2.net());
  }
}

TEST(Session, RankingSortedAndOverRemaining) {
  const auto c = small_corpus(200);
  Session s(c, {}, small_config(Algorithm::faircop));
  s.submit_feedback_indices(pick_similar(c, s.batch(), s.batch()[0], 0.2));
  const auto& r = s.last_ranking();
  ASSERT_FALSE(r.empty());
  for (std::size_t i = 1; i < r.size(); ++i) EXPECT_GE(r[i - 1].score, r[i].score);
  // ranking covers Rem as it was before the new batch was taken out
  EXPECT_EQ(r.size(), s.remaining_count() + s.batch().size());
}

TEST(Session, IdentityNetZeroLrMatchesCentroid) {
  const auto c = small_corpus(300);
  auto fc = small_config(Algorithm::faircop, 4);
  fc.learning_rate = 0.0;
  fc.initial_net = std::make_shared<ProjectionNet>(identity_net(c.view("mix").dim));
  Session a(c, {}, fc);
  Session b(c, {}, small_config(Algorithm::centroid, 4));
  const std::size_t target = 17;
  for (int round = 0; round < 10 && a.status() == SessionStatus::active; ++round) {
    ASSERT_EQ(a.batch(), b.batch());
    const auto sim = pick_similar(c, a.batch(), target, 0.3);
    a.submit_feedback_indices(sim);
    b.submit_feedback_indices(sim);
    ASSERT_EQ(a.last_ranking().size(), b.last_ranking().size());
    for (std::size_t i = 0; i < a.last_ranking().size(); ++i) {
      ASSERT_EQ(a.last_ranking()[i].index, b.last_ranking()[i].index);
    }
  }
}

TEST(Session, RandomBaselineIsUniform) {
  // chi-square on how often each image lands in the second batch
  const auto c = small_corpus(40);
  auto cfg = small_config(Algorithm::random);
  cfg.k = 4;
  cfg.u = 0;
  std::vector<double> counts(c.size(), 0.0);
  std::vector<std::size_t> eligible_times(c.size(), 0);
  for (std::uint64_t seed = 0; seed < 3000; ++seed) {
    cfg.seed = seed;
    Session s(c, {}, cfg);
    std::vector<bool> first(c.size(), false);
    for (auto idx : s.batch()) first[idx] = true;
    s.submit_feedback({});
    for (std::size_t i = 0; i < c.size(); ++i) {
      if (!first[i]) ++eligible_times[i];
    }
    for (auto idx : s.batch()) counts[idx] += 1;
  }
  // expected count for image i: eligible_times[i] * 4 / 36
  double chi2 = 0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double e = static_cast<double>(eligible_times[i]) * 4.0 / 36.0;
    chi2 += (counts[i] - e) * (counts[i] - e) / e;
  }
  // 39 dof; 99.9th percentile ~ 72.1
  EXPECT_LT(chi2, 72.1);
}

TEST(BaseEmbeddings, WeightedConcatenation) {
  const auto c = small_corpus(20);
  EngineConfig cfg;
  cfg.view_weights = {{"mix", 2.0}, {"hog", 1.0}};
  const auto b = make_base_embeddings(c, cfg);
  EXPECT_EQ(b.dim, c.view("hog").dim + c.view("mix").dim);
  // name order: hog first, then mix scaled by 2
  EXPECT_DOUBLE_EQ(b.row(3)[0], c.view("hog").row(3)[0]);
  EXPECT_DOUBLE_EQ(b.row(3)[c.view("hog").dim], 2.0 * c.view("mix").row(3)[0]);
}

TEST(FeedbackEvent, JsonRoundTrip) {
  FeedbackEvent ev{3, {"a", "b"}, {"b"}, 1700, true, 0.25, std::nullopt};
  EXPECT_EQ(feedback_event_from_json(to_json(ev)), ev);
  ev.loss.reset();
  ev.reported = "a";
  EXPECT_EQ(feedback_event_from_json(to_json(ev)), ev);
}
