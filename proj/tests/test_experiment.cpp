#include <gtest/gtest.h>

#include "faircop/metrics.hpp"
#include "faircop/simulator.hpp"
#include "fixtures.hpp"

using namespace faircop;
using faircop::testing::small_corpus;

namespace {

EngineConfig engine(Algorithm a) {
  EngineConfig e;
  e.algorithm = a;
  e.hidden_dims = {16};
  e.output_dim = 8;
  return e;
}

}  // namespace

TEST(ViewCombo, Parse) {
  const auto c = parse_view_combo("facenet+mix");
  EXPECT_EQ(c.name, "facenet+mix");
  EXPECT_EQ(c.weights, (ViewWeights{{"facenet", 1.0}, {"mix", 1.0}}));
  EXPECT_THROW(parse_view_combo("mix++hog"), std::invalid_argument);
  EXPECT_THROW(parse_view_combo("mix+mix"), std::invalid_argument);
  EXPECT_THROW(parse_view_combo(""), std::invalid_argument);
}

TEST(Experiment, SingleRunEqualsSimulation) {
  const auto c = small_corpus(200);
  ExperimentConfig cfg;
  cfg.algorithms = {engine(Algorithm::faircop)};
  cfg.combos = {parse_view_combo("mix")};
  cfg.runs_per_cell = 1;
  cfg.seed = 42;
  const auto report = run_experiment(c, cfg);
  ASSERT_EQ(report.cells.size(), 1u);

  SimulatorConfig sim;
  sim.weights = {{"mix", 1.0}};
  const auto log = run_simulation(c, sim, engine(Algorithm::faircop), 42);
  const auto& cell = report.cells[0];
  EXPECT_EQ(cell.aci, static_cast<double>(log.n_iterations));
  if (!log.iterations.empty()) {
    EXPECT_DOUBLE_EQ(cell.ar, average_relevance(log));
    ASSERT_TRUE(cell.pr.has_value());
    EXPECT_DOUBLE_EQ(*cell.pr, percentile_rank(log));
  }
  EXPECT_EQ(cell.runs[0].target, log.target);
}

TEST(Experiment, LayoutAndSharedTargets) {
  const auto c = small_corpus(200);
  ExperimentConfig cfg;
  cfg.algorithms = {engine(Algorithm::faircop), engine(Algorithm::rocchio), engine(Algorithm::random)};
  cfg.combos = {parse_view_combo("mix"), parse_view_combo("facenet+hog+mix")};
  cfg.runs_per_cell = 3;
  cfg.seed = 7;
  const auto r = run_experiment(c, cfg);
  ASSERT_EQ(r.cells.size(), 6u);
  EXPECT_EQ(r.cells[0].algorithm, "faircop");
  EXPECT_EQ(r.cells[1].combo, "facenet+hog+mix");
  for (std::size_t run = 0; run < 3; ++run) {
    EXPECT_EQ(r.cell("faircop", "mix").runs[run].target, r.cell("random", "mix").runs[run].target);
  }

  const auto csv = r.to_csv();
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 6 * 3);
  EXPECT_NE(csv.find("rocchio,facenet+hog+mix,ACI,"), std::string::npos);

  const auto md = r.to_markdown();
  // header + separator + one row per combo
  EXPECT_EQ(std::count(md.begin(), md.end(), '\n'), 4);
  EXPECT_NE(md.find("| facenet | hog | mix | ACI faircop | ACI rocchio | ACI random | AR faircop"),
            std::string::npos);
  EXPECT_NE(md.find("|  |  | x |"), std::string::npos);

  const auto j = r.to_json();
  EXPECT_EQ(j["cells"].size(), 6u);
  EXPECT_EQ(j["cells"][0]["runs"].size(), 3u);
}

TEST(Experiment, ParallelMatchesSerial) {
  const auto c = small_corpus(200);
  ExperimentConfig cfg;
  cfg.algorithms = {engine(Algorithm::faircop), engine(Algorithm::centroid)};
  cfg.combos = {parse_view_combo("mix")};
  cfg.runs_per_cell = 4;
  const auto serial = run_experiment(c, cfg);
  cfg.jobs = 4;
  const auto parallel = run_experiment(c, cfg);
  EXPECT_EQ(serial.to_csv(), parallel.to_csv());
  EXPECT_EQ(serial.to_json(), parallel.to_json());
}

TEST(Experiment, RejectsBadConfig) {
  const auto c = small_corpus(50);
  ExperimentConfig cfg;
  cfg.combos = {parse_view_combo("mix")};
  EXPECT_THROW(run_experiment(c, cfg), std::invalid_argument);
  cfg.algorithms = {engine(Algorithm::random), engine(Algorithm::random)};
  EXPECT_THROW(run_experiment(c, cfg), std::invalid_argument);
  cfg.algorithms = {engine(Algorithm::random)};
  cfg.combos = {parse_view_combo("depth")};
  EXPECT_THROW(run_experiment(c, cfg), std::invalid_argument);
}
