#include <algorithm>
#include <atomic>
#include <future>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "faircop/metrics.hpp"
#include "faircop/simulator.hpp"

namespace faircop {

using json = nlohmann::json;

ViewCombo parse_view_combo(const std::string& spec) {
  ViewCombo combo;
  std::size_t start = 0;
  while (start <= spec.size()) {
    const auto plus = spec.find('+', start);
    const auto end = plus == std::string::npos ? spec.size() : plus;
    auto name = spec.substr(start, end - start);
    if (name.empty()) throw std::invalid_argument("malformed view combo '" + spec + "'");
    if (combo.weights.count(name)) {
      throw std::invalid_argument("view '" + name + "' repeated in combo '" + spec + "'");
    }
    combo.weights[std::move(name)] = 1.0;
    if (plus == std::string::npos) break;
    start = plus + 1;
  }
  combo.name = spec;
  return combo;
}

namespace {

std::string fmt(double x, int precision) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(precision) << x;
  return out.str();
}

RunSummary summarize(const SimulationLog& log) {
  RunSummary s;
  s.seed = log.seed;
  s.target = log.target;
  s.converged = log.converged;
  s.n_iterations = log.n_iterations;
  s.ar = log.iterations.empty() ? 0.0 : average_relevance(log);
  const bool scored = std::any_of(log.iterations.begin(), log.iterations.end(),
                                  [](const IterationRecord& r) { return r.target_rank.has_value(); });
  if (scored) s.pr = percentile_rank(log);
  return s;
}

}  // namespace

const ExperimentCell& ExperimentReport::cell(const std::string& algorithm,
                                             const std::string& combo) const {
  for (const auto& c : cells) {
    if (c.algorithm == algorithm && c.combo == combo) return c;
  }
  throw std::out_of_range("no experiment cell " + algorithm + "/" + combo);
}

std::string ExperimentReport::to_csv() const {
  std::ostringstream out;
  out << "algorithm,views,metric,value,runs\n";
  for (const auto& c : cells) {
    out << c.algorithm << ',' << c.combo << ",ACI," << fmt(c.aci, 4) << ',' << c.runs.size() << '\n';
    out << c.algorithm << ',' << c.combo << ",AR," << fmt(c.ar, 4) << ',' << c.runs.size() << '\n';
    out << c.algorithm << ',' << c.combo << ",PR," << (c.pr ? fmt(*c.pr, 4) : "") << ','
        << c.runs.size() << '\n';
  }
  return out.str();
}

json ExperimentReport::to_json() const {
  json j;
  j["algorithms"] = algorithms;
  j["runs_per_cell"] = runs_per_cell;
  j["combos"] = json::array();
  for (const auto& c : combos) j["combos"].push_back({{"name", c.name}, {"weights", c.weights}});
  j["cells"] = json::array();
  for (const auto& c : cells) {
    json runs = json::array();
    for (const auto& r : c.runs) {
      json rj{{"seed", r.seed},
              {"target", r.target},
              {"converged", r.converged},
              {"iterations", r.n_iterations},
              {"ar", r.ar}};
      rj["pr"] = r.pr ? json(*r.pr) : json(nullptr);
      runs.push_back(std::move(rj));
    }
    json cj{{"algorithm", c.algorithm}, {"views", c.combo}, {"aci", c.aci}, {"ar", c.ar},
            {"runs", std::move(runs)}};
    cj["pr"] = c.pr ? json(*c.pr) : json(nullptr);
    j["cells"].push_back(std::move(cj));
  }
  return j;
}

std::string ExperimentReport::to_markdown() const {
  std::set<std::string> view_set;
  for (const auto& c : combos) {
    for (const auto& [name, w] : c.weights) {
      if (w > 0) view_set.insert(name);
    }
  }
  const std::vector<std::string> views(view_set.begin(), view_set.end());

  std::ostringstream out;
  out << '|';
  for (const auto& v : views) out << ' ' << v << " |";
  for (const char* metric : {"ACI", "AR", "PR"}) {
    for (const auto& a : algorithms) out << ' ' << metric << ' ' << a << " |";
  }
  out << "\n|";
  for (std::size_t i = 0; i < views.size() + 3 * algorithms.size(); ++i) out << " --- |";
  out << '\n';
  for (const auto& combo : combos) {
    out << '|';
    for (const auto& v : views) {
      const auto it = combo.weights.find(v);
      out << ' ' << (it != combo.weights.end() && it->second > 0 ? "x" : "") << " |";
    }
    for (const auto& a : algorithms) out << ' ' << fmt(cell(a, combo.name).aci, 2) << " |";
    for (const auto& a : algorithms) out << ' ' << fmt(cell(a, combo.name).ar, 2) << " |";
    for (const auto& a : algorithms) {
      const auto& pr = cell(a, combo.name).pr;
      out << ' ' << (pr ? fmt(*pr, 2) : "-") << " |";
    }
    out << '\n';
  }
  return out.str();
}

ExperimentReport run_experiment(const Corpus& corpus, const ExperimentConfig& cfg) {
  if (cfg.algorithms.empty()) throw std::invalid_argument("experiment: no algorithms");
  if (cfg.combos.empty()) throw std::invalid_argument("experiment: no view combos");
  if (cfg.runs_per_cell < 1) throw std::invalid_argument("experiment: runs_per_cell must be >= 1");
  std::set<std::string> alg_names;
  for (const auto& a : cfg.algorithms) {
    a.validate(corpus);
    if (!alg_names.insert(to_string(a.algorithm)).second) {
      throw std::invalid_argument("experiment: algorithm '" + to_string(a.algorithm) + "' listed twice");
    }
  }
  for (const auto& c : cfg.combos) {
    SimulatorConfig sim = cfg.simulator;
    sim.weights = c.weights;
    sim.validate(corpus);
  }

  struct Job {
    std::size_t alg, combo, run;
  };
  std::vector<Job> jobs;
  for (std::size_t a = 0; a < cfg.algorithms.size(); ++a) {
    for (std::size_t c = 0; c < cfg.combos.size(); ++c) {
      for (std::size_t r = 0; r < cfg.runs_per_cell; ++r) jobs.push_back({a, c, r});
    }
  }

  std::vector<RunSummary> results(jobs.size());
  auto run_one = [&](std::size_t j) {
    const auto& job = jobs[j];
    SimulatorConfig sim = cfg.simulator;
    sim.weights = cfg.combos[job.combo].weights;
    const auto log = run_simulation(corpus, sim, cfg.algorithms[job.alg],
                                    cfg.seed + static_cast<std::uint64_t>(job.run));
    results[j] = summarize(log);
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(cfg.jobs, jobs.size()));
  if (workers == 1) {
    for (std::size_t j = 0; j < jobs.size(); ++j) run_one(j);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::future<void>> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.push_back(std::async(std::launch::async, [&] {
        for (std::size_t j = next++; j < jobs.size(); j = next++) run_one(j);
      }));
    }
    for (auto& f : pool) f.get();
  }

  ExperimentReport report;
  for (const auto& a : cfg.algorithms) report.algorithms.push_back(to_string(a.algorithm));
  report.combos = cfg.combos;
  report.runs_per_cell = cfg.runs_per_cell;
  std::size_t j = 0;
  for (std::size_t a = 0; a < cfg.algorithms.size(); ++a) {
    for (std::size_t c = 0; c < cfg.combos.size(); ++c) {
      ExperimentCell cell;
      cell.algorithm = report.algorithms[a];
      cell.combo = cfg.combos[c].name;
      double aci = 0.0, ar = 0.0, pr = 0.0;
      std::size_t pr_count = 0;
      for (std::size_t r = 0; r < cfg.runs_per_cell; ++r, ++j) {
        const auto& s = results[j];
        aci += static_cast<double>(s.n_iterations);
        ar += s.ar;
        if (s.pr) {
          pr += *s.pr;
          ++pr_count;
        }
        cell.runs.push_back(s);
      }
      const auto n = static_cast<double>(cfg.runs_per_cell);
      cell.aci = aci / n;
      cell.ar = ar / n;
      if (pr_count) cell.pr = pr / static_cast<double>(pr_count);
      report.cells.push_back(std::move(cell));
    }
  }
  return report;
}

}  // namespace faircop
