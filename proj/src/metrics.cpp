#include "faircop/metrics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <set>
#include <stdexcept>

namespace faircop {

// --- retrieval metrics ---------------------------------------------------------

double percentile_rank(const SimulationLog& log) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : log.iterations) {
    if (!r.target_rank) continue;
    const double pr = r.candidates <= 1
                          ? 1.0
                          : 1.0 - static_cast<double>(*r.target_rank) /
                                      static_cast<double>(r.candidates - 1);
    sum += pr;
    ++n;
  }
  if (n == 0) throw std::invalid_argument("percentile_rank: target was never scored");
  return sum / static_cast<double>(n);
}

double average_relevance(const SimulationLog& log) {
  if (log.iterations.empty()) throw std::invalid_argument("average_relevance: empty log");
  double sum = 0.0;
  for (const auto& r : log.iterations) {
    if (!r.shown.empty()) {
      sum += static_cast<double>(r.similar.size()) / static_cast<double>(r.shown.size());
    }
  }
  return sum / static_cast<double>(log.iterations.size());
}

double average_convergent_iterations(std::span<const SimulationLog> logs) {
  if (logs.empty()) throw std::invalid_argument("average_convergent_iterations: no logs");
  double sum = 0.0;
  for (const auto& l : logs) {
    sum += static_cast<double>(l.converged ? l.n_iterations : l.max_iterations);
  }
  return sum / static_cast<double>(logs.size());
}

double convergence_score(std::size_t n, std::size_t max_iter, bool reported) {
  if (n > max_iter) throw std::invalid_argument("convergence_score: N exceeds max_iter");
  if (!reported) return 0.0;
  return 1.0 - static_cast<double>(n) / (static_cast<double>(max_iter) + 5.0);
}

// --- regression ----------------------------------------------------------------

DenseMatrix matrix_from_view(const EmbeddingView& view) {
  DenseMatrix m(view.rows(), view.dim);
  std::copy(view.data.begin(), view.data.end(), m.data.begin());
  return m;
}

Regressor parse_regressor(const std::string& name) {
  if (name == "boosted_stumps" || name == "gbt") return Regressor::boosted_stumps;
  if (name == "ridge") return Regressor::ridge;
  throw std::invalid_argument("unknown regressor '" + name + "'");
}

namespace {

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

Split train_test_split(std::size_t n, double test_fraction, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
  n_test = std::clamp<std::size_t>(n_test, 1, n - 1);
  Split s;
  s.test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  s.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  return s;
}

struct Stump {
  std::size_t feature = 0;
  double threshold = 0.0;
  double left = 0.0;
  double right = 0.0;
};

// Fitted model for one factor: predictions for arbitrary rows plus per-latent
// importance.
class FactorModel {
 public:
  virtual ~FactorModel() = default;
  virtual double predict(const DenseMatrix& z, std::size_t row) const = 0;
  std::vector<double> importance;
};

class BoostedStumps final : public FactorModel {
 public:
  BoostedStumps(const DenseMatrix& z, std::span<const double> y, std::span<const std::size_t> rows,
                const RegressionConfig& cfg) {
    const std::size_t d = z.cols;
    const std::size_t n = rows.size();
    importance.assign(d, 0.0);
    base_ = 0.0;
    for (auto r : rows) base_ += y[r];
    base_ /= static_cast<double>(n);
    lr_ = cfg.learning_rate;

    std::vector<double> resid(n);
    for (std::size_t k = 0; k < n; ++k) resid[k] = y[rows[k]] - base_;

    // per-feature order of the training rows (positions into `rows`)
    std::vector<std::vector<std::size_t>> order(d, std::vector<std::size_t>(n));
    for (std::size_t f = 0; f < d; ++f) {
      std::iota(order[f].begin(), order[f].end(), 0);
      std::stable_sort(order[f].begin(), order[f].end(), [&](std::size_t a, std::size_t b) {
        return z.at(rows[a], f) < z.at(rows[b], f);
      });
    }

    for (std::size_t round = 0; round < cfg.n_estimators; ++round) {
      const double total = std::accumulate(resid.begin(), resid.end(), 0.0);
      double best_gain = 0.0;
      Stump best;
      bool found = false;
      for (std::size_t f = 0; f < d; ++f) {
        double left_sum = 0.0;
        for (std::size_t p = 0; p + 1 < n; ++p) {
          left_sum += resid[order[f][p]];
          const double lo = z.at(rows[order[f][p]], f);
          const double hi = z.at(rows[order[f][p + 1]], f);
          if (lo == hi) continue;
          const double nl = static_cast<double>(p + 1);
          const double nr = static_cast<double>(n - p - 1);
          const double right_sum = total - left_sum;
          const double gain = left_sum * left_sum / nl + right_sum * right_sum / nr -
                              total * total / static_cast<double>(n);
          if (gain > best_gain) {
            best_gain = gain;
            best = {f, 0.5 * (lo + hi), left_sum / nl, right_sum / nr};
            found = true;
          }
        }
      }
      if (!found || best_gain <= 1e-15) break;
      importance[best.feature] += best_gain;
      for (std::size_t k = 0; k < n; ++k) {
        const double x = z.at(rows[k], best.feature);
        resid[k] -= lr_ * (x <= best.threshold ? best.left : best.right);
      }
      stumps_.push_back(best);
    }
  }

  double predict(const DenseMatrix& z, std::size_t row) const override {
    double out = base_;
    for (const auto& s : stumps_) out += lr_ * (z.at(row, s.feature) <= s.threshold ? s.left : s.right);
    return out;
  }

 private:
  double base_ = 0.0;
  double lr_ = 0.1;
  std::vector<Stump> stumps_;
};

class Ridge final : public FactorModel {
 public:
  Ridge(const DenseMatrix& z, std::span<const double> y, std::span<const std::size_t> rows,
        const RegressionConfig& cfg) {
    const std::size_t d = z.cols;
    const auto n = static_cast<Eigen::Index>(rows.size());
    mean_.assign(d, 0.0);
    scale_.assign(d, 0.0);
    for (std::size_t f = 0; f < d; ++f) {
      double m = 0.0;
      for (auto r : rows) m += z.at(r, f);
      m /= static_cast<double>(n);
      double var = 0.0;
      for (auto r : rows) var += (z.at(r, f) - m) * (z.at(r, f) - m);
      mean_[f] = m;
      const double sd = std::sqrt(var / static_cast<double>(n));
      scale_[f] = sd > 1e-12 ? 1.0 / sd : 0.0;
    }
    y_mean_ = 0.0;
    for (auto r : rows) y_mean_ += y[r];
    y_mean_ /= static_cast<double>(n);
    double y_var = 0.0;
    for (auto r : rows) y_var += (y[r] - y_mean_) * (y[r] - y_mean_);
    const double y_sd = std::sqrt(y_var / static_cast<double>(n));

    Eigen::MatrixXd x(n, static_cast<Eigen::Index>(d));
    Eigen::VectorXd t(n);
    for (Eigen::Index k = 0; k < n; ++k) {
      const auto r = rows[static_cast<std::size_t>(k)];
      for (std::size_t f = 0; f < d; ++f) {
        x(k, static_cast<Eigen::Index>(f)) = (z.at(r, f) - mean_[f]) * scale_[f];
      }
      t(k) = y[r] - y_mean_;
    }
    Eigen::MatrixXd gram = x.transpose() * x;
    gram.diagonal().array() += cfg.ridge_lambda * static_cast<double>(n);
    const Eigen::VectorXd beta = gram.ldlt().solve(x.transpose() * t);
    coef_.assign(beta.data(), beta.data() + beta.size());
    importance.resize(d);
    for (std::size_t f = 0; f < d; ++f) {
      importance[f] = y_sd > 0 ? std::abs(coef_[f]) / y_sd : 0.0;
    }
  }

  double predict(const DenseMatrix& z, std::size_t row) const override {
    double out = y_mean_;
    for (std::size_t f = 0; f < coef_.size(); ++f) {
      out += coef_[f] * (z.at(row, f) - mean_[f]) * scale_[f];
    }
    return out;
  }

 private:
  std::vector<double> mean_, scale_, coef_;
  double y_mean_ = 0.0;
};

std::unique_ptr<FactorModel> fit_model(const DenseMatrix& z, std::span<const double> y,
                                       std::span<const std::size_t> rows,
                                       const RegressionConfig& cfg) {
  if (cfg.regressor == Regressor::ridge) return std::make_unique<Ridge>(z, y, rows, cfg);
  return std::make_unique<BoostedStumps>(z, y, rows, cfg);
}

void check_regression_inputs(const DenseMatrix& z, const DenseMatrix& v) {
  if (z.rows != v.rows) throw std::invalid_argument("representations and factors differ in rows");
  if (z.rows < 20) throw std::invalid_argument("need at least 20 samples");
  if (z.cols == 0 || v.cols == 0) throw std::invalid_argument("empty representation or factors");
  for (double x : z.data) {
    if (!std::isfinite(x)) throw std::invalid_argument("non-finite representation value");
  }
  for (double x : v.data) {
    if (!std::isfinite(x)) throw std::invalid_argument("non-finite factor value");
  }
}

std::vector<double> column(const DenseMatrix& m, std::size_t c) {
  std::vector<double> out(m.rows);
  for (std::size_t r = 0; r < m.rows; ++r) out[r] = m.at(r, c);
  return out;
}

bool is_constant(std::span<const double> xs) {
  return std::all_of(xs.begin(), xs.end(), [&](double x) { return x == xs.front(); });
}

// Entropy with log base = length, so the result lies in [0, 1].
double normalized_entropy(std::span<const double> p) {
  if (p.size() <= 1) return 0.0;
  double h = 0.0;
  for (double x : p) {
    if (x > 0) h -= x * std::log(x);
  }
  return h / std::log(static_cast<double>(p.size()));
}

}  // namespace

ImportanceMatrix fit_importance(const DenseMatrix& z, const DenseMatrix& v,
                                const RegressionConfig& cfg) {
  check_regression_inputs(z, v);
  const auto split = train_test_split(z.rows, cfg.test_fraction, cfg.seed);
  ImportanceMatrix r{z.cols, v.cols, std::vector<double>(z.cols * v.cols, 0.0)};
  for (std::size_t j = 0; j < v.cols; ++j) {
    const auto y = column(v, j);
    if (is_constant(y)) {
      throw std::invalid_argument("factor column " + std::to_string(j) + " is constant");
    }
    const auto model = fit_model(z, y, split.train, cfg);
    for (std::size_t i = 0; i < z.cols; ++i) r.values[i * v.cols + j] = model->importance[i];
  }
  return r;
}

DciScores dci(const ImportanceMatrix& r) {
  if (r.values.size() != r.latents * r.factors || r.values.empty()) {
    throw std::invalid_argument("dci: malformed importance matrix");
  }
  for (double x : r.values) {
    if (!(x >= 0) || !std::isfinite(x)) throw std::invalid_argument("dci: importances must be >= 0");
  }
  const double total = std::accumulate(r.values.begin(), r.values.end(), 0.0);
  if (total <= 0) throw std::invalid_argument("dci: importance matrix is all zero");

  DciScores out;
  out.disentanglement_per_latent.assign(r.latents, 0.0);
  std::vector<double> p(r.factors);
  for (std::size_t i = 0; i < r.latents; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < r.factors; ++j) row += r.at(i, j);
    if (row <= 0) {
      out.warnings.push_back("latent " + std::to_string(i) + " has zero importance; excluded");
      continue;
    }
    for (std::size_t j = 0; j < r.factors; ++j) p[j] = r.at(i, j) / row;
    out.disentanglement_per_latent[i] = 1.0 - normalized_entropy(p);
    out.disentanglement += out.disentanglement_per_latent[i] * row / total;
  }

  std::vector<double> q(r.latents);
  double c_sum = 0.0;
  std::size_t c_count = 0;
  for (std::size_t j = 0; j < r.factors; ++j) {
    double col = 0.0;
    for (std::size_t i = 0; i < r.latents; ++i) col += r.at(i, j);
    if (col <= 0) {
      out.warnings.push_back("factor " + std::to_string(j) + " has zero importance; excluded");
      out.completeness_per_factor.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    for (std::size_t i = 0; i < r.latents; ++i) q[i] = r.at(i, j) / col;
    const double cj = 1.0 - normalized_entropy(q);
    out.completeness_per_factor.push_back(cj);
    c_sum += cj;
    ++c_count;
  }
  out.completeness = c_count ? c_sum / static_cast<double>(c_count) : 0.0;
  return out;
}

InformativenessResult informativeness(const DenseMatrix& z, const DenseMatrix& v,
                                      const RegressionConfig& cfg) {
  check_regression_inputs(z, v);
  const auto split = train_test_split(z.rows, cfg.test_fraction, cfg.seed);
  InformativenessResult out;
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t j = 0; j < v.cols; ++j) {
    auto y = column(v, j);
    if (is_constant(y)) {
      out.skipped_factors.push_back(j);
      out.per_factor.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    const auto [lo, hi] = std::minmax_element(y.begin(), y.end());
    const double min = *lo, range = *hi - *lo;
    for (auto& x : y) x = (x - min) / range;
    const auto model = fit_model(z, y, split.train, cfg);
    double mae = 0.0;
    for (auto r : split.test) mae += std::abs(model->predict(z, r) - y[r]);
    mae /= static_cast<double>(split.test.size());
    const double ij = std::clamp(1.0 - mae, 0.0, 1.0);
    out.per_factor.push_back(ij);
    sum += ij;
    ++used;
  }
  if (used == 0) throw std::invalid_argument("informativeness: every factor column is constant");
  out.informativeness = std::clamp(sum / static_cast<double>(used), 0.0, 1.0);
  return out;
}

// --- fairness ------------------------------------------------------------------

std::vector<CategoricalFactor> factors_from_corpus(const Corpus& corpus) {
  std::vector<CategoricalFactor> out;
  for (const auto& [name, _] : corpus.schema()) {
    CategoricalFactor f{name, {}};
    f.values.reserve(corpus.size());
    for (const auto& r : corpus.records()) f.values.push_back(r.attributes.at(name));
    out.push_back(std::move(f));
  }
  return out;
}

namespace {

struct Encoded {
  std::vector<std::string> classes;  // sorted
  std::vector<std::size_t> codes;    // per row
};

Encoded encode(const CategoricalFactor& f) {
  Encoded e;
  std::set<std::string> uniq(f.values.begin(), f.values.end());
  e.classes.assign(uniq.begin(), uniq.end());
  e.codes.reserve(f.values.size());
  for (const auto& v : f.values) {
    e.codes.push_back(static_cast<std::size_t>(
        std::lower_bound(e.classes.begin(), e.classes.end(), v) - e.classes.begin()));
  }
  return e;
}

bool covers_all_classes(const Encoded& e, std::span<const std::size_t> rows) {
  std::vector<bool> seen(e.classes.size(), false);
  for (auto r : rows) seen[e.codes[r]] = true;
  return std::all_of(seen.begin(), seen.end(), [](bool b) { return b; });
}

// Majority vote among the k nearest training rows; ties go to the class of
// the nearest tied neighbor.
std::vector<std::size_t> knn_predict(const DenseMatrix& z, std::span<const std::size_t> train,
                                     std::span<const std::size_t> test,
                                     const std::vector<std::size_t>& labels,
                                     std::size_t n_classes, std::size_t k) {
  k = std::min(k, train.size());
  std::vector<std::size_t> out;
  out.reserve(test.size());
  std::vector<std::pair<double, std::size_t>> dist(train.size());
  std::vector<std::size_t> votes(n_classes);
  for (auto q : test) {
    for (std::size_t t = 0; t < train.size(); ++t) {
      double d2 = 0.0;
      for (std::size_t c = 0; c < z.cols; ++c) {
        const double diff = z.at(q, c) - z.at(train[t], c);
        d2 += diff * diff;
      }
      dist[t] = {d2, train[t]};
    }
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
    std::fill(votes.begin(), votes.end(), 0);
    for (std::size_t m = 0; m < k; ++m) ++votes[labels[dist[m].second]];
    const std::size_t best = *std::max_element(votes.begin(), votes.end());
    for (std::size_t m = 0; m < k; ++m) {
      if (votes[labels[dist[m].second]] == best) {
        out.push_back(labels[dist[m].second]);
        break;
      }
    }
  }
  return out;
}

}  // namespace

FairnessReport fairness(const DenseMatrix& z, const std::vector<CategoricalFactor>& attributes,
                        std::size_t k, std::uint64_t split_seed) {
  if (attributes.size() < 2) throw std::invalid_argument("fairness: needs >= 2 attributes");
  if (k < 1) throw std::invalid_argument("fairness: K must be >= 1");
  std::vector<Encoded> enc;
  for (const auto& a : attributes) {
    if (a.values.size() != z.rows) {
      throw std::invalid_argument("fairness: attribute '" + a.name + "' row count mismatch");
    }
    enc.push_back(encode(a));
    if (enc.back().classes.size() < 2) {
      throw std::invalid_argument("fairness: attribute '" + a.name + "' has fewer than 2 classes");
    }
  }

  constexpr int kMaxAttempts = 5;
  Split split;
  std::uint64_t seed = split_seed;
  bool ok = false;
  for (int attempt = 0; attempt < kMaxAttempts && !ok; ++attempt) {
    seed = split_seed + static_cast<std::uint64_t>(attempt);
    split = train_test_split(z.rows, 0.25, seed);
    ok = std::all_of(enc.begin(), enc.end(), [&](const Encoded& e) {
      return covers_all_classes(e, split.train) && covers_all_classes(e, split.test);
    });
  }
  if (!ok) {
    throw std::invalid_argument("fairness: a class is missing from a split after 5 attempts");
  }

  FairnessReport report;
  report.split_seed_used = seed;
  double f_sum = 0.0, gap_sum = 0.0;
  std::size_t f_count = 0, gap_count = 0;
  for (std::size_t t = 0; t < enc.size(); ++t) {
    const auto pred =
        knn_predict(z, split.train, split.test, enc[t].codes, enc[t].classes.size(), k);
    for (std::size_t s = 0; s < enc.size(); ++s) {
      if (s == t) continue;
      FairnessPair pair{attributes[t].name, attributes[s].name, enc[t].classes, enc[s].classes,
                        {}, 0.0, 0.0};
      const std::size_t nt = enc[t].classes.size(), ns = enc[s].classes.size();
      pair.cells.assign(nt, std::vector<double>(ns, 0.0));
      std::vector<double> s_count(ns, 0.0);
      for (std::size_t m = 0; m < split.test.size(); ++m) {
        const auto sj = enc[s].codes[split.test[m]];
        s_count[sj] += 1.0;
        pair.cells[pred[m]][sj] += 1.0;
      }
      double pf = 0.0, pg = 0.0;
      std::size_t pg_count = 0;
      for (std::size_t ti = 0; ti < nt; ++ti) {
        for (std::size_t sj = 0; sj < ns; ++sj) {
          pair.cells[ti][sj] /= s_count[sj];
          pf += pair.cells[ti][sj];
        }
        for (std::size_t a = 0; a < ns; ++a) {
          for (std::size_t b = a + 1; b < ns; ++b) {
            pg += std::abs(pair.cells[ti][a] - pair.cells[ti][b]);
            ++pg_count;
          }
        }
      }
      f_sum += pf;
      f_count += nt * ns;
      gap_sum += pg;
      gap_count += pg_count;
      pair.f_score = pf / static_cast<double>(nt * ns);
      pair.dp_gap = pg_count ? pg / static_cast<double>(pg_count) : 0.0;
      report.pairs.push_back(std::move(pair));
    }
  }
  report.f_score = f_sum / static_cast<double>(f_count);
  report.dp_gap = gap_count ? gap_sum / static_cast<double>(gap_count) : 0.0;
  return report;
}

std::vector<AttributeDistribution> distribution_similarity(
    const Corpus& corpus, std::span<const std::string> selected_ids) {
  if (selected_ids.empty()) throw std::invalid_argument("distribution_similarity: empty selection");
  std::vector<std::size_t> selected;
  for (const auto& id : selected_ids) selected.push_back(corpus.require_index(id));

  std::vector<AttributeDistribution> out;
  for (const auto& [name, classes] : corpus.schema()) {
    AttributeDistribution d{name, classes, std::vector<double>(classes.size(), 0.0),
                            std::vector<double>(classes.size(), 0.0), 0.0};
    auto slot = [&](std::size_t idx) {
      const auto& v = corpus.record(idx).attributes.at(name);
      return static_cast<std::size_t>(std::find(classes.begin(), classes.end(), v) - classes.begin());
    };
    for (std::size_t i = 0; i < corpus.size(); ++i) d.full[slot(i)] += 1.0;
    for (auto idx : selected) d.selected[slot(idx)] += 1.0;
    for (auto& x : d.full) x /= static_cast<double>(corpus.size());
    for (auto& x : d.selected) x /= static_cast<double>(selected.size());
    for (std::size_t c = 0; c < classes.size(); ++c) {
      d.total_variation += 0.5 * std::abs(d.full[c] - d.selected[c]);
    }
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace faircop
