#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "faircop/corpus.hpp"
#include "faircop/simulator.hpp"

namespace faircop {

// --- retrieval metrics ---------------------------------------------------------

/// Per scored round: 1 - rank/(candidates-1), rank 0 = best (1 for a single
/// candidate); averaged over the rounds before convergence that scored the
/// target. Throws when no round did.
double percentile_rank(const SimulationLog& log);

/// Mean over rounds of |similar| / |shown|. Throws on an empty log.
double average_relevance(const SimulationLog& log);

/// Mean N; unconverged runs count as their max_iterations.
double average_convergent_iterations(std::span<const SimulationLog> logs);

/// 1 - N/(max_iter + 5) when the image was reported, else 0.
double convergence_score(std::size_t n, std::size_t max_iter, bool reported);

// --- representation metrics ----------------------------------------------------

struct DenseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;  // row-major

  DenseMatrix() = default;
  DenseMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

DenseMatrix matrix_from_view(const EmbeddingView& view);

enum class Regressor { boosted_stumps, ridge };
Regressor parse_regressor(const std::string& name);

struct RegressionConfig {
  Regressor regressor = Regressor::boosted_stumps;
  double test_fraction = 0.25;
  std::uint64_t seed = 0;
  std::size_t n_estimators = 100;
  double learning_rate = 0.1;
  double ridge_lambda = 1e-3;
};

/// R[i][j] = importance of latent i for predicting factor j.
struct ImportanceMatrix {
  std::size_t latents = 0;
  std::size_t factors = 0;
  std::vector<double> values;  // latents x factors

  double at(std::size_t i, std::size_t j) const { return values[i * factors + j]; }
};

/// Fits one regressor per factor column of V from Z. Throws on a constant
/// factor column or fewer than 20 rows.
ImportanceMatrix fit_importance(const DenseMatrix& z, const DenseMatrix& v,
                                const RegressionConfig& cfg);

struct DciScores {
  double disentanglement = 0.0;
  double completeness = 0.0;
  std::vector<double> disentanglement_per_latent;
  std::vector<double> completeness_per_factor;
  std::vector<std::string> warnings;
};

/// Entropies use the distribution length as log base; overall completeness
/// is the mean of the per-factor scores.
DciScores dci(const ImportanceMatrix& r);

struct InformativenessResult {
  double informativeness = 0.0;
  std::vector<double> per_factor;  // NaN for skipped factors
  std::vector<std::size_t> skipped_factors;
};

/// Factors min-max scaled to [0,1]; I_j = 1 - held-out MAE, clamped.
InformativenessResult informativeness(const DenseMatrix& z, const DenseMatrix& v,
                                      const RegressionConfig& cfg);

struct CategoricalFactor {
  std::string name;
  std::vector<std::string> values;  // one per row
};

std::vector<CategoricalFactor> factors_from_corpus(const Corpus& corpus);

struct FairnessPair {
  std::string target;
  std::string sensitive;
  std::vector<std::string> target_classes;
  std::vector<std::string> sensitive_classes;
  std::vector<std::vector<double>> cells;  // cells[t][s] = p(t | s)
  double f_score = 0.0;
  double dp_gap = 0.0;
};

struct FairnessReport {
  std::vector<FairnessPair> pairs;
  double f_score = 0.0;
  double dp_gap = 0.0;
  std::uint64_t split_seed_used = 0;
};

/// For every ordered (target, sensitive) attribute pair, a K-NN classifier on
/// a 75/25 split predicts the target; cells hold p(t_i | s_j) on the test set.
FairnessReport fairness(const DenseMatrix& z, const std::vector<CategoricalFactor>& attributes,
                        std::size_t k, std::uint64_t split_seed);

struct AttributeDistribution {
  std::string attribute;
  std::vector<std::string> classes;
  std::vector<double> full;
  std::vector<double> selected;
  double total_variation = 0.0;
};

std::vector<AttributeDistribution> distribution_similarity(
    const Corpus& corpus, std::span<const std::string> selected_ids);

}  // namespace faircop
