#pragma once

#include <vector>

#include "faircop/vecmath.hpp"

namespace faircop {

struct LossConfig {
  double tau = 0.5;
  // SimCLR convention; only the pretraining objective exposes it.
  bool include_positive_in_denominator = false;
};

/// -log( exp(sim(e,e')/tau) / sum_{k in U} exp(sim(e,k)/tau) ).
/// The positive is not part of the denominator. Evaluated in log-sum-exp form.
double npair_term(const Vector& e, const Vector& e_pos, const std::vector<Vector>& negatives,
                  double tau);

/// Mean N-pair term over all ordered pairs of distinct similar projections,
/// with the dissimilar projections as negatives. Needs |S| >= 2, |D| >= 1.
double scloss(const std::vector<Vector>& similar, const std::vector<Vector>& dissimilar,
              double tau);

/// Symmetric variant: clusters S against D and D against S, each half
/// normalized by its own pair count. Needs |S| >= 2 and |D| >= 2.
double scloss_alt(const std::vector<Vector>& similar, const std::vector<Vector>& dissimilar,
                  double tau);

struct LossGradient {
  double value = 0.0;
  std::vector<Vector> grad_similar;
  std::vector<Vector> grad_dissimilar;
};

LossGradient scloss_with_grad(const std::vector<Vector>& similar,
                              const std::vector<Vector>& dissimilar, double tau);
LossGradient scloss_alt_with_grad(const std::vector<Vector>& similar,
                                  const std::vector<Vector>& dissimilar, double tau);

/// NT-Xent over 2B projections where rows i and i+B are the two views of one
/// sample. Every other row is a negative for an anchor.
struct NtXentGradient {
  double value = 0.0;
  std::vector<Vector> grad;
};
NtXentGradient nt_xent_with_grad(const std::vector<Vector>& views, const LossConfig& cfg);

/// Cosine similarity between u and the centroid of `similar`.
double score(const Vector& u, const std::vector<Vector>& similar);

/// score(u, S) - cosine similarity to the centroid of `dissimilar`.
double score_alt(const Vector& u, const std::vector<Vector>& similar,
                 const std::vector<Vector>& dissimilar);

}  // namespace faircop
