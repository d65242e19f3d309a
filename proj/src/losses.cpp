#include "faircop/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace faircop {

namespace {

void require_tau(double tau) {
  if (!(tau > 0) || !std::isfinite(tau)) throw std::invalid_argument("tau must be positive");
}

void require_dims(const std::vector<Vector>& xs, std::size_t dim, const char* what) {
  for (const auto& x : xs) {
    if (x.size() != dim) {
      throw std::invalid_argument(std::string(what) + ": dimension mismatch");
    }
  }
}

double log_sum_exp(std::span<const double> logits) {
  const double peak = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double l : logits) sum += std::exp(l - peak);
  return peak + std::log(sum);
}

std::vector<Vector> normalize_all(const std::vector<Vector>& xs) {
  std::vector<Vector> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(normalized(x));
  return out;
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

// coef * sum_{x in A} sum_{y in A\{x}} l_B(x, y), working on pre-normalized
// vectors. Gradients land on the normalized vectors.
double cluster_term(const std::vector<Vector>& a, const std::vector<Vector>& b, double tau,
                    double coef, std::vector<Vector>* grad_a, std::vector<Vector>* grad_b) {
  const std::size_t na = a.size();
  const std::size_t nb = b.size();
  const double pairs_per_anchor = static_cast<double>(na - 1);
  std::vector<double> logits(nb);
  std::vector<double> sum_a;
  if (grad_a) {
    sum_a.assign(a.front().size(), 0.0);
    for (const auto& x : a) axpy(1.0, x, sum_a);
  }
  double total = 0.0;
  for (std::size_t x = 0; x < na; ++x) {
    for (std::size_t k = 0; k < nb; ++k) logits[k] = dot(a[x], b[k]) / tau;
    const double lse = log_sum_exp(logits);
    double anchor = 0.0;
    for (std::size_t y = 0; y < na; ++y) {
      if (y != x) anchor += -dot(a[x], a[y]) / tau + lse;
    }
    total += anchor;

    if (grad_a) {
      // positives: d/da_x of -a_x.a_y/tau, and the symmetric share to a_y
      auto& gx = (*grad_a)[x];
      axpy(-coef / tau, sum_a, gx);
      axpy(coef / tau, a[x], gx);
      for (std::size_t y = 0; y < na; ++y) {
        if (y != x) axpy(-coef / tau, a[x], (*grad_a)[y]);
      }
      // negatives: (na-1) copies of the log-sum-exp
      for (std::size_t k = 0; k < nb; ++k) {
        const double w = coef * pairs_per_anchor * std::exp(logits[k] - lse) / tau;
        axpy(w, b[k], gx);
        if (grad_b) axpy(w, a[x], (*grad_b)[k]);
      }
    }
  }
  return coef * total;
}

std::vector<Vector> zeros_like(const std::vector<Vector>& xs) {
  std::vector<Vector> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.emplace_back(x.size(), 0.0);
  return out;
}

void to_raw_grad(const std::vector<Vector>& raw, std::vector<Vector>& grads) {
  for (std::size_t i = 0; i < raw.size(); ++i) grads[i] = unnormalize_grad(raw[i], grads[i]);
}

void check_sets(const std::vector<Vector>& s, const std::vector<Vector>& d, std::size_t min_d,
                double tau, const char* what) {
  require_tau(tau);
  if (s.size() < 2) throw std::invalid_argument(std::string(what) + ": needs |S| >= 2");
  if (d.size() < min_d) {
    throw std::invalid_argument(std::string(what) + ": needs |D| >= " + std::to_string(min_d));
  }
  require_dims(s, s.front().size(), what);
  require_dims(d, s.front().size(), what);
}

}  // namespace

double npair_term(const Vector& e, const Vector& e_pos, const std::vector<Vector>& negatives,
                  double tau) {
  require_tau(tau);
  if (negatives.empty()) throw std::invalid_argument("npair_term: empty negative set");
  if (e_pos.size() != e.size()) throw std::invalid_argument("npair_term: dimension mismatch");
  require_dims(negatives, e.size(), "npair_term");
  std::vector<double> logits;
  logits.reserve(negatives.size());
  for (const auto& k : negatives) logits.push_back(cosine_sim(e, k) / tau);
  return -cosine_sim(e, e_pos) / tau + log_sum_exp(logits);
}

double scloss(const std::vector<Vector>& similar, const std::vector<Vector>& dissimilar,
              double tau) {
  check_sets(similar, dissimilar, 1, tau, "scloss");
  const double n = static_cast<double>(similar.size());
  return cluster_term(normalize_all(similar), normalize_all(dissimilar), tau, 1.0 / (n * (n - 1)),
                      nullptr, nullptr);
}

double scloss_alt(const std::vector<Vector>& similar, const std::vector<Vector>& dissimilar,
                  double tau) {
  check_sets(similar, dissimilar, 2, tau, "scloss_alt");
  const double ns = static_cast<double>(similar.size());
  const double nd = static_cast<double>(dissimilar.size());
  const auto s = normalize_all(similar);
  const auto d = normalize_all(dissimilar);
  return cluster_term(s, d, tau, 1.0 / (2 * ns * (ns - 1)), nullptr, nullptr) +
         cluster_term(d, s, tau, 1.0 / (2 * nd * (nd - 1)), nullptr, nullptr);
}

LossGradient scloss_with_grad(const std::vector<Vector>& similar,
                              const std::vector<Vector>& dissimilar, double tau) {
  check_sets(similar, dissimilar, 1, tau, "scloss");
  const double n = static_cast<double>(similar.size());
  const auto s = normalize_all(similar);
  const auto d = normalize_all(dissimilar);
  LossGradient out{0.0, zeros_like(similar), zeros_like(dissimilar)};
  out.value =
      cluster_term(s, d, tau, 1.0 / (n * (n - 1)), &out.grad_similar, &out.grad_dissimilar);
  to_raw_grad(similar, out.grad_similar);
  to_raw_grad(dissimilar, out.grad_dissimilar);
  return out;
}

LossGradient scloss_alt_with_grad(const std::vector<Vector>& similar,
                                  const std::vector<Vector>& dissimilar, double tau) {
  check_sets(similar, dissimilar, 2, tau, "scloss_alt");
  const double ns = static_cast<double>(similar.size());
  const double nd = static_cast<double>(dissimilar.size());
  const auto s = normalize_all(similar);
  const auto d = normalize_all(dissimilar);
  LossGradient out{0.0, zeros_like(similar), zeros_like(dissimilar)};
  out.value = cluster_term(s, d, tau, 1.0 / (2 * ns * (ns - 1)), &out.grad_similar,
                           &out.grad_dissimilar) +
              cluster_term(d, s, tau, 1.0 / (2 * nd * (nd - 1)), &out.grad_dissimilar,
                           &out.grad_similar);
  to_raw_grad(similar, out.grad_similar);
  to_raw_grad(dissimilar, out.grad_dissimilar);
  return out;
}

NtXentGradient nt_xent_with_grad(const std::vector<Vector>& views, const LossConfig& cfg) {
  require_tau(cfg.tau);
  const std::size_t total = views.size();
  if (total < 4 || total % 2 != 0) {
    throw std::invalid_argument("nt_xent: needs an even number of rows, batch >= 2");
  }
  require_dims(views, views.front().size(), "nt_xent");
  const std::size_t half = total / 2;
  const double tau = cfg.tau;
  const auto z = normalize_all(views);

  std::vector<std::vector<double>> sim(total, std::vector<double>(total));
  for (std::size_t i = 0; i < total; ++i) {
    for (std::size_t j = i; j < total; ++j) sim[i][j] = sim[j][i] = dot(z[i], z[j]);
  }

  NtXentGradient out{0.0, zeros_like(views)};
  const double coef = 1.0 / static_cast<double>(total);
  std::vector<double> logits;
  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < total; ++i) {
    const std::size_t pos = i < half ? i + half : i - half;
    logits.clear();
    members.clear();
    for (std::size_t j = 0; j < total; ++j) {
      if (j == i || (j == pos && !cfg.include_positive_in_denominator)) continue;
      members.push_back(j);
      logits.push_back(sim[i][j] / tau);
    }
    const double lse = log_sum_exp(logits);
    out.value += coef * (-sim[i][pos] / tau + lse);

    axpy(-coef / tau, z[pos], out.grad[i]);
    axpy(-coef / tau, z[i], out.grad[pos]);
    for (std::size_t m = 0; m < members.size(); ++m) {
      const double w = coef * std::exp(logits[m] - lse) / tau;
      axpy(w, z[members[m]], out.grad[i]);
      axpy(w, z[i], out.grad[members[m]]);
    }
  }
  to_raw_grad(views, out.grad);
  return out;
}

double score(const Vector& u, const std::vector<Vector>& similar) {
  if (similar.empty()) throw std::invalid_argument("score: empty similar set");
  return cosine_sim(u, centroid(similar));
}

double score_alt(const Vector& u, const std::vector<Vector>& similar,
                 const std::vector<Vector>& dissimilar) {
  if (similar.empty() || dissimilar.empty()) {
    throw std::invalid_argument("score_alt: empty similar or dissimilar set");
  }
  return cosine_sim(u, centroid(similar)) - cosine_sim(u, centroid(dissimilar));
}

}  // namespace faircop
