#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace faircop {

using Vector = std::vector<double>;

// Norms below this are treated as zero by every similarity routine.
inline constexpr double kZeroNorm = 1e-12;

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);

/// a.b / (|a||b|); 0 when either norm is below kZeroNorm. Throws on dim mismatch.
double cosine_sim(std::span<const double> a, std::span<const double> b);

/// a / |a|, or the zero vector when |a| < kZeroNorm.
Vector normalized(std::span<const double> a);

/// Pulls a gradient w.r.t. normalized(a) back to a gradient w.r.t. a:
/// (I - n n^T) g / |a|. Zero for zero-norm a.
Vector unnormalize_grad(std::span<const double> a, std::span<const double> grad_normalized);

/// Unweighted arithmetic mean. Throws on an empty set.
Vector centroid(const std::vector<Vector>& xs);

Vector to_vector(std::span<const float> xs);

}  // namespace faircop
