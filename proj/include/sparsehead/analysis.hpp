#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "sparsehead/tensor.hpp"

namespace sparsehead {

/// Centered covariance of the rows of v, normalized by (n - 1).
Tensor covariance(const Tensor& v);

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations,
/// iterated until the off-diagonal Frobenius norm drops below 1e-10 or 100
/// sweeps elapse. Eigenvalues sorted descending, eigenvectors as columns.
struct Evd {
  std::vector<double> eigenvalues;
  Tensor eigenvectors;
};
Evd symmetric_evd(const Tensor& c);

/// Two effective-rank readings of a descending spectrum: the count of
/// eigenvalues above eps_rel * sigma_max, and the exponentiated spectral
/// entropy (zero eigenvalues excluded). An all-zero spectrum is (0, 0).
struct EffectiveRank {
  std::size_t count = 0;
  double entropy = 0.0;
};
EffectiveRank effective_rank(std::span<const double> sigma, double eps_rel = 1e-6);

/// (max - min) / min over Euclidean distances from anchor to each row of
/// others. A duplicate of the anchor (min distance 0) is degenerate.
double minmax_ratio(std::span<const double> anchor, const Tensor& others);

/// Mean min-max distance ratio of n i.i.d. unit-gaussian points against a
/// gaussian anchor, averaged over trials, for each dimension in dims.
std::vector<std::pair<std::size_t, double>> concentration_curve(std::span<const std::size_t> dims,
                                                                std::size_t n, std::size_t trials,
                                                                std::uint64_t seed);

/// Covariance spectra of representations (C_r) and embeddings (C_z) with
/// effective ranks and floored log10 spectra.
struct SpectrumReport {
  Tensor c_r, c_z;
  std::vector<double> sigma_r, sigma_z;
  std::vector<double> log10_sigma_r, log10_sigma_z;
  EffectiveRank erank_r, erank_z;
};
SpectrumReport spectrum_report(const Tensor& representations, const Tensor& embeddings);

/// CSV export: header index,sigma_r,log10_sigma_r,sigma_z,log10_sigma_z, one
/// row per eigenvalue index, the shorter spectrum padded with empty fields.
void write_spectrum_csv(std::ostream& os, const SpectrumReport& report);

/// How close learned dimensions come to the ground-truth dimensions up to
/// permutation and per-dimension scaling: absolute Pearson correlations, the
/// total-|r|-maximizing bijective assignment, and the mean matched |r| (MCC).
/// scale[i] is the regression slope of learned dim i on its matched
/// ground-truth dim.
struct AlignmentReport {
  Tensor correlation;                  // |Pearson r|, learned x gt
  std::vector<std::size_t> assignment;  // per learned dim: matched gt dim or npos
  std::vector<double> matched_abs_r;    // per learned dim, 0 when unmatched
  std::vector<double> scale;            // signed slope per learned dim
  double mcc = 0.0;
  std::vector<bool> learned_zero_variance, gt_zero_variance;
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
};
AlignmentReport gte_alignment(const Tensor& learned, const Tensor& gt);

/// Exact minimum-cost assignment on a square cost matrix (Hungarian
/// algorithm); returns the column matched to each row.
std::vector<std::size_t> solve_assignment(const Tensor& cost);

}  // namespace sparsehead
