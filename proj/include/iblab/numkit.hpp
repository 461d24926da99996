#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace iblab {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Vec = VectorX<double>;
using Mat = MatrixX<double>;
using Index = Eigen::Index;

/// Deterministic generator used everywhere randomness is needed. Always
/// passed explicitly; there is no global generator.
using Rng = std::mt19937_64;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NonPositiveDefinite : public NumericError {
 public:
  explicit NonPositiveDefinite(Index minor)
      : NumericError("matrix is not positive definite (leading minor " +
                     std::to_string(minor) + " <= 0)"),
        minor_(minor) {}
  Index minor() const { return minor_; }

 private:
  Index minor_;
};

/// splitmix64 finalizer; used to derive independent stream seeds from a base
/// seed and a stream label.
inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.allFinite();
}

inline void require_same_dim(Index a, Index b, const char* what) {
  if (a != b) {
    throw DimensionError(std::string(what) + ": dimension mismatch (" +
                         std::to_string(a) + " vs " + std::to_string(b) + ")");
  }
}

template <typename Scalar>
class CholFactor;

/// Factors a symmetric positive-definite matrix. Throws DimensionError for a
/// non-square or asymmetric input and NonPositiveDefinite when a leading minor
/// is not positive.
template <typename Scalar = double, typename Derived>
CholFactor<Scalar> cholesky(const Eigen::MatrixBase<Derived>& m);

/// Lower-triangular Cholesky factor L with L Lᵀ = A and a strictly positive
/// diagonal. Only obtainable through `cholesky()`, so a held CholFactor is
/// always valid.
template <typename Scalar>
class CholFactor {
 public:
  const MatrixX<Scalar>& lower() const { return lower_; }
  Index dim() const { return lower_.rows(); }

  MatrixX<Scalar> reconstruct() const { return lower_ * lower_.transpose(); }

  /// Solves L y = v.
  template <typename Derived>
  VectorX<Scalar> solve_lower(const Eigen::MatrixBase<Derived>& v) const {
    require_same_dim(v.size(), dim(), "CholFactor::solve_lower");
    return lower_.template triangularView<Eigen::Lower>().solve(v);
  }

  /// Solves A x = v.
  template <typename Derived>
  VectorX<Scalar> solve(const Eigen::MatrixBase<Derived>& v) const {
    VectorX<Scalar> y = solve_lower(v);
    return lower_.transpose().template triangularView<Eigen::Upper>().solve(y);
  }

  template <typename S, typename D>
  friend CholFactor<S> cholesky(const Eigen::MatrixBase<D>& m);

 private:
  explicit CholFactor(MatrixX<Scalar> lower) : lower_(std::move(lower)) {}
  MatrixX<Scalar> lower_;
};

using Chol = CholFactor<double>;

template <typename Scalar, typename Derived>
CholFactor<Scalar> cholesky(const Eigen::MatrixBase<Derived>& m) {
  if (m.rows() != m.cols() || m.rows() == 0) {
    throw DimensionError("cholesky: matrix must be square and non-empty");
  }
  if (!m.allFinite()) throw NumericError("cholesky: non-finite entry");
  const Scalar scale = std::max<Scalar>(Scalar(1), m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > Scalar(1e-9) * scale) {
    throw DimensionError("cholesky: matrix is not symmetric");
  }
  Eigen::LLT<MatrixX<Scalar>> llt(m.template cast<Scalar>());
  MatrixX<Scalar> lower = llt.matrixL();
  if (llt.info() != Eigen::Success) {
    for (Index i = 0; i < lower.rows(); ++i) {
      if (!(lower(i, i) > Scalar(0)) || !std::isfinite(lower(i, i))) {
        throw NonPositiveDefinite(i + 1);
      }
    }
    throw NonPositiveDefinite(lower.rows());
  }
  for (Index i = 0; i < lower.rows(); ++i) {
    if (!(lower(i, i) > Scalar(0))) throw NonPositiveDefinite(i + 1);
  }
  return CholFactor<Scalar>(std::move(lower));
}

/// Squared Mahalanobis distance (x-μ)ᵀ Σ⁻¹ (x-μ) with Σ = L Lᵀ, computed by a
/// forward substitution.
template <typename Scalar, typename DX, typename DM>
Scalar mahalanobis_squared(const Eigen::MatrixBase<DX>& x,
                           const Eigen::MatrixBase<DM>& mean,
                           const CholFactor<Scalar>& chol) {
  require_same_dim(x.size(), mean.size(), "mahalanobis");
  require_same_dim(x.size(), chol.dim(), "mahalanobis");
  if (!x.allFinite() || !mean.allFinite()) {
    throw NumericError("mahalanobis: non-finite input");
  }
  VectorX<Scalar> diff = (x - mean).template cast<Scalar>();
  return chol.solve_lower(diff).squaredNorm();
}

template <typename Scalar, typename DX, typename DM>
Scalar mahalanobis(const Eigen::MatrixBase<DX>& x,
                   const Eigen::MatrixBase<DM>& mean,
                   const CholFactor<Scalar>& chol) {
  return std::sqrt(mahalanobis_squared(x, mean, chol));
}

template <typename Scalar>
struct MeanCov {
  VectorX<Scalar> mean;
  MatrixX<Scalar> cov;
};

/// Sample mean and unbiased covariance, blended toward (trace/d)·I by
/// `shrinkage`.
template <typename Scalar = double>
MeanCov<Scalar> empirical_mean_cov(std::span<const VectorX<Scalar>> samples,
                                   Scalar shrinkage) {
  if (samples.size() < 2) {
    throw std::invalid_argument("empirical_mean_cov: need at least 2 samples");
  }
  if (!std::isfinite(shrinkage) || shrinkage < 0 || shrinkage >= 1) {
    throw std::invalid_argument("empirical_mean_cov: shrinkage must be in [0,1)");
  }
  const Index d = samples.front().size();
  VectorX<Scalar> mean = VectorX<Scalar>::Zero(d);
  for (const auto& s : samples) {
    require_same_dim(s.size(), d, "empirical_mean_cov");
    if (!s.allFinite()) throw NumericError("empirical_mean_cov: non-finite sample");
    mean += s;
  }
  const auto n = static_cast<Scalar>(samples.size());
  mean /= n;
  MatrixX<Scalar> cov = MatrixX<Scalar>::Zero(d, d);
  for (const auto& s : samples) {
    const VectorX<Scalar> c = s - mean;
    cov.noalias() += c * c.transpose();
  }
  cov /= (n - Scalar(1));
  if (shrinkage > 0) {
    const Scalar target = cov.trace() / static_cast<Scalar>(d);
    cov *= (Scalar(1) - shrinkage);
    cov.diagonal().array() += shrinkage * target;
  }
  return {std::move(mean), std::move(cov)};
}

/// Regularized lower incomplete gamma P(a, x).
double regularized_gamma_p(double a, double x);

/// CDF of the chi-squared distribution with `dof` degrees of freedom.
double chi2_cdf(double x, int dof);

/// Upper tail 1 - chi2_cdf, evaluated without cancellation.
double chi2_sf(double x, int dof);

/// Inverse of chi2_cdf for p in [0, 1).
double chi2_quantile(double p, int dof);

template <typename Scalar = double>
VectorX<Scalar> standard_normal(Index dim, Rng& rng) {
  std::normal_distribution<Scalar> normal(Scalar(0), Scalar(1));
  VectorX<Scalar> z(dim);
  for (Index i = 0; i < dim; ++i) z(i) = normal(rng);
  return z;
}

/// Draws mean + L z with z ~ N(0, I).
template <typename Scalar, typename Derived>
VectorX<Scalar> sample_gaussian(const Eigen::MatrixBase<Derived>& mean,
                                const CholFactor<Scalar>& chol, Rng& rng) {
  require_same_dim(mean.size(), chol.dim(), "sample_gaussian");
  const VectorX<Scalar> z = standard_normal<Scalar>(mean.size(), rng);
  return mean + chol.lower().template triangularView<Eigen::Lower>() * z;
}

/// Numerically stable log(1 + exp(x)).
inline double softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Softmax of a vector with the max subtracted first.
template <typename Derived>
VectorX<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& logits) {
  using S = typename Derived::Scalar;
  const S m = logits.maxCoeff();
  VectorX<S> p = (logits.array() - m).exp().matrix();
  return p / p.sum();
}

}  // namespace iblab
