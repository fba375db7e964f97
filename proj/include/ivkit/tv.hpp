// include/ivkit/tv.hpp

// Copyright 2026  ivkit authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

// Total-variability model M = m + T w, w ~ N(0, I), trained by EM on
// Baum-Welch statistics collected against a fixed (adapted) UBM.
//
// For an utterance with occupancies N_c and centered first-order statistics
// f_c = F_c - N_c m_c, the latent posterior is Gaussian with
//   precision  L = I + sum_c N_c T_c' S_c^-1 T_c
//   mean       w = L^-1 sum_c T_c' S_c^-1 f_c
// where T_c is the D x R block of rows belonging to component c and S_c the
// diagonal UBM covariance. The i-vector is that posterior mean.

#pragma once

#include "ivkit/common.hpp"
#include "ivkit/gmm.hpp"

namespace ivkit {

struct TvModel {
  Matrix T;     // (K*D) x R, component-major rows
  DiagGmm ubm;  // the UBM used for alignment and centering

  Index ivector_dim() const { return T.cols(); }

  void validate() const {
    ubm.validate();
    if (T.rows() != ubm.num_components() * ubm.dim())
      throw DataError("tv: T has " + std::to_string(T.rows()) + " rows, expected K*D");
    if (T.cols() < 1) throw DataError("tv: ivector dimension must be >= 1");
    if (!T.allFinite()) throw DataError("tv: T is not finite");
  }
};

enum class StatsPool { kSum, kMean };

inline BwStats pool_stats(std::span<const BwStats> stats, StatsPool mode = StatsPool::kSum) {
  if (stats.empty()) throw DataError("pool_stats: empty list");
  BwStats out = sum_stats(stats);
  if (mode == StatsPool::kMean) {
    const double n = static_cast<double>(stats.size());
    out.zeroth /= n;
    out.first /= n;
  }
  return out;
}

// Per-utterance latent posterior.
struct TvPosterior {
  Vector mean;        // R
  Matrix covariance;  // R x R, L^-1
  Vector linear;      // T' S^-1 f
  double log_det_precision = 0.0;
};

// Caches T_c' S_c^-1 T_c per component.
class TvExtractor {
 public:
  explicit TvExtractor(const TvModel& model) : model_(model) {
    model.validate();
    const Index K = model.ubm.num_components(), D = model.ubm.dim(), R = model.ivector_dim();
    inv_var_ = model.ubm.variances.cwiseInverse();
    gram_.resize(static_cast<std::size_t>(K));
    weighted_T_.resize(K * D, R);
    for (Index c = 0; c < K; ++c) {
      const auto Tc = model.T.middleRows(c * D, D);
      weighted_T_.middleRows(c * D, D) = inv_var_.row(c).transpose().asDiagonal() * Tc;
      gram_[static_cast<std::size_t>(c)] = Tc.transpose() * weighted_T_.middleRows(c * D, D);
    }
  }

  Index dim() const { return model_.ivector_dim(); }

  // Posterior precision matrix I + sum_c N_c T_c' S_c^-1 T_c.
  Matrix precision(const BwStats& stats) const {
    check(stats);
    const Index R = dim();
    Matrix L = Matrix::Identity(R, R);
    for (Index c = 0; c < stats.zeroth.size(); ++c)
      if (stats.zeroth(c) != 0.0) L += stats.zeroth(c) * gram_[static_cast<std::size_t>(c)];
    return L;
  }

  TvPosterior posterior(const BwStats& stats) const {
    const Matrix L = precision(stats);
    const Index K = model_.ubm.num_components(), D = model_.ubm.dim();
    Vector f(K * D);
    for (Index c = 0; c < K; ++c)
      f.segment(c * D, D) =
          (stats.first.row(c) - stats.zeroth(c) * model_.ubm.means.row(c)).transpose();
    TvPosterior p;
    p.linear = weighted_T_.transpose() * f;
    Eigen::LLT<Matrix> llt(L);
    if (llt.info() != Eigen::Success)
      throw NumericalError("extract_ivector: posterior precision is not positive definite");
    p.mean = llt.solve(p.linear);
    p.covariance = llt.solve(Matrix::Identity(dim(), dim()));
    p.log_det_precision = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    return p;
  }

  Vector extract(const BwStats& stats) const {
    Vector w = posterior(stats).mean;
    check_finite(w, "i-vector");
    return w;
  }

  // T-dependent part of log p(frames | alignment) for one utterance:
  //   0.5 b' L^-1 b - 0.5 log|L|
  static double objective(const TvPosterior& p) {
    return 0.5 * p.linear.dot(p.mean) - 0.5 * p.log_det_precision;
  }

 private:
  void check(const BwStats& stats) const {
    if (stats.zeroth.size() != model_.ubm.num_components() || stats.first.cols() != model_.ubm.dim())
      throw DataError("tv: statistics do not match the UBM");
  }

  const TvModel& model_;
  Matrix inv_var_;
  Matrix weighted_T_;  // S^-1 T
  std::vector<Matrix> gram_;
};

inline Vector extract_ivector(const TvModel& tv, const BwStats& stats) {
  return TvExtractor(tv).extract(stats);
}

inline double tv_objective(const TvModel& tv, std::span<const BwStats> stats) {
  TvExtractor ex(tv);
  double total = 0.0;
  for (const auto& s : stats) total += TvExtractor::objective(ex.posterior(s));
  return total;
}

struct TvTrainOptions {
  int ivector_dim = 24;
  int num_iters = 10;
  std::uint64_t seed = 0;
  bool min_divergence = true;
  // Random init: T_cd,r ~ N(0, init_scale^2 * S_cd).
  double init_scale = 0.5;
};

struct TvTrainResult {
  TvModel model;
  // Objective of the model entering each iteration, then of the final model.
  std::vector<double> objective;
};

// EM for T with a per-component row solve, optionally followed by the
// minimum-divergence re-estimation of the prior (absorbed back into T).
inline TvTrainResult train_tv(const DiagGmm& ubm, std::span<const BwStats> stats,
                              const TvTrainOptions& opt, const Matrix* initial_T = nullptr) {
  ubm.validate();
  const Index K = ubm.num_components(), D = ubm.dim(), R = opt.ivector_dim;
  if (R < 1) throw ConfigError("train_tv: ivector_dim must be >= 1");
  if (R > K * D) throw ConfigError("train_tv: ivector_dim exceeds K*D");
  if (stats.empty()) throw DataError("train_tv: no statistics");
  if (opt.num_iters < 0) throw ConfigError("train_tv: num_iters must be >= 0");

  TvTrainResult res;
  res.model.ubm = ubm;
  if (initial_T) {
    if (initial_T->rows() != K * D || initial_T->cols() != R)
      throw ConfigError("train_tv: initial T has the wrong shape");
    if (initial_T->isZero(0.0))
      throw ConfigError("train_tv: zero initialization is an EM fixed point");
    res.model.T = *initial_T;
  } else {
    Rng rng = make_rng(opt.seed, 21);
    res.model.T = randn(rng, K * D, R, opt.init_scale);
    for (Index c = 0; c < K; ++c)
      res.model.T.middleRows(c * D, D) =
          ubm.variances.row(c).cwiseSqrt().transpose().asDiagonal() * res.model.T.middleRows(c * D, D);
  }

  const Index U = static_cast<Index>(stats.size());
  for (int it = 0; it <= opt.num_iters; ++it) {
    TvExtractor ex(res.model);
    std::vector<Matrix> A(static_cast<std::size_t>(K), Matrix::Zero(R, R));
    Matrix C = Matrix::Zero(K * D, R);
    Matrix G = Matrix::Zero(R, R);
    double obj = 0.0;
    for (const auto& s : stats) {
      const TvPosterior p = ex.posterior(s);
      obj += TvExtractor::objective(p);
      if (it == opt.num_iters) continue;
      const Matrix second = p.covariance + p.mean * p.mean.transpose();
      G += second;
      for (Index c = 0; c < K; ++c) {
        if (s.zeroth(c) == 0.0) continue;
        A[static_cast<std::size_t>(c)] += s.zeroth(c) * second;
        C.middleRows(c * D, D).noalias() +=
            (s.first.row(c) - s.zeroth(c) * ubm.means.row(c)).transpose() * p.mean.transpose();
      }
    }
    res.objective.push_back(obj);
    if (it == opt.num_iters) break;

    for (Index c = 0; c < K; ++c) {
      const Matrix& Ac = A[static_cast<std::size_t>(c)];
      Eigen::LLT<Matrix> llt(Ac);
      if (Ac.isZero(0.0) || llt.info() != Eigen::Success) continue;  // unseen component
      res.model.T.middleRows(c * D, D) = llt.solve(C.middleRows(c * D, D).transpose()).transpose();
    }
    if (opt.min_divergence) {
      G /= static_cast<double>(U);
      Eigen::LLT<Matrix> llt(G);
      if (llt.info() == Eigen::Success) res.model.T = res.model.T * Matrix(llt.matrixL());
    }
    if (!res.model.T.allFinite()) throw NumericalError("train_tv: T became non-finite");
  }
  return res;
}

}  // namespace ivkit
