// include/ivkit/precondition.hpp

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

// I-vector preconditioning: nuisance attribute projection on language
// classes, centering, length normalization and regularized LDA. Data sets are
// passed as matrices with one vector per row.

#pragma once

#include "ivkit/common.hpp"

#include <span>

namespace ivkit {

namespace detail {

// Makes the largest-magnitude entry of every column positive (first one wins
// on ties), so eigenvector signs are reproducible.
inline void normalize_column_signs(Matrix& m) {
  for (Index j = 0; j < m.cols(); ++j) {
    Index best = 0;
    for (Index i = 1; i < m.rows(); ++i)
      if (std::abs(m(i, j)) > std::abs(m(best, j))) best = i;
    if (m(best, j) < 0.0) m.col(j) = -m.col(j);
  }
}

// Groups row indices by label; groups are ordered by label.
inline std::map<std::string, std::vector<Index>> group_rows(std::span<const std::string> labels) {
  std::map<std::string, std::vector<Index>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].push_back(static_cast<Index>(i));
  return groups;
}

inline void check_labels(const Matrix& X, std::span<const std::string> labels, const char* who) {
  if (static_cast<Index>(labels.size()) != X.rows())
    throw DataError(std::string(who) + ": label count does not match the number of vectors");
  if (!X.allFinite()) throw DataError(std::string(who) + ": non-finite input");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// NAP

enum class NapCriterion {
  kBetweenClass,  // principal directions of the scatter of class means
  kWithinClass,   // principal directions of the pooled within-class scatter
};

struct NapProjection {
  Matrix basis;        // d x k, orthonormal columns
  Vector eigenvalues;  // k, descending

  Index corank() const { return basis.cols(); }

  // (I - B B') v
  Vector apply(const Vector& v) const {
    if (v.size() != basis.rows()) throw DataError("nap: dimension mismatch");
    return v - basis * (basis.transpose() * v);
  }
  Matrix apply_rows(const Matrix& X) const { return X - (X * basis) * basis.transpose(); }
};

inline NapProjection fit_nap(const Matrix& X, std::span<const std::string> classes, int corank,
                             NapCriterion criterion = NapCriterion::kBetweenClass) {
  detail::check_labels(X, classes, "fit_nap");
  const auto groups = detail::group_rows(classes);
  const Index d = X.cols();
  if (groups.size() < 2) throw ConfigError("fit_nap: need at least 2 classes");
  if (corank < 0 || corank >= d) throw ConfigError("fit_nap: corank must lie in [0, dim)");

  const double n = static_cast<double>(X.rows());
  const Vector global_mean = X.colwise().mean().transpose();
  Matrix S = Matrix::Zero(d, d);
  for (const auto& [label, idx] : groups) {
    const Matrix Xc = select_rows(X, idx);
    const Vector mean = Xc.colwise().mean().transpose();
    if (criterion == NapCriterion::kBetweenClass) {
      const Vector diff = mean - global_mean;
      S += (static_cast<double>(idx.size()) / n) * diff * diff.transpose();
    } else {
      const Matrix centered = Xc.rowwise() - mean.transpose();
      S += centered.transpose() * centered / n;
    }
  }
  S = 0.5 * (S + S.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(S);
  const Vector& ev = es.eigenvalues();  // ascending
  const double tol = 1e-10 * std::max(ev.cwiseAbs().maxCoeff(), 1e-300);
  int nonzero = 0;
  for (Index i = 0; i < d; ++i)
    if (ev(i) > tol) ++nonzero;
  if (corank > nonzero) {
    warn("fit_nap: corank " + std::to_string(corank) + " exceeds the " + std::to_string(nonzero) +
         " nonzero scatter eigenvalues; clamping");
    corank = nonzero;
  }
  NapProjection out;
  out.basis.resize(d, corank);
  out.eigenvalues.resize(corank);
  for (int j = 0; j < corank; ++j) {
    out.basis.col(j) = es.eigenvectors().col(d - 1 - j);
    out.eigenvalues(j) = ev(d - 1 - j);
  }
  detail::normalize_column_signs(out.basis);
  return out;
}

inline int default_nap_corank(int n_classes) { return std::min(n_classes - 1, 10); }

// ---------------------------------------------------------------------------
// Centering and length normalization

struct CenterTransform {
  Vector mean;

  Vector apply(const Vector& v) const {
    if (v.size() != mean.size()) throw DataError("center: dimension mismatch");
    return v - mean;
  }
  Matrix apply_rows(const Matrix& X) const { return X.rowwise() - mean.transpose(); }
};

inline CenterTransform fit_center(const Matrix& X) {
  if (X.rows() == 0) throw DataError("fit_center: empty population");
  return {X.colwise().mean().transpose()};
}

inline Vector length_normalize(const Vector& v) {
  const double norm = v.norm();
  if (!(norm > 0.0) || !std::isfinite(norm))
    throw NumericalError("length_normalize: zero or non-finite vector (degenerate upstream projection?)");
  return v / norm;
}

inline Matrix length_normalize_rows(const Matrix& X) {
  Matrix out(X.rows(), X.cols());
  for (Index i = 0; i < X.rows(); ++i) out.row(i) = length_normalize(X.row(i).transpose()).transpose();
  return out;
}

// ---------------------------------------------------------------------------
// Regularized LDA
//
//   S_w = a I + 1/S sum_s 1/N_s sum_n (w_sn - m_s)(w_sn - m_s)'
//   S_b = b I + 1/S sum_s (m_s - m)(m_s - m)'
//
// with m the mean of all samples. The projection holds the leading
// generalized eigenvectors of (S_b, S_w), eigenvalue-descending.

struct ScatterMatrices {
  Matrix within;
  Matrix between;
};

inline ScatterMatrices rlda_scatter(const Matrix& X, std::span<const std::string> speakers,
                                    double alpha, double beta) {
  detail::check_labels(X, speakers, "rlda");
  const auto groups = detail::group_rows(speakers);
  const Index d = X.cols();
  const double S = static_cast<double>(groups.size());
  const Vector total_mean = X.colwise().mean().transpose();
  ScatterMatrices out{Matrix::Zero(d, d), Matrix::Zero(d, d)};
  for (const auto& [label, idx] : groups) {
    const Matrix Xs = select_rows(X, idx);
    const Vector mean = Xs.colwise().sum().transpose() / static_cast<double>(idx.size());
    const Matrix centered = Xs.rowwise() - mean.transpose();
    out.within += centered.transpose() * centered / static_cast<double>(idx.size());
    const Vector diff = mean - total_mean;
    out.between += diff * diff.transpose();
  }
  out.within /= S;
  out.between /= S;
  out.within.diagonal().array() += alpha;
  out.between.diagonal().array() += beta;
  out.within = 0.5 * (out.within + out.within.transpose());
  out.between = 0.5 * (out.between + out.between.transpose());
  return out;
}

struct RldaTransform {
  Matrix projection;   // d x m
  Vector eigenvalues;  // m, descending
  double alpha = 0.0;
  double beta = 0.0;

  Index input_dim() const { return projection.rows(); }
  Index output_dim() const { return projection.cols(); }

  Vector apply(const Vector& v) const {
    if (v.size() != projection.rows()) throw DataError("rlda: dimension mismatch");
    return projection.transpose() * v;
  }
  Matrix apply_rows(const Matrix& X) const { return X * projection; }
};

// Generalized symmetric eigensolve of (between, within) by Cholesky
// whitening of `within`. Returns the leading `out_dim` eigenpairs.
inline RldaTransform generalized_eigen_projection(const ScatterMatrices& sc, int out_dim) {
  const Index d = sc.within.rows();
  Eigen::SelfAdjointEigenSolver<Matrix> wes(sc.within, Eigen::EigenvaluesOnly);
  const double wmax = wes.eigenvalues().cwiseAbs().maxCoeff();
  Eigen::LLT<Matrix> llt(sc.within);
  if (llt.info() != Eigen::Success || !(wes.eigenvalues()(0) > 1e-12 * std::max(wmax, 1e-300)))
    throw NumericalError(
        "fit_rlda: within-class scatter is singular; use alpha > 0 or more sessions per speaker");
  const Matrix L = llt.matrixL();
  // M = L^-1 S_b L^-T
  Matrix M = L.triangularView<Eigen::Lower>().solve(sc.between);
  M = L.triangularView<Eigen::Lower>().solve(M.transpose()).transpose();
  M = 0.5 * (M + M.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(M);
  RldaTransform out;
  out.projection.resize(d, out_dim);
  out.eigenvalues.resize(out_dim);
  for (int j = 0; j < out_dim; ++j) {
    out.eigenvalues(j) = es.eigenvalues()(d - 1 - j);
    out.projection.col(j) = es.eigenvectors().col(d - 1 - j);
  }
  // A = L^-T Q
  out.projection = L.transpose().triangularView<Eigen::Upper>().solve(out.projection);
  detail::normalize_column_signs(out.projection);
  return out;
}

inline RldaTransform fit_rlda(const Matrix& X, std::span<const std::string> speakers, double alpha,
                              double beta, int out_dim) {
  if (!(alpha >= 0.0) || !(beta >= 0.0)) throw ConfigError("fit_rlda: alpha and beta must be >= 0");
  if (out_dim < 1 || out_dim > X.cols())
    throw ConfigError("fit_rlda: out_dim must lie in [1, dim]");
  detail::check_labels(X, speakers, "fit_rlda");
  const auto n_speakers = detail::group_rows(speakers).size();
  if (static_cast<int>(n_speakers) < out_dim + 1)
    throw ConfigError("fit_rlda: need at least out_dim + 1 speakers (have " +
                      std::to_string(n_speakers) + ")");
  RldaTransform out = generalized_eigen_projection(rlda_scatter(X, speakers, alpha, beta), out_dim);
  out.alpha = alpha;
  out.beta = beta;
  return out;
}

// ---------------------------------------------------------------------------
// Chain: NAP -> center -> length-norm -> RLDA -> length-norm

struct PrecondChain {
  std::optional<NapProjection> nap;
  CenterTransform center;
  bool normalize_before_projection = true;
  std::optional<RldaTransform> rlda;  // absent: identity
  bool normalize_output = true;

  Index input_dim() const { return center.mean.size(); }
  Index output_dim() const { return rlda ? rlda->output_dim() : input_dim(); }

  void validate() const {
    const Index d = center.mean.size();
    if (d == 0) throw DataError("chain: centering transform is empty");
    if (nap && nap->basis.rows() != d) throw DataError("chain: NAP dimension mismatch");
    if (rlda && rlda->input_dim() != d) throw DataError("chain: RLDA dimension mismatch");
  }

  Vector apply(const Vector& v) const {
    Vector x = nap ? nap->apply(v) : v;
    x = center.apply(x);
    if (normalize_before_projection) x = length_normalize(x);
    if (rlda) x = rlda->apply(x);
    if (normalize_output) x = length_normalize(x);
    return x;
  }

  Matrix apply_rows(const Matrix& X) const {
    Matrix out(X.rows(), output_dim());
    for (Index i = 0; i < X.rows(); ++i) out.row(i) = apply(X.row(i).transpose()).transpose();
    return out;
  }
};

inline Vector apply_chain(const PrecondChain& chain, const Vector& v) { return chain.apply(v); }

struct ChainOptions {
  bool use_nap = true;
  int nap_corank = -1;  // -1: min(n_classes - 1, 10)
  NapCriterion nap_criterion = NapCriterion::kBetweenClass;
  bool use_rlda = true;
  double alpha = 0.001;
  double beta = 0.01;
  int out_dim = 20;
  bool final_length_norm = true;
};

// NAP is fitted on `nap_data` with nuisance classes; RLDA is fitted on `train`
// (after NAP) with speaker labels. The mean comes from `center_data` when
// given, otherwise from `train`.
inline PrecondChain fit_chain(const Matrix& nap_data, std::span<const std::string> nap_classes,
                              const Matrix& train, std::span<const std::string> speakers,
                              const ChainOptions& opt, const Matrix* center_data = nullptr) {
  PrecondChain chain;
  Matrix x = train;
  if (opt.use_nap) {
    const int n_classes = static_cast<int>(detail::group_rows(nap_classes).size());
    const int corank = opt.nap_corank < 0 ? default_nap_corank(n_classes) : opt.nap_corank;
    chain.nap = fit_nap(nap_data, nap_classes, corank, opt.nap_criterion);
    x = chain.nap->apply_rows(x);
  }
  if (center_data)
    chain.center = fit_center(chain.nap ? chain.nap->apply_rows(*center_data) : *center_data);
  else
    chain.center = fit_center(x);
  x = length_normalize_rows(chain.center.apply_rows(x));
  chain.normalize_before_projection = true;
  if (opt.use_rlda) chain.rlda = fit_rlda(x, speakers, opt.alpha, opt.beta, opt.out_dim);
  chain.normalize_output = opt.final_length_norm;
  return chain;
}

}  // namespace ivkit
