// tests/oracles.hpp

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

// Independent reference computations used by the tests. Each one is written
// the slow, obvious way and shares no code with the library beyond the basic
// matrix types.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <set>
#include <string>
#include <vector>

namespace oracle {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

// ---------------------------------------------------------------------------
// Detection metrics by exhaustive threshold sweep.

struct Rates {
  double p_miss, p_fa;
};

inline Rates rates_at(const std::vector<double>& tar, const std::vector<double>& non, double thr) {
  double miss = 0, fa = 0;
  for (double s : tar)
    if (s < thr) miss += 1;
  for (double s : non)
    if (s >= thr) fa += 1;
  return {miss / static_cast<double>(tar.size()), fa / static_cast<double>(non.size())};
}

// Candidate thresholds: -inf, midpoints of adjacent distinct scores, +inf.
inline std::vector<double> thresholds(const std::vector<double>& tar, const std::vector<double>& non) {
  std::set<double> distinct(tar.begin(), tar.end());
  distinct.insert(non.begin(), non.end());
  std::vector<double> v(distinct.begin(), distinct.end());
  std::vector<double> thr{-std::numeric_limits<double>::infinity()};
  for (std::size_t i = 0; i + 1 < v.size(); ++i) thr.push_back(0.5 * (v[i] + v[i + 1]));
  thr.push_back(std::numeric_limits<double>::infinity());
  return thr;
}

inline double min_cnorm(const std::vector<double>& tar, const std::vector<double>& non, double p_tar) {
  const double beta = (1.0 - p_tar) / p_tar;
  double best = std::numeric_limits<double>::infinity();
  for (double t : thresholds(tar, non)) {
    const auto r = rates_at(tar, non, t);
    best = std::min(best, r.p_miss + beta * r.p_fa);
  }
  return best;
}

// EER: scan the sweep for the first point with p_miss >= p_fa and intersect
// the segment from the previous point with the diagonal.
inline double eer(const std::vector<double>& tar, const std::vector<double>& non) {
  const auto thr = thresholds(tar, non);
  Rates prev = rates_at(tar, non, thr.front());
  for (std::size_t i = 0; i < thr.size(); ++i) {
    const Rates r = rates_at(tar, non, thr[i]);
    if (r.p_miss == r.p_fa) return r.p_miss;
    if (r.p_miss > r.p_fa) {
      // point(l) = prev + l (r - prev); solve miss(l) = fa(l)
      const double l = (prev.p_fa - prev.p_miss) / ((r.p_miss - prev.p_miss) - (r.p_fa - prev.p_fa));
      return prev.p_miss + l * (r.p_miss - prev.p_miss);
    }
    prev = r;
  }
  return 1.0;
}

// ---------------------------------------------------------------------------
// Linear algebra

// Cosines of the principal angles between the column spans of A and B,
// via orthonormal bases from a QR and the SVD of Qa' Qb.
inline double max_principal_angle(const Matrix& A, const Matrix& B) {
  Eigen::HouseholderQR<Matrix> qa(A), qb(B);
  const Matrix Qa = qa.householderQ() * Matrix::Identity(A.rows(), A.cols());
  const Matrix Qb = qb.householderQ() * Matrix::Identity(B.rows(), B.cols());
  Eigen::JacobiSVD<Matrix> svd(Qa.transpose() * Qb);
  const double smin = svd.singularValues().minCoeff();
  return std::acos(std::min(1.0, smin));
}

// Generalized eigenpairs of (Sb, Sw) from the nonsymmetric matrix Sw^-1 Sb,
// sorted by eigenvalue descending. Real parts only (the spectrum is real).
struct EigenPairs {
  Vector values;
  Matrix vectors;
};

inline EigenPairs dense_generalized_eigen(const Matrix& Sb, const Matrix& Sw) {
  const Matrix M = Sw.inverse() * Sb;
  Eigen::EigenSolver<Matrix> es(M);
  const Index n = M.rows();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  const Vector ev = es.eigenvalues().real();
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return ev(a) > ev(b); });
  EigenPairs out{Vector(n), Matrix(n, n)};
  const Matrix vecs = es.eigenvectors().real();
  for (Eigen::Index i = 0; i < n; ++i) {
    out.values(i) = ev(order[static_cast<std::size_t>(i)]);
    out.vectors.col(i) = vecs.col(order[static_cast<std::size_t>(i)]);
  }
  return out;
}

// Scatter matrices exactly as the displayed RLDA formulas, by explicit loops.
inline void rlda_scatter(const Matrix& X, const std::vector<std::string>& spk, double alpha, double beta,
                         Matrix& Sw, Matrix& Sb) {
  const Index d = X.cols();
  std::map<std::string, std::vector<Index>> groups;
  for (std::size_t i = 0; i < spk.size(); ++i) groups[spk[i]].push_back(static_cast<Index>(i));
  const double S = static_cast<double>(groups.size());
  // The between-class term is centered on the mean of all samples, not the
  // mean of class means; the two differ when session counts are unequal.
  Vector grand = Vector::Zero(d);
  for (Index i = 0; i < X.rows(); ++i) grand += X.row(i).transpose();
  grand /= static_cast<double>(X.rows());
  std::vector<Vector> means;
  for (const auto& [s, idx] : groups) {
    Vector m = Vector::Zero(d);
    for (auto i : idx) m += X.row(i).transpose();
    m /= static_cast<double>(idx.size());
    means.push_back(m);
  }
  Sw = alpha * Matrix::Identity(d, d);
  Sb = beta * Matrix::Identity(d, d);
  std::size_t k = 0;
  for (const auto& [s, idx] : groups) {
    Matrix acc = Matrix::Zero(d, d);
    for (auto i : idx) {
      const Vector c = X.row(i).transpose() - means[k];
      acc += c * c.transpose();
    }
    Sw += acc / (static_cast<double>(idx.size()) * S);
    const Vector dm = means[k] - grand;
    Sb += dm * dm.transpose() / S;
    ++k;
  }
}

// ---------------------------------------------------------------------------
// Gaussians

inline double gauss_logpdf(const Vector& x, const Vector& mu, const Matrix& cov) {
  const Index n = x.size();
  const Matrix inv = cov.inverse();
  const double det = cov.determinant();
  const Vector d = x - mu;
  return -0.5 * (static_cast<double>(n) * std::log(2.0 * std::numbers::pi) + std::log(det) + d.dot(inv * d));
}

// Same-vs-different speaker LLR for two vectors under x = mu + V h + U w + e,
// from the dense joint covariance of the stacked pair.
inline double two_vector_llr(const Vector& e, const Vector& t, const Vector& mu, const Matrix& B, const Matrix& W) {
  const Index m = e.size();
  Matrix same(2 * m, 2 * m), diff = Matrix::Zero(2 * m, 2 * m);
  same << B + W, B, B, B + W;
  diff.topLeftCorner(m, m) = B + W;
  diff.bottomRightCorner(m, m) = B + W;
  Vector x(2 * m), mm(2 * m);
  x << e, t;
  mm << mu, mu;
  return gauss_logpdf(x, mm, same) - gauss_logpdf(x, mm, diff);
}

}  // namespace oracle
