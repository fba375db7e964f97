// include/ivkit/plda.hpp

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

// Two-subspace PLDA,
//   x = mu + V h + U w + e,   h ~ N(0, I), w ~ N(0, I), e ~ N(0, diag(sigma)),
// with h shared by all sessions of a speaker and w drawn per session.

#pragma once

#include "ivkit/common.hpp"

#include <numbers>
#include <span>

namespace ivkit {

struct PldaModel {
  Vector mean;   // m
  Matrix V;      // m x r_spk
  Matrix U;      // m x r_ch
  Vector sigma;  // m, diagonal residual variances

  Index dim() const { return mean.size(); }

  void validate() const {
    const Index m = mean.size();
    if (m == 0) throw DataError("plda: empty model");
    if (V.rows() != m || U.rows() != m || sigma.size() != m)
      throw DataError("plda: inconsistent parameter shapes");
    if (V.cols() + U.cols() > m) throw DataError("plda: r_spk + r_ch exceeds dim");
    if (!(sigma.array() > 0.0).all()) throw DataError("plda: nonpositive residual variance");
    if (!mean.allFinite() || !V.allFinite() || !U.allFinite() || !sigma.allFinite())
      throw DataError("plda: non-finite parameters");
  }

  Matrix between_covariance() const { return V * V.transpose(); }
  Matrix within_covariance() const {
    Matrix W = U * U.transpose();
    W.diagonal() += sigma;
    return W;
  }
};

struct PldaTrainOptions {
  int r_spk = 8;
  int r_ch = 4;
  int num_iters = 10;
  std::uint64_t seed = 0;
  double sigma_floor = 1e-6;
};

struct PldaTrainResult {
  PldaModel model;
  // Marginal data log-likelihood entering each iteration, then of the final model.
  std::vector<double> log_likelihood;
};

namespace detail {

inline double log_det_spd(const Eigen::LLT<Matrix>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

struct SpeakerGroup {
  std::vector<Index> rows;
};

inline std::vector<SpeakerGroup> speaker_groups(std::span<const std::string> labels) {
  std::map<std::string, std::vector<Index>> g;
  for (std::size_t i = 0; i < labels.size(); ++i) g[labels[i]].push_back(static_cast<Index>(i));
  std::vector<SpeakerGroup> out;
  out.reserve(g.size());
  for (auto& [k, rows] : g) out.push_back({std::move(rows)});
  return out;
}

}  // namespace detail

// Exact marginal log-likelihood of the data, speakers independent:
//   log p(X_s) = sum_j log N(x_j; mu, W) + 0.5 b' P^-1 b - 0.5 log|P|
// with W = U U' + diag(sigma), P = I + n V' W^-1 V and b = V' W^-1 sum_j (x_j - mu).
inline double plda_log_likelihood(const PldaModel& model, const Matrix& X,
                                  std::span<const std::string> speakers) {
  model.validate();
  if (static_cast<Index>(speakers.size()) != X.rows()) throw DataError("plda: label count mismatch");
  const Index m = model.dim(), rs = model.V.cols();
  Eigen::LLT<Matrix> wllt(model.within_covariance());
  if (wllt.info() != Eigen::Success) throw NumericalError("plda: within covariance not positive definite");
  const double logdetW = detail::log_det_spd(wllt);
  const Matrix WinvV = wllt.solve(model.V);
  const Matrix VtWinvV = model.V.transpose() * WinvV;
  const double c0 = -0.5 * (static_cast<double>(m) * std::log(2.0 * std::numbers::pi) + logdetW);
  double ll = 0.0;
  for (const auto& g : detail::speaker_groups(speakers)) {
    Vector sum = Vector::Zero(m);
    for (Index r : g.rows) {
      const Vector xc = X.row(r).transpose() - model.mean;
      ll += c0 - 0.5 * xc.dot(wllt.solve(xc));
      sum += xc;
    }
    if (rs == 0) continue;
    const Matrix P = Matrix::Identity(rs, rs) + static_cast<double>(g.rows.size()) * VtWinvV;
    Eigen::LLT<Matrix> pllt(P);
    const Vector b = WinvV.transpose() * sum;
    ll += 0.5 * b.dot(pllt.solve(b)) - 0.5 * detail::log_det_spd(pllt);
  }
  return ll;
}

inline PldaTrainResult train_plda(const Matrix& X, std::span<const std::string> speakers,
                                  const PldaTrainOptions& opt) {
  const Index m = X.cols(), rs = opt.r_spk, rc = opt.r_ch, rz = rs + rc;
  if (rs < 0 || rc < 0 || rz > m)
    throw ConfigError("train_plda: ranks must be >= 0 with r_spk + r_ch <= dim");
  if (opt.num_iters < 0) throw ConfigError("train_plda: num_iters must be >= 0");
  if (static_cast<Index>(speakers.size()) != X.rows()) throw DataError("train_plda: label count mismatch");
  if (!X.allFinite()) throw DataError("train_plda: non-finite input");
  const auto groups = detail::speaker_groups(speakers);
  const auto multi = std::count_if(groups.begin(), groups.end(),
                                   [](const auto& g) { return g.rows.size() >= 2; });
  if (multi < 2) throw DataError("train_plda: need at least 2 speakers with 2 or more sessions");

  const double N = static_cast<double>(X.rows());
  PldaTrainResult res;
  PldaModel& p = res.model;
  p.mean = X.colwise().mean().transpose();
  const Matrix Xc = X.rowwise() - p.mean.transpose();

  // Initialization from the between/within scatter eigenvectors.
  {
    Matrix Sb = Matrix::Zero(m, m), Sw = Matrix::Zero(m, m);
    for (const auto& g : groups) {
      const Matrix Xs = select_rows(Xc, g.rows);
      const Vector ms = Xs.colwise().mean().transpose();
      Sb += static_cast<double>(g.rows.size()) * ms * ms.transpose();
      const Matrix cs = Xs.rowwise() - ms.transpose();
      Sw += cs.transpose() * cs;
    }
    Sb /= N;
    Sw /= N;
    Eigen::SelfAdjointEigenSolver<Matrix> eb(Sb), ew(Sw);
    Rng rng = make_rng(opt.seed, 31);
    p.V.resize(m, rs);
    for (Index j = 0; j < rs; ++j)
      p.V.col(j) = eb.eigenvectors().col(m - 1 - j) * std::sqrt(std::max(eb.eigenvalues()(m - 1 - j), 1e-6));
    p.U.resize(m, rc);
    for (Index j = 0; j < rc; ++j)
      p.U.col(j) = ew.eigenvectors().col(m - 1 - j) *
                   std::sqrt(0.5 * std::max(ew.eigenvalues()(m - 1 - j), 1e-6));
    const double scale = 1e-3 * std::sqrt(Sw.trace() / static_cast<double>(m));
    p.V += randn(rng, m, rs, scale);
    p.U += randn(rng, m, rc, scale);
    p.sigma = (0.5 * Sw.diagonal()).cwiseMax(opt.sigma_floor);
  }

  for (int it = 0; it <= opt.num_iters; ++it) {
    Eigen::LLT<Matrix> wllt(p.within_covariance());
    if (wllt.info() != Eigen::Success) throw NumericalError("train_plda: within covariance not positive definite");
    const double logdetW = detail::log_det_spd(wllt);
    const Matrix WinvV = wllt.solve(p.V);
    const Matrix VtWinvV = p.V.transpose() * WinvV;
    const Vector sigma_inv = p.sigma.cwiseInverse();
    const Matrix SinvU = sigma_inv.asDiagonal() * p.U;
    Matrix Pw = Matrix::Identity(rc, rc) + p.U.transpose() * SinvU;
    Eigen::LLT<Matrix> pwllt(Pw);
    const Matrix Pw_inv = pwllt.solve(Matrix::Identity(rc, rc));
    const Matrix K = Pw_inv * SinvU.transpose();  // rc x m
    const Matrix KV = K * p.V;                     // rc x rs
    const double c0 = -0.5 * (static_cast<double>(m) * std::log(2.0 * std::numbers::pi) + logdetW);

    Matrix Rzz = Matrix::Zero(rz, rz), Rxz = Matrix::Zero(m, rz);
    Vector Sxx = Vector::Zero(m);
    double ll = 0.0;
    for (const auto& g : groups) {
      const double n = static_cast<double>(g.rows.size());
      Vector sum = Vector::Zero(m);
      for (Index r : g.rows) {
        const Vector xc = Xc.row(r).transpose();
        ll += c0 - 0.5 * xc.dot(wllt.solve(xc));
        sum += xc;
      }
      const Matrix P = Matrix::Identity(rs, rs) + n * VtWinvV;
      Eigen::LLT<Matrix> pllt(P);
      const Matrix Ch = pllt.solve(Matrix::Identity(rs, rs));
      const Vector b = WinvV.transpose() * sum;
      const Vector h = Ch * b;
      if (rs > 0) ll += 0.5 * b.dot(h) - 0.5 * detail::log_det_spd(pllt);
      if (it == opt.num_iters) continue;

      const Matrix Ehh = Ch + h * h.transpose();
      const Matrix KVCh = KV * Ch;                                   // rc x rs
      const Matrix ww_shared = Pw_inv + KVCh * KV.transpose();
      for (Index r : g.rows) {
        const Vector xc = Xc.row(r).transpose();
        const Vector w = K * (xc - p.V * h);
        Rzz.topLeftCorner(rs, rs) += Ehh;
        const Matrix wh = w * h.transpose() - KVCh;
        Rzz.bottomLeftCorner(rc, rs) += wh;
        Rzz.topRightCorner(rs, rc) += wh.transpose();
        Rzz.bottomRightCorner(rc, rc) += ww_shared + w * w.transpose();
        Rxz.leftCols(rs).noalias() += xc * h.transpose();
        Rxz.rightCols(rc).noalias() += xc * w.transpose();
        Sxx += xc.cwiseAbs2();
      }
    }
    res.log_likelihood.push_back(ll);
    if (it == opt.num_iters) break;

    if (rz == 0) {
      p.sigma = (Sxx / N).cwiseMax(opt.sigma_floor);
      continue;
    }
    Rzz = 0.5 * (Rzz + Rzz.transpose());
    const Matrix F = Rzz.ldlt().solve(Rxz.transpose()).transpose();  // m x rz
    p.V = F.leftCols(rs);
    p.U = F.rightCols(rc);
    p.sigma = ((Sxx - (F.cwiseProduct(Rxz)).rowwise().sum()) / N).cwiseMax(opt.sigma_floor);
    if (!p.V.allFinite() || !p.U.allFinite() || !p.sigma.allFinite())
      throw NumericalError("train_plda: parameters became non-finite");
  }
  return res;
}

// ---------------------------------------------------------------------------
// Enrollment and scoring

struct SpeakerModel {
  std::string model_id;
  Vector embedding;
  int n_sessions = 1;
};

// I-vector averaging; the mean is re-length-normalized when `renormalize`.
inline SpeakerModel enroll(const std::string& model_id, const Matrix& vectors, bool renormalize = true) {
  if (vectors.rows() == 0) throw DataError("enroll: no enrollment vectors for " + model_id);
  SpeakerModel sm{model_id, vectors.colwise().mean().transpose(), static_cast<int>(vectors.rows())};
  if (renormalize) {
    const double norm = sm.embedding.norm();
    if (!(norm > 0.0)) throw NumericalError("enroll: zero mean embedding for " + model_id);
    sm.embedding /= norm;
  }
  check_finite(sm.embedding, "enrolled embedding");
  return sm;
}

// Two-covariance verification score with B = V V' and W = U U' + diag(sigma):
//   llr(e, t) = 0.5 e'Qe + 0.5 t'Qt + e'Pt + const
// (e, t centered by mu), the log ratio of the same-speaker joint density and
// the product of the marginals.
class PldaScorer {
 public:
  struct Prepared {
    Vector Pt;        // P x
    Vector centered;  // x - mu
    double half_quad = 0.0;  // 0.5 x'Qx
  };

  explicit PldaScorer(const PldaModel& model) : mean_(model.mean) {
    model.validate();
    const Index m = model.dim();
    const Matrix B = model.between_covariance();
    Matrix T = B + model.within_covariance();
    T = 0.5 * (T + T.transpose());
    Eigen::LLT<Matrix> tllt(T);
    if (tllt.info() != Eigen::Success) throw NumericalError("plda scoring: total covariance not positive definite");
    const Matrix Tinv = tllt.solve(Matrix::Identity(m, m));
    Matrix S = T - B * Tinv * B;  // Schur complement
    S = 0.5 * (S + S.transpose());
    Eigen::LLT<Matrix> sllt(S);
    if (sllt.info() != Eigen::Success) throw NumericalError("plda scoring: Schur complement not positive definite");
    const Matrix A = sllt.solve(Matrix::Identity(m, m));
    Q_ = Tinv - A;
    Q_ = 0.5 * (Q_ + Q_.transpose());
    P_ = Tinv * B * A;
    P_ = 0.5 * (P_ + P_.transpose());
    constant_ = 0.5 * detail::log_det_spd(tllt) - 0.5 * detail::log_det_spd(sllt);
  }

  Index dim() const { return mean_.size(); }

  Prepared prepare(const Vector& x) const {
    if (x.size() != dim()) throw DataError("plda scoring: dimension mismatch");
    Prepared p;
    p.centered = x - mean_;
    p.Pt = P_ * p.centered;
    p.half_quad = 0.5 * p.centered.dot(Q_ * p.centered);
    return p;
  }

  double score(const Prepared& e, const Prepared& t) const {
    const double s = (e.half_quad + t.half_quad) + e.centered.dot(t.Pt) + constant_;
    if (!std::isfinite(s)) throw NumericalError("plda scoring: non-finite score");
    return s;
  }

  double score(const Vector& e, const Vector& t) const { return score(prepare(e), prepare(t)); }

 private:
  Vector mean_;
  Matrix Q_;
  Matrix P_;
  double constant_ = 0.0;
};

inline double score_llr(const PldaModel& plda, const SpeakerModel& model, const Vector& test) {
  return PldaScorer(plda).score(model.embedding, test);
}

// One score per trial, in trial order. `jobs` > 1 splits the trial list
// across threads; each score is computed identically either way.
inline ScoreSet score_trials(const PldaScorer& scorer, const std::map<std::string, SpeakerModel>& models,
                             const std::map<std::string, Vector>& tests,
                             const std::vector<TrialId>& trials, int jobs = 1) {
  check_unique_trials(trials);
  std::vector<std::string> unknown;
  for (const auto& t : trials) {
    if (!models.contains(t.model_id)) unknown.push_back("model " + t.model_id);
    if (!tests.contains(t.test_id)) unknown.push_back("test " + t.test_id);
  }
  if (!unknown.empty()) {
    std::sort(unknown.begin(), unknown.end());
    unknown.erase(std::unique(unknown.begin(), unknown.end()), unknown.end());
    std::string msg = "score_trials: unknown ids:";
    for (const auto& u : unknown) msg += " " + u;
    throw DataError(msg);
  }

  std::map<std::string, PldaScorer::Prepared> pm, pt;
  for (const auto& [id, sm] : models) pm.emplace(id, scorer.prepare(sm.embedding));
  for (const auto& [id, v] : tests) pt.emplace(id, scorer.prepare(v));

  ScoreSet out;
  out.entries.resize(trials.size());
  parallel_for(trials.size(), jobs, [&](std::size_t i) {
    out.entries[i] = {trials[i].model_id, trials[i].test_id,
                      scorer.score(pm.at(trials[i].model_id), pt.at(trials[i].test_id))};
  });
  return out;
}

inline ScoreSet score_trials(const PldaModel& plda, const std::map<std::string, SpeakerModel>& models,
                             const std::map<std::string, Vector>& tests,
                             const std::vector<TrialId>& trials, int jobs = 1) {
  return score_trials(PldaScorer(plda), models, tests, trials, jobs);
}

}  // namespace ivkit
