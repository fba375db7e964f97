// include/ivkit/gmm.hpp

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

#pragma once

#include "ivkit/common.hpp"

#include <numbers>
#include <numeric>
#include <span>

namespace ivkit {

// One utterance: frames x feature_dim, one frame per row.
using FrameSet = Matrix;

struct DiagGmm {
  Vector weights;    // K
  Matrix means;      // K x D
  Matrix variances;  // K x D

  Index num_components() const { return weights.size(); }
  Index dim() const { return means.cols(); }

  void validate() const {
    const Index K = weights.size();
    if (K == 0) throw DataError("gmm: no components");
    if (means.rows() != K || variances.rows() != K || variances.cols() != means.cols())
      throw DataError("gmm: inconsistent parameter shapes");
    if (std::abs(weights.sum() - 1.0) > 1e-10) throw DataError("gmm: weights do not sum to 1");
    if ((weights.array() < 0.0).any()) throw DataError("gmm: negative weight");
    if (!(variances.array() > 0.0).all()) throw DataError("gmm: nonpositive variance");
    if (!means.allFinite() || !variances.allFinite()) throw DataError("gmm: non-finite parameters");
  }
};

// Zeroth and first order Baum-Welch statistics of one utterance.
struct BwStats {
  Vector zeroth;  // K
  Matrix first;   // K x D

  double total() const { return zeroth.sum(); }
};

// Precomputed per-component constants for fast posterior evaluation.
class GmmEvaluator {
 public:
  explicit GmmEvaluator(const DiagGmm& gmm) : gmm_(gmm) {
    gmm.validate();
    const Index K = gmm.num_components(), D = gmm.dim();
    inv_var_ = gmm.variances.cwiseInverse();
    gconst_.resize(K);
    for (Index c = 0; c < K; ++c) {
      const double logdet = gmm.variances.row(c).array().log().sum();
      gconst_(c) = (gmm.weights(c) > 0.0 ? std::log(gmm.weights(c))
                                         : -std::numeric_limits<double>::infinity()) -
                   0.5 * (static_cast<double>(D) * std::log(2.0 * std::numbers::pi) + logdet);
    }
  }

  // Fills `post` with component posteriors of `frame`; returns log p(frame).
  double posteriors(const Eigen::Ref<const Eigen::RowVectorXd>& frame, Vector& post) const {
    const Index K = gmm_.num_components();
    post.resize(K);
    for (Index c = 0; c < K; ++c) {
      const auto diff = frame.array() - gmm_.means.row(c).array();
      post(c) = gconst_(c) - 0.5 * (diff.square() * inv_var_.row(c).array()).sum();
    }
    const double mx = post.maxCoeff();
    // std::exp underflows to exactly zero; Eigen's vectorized exp clamps at
    // about 1e-308, which would give unreachable components a tiny occupancy.
    post = (post.array() - mx).unaryExpr([](double x) { return std::exp(x); });
    const double sum = post.sum();
    post /= sum;
    return mx + std::log(sum);
  }

  const DiagGmm& gmm() const { return gmm_; }

 private:
  const DiagGmm& gmm_;
  Matrix inv_var_;
  Vector gconst_;
};

inline BwStats accumulate_bw_stats(const DiagGmm& gmm, const FrameSet& frames) {
  if (frames.rows() == 0) throw DataError("accumulate_bw_stats: empty utterance");
  if (frames.cols() != gmm.dim()) throw DataError("accumulate_bw_stats: frame dimension mismatch");
  GmmEvaluator eval(gmm);
  BwStats s{Vector::Zero(gmm.num_components()), Matrix::Zero(gmm.num_components(), gmm.dim())};
  Vector post;
  for (Index t = 0; t < frames.rows(); ++t) {
    eval.posteriors(frames.row(t), post);
    s.zeroth += post;
    s.first.noalias() += post * frames.row(t);
  }
  return s;
}

inline double total_log_likelihood(const DiagGmm& gmm, std::span<const FrameSet> frames) {
  GmmEvaluator eval(gmm);
  Vector post;
  double ll = 0.0;
  for (const auto& utt : frames)
    for (Index t = 0; t < utt.rows(); ++t) ll += eval.posteriors(utt.row(t), post);
  return ll;
}

struct GmmTrainOptions {
  int num_components = 8;
  int num_iters = 10;
  // Variance floor as a fraction of the global per-dimension variance.
  double variance_floor = 1e-4;
  std::uint64_t seed = 0;
};

struct GmmTrainResult {
  DiagGmm gmm;
  // Data log-likelihood before each M-step, then of the final model.
  std::vector<double> log_likelihood;
  int reseeded = 0;
};

// Maximum-likelihood EM for a diagonal GMM. Means start at distinct randomly
// chosen frames; variances at the global variance.
inline GmmTrainResult train_gmm_em(std::span<const FrameSet> frames, const GmmTrainOptions& opt) {
  const Index K = opt.num_components;
  if (K < 1) throw ConfigError("train_gmm_em: num_components must be >= 1");
  if (opt.num_iters < 0) throw ConfigError("train_gmm_em: num_iters must be >= 0");
  if (!(opt.variance_floor > 0.0)) throw ConfigError("train_gmm_em: variance_floor must be positive");
  Index n_frames = 0, D = -1;
  for (const auto& f : frames) {
    if (f.rows() == 0) continue;
    if (D < 0) D = f.cols();
    if (f.cols() != D) throw DataError("train_gmm_em: inconsistent frame dimensions");
    n_frames += f.rows();
  }
  if (n_frames == 0) throw DataError("train_gmm_em: empty frame set");
  if (n_frames < 10 * K)
    throw DataError("train_gmm_em: need at least 10 frames per component (have " +
                    std::to_string(n_frames) + " for K=" + std::to_string(K) + ")");

  Vector gmean = Vector::Zero(D), gsq = Vector::Zero(D);
  std::vector<std::pair<std::size_t, Index>> frame_index;
  frame_index.reserve(static_cast<std::size_t>(n_frames));
  for (std::size_t u = 0; u < frames.size(); ++u)
    for (Index t = 0; t < frames[u].rows(); ++t) {
      gmean += frames[u].row(t).transpose();
      gsq += frames[u].row(t).transpose().cwiseAbs2();
      frame_index.emplace_back(u, t);
    }
  gmean /= static_cast<double>(n_frames);
  const Vector gvar = (gsq / static_cast<double>(n_frames) - gmean.cwiseAbs2()).cwiseMax(0.0);
  const Vector floor = (opt.variance_floor * gvar).cwiseMax(1e-300);

  GmmTrainResult res;
  DiagGmm& g = res.gmm;
  g.weights = Vector::Constant(K, 1.0 / static_cast<double>(K));
  g.means.resize(K, D);
  g.variances = gvar.cwiseMax(floor).transpose().replicate(K, 1);
  {
    Rng rng = make_rng(opt.seed, 11);
    std::vector<std::size_t> pick(frame_index.size());
    std::iota(pick.begin(), pick.end(), std::size_t{0});
    for (Index c = 0; c < K; ++c) {
      std::uniform_int_distribution<std::size_t> u(static_cast<std::size_t>(c), pick.size() - 1);
      std::swap(pick[static_cast<std::size_t>(c)], pick[u(rng)]);
      const auto [uu, tt] = frame_index[pick[static_cast<std::size_t>(c)]];
      g.means.row(c) = frames[uu].row(tt);
    }
  }

  Vector post;
  for (int it = 0; it <= opt.num_iters; ++it) {
    Vector occ = Vector::Zero(K);
    Matrix sum1 = Matrix::Zero(K, D), sum2 = Matrix::Zero(K, D);
    double ll = 0.0;
    {
      GmmEvaluator eval(g);
      for (const auto& utt : frames)
        for (Index t = 0; t < utt.rows(); ++t) {
          ll += eval.posteriors(utt.row(t), post);
          occ += post;
          sum1.noalias() += post * utt.row(t);
          sum2.noalias() += post * utt.row(t).cwiseAbs2();
        }
    }
    res.log_likelihood.push_back(ll);
    if (it == opt.num_iters) break;

    const double min_occ = 1e-10 * static_cast<double>(n_frames);
    for (Index c = 0; c < K; ++c) {
      if (occ(c) <= min_occ) continue;
      g.weights(c) = occ(c) / static_cast<double>(n_frames);
      g.means.row(c) = sum1.row(c) / occ(c);
      const Eigen::RowVectorXd var =
          sum2.row(c) / occ(c) - g.means.row(c).cwiseAbs2();
      g.variances.row(c) = var.cwiseMax(floor.transpose());
    }
    // Collapsed components are re-seeded by splitting the busiest one.
    for (Index c = 0; c < K; ++c) {
      if (occ(c) > min_occ) continue;
      Index best;
      occ.maxCoeff(&best);
      const Eigen::RowVectorXd offset = 0.5 * g.variances.row(best).cwiseSqrt();
      g.means.row(c) = g.means.row(best) + offset;
      g.means.row(best) -= offset;
      g.variances.row(c) = g.variances.row(best);
      g.weights(c) = g.weights(best) = 0.5 * occ(best) / static_cast<double>(n_frames);
      occ(c) = occ(best) = 0.5 * occ(best);
      ++res.reseeded;
      warn("train_gmm_em: component " + std::to_string(c) + " had zero occupancy; re-seeded from " +
           std::to_string(best));
    }
    g.weights /= g.weights.sum();
  }
  return res;
}

inline BwStats sum_stats(std::span<const BwStats> stats) {
  if (stats.empty()) throw DataError("no statistics to sum");
  BwStats out = stats.front();
  for (std::size_t i = 1; i < stats.size(); ++i) {
    if (stats[i].zeroth.size() != out.zeroth.size() || stats[i].first.rows() != out.first.rows() ||
        stats[i].first.cols() != out.first.cols())
      throw DataError("statistics shape mismatch");
    out.zeroth += stats[i].zeroth;
    out.first += stats[i].first;
  }
  return out;
}

// Relevance-MAP adaptation of the means only:
//   m_c' = (F_c + r m_c) / (n_c + r)
// Components with zero occupancy keep the UBM mean bit for bit.
inline DiagGmm map_adapt_means(const DiagGmm& ubm, const BwStats& stats, double relevance_factor) {
  ubm.validate();
  if (!(relevance_factor > 0.0)) throw ConfigError("map_adapt_means: relevance factor must be positive");
  if (stats.zeroth.size() != ubm.num_components() || stats.first.cols() != ubm.dim())
    throw DataError("map_adapt_means: statistics do not match the UBM");
  DiagGmm out = ubm;
  for (Index c = 0; c < ubm.num_components(); ++c) {
    const double n = stats.zeroth(c);
    if (n == 0.0) continue;
    out.means.row(c) = (stats.first.row(c) + relevance_factor * ubm.means.row(c)) / (n + relevance_factor);
  }
  return out;
}

inline DiagGmm map_adapt_means(const DiagGmm& ubm, std::span<const FrameSet> frames,
                               double relevance_factor) {
  BwStats total{Vector::Zero(ubm.num_components()), Matrix::Zero(ubm.num_components(), ubm.dim())};
  for (const auto& utt : frames) {
    if (utt.rows() == 0) continue;
    const BwStats s = accumulate_bw_stats(ubm, utt);
    total.zeroth += s.zeroth;
    total.first += s.first;
  }
  return map_adapt_means(ubm, total, relevance_factor);
}

}  // namespace ivkit
