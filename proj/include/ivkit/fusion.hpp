// include/ivkit/fusion.hpp

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

// Linear fusion and calibration by prior-weighted logistic regression.
//
// With fused score f = w's + b and logit(p) = log(p / (1 - p)) the objective is
//   p/N_t   sum_tar  log(1 + exp(-(f + logit p)))
//   (1-p)/N_n sum_non log(1 + exp(  f + logit p ))
// so that f is a log-likelihood ratio calibrated for any prior.

#pragma once

#include "ivkit/common.hpp"

#include <span>

namespace ivkit {

struct FusionModel {
  Vector weights;
  double offset = 0.0;
  double prior = 0.0075;

  Index num_systems() const { return weights.size(); }
};

// Trials x systems, rows in trial order.
struct ScoreMatrix {
  std::vector<TrialId> trials;
  Matrix values;
};

// Aligns several systems' scores to `order`; each system must score exactly
// those trials.
inline ScoreMatrix make_score_matrix(std::span<const ScoreSet> systems, const std::vector<TrialId>& order) {
  if (systems.empty()) throw DataError("fusion: no systems");
  check_unique_trials(order);
  std::unordered_map<TrialId, std::size_t, TrialIdHash> pos;
  for (std::size_t i = 0; i < order.size(); ++i) pos.emplace(order[i], i);
  ScoreMatrix sm{order, Matrix(static_cast<Index>(order.size()), static_cast<Index>(systems.size()))};
  for (std::size_t k = 0; k < systems.size(); ++k) {
    if (systems[k].size() != order.size())
      throw DataError("fusion: system " + std::to_string(k) + " scores " + std::to_string(systems[k].size()) +
                      " trials, expected " + std::to_string(order.size()));
    std::vector<bool> filled(order.size(), false);
    for (const auto& e : systems[k].entries) {
      auto it = pos.find(TrialId{e.model_id, e.test_id});
      if (it == pos.end() || filled[it->second])
        throw DataError("fusion: system " + std::to_string(k) + " has unexpected or duplicate trial (" +
                        e.model_id + ", " + e.test_id + ")");
      filled[it->second] = true;
      sm.values(static_cast<Index>(it->second), static_cast<Index>(k)) = e.score;
    }
  }
  if (!sm.values.allFinite()) throw DataError("fusion: non-finite scores");
  return sm;
}

struct FusionTrainOptions {
  double prior = 0.0075;
  int max_iters = 100;
  double tolerance = 1e-9;  // on the gradient infinity norm
  std::optional<Vector> initial;  // [weights; offset]
};

struct FusionTrainResult {
  FusionModel model;
  std::vector<double> loss;  // per iteration, starting with the initial point
  bool converged = false;
  bool separable = false;
};

namespace detail {

inline double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct LogisticProblem {
  Matrix X;       // trials x (systems + 1), last column ones
  Vector sign;    // +1 target, -1 nontarget
  Vector weight;  // per-trial weight
  double logit_prior;

  double loss(const Vector& theta) const {
    const Vector f = X * theta;
    double l = 0.0;
    for (Index i = 0; i < f.size(); ++i) l += weight(i) * softplus(-sign(i) * (f(i) + logit_prior));
    return l;
  }

  void derivatives(const Vector& theta, Vector& grad, Matrix& hess) const {
    const Vector f = X * theta;
    const Index p = X.cols();
    grad = Vector::Zero(p);
    hess = Matrix::Zero(p, p);
    Vector d(f.size());
    for (Index i = 0; i < f.size(); ++i) {
      const double z = sign(i) * (f(i) + logit_prior);
      const double s = sigmoid(-z);
      grad -= weight(i) * s * sign(i) * X.row(i).transpose();
      d(i) = weight(i) * s * (1.0 - s);
    }
    hess = X.transpose() * d.asDiagonal() * X;
  }
};

}  // namespace detail

inline FusionTrainResult train_fusion(const ScoreMatrix& scores, const TrialKey& key,
                                      const FusionTrainOptions& opt = {}) {
  if (!(opt.prior > 0.0 && opt.prior < 1.0)) throw ConfigError("train_fusion: prior must lie in (0, 1)");
  if (opt.max_iters < 1) throw ConfigError("train_fusion: max_iters must be >= 1");
  const Index n = scores.values.rows(), k = scores.values.cols();
  if (k < 1) throw DataError("train_fusion: need at least one system");
  if (static_cast<Index>(scores.trials.size()) != n) throw DataError("train_fusion: trial list does not match scores");

  std::unordered_map<TrialId, bool, TrialIdHash> truth;
  for (const auto& e : key.entries) truth.emplace(TrialId{e.model_id, e.test_id}, e.is_target);
  detail::LogisticProblem prob;
  prob.X.resize(n, k + 1);
  prob.X.leftCols(k) = scores.values;
  prob.X.col(k).setOnes();
  prob.sign.resize(n);
  std::size_t nt = 0;
  for (Index i = 0; i < n; ++i) {
    auto it = truth.find(scores.trials[static_cast<std::size_t>(i)]);
    if (it == truth.end())
      throw DataError("train_fusion: trial not in key: " + scores.trials[static_cast<std::size_t>(i)].model_id + " " +
                      scores.trials[static_cast<std::size_t>(i)].test_id);
    prob.sign(i) = it->second ? 1.0 : -1.0;
    nt += it->second ? 1 : 0;
  }
  const std::size_t nn = static_cast<std::size_t>(n) - nt;
  if (nt == 0 || nn == 0) throw DataError("train_fusion: need both target and nontarget trials");
  prob.weight.resize(n);
  for (Index i = 0; i < n; ++i)
    prob.weight(i) = prob.sign(i) > 0 ? opt.prior / static_cast<double>(nt) : (1.0 - opt.prior) / static_cast<double>(nn);
  prob.logit_prior = std::log(opt.prior / (1.0 - opt.prior));

  Vector theta = Vector::Zero(k + 1);
  if (opt.initial) {
    if (opt.initial->size() != k + 1) throw ConfigError("train_fusion: initial point has the wrong size");
    theta = *opt.initial;
  }

  FusionTrainResult res;
  double loss = prob.loss(theta);
  res.loss.push_back(loss);
  Vector grad;
  Matrix hess;
  for (int it = 0; it < opt.max_iters; ++it) {
    prob.derivatives(theta, grad, hess);
    if (grad.lpNorm<Eigen::Infinity>() <= opt.tolerance) {
      res.converged = true;
      break;
    }
    // Newton direction; the minimum-norm solve handles collinear systems.
    Vector step = hess.completeOrthogonalDecomposition().solve(-grad);
    if (!step.allFinite() || step.dot(grad) >= 0.0) step = -grad;
    double t = 1.0;
    double next = prob.loss(theta + step);
    while (!(next <= loss + 1e-4 * t * step.dot(grad)) && t > 1e-12) {
      t *= 0.5;
      next = prob.loss(theta + t * step);
    }
    if (!(next <= loss)) {
      res.converged = grad.lpNorm<Eigen::Infinity>() <= 1e3 * opt.tolerance;
      break;  // no further descent possible at machine precision
    }
    theta += t * step;
    loss = next;
    res.loss.push_back(loss);
  }
  if (!res.converged) {
    prob.derivatives(theta, grad, hess);
    res.converged = grad.lpNorm<Eigen::Infinity>() <= opt.tolerance;
  }

  res.model.weights = theta.head(k);
  res.model.offset = theta(k);
  res.model.prior = opt.prior;

  // Perfect separation of the training trials drives the weights to grow
  // without bound; the iteration cap keeps them finite.
  const Vector f = prob.X * theta;
  double min_tar = std::numeric_limits<double>::infinity(), max_non = -std::numeric_limits<double>::infinity();
  for (Index i = 0; i < n; ++i) (prob.sign(i) > 0 ? min_tar = std::min(min_tar, f(i)) : max_non = std::max(max_non, f(i)));
  res.separable = min_tar > max_non;
  if (res.separable) warn("train_fusion: training trials are perfectly separable; weights are limited by the iteration cap");
  if (!res.converged && !res.separable) warn("train_fusion: stopped before reaching the gradient tolerance");
  return res;
}

inline ScoreSet apply_fusion(const ScoreMatrix& scores, const FusionModel& model) {
  if (scores.values.cols() != model.num_systems())
    throw DataError("apply_fusion: " + std::to_string(scores.values.cols()) + " systems given, model expects " +
                    std::to_string(model.num_systems()));
  ScoreSet out;
  out.entries.reserve(scores.trials.size());
  for (Index i = 0; i < scores.values.rows(); ++i) {
    const auto& t = scores.trials[static_cast<std::size_t>(i)];
    out.entries.push_back({t.model_id, t.test_id, scores.values.row(i).dot(model.weights) + model.offset});
  }
  return out;
}

// Per-trial sum of two systems scored on the same trials; output follows the
// trial order of `a`.
inline ScoreSet sum_systems(const ScoreSet& a, const ScoreSet& b) {
  std::unordered_map<TrialId, double, TrialIdHash> bm;
  for (const auto& e : b.entries)
    if (!bm.emplace(TrialId{e.model_id, e.test_id}, e.score).second)
      throw DataError("sum_systems: duplicate trial (" + e.model_id + ", " + e.test_id + ")");
  std::vector<std::string> only_a, only_b;
  std::unordered_set<TrialId, TrialIdHash> in_a;
  ScoreSet out;
  out.entries.reserve(a.entries.size());
  for (const auto& e : a.entries) {
    TrialId id{e.model_id, e.test_id};
    if (!in_a.insert(id).second) throw DataError("sum_systems: duplicate trial (" + e.model_id + ", " + e.test_id + ")");
    auto it = bm.find(id);
    if (it == bm.end()) {
      only_a.push_back(e.model_id + " " + e.test_id);
      continue;
    }
    out.entries.push_back({e.model_id, e.test_id, e.score + it->second});
  }
  for (const auto& e : b.entries)
    if (!in_a.contains(TrialId{e.model_id, e.test_id})) only_b.push_back(e.model_id + " " + e.test_id);
  if (!only_a.empty() || !only_b.empty()) {
    std::string msg = "sum_systems: trial keys differ;";
    for (const auto& s : only_a) msg += "\n  only in first: " + s;
    for (const auto& s : only_b) msg += "\n  only in second: " + s;
    throw DataError(msg);
  }
  return out;
}

}  // namespace ivkit
