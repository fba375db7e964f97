// include/ivkit/metrics.hpp

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

// Detection error rates and costs. A trial is accepted iff score >= threshold.
//
//   C_norm    = P_miss + (c_fa (1 - p_tar)) / (c_miss p_tar) * P_fa
//   C_primary = (C_norm(p_tar_1) + C_norm(p_tar_2)) / 2
//
// Actual costs use the Bayes threshold log(beta), beta = c_fa (1 - p_tar) /
// (c_miss p_tar); minimum costs sweep every threshold that changes a
// decision. Trials are pooled (no partition equalization).

#pragma once

#include "ivkit/common.hpp"

#include <array>
#include <limits>

namespace ivkit {

struct ErrorRates {
  double p_miss = 0.0;
  double p_fa = 0.0;
  double threshold = 0.0;
};

struct CprimaryConfig {
  double p_tar_1 = 0.01;
  double p_tar_2 = 0.005;
  double c_miss = 1.0;
  double c_fa = 1.0;
  bool equalized = false;

  void validate() const {
    for (double p : {p_tar_1, p_tar_2})
      if (!(p > 0.0 && p < 1.0)) throw ConfigError("metrics: target priors must lie in (0, 1)");
    if (!(c_miss > 0.0) || !(c_fa > 0.0)) throw ConfigError("metrics: costs must be positive");
    if (equalized)
      throw ConfigError(
          "metrics: equalized scoring needs partition weights that are not defined here; only pooled "
          "(unequalized) scoring is supported");
  }
};

struct CostPoint {
  double p_tar = 0.0;
  double beta = 0.0;
  double act_threshold = 0.0;  // log(beta)
  double act_c_norm = 0.0;
  double min_c_norm = 0.0;
  double min_threshold = 0.0;
};

struct CprimaryReport {
  double eer = 0.0;
  double min_c_primary = 0.0;
  double act_c_primary = 0.0;
  std::array<CostPoint, 2> points{};
  std::size_t n_target = 0;
  std::size_t n_nontarget = 0;
};

struct DetPoint {
  double threshold = 0.0;
  double p_fa = 0.0;
  double p_miss = 0.0;
};

// Scores split by ground truth.
struct LabeledScores {
  std::vector<double> target;
  std::vector<double> nontarget;

  void check() const {
    if (target.empty() || nontarget.empty())
      throw DataError("metrics: need at least one target and one nontarget trial");
    for (const auto* v : {&target, &nontarget})
      for (double s : *v)
        if (!std::isfinite(s)) throw DataError("metrics: non-finite score");
  }
};

// Joins scores with the key. Every scored trial must be in the key and every
// key entry must be scored; violations are listed in the error.
inline LabeledScores join_scores(const ScoreSet& scores, const TrialKey& key) {
  std::unordered_map<TrialId, bool, TrialIdHash> truth;
  truth.reserve(key.entries.size());
  for (const auto& e : key.entries)
    if (!truth.emplace(TrialId{e.model_id, e.test_id}, e.is_target).second)
      throw DataError("metrics: duplicate key entry (" + e.model_id + ", " + e.test_id + ")");
  LabeledScores out;
  std::vector<std::string> problems;
  std::unordered_set<TrialId, TrialIdHash> seen;
  for (const auto& s : scores.entries) {
    TrialId id{s.model_id, s.test_id};
    auto it = truth.find(id);
    if (it == truth.end()) {
      problems.push_back("not in key: " + s.model_id + " " + s.test_id);
      continue;
    }
    if (!seen.insert(id).second) throw DataError("metrics: duplicate score (" + s.model_id + ", " + s.test_id + ")");
    (it->second ? out.target : out.nontarget).push_back(s.score);
  }
  if (seen.size() != truth.size())
    for (const auto& e : key.entries)
      if (!seen.contains(TrialId{e.model_id, e.test_id}))
        problems.push_back("not scored: " + e.model_id + " " + e.test_id);
  if (!problems.empty()) {
    std::string msg = "metrics: " + std::to_string(problems.size()) + " missing trial(s):";
    for (std::size_t i = 0; i < problems.size() && i < 20; ++i) msg += "\n  " + problems[i];
    if (problems.size() > 20) msg += "\n  ...";
    throw DataError(msg);
  }
  return out;
}

inline ErrorRates error_rates_at(const LabeledScores& ls, double threshold) {
  ls.check();
  std::size_t miss = 0, fa = 0;
  for (double s : ls.target) miss += s < threshold ? 1 : 0;
  for (double s : ls.nontarget) fa += s >= threshold ? 1 : 0;
  return {static_cast<double>(miss) / static_cast<double>(ls.target.size()),
          static_cast<double>(fa) / static_cast<double>(ls.nontarget.size()), threshold};
}

inline ErrorRates error_rates_at(const ScoreSet& scores, const TrialKey& key, double threshold) {
  return error_rates_at(join_scores(scores, key), threshold);
}

inline double detection_beta(double p_tar, double c_miss = 1.0, double c_fa = 1.0) {
  return c_fa * (1.0 - p_tar) / (c_miss * p_tar);
}

inline double c_norm(const ErrorRates& r, double p_tar, double c_miss = 1.0, double c_fa = 1.0) {
  return r.p_miss + detection_beta(p_tar, c_miss, c_fa) * r.p_fa;
}

// Operating points at -inf, every midpoint between adjacent distinct scores,
// and +inf, in increasing threshold order.
inline std::vector<DetPoint> det_points(const LabeledScores& ls) {
  ls.check();
  std::vector<std::pair<double, bool>> all;
  all.reserve(ls.target.size() + ls.nontarget.size());
  for (double s : ls.target) all.emplace_back(s, true);
  for (double s : ls.nontarget) all.emplace_back(s, false);
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  const double nt = static_cast<double>(ls.target.size()), nn = static_cast<double>(ls.nontarget.size());
  std::vector<DetPoint> pts;
  pts.push_back({-std::numeric_limits<double>::infinity(), 1.0, 0.0});
  std::size_t miss = 0, rejected_non = 0;
  for (std::size_t i = 0; i < all.size();) {
    const double v = all[i].first;
    while (i < all.size() && all[i].first == v) {
      (all[i].second ? miss : rejected_non) += 1;
      ++i;
    }
    const double thr = i < all.size() ? 0.5 * (v + all[i].first) : std::numeric_limits<double>::infinity();
    pts.push_back({thr, (nn - static_cast<double>(rejected_non)) / nn, static_cast<double>(miss) / nt});
  }
  return pts;
}

inline std::vector<DetPoint> det_points(const ScoreSet& scores, const TrialKey& key) {
  return det_points(join_scores(scores, key));
}

// Equal error rate by linear interpolation between the two staircase points
// that straddle P_miss = P_fa.
inline double eer(const LabeledScores& ls) {
  const auto pts = det_points(ls);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double d = pts[i].p_miss - pts[i].p_fa;
    if (d == 0.0) return pts[i].p_miss;
    if (d > 0.0) {
      const auto& a = pts[i - 1];
      const auto& b = pts[i];
      const double lambda = (a.p_fa - a.p_miss) / ((b.p_miss - a.p_miss) - (b.p_fa - a.p_fa));
      return a.p_miss + lambda * (b.p_miss - a.p_miss);
    }
  }
  return pts.back().p_miss;  // unreachable: the last point has p_miss = 1, p_fa = 0
}

inline double eer(const ScoreSet& scores, const TrialKey& key) { return eer(join_scores(scores, key)); }

inline CprimaryReport c_primary(const LabeledScores& ls, const CprimaryConfig& cfg) {
  cfg.validate();
  ls.check();
  CprimaryReport rep;
  rep.n_target = ls.target.size();
  rep.n_nontarget = ls.nontarget.size();
  const auto pts = det_points(ls);
  const std::array<double, 2> priors{cfg.p_tar_1, cfg.p_tar_2};
  for (std::size_t k = 0; k < 2; ++k) {
    CostPoint& cp = rep.points[k];
    cp.p_tar = priors[k];
    cp.beta = detection_beta(cp.p_tar, cfg.c_miss, cfg.c_fa);
    cp.act_threshold = std::log(cp.beta);
    cp.act_c_norm = c_norm(error_rates_at(ls, cp.act_threshold), cp.p_tar, cfg.c_miss, cfg.c_fa);
    cp.min_c_norm = std::numeric_limits<double>::infinity();
    for (const auto& p : pts) {
      const double c = p.p_miss + cp.beta * p.p_fa;
      if (c < cp.min_c_norm) {
        cp.min_c_norm = c;
        cp.min_threshold = p.threshold;
      }
    }
  }
  rep.act_c_primary = 0.5 * (rep.points[0].act_c_norm + rep.points[1].act_c_norm);
  rep.min_c_primary = 0.5 * (rep.points[0].min_c_norm + rep.points[1].min_c_norm);
  rep.eer = eer(ls);
  return rep;
}

inline CprimaryReport c_primary(const ScoreSet& scores, const TrialKey& key, const CprimaryConfig& cfg) {
  return c_primary(join_scores(scores, key), cfg);
}

}  // namespace ivkit
