// include/ivkit/scorenorm.hpp

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

// Score normalization against an imposter cohort.
//
// Trial-specific s-norm: at enrollment each model keeps its n_nearest cohort
// vectors (by cosine similarity) and the mean/std of its scores against them
// (z part). At test time the test vector is scored against that same subset
// and the k_top largest scores give the t-part statistics. The result is
//   0.5 * [(s - mu_z) / sigma_z + (s - mu_t) / sigma_t].
// Classic s-norm uses the whole cohort for both parts.
//
// Cohort scores are always computed as score(model, cohort_i) for the z part
// and score(cohort_i, test) for the t part, and statistics are accumulated in
// ascending cohort index order, so the trial-specific variant reduces to the
// classic one bit for bit when nothing is pruned.

#pragma once

#include "ivkit/common.hpp"
#include "ivkit/plda.hpp"

#include <numeric>
#include <span>

namespace ivkit {

enum class CohortSelection { kCosine, kPldaScore };
enum class StdKind { kPopulation, kSample };

struct SnormConfig {
  int n_nearest = 10000;
  int k_top = 5000;
  double sigma_floor = 1e-6;
  CohortSelection selection = CohortSelection::kCosine;
  StdKind std_kind = StdKind::kPopulation;

  void validate() const {
    if (n_nearest < 1 || k_top < 1) throw ConfigError("snorm: n_nearest and k_top must be positive");
    if (k_top > n_nearest) throw ConfigError("snorm: k_top must not exceed n_nearest");
    if (!(sigma_floor > 0.0)) throw ConfigError("snorm: sigma_floor must be positive");
  }
};

class Cohort {
 public:
  Cohort(const PldaScorer& scorer, Matrix vectors, std::vector<std::string> ids)
      : vectors_(std::move(vectors)), ids_(std::move(ids)) {
    if (static_cast<Index>(ids_.size()) != vectors_.rows()) throw DataError("cohort: id count mismatch");
    if (ids_.size() < 2) throw DataError("cohort: need at least 2 vectors");
    if (std::unordered_set<std::string>(ids_.begin(), ids_.end()).size() != ids_.size())
      throw DataError("cohort: ids must be unique");
    prepared_.reserve(ids_.size());
    for (Index i = 0; i < vectors_.rows(); ++i) prepared_.push_back(scorer.prepare(vectors_.row(i).transpose()));
    // Rank of each id in lexicographic order, for tie-breaking.
    std::vector<std::size_t> order(ids_.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return ids_[a] < ids_[b]; });
    id_rank_.resize(ids_.size());
    for (std::size_t r = 0; r < order.size(); ++r) id_rank_[order[r]] = r;
  }

  std::size_t size() const { return ids_.size(); }
  const Matrix& vectors() const { return vectors_; }
  const std::vector<std::string>& ids() const { return ids_; }
  const PldaScorer::Prepared& prepared(std::size_t i) const { return prepared_[i]; }
  std::size_t id_rank(std::size_t i) const { return id_rank_[i]; }

 private:
  Matrix vectors_;
  std::vector<std::string> ids_;
  std::vector<PldaScorer::Prepared> prepared_;
  std::vector<std::size_t> id_rank_;
};

struct ModelNormStats {
  std::string model_id;
  std::vector<std::size_t> selected;  // ascending cohort indices
  double mu_z = 0.0;
  double sigma_z = 1.0;
  bool sigma_floored = false;
};

struct SnormDiagnostics {
  std::size_t floored_z = 0;
  std::size_t floored_t = 0;
};

namespace detail {

struct MeanStd {
  double mean;
  double std;
  bool floored;
};

inline MeanStd mean_std(std::span<const double> xs, StdKind kind, double floor) {
  const double n = static_cast<double>(xs.size());
  double sum = 0.0;
  for (double x : xs) sum += x;
  const double mean = sum / n;
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  const double denom = (kind == StdKind::kSample && xs.size() > 1) ? n - 1.0 : n;
  double sd = std::sqrt(ss / denom);
  bool floored = false;
  if (!(sd >= floor)) {
    sd = floor;
    floored = true;
  }
  return {mean, sd, floored};
}

// Indices of the `k` largest values, ties broken by cohort id; returned sorted
// ascending.
inline std::vector<std::size_t> top_k(std::span<const double> values, std::size_t k, const Cohort& cohort,
                                      std::span<const std::size_t> candidates) {
  std::vector<std::size_t> pos(candidates.size());
  std::iota(pos.begin(), pos.end(), std::size_t{0});
  k = std::min(k, pos.size());
  if (k < pos.size())
    std::nth_element(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(k), pos.end(),
                     [&](std::size_t a, std::size_t b) {
                       if (values[a] != values[b]) return values[a] > values[b];
                       return cohort.id_rank(candidates[a]) < cohort.id_rank(candidates[b]);
                     });
  pos.resize(k);
  std::sort(pos.begin(), pos.end());
  return pos;
}

}  // namespace detail

inline ModelNormStats prepare_model_norm(const PldaScorer& scorer, const SpeakerModel& model,
                                         const Cohort& cohort, SnormConfig cfg) {
  cfg.validate();
  std::size_t n_nearest = static_cast<std::size_t>(cfg.n_nearest);
  if (n_nearest > cohort.size()) {
    warn("prepare_model_norm: cohort has " + std::to_string(cohort.size()) + " vectors, fewer than n_nearest=" +
         std::to_string(n_nearest) + "; using the whole cohort");
    n_nearest = cohort.size();
  }
  const auto pm = scorer.prepare(model.embedding);
  std::vector<double> z(cohort.size());
  for (std::size_t i = 0; i < cohort.size(); ++i) z[i] = scorer.score(pm, cohort.prepared(i));

  std::vector<std::size_t> all(cohort.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::vector<std::size_t> selected;
  if (n_nearest == cohort.size()) {
    selected = all;
  } else if (cfg.selection == CohortSelection::kPldaScore) {
    selected = detail::top_k(z, n_nearest, cohort, all);
  } else {
    const Vector e = model.embedding.normalized();
    std::vector<double> sim(cohort.size());
    for (std::size_t i = 0; i < cohort.size(); ++i) {
      const auto row = cohort.vectors().row(static_cast<Index>(i));
      sim[i] = row.dot(e) / row.norm();
    }
    selected = detail::top_k(sim, n_nearest, cohort, all);
  }

  std::vector<double> zs;
  zs.reserve(selected.size());
  for (auto i : selected) zs.push_back(z[i]);
  const auto st = detail::mean_std(zs, cfg.std_kind, cfg.sigma_floor);
  return {model.model_id, std::move(selected), st.mean, st.std, st.floored};
}

// score(cohort_i, test) for every cohort vector.
inline std::vector<double> test_cohort_scores(const PldaScorer& scorer, const Cohort& cohort,
                                              const Vector& test) {
  const auto pt = scorer.prepare(test);
  std::vector<double> out(cohort.size());
  for (std::size_t i = 0; i < cohort.size(); ++i) out[i] = scorer.score(cohort.prepared(i), pt);
  return out;
}

struct TestNormStats {
  double mu_t = 0.0;
  double sigma_t = 1.0;
  bool sigma_floored = false;
};

// t-part statistics: the k_top largest of the test's scores against the
// model's selected cohort. `test_scores` holds score(cohort_i, test) for the
// full cohort.
inline TestNormStats test_norm_stats(std::span<const std::size_t> selected, std::span<const double> test_scores,
                                     const Cohort& cohort, const SnormConfig& cfg) {
  if (test_scores.size() != cohort.size()) throw DataError("snorm: test score row does not match the cohort");
  if (selected.empty()) throw DataError("snorm: model has no selected cohort");
  std::vector<double> sub;
  sub.reserve(selected.size());
  for (auto i : selected) sub.push_back(test_scores[i]);
  const auto keep = detail::top_k(sub, static_cast<std::size_t>(cfg.k_top), cohort, selected);
  std::vector<double> top;
  top.reserve(keep.size());
  for (auto p : keep) top.push_back(sub[p]);
  const auto t = detail::mean_std(top, cfg.std_kind, cfg.sigma_floor);
  return {t.mean, t.std, t.floored};
}

inline double snorm_combine(double raw, const ModelNormStats& z, const TestNormStats& t) {
  return 0.5 * ((raw - z.mu_z) / z.sigma_z + (raw - t.mu_t) / t.sigma_t);
}

inline double snorm_trial_specific(double raw, const ModelNormStats& stats, std::span<const double> test_scores,
                                   const Cohort& cohort, SnormConfig cfg, SnormDiagnostics* diag = nullptr) {
  cfg.validate();
  const auto t = test_norm_stats(stats.selected, test_scores, cohort, cfg);
  if (diag) {
    diag->floored_z += stats.sigma_floored ? 1 : 0;
    diag->floored_t += t.sigma_floored ? 1 : 0;
  }
  return snorm_combine(raw, stats, t);
}

inline double snorm_trial_specific(double raw, const ModelNormStats& stats, const Vector& test,
                                   const PldaScorer& scorer, const Cohort& cohort, const SnormConfig& cfg) {
  return snorm_trial_specific(raw, stats, test_cohort_scores(scorer, cohort, test), cohort, cfg);
}

// Symmetric s-norm with both parts over the whole cohort.
inline double snorm_classic(double raw, const Vector& model_embedding, const Vector& test, const PldaScorer& scorer,
                            const Cohort& cohort, double sigma_floor = 1e-6,
                            StdKind kind = StdKind::kPopulation) {
  const auto pm = scorer.prepare(model_embedding);
  std::vector<double> z(cohort.size());
  for (std::size_t i = 0; i < cohort.size(); ++i) z[i] = scorer.score(pm, cohort.prepared(i));
  const auto t_scores = test_cohort_scores(scorer, cohort, test);
  const auto zs = detail::mean_std(z, kind, sigma_floor);
  const auto ts = detail::mean_std(t_scores, kind, sigma_floor);
  return 0.5 * ((raw - zs.mean) / zs.std + (raw - ts.mean) / ts.std);
}

}  // namespace ivkit
