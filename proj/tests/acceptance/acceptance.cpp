// tests/acceptance/acceptance.cpp

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

// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails.

#include "ivkit/pipeline.hpp"
#include "oracles.hpp"

#include <sys/resource.h>

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>

namespace {

using namespace ivkit;
namespace pl = ivkit::pipeline;
namespace fs = std::filesystem;
using Overrides = std::vector<std::pair<std::string, pl::json>>;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

fs::path work_dir() {
  static const fs::path p = [] {
    const fs::path d = fs::temp_directory_path() / "ivkit_acceptance";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return p;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

const CprimaryReport& row(const pl::RunResult& r, const std::string& system) {
  for (const auto& x : r.report)
    if (x.system == system) return x.report;
  throw DataError("report has no row " + system);
}

// ---------------------------------------------------------------------------
// 1. Metrics against the brute-force sweep

Outcome metric_oracle() {
  Rng rng = make_rng(101, 0);
  std::uniform_int_distribution<int> size(200, 2000);
  std::uniform_real_distribution<double> frac(0.05, 0.5), shift(0.0, 3.0);
  const CprimaryConfig cfg;
  double worst = 0.0;
  for (int set = 0; set < 50; ++set) {
    const int n = size(rng);
    const int nt = std::max(1, static_cast<int>(frac(rng) * n));
    const double mu = shift(rng);
    // Every third set is rounded to one decimal to force ties.
    const bool ties = set % 3 == 0;
    LabeledScores ls;
    std::normal_distribution<double> g(0.0, 1.0);
    for (int i = 0; i < n; ++i) {
      double s = g(rng) + (i < nt ? mu : 0.0);
      if (ties) s = std::round(s * 10.0) / 10.0;
      (i < nt ? ls.target : ls.nontarget).push_back(s);
    }
    const auto rep = c_primary(ls, cfg);
    const double e = oracle::eer(ls.target, ls.nontarget);
    const double c1 = oracle::min_cnorm(ls.target, ls.nontarget, cfg.p_tar_1);
    const double c2 = oracle::min_cnorm(ls.target, ls.nontarget, cfg.p_tar_2);
    for (double diff : {rep.eer - e, rep.points[0].min_c_norm - c1, rep.points[1].min_c_norm - c2,
                        rep.min_c_primary - 0.5 * (c1 + c2)})
      worst = std::max(worst, std::abs(diff));
  }
  return {worst <= 1e-10, "50 sets, max |diff| = " + fmt("%.3g", worst)};
}

// ---------------------------------------------------------------------------
// 2. RLDA against a dense generalized eigensolve

Outcome rlda_oracle() {
  Rng rng = make_rng(102, 0);
  double worst_plain = 0.0, worst_reg = 0.0;
  for (int inst = 0; inst < 20; ++inst) {
    const int d = std::uniform_int_distribution<int>(2, 8)(rng);
    const int n_spk = std::uniform_int_distribution<int>(d + 2, 14)(rng);
    const int out = std::uniform_int_distribution<int>(1, d - 1)(rng);
    const Matrix centers = randn(rng, Index{n_spk}, Index{d}, 2.0);
    const Matrix mix = randn(rng, Index{d}, Index{d});
    std::vector<Vector> rows;
    std::vector<std::string> spk;
    for (int s = 0; s < n_spk; ++s) {
      const int sessions = std::uniform_int_distribution<int>(2, 5)(rng);
      for (int j = 0; j < sessions; ++j) {
        rows.push_back(centers.row(s).transpose() + mix * randn(rng, Index{d}));
        spk.push_back("s" + std::to_string(s));
      }
    }
    Matrix X(static_cast<Index>(rows.size()), d);
    for (std::size_t i = 0; i < rows.size(); ++i) X.row(static_cast<Index>(i)) = rows[i].transpose();

    for (const bool reg : {false, true}) {
      const double a = reg ? 0.001 : 0.0, b = reg ? 0.01 : 0.0;
      Matrix Sw, Sb;
      oracle::rlda_scatter(X, spk, a, b, Sw, Sb);
      const auto dense = oracle::dense_generalized_eigen(Sb, Sw);
      const auto fit = fit_rlda(X, spk, a, b, out);
      const double angle = oracle::max_principal_angle(fit.projection, dense.vectors.leftCols(out));
      (reg ? worst_reg : worst_plain) = std::max(reg ? worst_reg : worst_plain, angle);
    }
  }
  const bool ok = worst_plain < 1e-6 && worst_reg < 1e-6;
  return {ok, "20 instances, max angle " + fmt("%.3g", worst_plain) + " (plain), " + fmt("%.3g", worst_reg) +
                  " (regularized)"};
}

// ---------------------------------------------------------------------------
// 3. EM monotonicity

bool nondecreasing(const std::vector<double>& v, double& worst) {
  bool ok = true;
  for (std::size_t i = 1; i < v.size(); ++i) {
    const double drop = (v[i - 1] - v[i]) / std::max(1.0, std::abs(v[i - 1]));
    worst = std::max(worst, drop);
    if (v[i] < v[i - 1] - 1e-8 * std::abs(v[i - 1])) ok = false;
  }
  return ok;
}

Outcome em_monotone() {
  bool ok = true;
  double worst = -1e300;
  std::size_t iters = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto cfg = pl::load_config("", {{"seed", seed}});
    cfg.synth.seed = seed;
    const auto corpus = synth_corpus(cfg.synth);
    const auto frames = synth_frames(cfg.synth, corpus);

    auto gopt = cfg.ubm;
    gopt.num_iters = 10;
    gopt.seed = seed;
    const auto gmm = train_gmm_em(frames, gopt);
    ok = nondecreasing(gmm.log_likelihood, worst) && ok;

    std::vector<BwStats> stats;
    stats.reserve(frames.size());
    for (const auto& f : frames) stats.push_back(accumulate_bw_stats(gmm.gmm, f));
    auto topt = cfg.tv;
    topt.num_iters = 10;
    topt.seed = seed;
    const auto tv = train_tv(gmm.gmm, stats, topt);
    ok = nondecreasing(tv.objective, worst) && ok;

    Matrix X(static_cast<Index>(corpus.utterances.size()), cfg.synth.ivec_dim);
    std::vector<std::string> spk;
    for (std::size_t i = 0; i < corpus.utterances.size(); ++i) {
      X.row(static_cast<Index>(i)) = corpus.utterances[i].vector.transpose();
      spk.push_back(*corpus.utterances[i].speaker_id);
    }
    auto popt = cfg.plda;
    popt.num_iters = 10;
    popt.seed = seed;
    const auto plda = train_plda(X, spk, popt);
    ok = nondecreasing(plda.log_likelihood, worst) && ok;
    iters += gmm.log_likelihood.size() + tv.objective.size() + plda.log_likelihood.size() - 3;
  }
  return {ok, "5 datasets x (GMM, TV, PLDA), " + std::to_string(iters) +
                  " steps, largest relative drop " + fmt("%.3g", std::max(worst, 0.0))};
}

// ---------------------------------------------------------------------------
// 4. MAP adaptation contract

// Occupancy statistics by explicit per-frame loops in long double.
BwStats bw_oracle(const DiagGmm& g, const Matrix& frames) {
  const Index K = g.num_components(), D = g.dim();
  BwStats s{Vector::Zero(K), Matrix::Zero(K, D)};
  std::vector<long double> lp(static_cast<std::size_t>(K));
  for (Index t = 0; t < frames.rows(); ++t) {
    long double mx = -1e300L;
    for (Index c = 0; c < K; ++c) {
      long double v = std::log(static_cast<long double>(g.weights(c)));
      for (Index j = 0; j < D; ++j) {
        const long double diff = frames(t, j) - g.means(c, j);
        v -= 0.5L * (std::log(2.0L * 3.14159265358979323846L * g.variances(c, j)) + diff * diff / g.variances(c, j));
      }
      lp[static_cast<std::size_t>(c)] = v;
      mx = std::max(mx, v);
    }
    long double z = 0.0L;
    for (auto v : lp) z += std::exp(v - mx);
    for (Index c = 0; c < K; ++c) {
      const long double p = std::exp(lp[static_cast<std::size_t>(c)] - mx) / z;
      s.zeroth(c) += static_cast<double>(p);
      for (Index j = 0; j < D; ++j) s.first(c, j) += static_cast<double>(p * frames(t, j));
    }
  }
  return s;
}

Outcome map_contract() {
  Rng rng = make_rng(104, 0);
  const Index K = 4, D = 3;
  DiagGmm ubm{Vector::Constant(K, 0.25), randn(rng, K, D, 1.5), Matrix::Constant(K, D, 1.0)};
  // Component 3 sits far from every frame, so its posterior underflows to zero.
  ubm.means.row(3).setConstant(400.0);
  ubm.variances.row(1).setConstant(0.5);
  const std::vector<Matrix> frames{randn(rng, Index{300}, D), randn(rng, Index{200}, D, 2.0)};
  BwStats ref{Vector::Zero(K), Matrix::Zero(K, D)};
  for (const auto& f : frames) {
    const auto s = bw_oracle(ubm, f);
    ref.zeroth += s.zeroth;
    ref.first += s.first;
  }

  const auto far = map_adapt_means(ubm, frames, 512.0);
  const bool untouched = far.means.row(3) == ubm.means.row(3) && ref.zeroth(3) == 0.0;

  const auto limit = map_adapt_means(ubm, frames, 1e-14);
  double err0 = 0.0, err512 = 0.0;
  for (Index c = 0; c < 3; ++c) {
    const Vector data_mean = ref.first.row(c).transpose() / ref.zeroth(c);
    err0 = std::max(err0, (limit.means.row(c).transpose() - data_mean).cwiseAbs().maxCoeff());
    const double alpha = ref.zeroth(c) / (ref.zeroth(c) + 512.0);
    const Vector convex = alpha * data_mean + (1.0 - alpha) * ubm.means.row(c).transpose();
    err512 = std::max(err512, (far.means.row(c).transpose() - convex).cwiseAbs().maxCoeff());
  }
  const bool ok = untouched && err0 <= 1e-9 && err512 <= 1e-10;
  return {ok, std::string("zero-occupancy mean ") + (untouched ? "bit-identical" : "CHANGED") +
                  ", r->0 error " + fmt("%.3g", err0) + ", r=512 error " + fmt("%.3g", err512)};
}

// ---------------------------------------------------------------------------
// 5. s-norm reduction and asymmetry

Outcome snorm_properties() {
  Rng rng = make_rng(105, 0);
  const Index m = 6;
  const PldaModel p{randn(rng, m, 0.1), randn(rng, m, Index{3}), randn(rng, m, Index{2}, 0.5),
                    Vector::Constant(m, 0.4)};
  const PldaScorer sc(p);
  const int n = 60;
  std::vector<std::string> ids;
  for (int i = 0; i < n; ++i) ids.push_back("c" + std::to_string(i));
  const Cohort cohort(sc, randn(rng, Index{n}, m), ids);

  SnormConfig whole;
  whole.n_nearest = n;
  whole.k_top = n;
  int equal = 0;
  for (int k = 0; k < 20; ++k) {
    const SpeakerModel e{"e", randn(rng, m), 1};
    const Vector t = randn(rng, m);
    const double raw = sc.score(e.embedding, t);
    const double ts = snorm_trial_specific(raw, prepare_model_norm(sc, e, cohort, whole), t, sc, cohort, whole);
    if (ts == snorm_classic(raw, e.embedding, t, sc, cohort, whole.sigma_floor)) ++equal;
  }

  SnormConfig part;
  part.n_nearest = 20;
  part.k_top = 5;
  const Vector a = randn(rng, m), b = randn(rng, m);
  const double raw = sc.score(a, b);
  const double ab = snorm_trial_specific(raw, prepare_model_norm(sc, {"a", a, 1}, cohort, part), b, sc, cohort, part);
  const double ba = snorm_trial_specific(raw, prepare_model_norm(sc, {"b", b, 1}, cohort, part), a, sc, cohort, part);
  const bool ok = equal == 20 && ab != ba;
  return {ok, std::to_string(equal) + "/20 exact reductions; e->t " + fmt("%.6f", ab) + " vs t->e " +
                  fmt("%.6f", ba)};
}

// ---------------------------------------------------------------------------
// Pipeline-based criteria

// The direct system through the whole back-end chain, without fusion.
pl::RunResult chain_run(const std::string& tag, std::uint64_t seed, Overrides extra) {
  Overrides o{{"seed", seed},
              {"output_dir", (work_dir() / tag).string()},
              {"stages", {"synth", "precondition", "plda", "snorm", "metrics"}},
              {"fusion.systems", {"direct"}},
              {"fusion.variants", {"nodev"}}};
  o.insert(o.end(), extra.begin(), extra.end());
  return pl::run_pipeline(pl::load_config("", o));
}

// 6. NAP against no NAP.
Outcome nap_direction() {
  double eer_nap = 0, eer_plain = 0, c_nap = 0, c_plain = 0;
  std::size_t min_trials = SIZE_MAX;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto with = chain_run("nap_" + std::to_string(seed), seed, {});
    const auto without = chain_run("nonap_" + std::to_string(seed), seed, {{"precondition.use_nap", false}});
    const auto& a = row(with, "direct_nodev.snorm");
    const auto& b = row(without, "direct_nodev.snorm");
    eer_nap += a.eer / 5;
    eer_plain += b.eer / 5;
    c_nap += a.min_c_primary / 5;
    c_plain += b.min_c_primary / 5;
    min_trials = std::min(min_trials, a.n_target + a.n_nontarget);
  }
  const bool ok = eer_nap < eer_plain && c_nap < c_plain && min_trials >= 2000;
  return {ok, "mean EER " + fmt("%.4f", 100 * eer_nap) + "% vs " + fmt("%.4f", 100 * eer_plain) +
                  "%, mean min C_primary " + fmt("%.4f", c_nap) + " vs " + fmt("%.4f", c_plain) + ", >= " +
                  std::to_string(min_trials) + " trials per seed"};
}

// 7. RLDA against LDA with two sessions per speaker. Plain LDA has no
// solution after NAP (the projected scatter is singular), so both arms run
// without it.
Outcome rlda_direction() {
  int wins = 0;
  std::ostringstream per;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Overrides small{{"synth.sessions_per_speaker", 2},
                          {"synth.three_session_fraction", 0.0},
                          {"precondition.use_nap", false}};
    Overrides lda = small;
    lda.push_back({"precondition.alpha", 0.0});
    lda.push_back({"precondition.beta", 0.0});
    const double r = row(chain_run("rlda_" + std::to_string(seed), seed, small), "direct_nodev.snorm").eer;
    const double l = row(chain_run("lda_" + std::to_string(seed), seed, lda), "direct_nodev.snorm").eer;
    if (r <= l) ++wins;
    per << (seed > 1 ? ", " : "") << fmt("%.2f", 100 * r) << "/" << fmt("%.2f", 100 * l);
  }
  return {wins >= 4, std::to_string(wins) + "/5 seeds with RLDA EER <= LDA EER (RLDA/LDA %: " + per.str() + ")"};
}

// Desk runs shared by criteria 8 and 10.
struct DeskRun {
  fs::path dir;
  pl::RunResult result;
  double seconds = 0.0;
};

DeskRun desk_run(const std::string& tag) {
  DeskRun r;
  r.dir = work_dir() / tag;
  const auto t0 = std::chrono::steady_clock::now();
  r.result = pl::run_pipeline(pl::load_config("", {{"output_dir", r.dir.string()}}));
  r.seconds = seconds_since(t0);
  return r;
}

const DeskRun& first_desk_run() {
  static const DeskRun r = desk_run("desk_a");
  return r;
}

// 8. Calibration of the fused system whose back-ends never saw dev data.
Outcome calibration() {
  const auto& rep = row(first_desk_run().result, "fused_nodev");
  const double gap = rep.act_c_primary - rep.min_c_primary;
  return {gap <= 0.05, "act - min C_primary = " + fmt("%.4f", rep.act_c_primary) + " - " +
                           fmt("%.4f", rep.min_c_primary) + " = " + fmt("%.4f", gap)};
}

// 9. Three-session against one-session enrollment on the same trials.
Outcome multi_session() {
  double e3 = 0.0, e1 = 0.0;
  int not_worse = 0;
  std::size_t n_models = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const fs::path dir = work_dir() / ("multi_" + std::to_string(seed));
    chain_run(dir.filename().string(), seed, {});
    const auto sm = pl::scoring_model_from_container(io::load_container(dir / "models" / "direct_nodev.sutk"), true);
    const auto vectors = pl::vector_map(io::load_ivectors(dir / "ivectors" / "direct.txt"));
    const auto enrollment = io::load_enrollment(dir / "lists" / "eval.enroll");
    const auto key = io::load_key(dir / "lists" / "eval.key");
    EnrollmentMap three, one;
    for (const auto& [model, utts] : enrollment)
      if (utts.size() >= 3) {
        three[model] = utts;
        one[model] = {utts.front()};
      }
    TrialKey sub;
    for (const auto& e : key.entries)
      if (three.count(e.model_id)) sub.entries.push_back(e);
    n_models += three.size();
    const auto trials = sub.trials();
    const double a = eer(*pl::score_stage(sm, vectors, three, trials, true, 1).normalized, sub);
    const double b = eer(*pl::score_stage(sm, vectors, one, trials, true, 1).normalized, sub);
    e3 += a / 5;
    e1 += b / 5;
    if (a <= b) ++not_worse;
  }
  return {e3 <= e1 && n_models > 0, "mean EER " + fmt("%.4f", 100 * e3) + "% (3 sessions) vs " +
                                       fmt("%.4f", 100 * e1) + "% (1 session); " + std::to_string(not_worse) +
                                       "/5 seeds not worse; " + std::to_string(n_models) + " models"};
}

// 10. Reproducibility, runtime and memory of the desk pipeline.
std::vector<fs::path> compared_files(const fs::path& dir) {
  std::vector<fs::path> out{"report.txt"};
  for (const auto& e : fs::recursive_directory_iterator(dir / "scores"))
    if (e.is_regular_file()) out.push_back(fs::relative(e.path(), dir));
  std::sort(out.begin(), out.end());
  return out;
}

Outcome reproducibility() {
  const auto& a = first_desk_run();
  const auto b = desk_run("desk_b");
  const auto fa = compared_files(a.dir), fb = compared_files(b.dir);
  std::size_t same = 0;
  if (fa == fb)
    for (const auto& f : fa)
      if (io::read_file(a.dir / f) == io::read_file(b.dir / f)) ++same;
  rusage ru{};
  getrusage(RUSAGE_SELF, &ru);
  const double peak_mb = static_cast<double>(ru.ru_maxrss) / 1024.0;  // ru_maxrss is in KiB
  const double slowest = std::max(a.seconds, b.seconds);
  const bool ok = fa == fb && same == fa.size() && slowest < 300.0 && peak_mb < 1024.0;
  return {ok, std::to_string(same) + "/" + std::to_string(fa.size()) + " files byte-identical; runs " +
                  fmt("%.1f", a.seconds) + " s and " + fmt("%.1f", b.seconds) + " s; peak RSS " +
                  fmt("%.0f", peak_mb) + " MB"};
}

struct Criterion {
  const char* name;
  double limit_seconds;  // 0: no limit
  std::function<Outcome()> check;
};

}  // namespace

int main() {
  set_warning_echo(false);
  const std::vector<Criterion> criteria = {
      {"metric oracle equivalence", 10.0, metric_oracle},
      {"RLDA generalized eigen oracle", 5.0, rlda_oracle},
      {"EM monotonicity", 60.0, em_monotone},
      {"MAP adaptation contract", 0.0, map_contract},
      {"s-norm reduction and asymmetry", 0.0, snorm_properties},
      {"NAP improves mismatched trials", 300.0, nap_direction},
      {"RLDA not worse than LDA", 0.0, rlda_direction},
      {"fused calibration gap", 0.0, calibration},
      {"multi-session enrollment", 0.0, multi_session},
      {"end-to-end reproducibility", 0.0, reproducibility},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto& c = criteria[i];
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = seconds_since(t0);
    if (c.limit_seconds > 0.0 && secs >= c.limit_seconds) {
      o.pass = false;
      o.detail += "; over the " + fmt("%.0f", c.limit_seconds) + " s limit";
    }
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS" : "FAIL") << " C" << i + 1 << " " << c.name << " [" << fmt("%.2f", secs)
              << " s]: " << o.detail << std::endl;
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria passed"
            << std::endl;
  return failed == 0 ? 0 : 1;
}
