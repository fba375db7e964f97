// tests/test_frontend.cpp

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

// Synthetic corpus, GMM/UBM and total-variability extractor.

#include "ivkit/corpus.hpp"
#include "ivkit/gmm.hpp"
#include "ivkit/tv.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <set>

namespace {

using namespace ivkit;

SynthConfig small_config() {
  SynthConfig c;
  c.ivec_dim = 12;
  c.n_speakers = 40;
  c.sessions_per_speaker = 4;
  c.speaker_rank = 4;
  c.channel_rank = 3;
  c.n_languages = 4;
  c.feature_dim = 4;
  c.frames_per_utt = 50;
  c.frame_components = 4;
  return c;
}

// Frames drawn from a known 1-D two-component mixture.
Matrix two_gaussian_frames(Index n, std::uint64_t seed) {
  Rng rng = make_rng(seed, 99);
  std::bernoulli_distribution pick(0.3);
  std::normal_distribution<double> a(-3.0, 1.0), b(3.0, std::sqrt(0.5));
  Matrix f(n, 1);
  for (Index i = 0; i < n; ++i) f(i, 0) = pick(rng) ? a(rng) : b(rng);
  return f;
}

DiagGmm make_gmm(const Vector& w, const Matrix& mu, const Matrix& var) { return DiagGmm{w, mu, var}; }

// ---------------------------------------------------------------------------
// Corpus

TEST(Corpus, SameSeedSameCorpus) {
  const auto a = synth_corpus(small_config());
  const auto b = synth_corpus(small_config());
  ASSERT_EQ(a.utterances.size(), b.utterances.size());
  for (std::size_t i = 0; i < a.utterances.size(); ++i) {
    EXPECT_EQ(a.utterances[i].utt_id, b.utterances[i].utt_id);
    EXPECT_EQ(a.utterances[i].vector, b.utterances[i].vector);
  }
  auto cfg = small_config();
  cfg.seed = 2;
  const auto c = synth_corpus(cfg);
  EXPECT_NE(a.utterances[0].vector, c.utterances[0].vector);
}

TEST(Corpus, IdsAndLanguages) {
  const auto c = synth_corpus(small_config());
  ASSERT_EQ(c.utterances.size(), 160u);
  EXPECT_EQ(c.utterances[0].utt_id, "spk0000_s00");
  EXPECT_EQ(c.utterances[5].utt_id, "spk0001_s01");
  EXPECT_EQ(*c.utterances[5].language_id, "lang01");
  for (std::size_t i = 0; i < c.utterances.size(); ++i)
    EXPECT_EQ(c.truth.utt_language[i], c.truth.utt_speaker[i] % 4);
}

TEST(Corpus, ZeroShiftMeanWithinStandardError) {
  // With no language shift the population mean is zero; the sample mean of
  // the speaker means must sit within a few standard errors of it.
  auto cfg = small_config();
  cfg.language_shift_scale = 0.0;
  for (int n : {50, 400}) {
    cfg.n_speakers = n;
    const auto c = synth_corpus(cfg);
    Matrix spk_means = Matrix::Zero(cfg.ivec_dim, n);
    for (std::size_t i = 0; i < c.utterances.size(); ++i)
      spk_means.col(c.truth.utt_speaker[i]) += c.utterances[i].vector / cfg.sessions_per_speaker;
    const Vector mean = spk_means.rowwise().mean();
    const Matrix centered = spk_means.colwise() - mean;
    for (Index j = 0; j < cfg.ivec_dim; ++j) {
      const double se = std::sqrt(centered.row(j).squaredNorm() / (n - 1) / n);
      EXPECT_LT(std::abs(mean(j)), 4.5 * se) << "n=" << n << " dim " << j;
    }
  }
}

TEST(Corpus, NoChannelNoResidualGivesIdenticalSessions) {
  auto cfg = small_config();
  cfg.channel_rank = 0;
  cfg.residual_std = 1e-200;
  const auto c = synth_corpus(cfg);
  for (std::size_t i = 0; i < c.utterances.size(); ++i) {
    const std::size_t first = static_cast<std::size_t>(c.truth.utt_speaker[i] * cfg.sessions_per_speaker);
    EXPECT_EQ(c.utterances[i].vector, c.utterances[first].vector);
  }
}

TEST(Corpus, WithinSpeakerScatterMatchesModel) {
  auto cfg = small_config();
  cfg.ivec_dim = 10;
  cfg.n_speakers = 400;
  cfg.channel_rank = 3;
  cfg.residual_std = 0.7;
  const auto c = synth_corpus(cfg);
  const Index d = cfg.ivec_dim;
  Matrix spk_mean = Matrix::Zero(d, cfg.n_speakers);
  for (std::size_t i = 0; i < c.utterances.size(); ++i)
    spk_mean.col(c.truth.utt_speaker[i]) += c.utterances[i].vector / cfg.sessions_per_speaker;
  Matrix S = Matrix::Zero(d, d);
  for (std::size_t i = 0; i < c.utterances.size(); ++i) {
    const Vector r = c.utterances[i].vector - spk_mean.col(c.truth.utt_speaker[i]);
    S += r * r.transpose();
  }
  const double dof = static_cast<double>(cfg.n_speakers * (cfg.sessions_per_speaker - 1));
  S /= dof;
  const Matrix sigma = c.truth.within_covariance(cfg.residual_std);
  // E ||S - Sigma||_F^2 = (tr(Sigma)^2 + tr(Sigma^2)) / dof for Gaussian data.
  const double tol = 3.0 * std::sqrt(sigma.trace() * sigma.trace() + (sigma * sigma).trace()) / std::sqrt(dof);
  EXPECT_LT((S - sigma).norm(), tol);
}

TEST(Corpus, ValidateRejectsBadConfig) {
  auto cfg = small_config();
  cfg.speaker_rank = 10;
  cfg.channel_rank = 5;
  EXPECT_THROW(synth_corpus(cfg), ConfigError);
  cfg = small_config();
  cfg.residual_std = 0.0;
  EXPECT_THROW(synth_corpus(cfg), ConfigError);
  cfg = small_config();
  cfg.n_languages = 1;
  EXPECT_THROW(synth_corpus(cfg), ConfigError);
}

TEST(Frames, OneFramePerUtterance) {
  auto cfg = small_config();
  cfg.frames_per_utt = 1;
  const auto c = synth_corpus(cfg);
  const auto frames = synth_frames(cfg, c);
  ASSERT_EQ(frames.size(), c.utterances.size());
  for (const auto& f : frames) {
    EXPECT_EQ(f.rows(), 1);
    EXPECT_EQ(f.cols(), cfg.feature_dim);
  }
}

TEST(Frames, IdenticalLatentsGiveIdenticalFrames) {
  const auto cfg = small_config();
  const auto c = synth_corpus(cfg);
  const Vector& latent = c.utterances[3].vector;
  const Matrix a = synth_utterance_frames(cfg, c.truth, latent, 17);
  const Matrix b = synth_utterance_frames(cfg, c.truth, latent, 17);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, synth_utterance_frames(cfg, c.truth, latent, 18));
  EXPECT_THROW(synth_utterance_frames(cfg, c.truth, Vector::Zero(3), 0), DataError);
}

TEST(Frames, ComponentOccupancyMatchesWeights) {
  // Responsibilities of the true mixture, computed by brute force, should
  // give occupancies near the (uniform) component weights.
  auto cfg = small_config();
  cfg.frames_per_utt = 2000;
  const auto c = synth_corpus(cfg);
  const Matrix f = synth_utterance_frames(cfg, c.truth, Vector::Zero(cfg.ivec_dim), 0);
  const Index K = cfg.frame_components;
  Vector occ = Vector::Zero(K);
  const Matrix cov = Matrix::Identity(cfg.feature_dim, cfg.feature_dim);
  for (Index t = 0; t < f.rows(); ++t) {
    Vector lp(K);
    for (Index k = 0; k < K; ++k)
      lp(k) = std::log(c.truth.frame_weights(k)) +
              oracle::gauss_logpdf(f.row(t).transpose(), c.truth.frame_means.row(k).transpose(), cov);
    const Vector p = (lp.array() - lp.maxCoeff()).exp();
    occ += p / p.sum();
  }
  occ /= static_cast<double>(f.rows());
  for (Index k = 0; k < K; ++k) {
    const double w = c.truth.frame_weights(k);
    EXPECT_NEAR(occ(k), w, 4.0 * std::sqrt(w * (1 - w) / static_cast<double>(f.rows())));
  }
}

// ---------------------------------------------------------------------------
// Partitioning and trials

std::vector<LabeledIvector> toy_corpus(int n_spk, int sessions, const std::vector<std::string>& langs) {
  std::vector<LabeledIvector> out;
  for (int s = 0; s < n_spk; ++s)
    for (int j = 0; j < sessions; ++j) {
      const std::string spk = speaker_name(s, n_spk);
      out.push_back({spk + detail::padded("_s", j, 2), Vector::Constant(2, s + 0.1 * j), spk,
                     langs[static_cast<std::size_t>(s) % langs.size()], Partition::kPrimaryTrain});
    }
  return out;
}

TEST(Split, BuildTrialsFullGrid) {
  const auto corpus = toy_corpus(10, 6, {"lang00"});
  std::map<std::string, std::vector<std::size_t>> utts_of;
  std::vector<std::string> spks;
  for (std::size_t i = 0; i < corpus.size(); ++i) utts_of[*corpus[i].speaker_id].push_back(i);
  for (const auto& [s, _] : utts_of) spks.push_back(s);
  const auto tl = detail::build_trials(spks, utts_of, corpus, 0.0, 3, nullptr, false);
  EXPECT_EQ(tl.key.entries.size(), 500u);
  EXPECT_EQ(tl.key.num_targets(), 50u);
  EXPECT_NO_THROW(check_unique_trials(tl.key.trials()));
  EXPECT_EQ(tl.enrollment.size(), 10u);
  for (const auto& [m, u] : tl.enrollment) EXPECT_EQ(u.size(), 1u);
}

TEST(Split, PartitionsAreDisjointBySpeaker) {
  auto cfg = small_config();
  cfg.n_speakers = 200;
  const auto c = synth_corpus(cfg);
  SplitSpec spec;
  const auto sr = split_corpus(c.utterances, spec);
  std::map<std::string, std::set<Partition>> by_spk;
  for (std::size_t i = 0; i < c.utterances.size(); ++i) {
    const auto p = sr.partition[i];
    by_spk[*c.utterances[i].speaker_id].insert(p == Partition::kEnroll ? Partition::kTest : p);
    const bool held = *c.utterances[i].language_id >= "lang02";
    EXPECT_EQ(held, p != Partition::kPrimaryTrain);
    if (p == Partition::kUnlabeledMajor) EXPECT_EQ(*c.utterances[i].language_id, "lang02");
    if (p == Partition::kUnlabeledMinor) EXPECT_EQ(*c.utterances[i].language_id, "lang03");
  }
  for (const auto& [s, ps] : by_spk) EXPECT_EQ(ps.size(), 1u) << s;
  EXPECT_GT(sr.eval.key.num_targets(), 0u);
  EXPECT_GT(sr.dev.key.num_targets(), 0u);
  std::size_t multi = 0;
  for (const auto& [m, u] : sr.eval.enrollment) {
    EXPECT_TRUE(u.size() == 1 || u.size() == 3);
    multi += u.size() == 3;
  }
  EXPECT_NEAR(static_cast<double>(multi) / sr.eval.enrollment.size(), 0.5, 0.05);
}

TEST(Split, ZeroThreeSessionFraction) {
  auto cfg = small_config();
  cfg.n_speakers = 100;
  const auto c = synth_corpus(cfg);
  SplitSpec spec;
  spec.three_session_fraction = 0.0;
  const auto sr = split_corpus(c.utterances, spec);
  for (const auto& [m, u] : sr.eval.enrollment) EXPECT_EQ(u.size(), 1u);
  for (const auto& [m, u] : sr.dev.enrollment) EXPECT_EQ(u.size(), 1u);
}

TEST(Split, StraddlingSpeakerIsRejected) {
  auto corpus = toy_corpus(12, 4, {"lang00", "lang01", "lang02"});
  corpus[0].language_id = "lang02";  // spk0000 otherwise speaks lang00
  SplitSpec spec;
  spec.heldout_languages = 1;
  EXPECT_THROW(split_corpus(corpus, spec), DataError);
}

TEST(Split, SpecValidation) {
  SplitSpec spec;
  spec.dev_fraction = 0.5;
  EXPECT_THROW(spec.validate(), ConfigError);
  spec = {};
  spec.heldout_languages = 0;
  EXPECT_THROW(spec.validate(), ConfigError);
}

// ---------------------------------------------------------------------------
// GMM

TEST(Gmm, SingleComponentIsClosedForm) {
  Rng rng = make_rng(5, 0);
  const std::vector<Matrix> frames{randn(rng, 300, 3, 2.0), randn(rng, 200, 3, 0.5)};
  GmmTrainOptions opt;
  opt.num_components = 1;
  opt.num_iters = 3;
  const auto res = train_gmm_em(frames, opt);
  Matrix all(500, 3);
  all << frames[0], frames[1];
  const Vector mean = all.colwise().mean();
  const Vector var = (all.rowwise() - mean.transpose()).array().square().colwise().mean();
  EXPECT_NEAR(res.gmm.weights(0), 1.0, 1e-15);
  for (Index j = 0; j < 3; ++j) {
    EXPECT_NEAR(res.gmm.means(0, j), mean(j), 1e-12);
    EXPECT_NEAR(res.gmm.variances(0, j), var(j), 1e-12);
  }
}

TEST(Gmm, RecoversTwoGaussians) {
  const Index n = 20000;
  const std::vector<Matrix> frames{two_gaussian_frames(n, 1)};
  GmmTrainOptions opt;
  opt.num_components = 2;
  opt.num_iters = 30;
  const auto g = train_gmm_em(frames, opt).gmm;
  const Index lo = g.means(0, 0) < g.means(1, 0) ? 0 : 1, hi = 1 - lo;
  const double n_lo = 0.3 * n, n_hi = 0.7 * n;
  EXPECT_NEAR(g.means(lo, 0), -3.0, 3.0 * std::sqrt(1.0 / n_lo));
  EXPECT_NEAR(g.means(hi, 0), 3.0, 3.0 * std::sqrt(0.5 / n_hi));
  EXPECT_NEAR(g.variances(lo, 0), 1.0, 3.0 * std::sqrt(2.0 / n_lo));
  EXPECT_NEAR(g.variances(hi, 0), 0.5, 3.0 * 0.5 * std::sqrt(2.0 / n_hi));
  EXPECT_NEAR(g.weights(lo), 0.3, 3.0 * std::sqrt(0.21 / n));
}

TEST(Gmm, LogLikelihoodIsMonotone) {
  auto cfg = small_config();
  const auto c = synth_corpus(cfg);
  const auto frames = synth_frames(cfg, c);
  GmmTrainOptions opt;
  opt.num_components = 6;
  opt.num_iters = 12;
  const auto res = train_gmm_em(frames, opt);
  ASSERT_EQ(res.log_likelihood.size(), 13u);
  for (std::size_t i = 1; i < res.log_likelihood.size(); ++i)
    EXPECT_GE(res.log_likelihood[i], res.log_likelihood[i - 1] - 1e-9 * std::abs(res.log_likelihood[i - 1]));
  EXPECT_NEAR(total_log_likelihood(res.gmm, frames), res.log_likelihood.back(), 1e-8 * std::abs(res.log_likelihood.back()));
}

TEST(Gmm, ErrorPaths) {
  const std::vector<Matrix> frames{two_gaussian_frames(100, 2)};
  GmmTrainOptions opt;
  opt.num_components = 0;
  EXPECT_THROW(train_gmm_em(frames, opt), ConfigError);
  opt.num_components = 2;
  opt.variance_floor = 0.0;
  EXPECT_THROW(train_gmm_em(frames, opt), ConfigError);
  opt.variance_floor = 1e-4;
  opt.num_iters = -1;
  EXPECT_THROW(train_gmm_em(frames, opt), ConfigError);
  opt.num_iters = 2;
  EXPECT_THROW(train_gmm_em(std::vector<Matrix>{Matrix(0, 1)}, opt), DataError);
  opt.num_components = 11;  // 100 frames < 10 * 11
  EXPECT_THROW(train_gmm_em(frames, opt), DataError);
}

TEST(BwStats, SingleComponentIsExact) {
  Rng rng = make_rng(3, 0);
  const Matrix f = randn(rng, Index{37}, Index{4});
  const auto g = make_gmm(Vector::Ones(1), Matrix::Zero(1, 4), Matrix::Ones(1, 4));
  const auto s = accumulate_bw_stats(g, f);
  EXPECT_DOUBLE_EQ(s.zeroth(0), 37.0);
  EXPECT_TRUE(s.first.row(0).isApprox(f.colwise().sum(), 1e-12));
}

TEST(BwStats, ThreeFramesBruteForce) {
  Vector w(2);
  w << 0.4, 0.6;
  Matrix mu(2, 2), var(2, 2);
  mu << 0, 0, 2, 1;
  var << 1, 2, 0.5, 1;
  const auto g = make_gmm(w, mu, var);
  Matrix f(3, 2);
  f << 0.1, -0.3, 1.5, 1.2, 3.0, 0.0;
  Vector n = Vector::Zero(2);
  Matrix F = Matrix::Zero(2, 2);
  for (Index t = 0; t < 3; ++t) {
    Vector p(2);
    for (Index k = 0; k < 2; ++k)
      p(k) = w(k) * std::exp(oracle::gauss_logpdf(f.row(t).transpose(), mu.row(k).transpose(),
                                                  var.row(k).asDiagonal().toDenseMatrix()));
    p /= p.sum();
    n += p;
    F += p * f.row(t);
  }
  const auto s = accumulate_bw_stats(g, f);
  EXPECT_TRUE(s.zeroth.isApprox(n, 1e-12));
  EXPECT_TRUE(s.first.isApprox(F, 1e-12));
}

TEST(BwStats, AdditiveOverFrames) {
  auto cfg = small_config();
  const auto c = synth_corpus(cfg);
  const auto frames = synth_frames(cfg, c);
  GmmTrainOptions opt;
  opt.num_components = 4;
  opt.num_iters = 3;
  const auto g = train_gmm_em(frames, opt).gmm;
  Matrix both(frames[0].rows() + frames[1].rows(), frames[0].cols());
  both << frames[0], frames[1];
  const auto a = accumulate_bw_stats(g, frames[0]), b = accumulate_bw_stats(g, frames[1]);
  const auto ab = accumulate_bw_stats(g, both);
  EXPECT_TRUE(ab.zeroth.isApprox(a.zeroth + b.zeroth, 1e-12));
  EXPECT_TRUE(ab.first.isApprox(a.first + b.first, 1e-12));
  EXPECT_NEAR(ab.total(), static_cast<double>(both.rows()), 1e-9);
}

TEST(Map, UnseenComponentIsUntouched) {
  Vector w(2);
  w << 0.5, 0.5;
  Matrix mu(2, 2), var = Matrix::Ones(2, 2);
  mu << 0, 0, 1000.0 / 3.0, -1e3;
  const auto ubm = make_gmm(w, mu, var);
  Rng rng = make_rng(8, 0);
  const std::vector<Matrix> frames{randn(rng, Index{50}, Index{2})};
  EXPECT_EQ(accumulate_bw_stats(ubm, frames[0]).zeroth(1), 0.0);
  const auto a = map_adapt_means(ubm, frames, 16.0);
  EXPECT_EQ(a.means.row(1), ubm.means.row(1));
  EXPECT_NE(a.means.row(0), ubm.means.row(0));
  EXPECT_EQ(a.variances, ubm.variances);
  EXPECT_EQ(a.weights, ubm.weights);
}

TEST(Map, RelevanceLimitsAndInterpolation) {
  const auto ubm = make_gmm(Vector::Ones(1), Matrix::Constant(1, 2, 1.0), Matrix::Ones(1, 2));
  BwStats s{Vector::Constant(1, 100.0), Matrix(1, 2)};
  s.first << 300.0, -50.0;
  const auto tiny = map_adapt_means(ubm, s, 1e-12);
  EXPECT_NEAR(tiny.means(0, 0), 3.0, 1e-12);
  EXPECT_NEAR(tiny.means(0, 1), -0.5, 1e-12);
  const double r = 512.0, alpha = 100.0 / (100.0 + r);
  const auto a = map_adapt_means(ubm, s, r);
  EXPECT_NEAR(a.means(0, 0), alpha * 3.0 + (1 - alpha) * 1.0, 1e-12);
  EXPECT_NEAR(a.means(0, 1), alpha * -0.5 + (1 - alpha) * 1.0, 1e-12);
  EXPECT_THROW(map_adapt_means(ubm, s, 0.0), ConfigError);
}

// ---------------------------------------------------------------------------
// Total variability

struct TvFixture {
  SynthConfig cfg = small_config();
  SynthCorpus corpus;
  std::vector<Matrix> frames;
  DiagGmm ubm;
  std::vector<BwStats> stats;

  TvFixture() {
    cfg.frames_per_utt = 200;
    cfg.speaker_scale = 1.0;
    cfg.frame_shift_scale = 1.0;
    corpus = synth_corpus(cfg);
    frames = synth_frames(cfg, corpus);
    GmmTrainOptions opt;
    opt.num_components = 4;
    opt.num_iters = 8;
    ubm = train_gmm_em(frames, opt).gmm;
    for (const auto& f : frames) stats.push_back(accumulate_bw_stats(ubm, f));
  }
};

const TvFixture& tv_fixture() {
  static const TvFixture f;
  return f;
}

TEST(Tv, ConfigErrors) {
  const auto& fx = tv_fixture();
  TvTrainOptions opt;
  opt.ivector_dim = 4;
  const Matrix zero = Matrix::Zero(16, 4);
  EXPECT_THROW(train_tv(fx.ubm, fx.stats, opt, &zero), ConfigError);
  opt.ivector_dim = 17;  // K*D = 16
  EXPECT_THROW(train_tv(fx.ubm, fx.stats, opt), ConfigError);
  opt.ivector_dim = 0;
  EXPECT_THROW(train_tv(fx.ubm, fx.stats, opt), ConfigError);
}

TEST(Tv, ObjectiveIsMonotone) {
  const auto& fx = tv_fixture();
  for (bool md : {false, true}) {
    TvTrainOptions opt;
    opt.ivector_dim = 6;
    opt.num_iters = 8;
    opt.min_divergence = md;
    const auto res = train_tv(fx.ubm, fx.stats, opt);
    ASSERT_EQ(res.objective.size(), 9u);
    for (std::size_t i = 1; i < res.objective.size(); ++i)
      EXPECT_GE(res.objective[i], res.objective[i - 1] - 1e-8 * std::abs(res.objective[i - 1]))
          << "min_divergence=" << md << " iter " << i;
    EXPECT_NEAR(tv_objective(res.model, fx.stats), res.objective.back(), 1e-8 * std::abs(res.objective.back()));
  }
}

TEST(Tv, ZeroStatisticsGiveZeroVector) {
  const auto& fx = tv_fixture();
  TvTrainOptions opt;
  opt.ivector_dim = 5;
  opt.num_iters = 1;
  const auto model = train_tv(fx.ubm, fx.stats, opt).model;
  const BwStats empty{Vector::Zero(4), Matrix::Zero(4, 4)};
  EXPECT_EQ(extract_ivector(model, empty), Vector::Zero(5));
  const Matrix L = TvExtractor(model).precision(fx.stats[0]);
  EXPECT_TRUE(L.isApprox(L.transpose(), 1e-14));
  EXPECT_EQ(Eigen::LLT<Matrix>(L).info(), Eigen::Success);
  EXPECT_GE(Eigen::SelfAdjointEigenSolver<Matrix>(L).eigenvalues().minCoeff(), 1.0 - 1e-12);
}

TEST(Tv, ScalarPosteriorFormula) {
  const double m = 0.5, sigma = 2.0, T = 1.5;
  const auto ubm = make_gmm(Vector::Ones(1), Matrix::Constant(1, 1, m), Matrix::Constant(1, 1, sigma));
  const TvModel model{Matrix::Constant(1, 1, T), ubm};
  for (double n : {1.0, 10.0, 1000.0}) {
    const double F = n * 1.7;
    const BwStats s{Vector::Constant(1, n), Matrix::Constant(1, 1, F)};
    const double expect = T / sigma * (F - n * m) / (1.0 + n * T * T / sigma);
    EXPECT_NEAR(extract_ivector(model, s)(0), expect, 1e-13);
    EXPECT_NEAR(TvExtractor(model).posterior(s).covariance(0, 0), 1.0 / (1.0 + n * T * T / sigma), 1e-15);
  }
}

TEST(Tv, ShortUtterancesShrinkTowardPrior) {
  const auto ubm = make_gmm(Vector::Ones(1), Matrix::Zero(1, 1), Matrix::Ones(1, 1));
  const TvModel model{Matrix::Constant(1, 1, 0.8), ubm};
  const double delta = 1.2;  // per-frame offset from the UBM mean
  double prev = 0.0;
  for (double n : {1.0, 4.0, 16.0, 256.0}) {
    const double w = extract_ivector(model, BwStats{Vector::Constant(1, n), Matrix::Constant(1, 1, n * delta)})(0);
    EXPECT_GT(w, prev);
    EXPECT_LT(w, delta / 0.8);
    prev = w;
  }
  EXPECT_NEAR(prev, delta / 0.8, 0.02);
}

TEST(Tv, SameSpeakerVectorsAreCloser) {
  const auto& fx = tv_fixture();
  TvTrainOptions opt;
  opt.ivector_dim = 8;
  opt.num_iters = 6;
  const auto model = train_tv(fx.ubm, fx.stats, opt).model;
  TvExtractor ex(model);
  std::vector<Vector> w;
  for (const auto& s : fx.stats) w.push_back(ex.extract(s).normalized());
  double same = 0, diff = 0;
  int ns = 0, nd = 0;
  for (std::size_t i = 0; i < w.size(); ++i)
    for (std::size_t j = i + 1; j < w.size(); ++j) {
      const bool t = fx.corpus.truth.utt_speaker[i] == fx.corpus.truth.utt_speaker[j];
      (t ? same : diff) += w[i].dot(w[j]);
      (t ? ns : nd) += 1;
    }
  EXPECT_GT(same / ns, diff / nd + 0.2);
}

TEST(PoolStats, SumAndMean) {
  const auto& fx = tv_fixture();
  const std::vector<BwStats> one{fx.stats[0]};
  const auto p1 = pool_stats(one);
  EXPECT_EQ(p1.zeroth, fx.stats[0].zeroth);
  EXPECT_EQ(p1.first, fx.stats[0].first);
  const std::vector<BwStats> two{fx.stats[0], fx.stats[0]};
  EXPECT_TRUE(pool_stats(two).zeroth.isApprox(2.0 * fx.stats[0].zeroth));
  EXPECT_TRUE(pool_stats(two, StatsPool::kMean).first.isApprox(fx.stats[0].first));
  EXPECT_THROW(pool_stats(std::vector<BwStats>{}), DataError);
}

TEST(PoolStats, PooledSessionsEstimateSpeakerBetter) {
  // With the generating mixture as the aligner, F_c / n_c estimates the
  // component mean shifted by the utterance latent. Pooling sessions averages
  // out the channel and residual parts, so it lands closer to the speaker's
  // noiseless shift than any single session does.
  auto cfg = small_config();
  cfg.sessions_per_speaker = 6;
  cfg.frames_per_utt = 400;
  cfg.frame_shift_scale = 2.0;
  const auto c = synth_corpus(cfg);
  const auto frames = synth_frames(cfg, c);
  const auto& gt = c.truth;
  const Index K = cfg.frame_components, D = cfg.feature_dim;
  const auto gmm = make_gmm(gt.frame_weights, gt.frame_means, Matrix::Ones(K, D));
  auto error = [&](const BwStats& s, int spk) {
    const Vector latent = gt.language_offsets.col(gt.speaker_language[static_cast<std::size_t>(spk)]) +
                          gt.speaker_loadings * gt.speaker_latents.col(spk);
    const Vector shift = gt.frame_map * latent;
    double e = 0;
    for (Index k = 0; k < K; ++k)
      e += (s.first.row(k) / s.zeroth(k) - gt.frame_means.row(k) - shift.segment(k * D, D).transpose()).squaredNorm();
    return e;
  };
  double single = 0, pooled = 0;
  for (int s = 0; s < cfg.n_speakers; ++s) {
    std::vector<BwStats> sess;
    for (int j = 0; j < cfg.sessions_per_speaker; ++j)
      sess.push_back(accumulate_bw_stats(gmm, frames[static_cast<std::size_t>(s * cfg.sessions_per_speaker + j)]));
    single += error(sess[0], s);
    pooled += error(pool_stats(sess), s);
  }
  EXPECT_LT(pooled, 0.5 * single);
}

}  // namespace
