// include/ivkit/corpus.hpp

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

// Synthetic i-vector corpora built from a speaker/channel/language factor
// model, plus acoustic-like frames whose mixture means move with each
// utterance's latent vector. These stand in for telephone speech corpora that
// cannot be shipped.

#pragma once

#include "ivkit/common.hpp"

#include <cstdio>
#include <numeric>

namespace ivkit {

struct SynthConfig {
  std::uint64_t seed = 1;
  int ivec_dim = 60;
  int n_speakers = 200;
  int sessions_per_speaker = 4;
  int speaker_rank = 10;
  int channel_rank = 5;
  int n_languages = 4;
  double language_shift_scale = 0.0;
  double residual_std = 1.0;
  double speaker_scale = 1.0;
  double channel_scale = 1.0;

  // Frame synthesis.
  int feature_dim = 8;
  int frames_per_utt = 100;
  int frame_components = 8;
  double frame_shift_scale = 0.7;
  double frame_noise_std = 1.0;

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("synth: " + m); };
    if (ivec_dim <= 0) fail("ivec_dim must be positive");
    if (n_speakers <= 0) fail("n_speakers must be positive");
    if (sessions_per_speaker <= 0) fail("sessions_per_speaker must be positive");
    if (speaker_rank < 0 || channel_rank < 0) fail("ranks must be nonnegative");
    if (speaker_rank + channel_rank > ivec_dim) fail("speaker_rank + channel_rank exceeds ivec_dim");
    if (n_languages < 2) fail("n_languages must be >= 2");
    for (double v : {language_shift_scale, residual_std, speaker_scale, channel_scale,
                     frame_shift_scale, frame_noise_std})
      if (!std::isfinite(v) || v < 0.0) fail("scales must be finite and nonnegative");
    if (!(residual_std > 0.0)) fail("residual_std must be positive");
    if (feature_dim <= 0) fail("feature_dim must be positive");
    if (frames_per_utt <= 0) fail("frames_per_utt must be positive");
    if (frame_components <= 0) fail("frame_components must be positive");
    if (!(frame_noise_std > 0.0)) fail("frame_noise_std must be positive");
  }
};

// Everything the generator drew. Tests may use it; pipeline code must not.
struct GroundTruth {
  Matrix speaker_loadings;   // ivec_dim x speaker_rank
  Matrix channel_loadings;   // ivec_dim x channel_rank
  Matrix language_offsets;   // ivec_dim x n_languages
  Matrix speaker_latents;    // speaker_rank x n_speakers
  Matrix channel_latents;    // channel_rank x n_utts
  std::vector<int> utt_speaker;
  std::vector<int> utt_language;
  std::vector<int> speaker_language;

  // Frame model.
  Vector frame_weights;      // frame_components
  Matrix frame_means;        // frame_components x feature_dim
  Matrix frame_map;          // (frame_components * feature_dim) x ivec_dim

  // Within-speaker covariance U U^T + residual^2 I.
  Matrix within_covariance(double residual_std) const {
    const Index d = speaker_loadings.rows();
    return channel_loadings * channel_loadings.transpose() +
           residual_std * residual_std * Matrix::Identity(d, d);
  }
  Matrix between_covariance() const { return speaker_loadings * speaker_loadings.transpose(); }
};

struct SynthCorpus {
  std::vector<LabeledIvector> utterances;
  GroundTruth truth;
};

namespace detail {
enum SynthStream : std::uint64_t {
  kStreamLoadings = 1,
  kStreamSpeaker = 2,
  kStreamSession = 3,
  kStreamFrameModel = 4,
  kStreamFrames = 5,
  kStreamSplit = 6,
};

inline std::string padded(std::string_view prefix, int value, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%0*d", width, value);
  return std::string(prefix) + buf;
}

inline int digits(int n) { return n < 10 ? 1 : 1 + digits(n / 10); }
}  // namespace detail

inline std::string speaker_name(int s, int n_speakers) {
  return detail::padded("spk", s, std::max(4, detail::digits(n_speakers)));
}
inline std::string language_name(int l) { return detail::padded("lang", l, 2); }

// vector = offset(lang) + V z_spk + U z_chan + eps. Speaker s speaks language
// s mod n_languages.
inline SynthCorpus synth_corpus(const SynthConfig& cfg) {
  cfg.validate();
  using namespace detail;
  const Index d = cfg.ivec_dim;
  SynthCorpus out;
  GroundTruth& gt = out.truth;

  {
    Rng rng = make_rng(cfg.seed, kStreamLoadings);
    gt.speaker_loadings = randn(rng, d, cfg.speaker_rank, cfg.speaker_scale);
    gt.channel_loadings = randn(rng, d, cfg.channel_rank, cfg.channel_scale);
    gt.language_offsets.resize(d, cfg.n_languages);
    for (int l = 0; l < cfg.n_languages; ++l) {
      Vector dir = randn(rng, d);
      gt.language_offsets.col(l) = cfg.language_shift_scale * dir / dir.norm();
    }
  }

  const int n_utts = cfg.n_speakers * cfg.sessions_per_speaker;
  gt.speaker_latents.resize(cfg.speaker_rank, cfg.n_speakers);
  gt.channel_latents.resize(cfg.channel_rank, n_utts);
  gt.utt_speaker.reserve(n_utts);
  gt.utt_language.reserve(n_utts);
  out.utterances.reserve(n_utts);

  for (int s = 0; s < cfg.n_speakers; ++s) {
    Rng srng = make_rng(cfg.seed, kStreamSpeaker, s);
    gt.speaker_latents.col(s) = randn(srng, cfg.speaker_rank);
    const int lang = s % cfg.n_languages;
    gt.speaker_language.push_back(lang);
    const std::string spk = speaker_name(s, cfg.n_speakers);
    const Vector speaker_part = gt.language_offsets.col(lang) +
                                gt.speaker_loadings * gt.speaker_latents.col(s);
    for (int j = 0; j < cfg.sessions_per_speaker; ++j) {
      const int u = s * cfg.sessions_per_speaker + j;
      Rng urng = make_rng(cfg.seed, kStreamSession, u);
      gt.channel_latents.col(u) = randn(urng, cfg.channel_rank);
      Vector v = speaker_part + gt.channel_loadings * gt.channel_latents.col(u) +
                 randn(urng, d, cfg.residual_std);
      gt.utt_speaker.push_back(s);
      gt.utt_language.push_back(lang);
      out.utterances.push_back({spk + detail::padded("_s", j, 2), std::move(v), spk,
                                language_name(lang), Partition::kPrimaryTrain});
    }
  }

  // Frame model: well separated component means; the map is scaled so that an
  // utterance of typical norm shifts each coordinate by about frame_shift_scale.
  {
    Rng rng = make_rng(cfg.seed, kStreamFrameModel);
    const Index K = cfg.frame_components, D = cfg.feature_dim;
    gt.frame_weights = Vector::Constant(K, 1.0 / static_cast<double>(K));
    gt.frame_means = randn(rng, K, D, 4.0);
    const double utt_var =
        static_cast<double>(d) * (cfg.speaker_rank * cfg.speaker_scale * cfg.speaker_scale +
                                  cfg.channel_rank * cfg.channel_scale * cfg.channel_scale +
                                  cfg.residual_std * cfg.residual_std) +
        cfg.language_shift_scale * cfg.language_shift_scale;
    gt.frame_map = randn(rng, K * D, d, cfg.frame_shift_scale / std::sqrt(utt_var));
  }
  return out;
}

// One utterance's frames (frames_per_utt x feature_dim). Deterministic in
// (cfg.seed, latent, subseed).
inline Matrix synth_utterance_frames(const SynthConfig& cfg, const GroundTruth& gt,
                                     const Vector& latent, std::uint64_t subseed) {
  if (cfg.frames_per_utt <= 0) throw ConfigError("synth: frames_per_utt must be positive");
  const Index K = gt.frame_means.rows(), D = gt.frame_means.cols();
  if (latent.size() != gt.frame_map.cols()) throw DataError("synth_frames: latent dimension mismatch");
  const Vector shift = gt.frame_map * latent;
  Rng rng = make_rng(cfg.seed, detail::kStreamFrames, subseed);
  std::discrete_distribution<int> pick(gt.frame_weights.data(), gt.frame_weights.data() + K);
  std::normal_distribution<double> noise(0.0, cfg.frame_noise_std);
  Matrix frames(cfg.frames_per_utt, D);
  for (Index t = 0; t < frames.rows(); ++t) {
    const int c = pick(rng);
    for (Index j = 0; j < D; ++j) frames(t, j) = gt.frame_means(c, j) + shift(c * D + j) + noise(rng);
  }
  return frames;
}

inline std::vector<Matrix> synth_frames(const SynthConfig& cfg, const SynthCorpus& corpus) {
  if (cfg.frames_per_utt <= 0) throw ConfigError("synth: frames_per_utt must be positive");
  std::vector<Matrix> out;
  out.reserve(corpus.utterances.size());
  for (std::size_t u = 0; u < corpus.utterances.size(); ++u)
    out.push_back(synth_utterance_frames(cfg, corpus.truth, corpus.utterances[u].vector, u));
  return out;
}

// ---------------------------------------------------------------------------
// Partitioning. The last `heldout_languages` languages (in sorted order) play
// the evaluation domain: their speakers are divided between unlabeled data
// (major = first held-out language, minor = the others), labeled development
// data, and evaluation models/tests. Every other language is primary training
// data.

struct SplitSpec {
  int heldout_languages = 2;
  double unlabeled_fraction = 0.5;
  double dev_fraction = 0.2;
  double eval_fraction = 0.3;
  double three_session_fraction = 0.5;
  int multi_enroll_sessions = 3;
  std::uint64_t seed = 0;

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("split: " + m); };
    if (heldout_languages < 1) fail("heldout_languages must be >= 1");
    for (double f : {unlabeled_fraction, dev_fraction, eval_fraction, three_session_fraction})
      if (!std::isfinite(f) || f < 0.0 || f > 1.0) fail("fractions must lie in [0, 1]");
    if (std::abs(unlabeled_fraction + dev_fraction + eval_fraction - 1.0) > 1e-9)
      fail("partition fractions must sum to 1");
    if (multi_enroll_sessions < 1) fail("multi_enroll_sessions must be >= 1");
  }
};

struct TrialList {
  EnrollmentMap enrollment;
  TrialKey key;
};

struct SplitResult {
  std::vector<Partition> partition;  // parallel to the corpus
  TrialList eval;
  TrialList dev;
};

namespace detail {
// Builds 1- or multi-session models for `speakers`; remaining utterances become
// tests. Every model is scored against every test utterance.
inline TrialList build_trials(const std::vector<std::string>& speakers,
                              const std::map<std::string, std::vector<std::size_t>>& utts_of,
                              const std::vector<LabeledIvector>& corpus, double multi_fraction,
                              int multi_sessions, std::vector<Partition>* partition,
                              bool mark_partitions) {
  TrialList out;
  std::vector<std::string> test_ids;
  std::map<std::string, std::string> test_speaker;
  const auto n_multi = static_cast<std::size_t>(std::llround(multi_fraction * speakers.size()));
  std::vector<std::pair<std::string, std::string>> models;  // model_id, speaker
  for (std::size_t i = 0; i < speakers.size(); ++i) {
    const auto& utts = utts_of.at(speakers[i]);
    const std::size_t n_enroll = i < n_multi ? static_cast<std::size_t>(multi_sessions) : 1;
    if (utts.size() < n_enroll + 1)
      throw ConfigError("split: speaker " + speakers[i] + " has " + std::to_string(utts.size()) +
                        " sessions; need " + std::to_string(n_enroll + 1));
    const std::string model_id = "m_" + speakers[i];
    auto& enr = out.enrollment[model_id];
    for (std::size_t j = 0; j < utts.size(); ++j) {
      const auto& u = corpus[utts[j]];
      if (j < n_enroll) {
        enr.push_back(u.utt_id);
        if (mark_partitions) (*partition)[utts[j]] = Partition::kEnroll;
      } else {
        test_ids.push_back(u.utt_id);
        test_speaker[u.utt_id] = speakers[i];
        if (mark_partitions) (*partition)[utts[j]] = Partition::kTest;
      }
    }
    models.emplace_back(model_id, speakers[i]);
  }
  std::sort(models.begin(), models.end());
  std::sort(test_ids.begin(), test_ids.end());
  out.key.entries.reserve(models.size() * test_ids.size());
  for (const auto& [model_id, spk] : models)
    for (const auto& t : test_ids) out.key.entries.push_back({model_id, t, test_speaker[t] == spk});
  return out;
}
}  // namespace detail

inline SplitResult split_corpus(const std::vector<LabeledIvector>& corpus, const SplitSpec& spec) {
  spec.validate();
  validate_corpus(corpus);

  std::vector<std::string> languages;
  for (const auto& u : corpus) {
    if (!u.language_id) throw DataError("split: utterance " + u.utt_id + " has no language label");
    if (!u.speaker_id) throw DataError("split: utterance " + u.utt_id + " has no speaker label");
    languages.push_back(*u.language_id);
  }
  std::sort(languages.begin(), languages.end());
  languages.erase(std::unique(languages.begin(), languages.end()), languages.end());
  if (static_cast<int>(languages.size()) <= spec.heldout_languages)
    throw ConfigError("split: need more languages than heldout_languages");
  const std::vector<std::string> heldout(languages.end() - spec.heldout_languages, languages.end());

  // Per held-out language, its speakers (sorted) and their utterances.
  std::map<std::string, std::vector<std::size_t>> utts_of;
  std::map<std::string, std::string> first_language;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& spk = *corpus[i].speaker_id;
    utts_of[spk].push_back(i);
    first_language.emplace(spk, *corpus[i].language_id);
  }

  enum class Group { kUnlabeled, kDev, kEval };
  std::map<std::string, Group> group;
  std::vector<std::string> dev_speakers, eval_speakers;
  for (std::size_t h = 0; h < heldout.size(); ++h) {
    std::vector<std::string> spks;
    for (const auto& [spk, lang] : first_language)
      if (lang == heldout[h]) spks.push_back(spk);
    Rng rng = make_rng(spec.seed, detail::kStreamSplit, h);
    std::shuffle(spks.begin(), spks.end(), rng);
    const auto n = static_cast<double>(spks.size());
    const auto n_unl = static_cast<std::size_t>(std::llround(spec.unlabeled_fraction * n));
    const auto n_dev = std::min(spks.size() - n_unl,
                                static_cast<std::size_t>(std::llround(spec.dev_fraction * n)));
    for (std::size_t i = 0; i < spks.size(); ++i) {
      if (i < n_unl) {
        group[spks[i]] = Group::kUnlabeled;
      } else if (i < n_unl + n_dev) {
        group[spks[i]] = Group::kDev;
        dev_speakers.push_back(spks[i]);
      } else {
        group[spks[i]] = Group::kEval;
        eval_speakers.push_back(spks[i]);
      }
    }
  }

  SplitResult out;
  out.partition.resize(corpus.size(), Partition::kPrimaryTrain);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& lang = *corpus[i].language_id;
    const auto& spk = *corpus[i].speaker_id;
    const bool held = std::find(heldout.begin(), heldout.end(), lang) != heldout.end();
    auto g = group.find(spk);
    if (!held) {
      out.partition[i] = Partition::kPrimaryTrain;
      continue;
    }
    if (g == group.end())
      throw DataError("split: speaker " + spk + " appears in both training and evaluation data");
    switch (g->second) {
      case Group::kUnlabeled:
        out.partition[i] =
            lang == heldout.front() ? Partition::kUnlabeledMajor : Partition::kUnlabeledMinor;
        break;
      case Group::kDev: out.partition[i] = Partition::kDevLabeled; break;
      case Group::kEval: out.partition[i] = Partition::kTest; break;
    }
  }
  // A speaker must not straddle training and held-out languages.
  for (const auto& [spk, idx] : utts_of) {
    bool train = false, other = false;
    for (auto i : idx) (out.partition[i] == Partition::kPrimaryTrain ? train : other) = true;
    if (train && other)
      throw DataError("split: speaker " + spk + " appears in both training and evaluation data");
  }

  std::sort(dev_speakers.begin(), dev_speakers.end());
  std::sort(eval_speakers.begin(), eval_speakers.end());
  // Multi-session models are a seeded subset, not the lexicographically first.
  auto shuffled = [&](std::vector<std::string> v, std::uint64_t salt) {
    Rng rng = make_rng(spec.seed, detail::kStreamSplit, 1000 + salt);
    std::shuffle(v.begin(), v.end(), rng);
    return v;
  };
  out.eval = detail::build_trials(shuffled(eval_speakers, 0), utts_of, corpus,
                                  spec.three_session_fraction, spec.multi_enroll_sessions,
                                  &out.partition, true);
  out.dev = detail::build_trials(shuffled(dev_speakers, 1), utts_of, corpus,
                                 spec.three_session_fraction, spec.multi_enroll_sessions,
                                 &out.partition, false);
  return out;
}

inline void apply_partitions(std::vector<LabeledIvector>& corpus, const std::vector<Partition>& p) {
  if (p.size() != corpus.size()) throw DataError("partition assignment size mismatch");
  for (std::size_t i = 0; i < corpus.size(); ++i) corpus[i].partition = p[i];
}

}  // namespace ivkit
