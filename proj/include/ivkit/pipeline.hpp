// include/ivkit/pipeline.hpp

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

// Declarative end-to-end recipe.
//
// Stages, in dependency order:
//   synth         corpus, partitions, enrollment and trial lists
//   ubm           UBM on a primary subset, mean MAP on unlabeled frames
//   tv            total-variability training and i-vector extraction
//   precondition  NAP -> center -> length-norm -> RLDA -> length-norm
//   plda          PLDA training, enrollment, raw trial scores
//   snorm         trial-specific s-norm
//   metrics       EER / C_Primary report
//   fusion        per-variant logistic fusion on dev trials, final sum
//
// Two i-vector systems are available: "frames" (extracted from synthetic
// frames through the UBM/TV front-end) and "direct" (the synthetic vectors
// themselves). Each is trained in two back-end variants: "nodev" (primary data
// only) and "dev" (labeled dev speakers added to RLDA/PLDA training).
//
// Score files are written with 6 decimals and every later stage reads the
// scores at that precision, so stage-level subcommands reproduce the run.

#pragma once

#include "ivkit/common.hpp"
#include "ivkit/corpus.hpp"
#include "ivkit/fusion.hpp"
#include "ivkit/gmm.hpp"
#include "ivkit/io.hpp"
#include "ivkit/metrics.hpp"
#include "ivkit/plda.hpp"
#include "ivkit/precondition.hpp"
#include "ivkit/scorenorm.hpp"
#include "ivkit/tv.hpp"

#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <set>

namespace ivkit::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr std::string_view kVersion = "1.0.0";
inline const std::vector<std::string> kStageOrder = {"synth", "ubm", "tv", "precondition", "plda",
                                                     "snorm", "metrics", "fusion"};

enum class Profile { kDesk, kPaper };

inline Profile profile_from_string(std::string_view s) {
  if (s == "desk") return Profile::kDesk;
  if (s == "paper") return Profile::kPaper;
  throw ConfigError("unknown profile '" + std::string(s) + "' (expected desk or paper)");
}

// Full parameter set for a profile. Every accepted key appears here.
inline json default_config(Profile p) {
  const bool paper = p == Profile::kPaper;
  json c;
  c["profile"] = paper ? "paper" : "desk";
  c["seed"] = 1;
  c["stages"] = {"synth", "ubm", "tv", "precondition", "plda", "snorm", "metrics", "fusion"};
  c["output_dir"] = "ivkit_out";
  c["archive_format"] = "text";
  c["jobs"] = 1;
  c["synth"] = {
      {"ivec_dim", paper ? 600 : 40},
      {"n_speakers", paper ? 6600 : 600},
      {"sessions_per_speaker", paper ? 8 : 5},
      {"speaker_rank", paper ? 200 : 10},
      {"channel_rank", paper ? 100 : 6},
      {"n_languages", paper ? 22 : 6},
      {"language_shift_scale", paper ? 250.0 : 15.0},
      {"residual_std", 1.0},
      {"speaker_scale", 0.5},
      {"channel_scale", 1.0},
      {"feature_dim", paper ? 60 : 8},
      {"frames_per_utt", paper ? 1000 : 100},
      {"frame_components", paper ? 64 : 8},
      {"frame_shift_scale", 0.7},
      {"frame_noise_std", 1.0},
      {"heldout_languages", 2},
      {"unlabeled_fraction", 0.5},
      {"dev_fraction", 0.2},
      {"eval_fraction", 0.3},
      {"three_session_fraction", 0.5},
      {"multi_enroll_sessions", 3},
  };
  c["ubm"] = {
      {"num_components", paper ? 2048 : 8},
      {"num_iters", 10},
      {"variance_floor", 1e-4},
      {"relevance_factor", 512.0},
      {"train_utterances", paper ? 8000 : 1000},
      {"adapt_on_unlabeled", true},
  };
  c["tv"] = {
      {"ivector_dim", paper ? 600 : 24},
      {"num_iters", paper ? 10 : 6},
      {"min_divergence", true},
      {"init_scale", 0.5},
      {"stats_pool", "sum"},
  };
  c["precondition"] = {
      {"use_nap", true},
      {"nap_corank", -1},
      {"nap_criterion", "between"},
      {"use_rlda", true},
      {"alpha", 0.001},
      {"beta", 0.01},
      {"out_dim", paper ? 300 : 20},
      {"final_length_norm", true},
  };
  c["plda"] = {
      {"r_spk", paper ? 200 : 12},
      {"r_ch", paper ? 100 : 6},
      {"num_iters", 10},
      {"sigma_floor", 1e-6},
      {"enrollment", "ivector_average"},
  };
  c["snorm"] = {
      {"n_nearest", paper ? 10000 : 0},
      {"k_top", paper ? 5000 : 0},
      {"n_nearest_ratio", 1.0},
      {"k_top_ratio", 0.5},
      {"sigma_floor", 1e-6},
      {"selection", "cosine"},
      {"std", "population"},
  };
  c["metrics"] = {
      {"p_tar_1", 0.01}, {"p_tar_2", 0.005}, {"c_miss", 1.0}, {"c_fa", 1.0}, {"equalized", false},
  };
  c["fusion"] = {
      {"prior", 0.0075},
      {"max_iters", 100},
      {"tolerance", 1e-9},
      {"systems", {"frames", "direct"}},
      {"variants", {"nodev", "dev"}},
  };
  return c;
}

struct SnormStageConfig {
  int n_nearest = 0;  // 0: n_nearest_ratio * cohort size
  int k_top = 0;      // 0: k_top_ratio * n_nearest
  double n_nearest_ratio = 1.0;
  double k_top_ratio = 0.5;
  SnormConfig base;

  SnormConfig resolve(std::size_t cohort_size) const {
    SnormConfig c = base;
    const auto n = static_cast<double>(cohort_size);
    c.n_nearest = n_nearest > 0 ? n_nearest : std::max(1, static_cast<int>(std::llround(n_nearest_ratio * n)));
    if (c.n_nearest > static_cast<int>(cohort_size)) {
      warn("snorm: cohort has " + std::to_string(cohort_size) + " vectors, fewer than n_nearest=" +
           std::to_string(c.n_nearest) + "; using the whole cohort");
      c.n_nearest = static_cast<int>(cohort_size);
    }
    c.k_top = k_top > 0 ? std::min(k_top, c.n_nearest)
                        : std::max(1, static_cast<int>(std::llround(k_top_ratio * c.n_nearest)));
    return c;
  }
};

struct PipelineConfig {
  Profile profile = Profile::kDesk;
  std::uint64_t seed = 1;
  std::vector<std::string> stages;
  fs::path output_dir;
  bool binary_archive = false;
  int jobs = 1;

  SynthConfig synth;
  SplitSpec split;

  GmmTrainOptions ubm;
  double relevance_factor = 512.0;
  int ubm_train_utterances = 1000;
  bool adapt_on_unlabeled = true;

  TvTrainOptions tv;
  StatsPool stats_pool = StatsPool::kSum;

  ChainOptions precondition;
  PldaTrainOptions plda;
  bool stats_pool_enrollment = false;
  SnormStageConfig snorm;
  CprimaryConfig metrics;
  FusionTrainOptions fusion;
  std::vector<std::string> systems;
  std::vector<std::string> variants;

  json resolved;

  bool has_stage(std::string_view s) const { return std::find(stages.begin(), stages.end(), s) != stages.end(); }
  bool has_system(std::string_view s) const { return std::find(systems.begin(), systems.end(), s) != systems.end(); }
};

namespace detail {

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view what) {
  return fnv1a(what, fnv1a(std::to_string(seed)));
}

// Overlays `patch` onto `base`; every key in `patch` must already exist.
inline void merge_strict(json& base, const json& patch, const std::string& path) {
  if (!patch.is_object()) throw ConfigError("config" + (path.empty() ? "" : " '" + path + "'") + " must be an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    if (base[it.key()].is_object())
      merge_strict(base[it.key()], it.value(), key);
    else
      base[it.key()] = it.value();
  }
}

template <typename T>
T get(const json& j, const std::string& block, const std::string& key) {
  const json& v = block.empty() ? j.at(key) : j.at(block).at(key);
  try {
    if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
      if (!v.is_number_integer()) throw ConfigError("");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError("");
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError("");
    }
    return v.get<T>();
  } catch (const std::exception&) {
    throw ConfigError("config key '" + (block.empty() ? key : block + "." + key) + "' has the wrong type");
  }
}

inline std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace detail

// Parses `--block.key=value` / `--block.key value` pairs. Values are read as
// JSON when they parse, otherwise as strings.
inline std::vector<std::pair<std::string, json>> parse_overrides(const std::vector<std::string>& args) {
  std::vector<std::pair<std::string, json>> out;
  for (std::size_t i = 0; i < args.size(); ++i) {
    std::string a = args[i];
    if (!a.starts_with("--")) throw ConfigError("unexpected argument '" + a + "'");
    a = a.substr(2);
    std::string value;
    if (auto eq = a.find('='); eq != std::string::npos) {
      value = a.substr(eq + 1);
      a = a.substr(0, eq);
    } else {
      if (i + 1 >= args.size()) throw ConfigError("override --" + a + " has no value");
      value = args[++i];
    }
    json v = json::parse(value, nullptr, false);
    if (v.is_discarded()) v = value;
    out.emplace_back(a, std::move(v));
  }
  return out;
}

// Defaults for the profile (config file, then IVECKIT_PROFILE, then desk),
// overlaid with the file and then the overrides.
inline json resolve_config(const json& file, const std::vector<std::pair<std::string, json>>& overrides = {}) {
  std::string profile = "desk";
  if (const char* env = std::getenv("IVECKIT_PROFILE"); env && *env) profile = env;
  if (file.is_object() && file.contains("profile")) {
    if (!file["profile"].is_string()) throw ConfigError("config key 'profile' has the wrong type");
    profile = file["profile"].get<std::string>();
  }
  for (const auto& [k, v] : overrides)
    if (k == "profile") {
      if (!v.is_string()) throw ConfigError("override 'profile' must be a string");
      profile = v.get<std::string>();
    }
  json cfg = default_config(profile_from_string(profile));
  if (!file.is_null()) detail::merge_strict(cfg, file, "");
  for (const auto& [k, v] : overrides) {
    json patch = v;
    const auto parts = io::detail::split(k, '.');
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{std::string(*it), patch}};
    detail::merge_strict(cfg, patch, "");
  }
  cfg["profile"] = profile;
  return cfg;
}

inline std::string config_hash(const json& resolved) { return detail::hex64(fnv1a(resolved.dump())); }

inline PipelineConfig parse_config(const json& j);
inline void validate(const PipelineConfig& c);

inline PipelineConfig load_config(const fs::path& path, const std::vector<std::pair<std::string, json>>& overrides = {}) {
  json file;
  if (!path.empty()) {
    if (!fs::exists(path)) throw ConfigError("config file '" + path.string() + "' does not exist");
    file = json::parse(io::read_file(path), nullptr, false);
    if (file.is_discarded()) throw ConfigError("config file '" + path.string() + "' is not valid JSON");
  }
  PipelineConfig c = parse_config(resolve_config(file, overrides));
  validate(c);
  return c;
}

inline PipelineConfig parse_config(const json& j) {
  using detail::get;
  PipelineConfig c;
  c.resolved = j;
  c.profile = profile_from_string(get<std::string>(j, "", "profile"));
  const auto seed = get<std::int64_t>(j, "", "seed");
  if (seed < 0) throw ConfigError("seed must be nonnegative");
  c.seed = static_cast<std::uint64_t>(seed);
  c.stages = get<std::vector<std::string>>(j, "", "stages");
  c.output_dir = get<std::string>(j, "", "output_dir");
  const auto fmt = get<std::string>(j, "", "archive_format");
  if (fmt != "text" && fmt != "binary") throw ConfigError("archive_format must be text or binary");
  c.binary_archive = fmt == "binary";
  c.jobs = get<int>(j, "", "jobs");

  auto& s = c.synth;
  s.seed = c.seed;
  s.ivec_dim = get<int>(j, "synth", "ivec_dim");
  s.n_speakers = get<int>(j, "synth", "n_speakers");
  s.sessions_per_speaker = get<int>(j, "synth", "sessions_per_speaker");
  s.speaker_rank = get<int>(j, "synth", "speaker_rank");
  s.channel_rank = get<int>(j, "synth", "channel_rank");
  s.n_languages = get<int>(j, "synth", "n_languages");
  s.language_shift_scale = get<double>(j, "synth", "language_shift_scale");
  s.residual_std = get<double>(j, "synth", "residual_std");
  s.speaker_scale = get<double>(j, "synth", "speaker_scale");
  s.channel_scale = get<double>(j, "synth", "channel_scale");
  s.feature_dim = get<int>(j, "synth", "feature_dim");
  s.frames_per_utt = get<int>(j, "synth", "frames_per_utt");
  s.frame_components = get<int>(j, "synth", "frame_components");
  s.frame_shift_scale = get<double>(j, "synth", "frame_shift_scale");
  s.frame_noise_std = get<double>(j, "synth", "frame_noise_std");
  auto& sp = c.split;
  sp.seed = c.seed;
  sp.heldout_languages = get<int>(j, "synth", "heldout_languages");
  sp.unlabeled_fraction = get<double>(j, "synth", "unlabeled_fraction");
  sp.dev_fraction = get<double>(j, "synth", "dev_fraction");
  sp.eval_fraction = get<double>(j, "synth", "eval_fraction");
  sp.three_session_fraction = get<double>(j, "synth", "three_session_fraction");
  sp.multi_enroll_sessions = get<int>(j, "synth", "multi_enroll_sessions");

  c.ubm.num_components = get<int>(j, "ubm", "num_components");
  c.ubm.num_iters = get<int>(j, "ubm", "num_iters");
  c.ubm.variance_floor = get<double>(j, "ubm", "variance_floor");
  c.ubm.seed = detail::derive_seed(c.seed, "ubm");
  c.relevance_factor = get<double>(j, "ubm", "relevance_factor");
  c.ubm_train_utterances = get<int>(j, "ubm", "train_utterances");
  c.adapt_on_unlabeled = get<bool>(j, "ubm", "adapt_on_unlabeled");

  c.tv.ivector_dim = get<int>(j, "tv", "ivector_dim");
  c.tv.num_iters = get<int>(j, "tv", "num_iters");
  c.tv.min_divergence = get<bool>(j, "tv", "min_divergence");
  c.tv.init_scale = get<double>(j, "tv", "init_scale");
  c.tv.seed = detail::derive_seed(c.seed, "tv");
  const auto pool = get<std::string>(j, "tv", "stats_pool");
  if (pool != "sum" && pool != "mean") throw ConfigError("tv.stats_pool must be sum or mean");
  c.stats_pool = pool == "sum" ? StatsPool::kSum : StatsPool::kMean;

  auto& pc = c.precondition;
  pc.use_nap = get<bool>(j, "precondition", "use_nap");
  pc.nap_corank = get<int>(j, "precondition", "nap_corank");
  const auto crit = get<std::string>(j, "precondition", "nap_criterion");
  if (crit != "between" && crit != "within") throw ConfigError("precondition.nap_criterion must be between or within");
  pc.nap_criterion = crit == "between" ? NapCriterion::kBetweenClass : NapCriterion::kWithinClass;
  pc.use_rlda = get<bool>(j, "precondition", "use_rlda");
  pc.alpha = get<double>(j, "precondition", "alpha");
  pc.beta = get<double>(j, "precondition", "beta");
  pc.out_dim = get<int>(j, "precondition", "out_dim");
  pc.final_length_norm = get<bool>(j, "precondition", "final_length_norm");

  c.plda.r_spk = get<int>(j, "plda", "r_spk");
  c.plda.r_ch = get<int>(j, "plda", "r_ch");
  c.plda.num_iters = get<int>(j, "plda", "num_iters");
  c.plda.sigma_floor = get<double>(j, "plda", "sigma_floor");
  c.plda.seed = detail::derive_seed(c.seed, "plda");
  const auto enr = get<std::string>(j, "plda", "enrollment");
  if (enr != "ivector_average" && enr != "stats_pool")
    throw ConfigError("plda.enrollment must be ivector_average or stats_pool");
  c.stats_pool_enrollment = enr == "stats_pool";

  c.snorm.n_nearest = get<int>(j, "snorm", "n_nearest");
  c.snorm.k_top = get<int>(j, "snorm", "k_top");
  c.snorm.n_nearest_ratio = get<double>(j, "snorm", "n_nearest_ratio");
  c.snorm.k_top_ratio = get<double>(j, "snorm", "k_top_ratio");
  c.snorm.base.sigma_floor = get<double>(j, "snorm", "sigma_floor");
  const auto sel = get<std::string>(j, "snorm", "selection");
  if (sel != "cosine" && sel != "plda") throw ConfigError("snorm.selection must be cosine or plda");
  c.snorm.base.selection = sel == "cosine" ? CohortSelection::kCosine : CohortSelection::kPldaScore;
  const auto sd = get<std::string>(j, "snorm", "std");
  if (sd != "population" && sd != "sample") throw ConfigError("snorm.std must be population or sample");
  c.snorm.base.std_kind = sd == "population" ? StdKind::kPopulation : StdKind::kSample;

  c.metrics.p_tar_1 = get<double>(j, "metrics", "p_tar_1");
  c.metrics.p_tar_2 = get<double>(j, "metrics", "p_tar_2");
  c.metrics.c_miss = get<double>(j, "metrics", "c_miss");
  c.metrics.c_fa = get<double>(j, "metrics", "c_fa");
  c.metrics.equalized = get<bool>(j, "metrics", "equalized");

  c.fusion.prior = get<double>(j, "fusion", "prior");
  c.fusion.max_iters = get<int>(j, "fusion", "max_iters");
  c.fusion.tolerance = get<double>(j, "fusion", "tolerance");
  c.systems = get<std::vector<std::string>>(j, "fusion", "systems");
  c.variants = get<std::vector<std::string>>(j, "fusion", "variants");
  return c;
}

namespace detail {

// Speaker counts implied by the synthetic split, computed without generating
// the corpus. Speaker s speaks language s % n_languages.
struct SplitCounts {
  int train_speakers = 0;
  int dev_speakers = 0;
  int eval_speakers = 0;
  int primary_utterances = 0;
  int unlabeled_speakers = 0;
};

inline SplitCounts split_counts(const SynthConfig& s, const SplitSpec& sp) {
  SplitCounts out;
  const int L = s.n_languages, H = sp.heldout_languages;
  for (int l = 0; l < L; ++l) {
    int n = 0;
    for (int spk = l; spk < s.n_speakers; spk += L) ++n;
    if (l < L - H) {
      out.train_speakers += n;
      continue;
    }
    const auto nu = static_cast<int>(std::llround(sp.unlabeled_fraction * n));
    const int nd = std::min(n - nu, static_cast<int>(std::llround(sp.dev_fraction * n)));
    out.unlabeled_speakers += nu;
    out.dev_speakers += nd;
    out.eval_speakers += n - nu - nd;
  }
  out.primary_utterances = out.train_speakers * s.sessions_per_speaker;
  return out;
}

}  // namespace detail

// Checks every stage precondition that can be decided from the configuration
// alone, so that invalid runs fail before any computation.
inline void validate(const PipelineConfig& c) {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (c.jobs < 1) fail("jobs must be >= 1");
  if (c.output_dir.empty()) fail("output_dir must not be empty");

  std::set<std::string> seen;
  for (const auto& st : c.stages) {
    if (std::find(kStageOrder.begin(), kStageOrder.end(), st) == kStageOrder.end())
      fail("unknown stage '" + st + "'");
    if (!seen.insert(st).second) fail("stage '" + st + "' listed twice");
  }
  if (c.stages.empty()) fail("no stages declared");
  auto need = [&](const std::string& st, const std::string& dep) {
    if (c.has_stage(st) && !c.has_stage(dep)) fail("stage '" + st + "' requires stage '" + dep + "'");
  };
  need("ubm", "synth");
  need("tv", "ubm");
  need("precondition", "synth");
  need("plda", "precondition");
  need("snorm", "plda");
  need("metrics", "plda");
  need("fusion", "plda");

  if (c.systems.empty()) fail("fusion.systems must not be empty");
  for (const auto& s : c.systems)
    if (s != "frames" && s != "direct") fail("unknown system '" + s + "' (expected frames or direct)");
  if (std::set<std::string>(c.systems.begin(), c.systems.end()).size() != c.systems.size())
    fail("fusion.systems has duplicates");
  if (c.variants.empty()) fail("fusion.variants must not be empty");
  for (const auto& v : c.variants)
    if (v != "nodev" && v != "dev") fail("unknown variant '" + v + "' (expected nodev or dev)");
  if (std::set<std::string>(c.variants.begin(), c.variants.end()).size() != c.variants.size())
    fail("fusion.variants has duplicates");
  const bool frames = c.has_system("frames") && c.has_stage("precondition");
  if (frames && !c.has_stage("tv")) fail("system 'frames' requires stages 'ubm' and 'tv'");

  // corpus-synth
  c.synth.validate();
  c.split.validate();
  if (c.synth.n_languages <= c.split.heldout_languages) fail("synth: n_languages must exceed heldout_languages");
  const int min_sessions = 1 + (c.split.three_session_fraction > 0.0 ? c.split.multi_enroll_sessions : 1);
  if (c.synth.sessions_per_speaker < std::max(2, min_sessions))
    fail("synth: sessions_per_speaker must be >= " + std::to_string(std::max(2, min_sessions)) +
         " for the enrollment/test split");
  const auto counts = detail::split_counts(c.synth, c.split);

  // front-end
  if (c.has_stage("ubm")) {
    if (c.ubm.num_components < 1) fail("ubm: num_components must be >= 1");
    if (c.ubm.num_iters < 1) fail("ubm: num_iters must be >= 1");
    if (!(c.ubm.variance_floor > 0.0) || !std::isfinite(c.ubm.variance_floor)) fail("ubm: variance_floor must be > 0");
    if (!(c.relevance_factor > 0.0) || !std::isfinite(c.relevance_factor)) fail("ubm: relevance_factor must be > 0");
    if (c.ubm_train_utterances < 1) fail("ubm: train_utterances must be >= 1");
    const long long n_utts = std::min(c.ubm_train_utterances, counts.primary_utterances);
    if (n_utts * c.synth.frames_per_utt < 10LL * c.ubm.num_components)
      fail("ubm: need at least 10 frames per component for training");
    if (c.adapt_on_unlabeled && counts.unlabeled_speakers < 1) fail("ubm: no unlabeled speakers to adapt on");
  }
  if (c.has_stage("tv")) {
    if (c.tv.ivector_dim < 1) fail("tv: ivector_dim must be >= 1");
    if (static_cast<long long>(c.tv.ivector_dim) >
        static_cast<long long>(c.ubm.num_components) * c.synth.feature_dim)
      fail("tv: ivector_dim must not exceed num_components * feature_dim");
    if (c.tv.num_iters < 1) fail("tv: num_iters must be >= 1");
    if (!(c.tv.init_scale > 0.0) || !std::isfinite(c.tv.init_scale)) fail("tv: init_scale must be > 0");
  }

  // back-end, per system input dimension
  if (c.has_stage("precondition")) {
    const auto& p = c.precondition;
    if (!(p.alpha >= 0.0) || !(p.beta >= 0.0) || !std::isfinite(p.alpha) || !std::isfinite(p.beta))
      fail("precondition: alpha and beta must be finite and >= 0");
    if (p.out_dim < 1) fail("precondition: out_dim must be >= 1");
    if (p.nap_corank < -1 || p.nap_corank == 0) fail("precondition: nap_corank must be -1 (default) or >= 1");
    for (const auto& sys : c.systems) {
      const int d = sys == "frames" ? c.tv.ivector_dim : c.synth.ivec_dim;
      if (p.use_rlda && p.out_dim > d)
        fail("precondition: out_dim " + std::to_string(p.out_dim) + " exceeds the " + sys + " i-vector dimension");
      if (p.use_nap && p.nap_corank >= d) fail("precondition: nap_corank must be below the i-vector dimension");
    }
    if (p.use_nap && c.synth.n_languages < 2) fail("precondition: NAP needs at least 2 language classes");
    if (p.use_rlda && counts.train_speakers < p.out_dim + 1)
      fail("precondition: RLDA needs at least out_dim + 1 training speakers");
    if (p.use_rlda && !(p.alpha > 0.0))
      warn("precondition: alpha = 0 leaves RLDA unregularized; a singular within-class scatter will fail");
  }
  if (c.has_stage("plda")) {
    if (c.plda.r_spk < 0 || c.plda.r_ch < 0) fail("plda: ranks must be >= 0");
    if (c.plda.num_iters < 1) fail("plda: num_iters must be >= 1");
    if (!(c.plda.sigma_floor > 0.0)) fail("plda: sigma_floor must be > 0");
    for (const auto& sys : c.systems) {
      const int d = c.precondition.use_rlda ? c.precondition.out_dim
                                            : (sys == "frames" ? c.tv.ivector_dim : c.synth.ivec_dim);
      if (c.plda.r_spk + c.plda.r_ch > d) fail("plda: r_spk + r_ch exceeds the back-end dimension");
    }
    if (counts.train_speakers < 2) fail("plda: need at least 2 training speakers");
    if (counts.eval_speakers < 2) fail("split: need at least 2 evaluation speakers");
    if (c.stats_pool_enrollment && !c.has_stage("tv")) fail("plda: stats_pool enrollment needs the tv stage");
  }
  if (c.has_stage("snorm")) {
    const auto& s = c.snorm;
    if (s.n_nearest < 0 || s.k_top < 0) fail("snorm: n_nearest and k_top must be >= 0 (0 selects the ratio)");
    if (s.n_nearest > 0 && s.k_top > s.n_nearest) fail("snorm: k_top must not exceed n_nearest");
    if (!(s.n_nearest_ratio > 0.0 && s.n_nearest_ratio <= 1.0)) fail("snorm: n_nearest_ratio must lie in (0, 1]");
    if (!(s.k_top_ratio > 0.0 && s.k_top_ratio <= 1.0)) fail("snorm: k_top_ratio must lie in (0, 1]");
    if (!(s.base.sigma_floor > 0.0)) fail("snorm: sigma_floor must be > 0");
  }
  if (c.has_stage("metrics")) c.metrics.validate();
  if (c.has_stage("fusion")) {
    if (!(c.fusion.prior > 0.0 && c.fusion.prior < 1.0)) fail("fusion: prior must lie in (0, 1)");
    if (c.fusion.max_iters < 1) fail("fusion: max_iters must be >= 1");
    if (!(c.fusion.tolerance > 0.0)) fail("fusion: tolerance must be > 0");
    if (counts.dev_speakers < 2) fail("fusion: need at least 2 dev speakers for fusion training trials");
  }
}

// ---------------------------------------------------------------------------
// Scoring stage, shared by `run` and `score`.

struct ScoringModel {
  PrecondChain chain;
  PldaModel plda;
  std::optional<Matrix> cohort;  // preconditioned cohort vectors (rows)
  std::vector<std::string> cohort_ids;
  SnormConfig snorm;
};

struct ScoringOutput {
  ScoreSet raw;
  std::optional<ScoreSet> normalized;
  std::vector<SpeakerModel> models;
  std::vector<ModelNormStats> norms;
  SnormDiagnostics diagnostics;
};

// Round-trips scores through the score-file precision.
inline ScoreSet quantize(ScoreSet s) {
  for (auto& e : s.entries) e.score = std::stod(io::detail::format_score(e.score));
  return s;
}

inline ScoringOutput score_stage(const ScoringModel& sm, const std::map<std::string, Vector>& raw_vectors,
                                 const EnrollmentMap& enrollment, const std::vector<TrialId>& trials,
                                 bool normalize, int jobs) {
  auto lookup = [&](const std::string& id, std::vector<std::string>& missing) -> const Vector* {
    auto it = raw_vectors.find(id);
    if (it == raw_vectors.end()) {
      missing.push_back(id);
      return nullptr;
    }
    return &it->second;
  };
  std::vector<std::string> missing;
  ScoringOutput out;
  std::map<std::string, SpeakerModel> models;
  for (const auto& [model_id, utts] : enrollment) {
    Matrix rows(static_cast<Index>(utts.size()), sm.chain.output_dim());
    bool ok = true;
    for (std::size_t i = 0; i < utts.size(); ++i) {
      const Vector* v = lookup(utts[i], missing);
      if (!v) {
        ok = false;
        continue;
      }
      rows.row(static_cast<Index>(i)) = sm.chain.apply(*v).transpose();
    }
    if (ok) models.emplace(model_id, enroll(model_id, rows, sm.chain.normalize_output));
  }
  std::map<std::string, Vector> tests;
  for (const auto& t : trials)
    if (!tests.contains(t.test_id))
      if (const Vector* v = lookup(t.test_id, missing)) tests.emplace(t.test_id, sm.chain.apply(*v));
  if (!missing.empty()) {
    std::sort(missing.begin(), missing.end());
    missing.erase(std::unique(missing.begin(), missing.end()), missing.end());
    std::string msg = "score: " + std::to_string(missing.size()) + " utterance(s) not in the i-vector archive:";
    for (std::size_t i = 0; i < missing.size() && i < 20; ++i) msg += " " + missing[i];
    throw DataError(msg);
  }

  const PldaScorer scorer(sm.plda);
  out.raw = score_trials(scorer, models, tests, trials, jobs);
  for (const auto& [id, m] : models) out.models.push_back(m);
  if (!normalize) return out;
  if (!sm.cohort) throw DataError("score: s-norm requested but the model has no cohort (produced by the snorm stage)");

  sm.snorm.validate();
  const Cohort cohort(scorer, *sm.cohort, sm.cohort_ids);
  std::vector<const SpeakerModel*> mlist;
  for (const auto& m : out.models) mlist.push_back(&m);
  out.norms.resize(mlist.size());
  parallel_for(mlist.size(), jobs,
               [&](std::size_t i) { out.norms[i] = prepare_model_norm(scorer, *mlist[i], cohort, sm.snorm); });
  std::map<std::string, std::size_t> model_pos;
  for (std::size_t i = 0; i < mlist.size(); ++i) model_pos.emplace(mlist[i]->model_id, i);

  std::vector<const std::string*> test_ids;
  std::map<std::string, std::size_t> test_pos;
  for (const auto& [id, v] : tests) {
    test_pos.emplace(id, test_ids.size());
    test_ids.push_back(&id);
  }
  std::vector<std::vector<double>> tscores(test_ids.size());
  parallel_for(test_ids.size(), jobs,
               [&](std::size_t i) { tscores[i] = test_cohort_scores(scorer, cohort, tests.at(*test_ids[i])); });

  // The t-part depends only on the model's selected cohort subset and the
  // test, so it is computed once per distinct (subset, test) pair.
  std::map<std::vector<std::size_t>, std::size_t> subset_id;
  std::vector<std::size_t> model_subset(out.norms.size());
  std::vector<const std::vector<std::size_t>*> subsets;
  for (std::size_t i = 0; i < out.norms.size(); ++i) {
    auto [it, added] = subset_id.emplace(out.norms[i].selected, subsets.size());
    if (added) subsets.push_back(&it->first);
    model_subset[i] = it->second;
  }
  std::vector<std::vector<TestNormStats>> tstats(subsets.size(), std::vector<TestNormStats>(test_ids.size()));
  std::vector<std::vector<char>> needed(subsets.size(), std::vector<char>(test_ids.size(), 0));
  for (const auto& e : out.raw.entries) needed[model_subset[model_pos.at(e.model_id)]][test_pos.at(e.test_id)] = 1;
  parallel_for(test_ids.size(), jobs, [&](std::size_t j) {
    for (std::size_t g = 0; g < subsets.size(); ++g)
      if (needed[g][j]) tstats[g][j] = test_norm_stats(*subsets[g], tscores[j], cohort, sm.snorm);
  });

  ScoreSet norm = out.raw;
  for (auto& e : norm.entries) {
    const std::size_t m = model_pos.at(e.model_id), j = test_pos.at(e.test_id);
    const auto& t = tstats[model_subset[m]][j];
    out.diagnostics.floored_t += t.sigma_floored ? 1 : 0;
    e.score = snorm_combine(e.score, out.norms[m], t);
  }
  std::size_t floored_z = 0;
  for (const auto& n : out.norms) floored_z += n.sigma_floored ? 1 : 0;
  out.diagnostics.floored_z = floored_z;
  if (floored_z || out.diagnostics.floored_t)
    warn("snorm: " + std::to_string(floored_z) + " model and " + std::to_string(out.diagnostics.floored_t) +
         " trial standard deviations were floored");
  out.normalized = std::move(norm);
  return out;
}

// ---------------------------------------------------------------------------
// Reports

struct ReportRow {
  std::string system;
  CprimaryReport report;
};

inline std::string format_report(const std::vector<ReportRow>& rows, const CprimaryConfig& cfg) {
  auto num = [](const char* fmt, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, fmt, v);
    return std::string(buf);
  };
  std::string out = "system\tEER[%]\tmin_C_primary\tact_C_primary";
  for (double p : {cfg.p_tar_1, cfg.p_tar_2})
    out += "\tmin_C_norm@" + num("%g", p) + "\tact_C_norm@" + num("%g", p);
  out += "\tn_target\tn_nontarget\n";
  for (const auto& r : rows) {
    out += r.system + "\t" + num("%.4f", 100.0 * r.report.eer) + "\t" + num("%.6f", r.report.min_c_primary) + "\t" +
           num("%.6f", r.report.act_c_primary);
    for (const auto& p : r.report.points) out += "\t" + num("%.6f", p.min_c_norm) + "\t" + num("%.6f", p.act_c_norm);
    out += "\t" + std::to_string(r.report.n_target) + "\t" + std::to_string(r.report.n_nontarget) + "\n";
  }
  return out;
}

inline std::string format_det(const std::vector<DetPoint>& pts) {
  std::string out = "threshold\tp_fa\tp_miss\n";
  char buf[128];
  for (const auto& p : pts) {
    std::snprintf(buf, sizeof buf, "%.6f\t%.10f\t%.10f\n", p.threshold, p.p_fa, p.p_miss);
    out += buf;
  }
  return out;
}

inline void write_text(const fs::path& path, const std::string& text) {
  auto out = io::detail::open_out(path);
  out << text;
}

// ---------------------------------------------------------------------------
// Containers written by the run

inline io::Section cohort_section(const ScoringModel& sm) {
  io::Section s{"cohort", 1, {}};
  s.set("ids", io::join_lines(sm.cohort_ids)).set("vectors", *sm.cohort);
  return s;
}

inline io::Section snorm_section(const SnormConfig& c) {
  io::Section s{"snorm", 1, {}};
  s.set("n_nearest", std::int64_t{c.n_nearest})
      .set("k_top", std::int64_t{c.k_top})
      .set("sigma_floor", c.sigma_floor)
      .set("selection", std::string(c.selection == CohortSelection::kCosine ? "cosine" : "plda"))
      .set("std", std::string(c.std_kind == StdKind::kPopulation ? "population" : "sample"));
  return s;
}

inline SnormConfig snorm_from_section(const io::Section& s) {
  SnormConfig c;
  c.n_nearest = static_cast<int>(s.get<std::int64_t>("n_nearest"));
  c.k_top = static_cast<int>(s.get<std::int64_t>("k_top"));
  c.sigma_floor = s.get<double>("sigma_floor");
  c.selection = s.get<std::string>("selection") == "cosine" ? CohortSelection::kCosine : CohortSelection::kPldaScore;
  c.std_kind = s.get<std::string>("std") == "population" ? StdKind::kPopulation : StdKind::kSample;
  c.validate();
  return c;
}

// Loads what `score` needs; a missing section names the stage producing it.
inline ScoringModel scoring_model_from_container(const io::Container& c, bool need_snorm) {
  auto section = [&](std::string_view name, std::string_view stage) -> const io::Section& {
    if (!c.has(name))
      throw DataError("model container has no '" + std::string(name) + "' section; it is produced by the " +
                      std::string(stage) + " stage of 'ivkit run'");
    return c.section(name);
  };
  ScoringModel sm;
  sm.chain = io::chain_from_section(section("precond_chain", "precondition"));
  sm.plda = io::plda_from_section(section("plda", "plda"));
  if (need_snorm) {
    const auto& co = section("cohort", "snorm");
    sm.cohort = co.get<Matrix>("vectors");
    const auto& ids = co.get<std::string>("ids");
    for (auto v : io::detail::split(ids, '\n')) sm.cohort_ids.emplace_back(v);
    sm.snorm = snorm_from_section(section("snorm", "snorm"));
  }
  return sm;
}

inline std::map<std::string, Vector> vector_map(const std::vector<LabeledIvector>& vs) {
  std::map<std::string, Vector> m;
  for (const auto& v : vs) m.emplace(v.utt_id, v.vector);
  return m;
}

// ---------------------------------------------------------------------------
// The run

struct StageTiming {
  std::string name;
  double seconds = 0.0;
};

struct RunResult {
  fs::path output_dir;
  json manifest;
  std::vector<ReportRow> report;
  std::map<std::string, ScoreSet> eval_scores;  // by system name, as written
};

class Runner {
 public:
  explicit Runner(const PipelineConfig& cfg) : cfg_(cfg), out_(cfg.output_dir) {}

  RunResult run() {
    WarningCapture capture;
    const auto t0 = std::chrono::steady_clock::now();
    std::string current;
    json manifest = base_manifest();
    try {
      for (const auto& stage : kStageOrder) {
        if (!cfg_.has_stage(stage)) continue;
        current = stage;
        const auto ts = std::chrono::steady_clock::now();
        run_stage(stage);
        timings_.push_back({stage, seconds_since(ts)});
      }
      current.clear();
      if (cfg_.has_stage("metrics")) write_text(out_ / "report.txt", format_report(report_, cfg_.metrics));
    } catch (const std::exception& e) {
      finish_manifest(manifest, capture, seconds_since(t0), current, e.what());
      throw;
    }
    finish_manifest(manifest, capture, seconds_since(t0), "", "");
    RunResult r;
    r.output_dir = out_;
    r.manifest = std::move(manifest);
    r.report = report_;
    r.eval_scores = written_eval_;
    return r;
  }

 private:
  struct Backend {
    std::string system;
    std::string variant;
    ScoringModel model;
    ScoringOutput eval;
    ScoringOutput dev;
    std::string name() const { return system + "_" + variant; }
  };

  static double seconds_since(std::chrono::steady_clock::time_point t) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
  }

  json base_manifest() const {
    json m;
    m["config_hash"] = config_hash(cfg_.resolved);
    m["config"] = cfg_.resolved;
    m["versions"] = {{"ivkit", std::string(kVersion)},
                     {"model_container", io::kContainerVersion},
                     {"ivector_archive", cfg_.binary_archive ? "IVEC1" : "text"},
                     {"score_file", "tsv-6"}};
    return m;
  }

  void finish_manifest(json& m, const WarningCapture& capture, double total, const std::string& failed,
                       const std::string& error) const {
    json st = json::array();
    for (const auto& t : timings_) st.push_back({{"stage", t.name}, {"seconds", t.seconds}});
    m["stage_timings"] = st;
    m["total_seconds"] = total;
    m["warnings"] = capture.messages();
    m["normalized"] = cfg_.has_stage("snorm");
    m["failed_stage"] = failed.empty() ? json(nullptr) : json(failed);
    if (!error.empty()) m["error"] = error;
    m["status"] = failed.empty() && error.empty() ? "ok" : "failed";
    m["artifacts"] = artifacts_;
    write_text(out_ / "manifest.json", m.dump(2) + "\n");
  }

  void run_stage(const std::string& s) {
    if (s == "synth") return stage_synth();
    if (s == "ubm") return stage_ubm();
    if (s == "tv") return stage_tv();
    if (s == "precondition") return stage_precondition();
    if (s == "plda") return stage_plda();
    if (s == "snorm") return stage_snorm();
    if (s == "metrics") return stage_metrics();
    if (s == "fusion") return stage_fusion();
  }

  fs::path archive_path(const std::string& system) const {
    return out_ / "ivectors" / (system + (cfg_.binary_archive ? ".ivec" : ".txt"));
  }

  void record(const fs::path& p) { artifacts_.push_back(fs::relative(p, out_).generic_string()); }

  void stage_synth() {
    corpus_ = synth_corpus(cfg_.synth);
    split_ = split_corpus(corpus_.utterances, cfg_.split);
    apply_partitions(corpus_.utterances, split_.partition);
    systems_["direct"] = corpus_.utterances;
    io::save_ivectors(archive_path("direct"), corpus_.utterances, cfg_.binary_archive);
    record(archive_path("direct"));
    for (const auto& [name, tl] : {std::pair{"eval", &split_.eval}, std::pair{"dev", &split_.dev}}) {
      const fs::path base = out_ / "lists" / name;
      io::save_enrollment(base.string() + ".enroll", tl->enrollment);
      io::save_trials(base.string() + ".trials", tl->key.trials());
      io::save_key(base.string() + ".key", tl->key);
      for (const char* ext : {".enroll", ".trials", ".key"}) record(base.string() + ext);
    }
  }

  std::vector<std::size_t> indices_in(std::initializer_list<Partition> parts) const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < corpus_.utterances.size(); ++i)
      if (std::find(parts.begin(), parts.end(), corpus_.utterances[i].partition) != parts.end()) idx.push_back(i);
    return idx;
  }

  void stage_ubm() {
    frames_ = synth_frames(cfg_.synth, corpus_);
    auto primary = indices_in({Partition::kPrimaryTrain});
    if (static_cast<int>(primary.size()) > cfg_.ubm_train_utterances) {
      Rng rng = make_rng(cfg_.seed, fnv1a("ubm_subset"));
      std::shuffle(primary.begin(), primary.end(), rng);
      primary.resize(static_cast<std::size_t>(cfg_.ubm_train_utterances));
      std::sort(primary.begin(), primary.end());
    }
    std::vector<FrameSet> train;
    for (auto i : primary) train.push_back(frames_[i]);
    ubm_ = train_gmm_em(train, cfg_.ubm).gmm;
    if (cfg_.adapt_on_unlabeled) {
      std::vector<FrameSet> unl;
      for (auto i : indices_in({Partition::kUnlabeledMajor, Partition::kUnlabeledMinor})) unl.push_back(frames_[i]);
      ubm_ = map_adapt_means(ubm_, unl, cfg_.relevance_factor);
    }
  }

  void stage_tv() {
    std::vector<BwStats> stats(frames_.size());
    parallel_for(frames_.size(), cfg_.jobs, [&](std::size_t i) { stats[i] = accumulate_bw_stats(ubm_, frames_[i]); });
    std::vector<BwStats> train;
    for (auto i : indices_in({Partition::kPrimaryTrain, Partition::kUnlabeledMajor, Partition::kUnlabeledMinor}))
      train.push_back(stats[i]);
    tv_ = train_tv(ubm_, train, cfg_.tv).model;
    const TvExtractor ex(*tv_);
    auto ivs = corpus_.utterances;
    parallel_for(ivs.size(), cfg_.jobs, [&](std::size_t i) { ivs[i].vector = ex.extract(stats[i]); });
    if (cfg_.stats_pool_enrollment) add_pooled_enrollment(ex, stats, ivs);
    systems_["frames"] = std::move(ivs);
    io::save_ivectors(archive_path("frames"), systems_["frames"], cfg_.binary_archive);
    record(archive_path("frames"));
    io::Container c;
    c.put(io::to_section(ubm_, "ubm"));
    c.put(io::to_section(*tv_));
    io::save_container(out_ / "models" / "frontend.sutk", c);
    record(out_ / "models" / "frontend.sutk");
  }

  // Pooled-statistics enrollment: one i-vector per model, stored in the
  // frames archive under "pooled_<model_id>" with a matching enrollment list.
  void add_pooled_enrollment(const TvExtractor& ex, const std::vector<BwStats>& stats,
                             std::vector<LabeledIvector>& ivs) {
    std::map<std::string, std::size_t> pos;
    for (std::size_t i = 0; i < corpus_.utterances.size(); ++i) pos.emplace(corpus_.utterances[i].utt_id, i);
    for (auto [name, tl] : {std::pair{"eval", &split_.eval}, std::pair{"dev", &split_.dev}}) {
      EnrollmentMap pooled;
      for (const auto& [model, utts] : tl->enrollment) {
        std::vector<BwStats> s;
        for (const auto& u : utts) s.push_back(stats[pos.at(u)]);
        const auto& first = corpus_.utterances[pos.at(utts.front())];
        LabeledIvector v{"pooled_" + model, ex.extract(pool_stats(s, cfg_.stats_pool)), first.speaker_id,
                         first.language_id, first.partition};
        ivs.push_back(std::move(v));
        pooled[model] = {"pooled_" + model};
      }
      const fs::path p = out_ / "lists" / (std::string(name) + ".pooled.enroll");
      io::save_enrollment(p, pooled);
      record(p);
      pooled_[name] = std::move(pooled);
    }
  }

  const EnrollmentMap& enrollment_for(const std::string& system, const std::string& which) const {
    if (system == "frames" && cfg_.stats_pool_enrollment) return pooled_.at(which);
    return which == "eval" ? split_.eval.enrollment : split_.dev.enrollment;
  }

  void stage_precondition() {
    for (const auto& system : cfg_.systems) {
      const auto& ivs = systems_.at(system);
      const Index d = ivs.front().vector.size();
      std::vector<std::string> nap_classes, speakers_nodev, speakers_dev;
      std::vector<Index> nap_rows, primary_rows, dev_rows;
      for (std::size_t i = 0; i < corpus_.utterances.size(); ++i) {
        const auto& u = ivs[i];
        switch (u.partition) {
          case Partition::kPrimaryTrain:
            nap_rows.push_back(static_cast<Index>(i));
            nap_classes.push_back(*u.language_id);
            primary_rows.push_back(static_cast<Index>(i));
            break;
          case Partition::kUnlabeledMajor:
          case Partition::kUnlabeledMinor:
            nap_rows.push_back(static_cast<Index>(i));
            nap_classes.emplace_back(to_string(u.partition));
            break;
          case Partition::kDevLabeled: dev_rows.push_back(static_cast<Index>(i)); break;
          default: break;
        }
      }
      Matrix all(static_cast<Index>(corpus_.utterances.size()), d);
      for (std::size_t i = 0; i < corpus_.utterances.size(); ++i) all.row(static_cast<Index>(i)) = ivs[i].vector.transpose();
      const Matrix nap_data = select_rows(all, nap_rows);
      const Matrix primary = select_rows(all, primary_rows);
      for (const auto& variant : cfg_.variants) {
        std::vector<Index> rows = primary_rows;
        if (variant == "dev") rows.insert(rows.end(), dev_rows.begin(), dev_rows.end());
        std::vector<std::string> spk;
        for (auto r : rows) spk.push_back(*ivs[static_cast<std::size_t>(r)].speaker_id);
        Backend b;
        b.system = system;
        b.variant = variant;
        b.model.chain = fit_chain(nap_data, nap_classes, select_rows(all, rows), spk, cfg_.precondition, &primary);
        train_rows_[b.name()] = rows;
        backends_.push_back(std::move(b));
      }
    }
  }

  void stage_plda() {
    for (auto& b : backends_) {
      const auto& ivs = systems_.at(b.system);
      const auto& rows = train_rows_.at(b.name());
      Matrix X(static_cast<Index>(rows.size()), b.model.chain.output_dim());
      std::vector<std::string> spk;
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& u = ivs[static_cast<std::size_t>(rows[i])];
        X.row(static_cast<Index>(i)) = b.model.chain.apply(u.vector).transpose();
        spk.push_back(*u.speaker_id);
      }
      b.model.plda = train_plda(X, spk, cfg_.plda).model;
      const auto vm = vector_map(ivs);
      b.eval = score_stage(b.model, vm, enrollment_for(b.system, "eval"), split_.eval.key.trials(), false, cfg_.jobs);
      b.dev = score_stage(b.model, vm, enrollment_for(b.system, "dev"), split_.dev.key.trials(), false, cfg_.jobs);
      b.eval.raw = write_scores("eval", b.name() + ".raw", b.eval.raw);
      b.dev.raw = write_scores("dev", b.name() + ".raw", b.dev.raw);
      save_backend(b);
    }
  }

  void stage_snorm() {
    for (auto& b : backends_) {
      const auto& ivs = systems_.at(b.system);
      std::vector<Index> rows;
      for (std::size_t i = 0; i < ivs.size(); ++i)
        if (ivs[i].partition == Partition::kPrimaryTrain || ivs[i].partition == Partition::kUnlabeledMajor ||
            ivs[i].partition == Partition::kUnlabeledMinor)
          rows.push_back(static_cast<Index>(i));
      Matrix cohort(static_cast<Index>(rows.size()), b.model.chain.output_dim());
      b.model.cohort_ids.clear();
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& u = ivs[static_cast<std::size_t>(rows[i])];
        cohort.row(static_cast<Index>(i)) = b.model.chain.apply(u.vector).transpose();
        b.model.cohort_ids.push_back(u.utt_id);
      }
      b.model.cohort = std::move(cohort);
      b.model.snorm = cfg_.snorm.resolve(rows.size());
      const auto vm = vector_map(ivs);
      b.eval = score_stage(b.model, vm, enrollment_for(b.system, "eval"), split_.eval.key.trials(), true, cfg_.jobs);
      b.dev = score_stage(b.model, vm, enrollment_for(b.system, "dev"), split_.dev.key.trials(), true, cfg_.jobs);
      b.eval.raw = quantize(b.eval.raw);
      b.dev.raw = quantize(b.dev.raw);
      b.eval.normalized = write_scores("eval", b.name() + ".snorm", *b.eval.normalized);
      b.dev.normalized = write_scores("dev", b.name() + ".snorm", *b.dev.normalized);
      save_backend(b);
    }
  }

  ScoreSet write_scores(const std::string& which, const std::string& name, const ScoreSet& s) {
    const fs::path p = out_ / "scores" / which / (name + ".scores");
    io::save_scores(p, s);
    record(p);
    ScoreSet q = quantize(s);
    if (which == "eval") written_eval_[name] = q;
    return q;
  }

  void save_backend(const Backend& b) {
    io::Container c;
    c.put(io::to_section(b.model.chain));
    c.put(io::to_section(b.model.plda));
    c.put(io::to_section(b.eval.models, b.eval.norms.empty() ? nullptr : &b.eval.norms));
    if (b.model.cohort) {
      c.put(cohort_section(b.model));
      c.put(snorm_section(b.model.snorm));
    }
    const fs::path p = out_ / "models" / (b.name() + ".sutk");
    io::save_container(p, c);
    if (std::find(artifacts_.begin(), artifacts_.end(), fs::relative(p, out_).generic_string()) == artifacts_.end())
      record(p);
  }

  static const ScoreSet& final_scores(const ScoringOutput& o) { return o.normalized ? *o.normalized : o.raw; }

  void stage_metrics() {
    for (const auto& b : backends_) {
      report_.push_back({b.name() + ".raw", c_primary(b.eval.raw, split_.eval.key, cfg_.metrics)});
      if (b.eval.normalized)
        report_.push_back({b.name() + ".snorm", c_primary(*b.eval.normalized, split_.eval.key, cfg_.metrics)});
    }
  }

  void stage_fusion() {
    std::vector<ScoreSet> fused;
    for (const auto& variant : cfg_.variants) {
      std::vector<ScoreSet> dev, eval;
      for (const auto& b : backends_)
        if (b.variant == variant) {
          dev.push_back(final_scores(b.dev));
          eval.push_back(final_scores(b.eval));
        }
      FusionTrainOptions opt = cfg_.fusion;
      const auto dev_matrix = make_score_matrix(dev, dev.front().trials());
      const auto model = train_fusion(dev_matrix, split_.dev.key, opt).model;
      io::Container c;
      c.put(io::to_section(model));
      const fs::path p = out_ / "models" / ("fusion_" + variant + ".sutk");
      io::save_container(p, c);
      record(p);
      const ScoreSet f =
          write_scores("eval", "fused_" + variant, apply_fusion(make_score_matrix(eval, eval.front().trials()), model));
      if (cfg_.has_stage("metrics")) report_.push_back({"fused_" + variant, c_primary(f, split_.eval.key, cfg_.metrics)});
      fused.push_back(f);
    }
    ScoreSet final_set = fused.front();
    for (std::size_t i = 1; i < fused.size(); ++i) final_set = sum_systems(final_set, fused[i]);
    final_set = write_scores("eval", "final", final_set);
    if (cfg_.has_stage("metrics")) report_.push_back({"final", c_primary(final_set, split_.eval.key, cfg_.metrics)});
  }

  const PipelineConfig& cfg_;
  fs::path out_;
  SynthCorpus corpus_;
  SplitResult split_;
  std::vector<FrameSet> frames_;
  DiagGmm ubm_;
  std::optional<TvModel> tv_;
  std::map<std::string, std::vector<LabeledIvector>> systems_;
  std::map<std::string, EnrollmentMap> pooled_;
  std::vector<Backend> backends_;
  std::map<std::string, std::vector<Index>> train_rows_;
  std::vector<ReportRow> report_;
  std::map<std::string, ScoreSet> written_eval_;
  std::vector<StageTiming> timings_;
  std::vector<std::string> artifacts_;
};

inline RunResult run_pipeline(const PipelineConfig& cfg) {
  validate(cfg);
  fs::create_directories(cfg.output_dir);
  return Runner(cfg).run();
}

}  // namespace ivkit::pipeline
