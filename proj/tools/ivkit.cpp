// tools/ivkit.cpp

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

// ivkit: speaker-verification back-end command line.
//
//   ivkit run [config.json] [--jobs N] [--block.key=value ...]
//   ivkit score --model M.sutk --ivectors A --enroll E --trials T --out S [--snorm]
//   ivkit evaluate --scores S --key K [--out report.txt]
//   ivkit fuse train --scores S1 [S2 ...] --key K --out fusion.sutk
//   ivkit fuse apply (--model fusion.sutk | --identity) --scores S1 [S2 ...] --out S
//   ivkit sum --scores A B --out S
//   ivkit det --scores S --key K --out points.tsv
//
// Exit status: 0 success, 2 configuration error, 3 data error, 4 numerical
// error.

#include "ivkit/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

using namespace ivkit;
namespace pl = ivkit::pipeline;

std::vector<ScoreSet> load_all(const std::vector<std::string>& paths) {
  std::vector<ScoreSet> out;
  for (const auto& p : paths) out.push_back(io::load_scores(p));
  return out;
}

void write_or_print(const std::string& path, const std::string& text) {
  if (path.empty())
    std::cout << text;
  else
    pl::write_text(path, text);
}

int cmd_run(const std::string& config, const std::vector<std::string>& extras, int jobs, const std::string& out) {
  auto overrides = pl::parse_overrides(extras);
  if (jobs > 0) overrides.emplace_back("jobs", jobs);
  if (!out.empty()) overrides.emplace_back("output_dir", out);
  const auto cfg = pl::load_config(config, overrides);
  const auto res = pl::run_pipeline(cfg);
  std::cerr << "ivkit run: wrote " << res.output_dir.string() << " (config " << res.manifest["config_hash"].get<std::string>()
            << ")\n";
  if (!res.report.empty()) std::cout << pl::format_report(res.report, cfg.metrics);
  return 0;
}

int cmd_score(const std::string& model, const std::string& ivectors, const std::string& enroll,
              const std::string& trials, const std::string& out, bool snorm, int jobs) {
  if (jobs < 1) throw ConfigError("--jobs must be >= 1");
  const auto sm = pl::scoring_model_from_container(io::load_container(model), snorm);
  const auto vm = pl::vector_map(io::load_ivectors(ivectors));
  const auto res = pl::score_stage(sm, vm, io::load_enrollment(enroll), io::load_trials(trials), snorm, jobs);
  io::save_scores(out, snorm ? *res.normalized : res.raw);
  return 0;
}

CprimaryConfig metrics_config(double p1, double p2, double cm, double cf) {
  CprimaryConfig c{p1, p2, cm, cf, false};
  c.validate();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ivkit: i-vector speaker verification back-end"};
  app.require_subcommand(1);

  int jobs = 0;
  std::string config, out_dir;
  auto* run = app.add_subcommand("run", "run the configured pipeline");
  run->add_option("config", config, "pipeline config (JSON); defaults only when omitted");
  run->add_option("--jobs", jobs, "scoring threads");
  run->add_option("--out", out_dir, "output directory (overrides output_dir)");
  run->allow_extras();
  run->footer("Any --block.key=value pair overrides the config, e.g. --synth.n_speakers=300.");

  std::string model, ivectors, enroll, trials, out, key, name;
  bool snorm = false;
  int score_jobs = 1;
  auto* score = app.add_subcommand("score", "score trials with a trained back-end");
  score->add_option("--model", model, "back-end container (models/<system>_<variant>.sutk)")->required();
  score->add_option("--ivectors", ivectors, "i-vector archive")->required();
  score->add_option("--enroll", enroll, "enrollment list")->required();
  score->add_option("--trials", trials, "trial list")->required();
  score->add_option("--out", out, "score file")->required();
  score->add_flag("--snorm", snorm, "apply trial-specific s-norm with the container's cohort");
  score->add_option("--jobs", score_jobs, "scoring threads");

  std::vector<std::string> score_files;
  double p1 = 0.01, p2 = 0.005, cmiss = 1.0, cfa = 1.0;
  auto* evaluate = app.add_subcommand("evaluate", "EER and C_Primary for a score file");
  evaluate->add_option("--scores", score_files, "score file")->required()->expected(1);
  evaluate->add_option("--key", key, "trial key")->required();
  evaluate->add_option("--out", out, "report file (stdout when omitted)");
  evaluate->add_option("--name", name, "system name in the report");
  evaluate->add_option("--p-tar-1", p1);
  evaluate->add_option("--p-tar-2", p2);
  evaluate->add_option("--c-miss", cmiss);
  evaluate->add_option("--c-fa", cfa);

  double prior = 0.0075;
  int max_iters = 100;
  double tolerance = 1e-9;
  bool identity = false;
  auto* fuse = app.add_subcommand("fuse", "logistic-regression fusion and calibration");
  fuse->require_subcommand(1);
  auto* fuse_train = fuse->add_subcommand("train", "train a fusion on labeled trials");
  fuse_train->add_option("--scores", score_files, "one score file per system")->required();
  fuse_train->add_option("--key", key, "trial key")->required();
  fuse_train->add_option("--out", out, "fusion container")->required();
  fuse_train->add_option("--prior", prior);
  fuse_train->add_option("--max-iters", max_iters);
  fuse_train->add_option("--tolerance", tolerance);
  auto* fuse_apply = fuse->add_subcommand("apply", "apply a fusion");
  fuse_apply->add_option("--model", model, "fusion container");
  fuse_apply->add_flag("--identity", identity, "single system, weight 1 and offset 0");
  fuse_apply->add_option("--scores", score_files, "one score file per system")->required();
  fuse_apply->add_option("--out", out, "fused score file")->required();

  auto* sum = app.add_subcommand("sum", "per-trial sum of two score files");
  sum->add_option("--scores", score_files, "two score files")->required()->expected(2);
  sum->add_option("--out", out, "score file")->required();

  auto* det = app.add_subcommand("det", "DET operating points");
  det->add_option("--scores", score_files, "score file")->required()->expected(1);
  det->add_option("--key", key, "trial key")->required();
  det->add_option("--out", out, "points file (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*run) return cmd_run(config, run->remaining(), jobs, out_dir);
    if (*score) return cmd_score(model, ivectors, enroll, trials, out, snorm, score_jobs);
    if (*evaluate) {
      const auto cfg = metrics_config(p1, p2, cmiss, cfa);
      const auto rep = c_primary(io::load_scores(score_files[0]), io::load_key(key), cfg);
      const std::string sys = name.empty() ? std::filesystem::path(score_files[0]).stem().string() : name;
      write_or_print(out, pl::format_report({{sys, rep}}, cfg));
      return 0;
    }
    if (*fuse_train) {
      const auto systems = load_all(score_files);
      FusionTrainOptions opt;
      opt.prior = prior;
      opt.max_iters = max_iters;
      opt.tolerance = tolerance;
      const auto res = train_fusion(make_score_matrix(systems, systems.front().trials()), io::load_key(key), opt);
      io::Container c;
      c.put(io::to_section(res.model));
      io::save_container(out, c);
      return 0;
    }
    if (*fuse_apply) {
      if (identity == !model.empty()) throw ConfigError("fuse apply: give exactly one of --model and --identity");
      const auto systems = load_all(score_files);
      FusionModel fm;
      if (identity) {
        if (systems.size() != 1) throw ConfigError("fuse apply --identity takes exactly one score file");
        fm.weights = Vector::Ones(1);
        fm.offset = 0.0;
      } else {
        const auto c = io::load_container(model);
        if (!c.has("fusion"))
          throw DataError("'" + model + "' has no fusion section; it is produced by 'ivkit fuse train' or the fusion stage");
        fm = io::fusion_from_section(c.section("fusion"));
      }
      io::save_scores(out, apply_fusion(make_score_matrix(systems, systems.front().trials()), fm));
      return 0;
    }
    if (*sum) {
      const auto systems = load_all(score_files);
      io::save_scores(out, sum_systems(systems[0], systems[1]));
      return 0;
    }
    if (*det) {
      write_or_print(out, pl::format_det(det_points(io::load_scores(score_files[0]), io::load_key(key))));
      return 0;
    }
  } catch (const ivkit::Error& e) {
    std::cerr << "ivkit: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "ivkit: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "ivkit: internal error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
