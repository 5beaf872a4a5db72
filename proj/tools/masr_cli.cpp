#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "masr/io.hpp"
#include "masr/pipeline.hpp"

namespace {

using namespace masr;
namespace fs = std::filesystem;

nlohmann::json load_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::config_invalid, path.string() + ": " + e.what());
  }
}

struct FusionFlags {
  std::optional<std::string> fusion;
  std::optional<std::string> trust_mode;
  std::optional<double> trust_threshold;

  void add_to(CLI::App& app) {
    app.add_option("--fusion", fusion, "Fusion rule")->check(CLI::IsMember({"plurality", "jlf"}));
    app.add_option("--trust-mode", trust_mode, "How trust volumes enter the weights")
        ->check(CLI::IsMember({"multiply", "gate"}));
    app.add_option("--trust-threshold", trust_threshold, "Gate threshold")->check(CLI::Range(0.0, 1.0));
  }

  void apply(FuseConfig& cfg) const {
    if (fusion) cfg.mode = parse_fusion_mode(*fusion);
    if (trust_mode) cfg.trust_mode = parse_trust_mode(*trust_mode);
    if (trust_threshold) cfg.trust_threshold = *trust_threshold;
  }
};

int cmd_phantom(const std::optional<fs::path>& config, std::optional<std::uint64_t> seed, const fs::path& out) {
  PhantomConfig cfg;
  if (config) cfg = phantom_config_from_json(load_json(*config));
  if (seed) cfg.seed = *seed;
  cfg.validate();
  save_phantom(generate_phantom(cfg), out);
  std::cout << "phantom written to " << out.string() << "\n";
  return 0;
}

struct RefineArgs {
  fs::path atlas_image, target_image;
  std::optional<fs::path> atlas_pred, target_pred, init_field, config;
};

int cmd_refine(const RefineArgs& a, const fs::path& out) {
  RefineConfig cfg;
  if (a.config) cfg = refine_config_from_json(load_json(*a.config));
  const ScalarVolume<double> atlas = normalize_intensity(read_image(a.atlas_image));
  const ScalarVolume<double> target = normalize_intensity(read_image(a.target_image));
  if (atlas.geom() != target.geom()) throw Error(Errc::geometry_mismatch, "atlas and target grids differ");
  DisplacementField<double> f0 = a.init_field ? read_field(*a.init_field) : DisplacementField<double>(target.geom());
  std::optional<ProbVolume<double>> src, tar;
  if (a.atlas_pred && a.target_pred) {
    src = read_prob(*a.atlas_pred);
    tar = read_prob(*a.target_pred);
  } else {
    cfg.weights.alpha = 0.0;
    src = tar = ProbVolume<double>(target.geom(), 1);
  }
  const RefineResult<double> r = refine_pyramid(atlas, target, *src, *tar, f0, cfg);
  fs::create_directories(out);
  write_volume(r.field, out / "field.vvf");
  write_file(out / "objective.txt", format_objective_report(r.report));
  std::printf("initial_total = %.9g\nbest_total = %.9g\n", r.report.initial().total, r.report.best().total);
  return 0;
}

struct FuseArgs {
  std::vector<fs::path> labels, images, trust;
  std::optional<fs::path> target_image, truth;
  std::optional<int> patch_radius;
  std::optional<double> ridge_eps;
};

int cmd_fuse(const FuseArgs& a, const FusionFlags& flags, const fs::path& out) {
  FuseConfig cfg;
  flags.apply(cfg);
  if (a.patch_radius) cfg.jlf.patch_radius = *a.patch_radius;
  if (a.ridge_eps) cfg.jlf.ridge_eps = *a.ridge_eps;
  cfg.jlf.validate();
  std::vector<LabelVolume> labels;
  for (const auto& p : a.labels) labels.push_back(read_labels(p));
  std::vector<ScalarVolume<double>> imgs;
  for (const auto& p : a.images) imgs.push_back(normalize_intensity(read_image(p)));
  std::vector<TrustVolume> trust;
  for (const auto& p : a.trust) trust.push_back(read_prob(p));
  if (cfg.mode == FusionMode::jlf && (!a.target_image || imgs.size() != labels.size()))
    throw Error(Errc::config_invalid, "jlf fusion needs --target-image and one --images entry per label volume");
  if (!trust.empty() && trust.size() != labels.size())
    throw Error(Errc::config_invalid, "give one --trust volume per label volume");
  const ScalarVolume<double> target = a.target_image ? normalize_intensity(read_image(*a.target_image))
                                                     : ScalarVolume<double>(labels.at(0).geom());
  FusionStats stats;
  const LabelVolume consensus = fuse(labels, imgs, target, trust.empty() ? nullptr : &trust, cfg, &stats);
  fs::create_directories(out);
  write_volume(AnyVolume(consensus), out / "consensus_labels.vvf");
  if (a.truth) {
    const std::string report = format_report(evaluate(consensus, read_labels(*a.truth)));
    write_file(out / "metrics.txt", report);
    std::cout << report;
  }
  return 0;
}

int cmd_eval(const fs::path& pred, const fs::path& truth, const std::optional<fs::path>& out) {
  const std::string report = format_report(evaluate(read_labels(pred), read_labels(truth)));
  if (out) write_file(*out / "metrics.txt", report);
  std::cout << report;
  return 0;
}

int cmd_pipeline(const fs::path& config, std::optional<int> threads, bool deterministic, bool no_refine,
                 const FusionFlags& flags, const std::optional<fs::path>& out) {
  PipelineConfig cfg = load_pipeline_config(config);
  if (threads) cfg.options.threads = *threads;
  if (deterministic) cfg.options.deterministic = true;
  if (no_refine) cfg.options.refine_enabled = false;
  flags.apply(cfg.options.fusion);
  if (out) cfg.output_dir = *out;
  const PipelineResult r = run_pipeline(cfg);
  if (r.metrics) std::cout << format_report(*r.metrics);
  std::cout << "outputs written to " << cfg.output_dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-atlas segmentation with registration refinement"};
  app.require_subcommand(1);

  fs::path out;
  std::optional<fs::path> out_opt;

  auto* phantom = app.add_subcommand("phantom", "Write a synthetic phantom set and its pipeline.json");
  std::optional<fs::path> phantom_config;
  std::optional<std::uint64_t> phantom_seed;
  phantom->add_option("--config", phantom_config, "Phantom config (JSON)")->check(CLI::ExistingFile);
  phantom->add_option("--seed", phantom_seed, "Override the config seed");
  phantom->add_option("--out", out, "Output directory")->required();

  auto* refine = app.add_subcommand("refine", "Refine one atlas-to-target displacement field");
  RefineArgs refine_args;
  refine->add_option("--atlas-image", refine_args.atlas_image)->required()->check(CLI::ExistingFile);
  refine->add_option("--target-image", refine_args.target_image)->required()->check(CLI::ExistingFile);
  refine->add_option("--atlas-pred", refine_args.atlas_pred)->check(CLI::ExistingFile);
  refine->add_option("--target-pred", refine_args.target_pred)->check(CLI::ExistingFile);
  refine->add_option("--init-field", refine_args.init_field)->check(CLI::ExistingFile);
  refine->add_option("--config", refine_args.config, "Refine config (JSON)")->check(CLI::ExistingFile);
  refine->add_option("--out", out, "Output directory")->required();

  auto* fuse_cmd = app.add_subcommand("fuse", "Fuse pre-warped atlas labels into a consensus");
  FuseArgs fuse_args;
  FusionFlags fuse_flags;
  fuse_cmd->add_option("--labels", fuse_args.labels, "Warped atlas label volumes")->required()->check(CLI::ExistingFile);
  fuse_cmd->add_option("--images", fuse_args.images, "Warped atlas images (jlf)")->check(CLI::ExistingFile);
  fuse_cmd->add_option("--target-image", fuse_args.target_image)->check(CLI::ExistingFile);
  fuse_cmd->add_option("--trust", fuse_args.trust, "Per-atlas trust volumes")->check(CLI::ExistingFile);
  fuse_cmd->add_option("--truth", fuse_args.truth, "Truth labels to score against")->check(CLI::ExistingFile);
  fuse_cmd->add_option("--patch-radius", fuse_args.patch_radius);
  fuse_cmd->add_option("--ridge-eps", fuse_args.ridge_eps);
  fuse_flags.add_to(*fuse_cmd);
  fuse_cmd->add_option("--out", out, "Output directory")->required();

  auto* eval = app.add_subcommand("eval", "Score a segmentation against truth");
  fs::path eval_pred, eval_truth;
  eval->add_option("--pred", eval_pred)->required()->check(CLI::ExistingFile);
  eval->add_option("--truth", eval_truth)->required()->check(CLI::ExistingFile);
  eval->add_option("--out", out_opt, "Also write metrics.txt here");

  auto* pipeline = app.add_subcommand("pipeline", "Refine, warp, fuse and score");
  fs::path pipeline_config;
  std::optional<int> threads;
  bool deterministic = false, no_refine = false;
  FusionFlags pipeline_flags;
  pipeline->add_option("--config", pipeline_config, "Pipeline config (JSON)")->required()->check(CLI::ExistingFile);
  pipeline->add_option("--threads", threads, "Worker threads, 0 = auto")->check(CLI::NonNegativeNumber);
  pipeline->add_flag("--deterministic", deterministic, "Single-threaded, fixed reduction order");
  pipeline->add_flag("--no-refine", no_refine, "Skip refinement");
  pipeline_flags.add_to(*pipeline);
  pipeline->add_option("--out", out_opt, "Output directory (overrides the config)");

  CLI11_PARSE(app, argc, argv);

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    if (*phantom) return cmd_phantom(phantom_config, phantom_seed, out);
    if (*refine) return cmd_refine(refine_args, out);
    if (*fuse_cmd) return cmd_fuse(fuse_args, fuse_flags, out);
    if (*eval) return cmd_eval(eval_pred, eval_truth, out_opt);
    if (*pipeline)
      return cmd_pipeline(pipeline_config, threads, deterministic, no_refine, pipeline_flags, out_opt);
  } catch (const Error& e) {
    std::cerr << "masr " << name << ": " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "masr " << name << ": " << e.what() << "\n";
    return 2;
  }
  return 1;
}
