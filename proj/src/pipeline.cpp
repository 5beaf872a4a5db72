#include "masr/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <set>
#include <sstream>
#include <thread>

#include "masr/io.hpp"
#include "masr/warp.hpp"

namespace masr {

using json = nlohmann::json;

namespace {

template <class F>
auto in_stage(const std::string& stage, F&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error& e) {
    throw e.with_context("stage " + stage);
  } catch (const std::exception& e) {
    throw Error(Errc::io_failure, "stage " + stage + ": " + e.what());
  }
}

void reject_unknown_keys(const json& j, const std::set<std::string>& known, const char* where) {
  if (!j.is_object()) throw Error(Errc::config_invalid, std::string(where) + " must be an object");
  for (const auto& item : j.items()) {
    if (!known.count(item.key()))
      throw Error(Errc::config_invalid, std::string(where) + ": unknown key '" + item.key() + "'");
  }
}

template <class V>
void read_opt(const json& j, const char* key, V& out) {
  if (j.contains(key)) out = j.at(key).get<V>();
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

ScalarVolume<double> load_normalized(const std::filesystem::path& p) { return normalize_intensity(read_image(p)); }

}  // namespace

RefineConfig refine_config_from_json(const json& j, RefineConfig c) {
  try {
    reject_unknown_keys(j,
                        {"alpha", "gamma", "lr", "max_iters", "beta1", "beta2", "eps_adam", "stop_rel_tol",
                         "stop_window", "pyramid_levels", "seed"},
                        "refine");
    read_opt(j, "alpha", c.weights.alpha);
    read_opt(j, "gamma", c.weights.gamma);
    read_opt(j, "lr", c.lr);
    read_opt(j, "max_iters", c.max_iters);
    read_opt(j, "beta1", c.beta1);
    read_opt(j, "beta2", c.beta2);
    read_opt(j, "eps_adam", c.eps_adam);
    read_opt(j, "stop_rel_tol", c.stop_rel_tol);
    read_opt(j, "stop_window", c.stop_window);
    read_opt(j, "pyramid_levels", c.pyramid_levels);
    read_opt(j, "seed", c.seed);
  } catch (const json::exception& e) {
    throw Error(Errc::config_invalid, e.what());
  }
  c.validate();
  return c;
}

json to_json(const RefineConfig& c) {
  return json{{"alpha", c.weights.alpha},       {"gamma", c.weights.gamma},   {"lr", c.lr},
              {"max_iters", c.max_iters},       {"beta1", c.beta1},           {"beta2", c.beta2},
              {"eps_adam", c.eps_adam},         {"stop_rel_tol", c.stop_rel_tol}, {"stop_window", c.stop_window},
              {"pyramid_levels", c.pyramid_levels}, {"seed", c.seed}};
}

PhantomConfig phantom_config_from_json(const json& j, PhantomConfig c) {
  try {
    reject_unknown_keys(j,
                        {"dims", "spacing_mm", "num_atlases", "num_structures", "deform_magnitude",
                         "deform_smoothness", "noise_sigma", "seg_perturb_radius", "seed"},
                        "phantom");
    if (j.contains("dims")) {
      const auto d = j.at("dims").get<std::vector<long long>>();
      if (d.size() != 3) throw Error(Errc::config_invalid, "phantom dims need 3 entries");
      c.dims = Dims(d[0], d[1], d[2]);
    }
    read_opt(j, "spacing_mm", c.spacing_mm);
    read_opt(j, "num_atlases", c.num_atlases);
    read_opt(j, "num_structures", c.num_structures);
    read_opt(j, "deform_magnitude", c.deform_magnitude);
    read_opt(j, "deform_smoothness", c.deform_smoothness);
    read_opt(j, "noise_sigma", c.noise_sigma);
    read_opt(j, "seg_perturb_radius", c.seg_perturb_radius);
    read_opt(j, "seed", c.seed);
  } catch (const json::exception& e) {
    throw Error(Errc::config_invalid, e.what());
  }
  c.validate();
  return c;
}

void PipelineConfig::validate() const {
  if (atlases.empty()) throw Error(Errc::empty_atlas_set, "pipeline config lists no atlases");
  if (target_image.empty()) throw Error(Errc::config_invalid, "pipeline config has no target_image");
  for (const AtlasPaths& a : atlases) {
    if (a.image.empty() || a.labels.empty())
      throw Error(Errc::config_invalid, "every atlas needs both an image and a labels path");
  }
  const auto with_trust = std::count_if(atlases.begin(), atlases.end(), [](const AtlasPaths& a) { return a.trust; });
  if (with_trust != 0 && with_trust != std::ptrdiff_t(atlases.size()))
    throw Error(Errc::config_invalid, "trust volumes must be given for all atlases or none");
  options.refine.validate();
  options.fusion.jlf.validate();
  if (!(options.fusion.trust_threshold >= 0.0 && options.fusion.trust_threshold <= 1.0))
    throw Error(Errc::config_invalid, "trust_threshold must lie in [0, 1]");
  if (options.threads < 0) throw Error(Errc::config_invalid, "threads must be >= 0");
}

PipelineConfig pipeline_config_from_json(const json& j, const std::filesystem::path& base) {
  PipelineConfig cfg;
  try {
    reject_unknown_keys(j,
                        {"target_image", "target_pred", "truth_labels", "atlases", "refine", "refine_enabled", "jlf",
                         "fusion", "trust_mode", "trust_threshold", "threads", "deterministic", "output_dir"},
                        "pipeline");
    cfg.target_image = resolve(base, j.at("target_image").get<std::string>());
    if (j.contains("target_pred")) cfg.target_pred = resolve(base, j.at("target_pred").get<std::string>());
    if (j.contains("truth_labels")) cfg.truth_labels = resolve(base, j.at("truth_labels").get<std::string>());
    for (const json& a : j.at("atlases")) {
      reject_unknown_keys(a, {"image", "labels", "pred", "trust", "init_field"}, "atlas");
      AtlasPaths p;
      p.image = resolve(base, a.at("image").get<std::string>());
      p.labels = resolve(base, a.at("labels").get<std::string>());
      if (a.contains("pred")) p.pred = resolve(base, a.at("pred").get<std::string>());
      if (a.contains("trust")) p.trust = resolve(base, a.at("trust").get<std::string>());
      if (a.contains("init_field")) p.init_field = resolve(base, a.at("init_field").get<std::string>());
      cfg.atlases.push_back(std::move(p));
    }
    PipelineOptions& o = cfg.options;
    if (j.contains("refine")) o.refine = refine_config_from_json(j.at("refine"));
    read_opt(j, "refine_enabled", o.refine_enabled);
    if (j.contains("jlf")) {
      const json& jj = j.at("jlf");
      reject_unknown_keys(jj, {"patch_radius", "ridge_eps"}, "jlf");
      read_opt(jj, "patch_radius", o.fusion.jlf.patch_radius);
      read_opt(jj, "ridge_eps", o.fusion.jlf.ridge_eps);
    }
    if (j.contains("fusion")) o.fusion.mode = parse_fusion_mode(j.at("fusion").get<std::string>());
    if (j.contains("trust_mode")) o.fusion.trust_mode = parse_trust_mode(j.at("trust_mode").get<std::string>());
    read_opt(j, "trust_threshold", o.fusion.trust_threshold);
    read_opt(j, "threads", o.threads);
    read_opt(j, "deterministic", o.deterministic);
    if (j.contains("output_dir")) cfg.output_dir = resolve(base, j.at("output_dir").get<std::string>());
  } catch (const json::exception& e) {
    throw Error(Errc::config_invalid, e.what());
  }
  cfg.validate();
  return cfg;
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw Error(Errc::config_invalid, path.string() + ": " + e.what());
  }
  return pipeline_config_from_json(j, path.parent_path());
}

json to_json(const PipelineConfig& cfg) {
  json j;
  j["target_image"] = cfg.target_image.string();
  if (cfg.target_pred) j["target_pred"] = cfg.target_pred->string();
  if (cfg.truth_labels) j["truth_labels"] = cfg.truth_labels->string();
  j["atlases"] = json::array();
  for (const AtlasPaths& a : cfg.atlases) {
    json ja{{"image", a.image.string()}, {"labels", a.labels.string()}};
    if (a.pred) ja["pred"] = a.pred->string();
    if (a.trust) ja["trust"] = a.trust->string();
    if (a.init_field) ja["init_field"] = a.init_field->string();
    j["atlases"].push_back(ja);
  }
  const PipelineOptions& o = cfg.options;
  j["refine"] = to_json(o.refine);
  j["refine_enabled"] = o.refine_enabled;
  j["jlf"] = {{"patch_radius", o.fusion.jlf.patch_radius}, {"ridge_eps", o.fusion.jlf.ridge_eps}};
  j["fusion"] = to_string(o.fusion.mode);
  j["trust_mode"] = to_string(o.fusion.trust_mode);
  j["trust_threshold"] = o.fusion.trust_threshold;
  j["threads"] = o.threads;
  j["deterministic"] = o.deterministic;
  j["output_dir"] = cfg.output_dir.string();
  return j;
}

PipelineResult run_pipeline(const PipelineInputs& in, const PipelineOptions& options) {
  if (in.atlases.empty()) throw Error(Errc::empty_atlas_set, "pipeline needs at least one atlas");
  options.refine.validate();
  const GridGeometry& geom = in.target_img.geom();
  const int n = int(in.atlases.size());
  const int k_count = in.atlases.front().labels.num_structures();
  for (int a = 0; a < n; ++a) {
    const AtlasData& d = in.atlases[a];
    const std::string where = "stage load: atlas " + std::to_string(a);
    if (d.img.geom() != geom || d.labels.geom() != geom)
      throw Error(Errc::geometry_mismatch, where + ": grid differs from the target");
    if (d.pred && d.pred->geom() != geom) throw Error(Errc::geometry_mismatch, where + ": prediction grid differs");
    if (d.trust && d.trust->geom() != geom) throw Error(Errc::geometry_mismatch, where + ": trust grid differs");
    if (d.init_field && d.init_field->geom() != geom)
      throw Error(Errc::geometry_mismatch, where + ": initial field grid differs");
  }

  // The segmentation term needs predictions on both sides; without them it is
  // dropped rather than guessed.
  const bool have_preds =
      in.target_pred && std::all_of(in.atlases.begin(), in.atlases.end(), [](const AtlasData& d) { return d.pred; });
  RefineConfig refine_cfg = options.refine;
  if (!have_preds) refine_cfg.weights.alpha = 0.0;
  const ProbVolume<double> no_pred(geom, k_count);

  PipelineResult result{LabelVolume(geom, k_count), {}, {}, {}, std::nullopt, {}};
  result.fields.assign(n, DisplacementField<double>(geom));
  result.warped_labels.assign(n, LabelVolume(geom, k_count));
  result.reports.assign(n, std::nullopt);
  std::vector<ScalarVolume<double>> warped_imgs(n, ScalarVolume<double>(geom));
  std::vector<std::exception_ptr> failures(n);

  auto run_atlas = [&](int a) {
    try {
      const AtlasData& d = in.atlases[a];
      DisplacementField<double> f = d.init_field ? *d.init_field : DisplacementField<double>(geom);
      if (options.refine_enabled) {
        const ProbVolume<double>& src = have_preds ? *d.pred : no_pred;
        const ProbVolume<double>& tar = have_preds ? *in.target_pred : no_pred;
        RefineResult<double> r = in_stage("refine atlas " + std::to_string(a), [&] {
          return refine_pyramid(d.img, in.target_img, src, tar, f, refine_cfg);
        });
        f = std::move(r.field);
        result.reports[a] = std::move(r.report);
      }
      in_stage("warp atlas " + std::to_string(a), [&] {
        result.warped_labels[a] = warp_labels(d.labels, f);
        warped_imgs[a] = warp_scalar(d.img, f);
        return 0;
      });
      result.fields[a] = std::move(f);
    } catch (...) {
      failures[a] = std::current_exception();
    }
  };

  int threads = options.deterministic ? 1 : options.threads;
  if (threads == 0) threads = int(std::max(1u, std::thread::hardware_concurrency()));
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (int a = 0; a < n; ++a) run_atlas(a);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (int a = next++; a < n; a = next++) run_atlas(a);
      });
    }
    for (auto& th : pool) th.join();
  }
  for (const auto& e : failures) {
    if (e) std::rethrow_exception(e);
  }

  std::vector<TrustVolume> trust;
  for (const AtlasData& d : in.atlases) {
    if (d.trust) trust.push_back(*d.trust);
  }
  if (!trust.empty() && int(trust.size()) != n)
    throw Error(Errc::config_invalid, "stage fuse: trust volumes must be given for all atlases or none");
  result.consensus = in_stage("fuse", [&] {
    return fuse(result.warped_labels, warped_imgs, in.target_img, trust.empty() ? nullptr : &trust, options.fusion,
                &result.fusion_stats);
  });
  if (in.truth) {
    result.metrics = in_stage("evaluate", [&] { return evaluate(result.consensus, *in.truth); });
  }
  return result;
}

PipelineInputs load_pipeline_inputs(const PipelineConfig& cfg) {
  return in_stage("load", [&] {
    PipelineInputs in{load_normalized(cfg.target_image), std::nullopt, std::nullopt, {}};
    if (cfg.target_pred) in.target_pred = read_prob(*cfg.target_pred);
    if (cfg.truth_labels) in.truth = read_labels(*cfg.truth_labels);
    for (const AtlasPaths& p : cfg.atlases) {
      AtlasData d{load_normalized(p.image), read_labels(p.labels), std::nullopt, std::nullopt, std::nullopt};
      if (p.pred) d.pred = read_prob(*p.pred);
      if (p.trust) d.trust = read_prob(*p.trust);
      if (p.init_field) d.init_field = read_field(*p.init_field);
      in.atlases.push_back(std::move(d));
    }
    return in;
  });
}

std::string format_objective_report(const ObjectiveReport<double>& report) {
  std::ostringstream os;
  char buf[160];
  os << "iterations_run = " << report.iterations_run << "\n";
  os << "stop_reason = " << to_string(report.stop_reason) << "\n";
  os << "best_iteration = " << report.best_iteration << "\n";
  std::snprintf(buf, sizeof buf, "initial_total = %.9g\nbest_total = %.9g\n", report.initial().total,
                report.best().total);
  os << buf;
  os << "# iteration total img_term seg_term reg_term\n";
  for (std::size_t i = 0; i < report.history.size(); ++i) {
    const auto& v = report.history[i];
    std::snprintf(buf, sizeof buf, "%zu %.9g %.9g %.9g %.9g\n", i, v.total, v.img_term, v.seg_term, v.reg_term);
    os << buf;
  }
  return os.str();
}

void write_pipeline_outputs(const PipelineResult& result, const PipelineOptions& options,
                            const std::filesystem::path& dir) {
  in_stage("write", [&] {
    std::filesystem::create_directories(dir);
    write_volume(AnyVolume(result.consensus), dir / "consensus_labels.vvf");
    for (std::size_t a = 0; a < result.fields.size(); ++a) {
      const std::string stem = "atlas_" + std::to_string(a);
      write_volume(result.fields[a], dir / (stem + "_field.vvf"));
      if (result.reports[a]) write_file(dir / (stem + "_objective.txt"), format_objective_report(*result.reports[a]));
    }
    std::ostringstream fusion;
    fusion << "fusion = " << to_string(options.fusion.mode) << "\n"
           << "refine_enabled = " << (options.refine_enabled ? "true" : "false") << "\n"
           << "degenerate_voxels = " << result.fusion_stats.degenerate_voxels << "\n"
           << "solve_failures = " << result.fusion_stats.solve_failures << "\n"
           << "trust_reverted = " << result.fusion_stats.trust_reverted << "\n";
    write_file(dir / "fusion.txt", fusion.str());
    if (result.metrics) write_file(dir / "metrics.txt", format_report(*result.metrics));
    return 0;
  });
}

PipelineResult run_pipeline(const PipelineConfig& cfg) {
  cfg.validate();
  const PipelineInputs inputs = load_pipeline_inputs(cfg);
  PipelineResult result = run_pipeline(inputs, cfg.options);
  write_pipeline_outputs(result, cfg.options, cfg.output_dir);
  return result;
}

void save_phantom(const PhantomSet& set, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_volume(set.target_img, dir / "target_image.vvf");
  write_volume(AnyVolume(set.target_labels), dir / "target_labels.vvf");
  write_volume(set.target_pred, dir / "target_pred.vvf");
  PipelineConfig cfg;
  cfg.target_image = "target_image.vvf";
  cfg.target_pred = "target_pred.vvf";
  cfg.truth_labels = "target_labels.vvf";
  cfg.output_dir = "out";
  cfg.options.refine.weights.gamma = normalized_grid_gamma(cfg.options.refine.weights.gamma, set.target_img.geom());
  for (std::size_t a = 0; a < set.atlases.size(); ++a) {
    const PhantomAtlas& atlas = set.atlases[a];
    const std::string stem = "atlas_" + std::to_string(a);
    write_volume(atlas.img, dir / (stem + "_image.vvf"));
    write_volume(AnyVolume(atlas.labels), dir / (stem + "_labels.vvf"));
    write_volume(atlas.pred, dir / (stem + "_pred.vvf"));
    write_volume(atlas.true_field, dir / (stem + "_true_field.vvf"));
    cfg.atlases.push_back({stem + "_image.vvf", stem + "_labels.vvf", stem + "_pred.vvf", std::nullopt, std::nullopt});
  }
  write_file(dir / "pipeline.json", to_json(cfg).dump(2) + "\n");
}

}  // namespace masr
