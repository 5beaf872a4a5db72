#pragma once

// End-to-end multi-atlas segmentation: refine every atlas-to-target
// registration, warp the atlas labels and images, fuse, and score.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "masr/fusion.hpp"
#include "masr/metrics.hpp"
#include "masr/phantom.hpp"
#include "masr/refine.hpp"

namespace masr {

struct AtlasPaths {
  std::filesystem::path image;
  std::filesystem::path labels;
  std::optional<std::filesystem::path> pred;
  std::optional<std::filesystem::path> trust;
  std::optional<std::filesystem::path> init_field;
};

struct PipelineOptions {
  RefineConfig refine;
  bool refine_enabled = true;
  FuseConfig fusion;
  int threads = 0;  // 0: one per hardware thread
  bool deterministic = false;
};

struct PipelineConfig {
  std::filesystem::path target_image;
  std::optional<std::filesystem::path> target_pred;
  std::optional<std::filesystem::path> truth_labels;
  std::vector<AtlasPaths> atlases;
  PipelineOptions options;
  std::filesystem::path output_dir = "masr_out";

  void validate() const;
};

/// Reads a JSON pipeline config. Relative paths resolve against the file's
/// directory.
PipelineConfig load_pipeline_config(const std::filesystem::path& path);
PipelineConfig pipeline_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
nlohmann::json to_json(const PipelineConfig& cfg);

RefineConfig refine_config_from_json(const nlohmann::json& j, RefineConfig base = {});
nlohmann::json to_json(const RefineConfig& cfg);
PhantomConfig phantom_config_from_json(const nlohmann::json& j, PhantomConfig base = {});

struct AtlasData {
  ScalarVolume<double> img;
  LabelVolume labels;
  std::optional<ProbVolume<double>> pred;
  std::optional<TrustVolume> trust;
  std::optional<DisplacementField<double>> init_field;
};

struct PipelineInputs {
  ScalarVolume<double> target_img;
  std::optional<ProbVolume<double>> target_pred;
  std::optional<LabelVolume> truth;
  std::vector<AtlasData> atlases;
};

struct PipelineResult {
  LabelVolume consensus;
  std::vector<DisplacementField<double>> fields;
  std::vector<LabelVolume> warped_labels;
  std::vector<std::optional<ObjectiveReport<double>>> reports;  // empty entries when refinement is off
  std::optional<MetricReport> metrics;
  FusionStats fusion_stats;
};

/// In-memory pipeline. Atlas refinements run concurrently up to
/// options.threads; results do not depend on the thread count.
PipelineResult run_pipeline(const PipelineInputs& inputs, const PipelineOptions& options);

PipelineInputs load_pipeline_inputs(const PipelineConfig& cfg);

/// Loads inputs, runs, and writes consensus_labels.vvf, atlas_<i>_field.vvf,
/// atlas_<i>_objective.txt, fusion.txt and (with truth) metrics.txt.
PipelineResult run_pipeline(const PipelineConfig& cfg);

void write_pipeline_outputs(const PipelineResult& result, const PipelineOptions& options,
                            const std::filesystem::path& dir);

std::string format_objective_report(const ObjectiveReport<double>& report);

/// Writes every volume of a phantom set plus a ready-to-run pipeline.json.
void save_phantom(const PhantomSet& set, const std::filesystem::path& dir);

}  // namespace masr
