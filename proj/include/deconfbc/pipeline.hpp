#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "deconfbc/core.hpp"
#include "deconfbc/corrector.hpp"
#include "deconfbc/factor_model.hpp"
#include "deconfbc/synthgen.hpp"

namespace deconfbc {

struct DatasetConfig {
    bool synthetic = true;
    SynthConfig synth;
    std::filesystem::path manifest;
};

struct SplitConfig {
    Fractions fractions;
    SplitMode mode = SplitMode::ByLocation;
};

/// One document drives every stage. Module seeds are derived from `seed`.
struct PipelineConfig {
    std::uint64_t seed = 0;
    DatasetConfig dataset;
    WindowSpec window;
    int stride = 12;  // anchor stride of training windows
    FactorModelConfig factor;
    CorrectorConfig corrector;
    SplitConfig split;
    int n_quantiles = 100;
    std::filesystem::path output_dir = "run";
};

using Overrides = std::vector<std::pair<std::string, std::string>>;

/// Canonical JSON text; keys sorted, derived seeds omitted.
std::string config_to_json(const PipelineConfig& config);

/// Parses a config document and applies dotted overrides such as ("factor.lr", "0.001").
/// Every violation is reported in one ConfigInvalid error; a missing manifest is ConfigPath.
PipelineConfig config_from_json(const std::string& text, const Overrides& overrides = {});
PipelineConfig load_config(const std::filesystem::path& path, const Overrides& overrides = {});

/// Lists every violated constraint; empty when the config is usable.
std::vector<std::string> config_violations(const PipelineConfig& config);

/// FNV-1a of the canonical JSON, as 16 hex digits.
std::string config_hash(const PipelineConfig& config);

/// Copies the master seed into every module config.
PipelineConfig with_stage_seeds(PipelineConfig config);

/// Dataset the run reads: the generated one for synthetic configs, otherwise the manifest.
TwoSourceDataset load_run_dataset(const PipelineConfig& config);
SplitResult load_run_split(const PipelineConfig& config);

/// Rows of each location scored by the correction and the baselines: the
/// future segments of test windows taken with anchor stride k.
struct EvaluationWindow {
    int location = 0;
    std::vector<TrajectoryWindow> windows;
};
std::vector<EvaluationWindow> evaluation_windows(const TwoSourceDataset& test, const WindowSpec& spec);

/// Outcome scale of the normalized outcome column.
OutcomeScale outcome_scale(const TwoSourceDataset& ds);

/// Delta examples of the windows: features with or without inferred latents, target y_o - y_g.
std::vector<CorrectorExample> corrector_examples(const std::vector<TrajectoryWindow>& windows,
                                                 const FactorModel* factor, bool use_z);

/// Applies the corrector to every window; results are in window order.
std::vector<CorrectionResult> correct_windows(const CorrectorModel& corrector, const FactorModel* factor,
                                              const std::vector<TrajectoryWindow>& windows,
                                              const OutcomeScale& scale, bool clip_nonnegative);

/// Names accepted by the baseline stage.
const std::vector<std::string>& baseline_methods();

using Artifacts = std::vector<std::filesystem::path>;

Artifacts run_generate(const PipelineConfig& config, bool quiet = false);
Artifacts run_split(const PipelineConfig& config, bool quiet = false);
Artifacts run_train_factor(const PipelineConfig& config, bool quiet = false);
Artifacts run_infer_z(const PipelineConfig& config, bool quiet = false);
Artifacts run_train_corrector(const PipelineConfig& config, bool quiet = false);
Artifacts run_correct(const PipelineConfig& config, bool quiet = false);
Artifacts run_baseline(const PipelineConfig& config, const std::string& method, bool quiet = false);
Artifacts run_evaluate(const PipelineConfig& config, bool quiet = false);
Artifacts run_report(const PipelineConfig& config, bool quiet = false);

/// Every stage in order, generation skipped for manifest datasets.
Artifacts run_all(const PipelineConfig& config, bool quiet = false);

/// Merges artifacts into <output_dir>/run_manifest.json under the given stage.
void record_artifacts(const PipelineConfig& config, const std::string& stage, const Artifacts& files);

}  // namespace deconfbc
