#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "derm/gda.hpp"
#include "derm/metrics.hpp"
#include "derm/model.hpp"
#include "derm/synthdata.hpp"

namespace derm::pipeline {

enum class ColorConstancy { none, max_rgb, shades_of_gray };

struct PreprocessConfig {
  ColorConstancy color_constancy = ColorConstancy::max_rgb;
  double minkowski_p = 6.0;
  double k = 1.0;
  bool hair_removal = false;
  int morph_radius = 3;
  double morph_threshold = 0.1;
};

struct SynthOptions {
  synth::ConfoundConfig confound;
  /// Every test image is also emitted with extra hair arcs this many times
  /// minus one; 1 leaves the test split as generated.
  int enlargement_factor = 1;
};

struct GdaOptions {
  gda::GanConfig gan;
  int retry_factor = 20;
  /// Diversity floor. Negative selects the floor_percentile-th percentile of
  /// pairwise MSEs between training positives.
  double mse_floor = -1.0;
  double floor_percentile = 1.0;
};

struct TrainOptions {
  int folds = 5;
  bool use_gda = true;
  int synthetic_count = 200;
  /// "val" scores each fold model on its held-out fold; "test" scores it on
  /// the manifest's test split.
  std::string eval_split = "val";
  std::vector<int> sweep_counts{0, 50, 200, 800};
};

struct Paths {
  std::string manifest;            // default <out>/data/manifest.csv
  std::string gan_checkpoint;      // default <out>/gan/generator.ckpt
  std::string synthetic_manifest;  // default <out>/gan/samples/manifest.csv
};

struct RunConfig {
  std::string out = "out";
  std::uint64_t seed = 0;
  int jobs = 1;
  PreprocessConfig preprocess;
  SynthOptions synth;
  GdaOptions gda;
  model::BackboneConfig model;
  TrainOptions train;
  Paths paths;

  /// Sets one key from its text form; ConfigError on an unknown key or a
  /// malformed value.
  void set(const std::string& key, const std::string& value);
  /// Every key in schema order.
  static const std::vector<std::string>& keys();
  std::string get(const std::string& key) const;

  /// Parses `key = value` lines; `#` starts a comment. Errors name the
  /// origin and line.
  static RunConfig parse(const std::string& text, const std::string& origin = "config");
  static RunConfig load(const std::filesystem::path& path);
  /// Full `key = value` listing that parse() reads back to an equal config.
  std::string echo() const;
  /// Throws ConfigError on any invalid field of any module.
  void validate() const;

  std::filesystem::path manifest_path() const;
  std::filesystem::path gan_checkpoint_path() const;
  std::filesystem::path synthetic_manifest_path() const;

  /// Module configs with the global seed folded in.
  synth::ConfoundConfig confound_config() const;
  gda::GanConfig gan_config() const;
  model::BackboneConfig model_config() const;
};

/// Stable derived seed for a named sub-job.
std::uint64_t derive_seed(std::uint64_t seed, const std::string& name);

/// The preprocessing actually applied: colour constancy is off when
/// model.use_color_constancy is false.
PreprocessConfig effective_preprocess(const RunConfig& cfg);

/// Hair removal (if enabled), colour constancy, then resize to `size`.
Image preprocess_image(const Image& image, const PreprocessConfig& cfg, int size);
synth::Dataset preprocess_dataset(const synth::Dataset& data, const PreprocessConfig& cfg, int size, int jobs);

// ---------------------------------------------------------------- synth

struct SynthOutput {
  synth::SplitData data;
  double train_phi = 0.0;
  double test_phi = 0.0;
};

SynthOutput make_dataset(const RunConfig& cfg);
/// Manifest plus a JSON sidecar (`<manifest>.json`) holding the config echo
/// and the realized correlations.
void write_dataset(const SynthOutput& out, const RunConfig& cfg);

// ---------------------------------------------------------------- gda

/// Real melanoma-positive rows of the train split.
synth::Dataset gan_positives(const synth::Dataset& data);

gda::GanPair<float> fit_gan(const synth::Dataset& data, const RunConfig& cfg);
void save_gan(const gda::GanPair<float>& pair, const RunConfig& cfg, const std::filesystem::path& path);
/// Rebuilds the generator from a checkpoint; its architecture comes from the
/// config echo stored inside.
gda::GanPair<float> load_gan(const std::filesystem::path& path);

/// Floor used by the diversity filter for these references.
double diversity_floor(const std::vector<Image>& refs, const GdaOptions& opts);

struct SynthesisResult {
  gda::SampleReport report;
  double mse_floor = 0.0;
};

/// n filtered synthetic positives. Candidate indices are fixed, so the
/// first m samples of a run for n >= m equal a run for m.
SynthesisResult synthesize(gda::GanPair<float>& pair, const synth::Dataset& data, int n, const RunConfig& cfg);

// ---------------------------------------------------------------- train

struct FoldOutcome {
  int fold = 0;
  std::optional<metrics::FoldReport> report;
  std::vector<model::EpochLog> log;
  ad::ParamSet<float> params;
  std::string error_kind;
  std::string error;
};

struct CvResult {
  std::vector<FoldOutcome> folds;
  /// Over the folds that succeeded; empty when none did.
  std::optional<metrics::AucSummary> summary;
  bool ok() const;
};

/// Stratified k-fold over the real and toy rows of the train split. Every
/// fold trains on its k - 1 folds plus `synthetic` and is scored on the
/// held-out fold or the test split per eval_split. folds = 1 trains on the
/// whole train split and needs eval_split = test. Data must already be
/// preprocessed. Folds run in parallel with `jobs`; a failing fold is
/// recorded and the others still run.
CvResult cross_validate(const synth::Dataset& data, const synth::Dataset& synthetic, const RunConfig& cfg);

nlohmann::json fold_json(const FoldOutcome& fold, const RunConfig& cfg);
nlohmann::json aggregate_json(const CvResult& cv, const RunConfig& cfg);

// ---------------------------------------------------------------- sweep

struct SweepRow {
  int n_synthetic = 0;
  std::optional<metrics::AucSummary> summary;
  std::string error;
};

/// Runs cross_validate once per count (sorted, deduplicated) with the first
/// `count` synthetic samples; a failed count is recorded and the sweep
/// continues. `synthetic` must hold at least the largest count.
std::vector<SweepRow> sweep(const synth::Dataset& data, const synth::Dataset& synthetic, std::vector<int> counts,
                            const RunConfig& cfg);
/// `n_synthetic,mean_auc,std_auc`; a failed count prints "nan" AUCs.
std::string sweep_csv(const std::vector<SweepRow>& rows);

}  // namespace derm::pipeline
