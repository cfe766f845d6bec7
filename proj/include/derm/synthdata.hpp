#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "derm/image.hpp"

namespace derm::synth {

using Rng = std::mt19937_64;

enum class Source { real, synthetic_gan, synthetic_toy };

std::string to_string(Source s);

struct LabeledSample {
  Image image;
  int melanoma = 0;
  int hair = 0;
  Source source = Source::real;
  /// Stable identifier; doubles as the image path relative to the manifest.
  std::string id;
  std::string split = "train";
};

using Dataset = std::vector<LabeledSample>;

std::vector<int> melanoma_labels(const Dataset& d);
std::vector<int> hair_labels(const Dataset& d);

/// Independent RNG stream for one sample, derived from (seed, id).
Rng sample_rng(std::uint64_t seed, std::string_view id);

/// Phi coefficient of two binary label vectors. Throws
/// DegenerateMetricError when either vector is constant.
double phi_coefficient(const std::vector<int>& a, const std::vector<int>& b);

/// Appearance knobs of the toy lesion generator. Class 1 draws its border
/// irregularity, darkness and interior heterogeneity from ranges shifted
/// away from class 0; the ranges overlap so the classes are not separable.
struct LesionStyle {
  std::array<double, 2> irregularity0{0.00, 0.12};
  std::array<double, 2> irregularity1{0.06, 0.24};
  std::array<double, 2> darkness0{0.80, 1.00};
  std::array<double, 2> darkness1{0.60, 0.90};
  std::array<double, 2> heterogeneity0{0.00, 0.10};
  std::array<double, 2> heterogeneity1{0.08, 0.35};
  double noise_sigma = 0.02;
};

/// Sampled geometry and colours of one toy lesion.
struct LesionParams {
  int melanoma = 0;
  double cx = 0.5, cy = 0.5;  // centre, fraction of the image side
  double radius = 0.22;       // mean radius, fraction of the image side
  double aspect = 1.0;        // minor / major axis
  double angle = 0.0;
  double irregularity = 0.0;  // amplitude of the border harmonics
  std::array<double, 6> harmonic_amp{};  // harmonics 3..8, summing to 1
  std::array<double, 6> harmonic_phase{};
  std::array<double, 3> skin{};
  std::array<double, 3> lesion{};
  std::array<double, 3> illuminant{};
  double heterogeneity = 0.0;
  struct Blob {
    double x, y, r, gain;
  };
  std::vector<Blob> blobs;
};

LesionParams sample_lesion_params(int melanoma, Rng& rng, const LesionStyle& style = {});
Image render_lesion(const LesionParams& params, int size, Rng& rng, double noise_sigma = 0.02);

/// Skin-toned background with an elliptical lesion under a random
/// illuminant cast. Throws ParameterError for size < 16 or a non-binary class.
Image gen_lesion_image(int melanoma, int size, Rng& rng, const LesionStyle& style = {});

/// Hair stroke shades (luminance) before jitter.
inline constexpr double kBlackHair = 0.05;
inline constexpr double kGrayHair = 0.45;
inline constexpr double kHairShadeJitter = 0.05;

struct HairResult {
  Image image;
  int hair = 0;
};

/// Draws `n_arcs` anti-aliased circular arcs (width 1-3 px, black or gray).
/// Pixels outside every stroke keep their exact values.
HairResult add_hair_arcs(const Image& image, int n_arcs, Rng& rng);

struct ConfoundConfig {
  int n_train = 2000;
  int n_test = 1000;
  double positive_rate = 0.5;
  /// Positive rate of the test split; negative means positive_rate.
  double test_positive_rate = -1.0;
  /// Target phi coefficient between melanoma and hair in the train split.
  double train_hair_label_correlation = 0.8;
  /// Marginal hair rate in both splits.
  double hair_rate = 0.5;
  int image_size = 64;
  int max_arcs = 6;
  std::uint64_t seed = 0;
  LesionStyle style;
};

struct SplitData {
  Dataset train;
  Dataset test;
};

/// Exact-count construction: the train split holds round(p*n) positives and
/// hair counts per class chosen so the phi coefficient hits the target; the
/// test split uses the same counts at zero correlation. Throws ConfigError
/// when the target is infeasible for the given rates. Images are quantized to
/// the 8-bit grid so an on-disk copy is lossless.
SplitData build_confounded_dataset(const ConfoundConfig& cfg, int jobs = 1);

/// Appends `factor - 1` hair-augmented copies of every sample (arcs 1..max_arcs).
/// factor = 1 returns the input unchanged.
Dataset enlarge_with_hair(const Dataset& d, int factor, int max_arcs, std::uint64_t seed);

struct Fold {
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> val_idx;
};

/// Stratified k-fold split: each class is shuffled and dealt round-robin,
/// so every fold validates floor or ceil of n_class / k members per class.
/// Throws StratificationError when a class has fewer than k members.
std::vector<Fold> stratified_kfold(const std::vector<int>& labels, int k, std::uint64_t seed);

/// Manifest header, exactly as written and required on load.
inline constexpr std::string_view kManifestHeader = "path,melanoma,hair,split";

/// Loads a manifest CSV; images are resolved relative to its directory. The
/// sample id is the path field and the source is read from its first
/// component (synthetic_gan/, synthetic_toy/, anything else is real).
/// Every failure names the offending line.
Dataset load_manifest(const std::filesystem::path& path);

/// Writes each sample's PNG under the manifest directory at its id, then the
/// manifest itself. All writes are atomic.
void save_manifest(const Dataset& d, const std::filesystem::path& path);

/// Manifest text alone, without touching images.
std::string manifest_csv(const Dataset& d);

}  // namespace derm::synth
