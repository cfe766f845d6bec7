#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "derm/autodiff/ops.hpp"
#include "derm/optim.hpp"
#include "derm/synthdata.hpp"

namespace derm::gda {

struct GanConfig {
  int z_dim = 64;
  /// Power of two, >= 32 for the default pipeline (>= 8 accepted so tests can
  /// run tiny models).
  int img_size = 32;
  /// Generator widths are base * 2^(n_up - 1 - i) for upsampling block i;
  /// critic widths are base * 2^i for downsampling block i.
  int gen_base = 16;
  int critic_base = 16;
  double lr = 2e-4;
  int critic_steps_per_gen = 5;
  double clip_c = 0.01;
  int epochs = 50;
  int batch_size = 16;
  std::uint64_t seed = 0;

  /// Throws ConfigError; a non-power-of-two size is rejected.
  void validate() const;
  /// Stride-2 stages between 4x4 and img_size.
  int stages() const;
};

/// Generator: dense z -> [c0, 4, 4], batch norm, relu; then n_up - 1 blocks of
/// 4x4 stride-2 transpose convolution + batch norm + relu; then a final 4x4
/// stride-2 transpose convolution to 3 channels with bias and tanh.
template <typename Scalar>
struct Generator {
  ad::ParamSet<Scalar> params;
  std::map<std::string, ad::BatchNormStats<Scalar>> bn;
};

/// Critic: n_up blocks of 4x4 stride-2 convolution + bias + leaky relu(0.2),
/// flatten, dense to one unbounded score.
template <typename Scalar>
using Critic = ad::ParamSet<Scalar>;

template <typename Scalar>
Generator<Scalar> build_generator(const GanConfig& cfg);

template <typename Scalar>
Critic<Scalar> build_discriminator(const GanConfig& cfg);

/// Closed-form trainable parameter counts.
std::int64_t generator_param_count(const GanConfig& cfg);
std::int64_t critic_param_count(const GanConfig& cfg);

template <typename Scalar>
std::int64_t count_params(const ad::ParamSet<Scalar>& params);

/// z [N, z_dim] -> images [N, 3, S, S] in [-1, 1]. The generator's params
/// are bound as trainable only when `trainable` is set.
template <typename Scalar>
ad::Var generate(ad::Graph<Scalar>& g, ad::Var z, Generator<Scalar>& gen, const GanConfig& cfg,
                 ad::BatchNormMode mode, bool trainable);

/// images [N, 3, S, S] -> scores [N, 1].
template <typename Scalar>
ad::Var criticize(ad::Graph<Scalar>& g, ad::Var images, const Critic<Scalar>& critic, const GanConfig& cfg,
                  bool trainable);

struct GanEpochLog {
  int epoch = 0;
  double critic_loss = 0.0;
  double generator_loss = 0.0;
  friend bool operator==(const GanEpochLog&, const GanEpochLog&) = default;
};

template <typename Scalar>
struct GanPair {
  GanConfig cfg;
  Generator<Scalar> generator;
  Critic<Scalar> critic;
  optim::RmspropState<Scalar> gen_state;
  optim::RmspropState<Scalar> critic_state;
  std::vector<GanEpochLog> log;
  int epochs_done = 0;
};

/// Image <-> generator space. Images are resized to img_size and mapped
/// from [0, 1] to [-1, 1].
template <typename Scalar>
ad::Tensor<Scalar> to_gan_tensor(const std::vector<const Image*>& images, int img_size);
/// Inverse map of one generated sample back to an 8-bit-grid image in [0, 1].
template <typename Scalar>
Image from_gan_tensor(const ad::Tensor<Scalar>& batch, ad::Index index);

/// Fresh pair with initialized weights and optimizer states.
template <typename Scalar>
GanPair<Scalar> init_gan(const GanConfig& cfg);

/// Wasserstein training with RMSprop and critic weight clipping: every
/// generator step is preceded by critic_steps_per_gen critic steps, and an
/// epoch is ceil(N / batch_size) generator steps. Requires non-empty,
/// all-melanoma positives. A non-finite loss raises DivergenceError naming
/// the epoch.
template <typename Scalar>
GanPair<Scalar> train_dcgan(const synth::Dataset& positives, const GanConfig& cfg);

/// Continues training for n_epochs more epochs.
template <typename Scalar>
void train_more(GanPair<Scalar>& pair, const synth::Dataset& positives, int n_epochs);

/// Eval-mode samples for z drawn from (seed, "z/<i>") for i in [first, first + n).
template <typename Scalar>
std::vector<Image> sample_images(GanPair<Scalar>& pair, std::int64_t first, std::int64_t n, std::uint64_t seed);

struct Nearest {
  std::size_t index = 0;
  double mse = 0.0;
};

/// Argmin and min of the per-pixel MSE against every reference image.
/// Throws ContractError on an empty reference set and DimensionError on a
/// shape mismatch.
Nearest nearest_train_mse(const Image& image, const std::vector<Image>& train);

/// Training images resized to the GAN resolution and quantized; the
/// reference set of the diversity filter.
std::vector<Image> reference_set(const synth::Dataset& train, int img_size);

/// Percentile (0..100, linear interpolation) of all pairwise MSEs.
double pairwise_mse_percentile(const std::vector<Image>& refs, double percentile);

struct SampleReport {
  synth::Dataset samples;
  std::int64_t attempts = 0;
  double acceptance_rate() const {
    return attempts ? static_cast<double>(samples.size()) / static_cast<double>(attempts) : 0.0;
  }
};

/// Draws candidates, drops any with nearest_train_mse < mse_floor against
/// `refs`, and returns exactly n survivors labelled melanoma = 1, hair = 0,
/// source synthetic_gan, ids "synthetic_gan/gan_<i>.png". Candidate i always
/// uses the same z, so output is independent of `jobs`. After
/// max(n, 1) * retry_factor candidates a DiversityError reports the
/// acceptance rate.
template <typename Scalar>
SampleReport sample_synthetic(GanPair<Scalar>& pair, std::int64_t n, const std::vector<Image>& refs,
                              double mse_floor, std::uint64_t seed, int retry_factor = 20, int jobs = 1);

/// Generator weights and batch-norm statistics as named double tensors
/// ("g.*" params, "bn.<layer>.mean" / ".var"), and back.
template <typename Scalar>
std::map<std::string, ad::TensorD> generator_tensors(const GanPair<Scalar>& pair);
template <typename Scalar>
void load_generator_tensors(GanPair<Scalar>& pair, const std::map<std::string, ad::TensorD>& tensors);

}  // namespace derm::gda
