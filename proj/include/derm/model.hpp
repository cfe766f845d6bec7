#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "derm/autodiff/ops.hpp"
#include "derm/optim.hpp"
#include "derm/synthdata.hpp"

namespace derm::model {

struct ConvBlockSpec {
  int channels = 8;
  int stride = 2;
  friend bool operator==(const ConvBlockSpec&, const ConvBlockSpec&) = default;
};

/// Small CNN extractor: each block is a 3x3 convolution (padding 1) with a
/// channel bias and relu; the last block is globally average pooled and
/// projected by a dense layer plus relu to the feature vector F_e.
struct BackboneConfig {
  int input_size = 64;
  std::vector<ConvBlockSpec> blocks{{8, 2}, {16, 2}, {32, 2}};
  int kernel = 3;
  int feature_dim = 64;
  /// Nonlinearity on the feature vector F. tanh keeps F bounded, so the
  /// extractor cannot defeat the hair head by rescaling features.
  enum class FeatureActivation { relu, tanh };
  FeatureActivation feature_activation = FeatureActivation::tanh;
  bool use_color_constancy = true;
  double lambda = 1.0;
  /// When false the hair head is never built; used as the reference for the
  /// lambda = 0 reduction.
  bool hair_branch = true;
  int epochs = 10;
  int batch_size = 64;
  double eta = 3e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;

  /// Throws ConfigError on any invalid field.
  void validate() const;
};

/// Parameter names: extractor "f.conv<i>.w", "f.conv<i>.b", "f.fc.w", "f.fc.b";
/// melanoma head "m.w", "m.b"; hair head "h.w", "h.b".
template <typename Scalar>
optim::ParamGroups<Scalar> init_params(const BackboneConfig& cfg);

/// Graph handles for every parameter of a ParamSet.
using Bound = std::map<std::string, ad::Var>;

template <typename Scalar>
Bound bind_params(ad::Graph<Scalar>& g, const ad::ParamSet<Scalar>& params);

/// Images as an NCHW tensor of (value - 0.5). Throws DimensionError when an
/// image is not input_size square.
template <typename Scalar>
ad::Tensor<Scalar> to_batch(const std::vector<const Image*>& images, int input_size);

/// F_e: [N, feature_dim].
template <typename Scalar>
ad::Var forward_features(ad::Graph<Scalar>& g, ad::Var x, const Bound& p, const BackboneConfig& cfg);

/// softmax(W_m F_e + b_m): [N, 2].
template <typename Scalar>
ad::Var melanoma_head(ad::Graph<Scalar>& g, ad::Var features, const Bound& p);

/// softmax(U_h GRL_lambda(F_e) + v_h): [N, 2]. The forward value does not
/// depend on lambda.
template <typename Scalar>
ad::Var hair_head(ad::Graph<Scalar>& g, ad::Var features, const Bound& p, double lambda);

/// One-hot [N, 2] rows from binary labels.
template <typename Scalar>
ad::Tensor<Scalar> one_hot(const std::vector<int>& labels);

struct EpochLog {
  int epoch = 0;
  double melanoma_loss = 0.0;  // sample-weighted mean over the epoch
  double hair_loss = 0.0;      // mean over hair-eligible samples (0 if none)
  double total_loss = 0.0;     // melanoma_loss + lambda * hair_loss
  friend bool operator==(const EpochLog&, const EpochLog&) = default;
};

template <typename Scalar>
struct TrainResult {
  optim::ParamGroups<Scalar> groups;
  std::vector<EpochLog> log;
};

/// Joint training. Each batch builds L_m over all rows and, if the hair
/// branch is on, L_h over rows whose source is not synthetic_gan, taken
/// through the reversal layer. One backward of L_m + L_h feeds joint_step,
/// which supplies the lambda weighting (reversal on theta_f, step scale on
/// theta_h). Batches are reshuffled per epoch from (seed, epoch). A
/// non-finite loss raises DivergenceError naming the epoch and batch.
template <typename Scalar>
TrainResult<Scalar> train(const synth::Dataset& data, const BackboneConfig& cfg);

/// Continues training from existing groups (used by tests that inspect
/// single steps).
template <typename Scalar>
void train_epochs(optim::ParamGroups<Scalar>& groups, const synth::Dataset& data, const BackboneConfig& cfg,
                  int first_epoch, int n_epochs, std::vector<EpochLog>* log);

/// p(melanoma = 1) per image. Evaluated sample by sample through the
/// extractor, so a score does not depend on the other images in the call.
template <typename Scalar>
std::vector<double> predict_proba(const std::vector<const Image*>& images, const ad::ParamSet<Scalar>& params,
                                  const BackboneConfig& cfg);

template <typename Scalar>
std::vector<double> predict_proba(const synth::Dataset& data, const ad::ParamSet<Scalar>& params,
                                  const BackboneConfig& cfg);

/// Splits a merged parameter set back into the three groups by prefix.
template <typename Scalar>
optim::ParamGroups<Scalar> groups_from(const ad::ParamSet<Scalar>& merged, const BackboneConfig& cfg);

}  // namespace derm::model
