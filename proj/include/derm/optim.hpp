#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "derm/autodiff/graph.hpp"

namespace derm::optim {

using ad::ArrayX;
using ad::GradMap;
using ad::ParamSet;

/// Bias-corrected Adam moments for one parameter group.
template <typename Scalar>
struct AdamState {
  double eta = 3e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t t = 0;
  std::map<std::string, ArrayX<Scalar>> m;
  std::map<std::string, ArrayX<Scalar>> v;
};

/// One Adam update:
///   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2,
///   p <- p - step_scale * eta * m_hat / (sqrt(v_hat) + eps).
/// Parameters absent from `grads` are left untouched (no moment decay).
/// Throws ParameterError on unknown gradient keys or shape mismatch.
template <typename Scalar>
void adam_step(ParamSet<Scalar>& params, const GradMap<Scalar>& grads, AdamState<Scalar>& state,
               double step_scale = 1.0);

template <typename Scalar>
struct RmspropState {
  double eta = 2e-4;
  double rho = 0.9;
  double epsilon = 1e-8;
  std::map<std::string, ArrayX<Scalar>> s;
};

/// s <- rho s + (1 - rho) g^2;  p <- p - eta g / (sqrt(s) + eps).
template <typename Scalar>
void rmsprop_step(ParamSet<Scalar>& params, const GradMap<Scalar>& grads, RmspropState<Scalar>& state);

/// Clamps every value of every parameter into [-c, c].
template <typename Scalar>
void clip_values(ParamSet<Scalar>& params, double c);

/// The three disjoint trainable sets of the classifier: extractor (f),
/// melanoma head (m) and hair head (h), each with its own Adam state.
template <typename Scalar>
struct ParamGroups {
  ParamSet<Scalar> theta_f;
  ParamSet<Scalar> theta_m;
  ParamSet<Scalar> theta_h;
  AdamState<Scalar> state_f;
  AdamState<Scalar> state_m;
  AdamState<Scalar> state_h;

  /// Sets the same hyperparameters on all three states.
  void configure(double eta, double beta1, double beta2, double epsilon);
  /// Throws WiringError when a name appears in more than one group.
  void check_disjoint() const;
  ParamSet<Scalar> merged() const;
};

/// Joint update of the adversarial classifier.
///
/// `grads_m` come from the melanoma loss, `grads_h` from the hair loss taken
/// through the gradient-reversal node, so their extractor entries already
/// carry the -lambda factor. Then
///   theta_m: Adam on grads_m,
///   theta_h: Adam on grads_h with step eta * lambda,
///   theta_f: Adam on grads_m + grads_h (melanoma plus reversed hair).
/// A melanoma gradient on theta_h, a hair gradient on theta_m, or a key that
/// belongs to no group raises WiringError.
template <typename Scalar>
void joint_step(ParamGroups<Scalar>& groups, const GradMap<Scalar>& grads_m, const GradMap<Scalar>& grads_h,
                double lambda);

}  // namespace derm::optim
