#include "derm/optim.hpp"

#include <cmath>

namespace derm::optim {

namespace {

template <typename Scalar>
const ArrayX<Scalar>& checked_grad(const ParamSet<Scalar>& params, const std::string& name,
                                   const ad::Tensor<Scalar>& grad) {
  auto it = params.find(name);
  if (it == params.end()) throw ParameterError("gradient for unknown parameter '" + name + "'");
  if (it->second.shape() != grad.shape())
    throw ParameterError("gradient shape " + ad::shape_str(grad.shape()) + " does not match parameter '" +
                         name + "' of shape " + ad::shape_str(it->second.shape()));
  return grad.data();
}

template <typename Scalar>
GradMap<Scalar> restrict_to(const GradMap<Scalar>& grads, const ParamSet<Scalar>& params) {
  GradMap<Scalar> out;
  for (const auto& [name, g] : grads)
    if (params.count(name)) out.emplace(name, g);
  return out;
}

}  // namespace

template <typename Scalar>
void adam_step(ParamSet<Scalar>& params, const GradMap<Scalar>& grads, AdamState<Scalar>& state,
               double step_scale) {
  if (state.t < 0) throw ParameterError("adam: step counter must be non-negative");
  for (const auto& [name, g] : grads) checked_grad(params, name, g);
  if (grads.empty()) return;

  state.t += 1;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  const Scalar b1 = static_cast<Scalar>(state.beta1);
  const Scalar b2 = static_cast<Scalar>(state.beta2);
  const Scalar eps = static_cast<Scalar>(state.epsilon);
  const Scalar lr = static_cast<Scalar>(state.eta * step_scale);

  for (const auto& [name, grad] : grads) {
    const ArrayX<Scalar>& g = grad.data();
    auto& m = state.m.try_emplace(name, ArrayX<Scalar>::Zero(g.size())).first->second;
    auto& v = state.v.try_emplace(name, ArrayX<Scalar>::Zero(g.size())).first->second;
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.square();
    const ArrayX<Scalar> m_hat = m / static_cast<Scalar>(c1);
    const ArrayX<Scalar> v_hat = v / static_cast<Scalar>(c2);
    params.at(name).data() -= lr * (m_hat / (v_hat.sqrt() + eps));
  }
}

template <typename Scalar>
void rmsprop_step(ParamSet<Scalar>& params, const GradMap<Scalar>& grads, RmspropState<Scalar>& state) {
  for (const auto& [name, g] : grads) checked_grad(params, name, g);
  const Scalar rho = static_cast<Scalar>(state.rho);
  const Scalar eps = static_cast<Scalar>(state.epsilon);
  const Scalar lr = static_cast<Scalar>(state.eta);
  for (const auto& [name, grad] : grads) {
    const ArrayX<Scalar>& g = grad.data();
    auto& s = state.s.try_emplace(name, ArrayX<Scalar>::Zero(g.size())).first->second;
    s = rho * s + (Scalar(1) - rho) * g.square();
    params.at(name).data() -= lr * g / (s.sqrt() + eps);
  }
}

template <typename Scalar>
void clip_values(ParamSet<Scalar>& params, double c) {
  if (!(c > 0)) throw ParameterError("clip constant must be positive");
  const Scalar bound = static_cast<Scalar>(c);
  for (auto& [name, p] : params) p.data() = p.data().max(-bound).min(bound);
}

template <typename Scalar>
void ParamGroups<Scalar>::configure(double eta, double beta1, double beta2, double epsilon) {
  for (AdamState<Scalar>* s : {&state_f, &state_m, &state_h}) {
    s->eta = eta;
    s->beta1 = beta1;
    s->beta2 = beta2;
    s->epsilon = epsilon;
  }
}

template <typename Scalar>
void ParamGroups<Scalar>::check_disjoint() const {
  const auto overlap = [](const ParamSet<Scalar>& a, const ParamSet<Scalar>& b) {
    for (const auto& [name, _] : a)
      if (b.count(name)) throw WiringError("parameter '" + name + "' belongs to two groups");
  };
  overlap(theta_f, theta_m);
  overlap(theta_f, theta_h);
  overlap(theta_m, theta_h);
}

template <typename Scalar>
ParamSet<Scalar> ParamGroups<Scalar>::merged() const {
  ParamSet<Scalar> all = theta_f;
  all.insert(theta_m.begin(), theta_m.end());
  all.insert(theta_h.begin(), theta_h.end());
  return all;
}

template <typename Scalar>
void joint_step(ParamGroups<Scalar>& groups, const GradMap<Scalar>& grads_m, const GradMap<Scalar>& grads_h,
                double lambda) {
  if (!(lambda >= 0.0)) throw ParameterError("joint_step: lambda must be non-negative");
  const auto owned = [&](const std::string& name) {
    return groups.theta_f.count(name) || groups.theta_m.count(name) || groups.theta_h.count(name);
  };
  for (const auto& [name, _] : grads_m) {
    if (groups.theta_h.count(name))
      throw WiringError("melanoma-loss gradient reached hair-head parameter '" + name + "'");
    if (!owned(name)) throw WiringError("gradient for parameter '" + name + "' outside all groups");
  }
  for (const auto& [name, _] : grads_h) {
    if (groups.theta_m.count(name))
      throw WiringError("hair-loss gradient reached melanoma-head parameter '" + name + "'");
    if (!owned(name)) throw WiringError("gradient for parameter '" + name + "' outside all groups");
  }

  GradMap<Scalar> extractor = restrict_to(grads_m, groups.theta_f);
  for (const auto& [name, g] : restrict_to(grads_h, groups.theta_f)) {
    auto [it, inserted] = extractor.try_emplace(name, g);
    if (!inserted) {
      if (it->second.shape() != g.shape())
        throw ParameterError("extractor gradients for '" + name + "' disagree in shape");
      it->second.data() += g.data();
    }
  }

  adam_step(groups.theta_m, restrict_to(grads_m, groups.theta_m), groups.state_m);
  adam_step(groups.theta_h, restrict_to(grads_h, groups.theta_h), groups.state_h, lambda);
  adam_step(groups.theta_f, extractor, groups.state_f);
}

#define DERM_INSTANTIATE_OPTIM(S)                                                                \
  template void adam_step<S>(ParamSet<S>&, const GradMap<S>&, AdamState<S>&, double);            \
  template void rmsprop_step<S>(ParamSet<S>&, const GradMap<S>&, RmspropState<S>&);              \
  template void clip_values<S>(ParamSet<S>&, double);                                            \
  template struct ParamGroups<S>;                                                                \
  template void joint_step<S>(ParamGroups<S>&, const GradMap<S>&, const GradMap<S>&, double);

DERM_INSTANTIATE_OPTIM(float)
DERM_INSTANTIATE_OPTIM(double)

#undef DERM_INSTANTIATE_OPTIM

}  // namespace derm::optim
