#pragma once

// Central finite-difference oracle for autodiff gradients. Independent of the
// backward rules: it only ever evaluates forward values.

#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <string>

#include "derm/autodiff/ops.hpp"

namespace derm::test {

using ad::GradMap;
using ad::Graph;
using ad::ParamSet;
using ad::TensorD;
using ad::Var;

/// Builds a loss on a fresh graph from the named parameters.
using LossBuilder = std::function<Var(Graph<double>&, const std::map<std::string, Var>&)>;

inline TensorD random_tensor(ad::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  TensorD t(std::move(shape));
  for (ad::Index i = 0; i < t.size(); ++i) t[i] = u(rng);
  return t;
}

/// Scalar projection <v, weights>; turns any output into a loss whose
/// gradient exercises every output element.
inline Var project(Graph<double>& g, Var v, const TensorD& weights) {
  const auto n = g.value(v).size();
  Var flat = ad::reshape(g, v, {1, n});
  Var w = g.constant(weights.reshaped({1, n}));
  Var b = g.constant(TensorD::zeros({1}));
  return ad::reshape(g, ad::dense(g, flat, w, b), {1});
}

inline double evaluate(const ParamSet<double>& params, const LossBuilder& build, GradMap<double>* grads) {
  Graph<double> g;
  std::map<std::string, Var> vars;
  for (const auto& [name, value] : params) vars[name] = g.param(name, value);
  Var loss = build(g, vars);
  const double value = g.value(loss).item();
  if (grads) *grads = g.backward(loss);
  return value;
}

struct GradCheckResult {
  double worst_relative_error = 0.0;
  std::string worst_param;
};

/// Per-parameter norm-wise relative error ||a - n|| / max(||a|| + ||n||, tiny)
/// between analytic and central-difference gradients.
inline GradCheckResult gradcheck(const ParamSet<double>& params, const LossBuilder& build, double h = 1e-5) {
  GradMap<double> analytic;
  evaluate(params, build, &analytic);
  GradCheckResult result;
  for (const auto& [name, value] : params) {
    TensorD numeric(value.shape());
    ParamSet<double> probe = params;
    for (ad::Index i = 0; i < value.size(); ++i) {
      const double x0 = value[i];
      probe[name][i] = x0 + h;
      const double up = evaluate(probe, build, nullptr);
      probe[name][i] = x0 - h;
      const double down = evaluate(probe, build, nullptr);
      probe[name][i] = x0;
      numeric[i] = (up - down) / (2.0 * h);
    }
    const auto it = analytic.find(name);
    const TensorD a = it == analytic.end() ? TensorD::zeros(value.shape()) : it->second;
    const double diff = (a.data() - numeric.data()).matrix().norm();
    const double scale = a.data().matrix().norm() + numeric.data().matrix().norm();
    const double rel = diff / std::max(scale, 1e-12);
    if (rel > result.worst_relative_error) {
      result.worst_relative_error = rel;
      result.worst_param = name;
    }
  }
  return result;
}

}  // namespace derm::test
