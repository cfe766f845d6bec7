#include <doctest.h>

#include <cmath>
#include <random>

#include "derm/optim.hpp"

using namespace derm;
using namespace derm::optim;
using ad::TensorD;

namespace {

ParamSet<double> scalar_param(const std::string& name, double v) { return {{name, TensorD({1}, {v})}}; }
ad::GradMap<double> scalar_grad(const std::string& name, double g) { return {{name, TensorD({1}, {g})}}; }

}  // namespace

TEST_CASE("adam_step") {
  SUBCASE("zero gradient leaves parameters unchanged for any t") {
    std::mt19937_64 rng(1);
    for (std::int64_t t : {0, 1, 7, 1000}) {
      ParamSet<double> p{{"w", TensorD({3}, {0.1, -2.0, 5.0})}};
      const ParamSet<double> before = p;
      AdamState<double> s;
      s.eta = 0.1;
      s.t = t;
      adam_step(p, {{"w", TensorD::zeros({3})}}, s);
      CHECK(p.at("w") == before.at("w"));
      CHECK(s.t == t + 1);
    }
  }
  SUBCASE("first step with bias correction") {
    auto p = scalar_param("w", 1.0);
    AdamState<double> s;
    s.eta = 0.1;
    adam_step(p, scalar_grad("w", 2.0), s);
    CHECK(std::abs(p.at("w").item() - (1.0 - 0.1 * 2.0 / (2.0 + 1e-8))) < 1e-15);
  }
  SUBCASE("three-step trace matches frozen high-precision values") {
    // theta0 = 1, gradients 2, -1, 0.5, eta 0.1, default betas; values from a
    // 40-digit evaluation of the bias-corrected recurrence.
    const double expected[] = {0.9000000004999999975, 0.87336629670243135784, 0.83932338213894247183};
    auto p = scalar_param("w", 1.0);
    AdamState<double> s;
    s.eta = 0.1;
    const double grads[] = {2.0, -1.0, 0.5};
    for (int i = 0; i < 3; ++i) {
      adam_step(p, scalar_grad("w", grads[i]), s);
      CHECK(std::abs(p.at("w").item() - expected[i]) < 1e-10);
    }
  }
  SUBCASE("errors") {
    auto p = scalar_param("w", 1.0);
    AdamState<double> s;
    CHECK_THROWS_AS(adam_step(p, {{"w", TensorD::zeros({2})}}, s), ParameterError);
    CHECK_THROWS_AS(adam_step(p, scalar_grad("other", 1.0), s), ParameterError);
  }
  SUBCASE("parameters without gradient are skipped") {
    ParamSet<double> p{{"a", TensorD({1}, {1.0})}, {"b", TensorD({1}, {1.0})}};
    AdamState<double> s;
    s.eta = 0.1;
    adam_step(p, scalar_grad("a", 1.0), s);
    CHECK(p.at("b").item() == 1.0);
    CHECK(p.at("a").item() < 1.0);
  }
}

TEST_CASE("rmsprop_step") {
  SUBCASE("zero gradient") {
    auto p = scalar_param("w", 0.3);
    RmspropState<double> s;
    rmsprop_step(p, scalar_grad("w", 0.0), s);
    CHECK(p.at("w").item() == 0.3);
  }
  SUBCASE("hand trace under constant gradient") {
    const double theta[] = {-0.00063245551203367649886, -0.0010912869692484844827, -0.0014754763370660601244,
                            -0.0018165230753363887891, -0.0021290574083867146823};
    auto p = scalar_param("w", 0.0);
    RmspropState<double> s;  // rho 0.9, eta 2e-4, eps 1e-8
    double prev = 0.0, prev_step = 1.0;
    for (int i = 0; i < 5; ++i) {
      rmsprop_step(p, scalar_grad("w", 1.0), s);
      const double now = p.at("w").item();
      CHECK(std::abs(now - theta[i]) < 1e-10);
      const double step = prev - now;
      CHECK(step < prev_step);
      CHECK(step > s.eta);
      prev_step = step;
      prev = now;
    }
  }
  SUBCASE("shape mismatch") {
    auto p = scalar_param("w", 0.0);
    RmspropState<double> s;
    CHECK_THROWS_AS(rmsprop_step(p, {{"w", TensorD::zeros({3})}}, s), ParameterError);
  }
}

TEST_CASE("clip_values") {
  ParamSet<double> p{{"w", TensorD({4}, {-1.0, -0.001, 0.002, 0.5})}};
  clip_values(p, 0.01);
  CHECK(p.at("w") == TensorD({4}, {-0.01, -0.001, 0.002, 0.01}));
}

namespace {

ParamGroups<double> scalar_groups(double eta) {
  ParamGroups<double> g;
  g.theta_f = scalar_param("f", 1.0);
  g.theta_m = scalar_param("m", 0.5);
  g.theta_h = scalar_param("h", -0.2);
  g.configure(eta, 0.9, 0.999, 1e-8);
  return g;
}

// Direct substitution into the three update lines, with g_{k,1}, g_{k,2}
// the bias-corrected first and second moments of each line's gradient.
struct Moments {
  double m = 0, v = 0;
  int t = 0;
  double direction(double g) {
    ++t;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    return (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
  }
};

}  // namespace

TEST_CASE("joint_step matches the three update cases on scalars") {
  const double eta = 0.01, lambda = 0.5;
  auto groups = scalar_groups(eta);
  Moments mm, mh, mf;
  double f = 1.0, m = 0.5, h = -0.2;
  const double gm_m[] = {0.3, -0.1, 0.2}, gh_h[] = {-0.4, 0.1, 0.05};
  const double gm_f[] = {0.6, 0.2, -0.3}, gh_f_plain[] = {0.25, -0.5, 0.1};
  for (int step = 0; step < 3; ++step) {
    const double reversed = -lambda * gh_f_plain[step];
    ad::GradMap<double> grads_m{{"f", TensorD({1}, {gm_f[step]})}, {"m", TensorD({1}, {gm_m[step]})}};
    ad::GradMap<double> grads_h{{"f", TensorD({1}, {reversed})}, {"h", TensorD({1}, {gh_h[step]})}};
    joint_step(groups, grads_m, grads_h, lambda);

    m -= eta * mm.direction(gm_m[step]);
    h -= eta * lambda * mh.direction(gh_h[step]);
    f -= eta * mf.direction(gm_f[step] + reversed);
    CHECK(std::abs(groups.theta_m.at("m").item() - m) < 1e-12);
    CHECK(std::abs(groups.theta_h.at("h").item() - h) < 1e-12);
    CHECK(std::abs(groups.theta_f.at("f").item() - f) < 1e-12);
  }
}

TEST_CASE("joint_step lambda elimination and sign") {
  SUBCASE("lambda 0 freezes the hair head and matches backbone-only extractor updates") {
    auto joint = scalar_groups(0.01);
    auto plain = scalar_groups(0.01);
    for (int step = 0; step < 5; ++step) {
      const double gf = 0.1 * (step + 1), gm = -0.2 + 0.05 * step;
      joint_step(joint, {{"f", TensorD({1}, {gf})}, {"m", TensorD({1}, {gm})}},
                 {{"f", TensorD({1}, {-0.0 * 0.7})}, {"h", TensorD({1}, {0.9})}}, 0.0);
      adam_step(plain.theta_f, scalar_grad("f", gf), plain.state_f);
      adam_step(plain.theta_m, scalar_grad("m", gm), plain.state_m);
      CHECK(joint.theta_f.at("f") == plain.theta_f.at("f"));
      CHECK(joint.theta_m.at("m") == plain.theta_m.at("m"));
      CHECK(joint.theta_h.at("h").item() == -0.2);
    }
  }
  SUBCASE("hair contribution moves the extractor against hair-loss descent") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n01;
    for (int trial = 0; trial < 50; ++trial) {
      const double hair_plain = n01(rng);
      auto with = scalar_groups(0.01);
      with.theta_m.clear();
      with.theta_h.clear();
      const double f0 = with.theta_f.at("f").item();
      joint_step(with, {}, {{"f", TensorD({1}, {-1.0 * hair_plain})}}, 1.0);
      const double delta = with.theta_f.at("f").item() - f0;
      // Plain hair descent would move by -eta * sign(g); the reversed update moves the other way.
      CHECK(delta * (-hair_plain) <= 0.0);
    }
  }
  SUBCASE("theta_h update equals plain Adam on hair gradients with eta * lambda") {
    auto groups = scalar_groups(0.02);
    AdamState<double> ref;
    ref.eta = 0.02 * 0.3;
    auto h = scalar_param("h", -0.2);
    for (double g : {0.4, -0.3, 0.8}) {
      joint_step(groups, {}, scalar_grad("h", g), 0.3);
      adam_step(h, scalar_grad("h", g), ref);
      CHECK(std::abs(groups.theta_h.at("h").item() - h.at("h").item()) < 1e-15);
    }
  }
  SUBCASE("wiring errors") {
    auto groups = scalar_groups(0.01);
    CHECK_THROWS_AS(joint_step(groups, scalar_grad("h", 1.0), {}, 1.0), WiringError);
    CHECK_THROWS_AS(joint_step(groups, {}, scalar_grad("m", 1.0), 1.0), WiringError);
    CHECK_THROWS_AS(joint_step(groups, scalar_grad("zzz", 1.0), {}, 1.0), WiringError);
    groups.theta_h.emplace("f", TensorD({1}, {0.0}));
    CHECK_THROWS_AS(groups.check_disjoint(), WiringError);
  }
}
