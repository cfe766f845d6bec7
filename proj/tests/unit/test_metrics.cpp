#include <doctest.h>

#include <cmath>
#include <random>

#include "derm/error.hpp"
#include "derm/metrics.hpp"

using namespace derm;
using namespace derm::metrics;

namespace {

// O(n^2) pairwise oracle, accumulated in half-credits so the final division
// is the only rounding step.
double mann_whitney(const std::vector<double>& s, const std::vector<int>& y) {
  std::int64_t half_credits = 0, pos = 0, neg = 0;
  for (int v : y) (v ? pos : neg) += 1;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) half_credits += s[i] > s[j] ? 2 : (s[i] == s[j] ? 1 : 0);
  return static_cast<double>(half_credits) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

}  // namespace

TEST_CASE("roc_curve examples") {
  CHECK(roc_curve(std::vector<double>{0.9, 0.1}, std::vector<int>{1, 0}) ==
        std::vector<RocPoint>{{0, 0}, {0, 1}, {1, 1}});
  CHECK(roc_curve(std::vector<double>{0.5, 0.5, 0.5}, std::vector<int>{1, 0, 0}) ==
        std::vector<RocPoint>{{0, 0}, {1, 1}});

  const std::vector<double> s{0.9, 0.8, 0.8, 0.6, 0.4, 0.2};
  const std::vector<int> y{1, 1, 0, 0, 1, 0};
  const auto roc = roc_curve(s, y);
  const std::vector<RocPoint> hand{{0, 0}, {0, 1.0 / 3}, {1.0 / 3, 2.0 / 3}, {2.0 / 3, 2.0 / 3}, {2.0 / 3, 1}, {1, 1}};
  REQUIRE(roc.size() == hand.size());
  for (std::size_t i = 0; i < hand.size(); ++i) {
    CHECK(roc[i].fpr == doctest::Approx(hand[i].fpr).epsilon(1e-15));
    CHECK(roc[i].tpr == doctest::Approx(hand[i].tpr).epsilon(1e-15));
  }
  CHECK(auc(s, y) == doctest::Approx(6.5 / 9.0).epsilon(1e-15));

  CHECK_THROWS_AS(roc_curve(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), DegenerateMetricError);
  CHECK_THROWS_AS(auc(std::vector<double>{0.1, 0.2}, std::vector<int>{0, 0}), DegenerateMetricError);
}

TEST_CASE("auc examples") {
  CHECK(auc(std::vector<double>{0.2, 0.3, 0.8, 0.9}, std::vector<int>{0, 0, 1, 1}) == 1.0);
  CHECK(auc(std::vector<double>{0.4, 0.4, 0.4, 0.4}, std::vector<int>{0, 1, 0, 1}) == 0.5);
}

TEST_CASE("auc properties on random instances with ties") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 49);
    std::vector<double> s(n);
    std::vector<int> y(n);
    std::uniform_int_distribution<int> level(0, 6);  // coarse grid injects ties
    for (int i = 0; i < n; ++i) {
      s[i] = trial % 2 ? level(rng) / 6.0 : std::uniform_real_distribution<double>(-3, 3)(rng);
      y[i] = static_cast<int>(rng() % 2);
    }
    y[0] = 1;
    y[1] = 0;
    const double a = auc(s, y);
    CHECK(a == mann_whitney(s, y));

    std::vector<double> cubed(s);
    for (double& v : cubed) v = v * v * v;
    CHECK(auc(cubed, y) == a);

    std::vector<int> flipped(y);
    for (int& v : flipped) v = 1 - v;
    const AucRatio r = auc_ratio(s, y), rf = auc_ratio(s, flipped);
    CHECK(r.twice_area + rf.twice_area == 2 * r.n_pos * r.n_neg);
    CHECK(std::abs(a + auc(s, flipped) - 1.0) <= 2e-16);

    std::vector<std::size_t> perm(n);
    for (int i = 0; i < n; ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> ps(n);
    std::vector<int> py(n);
    for (int i = 0; i < n; ++i) {
      ps[i] = s[perm[i]];
      py[i] = y[perm[i]];
    }
    CHECK(auc(ps, py) == a);

    const auto roc = roc_curve(s, y);
    CHECK(roc.front() == RocPoint{0, 0});
    CHECK(roc.back() == RocPoint{1, 1});
    for (std::size_t i = 1; i < roc.size(); ++i) {
      CHECK(roc[i].fpr >= roc[i - 1].fpr);
      CHECK(roc[i].tpr >= roc[i - 1].tpr);
    }
  }
}

TEST_CASE("aggregate") {
  const auto one = aggregate(std::vector<double>{0.8});
  CHECK(one.mean == 0.8);
  CHECK(one.std == 0.0);
  CHECK(one.single_fold);
  const auto flat = aggregate(std::vector<double>{0.9, 0.9, 0.9});
  CHECK(flat.mean == doctest::Approx(0.9));
  CHECK(flat.std == doctest::Approx(0.0));
  const auto two = aggregate(std::vector<double>{0.92, 0.94});
  CHECK(two.mean == doctest::Approx(0.93).epsilon(1e-14));
  CHECK(two.std == doctest::Approx(0.0141421356).epsilon(1e-8));
  CHECK_THROWS_AS(aggregate(std::vector<double>{}), ContractError);
}

TEST_CASE("fold report json") {
  const auto rep = make_fold_report(3, std::vector<double>{0.1, 0.7, 0.4, 0.4}, std::vector<int>{0, 1, 1, 0});
  const auto j = to_json(rep);
  CHECK(j.at("fold") == 3);
  CHECK(j.at("n_pos") == 2);
  CHECK(j.at("n_neg") == 2);
  CHECK(j.at("roc").at(0) == nlohmann::json::array({0.0, 0.0}));
  const auto back = fold_report_from_json(nlohmann::json::parse(j.dump()));
  CHECK(back.auc == rep.auc);
  CHECK(back.roc == rep.roc);
}
