#include "derm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "derm/error.hpp"

namespace derm::metrics {

namespace {

struct Vertex {
  std::int64_t fp = 0;
  std::int64_t tp = 0;
};

// Confusion counts after each distinct-score threshold, highest score first.
std::vector<Vertex> sweep(std::span<const double> scores, std::span<const int> labels, std::int64_t& n_pos,
                          std::int64_t& n_neg) {
  if (scores.size() != labels.size())
    throw DimensionError("roc: " + std::to_string(scores.size()) + " scores for " +
                         std::to_string(labels.size()) + " labels");
  n_pos = n_neg = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1)
      throw DegenerateMetricError("roc: label " + std::to_string(i) + " is not binary");
    if (!std::isfinite(scores[i])) throw NumericError("roc: non-finite score at " + std::to_string(i));
    (labels[i] ? n_pos : n_neg) += 1;
  }
  if (n_pos == 0 || n_neg == 0)
    throw DegenerateMetricError("roc: need at least one positive and one negative label");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  std::vector<Vertex> vertices{{0, 0}};
  Vertex cur;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (labels[order[i]] ? cur.tp : cur.fp) += 1;
    const bool group_end = i + 1 == order.size() || scores[order[i + 1]] != scores[order[i]];
    if (group_end) vertices.push_back(cur);
  }
  return vertices;
}

}  // namespace

std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels) {
  std::int64_t n_pos = 0, n_neg = 0;
  const auto vertices = sweep(scores, labels, n_pos, n_neg);
  std::vector<RocPoint> roc;
  roc.reserve(vertices.size());
  for (const Vertex& v : vertices)
    roc.push_back({static_cast<double>(v.fp) / static_cast<double>(n_neg),
                   static_cast<double>(v.tp) / static_cast<double>(n_pos)});
  return roc;
}

AucRatio auc_ratio(std::span<const double> scores, std::span<const int> labels) {
  AucRatio r;
  const auto vertices = sweep(scores, labels, r.n_pos, r.n_neg);
  for (std::size_t i = 1; i < vertices.size(); ++i)
    r.twice_area += (vertices[i].fp - vertices[i - 1].fp) * (vertices[i].tp + vertices[i - 1].tp);
  return r;
}

double auc(std::span<const double> scores, std::span<const int> labels) { return auc_ratio(scores, labels).value(); }

FoldReport make_fold_report(int fold, std::span<const double> scores, std::span<const int> labels) {
  FoldReport rep;
  rep.fold = fold;
  rep.roc = roc_curve(scores, labels);
  const AucRatio r = auc_ratio(scores, labels);
  rep.auc = r.value();
  rep.n_pos = r.n_pos;
  rep.n_neg = r.n_neg;
  return rep;
}

AucSummary aggregate(std::span<const double> fold_aucs) {
  if (fold_aucs.empty()) throw ContractError("aggregate: no fold reports");
  AucSummary s;
  s.folds = fold_aucs.size();
  const double n = static_cast<double>(fold_aucs.size());
  s.mean = std::accumulate(fold_aucs.begin(), fold_aucs.end(), 0.0) / n;
  if (fold_aucs.size() == 1) {
    s.single_fold = true;
    return s;
  }
  double ss = 0.0;
  for (double a : fold_aucs) ss += (a - s.mean) * (a - s.mean);
  s.std = std::sqrt(ss / (n - 1.0));
  return s;
}

AucSummary aggregate(std::span<const FoldReport> reports) {
  std::vector<double> aucs;
  aucs.reserve(reports.size());
  for (const FoldReport& r : reports) aucs.push_back(r.auc);
  return aggregate(std::span<const double>(aucs));
}

nlohmann::json to_json(const FoldReport& report) {
  nlohmann::json roc = nlohmann::json::array();
  for (const RocPoint& p : report.roc) roc.push_back({p.fpr, p.tpr});
  return {{"fold", report.fold}, {"auc", report.auc}, {"n_pos", report.n_pos}, {"n_neg", report.n_neg}, {"roc", roc}};
}

FoldReport fold_report_from_json(const nlohmann::json& j) {
  FoldReport r;
  r.fold = j.at("fold").get<int>();
  r.auc = j.at("auc").get<double>();
  r.n_pos = j.at("n_pos").get<std::int64_t>();
  r.n_neg = j.at("n_neg").get<std::int64_t>();
  for (const auto& p : j.at("roc")) r.roc.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  return r;
}

nlohmann::json to_json(const AucSummary& s) {
  return {{"mean_auc", s.mean}, {"std_auc", s.std}, {"folds", s.folds}, {"single_fold", s.single_fold}};
}

}  // namespace derm::metrics
