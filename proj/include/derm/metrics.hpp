#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

namespace derm::metrics {

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  friend bool operator==(const RocPoint&, const RocPoint&) = default;
};

/// ROC vertices from (0,0) to (1,1), one vertex per distinct score
/// (thresholds swept from the highest score down). Tied scores collapse into
/// one vertex. Throws DegenerateMetricError unless both classes occur.
std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels);

/// Area under the ROC curve as an exact ratio: `twice_area / (2 * n_pos * n_neg)`.
/// The trapezoid rule is evaluated on integer confusion counts, so the same
/// numerator is the Mann-Whitney U statistic with ties counted as one half.
struct AucRatio {
  std::int64_t twice_area = 0;
  std::int64_t n_pos = 0;
  std::int64_t n_neg = 0;
  double value() const {
    return static_cast<double>(twice_area) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
  }
};

AucRatio auc_ratio(std::span<const double> scores, std::span<const int> labels);

/// Trapezoidal AUC; equal to the Mann-Whitney probability P(s+ > s-) + P(s+ = s-)/2.
double auc(std::span<const double> scores, std::span<const int> labels);

struct FoldReport {
  int fold = 0;
  std::vector<RocPoint> roc;
  double auc = 0.0;
  std::int64_t n_pos = 0;
  std::int64_t n_neg = 0;
};

FoldReport make_fold_report(int fold, std::span<const double> scores, std::span<const int> labels);

struct AucSummary {
  double mean = 0.0;
  double std = 0.0;      // sample (n - 1) standard deviation
  bool single_fold = false;  // std reported as 0 by convention
  std::size_t folds = 0;
};

AucSummary aggregate(std::span<const FoldReport> reports);
AucSummary aggregate(std::span<const double> fold_aucs);

/// {fold, auc, n_pos, n_neg, roc: [[fpr, tpr], ...]}
nlohmann::json to_json(const FoldReport& report);
FoldReport fold_report_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AucSummary& summary);

}  // namespace derm::metrics
