#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "wps/core.hpp"
#include "wps/data.hpp"

namespace wps {

// Per-category pixel tallies over the foreground categories [0, C).
class ConfusionAccumulator {
 public:
  explicit ConfusionAccumulator(int num_categories = 0);

  void accumulate(const SemanticSegmentation& gt, const SemanticSegmentation& pred);
  void merge(const ConfusionAccumulator& other);

  int num_categories() const { return num_categories_; }
  const std::vector<std::int64_t>& intersection() const { return intersection_; }
  const std::vector<std::int64_t>& union_pixels() const { return union_; }
  const std::vector<std::int64_t>& gt_pixels() const { return gt_; }
  const std::vector<std::int64_t>& pred_pixels() const { return pred_; }

  bool operator==(const ConfusionAccumulator&) const = default;

 private:
  int num_categories_;
  std::vector<std::int64_t> intersection_, union_, gt_, pred_;
};

// Means over categories with nonzero union / nonzero ground truth.
// EmptyEvaluation when no category qualifies.
double compute_miou(const ConfusionAccumulator& acc);
double compute_macc(const ConfusionAccumulator& acc);

struct CategoryMetrics {
  int id = 0;
  std::string name;
  std::optional<double> iou;  // absent when union is empty
  std::optional<double> acc;  // absent when no ground-truth pixels
  std::int64_t gt_pixels = 0;
};

struct MetricsReport {
  std::vector<CategoryMetrics> per_category;
  double miou = 0.0;
  double macc = 0.0;
  int num_images = 0;
  std::string config_hash;

  std::string to_json() const;
  static MetricsReport from_json(const std::string& text);
  void write(const std::string& path) const;
};

MetricsReport make_report(const ConfusionAccumulator& acc, const std::vector<std::string>& names, int num_images,
                          const Config& cfg);

// The predictor never runs inside the evaluation scope, so it cannot read
// ground truth; masks are read only for scoring.
using Predictor = std::function<SemanticSegmentation(const DatasetRecord&)>;
MetricsReport evaluate_dataset(const Dataset& dataset, const Predictor& predictor, const Config& cfg);

}  // namespace wps
