#include "wps/evaluation.hpp"

#include <fstream>

#include <json.hpp>

namespace wps {

using nlohmann::json;

ConfusionAccumulator::ConfusionAccumulator(int num_categories)
    : num_categories_(num_categories),
      intersection_(num_categories, 0),
      union_(num_categories, 0),
      gt_(num_categories, 0),
      pred_(num_categories, 0) {}

void ConfusionAccumulator::accumulate(const SemanticSegmentation& gt, const SemanticSegmentation& pred) {
  if (gt.height != pred.height || gt.width != pred.width || gt.labels.size() != pred.labels.size()) {
    throw Error(ErrorCode::kShapeMismatch, "ground truth " + std::to_string(gt.height) + "x" + std::to_string(gt.width) +
                                               " vs prediction " + std::to_string(pred.height) + "x" +
                                               std::to_string(pred.width));
  }
  const int C = num_categories_;
  for (size_t p = 0; p < gt.labels.size(); ++p) {
    const int g = gt.labels[p], q = pred.labels[p];
    if (g < 0 || g > C || q < 0 || q > C) throw Error(ErrorCode::kOutOfBounds, "label outside [0, C]");
    if (g < C) ++gt_[g];
    if (q < C) ++pred_[q];
    if (g == q) {
      if (g < C) {
        ++intersection_[g];
        ++union_[g];
      }
    } else {
      if (g < C) ++union_[g];
      if (q < C) ++union_[q];
    }
  }
}

void ConfusionAccumulator::merge(const ConfusionAccumulator& other) {
  if (other.num_categories_ != num_categories_) throw Error(ErrorCode::kShapeMismatch, "category count differs");
  for (int c = 0; c < num_categories_; ++c) {
    intersection_[c] += other.intersection_[c];
    union_[c] += other.union_[c];
    gt_[c] += other.gt_[c];
    pred_[c] += other.pred_[c];
  }
}

double compute_miou(const ConfusionAccumulator& acc) {
  double sum = 0.0;
  int n = 0;
  for (int c = 0; c < acc.num_categories(); ++c) {
    if (acc.union_pixels()[c] == 0) continue;
    sum += static_cast<double>(acc.intersection()[c]) / static_cast<double>(acc.union_pixels()[c]);
    ++n;
  }
  if (n == 0) throw Error(ErrorCode::kEmptyEvaluation, "no category has a nonzero union");
  return sum / n;
}

double compute_macc(const ConfusionAccumulator& acc) {
  double sum = 0.0;
  int n = 0;
  for (int c = 0; c < acc.num_categories(); ++c) {
    if (acc.gt_pixels()[c] == 0) continue;
    sum += static_cast<double>(acc.intersection()[c]) / static_cast<double>(acc.gt_pixels()[c]);
    ++n;
  }
  if (n == 0) throw Error(ErrorCode::kEmptyEvaluation, "no category has ground-truth pixels");
  return sum / n;
}

namespace {

void summarize(MetricsReport& report) {
  double iou_sum = 0.0, acc_sum = 0.0;
  int iou_n = 0, acc_n = 0;
  for (const auto& c : report.per_category) {
    if (c.iou) {
      iou_sum += *c.iou;
      ++iou_n;
    }
    if (c.acc) {
      acc_sum += *c.acc;
      ++acc_n;
    }
  }
  if (iou_n == 0 || acc_n == 0) throw Error(ErrorCode::kEmptyEvaluation, "report has no scored categories");
  report.miou = iou_sum / iou_n;
  report.macc = acc_sum / acc_n;
}

}  // namespace

MetricsReport make_report(const ConfusionAccumulator& acc, const std::vector<std::string>& names, int num_images,
                          const Config& cfg) {
  MetricsReport report;
  for (int c = 0; c < acc.num_categories(); ++c) {
    CategoryMetrics m;
    m.id = c;
    m.name = c < static_cast<int>(names.size()) ? names[c] : "category_" + std::to_string(c);
    m.gt_pixels = acc.gt_pixels()[c];
    if (acc.union_pixels()[c] > 0) {
      m.iou = static_cast<double>(acc.intersection()[c]) / static_cast<double>(acc.union_pixels()[c]);
    }
    if (acc.gt_pixels()[c] > 0) {
      m.acc = static_cast<double>(acc.intersection()[c]) / static_cast<double>(acc.gt_pixels()[c]);
    }
    report.per_category.push_back(m);
  }
  report.num_images = num_images;
  report.config_hash = hash_hex(config_hash(cfg));
  report.miou = compute_miou(acc);
  report.macc = compute_macc(acc);
  return report;
}

std::string MetricsReport::to_json() const {
  json doc;
  json cats = json::array();
  for (const auto& c : per_category) {
    json j;
    j["id"] = c.id;
    j["name"] = c.name;
    j["iou"] = c.iou ? json(*c.iou) : json(nullptr);
    j["acc"] = c.acc ? json(*c.acc) : json(nullptr);
    j["gt_pixels"] = c.gt_pixels;
    cats.push_back(j);
  }
  doc["per_category"] = cats;
  doc["miou"] = miou;
  doc["macc"] = macc;
  doc["num_images"] = num_images;
  doc["config_hash"] = config_hash;
  return doc.dump(2);
}

MetricsReport MetricsReport::from_json(const std::string& text) {
  MetricsReport report;
  try {
    const json doc = json::parse(text);
    for (const auto& j : doc.at("per_category")) {
      CategoryMetrics c;
      c.id = j.at("id").get<int>();
      c.name = j.at("name").get<std::string>();
      if (!j.at("iou").is_null()) c.iou = j["iou"].get<double>();
      if (!j.at("acc").is_null()) c.acc = j["acc"].get<double>();
      c.gt_pixels = j.at("gt_pixels").get<std::int64_t>();
      report.per_category.push_back(c);
    }
    report.num_images = doc.at("num_images").get<int>();
    report.config_hash = doc.at("config_hash").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kCorruptFile, std::string("metrics report: ") + e.what());
  }
  summarize(report);
  return report;
}

void MetricsReport::write(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIOError, "cannot write " + path);
  out << to_json() << '\n';
}

MetricsReport evaluate_dataset(const Dataset& dataset, const Predictor& predictor, const Config& cfg) {
  ConfusionAccumulator acc(dataset.num_categories());
  int images = 0;
  for (const auto& record : dataset.records) {
    if (!record.gt_mask.has_value()) continue;
    const SemanticSegmentation pred = predictor(record);
    EvaluationScope scope;
    acc.accumulate(record.gt_mask.get(), pred);
    ++images;
  }
  if (images == 0) throw Error(ErrorCode::kEmptyEvaluation, "dataset has no ground-truth masks");
  return make_report(acc, dataset.category_names, images, cfg);
}

}  // namespace wps
