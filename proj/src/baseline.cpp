#include "wps/baseline.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "wps/inference.hpp"

namespace wps {

std::vector<WeakLabel> oracle_detector(const DatasetRecord& record, double jitter_sigma, double drop_prob,
                                       std::uint64_t seed) {
  if (jitter_sigma < 0 || drop_prob < 0 || drop_prob > 1) {
    throw Error(ErrorCode::kInvalidConfig, "jitter must be >= 0 and drop probability in [0, 1]");
  }
  const double width = record.image.width, height = record.image.height;
  const double spread = jitter_sigma * std::min(width, height);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<WeakLabel> out;
  for (const WeakLabel& gt : record.weak_labels) {
    if (gt.kind != LabelKind::kBox) continue;
    const bool dropped = unit(rng) < drop_prob;
    double x0 = gt.box.x_min + spread * normal(rng);
    double y0 = gt.box.y_min + spread * normal(rng);
    double x1 = gt.box.x_max + spread * normal(rng);
    double y1 = gt.box.y_max + spread * normal(rng);
    if (dropped) continue;
    if (x0 > x1) std::swap(x0, x1);
    if (y0 > y1) std::swap(y0, y1);
    x0 = std::clamp(x0, 0.0, width);
    x1 = std::clamp(x1, 0.0, width);
    y0 = std::clamp(y0, 0.0, height);
    y1 = std::clamp(y1, 0.0, height);
    if (x1 - x0 < 2.0 || y1 - y0 < 2.0) continue;
    out.push_back(WeakLabel::make_box(x0, y0, x1, y1, gt.category));
  }
  return out;
}

std::string OracleDetector::name() const {
  std::ostringstream s;
  s << "oracle(sigma=" << sigma_ << ",drop=" << drop_ << ")";
  return s.str();
}

std::vector<Detection> OracleDetector::detect(const ImageTensor& /*image*/, const DatasetRecord* record) const {
  if (record == nullptr) throw Error(ErrorCode::kMalformedAnnotation, "oracle detector needs the annotated record");
  const std::uint64_t words[2] = {seed_, fnv1a(record->id.data(), record->id.size())};
  std::vector<Detection> out;
  for (const auto& label : oracle_detector(*record, sigma_, drop_, fnv1a(words, sizeof(words)))) {
    out.push_back({label, 1.0});
  }
  return out;
}

FileDetector::FileDetector(const std::string& path, int image_size, int num_categories) : path_(path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIOError, "cannot open detections " + path);
  try {
    const nlohmann::json doc = nlohmann::json::parse(in);
    for (const auto& [id, list] : doc.items()) {
      auto& dets = detections_[id];
      for (const auto& d : list) {
        const auto b = d.at("bbox").get<std::vector<double>>();
        if (b.size() != 4) throw Error(ErrorCode::kMalformedAnnotation, "detection bbox for " + id + " needs 4 numbers");
        Detection det;
        det.label = WeakLabel::make_box(b[0], b[1], b[0] + b[2], b[1] + b[3], d.at("category").get<int>());
        det.score = d.value("score", 1.0);
        if (det.score < 0 || det.score > 1) throw Error(ErrorCode::kMalformedAnnotation, "detection score outside [0, 1]");
        validate_label(det.label, image_size, image_size, num_categories);
        dets.push_back(det);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kMalformedAnnotation, std::string("detections file: ") + e.what());
  }
}

std::vector<Detection> FileDetector::detect(const ImageTensor& /*image*/, const DatasetRecord* record) const {
  if (record == nullptr) return {};
  const auto it = detections_.find(record->id);
  return it == detections_.end() ? std::vector<Detection>{} : it->second;
}

SemanticSegmentation det_sam_predict(const ImageTensor& image, std::span<const Detection> detections,
                                     const Backend& backend, const Teacher& teacher, const Config& cfg) {
  const FeatureMap features = backend.encode_image(image);
  Matrix tokens(static_cast<Eigen::Index>(detections.size()), cfg.token_dim());
  std::vector<KeptToken> kept;
  for (size_t i = 0; i < detections.size(); ++i) {
    tokens.row(static_cast<Eigen::Index>(i)) = teacher.encode_box(detections[i].label, cfg.image_size).vector.transpose();
    kept.push_back({static_cast<int>(i), detections[i].label.category, detections[i].score});
  }
  return merge_semantic(backend.decode_masks(features, tokens), kept, cfg);
}

SemanticSegmentation det_sam_predict(const DatasetRecord& record, const Detector& detector, const Backend& backend,
                                     const Teacher& teacher, const Config& cfg) {
  const auto detections = detector.detect(record.image, &record);
  return det_sam_predict(record.image, detections, backend, teacher, cfg);
}

}  // namespace wps
