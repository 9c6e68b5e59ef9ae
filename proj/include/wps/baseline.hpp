#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "wps/backend.hpp"
#include "wps/core.hpp"
#include "wps/data.hpp"
#include "wps/teacher.hpp"

namespace wps {

struct Detection {
  WeakLabel label;  // always a box
  double score = 1.0;
};

class Detector {
 public:
  virtual ~Detector() = default;
  virtual std::string name() const = 0;
  // record may be null for detectors that only look at pixels.
  virtual std::vector<Detection> detect(const ImageTensor& image, const DatasetRecord* record) const = 0;
};

// Ground-truth boxes, each dropped with drop_prob, otherwise with every
// corner moved by N(0, (jitter_sigma * min(H, W))^2) and clamped to the
// image. Boxes that collapse below 2 px after clamping count as misses.
std::vector<WeakLabel> oracle_detector(const DatasetRecord& record, double jitter_sigma, double drop_prob,
                                       std::uint64_t seed);

class OracleDetector : public Detector {
 public:
  OracleDetector(double jitter_sigma, double drop_prob, std::uint64_t seed)
      : sigma_(jitter_sigma), drop_(drop_prob), seed_(seed) {}

  std::string name() const override;
  // Per-image noise is seeded by (seed, record id).
  std::vector<Detection> detect(const ImageTensor& image, const DatasetRecord* record) const override;

 private:
  double sigma_;
  double drop_;
  std::uint64_t seed_;
};

// Offline detections: {"<image id>": [{"bbox": [x, y, w, h], "category": c, "score": s}, ...]}
// with bbox in the dataset's pixel frame (COCO box convention).
class FileDetector : public Detector {
 public:
  FileDetector(const std::string& path, int image_size, int num_categories);

  std::string name() const override { return "file:" + path_; }
  std::vector<Detection> detect(const ImageTensor& image, const DatasetRecord* record) const override;

 private:
  std::string path_;
  std::map<std::string, std::vector<Detection>> detections_;
};

SemanticSegmentation det_sam_predict(const ImageTensor& image, std::span<const Detection> detections,
                                     const Backend& backend, const Teacher& teacher, const Config& cfg);
SemanticSegmentation det_sam_predict(const DatasetRecord& record, const Detector& detector, const Backend& backend,
                                     const Teacher& teacher, const Config& cfg);

}  // namespace wps
