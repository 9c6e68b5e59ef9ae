#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "wps/core.hpp"

namespace wps {

// Ground-truth masks are for evaluation only. Reading one outside an active
// EvaluationScope raises TaintViolation, so training code cannot depend on
// pixel-level labels even by accident.
class GroundTruthMask {
 public:
  GroundTruthMask() = default;
  explicit GroundTruthMask(SemanticSegmentation mask) : mask_(std::move(mask)) {}

  bool has_value() const { return mask_.has_value(); }
  const SemanticSegmentation& get() const;
  void set(SemanticSegmentation mask) { mask_ = std::move(mask); }
  void reset() { mask_.reset(); }

 private:
  std::optional<SemanticSegmentation> mask_;
};

class EvaluationScope {
 public:
  EvaluationScope();
  ~EvaluationScope();
  EvaluationScope(const EvaluationScope&) = delete;
  EvaluationScope& operator=(const EvaluationScope&) = delete;

  static bool active();
};

struct DatasetRecord {
  std::string id;
  ImageTensor image;
  std::vector<WeakLabel> weak_labels;  // boxes as annotated
  GroundTruthMask gt_mask;
};

struct Dataset {
  int image_size = 0;
  std::vector<std::string> category_names;
  std::vector<DatasetRecord> records;

  int num_categories() const { return static_cast<int>(category_names.size()); }
  int max_parts() const;
};

// BOX passes boxes through; POINT replaces each box by its centre.
std::vector<WeakLabel> derive_weak_labels(const DatasetRecord& record, LabelKind mode);

struct SyntheticOptions {
  int n_images = 500;
  int n_categories = 3;
  int max_parts = 4;
  int size = 128;
  std::uint64_t seed = 0;
  double min_extent = 0.2;  // part side as a fraction of the image side
  double max_extent = 0.45;
};

// Non-overlapping textured rectangles on a noise background. Pixel values
// are quantized to 8 bits so the dataset survives a PNG round trip exactly.
Dataset generate_synthetic(const SyntheticOptions& options);
Dataset generate_synthetic(int n_images, int n_categories, int max_parts, int size, std::uint64_t seed);

std::pair<Dataset, Dataset> split_dataset(const Dataset& dataset, const std::vector<double>& fractions,
                                          std::uint64_t seed);

// Directory layout: dataset.json, images/<id>.png, masks/<id>.png (indexed).
void save_dataset(const Dataset& dataset, const std::string& directory);
Dataset load_dataset(const std::string& directory);

// COCO-style part annotations. Weak labels come from bbox; segmentation
// (polygons or RLE) is rasterized into the guarded evaluation mask. Images
// and labels are rescaled to cfg.image_size.
Dataset load_coco_parts(const std::string& annotation_path, const std::string& image_dir, const Config& cfg);

// Even-odd fill sampled at pixel centres.
void rasterize_polygon(const std::vector<double>& xy, int height, int width, int value, SemanticSegmentation& out);
// COCO RLE (column-major runs, starting with background).
std::vector<std::uint8_t> decode_rle(const std::vector<std::uint32_t>& counts, int height, int width);
std::vector<std::uint32_t> decode_rle_string(const std::string& encoded);

}  // namespace wps
