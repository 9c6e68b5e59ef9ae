#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "wps/error.hpp"

namespace wps {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// RGB image, row-major height x width x 3, values in [0, 1].
struct ImageTensor {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;
  int original_height = 0;
  int original_width = 0;

  ImageTensor() = default;
  ImageTensor(int h, int w) : height(h), width(w), pixels(static_cast<size_t>(h) * w * 3, 0.0f),
                              original_height(h), original_width(w) {}

  float& at(int y, int x, int c) { return pixels[(static_cast<size_t>(y) * width + x) * 3 + c]; }
  float at(int y, int x, int c) const { return pixels[(static_cast<size_t>(y) * width + x) * 3 + c]; }
};

void validate_image(const ImageTensor& image, int image_size);

// Encoder output. Rows are spatial cells in row-major order, columns are channels.
struct FeatureMap {
  int height = 0;
  int width = 0;
  int stride = 0;
  Matrix features;  // (height * width) x embed_dim

  int channels() const { return static_cast<int>(features.cols()); }
};

enum class LabelKind { kBox, kPoint };

struct Box {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double center_x() const { return 0.5 * (x_min + x_max); }
  double center_y() const { return 0.5 * (y_min + y_max); }
};

struct Point {
  double x = 0, y = 0;
};

struct WeakLabel {
  LabelKind kind = LabelKind::kBox;
  Box box;
  Point point;
  int category = 0;

  static WeakLabel make_box(double x0, double y0, double x1, double y1, int category);
  static WeakLabel make_point(double x, double y, int category);
};

// Throws OutOfBounds / DegenerateBox for labels that cannot be used.
void validate_label(const WeakLabel& label, int image_width, int image_height, int num_categories);

struct TeacherTarget {
  int category = 0;  // num_categories means "no part"
  Vector embedding;
};

struct TargetSet {
  std::vector<TeacherTarget> targets;
  int num_real = 0;

  int size() const { return static_cast<int>(targets.size()); }
};

struct StudentOutput {
  Matrix class_logits;   // S x (C + 1)
  Matrix prompt_tokens;  // S x (K * d)
};

struct Assignment {
  std::vector<int> target_to_pred;
  double total_cost = 0.0;
};

// Per-pixel category map; label == num_categories is background.
struct SemanticSegmentation {
  int height = 0;
  int width = 0;
  std::vector<int> labels;
  std::vector<float> scores;  // optional, empty when not produced

  SemanticSegmentation() = default;
  SemanticSegmentation(int h, int w, int fill)
      : height(h), width(w), labels(static_cast<size_t>(h) * w, fill) {}

  int& at(int y, int x) { return labels[static_cast<size_t>(y) * width + x]; }
  int at(int y, int x) const { return labels[static_cast<size_t>(y) * width + x]; }
};

struct Config {
  int image_size = 1024;
  int embed_dim = 256;
  int tokens_per_part = 1;
  int num_queries = 25;
  int num_categories = 40;
  int encoder_stride = 16;

  double alpha = 5.0;
  double beta = 20.0;
  double lambda_cls = 10.0;
  double lambda_reg = 1.0;
  double eos_weight = 1.0;

  int encoder_layers = 6;
  int decoder_layers = 6;
  int num_heads = 8;
  int ffn_multiplier = 4;
  int class_head_layers = 3;
  int prompt_head_layers = 3;
  double dropout = 0.0;

  double lr = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double lr_final_scale = 1.0;  // cosine decay to lr * scale over the run; 1 = constant
  int batch_size = 8;
  int epochs = 150;
  int checkpoint_every = 10;

  double mask_threshold = 0.5;
  double decoder_sharpness = 50.0;
  double point_extent = 0.2;
  std::uint64_t seed = 0;

  int token_dim() const { return tokens_per_part * embed_dim; }
  int feature_size() const { return image_size / encoder_stride; }
  int no_part() const { return num_categories; }

  // Full-scale settings (1024 px, d = 256, 150 epochs).
  static Config paper_scale();
  // CPU-sized settings used by the synthetic experiments.
  static Config desk_scale();

  bool operator==(const Config&) const = default;
};

struct LossWeights {
  double alpha, beta, lambda_cls, lambda_reg;
};

// Grid-search optimum; these are the Config defaults.
inline constexpr LossWeights kDefaultWeights{5.0, 20.0, 10.0, 1.0};
// The other published assignment, kept selectable.
inline constexpr LossWeights kAlternateWeights{10.0, 1.0, 5.0, 20.0};

void apply_weights(Config& cfg, const LossWeights& weights);

Config validate_config(const Config& cfg);

// Flat key=value text, one key per line, '#' comments. Unknown keys are errors.
std::string serialize_config(const Config& cfg);
Config parse_config(const std::string& text);
Config load_config_file(const std::string& path);
void apply_config_override(Config& cfg, const std::string& key, const std::string& value);

std::uint64_t config_hash(const Config& cfg);
std::string hash_hex(std::uint64_t hash);

std::uint64_t fnv1a(const void* data, size_t size, std::uint64_t seed = 14695981039346656037ull);

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

}  // namespace wps
