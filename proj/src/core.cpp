#include "wps/core.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <variant>

namespace wps {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kUsage: return "Usage";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kDimMismatch: return "DimMismatch";
    case ErrorCode::kDegenerateBox: return "DegenerateBox";
    case ErrorCode::kOutOfBounds: return "OutOfBounds";
    case ErrorCode::kTooManyParts: return "TooManyParts";
    case ErrorCode::kNonFinite: return "NonFinite";
    case ErrorCode::kNonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::kVersionMismatch: return "VersionMismatch";
    case ErrorCode::kCorruptFile: return "CorruptFile";
    case ErrorCode::kMissingImage: return "MissingImage";
    case ErrorCode::kMalformedAnnotation: return "MalformedAnnotation";
    case ErrorCode::kEmptyEvaluation: return "EmptyEvaluation";
    case ErrorCode::kInvalidFraction: return "InvalidFraction";
    case ErrorCode::kTaintViolation: return "TaintViolation";
    case ErrorCode::kIOError: return "IOError";
    case ErrorCode::kBackendError: return "BackendError";
  }
  return "Error";
}

void validate_image(const ImageTensor& image, int image_size) {
  if (image.height != image_size || image.width != image_size) {
    throw Error(ErrorCode::kShapeMismatch, "image is " + std::to_string(image.height) + "x" +
                                               std::to_string(image.width) + ", expected " +
                                               std::to_string(image_size));
  }
  if (image.pixels.size() != static_cast<size_t>(image.height) * image.width * 3) {
    throw Error(ErrorCode::kShapeMismatch, "pixel buffer size does not match image shape");
  }
  for (float v : image.pixels) {
    if (!std::isfinite(v) || v < 0.0f || v > 1.0f) {
      throw Error(ErrorCode::kNonFinite, "image values must be finite and in [0,1]");
    }
  }
}

WeakLabel WeakLabel::make_box(double x0, double y0, double x1, double y1, int category) {
  WeakLabel label;
  label.kind = LabelKind::kBox;
  label.box = {x0, y0, x1, y1};
  label.point = {0.5 * (x0 + x1), 0.5 * (y0 + y1)};
  label.category = category;
  return label;
}

WeakLabel WeakLabel::make_point(double x, double y, int category) {
  WeakLabel label;
  label.kind = LabelKind::kPoint;
  label.point = {x, y};
  label.box = {x, y, x, y};
  label.category = category;
  return label;
}

void validate_label(const WeakLabel& label, int image_width, int image_height, int num_categories) {
  if (label.category < 0 || label.category >= num_categories) {
    throw Error(ErrorCode::kOutOfBounds, "label category " + std::to_string(label.category) +
                                             " outside [0, " + std::to_string(num_categories) + ")");
  }
  if (label.kind == LabelKind::kBox) {
    const Box& b = label.box;
    if (b.x_min < 0 || b.y_min < 0 || b.x_max > image_width || b.y_max > image_height) {
      throw Error(ErrorCode::kOutOfBounds, "box outside image bounds");
    }
    if (!(b.x_min < b.x_max) || !(b.y_min < b.y_max)) {
      throw Error(ErrorCode::kDegenerateBox, "box must satisfy x_min < x_max and y_min < y_max");
    }
  } else {
    const Point& p = label.point;
    if (p.x < 0 || p.y < 0 || p.x > image_width || p.y > image_height) {
      throw Error(ErrorCode::kOutOfBounds, "point outside image bounds");
    }
  }
}

Config Config::paper_scale() { return Config{}; }

Config Config::desk_scale() {
  Config cfg;
  cfg.image_size = 128;
  cfg.embed_dim = 32;
  cfg.num_queries = 8;
  cfg.num_categories = 3;
  cfg.epochs = 30;
  cfg.lr = 1e-3;
  return cfg;
}

void apply_weights(Config& cfg, const LossWeights& weights) {
  cfg.alpha = weights.alpha;
  cfg.beta = weights.beta;
  cfg.lambda_cls = weights.lambda_cls;
  cfg.lambda_reg = weights.lambda_reg;
}

namespace {

using FieldRef = std::variant<int Config::*, double Config::*, std::uint64_t Config::*>;

struct Field {
  const char* key;
  FieldRef ref;
};

// Serialization order.
const std::vector<Field>& fields() {
  static const std::vector<Field> kFields = {
      {"image_size", &Config::image_size},
      {"embed_dim", &Config::embed_dim},
      {"tokens_per_part", &Config::tokens_per_part},
      {"num_queries", &Config::num_queries},
      {"num_categories", &Config::num_categories},
      {"encoder_stride", &Config::encoder_stride},
      {"alpha", &Config::alpha},
      {"beta", &Config::beta},
      {"lambda_cls", &Config::lambda_cls},
      {"lambda_reg", &Config::lambda_reg},
      {"eos_weight", &Config::eos_weight},
      {"encoder_layers", &Config::encoder_layers},
      {"decoder_layers", &Config::decoder_layers},
      {"num_heads", &Config::num_heads},
      {"ffn_multiplier", &Config::ffn_multiplier},
      {"class_head_layers", &Config::class_head_layers},
      {"prompt_head_layers", &Config::prompt_head_layers},
      {"dropout", &Config::dropout},
      {"lr", &Config::lr},
      {"adam_beta1", &Config::adam_beta1},
      {"adam_beta2", &Config::adam_beta2},
      {"adam_eps", &Config::adam_eps},
      {"lr_final_scale", &Config::lr_final_scale},
      {"batch_size", &Config::batch_size},
      {"epochs", &Config::epochs},
      {"checkpoint_every", &Config::checkpoint_every},
      {"mask_threshold", &Config::mask_threshold},
      {"decoder_sharpness", &Config::decoder_sharpness},
      {"point_extent", &Config::point_extent},
      {"seed", &Config::seed},
  };
  return kFields;
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* first = text.data();
  const char* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    throw Error(ErrorCode::kInvalidConfig, "cannot parse value '" + text + "' for key " + key);
  }
  return value;
}

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::kInvalidConfig, what);
}

}  // namespace

Config validate_config(const Config& cfg) {
  require(cfg.image_size > 0, "image_size must be positive");
  require(cfg.embed_dim > 0, "embed_dim must be positive");
  require(cfg.tokens_per_part == 1 || cfg.tokens_per_part == 2, "tokens_per_part must be 1 or 2");
  require(cfg.num_queries > 0, "num_queries must be positive");
  require(cfg.num_categories > 0, "num_categories must be positive");
  require(cfg.encoder_stride > 0, "encoder_stride must be positive");
  require(cfg.image_size % cfg.encoder_stride == 0, "image_size must be divisible by encoder_stride");
  require(cfg.feature_size() % 4 == 0, "feature map side (image_size / encoder_stride) must be divisible by 4");
  require(cfg.embed_dim >= 8, "embed_dim must be at least 8");
  require(cfg.alpha >= 0, "alpha must be nonnegative");
  require(cfg.beta >= 0, "beta must be nonnegative");
  require(cfg.lambda_cls >= 0, "lambda_cls must be nonnegative");
  require(cfg.lambda_reg >= 0, "lambda_reg must be nonnegative");
  require(cfg.eos_weight >= 0, "eos_weight must be nonnegative");
  require(cfg.encoder_layers >= 0, "encoder_layers must be nonnegative");
  require(cfg.decoder_layers > 0, "decoder_layers must be positive");
  require(cfg.num_heads > 0 && cfg.embed_dim % cfg.num_heads == 0, "num_heads must divide embed_dim");
  require(cfg.ffn_multiplier > 0, "ffn_multiplier must be positive");
  require(cfg.class_head_layers > 0, "class_head_layers must be positive");
  require(cfg.prompt_head_layers > 0, "prompt_head_layers must be positive");
  require(cfg.dropout >= 0 && cfg.dropout < 1, "dropout must be in [0,1)");
  require(cfg.lr >= 0, "lr must be nonnegative");
  require(cfg.adam_beta1 >= 0 && cfg.adam_beta1 < 1, "adam_beta1 must be in [0,1)");
  require(cfg.adam_beta2 >= 0 && cfg.adam_beta2 < 1, "adam_beta2 must be in [0,1)");
  require(cfg.lr_final_scale >= 0 && cfg.lr_final_scale <= 1, "lr_final_scale must be in [0, 1]");
  require(cfg.adam_eps > 0, "adam_eps must be positive");
  require(cfg.batch_size > 0, "batch_size must be positive");
  require(cfg.epochs >= 0, "epochs must be nonnegative");
  require(cfg.checkpoint_every >= 0, "checkpoint_every must be nonnegative");
  require(cfg.mask_threshold > 0 && cfg.mask_threshold < 1, "mask_threshold must be in (0,1)");
  require(cfg.decoder_sharpness > 0, "decoder_sharpness must be positive");
  require(cfg.point_extent > 0 && cfg.point_extent < 1, "point_extent must be in (0,1)");
  return cfg;
}

std::string serialize_config(const Config& cfg) {
  std::ostringstream out;
  for (const Field& field : fields()) {
    out << field.key << '=';
    std::visit(
        [&](auto member) {
          using T = std::decay_t<decltype(cfg.*member)>;
          if constexpr (std::is_same_v<T, double>) {
            out << format_double(cfg.*member);
          } else {
            out << cfg.*member;
          }
        },
        field.ref);
    out << '\n';
  }
  return out.str();
}

void apply_config_override(Config& cfg, const std::string& key, const std::string& value) {
  for (const Field& field : fields()) {
    if (key != field.key) continue;
    std::visit(
        [&](auto member) {
          using T = std::decay_t<decltype(cfg.*member)>;
          cfg.*member = parse_number<T>(key, value);
        },
        field.ref);
    return;
  }
  throw Error(ErrorCode::kInvalidConfig, "unknown config key '" + key + "'");
}

Config parse_config(const std::string& text) {
  Config cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::kInvalidConfig, "line " + std::to_string(line_no) + ": expected key=value");
    }
    apply_config_override(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

Config load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIOError, "cannot open config file " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str());
}

std::uint64_t fnv1a(const void* data, size_t size, std::uint64_t seed) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  std::uint64_t hash = seed;
  for (size_t i = 0; i < size; ++i) {
    hash ^= bytes[i];
    hash *= 1099511628211ull;
  }
  return hash;
}

std::uint64_t config_hash(const Config& cfg) {
  const std::string text = serialize_config(cfg);
  return fnv1a(text.data(), text.size());
}

std::string hash_hex(std::uint64_t hash) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

}  // namespace wps
