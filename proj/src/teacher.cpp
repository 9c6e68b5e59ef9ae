#include "wps/teacher.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "wps/backend.hpp"

namespace wps {

Teacher::Teacher(const Config& cfg, std::uint64_t seed)
    : embed_dim_(cfg.embed_dim),
      tokens_per_part_(cfg.tokens_per_part),
      type_dims_(std::max(1, cfg.embed_dim / 8)),
      point_extent_(cfg.point_extent) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.5);
  type_embeddings_.resize(kRoleCount, type_dims_);
  for (Eigen::Index i = 0; i < type_embeddings_.size(); ++i) type_embeddings_.data()[i] = normal(rng);
}

int Teacher::frequencies_for(int coordinates, int image_size) const {
  if (coordinates <= 0) return 0;
  const int available = embed_dim_ - 4 - type_dims_;
  const int fit = available / (2 * coordinates);
  // Octaves beyond pixel resolution carry no information.
  const int resolution = static_cast<int>(std::ceil(std::log2(static_cast<double>(std::max(image_size, 2)))));
  return std::max(0, std::min(fit, resolution));
}

void Teacher::write_token(Eigen::Ref<Vector> token, const double* geometry, std::span<const double> coords,
                          Role role, int image_size) const {
  token.setZero();
  if (geometry != nullptr) {
    for (int i = 0; i < 4; ++i) token(i) = geometry[i];
  }
  const int freqs = frequencies_for(static_cast<int>(coords.size()), image_size);
  int dim = 4;
  for (double u : coords) {
    for (int j = 0; j < freqs; ++j) {
      const double angle = std::ldexp(std::numbers::pi, j) * u;
      token(dim++) = std::sin(angle);
      token(dim++) = std::cos(angle);
    }
  }
  token.tail(type_dims_) = type_embeddings_.row(role).transpose();
}

TeacherEmbedding Teacher::encode_box(const WeakLabel& label, int image_size) const {
  if (label.kind != LabelKind::kBox) throw Error(ErrorCode::kDimMismatch, "encode_box needs a BOX label");
  const Box& b = label.box;
  if (b.width() < 2.0 || b.height() < 2.0) {
    throw Error(ErrorCode::kDegenerateBox, "box narrower than 2 pixels");
  }
  if (b.x_min < 0 || b.y_min < 0 || b.x_max > image_size || b.y_max > image_size) {
    throw Error(ErrorCode::kOutOfBounds, "box outside image");
  }
  const double s = image_size;
  const BoxParams params{b.center_x() / s, b.center_y() / s, b.width() / s, b.height() / s};
  const auto geometry = box_to_logits(params);
  const double x0 = b.x_min / s, y0 = b.y_min / s, x1 = b.x_max / s, y1 = b.y_max / s;

  TeacherEmbedding out;
  out.source_kind = LabelKind::kBox;
  out.vector.resize(static_cast<Eigen::Index>(tokens_per_part_) * embed_dim_);
  if (tokens_per_part_ == 1) {
    const double coords[4] = {x0, y0, x1, y1};
    write_token(out.vector.segment(0, embed_dim_), geometry.data(), coords, kBoxRole, image_size);
  } else {
    const double top_left[2] = {x0, y0};
    const double bottom_right[2] = {x1, y1};
    write_token(out.vector.segment(0, embed_dim_), geometry.data(), top_left, kTopLeftRole, image_size);
    write_token(out.vector.segment(embed_dim_, embed_dim_), geometry.data(), bottom_right, kBottomRightRole,
                image_size);
  }
  return out;
}

TeacherEmbedding Teacher::encode_point(const WeakLabel& label, int image_size) const {
  if (label.kind != LabelKind::kPoint) throw Error(ErrorCode::kDimMismatch, "encode_point needs a POINT label");
  const Point& p = label.point;
  if (p.x < 0 || p.y < 0 || p.x > image_size || p.y > image_size) {
    throw Error(ErrorCode::kOutOfBounds, "point outside image");
  }
  const double s = image_size;
  const double x = p.x / s, y = p.y / s;
  const auto geometry = box_to_logits({x, y, point_extent_, point_extent_});

  TeacherEmbedding out;
  out.source_kind = LabelKind::kPoint;
  out.vector.resize(static_cast<Eigen::Index>(tokens_per_part_) * embed_dim_);
  if (tokens_per_part_ == 1) {
    const double coords[4] = {x, y, x, y};
    write_token(out.vector.segment(0, embed_dim_), geometry.data(), coords, kPointRole, image_size);
  } else {
    const double coords[2] = {x, y};
    write_token(out.vector.segment(0, embed_dim_), geometry.data(), coords, kPointRole, image_size);
    write_token(out.vector.segment(embed_dim_, embed_dim_), nullptr, {}, kPadRole, image_size);
  }
  return out;
}

TeacherEmbedding Teacher::encode(const WeakLabel& label, int image_size) const {
  return label.kind == LabelKind::kBox ? encode_box(label, image_size) : encode_point(label, image_size);
}

TargetSet Teacher::build_target_set(std::span<const WeakLabel> labels, const Config& cfg) const {
  if (static_cast<int>(labels.size()) > cfg.num_queries) {
    throw Error(ErrorCode::kTooManyParts, std::to_string(labels.size()) + " labels exceed " +
                                              std::to_string(cfg.num_queries) + " queries");
  }
  TargetSet set;
  set.num_real = static_cast<int>(labels.size());
  set.targets.reserve(cfg.num_queries);
  for (const WeakLabel& label : labels) {
    if (label.category < 0 || label.category >= cfg.num_categories) {
      throw Error(ErrorCode::kOutOfBounds, "label category out of range");
    }
    set.targets.push_back({label.category, encode(label, cfg.image_size).vector});
  }
  while (set.size() < cfg.num_queries) {
    set.targets.push_back({cfg.no_part(), Vector::Zero(cfg.token_dim())});
  }
  return set;
}

std::uint64_t Teacher::parameter_checksum() const {
  std::uint64_t h = fnv1a(type_embeddings_.data(), sizeof(double) * type_embeddings_.size());
  const int header[3] = {embed_dim_, tokens_per_part_, type_dims_};
  h = fnv1a(header, sizeof(header), h);
  return fnv1a(&point_extent_, sizeof(point_extent_), h);
}

}  // namespace wps
