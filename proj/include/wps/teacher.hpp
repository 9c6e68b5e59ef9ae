#pragma once

#include <cstdint>
#include <span>

#include "wps/core.hpp"

namespace wps {

struct TeacherEmbedding {
  Vector vector;  // K * d
  LabelKind source_kind = LabelKind::kBox;
};

inline constexpr std::uint64_t kTeacherSeed = 0x5EED0002;

// Frozen prompt encoder turning weak labels into regression targets.
//
// Each token of width d is laid out as
//   [0, 4)           logits of the normalized geometry (cx, cy, w, h); the
//                    mock decoder reads exactly these four values
//   [4, d - t)       sin/cos features of the token's corner coordinates at
//                    frequencies 2^j * pi, as many octaves as fit
//   [d - t, d)       seeded constant type embedding, t = max(1, d / 8)
//
// K = 1 packs both box corners into one token. K = 2 emits a top-left and a
// bottom-right corner token; points get a point token plus a padding token.
class Teacher {
 public:
  Teacher(const Config& cfg, std::uint64_t seed = kTeacherSeed);

  TeacherEmbedding encode_box(const WeakLabel& label, int image_size) const;
  TeacherEmbedding encode_point(const WeakLabel& label, int image_size) const;
  TeacherEmbedding encode(const WeakLabel& label, int image_size) const;

  TargetSet build_target_set(std::span<const WeakLabel> labels, const Config& cfg) const;

  std::uint64_t parameter_checksum() const;

  int embed_dim() const { return embed_dim_; }
  int tokens_per_part() const { return tokens_per_part_; }
  int type_dims() const { return type_dims_; }
  int frequencies_for(int coordinates, int image_size) const;

 private:
  enum Role { kBoxRole = 0, kPointRole, kTopLeftRole, kBottomRightRole, kPadRole, kRoleCount };

  void write_token(Eigen::Ref<Vector> token, const double* geometry, std::span<const double> coords,
                   Role role, int image_size) const;

  int embed_dim_;
  int tokens_per_part_;
  int type_dims_;
  double point_extent_;
  Matrix type_embeddings_;  // kRoleCount x type_dims
};

}  // namespace wps
