#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>

#include "wps/core.hpp"

namespace wps {

// N full-resolution logit planes, each size x size, row-major.
struct MaskLogits {
  int count = 0;
  int size = 0;
  Matrix logits;  // count x (size * size)

  double at(int plane, int y, int x) const { return logits(plane, static_cast<Eigen::Index>(y) * size + x); }
};

struct BoxParams {
  double cx = 0.5, cy = 0.5, w = 0.5, h = 0.5;
};

// Signed-distance logits of an axis-aligned box in normalized coordinates,
// sampled at pixel centres. Returned as a 1 x (size * size) row.
Matrix render_soft_rect(const BoxParams& box, double sharpness, int size);

// Sigmoid of the first four token components.
BoxParams invert_box_params(const Eigen::Ref<const Vector>& token);

// Inverse of invert_box_params for values in (0, 1); values are clamped
// into [1e-6, 1 - 1e-6] so full-extent boxes stay finite.
std::array<double, 4> box_to_logits(const BoxParams& box);

// Frozen image encoder + prompt-conditioned mask decoder.
class Backend {
 public:
  virtual ~Backend() = default;

  virtual std::string name() const = 0;
  virtual int encoder_stride() const = 0;
  virtual int embed_dim() const = 0;
  virtual int image_size() const = 0;
  virtual int tokens_per_part() const = 0;
  bool frozen() const { return true; }

  virtual FeatureMap encode_image(const ImageTensor& image) const = 0;
  // prompt_tokens: N x (K * d). Returns N planes in input order.
  virtual MaskLogits decode_masks(const FeatureMap& features, const Matrix& prompt_tokens) const = 0;

  // Checksum over every frozen parameter; constant for the handle's lifetime.
  virtual std::uint64_t parameter_checksum() const = 0;

 protected:
  void check_token_width(const Matrix& prompt_tokens) const;
};

// Patch-flattening encoder with a seeded linear projection, and a geometric
// decoder reading (cx, cy, w, h) logits from the first four token dims.
class MockBackend : public Backend {
 public:
  MockBackend(const Config& cfg, std::uint64_t seed);

  std::string name() const override { return "mock"; }
  int encoder_stride() const override { return stride_; }
  int embed_dim() const override { return embed_dim_; }
  int image_size() const override { return image_size_; }
  int tokens_per_part() const override { return tokens_per_part_; }

  FeatureMap encode_image(const ImageTensor& image) const override;
  MaskLogits decode_masks(const FeatureMap& features, const Matrix& prompt_tokens) const override;
  std::uint64_t parameter_checksum() const override;

  // Vector-Jacobian product of decode_masks: given dL/dlogits (N x size^2),
  // returns dL/dprompt_tokens (N x K*d).
  Matrix decode_masks_vjp(const Matrix& prompt_tokens, const Matrix& upstream) const;

  double sharpness() const { return sharpness_; }
  const Matrix& projection() const { return projection_; }

 private:
  int image_size_;
  int embed_dim_;
  int tokens_per_part_;
  int stride_;
  double sharpness_;
  Matrix projection_;  // (stride * stride * 3) x embed_dim
};

// Delegates to an external executable over files:
//   <exe> encode <image.bin> <features.bin>
//   <exe> decode <features.bin> <tokens.bin> <masks.bin>
// Files use the tensor container in write_tensor_file / read_tensor_file.
class AdapterBackend : public Backend {
 public:
  AdapterBackend(const Config& cfg, std::string executable);

  std::string name() const override { return "adapter:" + executable_; }
  int encoder_stride() const override { return stride_; }
  int embed_dim() const override { return embed_dim_; }
  int image_size() const override { return image_size_; }
  int tokens_per_part() const override { return tokens_per_part_; }

  FeatureMap encode_image(const ImageTensor& image) const override;
  MaskLogits decode_masks(const FeatureMap& features, const Matrix& prompt_tokens) const override;
  std::uint64_t parameter_checksum() const override;

 private:
  int image_size_;
  int embed_dim_;
  int tokens_per_part_;
  int stride_;
  std::string executable_;
};

// Tensor container: "WPST", u32 rank, u32 dims[rank], f64 data (row-major).
void write_tensor_file(const std::string& path, const std::vector<std::uint32_t>& dims,
                       const std::vector<double>& data);
std::vector<double> read_tensor_file(const std::string& path, std::vector<std::uint32_t>& dims);

// Frozen weights are independent of the training seed.
inline constexpr std::uint64_t kMockBackendSeed = 0x5EED0001;

// "mock" or "adapter:<path>".
std::unique_ptr<Backend> make_backend(const std::string& spec, const Config& cfg);

}  // namespace wps
