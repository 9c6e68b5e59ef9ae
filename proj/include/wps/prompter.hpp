#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "wps/autograd.hpp"
#include "wps/core.hpp"

namespace wps {

struct Linear {
  ag::Var weight;  // in x out
  ag::Var bias;    // 1 x out

  ag::Var operator()(const ag::Var& x) const { return ag::add_row(ag::matmul(x, weight), bias); }
};

struct LayerNormParams {
  ag::Var gamma;
  ag::Var beta;

  ag::Var operator()(const ag::Var& x) const { return ag::layer_norm(x, gamma, beta); }
};

struct AttentionParams {
  Linear query, key, value, output;
};

struct EncoderLayerParams {
  LayerNormParams norm_attn, norm_ffn;
  AttentionParams self_attn;
  Linear ffn_in, ffn_out;
};

struct DecoderLayerParams {
  LayerNormParams norm_self, norm_cross, norm_ffn;
  AttentionParams self_attn, cross_attn;
  Linear ffn_in, ffn_out;
};

struct NamedParameter {
  std::string name;
  ag::Var var;
};

// The only trainable tensors in the system.
struct PrompterParams {
  int model_dim = 0;
  int num_heads = 0;
  Linear conv1, conv2;  // 3x3 stride-2 kernels stored as (9 * d) x d
  std::vector<EncoderLayerParams> encoder;
  LayerNormParams encoder_norm;
  std::vector<DecoderLayerParams> decoder;
  LayerNormParams decoder_norm;
  ag::Var queries;  // S x d
  std::vector<Linear> class_head;
  std::vector<Linear> prompt_head;

  // Stable order; names identify tensors in checkpoints.
  std::vector<NamedParameter> named_parameters() const;
  size_t parameter_count() const;
  // Deep copy with fresh leaf nodes.
  PrompterParams clone() const;
  void zero_grad() const;
  std::uint64_t checksum() const;
};

PrompterParams init_prompter(const Config& cfg, std::uint64_t seed);

// Two 3x3 stride-2 convolutions; output is (h/4 * w/4) x d.
ag::Var downsample_features(const FeatureMap& features, const PrompterParams& params, int& out_height,
                            int& out_width);

// DETR-style 2D sine encoding, (height * width) x dim.
Matrix positional_encoding_2d(int height, int width, int dim);

struct ForwardOptions {
  bool training = false;
  double dropout = 0.0;
  std::mt19937_64* rng = nullptr;
};

struct PrompterGraph {
  ag::Var class_logits;
  ag::Var prompt_tokens;
};

PrompterGraph prompter_forward_graph(const FeatureMap& features, const PrompterParams& params,
                                     const ForwardOptions& options = {});

// Encoder/decoder over an explicit token sequence and matching positional
// encodings. Used by prompter_forward_graph after downsampling.
PrompterGraph transformer_forward(const ag::Var& tokens, const Matrix& positions, const PrompterParams& params,
                                  const ForwardOptions& options = {});

StudentOutput prompter_forward(const FeatureMap& features, const PrompterParams& params);

}  // namespace wps
