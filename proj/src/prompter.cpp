#include "wps/prompter.hpp"

#include <cmath>

namespace wps {

namespace {

class ParamFactory {
 public:
  explicit ParamFactory(std::uint64_t seed) : rng_(seed) {}

  Linear linear(int in, int out) {
    const double limit = std::sqrt(6.0 / (in + out));
    std::uniform_real_distribution<double> uniform(-limit, limit);
    Matrix w(in, out);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = uniform(rng_);
    return {ag::Var(std::move(w), true), ag::Var(Matrix::Zero(1, out), true)};
  }

  LayerNormParams norm(int dim) {
    return {ag::Var(Matrix::Ones(1, dim), true), ag::Var(Matrix::Zero(1, dim), true)};
  }

  AttentionParams attention(int dim) { return {linear(dim, dim), linear(dim, dim), linear(dim, dim), linear(dim, dim)}; }

  ag::Var normal(int rows, int cols, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng_);
    return ag::Var(std::move(m), true);
  }

 private:
  std::mt19937_64 rng_;
};

std::vector<Linear> mlp(ParamFactory& factory, int layers, int dim, int out) {
  std::vector<Linear> head;
  for (int i = 0; i < layers; ++i) head.push_back(factory.linear(dim, i + 1 == layers ? out : dim));
  return head;
}

ag::Var apply_mlp(const std::vector<Linear>& layers, ag::Var x) {
  for (size_t i = 0; i < layers.size(); ++i) {
    x = layers[i](x);
    if (i + 1 < layers.size()) x = ag::relu(x);
  }
  return x;
}

ag::Var multi_head(const AttentionParams& p, const ag::Var& queries, const ag::Var& context, int heads) {
  return p.output(ag::attention(p.query(queries), p.key(context), p.value(context), heads));
}

ag::Var maybe_dropout(const ag::Var& x, const ForwardOptions& options) {
  if (!options.training || options.dropout <= 0.0 || options.rng == nullptr) return x;
  return ag::dropout(x, options.dropout, *options.rng);
}

void push_linear(std::vector<NamedParameter>& out, const std::string& name, const Linear& l) {
  out.push_back({name + ".weight", l.weight});
  out.push_back({name + ".bias", l.bias});
}

void push_norm(std::vector<NamedParameter>& out, const std::string& name, const LayerNormParams& n) {
  out.push_back({name + ".gamma", n.gamma});
  out.push_back({name + ".beta", n.beta});
}

void push_attention(std::vector<NamedParameter>& out, const std::string& name, const AttentionParams& a) {
  push_linear(out, name + ".query", a.query);
  push_linear(out, name + ".key", a.key);
  push_linear(out, name + ".value", a.value);
  push_linear(out, name + ".output", a.output);
}

}  // namespace

PrompterParams init_prompter(const Config& cfg, std::uint64_t seed) {
  const int d = cfg.embed_dim;
  ParamFactory factory(seed);
  PrompterParams p;
  p.model_dim = d;
  p.num_heads = cfg.num_heads;
  p.conv1 = factory.linear(9 * d, d);
  p.conv2 = factory.linear(9 * d, d);
  for (int i = 0; i < cfg.encoder_layers; ++i) {
    EncoderLayerParams layer{factory.norm(d), factory.norm(d), factory.attention(d),
                             factory.linear(d, cfg.ffn_multiplier * d), factory.linear(cfg.ffn_multiplier * d, d)};
    p.encoder.push_back(std::move(layer));
  }
  p.encoder_norm = factory.norm(d);
  for (int i = 0; i < cfg.decoder_layers; ++i) {
    DecoderLayerParams layer{factory.norm(d),
                             factory.norm(d),
                             factory.norm(d),
                             factory.attention(d),
                             factory.attention(d),
                             factory.linear(d, cfg.ffn_multiplier * d),
                             factory.linear(cfg.ffn_multiplier * d, d)};
    p.decoder.push_back(std::move(layer));
  }
  p.decoder_norm = factory.norm(d);
  p.queries = factory.normal(cfg.num_queries, d, 0.1);
  p.class_head = mlp(factory, cfg.class_head_layers, d, cfg.num_categories + 1);
  p.prompt_head = mlp(factory, cfg.prompt_head_layers, d, cfg.token_dim());
  return p;
}

std::vector<NamedParameter> PrompterParams::named_parameters() const {
  std::vector<NamedParameter> out;
  push_linear(out, "conv1", conv1);
  push_linear(out, "conv2", conv2);
  for (size_t i = 0; i < encoder.size(); ++i) {
    const std::string prefix = "encoder." + std::to_string(i);
    push_norm(out, prefix + ".norm_attn", encoder[i].norm_attn);
    push_norm(out, prefix + ".norm_ffn", encoder[i].norm_ffn);
    push_attention(out, prefix + ".self_attn", encoder[i].self_attn);
    push_linear(out, prefix + ".ffn_in", encoder[i].ffn_in);
    push_linear(out, prefix + ".ffn_out", encoder[i].ffn_out);
  }
  push_norm(out, "encoder_norm", encoder_norm);
  for (size_t i = 0; i < decoder.size(); ++i) {
    const std::string prefix = "decoder." + std::to_string(i);
    push_norm(out, prefix + ".norm_self", decoder[i].norm_self);
    push_norm(out, prefix + ".norm_cross", decoder[i].norm_cross);
    push_norm(out, prefix + ".norm_ffn", decoder[i].norm_ffn);
    push_attention(out, prefix + ".self_attn", decoder[i].self_attn);
    push_attention(out, prefix + ".cross_attn", decoder[i].cross_attn);
    push_linear(out, prefix + ".ffn_in", decoder[i].ffn_in);
    push_linear(out, prefix + ".ffn_out", decoder[i].ffn_out);
  }
  push_norm(out, "decoder_norm", decoder_norm);
  out.push_back({"queries", queries});
  for (size_t i = 0; i < class_head.size(); ++i) push_linear(out, "class_head." + std::to_string(i), class_head[i]);
  for (size_t i = 0; i < prompt_head.size(); ++i) push_linear(out, "prompt_head." + std::to_string(i), prompt_head[i]);
  return out;
}

size_t PrompterParams::parameter_count() const {
  size_t total = 0;
  for (const auto& p : named_parameters()) total += static_cast<size_t>(p.var.value().size());
  return total;
}

PrompterParams PrompterParams::clone() const {
  PrompterParams copy = *this;
  auto rebind = [](ag::Var& v) { v = ag::Var(v.value(), true); };
  auto rebind_linear = [&](Linear& l) { rebind(l.weight); rebind(l.bias); };
  auto rebind_norm = [&](LayerNormParams& n) { rebind(n.gamma); rebind(n.beta); };
  auto rebind_attn = [&](AttentionParams& a) {
    rebind_linear(a.query);
    rebind_linear(a.key);
    rebind_linear(a.value);
    rebind_linear(a.output);
  };
  rebind_linear(copy.conv1);
  rebind_linear(copy.conv2);
  for (auto& layer : copy.encoder) {
    rebind_norm(layer.norm_attn);
    rebind_norm(layer.norm_ffn);
    rebind_attn(layer.self_attn);
    rebind_linear(layer.ffn_in);
    rebind_linear(layer.ffn_out);
  }
  rebind_norm(copy.encoder_norm);
  for (auto& layer : copy.decoder) {
    rebind_norm(layer.norm_self);
    rebind_norm(layer.norm_cross);
    rebind_norm(layer.norm_ffn);
    rebind_attn(layer.self_attn);
    rebind_attn(layer.cross_attn);
    rebind_linear(layer.ffn_in);
    rebind_linear(layer.ffn_out);
  }
  rebind_norm(copy.decoder_norm);
  rebind(copy.queries);
  for (auto& l : copy.class_head) rebind_linear(l);
  for (auto& l : copy.prompt_head) rebind_linear(l);
  return copy;
}

void PrompterParams::zero_grad() const {
  for (const auto& p : named_parameters()) {
    ag::Var v = p.var;
    v.zero_grad();
  }
}

std::uint64_t PrompterParams::checksum() const {
  std::uint64_t h = 14695981039346656037ull;
  for (const auto& p : named_parameters()) {
    h = fnv1a(p.var.value().data(), sizeof(double) * p.var.value().size(), h);
  }
  return h;
}

ag::Var downsample_features(const FeatureMap& features, const PrompterParams& params, int& out_height,
                            int& out_width) {
  if (features.height % 4 != 0 || features.width % 4 != 0) {
    throw Error(ErrorCode::kShapeMismatch, "feature map " + std::to_string(features.height) + "x" +
                                               std::to_string(features.width) + " is not divisible by 4");
  }
  if (features.channels() != params.model_dim ||
      features.features.rows() != static_cast<Eigen::Index>(features.height) * features.width) {
    throw Error(ErrorCode::kShapeMismatch, "feature channels " + std::to_string(features.channels()) +
                                               " != model dim " + std::to_string(params.model_dim));
  }
  const ag::Var input = ag::constant(features.features);
  const int h1 = features.height / 2, w1 = features.width / 2;
  const ag::Var first = ag::relu(params.conv1(ag::im2col(input, features.height, features.width, 3, 2, 1)));
  out_height = h1 / 2;
  out_width = w1 / 2;
  return params.conv2(ag::im2col(first, h1, w1, 3, 2, 1));
}

Matrix positional_encoding_2d(int height, int width, int dim) {
  Matrix pos = Matrix::Zero(static_cast<Eigen::Index>(height) * width, dim);
  const int half = dim / 2;
  const int pairs = half / 2;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const Eigen::Index row = static_cast<Eigen::Index>(y) * width + x;
      const double ny = (y + 0.5) / height * 2.0 * M_PI;
      const double nx = (x + 0.5) / width * 2.0 * M_PI;
      for (int i = 0; i < pairs; ++i) {
        const double freq = std::pow(10000.0, -2.0 * i / half);
        pos(row, 2 * i) = std::sin(ny * freq);
        pos(row, 2 * i + 1) = std::cos(ny * freq);
        pos(row, half + 2 * i) = std::sin(nx * freq);
        pos(row, half + 2 * i + 1) = std::cos(nx * freq);
      }
    }
  }
  return pos;
}

PrompterGraph transformer_forward(const ag::Var& tokens, const Matrix& positions, const PrompterParams& params,
                                  const ForwardOptions& options) {
  const int heads = params.num_heads;
  ag::Var x = ag::add_constant(tokens, positions);
  for (const auto& layer : params.encoder) {
    ag::Var h = layer.norm_attn(x);
    x = ag::add(x, maybe_dropout(multi_head(layer.self_attn, h, h, heads), options));
    h = layer.norm_ffn(x);
    x = ag::add(x, maybe_dropout(layer.ffn_out(ag::relu(layer.ffn_in(h))), options));
  }
  const ag::Var memory = params.encoder_norm(x);

  ag::Var q = params.queries;
  for (const auto& layer : params.decoder) {
    ag::Var h = layer.norm_self(q);
    q = ag::add(q, maybe_dropout(multi_head(layer.self_attn, h, h, heads), options));
    h = layer.norm_cross(q);
    q = ag::add(q, maybe_dropout(multi_head(layer.cross_attn, h, memory, heads), options));
    h = layer.norm_ffn(q);
    q = ag::add(q, maybe_dropout(layer.ffn_out(ag::relu(layer.ffn_in(h))), options));
  }
  const ag::Var out = params.decoder_norm(q);
  return {apply_mlp(params.class_head, out), apply_mlp(params.prompt_head, out)};
}

PrompterGraph prompter_forward_graph(const FeatureMap& features, const PrompterParams& params,
                                     const ForwardOptions& options) {
  int h = 0, w = 0;
  const ag::Var reduced = downsample_features(features, params, h, w);
  return transformer_forward(reduced, positional_encoding_2d(h, w, params.model_dim), params, options);
}

StudentOutput prompter_forward(const FeatureMap& features, const PrompterParams& params) {
  const PrompterGraph graph = prompter_forward_graph(features, params);
  return {graph.class_logits.value(), graph.prompt_tokens.value()};
}

}  // namespace wps
