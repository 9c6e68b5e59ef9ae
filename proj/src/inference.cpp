#include "wps/inference.hpp"

#include "wps/matching.hpp"

namespace wps {

std::vector<KeptToken> select_foreground(const StudentOutput& output) {
  const Matrix probs = softmax_rows(output.class_logits);
  const Eigen::Index none = output.class_logits.cols() - 1;
  std::vector<KeptToken> kept;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < probs.cols(); ++c) {
      if (probs(i, c) > probs(i, best)) best = c;
    }
    if (best != none) kept.push_back({static_cast<int>(i), static_cast<int>(best), probs(i, best)});
  }
  return kept;
}

SemanticSegmentation merge_semantic(const MaskLogits& masks, std::span<const KeptToken> kept, const Config& cfg) {
  if (static_cast<size_t>(masks.count) != kept.size()) {
    throw Error(ErrorCode::kShapeMismatch, "mask count " + std::to_string(masks.count) + " != kept tokens " +
                                               std::to_string(kept.size()));
  }
  const int size = masks.count > 0 ? masks.size : cfg.image_size;
  SemanticSegmentation seg(size, size, cfg.num_categories);
  seg.scores.assign(seg.labels.size(), 0.0f);
  const Eigen::Index pixels = static_cast<Eigen::Index>(size) * size;
  for (Eigen::Index p = 0; p < pixels; ++p) {
    int best = -1;
    double best_prob = 0.0;
    for (int n = 0; n < masks.count; ++n) {
      const double prob = sigmoid(masks.logits(n, p));
      if (best < 0 || prob > best_prob) {
        best = n;
        best_prob = prob;
      }
    }
    if (best < 0) continue;
    seg.scores[p] = static_cast<float>(best_prob);
    if (best_prob > cfg.mask_threshold) seg.labels[p] = kept[best].category;
  }
  return seg;
}

SemanticSegmentation predict_features(const FeatureMap& features, const PrompterParams& params,
                                      const Backend& backend, const Config& cfg) {
  const StudentOutput out = prompter_forward(features, params);
  const auto kept = select_foreground(out);
  Matrix tokens(static_cast<Eigen::Index>(kept.size()), out.prompt_tokens.cols());
  for (size_t i = 0; i < kept.size(); ++i) tokens.row(static_cast<Eigen::Index>(i)) = out.prompt_tokens.row(kept[i].query);
  return merge_semantic(backend.decode_masks(features, tokens), kept, cfg);
}

SemanticSegmentation predict_image(const ImageTensor& image, const PrompterParams& params, const Backend& backend,
                                   const Config& cfg) {
  return predict_features(backend.encode_image(image), params, backend, cfg);
}

SemanticSegmentation oracle_predict(const ImageTensor& image, std::span<const WeakLabel> labels,
                                    const Backend& backend, const Teacher& teacher, const Config& cfg) {
  const FeatureMap features = backend.encode_image(image);
  Matrix tokens(static_cast<Eigen::Index>(labels.size()), cfg.token_dim());
  std::vector<KeptToken> kept;
  for (size_t i = 0; i < labels.size(); ++i) {
    tokens.row(static_cast<Eigen::Index>(i)) = teacher.encode(labels[i], cfg.image_size).vector.transpose();
    kept.push_back({static_cast<int>(i), labels[i].category, 1.0});
  }
  return merge_semantic(backend.decode_masks(features, tokens), kept, cfg);
}

}  // namespace wps
