#pragma once

#include <span>
#include <vector>

#include "wps/backend.hpp"
#include "wps/core.hpp"
#include "wps/prompter.hpp"
#include "wps/teacher.hpp"

namespace wps {

struct KeptToken {
  int query = 0;
  int category = 0;
  double probability = 0.0;
};

// Queries whose argmax class is not "no part". Ties go to the lowest index.
std::vector<KeptToken> select_foreground(const StudentOutput& output);

// Each pixel takes the category of the kept mask with the highest sigmoid,
// if that exceeds cfg.mask_threshold; otherwise background. Equal maxima
// resolve to the earlier entry of kept. scores holds the per-pixel maximum.
SemanticSegmentation merge_semantic(const MaskLogits& masks, std::span<const KeptToken> kept, const Config& cfg);

SemanticSegmentation predict_features(const FeatureMap& features, const PrompterParams& params,
                                      const Backend& backend, const Config& cfg);
SemanticSegmentation predict_image(const ImageTensor& image, const PrompterParams& params, const Backend& backend,
                                   const Config& cfg);

// Upper-bound mode: annotated labels go straight through the teacher.
SemanticSegmentation oracle_predict(const ImageTensor& image, std::span<const WeakLabel> labels,
                                    const Backend& backend, const Teacher& teacher, const Config& cfg);

}  // namespace wps
