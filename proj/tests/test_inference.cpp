#include <doctest.h>

#include "oracles/oracles.hpp"
#include "wps/data.hpp"
#include "wps/inference.hpp"

using namespace wps;

namespace {

Config cfg32() {
  Config cfg = Config::desk_scale();
  cfg.image_size = 32;
  cfg.encoder_stride = 8;
  return validate_config(cfg);
}

}  // namespace

TEST_CASE("foreground selection drops the empty class and breaks ties low") {
  StudentOutput out;
  out.class_logits.resize(4, 4);
  out.class_logits << 2, 0, 0, 0,   // category 0
                      0, 0, 0, 5,   // empty
                      1, 1, 0, 0,   // tie between 0 and 1
                      0, 0, 3, 3;   // tie with empty: lowest index wins
  out.prompt_tokens = Matrix::Zero(4, 8);
  const auto kept = select_foreground(out);
  REQUIRE(kept.size() == 3);
  CHECK(kept[0].query == 0);
  CHECK(kept[0].category == 0);
  CHECK(kept[1].query == 2);
  CHECK(kept[1].category == 0);
  CHECK(kept[2].query == 3);
  CHECK(kept[2].category == 2);
  CHECK(kept[0].probability == doctest::Approx(std::exp(2.0) / (std::exp(2.0) + 3.0)));
}

TEST_CASE("merge takes the highest mask above threshold") {
  const Config cfg = cfg32();
  MaskLogits m;
  m.count = 2;
  m.size = 2;
  m.logits.resize(2, 4);
  m.logits << 1.0, -1.0, 0.5, 0.0,
              2.0, -3.0, 0.5, -1.0;
  const std::vector<KeptToken> kept = {{0, 1, 0.9}, {5, 2, 0.9}};
  const SemanticSegmentation s = merge_semantic(m, kept, cfg);
  CHECK(s.labels == std::vector<int>{2, 3, 1, 3});
  CHECK(s.scores[0] == doctest::Approx(sigmoid(2.0)));
  CHECK(s.scores[3] == doctest::Approx(0.5));  // exactly at threshold stays background
  CHECK_THROWS_AS(merge_semantic(m, std::vector<KeptToken>{{0, 1, 1.0}}, cfg), Error);
}

TEST_CASE("merge with nothing kept is all background") {
  const Config cfg = cfg32();
  MaskLogits m;
  m.size = 32;
  m.logits.resize(0, 32 * 32);
  const SemanticSegmentation s = merge_semantic(m, {}, cfg);
  CHECK(s.height == 32);
  for (int v : s.labels) CHECK(v == cfg.num_categories);
}

TEST_CASE("oracle prediction reproduces synthetic parts") {
  const Config cfg = validate_config(Config::desk_scale());
  const MockBackend backend(cfg, kMockBackendSeed);
  const Teacher teacher(cfg);
  const Dataset d = generate_synthetic(5, 3, 4, 128, 12);
  for (const auto& r : d.records) {
    const SemanticSegmentation s = oracle_predict(r.image, r.weak_labels, backend, teacher, cfg);
    EvaluationScope scope;
    const auto& gt = r.gt_mask.get();
    long agree = 0;
    for (size_t k = 0; k < gt.labels.size(); ++k) agree += gt.labels[k] == s.labels[k];
    CHECK(static_cast<double>(agree) / gt.labels.size() > 0.99);
  }
}

TEST_CASE("student prediction has the image shape") {
  const Config cfg = validate_config(Config::desk_scale());
  const MockBackend backend(cfg, kMockBackendSeed);
  const PrompterParams params = init_prompter(cfg, 1);
  const Dataset d = generate_synthetic(1, 3, 4, 128, 1);
  const SemanticSegmentation s = predict_image(d.records[0].image, params, backend, cfg);
  CHECK(s.height == 128);
  CHECK(s.labels.size() == 128u * 128u);
  for (int v : s.labels) CHECK((v >= 0 && v <= cfg.num_categories));
}
