#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <random>

#include "oracles/oracles.hpp"
#include "wps/evaluation.hpp"

using namespace wps;

namespace {

SemanticSegmentation seg(int h, int w, std::vector<int> labels) {
  SemanticSegmentation s(h, w, 0);
  s.labels = std::move(labels);
  return s;
}

}  // namespace

TEST_CASE("tallies on a small case") {
  ConfusionAccumulator acc(2);
  acc.accumulate(seg(2, 2, {0, 0, 1, 2}), seg(2, 2, {0, 1, 1, 1}));
  CHECK(acc.intersection() == std::vector<std::int64_t>{1, 1});
  CHECK(acc.union_pixels() == std::vector<std::int64_t>{2, 3});
  CHECK(acc.gt_pixels() == std::vector<std::int64_t>{2, 1});
  CHECK(acc.pred_pixels() == std::vector<std::int64_t>{1, 3});
  CHECK(compute_miou(acc) == (0.5 + 1.0 / 3.0) / 2.0);
  CHECK(compute_macc(acc) == (0.5 + 1.0) / 2.0);
}

TEST_CASE("categories without support are skipped") {
  ConfusionAccumulator acc(3);
  acc.accumulate(seg(1, 4, {0, 0, 3, 3}), seg(1, 4, {0, 3, 3, 1}));
  // Category 1: union 1, no gt. Category 2: absent everywhere.
  CHECK(compute_miou(acc) == (0.5 + 0.0) / 2.0);
  CHECK(compute_macc(acc) == 0.5);
}

TEST_CASE("empty evaluation") {
  ConfusionAccumulator acc(2);
  acc.accumulate(seg(1, 2, {2, 2}), seg(1, 2, {2, 2}));
  try {
    compute_miou(acc);
    FAIL("expected EmptyEvaluation");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kEmptyEvaluation);
  }
  CHECK_THROWS_AS(compute_macc(acc), Error);
}

TEST_CASE("input checks") {
  ConfusionAccumulator acc(2);
  CHECK_THROWS_AS(acc.accumulate(seg(1, 2, {0, 1}), seg(2, 1, {0, 1})), Error);
  try {
    acc.accumulate(seg(1, 2, {0, 3}), seg(1, 2, {0, 1}));
    FAIL("expected OutOfBounds");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kOutOfBounds);
  }
}

TEST_CASE("accumulation is additive and matches a brute-force tally") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> lab(0, 4);
  ConfusionAccumulator total(4), a(4), b(4);
  std::vector<int> all_gt, all_pred;
  for (int i = 0; i < 6; ++i) {
    std::vector<int> g(30), p(30);
    for (int k = 0; k < 30; ++k) g[k] = lab(rng), p[k] = lab(rng);
    total.accumulate(seg(5, 6, g), seg(5, 6, p));
    (i % 2 ? a : b).accumulate(seg(5, 6, g), seg(5, 6, p));
    all_gt.insert(all_gt.end(), g.begin(), g.end());
    all_pred.insert(all_pred.end(), p.begin(), p.end());
  }
  a.merge(b);
  CHECK(a == total);
  const oracle::Tally t = oracle::tally_metrics(all_gt, all_pred, 4);
  CHECK(compute_miou(total) == t.miou);
  CHECK(compute_macc(total) == t.macc);
  CHECK_THROWS_AS(a.merge(ConfusionAccumulator(3)), Error);
}

TEST_CASE("report json round trip") {
  ConfusionAccumulator acc(3);
  acc.accumulate(seg(1, 4, {0, 0, 3, 3}), seg(1, 4, {0, 3, 3, 1}));
  const MetricsReport r = make_report(acc, {"a", "b", "c"}, 1, Config::desk_scale());
  REQUIRE(r.per_category.size() == 3);
  CHECK(r.per_category[1].iou.has_value());
  CHECK_FALSE(r.per_category[1].acc.has_value());
  CHECK_FALSE(r.per_category[2].iou.has_value());
  CHECK(r.config_hash == hash_hex(config_hash(Config::desk_scale())));
  const MetricsReport back = MetricsReport::from_json(r.to_json());
  CHECK(back.to_json() == r.to_json());
  CHECK(back.miou == r.miou);
  const std::string path = "test_evaluation_report.json";
  r.write(path);
  std::ifstream in(path);
  CHECK(in.good());
  std::remove(path.c_str());
}

TEST_CASE("evaluate_dataset keeps predictors away from ground truth") {
  Dataset d;
  d.image_size = 4;
  d.category_names = {"x"};
  DatasetRecord r;
  r.id = "r";
  r.image = ImageTensor(4, 4);
  r.gt_mask.set(SemanticSegmentation(4, 4, 0));
  d.records.push_back(r);
  DatasetRecord unlabeled = r;
  unlabeled.gt_mask.reset();
  d.records.push_back(unlabeled);
  Config cfg = Config::desk_scale();
  cfg.num_categories = 1;

  const MetricsReport ok = evaluate_dataset(d, [](const DatasetRecord&) { return SemanticSegmentation(4, 4, 0); }, cfg);
  CHECK(ok.miou == 1.0);
  CHECK(ok.num_images == 1);

  try {
    evaluate_dataset(d, [](const DatasetRecord& rec) { return rec.gt_mask.get(); }, cfg);
    FAIL("expected TaintViolation");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kTaintViolation);
  }
}
