#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "wps/baseline.hpp"
#include "wps/inference.hpp"

using namespace wps;

namespace {

DatasetRecord two_box_record() {
  DatasetRecord r;
  r.id = "img";
  r.image = ImageTensor(128, 128);
  r.weak_labels = {WeakLabel::make_box(10, 10, 50, 40, 0), WeakLabel::make_box(60, 70, 120, 126, 2)};
  return r;
}

}  // namespace

TEST_CASE("zero jitter returns the annotated boxes") {
  const DatasetRecord r = two_box_record();
  const auto boxes = oracle_detector(r, 0.0, 0.0, 3);
  REQUIRE(boxes.size() == 2);
  CHECK(boxes[1].box.x_min == 60);
  CHECK(boxes[1].box.y_max == 126);
  CHECK(boxes[1].category == 2);
}

TEST_CASE("jitter is seeded, bounded and clamped") {
  const DatasetRecord r = two_box_record();
  const auto a = oracle_detector(r, 0.1, 0.0, 7), b = oracle_detector(r, 0.1, 0.0, 7), c = oracle_detector(r, 0.1, 0.0, 8);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i].box.x_min == b[i].box.x_min);
  bool differs = a.size() != c.size();
  for (size_t i = 0; !differs && i < a.size(); ++i) differs = a[i].box.x_min != c[i].box.x_min;
  CHECK(differs);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    for (const auto& l : oracle_detector(r, 0.3, 0.0, seed)) {
      CHECK(l.box.x_min >= 0);
      CHECK(l.box.x_max <= 128);
      CHECK(l.box.width() >= 2.0);
      CHECK(l.box.height() >= 2.0);
    }
  }
}

TEST_CASE("drop probability") {
  const DatasetRecord r = two_box_record();
  CHECK(oracle_detector(r, 0.0, 1.0, 1).empty());
  int kept = 0;
  for (std::uint64_t seed = 0; seed < 400; ++seed) kept += static_cast<int>(oracle_detector(r, 0.0, 0.5, seed).size());
  CHECK(kept > 300);
  CHECK(kept < 500);
  CHECK_THROWS_AS(oracle_detector(r, -0.1, 0.0, 1), Error);
  CHECK_THROWS_AS(oracle_detector(r, 0.0, 1.5, 1), Error);
}

TEST_CASE("oracle detector seeds per image") {
  DatasetRecord a = two_box_record(), b = two_box_record();
  b.id = "other";
  const OracleDetector det(0.05, 0.0, 1);
  CHECK(det.detect(a.image, &a)[0].label.box.x_min != det.detect(b.image, &b)[0].label.box.x_min);
  CHECK(det.detect(a.image, &a)[0].label.box.x_min == det.detect(a.image, &a)[0].label.box.x_min);
  CHECK_THROWS_AS(det.detect(a.image, nullptr), Error);
}

TEST_CASE("exact detections reproduce the oracle prediction") {
  const Config cfg = validate_config(Config::desk_scale());
  const MockBackend backend(cfg, kMockBackendSeed);
  const Teacher teacher(cfg);
  const DatasetRecord r = two_box_record();
  const OracleDetector det(0.0, 0.0, 1);
  const SemanticSegmentation a = det_sam_predict(r, det, backend, teacher, cfg);
  const SemanticSegmentation b = oracle_predict(r.image, r.weak_labels, backend, teacher, cfg);
  CHECK(a.labels == b.labels);
}

TEST_CASE("file detector") {
  const std::string path = "test_baseline_dets.json";
  std::ofstream(path) << R"({"img": [{"bbox": [10, 20, 30, 40], "category": 1, "score": 0.7}], "none": []})";
  const FileDetector det(path, 128, 3);
  DatasetRecord r = two_box_record();
  const auto d = det.detect(r.image, &r);
  REQUIRE(d.size() == 1);
  CHECK(d[0].label.box.x_max == 40);
  CHECK(d[0].label.box.y_max == 60);
  CHECK(d[0].score == 0.7);
  r.id = "missing";
  CHECK(det.detect(r.image, &r).empty());

  std::ofstream(path) << R"({"img": [{"bbox": [100, 20, 30, 40], "category": 1}]})";
  try {
    FileDetector bad(path, 128, 3);
    FAIL("expected out-of-bounds box");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kOutOfBounds);
  }
  std::ofstream(path) << R"({"img": [{"bbox": [1, 2], "category": 1}]})";
  CHECK_THROWS_AS(FileDetector(path, 128, 3), Error);
  std::remove(path.c_str());
}
