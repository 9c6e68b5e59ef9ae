#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "wps/core.hpp"

using namespace wps;

TEST_CASE("error messages carry the code name") {
  const Error e(ErrorCode::kDegenerateBox, "x_min >= x_max");
  CHECK(std::string(e.what()) == "DegenerateBox: x_min >= x_max");
  CHECK(static_cast<int>(e.code()) == 13);
  CHECK(error_code_name(ErrorCode::kTaintViolation) == "TaintViolation");
}

TEST_CASE("presets validate") {
  CHECK_NOTHROW(validate_config(Config::paper_scale()));
  const Config desk = validate_config(Config::desk_scale());
  CHECK(desk.image_size == 128);
  CHECK(desk.num_queries == 8);
  CHECK(desk.feature_size() == 8);
  const Config paper = Config::paper_scale();
  CHECK(paper.image_size == 1024);
  CHECK(paper.embed_dim == 256);
  CHECK(paper.num_queries == 25);
  CHECK(paper.alpha == 5.0);
  CHECK(paper.beta == 20.0);
  CHECK(paper.lambda_cls == 10.0);
  CHECK(paper.lambda_reg == 1.0);
}

TEST_CASE("weight presets") {
  Config cfg;
  apply_weights(cfg, kAlternateWeights);
  CHECK(cfg.alpha == 10.0);
  CHECK(cfg.beta == 1.0);
  CHECK(cfg.lambda_cls == 5.0);
  CHECK(cfg.lambda_reg == 20.0);
  apply_weights(cfg, kDefaultWeights);
  CHECK(cfg == Config{});
}

TEST_CASE("invalid configs are rejected") {
  auto expect_invalid = [](auto mutate) {
    Config cfg = Config::desk_scale();
    mutate(cfg);
    try {
      validate_config(cfg);
      FAIL("expected InvalidConfig");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kInvalidConfig);
    }
  };
  expect_invalid([](Config& c) { c.embed_dim = 30; });  // heads do not divide
  expect_invalid([](Config& c) { c.tokens_per_part = 3; });
  expect_invalid([](Config& c) { c.image_size = 100; });
  expect_invalid([](Config& c) { c.num_queries = 0; });
  expect_invalid([](Config& c) { c.mask_threshold = 1.0; });
  expect_invalid([](Config& c) { c.lr_final_scale = 1.5; });
  expect_invalid([](Config& c) { c.dropout = -0.1; });
}

TEST_CASE("config text round trip") {
  Config cfg = Config::desk_scale();
  cfg.lr = 3.25e-4;
  cfg.seed = 123456789012345ull;
  cfg.eos_weight = 0.1;
  const std::string text = serialize_config(cfg);
  CHECK(parse_config(text) == cfg);
  CHECK(config_hash(parse_config(text)) == config_hash(cfg));
  cfg.lr = 3.2500001e-4;
  CHECK(config_hash(cfg) != config_hash(parse_config(text)));
}

TEST_CASE("config parsing handles comments and rejects junk") {
  const Config cfg = parse_config("# comment\n  embed_dim = 64  # trailing\n\nnum_queries=9\n");
  CHECK(cfg.embed_dim == 64);
  CHECK(cfg.num_queries == 9);
  CHECK_THROWS_AS(parse_config("bogus_key=1\n"), Error);
  CHECK_THROWS_AS(parse_config("embed_dim\n"), Error);
  CHECK_THROWS_AS(parse_config("embed_dim=6.5\n"), Error);
  CHECK_THROWS_AS(parse_config("lr=abc\n"), Error);
}

TEST_CASE("config file loading") {
  const std::string path = "test_core_config.txt";
  {
    std::ofstream out(path);
    out << serialize_config(Config::desk_scale());
  }
  CHECK(load_config_file(path) == Config::desk_scale());
  std::remove(path.c_str());
  try {
    load_config_file("does/not/exist.txt");
    FAIL("expected IOError");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kIOError);
  }
}

TEST_CASE("label validation") {
  CHECK_NOTHROW(validate_label(WeakLabel::make_box(0, 0, 10, 10, 1), 10, 10, 2));
  auto code_of = [](const WeakLabel& l) {
    try {
      validate_label(l, 10, 10, 2);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::kUsage;
  };
  CHECK(code_of(WeakLabel::make_box(5, 0, 5, 4, 0)) == ErrorCode::kDegenerateBox);
  CHECK(code_of(WeakLabel::make_box(6, 0, 5, 4, 0)) == ErrorCode::kDegenerateBox);
  CHECK(code_of(WeakLabel::make_box(-1, 0, 5, 4, 0)) == ErrorCode::kOutOfBounds);
  CHECK(code_of(WeakLabel::make_box(0, 0, 11, 4, 0)) == ErrorCode::kOutOfBounds);
  CHECK(code_of(WeakLabel::make_box(0, 0, 5, 4, 2)) == ErrorCode::kOutOfBounds);
  CHECK(code_of(WeakLabel::make_point(11, 3, 0)) == ErrorCode::kOutOfBounds);
  CHECK(code_of(WeakLabel::make_point(3, 3, 1)) == ErrorCode::kUsage);
}

TEST_CASE("image validation") {
  ImageTensor img(4, 4);
  CHECK_NOTHROW(validate_image(img, 4));
  CHECK_THROWS_AS(validate_image(img, 8), Error);
  img.at(1, 1, 2) = 1.5f;
  CHECK_THROWS_AS(validate_image(img, 4), Error);
}

TEST_CASE("hash helpers") {
  CHECK(hash_hex(0xabcull) == "0000000000000abc");
  const char a[] = "abc";
  CHECK(fnv1a(a, 3) == 0xe71fa2190541574bull);
}
