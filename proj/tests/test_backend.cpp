#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <random>

#include "oracles/oracles.hpp"
#include "wps/backend.hpp"

using namespace wps;

namespace {

Config small_config() {
  Config cfg = Config::desk_scale();
  cfg.image_size = 32;
  cfg.encoder_stride = 8;
  return validate_config(cfg);
}

ImageTensor random_image(int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  ImageTensor img(size, size);
  for (float& v : img.pixels) v = u(rng);
  return img;
}

}  // namespace

TEST_CASE("box logits invert") {
  const BoxParams box{0.3, 0.6, 0.25, 0.5};
  const auto l = box_to_logits(box);
  Vector token = Vector::Zero(8);
  for (int i = 0; i < 4; ++i) token(i) = l[i];
  const BoxParams back = invert_box_params(token);
  CHECK(back.cx == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(back.cy == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(back.w == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(back.h == doctest::Approx(0.5).epsilon(1e-12));

  const auto full = box_to_logits({0.5, 0.5, 1.0, 1.0});
  CHECK(std::isfinite(full[2]));
  CHECK_THROWS_AS(invert_box_params(Vector::Zero(3)), Error);
}

TEST_CASE("soft rectangle is positive exactly inside the box") {
  const int size = 16;
  const Matrix plane = render_soft_rect({0.5, 0.5, 0.5, 0.25}, 50.0, size);
  const auto expected = oracle::rasterize_box(4, 6, 12, 10, size);
  for (int k = 0; k < size * size; ++k) CHECK((plane(0, k) > 0) == (expected[k] == 1));
  // Pixel centre (7.5, 7.5) / 16 sits 1.5 / 16 below the top edge.
  CHECK(plane(0, 7 * size + 7) == doctest::Approx(50.0 * 1.5 / 16.0));
}

TEST_CASE("mock encoder shape, determinism and seed dependence") {
  const Config cfg = small_config();
  const MockBackend a(cfg, kMockBackendSeed), b(cfg, kMockBackendSeed), c(cfg, 7);
  const ImageTensor img = random_image(32, 1);
  const FeatureMap fa = a.encode_image(img);
  CHECK(fa.height == 4);
  CHECK(fa.width == 4);
  CHECK(fa.stride == 8);
  CHECK(fa.channels() == cfg.embed_dim);
  CHECK(fa.features == b.encode_image(img).features);
  CHECK(fa.features != c.encode_image(img).features);
  CHECK(a.parameter_checksum() == b.parameter_checksum());
  CHECK(a.parameter_checksum() != c.parameter_checksum());
  CHECK(a.frozen());

  // Orthonormal basis times orthonormal rows: the Gram matrix is a projection.
  const Matrix gram = a.projection().transpose() * a.projection();
  CHECK((gram * gram - gram).cwiseAbs().maxCoeff() < 1e-10);

  CHECK_THROWS_AS(a.encode_image(random_image(16, 2)), Error);
}

TEST_CASE("mock encoder separates textures") {
  const Config cfg = small_config();
  const MockBackend backend(cfg, kMockBackendSeed);
  ImageTensor flat(32, 32), striped(32, 32);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x)
      for (int c = 0; c < 3; ++c) {
        flat.at(y, x, c) = 0.5f;
        striped.at(y, x, c) = (x % 4 < 2) ? 0.3f : 0.7f;
      }
  const Matrix f = backend.encode_image(flat).features, s = backend.encode_image(striped).features;
  CHECK((f - s).norm() > 1e-3);
}

TEST_CASE("decode checks token width and preserves order") {
  const Config cfg = small_config();
  const MockBackend backend(cfg, kMockBackendSeed);
  const FeatureMap features = backend.encode_image(random_image(32, 3));
  CHECK_THROWS_AS(backend.decode_masks(features, Matrix::Zero(2, cfg.token_dim() + 1)), Error);
  try {
    backend.decode_masks(features, Matrix::Zero(1, 5));
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kDimMismatch);
  }
  Matrix tokens = Matrix::Zero(2, cfg.token_dim());
  tokens.row(0).head(4) << -1.0, -1.0, -1.0, -1.0;
  tokens.row(1).head(4) << 1.0, 1.0, -1.0, -1.0;
  const MaskLogits m = backend.decode_masks(features, tokens);
  CHECK(m.count == 2);
  CHECK(m.size == 32);
  CHECK(m.at(0, 8, 8) > 0);
  CHECK(m.at(0, 23, 23) < 0);
  CHECK(m.at(1, 23, 23) > 0);
  CHECK(m.at(1, 8, 8) < 0);
  CHECK(backend.decode_masks(features, Matrix::Zero(0, cfg.token_dim())).count == 0);
}

TEST_CASE("decode vector-Jacobian product matches finite differences") {
  const Config cfg = small_config();
  const MockBackend backend(cfg, kMockBackendSeed);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix tokens(2, cfg.token_dim());
  for (Eigen::Index i = 0; i < tokens.size(); ++i) tokens.data()[i] = 0.5 * n(rng);
  Matrix upstream(2, 32 * 32);
  for (Eigen::Index i = 0; i < upstream.size(); ++i) upstream.data()[i] = n(rng);
  const Matrix g = backend.decode_masks_vjp(tokens, upstream);
  const double h = 1e-6;
  Matrix numeric(tokens.rows(), tokens.cols());
  for (Eigen::Index i = 0; i < tokens.size(); ++i) {
    const double keep = tokens.data()[i];
    tokens.data()[i] = keep + h;
    const double up = backend.decode_masks({}, tokens).logits.cwiseProduct(upstream).sum();
    tokens.data()[i] = keep - h;
    const double down = backend.decode_masks({}, tokens).logits.cwiseProduct(upstream).sum();
    tokens.data()[i] = keep;
    numeric.data()[i] = (up - down) / (2 * h);
  }
  CHECK((numeric - g).norm() / std::max(numeric.norm(), 1e-12) < 1e-3);
  // Only the four geometry components reach the decoder.
  CHECK(g.rightCols(cfg.token_dim() - 4).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("tensor container round trip and corruption") {
  const std::string path = "test_backend_tensor.bin";
  write_tensor_file(path, {2, 3}, {1, 2, 3, 4, 5, 6});
  std::vector<std::uint32_t> dims;
  const auto data = read_tensor_file(path, dims);
  CHECK(dims == std::vector<std::uint32_t>{2, 3});
  CHECK(data == std::vector<double>{1, 2, 3, 4, 5, 6});
  std::filesystem::resize_file(path, 20);
  try {
    read_tensor_file(path, dims);
    FAIL("expected CorruptFile");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kCorruptFile);
  }
  std::filesystem::remove(path);
}

TEST_CASE("backend factory") {
  const Config cfg = small_config();
  CHECK(make_backend("mock", cfg)->name() == "mock");
  CHECK_THROWS_AS(make_backend("gpu", cfg), Error);
  try {
    make_backend("adapter:/nonexistent/adapter", cfg);
    FAIL("expected BackendError");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kBackendError);
  }
}

TEST_CASE("adapter backend speaks the file protocol") {
  const char* script = std::getenv("WPS_ADAPTER_SCRIPT");
  if (script == nullptr) {
    MESSAGE("WPS_ADAPTER_SCRIPT not set; skipping");
    return;
  }
  const Config cfg = small_config();
  setenv("ADAPTER_STRIDE", "8", 1);
  setenv("ADAPTER_DIM", std::to_string(cfg.embed_dim).c_str(), 1);
  const AdapterBackend adapter(cfg, script);
  const MockBackend mock(cfg, kMockBackendSeed);

  const ImageTensor img = random_image(32, 4);
  const FeatureMap f = adapter.encode_image(img);
  CHECK(f.height == 4);
  CHECK(f.channels() == cfg.embed_dim);
  double mean = 0.0;
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) mean += img.at(y, x, 0);
  CHECK(f.features(0, 0) == doctest::Approx(mean / 64.0).epsilon(1e-6));

  Matrix tokens = Matrix::Zero(2, cfg.token_dim());
  tokens.row(0).head(4) << 0.2, -0.3, -0.5, 0.1;
  tokens.row(1).head(4) << -0.7, 0.4, -1.0, -1.5;
  const MaskLogits a = adapter.decode_masks(f, tokens);
  const MaskLogits b = mock.decode_masks(f, tokens);
  CHECK((a.logits - b.logits).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(adapter.parameter_checksum() == adapter.parameter_checksum());
}
