#include "wps/backend.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>

#include <unistd.h>

namespace wps {

namespace {

constexpr double kLogitClamp = 1e-6;

double clamp_unit(double v) { return std::clamp(v, kLogitClamp, 1.0 - kLogitClamp); }

}  // namespace

Matrix render_soft_rect(const BoxParams& box, double sharpness, int size) {
  const double min_extent = 2.0 / size;
  const double half_w = 0.5 * std::max(box.w, min_extent);
  const double half_h = 0.5 * std::max(box.h, min_extent);
  Matrix plane(1, static_cast<Eigen::Index>(size) * size);
  for (int py = 0; py < size; ++py) {
    const double y = (py + 0.5) / size;
    const double dy = std::min(box.cy + half_h - y, y - (box.cy - half_h));
    for (int px = 0; px < size; ++px) {
      const double x = (px + 0.5) / size;
      const double dx = std::min(box.cx + half_w - x, x - (box.cx - half_w));
      plane(0, static_cast<Eigen::Index>(py) * size + px) = sharpness * std::min(dx, dy);
    }
  }
  return plane;
}

BoxParams invert_box_params(const Eigen::Ref<const Vector>& token) {
  if (token.size() < 4) throw Error(ErrorCode::kDimMismatch, "token needs at least 4 components");
  return {sigmoid(token(0)), sigmoid(token(1)), sigmoid(token(2)), sigmoid(token(3))};
}

std::array<double, 4> box_to_logits(const BoxParams& box) {
  return {logit(clamp_unit(box.cx)), logit(clamp_unit(box.cy)), logit(clamp_unit(box.w)),
          logit(clamp_unit(box.h))};
}

void Backend::check_token_width(const Matrix& prompt_tokens) const {
  if (prompt_tokens.rows() > 0 && prompt_tokens.cols() != static_cast<Eigen::Index>(tokens_per_part()) * embed_dim()) {
    throw Error(ErrorCode::kDimMismatch, "prompt token width " + std::to_string(prompt_tokens.cols()) +
                                             " != K*d = " + std::to_string(tokens_per_part() * embed_dim()));
  }
}

MockBackend::MockBackend(const Config& cfg, std::uint64_t seed)
    : image_size_(cfg.image_size),
      embed_dim_(cfg.embed_dim),
      tokens_per_part_(cfg.tokens_per_part),
      stride_(cfg.encoder_stride),
      sharpness_(cfg.decoder_sharpness) {
  // Per-channel low-frequency 2D cosine basis over the patch (frequency
  // pairs ordered by u + v), as many as fit in embed_dim, mixed into the
  // embedding by a seeded random orthogonal matrix.
  const int s = stride_;
  std::vector<std::pair<int, int>> freqs;
  for (int total = 0; static_cast<int>(freqs.size()) * 3 < embed_dim_ && total < 2 * s - 1; ++total) {
    for (int u = std::max(0, total - s + 1); u <= std::min(total, s - 1); ++u) freqs.emplace_back(u, total - u);
  }
  while (static_cast<int>(freqs.size()) * 3 > embed_dim_) freqs.pop_back();
  const int basis_count = static_cast<int>(freqs.size()) * 3;

  Matrix basis = Matrix::Zero(static_cast<Eigen::Index>(s) * s * 3, basis_count);
  auto dct = [s](int k, int x) {
    const double scale = k == 0 ? std::sqrt(1.0 / s) : std::sqrt(2.0 / s);
    return scale * std::cos(M_PI * k * (x + 0.5) / s);
  };
  for (size_t f = 0; f < freqs.size(); ++f) {
    const auto [u, v] = freqs[f];
    for (int y = 0; y < s; ++y) {
      for (int x = 0; x < s; ++x) {
        const double value = dct(u, x) * dct(v, y);
        for (int c = 0; c < 3; ++c) basis((static_cast<Eigen::Index>(y) * s + x) * 3 + c, f * 3 + c) = value;
      }
    }
  }

  std::mt19937_64 rng(seed ^ 0x6d6f636b656e63ull);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix gaussian(embed_dim_, embed_dim_);
  for (Eigen::Index i = 0; i < gaussian.size(); ++i) gaussian.data()[i] = normal(rng);
  const Matrix mixing = Eigen::HouseholderQR<Matrix>(gaussian).householderQ();
  projection_ = basis * mixing.topRows(basis_count);
}

FeatureMap MockBackend::encode_image(const ImageTensor& image) const {
  if (image.height != image_size_ || image.width != image_size_) {
    throw Error(ErrorCode::kShapeMismatch, "encode_image: image is " + std::to_string(image.height) + "x" +
                                               std::to_string(image.width) + ", backend expects " +
                                               std::to_string(image_size_));
  }
  const int cells = image_size_ / stride_;
  Matrix patches(static_cast<Eigen::Index>(cells) * cells, static_cast<Eigen::Index>(stride_) * stride_ * 3);
  for (int cy = 0; cy < cells; ++cy) {
    for (int cx = 0; cx < cells; ++cx) {
      const Eigen::Index row = static_cast<Eigen::Index>(cy) * cells + cx;
      Eigen::Index col = 0;
      for (int y = 0; y < stride_; ++y) {
        for (int x = 0; x < stride_; ++x) {
          for (int c = 0; c < 3; ++c) {
            patches(row, col++) = image.at(cy * stride_ + y, cx * stride_ + x, c) - 0.5;
          }
        }
      }
    }
  }
  FeatureMap map;
  map.height = cells;
  map.width = cells;
  map.stride = stride_;
  map.features = patches * projection_;
  return map;
}

MaskLogits MockBackend::decode_masks(const FeatureMap& /*features*/, const Matrix& prompt_tokens) const {
  check_token_width(prompt_tokens);
  MaskLogits out;
  out.count = static_cast<int>(prompt_tokens.rows());
  out.size = image_size_;
  out.logits.resize(out.count, static_cast<Eigen::Index>(image_size_) * image_size_);
  for (int n = 0; n < out.count; ++n) {
    const Vector token = prompt_tokens.row(n).transpose();
    out.logits.row(n) = render_soft_rect(invert_box_params(token), sharpness_, image_size_);
  }
  return out;
}

Matrix MockBackend::decode_masks_vjp(const Matrix& prompt_tokens, const Matrix& upstream) const {
  check_token_width(prompt_tokens);
  const int size = image_size_;
  const double min_extent = 2.0 / size;
  Matrix grad = Matrix::Zero(prompt_tokens.rows(), prompt_tokens.cols());
  for (Eigen::Index n = 0; n < prompt_tokens.rows(); ++n) {
    const Vector token = prompt_tokens.row(n).transpose();
    const BoxParams box = invert_box_params(token);
    const bool w_clamped = box.w < min_extent;
    const bool h_clamped = box.h < min_extent;
    const double half_w = 0.5 * std::max(box.w, min_extent);
    const double half_h = 0.5 * std::max(box.h, min_extent);
    // d logit / d (cx, cy, w, h), accumulated against upstream.
    double g_cx = 0, g_cy = 0, g_w = 0, g_h = 0;
    for (int py = 0; py < size; ++py) {
      const double y = (py + 0.5) / size;
      const double top = y - (box.cy - half_h);
      const double bottom = box.cy + half_h - y;
      for (int px = 0; px < size; ++px) {
        const double g = upstream(n, static_cast<Eigen::Index>(py) * size + px) * sharpness_;
        if (g == 0.0) continue;
        const double x = (px + 0.5) / size;
        const double left = x - (box.cx - half_w);
        const double right = box.cx + half_w - x;
        const double best = std::min({left, right, top, bottom});
        if (best == right) {
          g_cx += g;
          g_w += 0.5 * g;
        } else if (best == left) {
          g_cx -= g;
          g_w += 0.5 * g;
        } else if (best == bottom) {
          g_cy += g;
          g_h += 0.5 * g;
        } else {
          g_cy -= g;
          g_h += 0.5 * g;
        }
      }
    }
    if (w_clamped) g_w = 0;
    if (h_clamped) g_h = 0;
    grad(n, 0) = g_cx * box.cx * (1 - box.cx);
    grad(n, 1) = g_cy * box.cy * (1 - box.cy);
    grad(n, 2) = g_w * box.w * (1 - box.w);
    grad(n, 3) = g_h * box.h * (1 - box.h);
  }
  return grad;
}

std::uint64_t MockBackend::parameter_checksum() const {
  std::uint64_t h = fnv1a(projection_.data(), sizeof(double) * projection_.size());
  const int header[4] = {image_size_, embed_dim_, stride_, tokens_per_part_};
  h = fnv1a(header, sizeof(header), h);
  return fnv1a(&sharpness_, sizeof(sharpness_), h);
}

void write_tensor_file(const std::string& path, const std::vector<std::uint32_t>& dims,
                       const std::vector<double>& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIOError, "cannot write " + path);
  out.write("WPST", 4);
  const std::uint32_t rank = static_cast<std::uint32_t>(dims.size());
  out.write(reinterpret_cast<const char*>(&rank), sizeof(rank));
  out.write(reinterpret_cast<const char*>(dims.data()), sizeof(std::uint32_t) * dims.size());
  out.write(reinterpret_cast<const char*>(data.data()), sizeof(double) * data.size());
  if (!out) throw Error(ErrorCode::kIOError, "short write to " + path);
}

std::vector<double> read_tensor_file(const std::string& path, std::vector<std::uint32_t>& dims) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIOError, "cannot read " + path);
  char magic[4];
  std::uint32_t rank = 0;
  if (!in.read(magic, 4) || std::memcmp(magic, "WPST", 4) != 0 ||
      !in.read(reinterpret_cast<char*>(&rank), sizeof(rank)) || rank > 8) {
    throw Error(ErrorCode::kCorruptFile, "bad tensor header in " + path);
  }
  dims.assign(rank, 0);
  size_t count = 1;
  for (auto& d : dims) {
    if (!in.read(reinterpret_cast<char*>(&d), sizeof(d))) throw Error(ErrorCode::kCorruptFile, "truncated " + path);
    count *= d;
  }
  std::vector<double> data(count);
  if (!in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(sizeof(double) * count))) {
    throw Error(ErrorCode::kCorruptFile, "truncated tensor data in " + path);
  }
  return data;
}

namespace {

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  return out + "'";
}

class ScratchDir {
 public:
  ScratchDir() {
    static std::atomic<unsigned> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("wps_adapter_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

void run_adapter(const std::string& command) {
  const int rc = std::system(command.c_str());
  if (rc != 0) throw Error(ErrorCode::kBackendError, "adapter command failed (" + std::to_string(rc) + "): " + command);
}

}  // namespace

AdapterBackend::AdapterBackend(const Config& cfg, std::string executable)
    : image_size_(cfg.image_size),
      embed_dim_(cfg.embed_dim),
      tokens_per_part_(cfg.tokens_per_part),
      stride_(cfg.encoder_stride),
      executable_(std::move(executable)) {
  if (!std::filesystem::exists(executable_)) {
    throw Error(ErrorCode::kBackendError, "adapter executable not found: " + executable_);
  }
}

FeatureMap AdapterBackend::encode_image(const ImageTensor& image) const {
  if (image.height != image_size_ || image.width != image_size_) {
    throw Error(ErrorCode::kShapeMismatch, "encode_image: image size does not match backend");
  }
  ScratchDir dir;
  const std::string in = dir.file("image.bin");
  const std::string out = dir.file("features.bin");
  write_tensor_file(in, {static_cast<std::uint32_t>(image.height), static_cast<std::uint32_t>(image.width), 3},
                    std::vector<double>(image.pixels.begin(), image.pixels.end()));
  run_adapter(shell_quote(executable_) + " encode " + shell_quote(in) + " " + shell_quote(out));
  std::vector<std::uint32_t> dims;
  const std::vector<double> data = read_tensor_file(out, dims);
  const int cells = image_size_ / stride_;
  if (dims.size() != 3 || dims[0] != static_cast<std::uint32_t>(cells) || dims[1] != static_cast<std::uint32_t>(cells) ||
      dims[2] != static_cast<std::uint32_t>(embed_dim_)) {
    throw Error(ErrorCode::kShapeMismatch, "adapter returned features with unexpected shape");
  }
  FeatureMap map;
  map.height = cells;
  map.width = cells;
  map.stride = stride_;
  map.features.resize(static_cast<Eigen::Index>(cells) * cells, embed_dim_);
  for (Eigen::Index r = 0; r < map.features.rows(); ++r) {
    for (Eigen::Index c = 0; c < embed_dim_; ++c) map.features(r, c) = data[r * embed_dim_ + c];
  }
  return map;
}

MaskLogits AdapterBackend::decode_masks(const FeatureMap& features, const Matrix& prompt_tokens) const {
  check_token_width(prompt_tokens);
  MaskLogits out;
  out.count = static_cast<int>(prompt_tokens.rows());
  out.size = image_size_;
  out.logits.resize(out.count, static_cast<Eigen::Index>(image_size_) * image_size_);
  if (out.count == 0) return out;

  ScratchDir dir;
  const std::string feat_path = dir.file("features.bin");
  const std::string tok_path = dir.file("tokens.bin");
  const std::string mask_path = dir.file("masks.bin");
  std::vector<double> feat(features.features.size());
  for (Eigen::Index r = 0; r < features.features.rows(); ++r) {
    for (Eigen::Index c = 0; c < features.features.cols(); ++c) feat[r * features.features.cols() + c] = features.features(r, c);
  }
  write_tensor_file(feat_path,
                    {static_cast<std::uint32_t>(features.height), static_cast<std::uint32_t>(features.width),
                     static_cast<std::uint32_t>(features.channels())},
                    feat);
  std::vector<double> tok(prompt_tokens.size());
  for (Eigen::Index r = 0; r < prompt_tokens.rows(); ++r) {
    for (Eigen::Index c = 0; c < prompt_tokens.cols(); ++c) tok[r * prompt_tokens.cols() + c] = prompt_tokens(r, c);
  }
  write_tensor_file(tok_path, {static_cast<std::uint32_t>(prompt_tokens.rows()), static_cast<std::uint32_t>(prompt_tokens.cols())},
                    tok);
  run_adapter(shell_quote(executable_) + " decode " + shell_quote(feat_path) + " " + shell_quote(tok_path) + " " +
              shell_quote(mask_path));
  std::vector<std::uint32_t> dims;
  const std::vector<double> data = read_tensor_file(mask_path, dims);
  if (dims.size() != 3 || dims[0] != static_cast<std::uint32_t>(out.count) ||
      dims[1] != static_cast<std::uint32_t>(image_size_) || dims[2] != static_cast<std::uint32_t>(image_size_)) {
    throw Error(ErrorCode::kShapeMismatch, "adapter returned masks with unexpected shape");
  }
  const Eigen::Index plane = static_cast<Eigen::Index>(image_size_) * image_size_;
  for (Eigen::Index n = 0; n < out.count; ++n) {
    for (Eigen::Index i = 0; i < plane; ++i) out.logits(n, i) = data[n * plane + i];
  }
  return out;
}

std::uint64_t AdapterBackend::parameter_checksum() const {
  std::ifstream in(executable_, std::ios::binary);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return fnv1a(bytes.data(), bytes.size());
}

std::unique_ptr<Backend> make_backend(const std::string& spec, const Config& cfg) {
  if (spec == "mock") return std::make_unique<MockBackend>(cfg, kMockBackendSeed);
  const std::string prefix = "adapter:";
  if (spec.rfind(prefix, 0) == 0) return std::make_unique<AdapterBackend>(cfg, spec.substr(prefix.size()));
  throw Error(ErrorCode::kUsage, "unknown backend '" + spec + "' (expected mock or adapter:<path>)");
}

}  // namespace wps
