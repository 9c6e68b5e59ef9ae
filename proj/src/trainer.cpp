#include "wps/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace wps {

namespace fs = std::filesystem;

std::vector<TrainingExample> prepare_examples(const Dataset& dataset, const Backend& backend, const Teacher& teacher,
                                              const Config& cfg, LabelKind mode) {
  if (dataset.max_parts() > cfg.num_queries) {
    throw Error(ErrorCode::kTooManyParts, "dataset has " + std::to_string(dataset.max_parts()) +
                                              " parts in one image but num_queries is " +
                                              std::to_string(cfg.num_queries));
  }
  std::vector<TrainingExample> examples;
  examples.reserve(dataset.records.size());
  for (const auto& record : dataset.records) {
    const auto labels = derive_weak_labels(record, mode);
    TrainingExample ex;
    ex.id = record.id;
    ex.features = backend.encode_image(record.image);
    ex.targets = teacher.build_target_set(labels, cfg);
    examples.push_back(std::move(ex));
  }
  return examples;
}

TrainState init_train_state(const Config& cfg, std::uint64_t seed) {
  TrainState state;
  state.cfg = cfg;
  state.seed = seed;
  state.params = init_prompter(cfg, seed);
  for (const auto& p : state.params.named_parameters()) {
    state.adam_m.push_back(Matrix::Zero(p.var.rows(), p.var.cols()));
    state.adam_v.push_back(Matrix::Zero(p.var.rows(), p.var.cols()));
  }
  return state;
}

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t words[2] = {a, b};
  return fnv1a(words, sizeof(words));
}

double scheduled_lr(const TrainState& state, const Config& cfg) {
  if (state.total_steps <= 0 || cfg.lr_final_scale >= 1.0) return cfg.lr;
  const double progress = std::min(1.0, static_cast<double>(state.step) / static_cast<double>(state.total_steps));
  const double f = cfg.lr_final_scale;
  return cfg.lr * (f + (1.0 - f) * 0.5 * (1.0 + std::cos(M_PI * progress)));
}

void adam_update(TrainState& state, const Config& cfg) {
  const auto params = state.params.named_parameters();
  const double lr = scheduled_lr(state, cfg);
  state.adam_t += 1;
  const double bias1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(state.adam_t));
  const double bias2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(state.adam_t));
  double norm_sq = 0.0;
  for (size_t i = 0; i < params.size(); ++i) {
    ag::Var var = params[i].var;
    if (!var.has_grad()) continue;
    const Matrix& g = var.grad();
    norm_sq += g.squaredNorm();
    state.adam_m[i] = cfg.adam_beta1 * state.adam_m[i] + (1.0 - cfg.adam_beta1) * g;
    state.adam_v[i] = cfg.adam_beta2 * state.adam_v[i] + (1.0 - cfg.adam_beta2) * g.cwiseProduct(g);
    const Matrix m_hat = state.adam_m[i] / bias1;
    const Matrix v_hat = state.adam_v[i] / bias2;
    var.mutable_value() -= lr * m_hat.cwiseQuotient((v_hat.array().sqrt() + cfg.adam_eps).matrix());
  }
  state.last_grad_norm = std::sqrt(norm_sq);
}

}  // namespace

LossBreakdown train_step(TrainState& state, std::span<const TrainingExample* const> batch, const Config& cfg) {
  if (batch.empty()) throw Error(ErrorCode::kShapeMismatch, "empty training batch");
  state.params.zero_grad();
  std::mt19937_64 rng(mix(state.seed, static_cast<std::uint64_t>(state.step)));
  ForwardOptions options{true, cfg.dropout, &rng};
  const double inv_batch = 1.0 / static_cast<double>(batch.size());

  LossBreakdown mean;
  mean.per_query = Vector::Zero(cfg.num_queries);
  for (const TrainingExample* ex : batch) {
    if (ex->targets.size() != cfg.num_queries) {
      throw Error(ErrorCode::kShapeMismatch, "target set for " + ex->id + " is not padded to num_queries");
    }
    PrompterGraph graph = prompter_forward_graph(ex->features, state.params, options);
    StudentOutput out{graph.class_logits.value(), graph.prompt_tokens.value()};
    if (!out.class_logits.allFinite() || !out.prompt_tokens.allFinite()) {
      throw Error(ErrorCode::kNonFiniteLoss, "non-finite prompter output at step " + std::to_string(state.step) +
                                                 " on sample " + ex->id);
    }
    const Assignment assignment = match_sets(ex->targets, out, cfg);
    const LossBreakdown loss = loss_for_assignment(ex->targets, out, assignment, cfg);
    if (!std::isfinite(loss.total)) {
      std::ostringstream msg;
      msg << "non-finite loss at step " << state.step << " on sample " << ex->id << " (cls=" << loss.cls
          << ", reg=" << loss.reg << ", max |logit|=" << out.class_logits.cwiseAbs().maxCoeff() << ")";
      throw Error(ErrorCode::kNonFiniteLoss, msg.str());
    }
    const LossGradients grads = loss_gradients(ex->targets, out, assignment, cfg);
    ag::backward({{graph.class_logits, grads.class_logits * inv_batch},
                  {graph.prompt_tokens, grads.prompt_tokens * inv_batch}});
    mean.total += loss.total * inv_batch;
    mean.cls += loss.cls * inv_batch;
    mean.reg += loss.reg * inv_batch;
    mean.per_query += loss.per_query * inv_batch;
  }
  adam_update(state, cfg);
  state.step += 1;
  return mean;
}

LossBreakdown train_step(TrainState& state, const Backend& backend, std::span<const ImageTensor> images,
                         std::span<const TargetSet> targets, const Config& cfg) {
  if (images.size() != targets.size()) throw Error(ErrorCode::kShapeMismatch, "images and targets differ in count");
  std::vector<TrainingExample> examples(images.size());
  std::vector<const TrainingExample*> batch;
  for (size_t i = 0; i < images.size(); ++i) {
    examples[i].id = std::to_string(i);
    examples[i].features = backend.encode_image(images[i]);
    examples[i].targets = targets[i];
    batch.push_back(&examples[i]);
  }
  return train_step(state, batch, cfg);
}

namespace {

void verify_frozen(const TrainState& state, const FitOptions& options) {
  if (options.backend && options.backend->parameter_checksum() != state.backend_checksum) {
    throw Error(ErrorCode::kBackendError, "backend parameters changed during training");
  }
  if (options.teacher && options.teacher->parameter_checksum() != state.teacher_checksum) {
    throw Error(ErrorCode::kBackendError, "teacher parameters changed during training");
  }
}

}  // namespace

void fit(TrainState& state, std::span<const TrainingExample> examples, const Config& cfg, const FitOptions& options) {
  if (state.epoch >= cfg.epochs) return;
  if (examples.empty()) throw Error(ErrorCode::kShapeMismatch, "no training examples");

  if (state.step == 0) {
    if (options.backend) state.backend_checksum = options.backend->parameter_checksum();
    if (options.teacher) state.teacher_checksum = options.teacher->parameter_checksum();
  }
  verify_frozen(state, options);

  std::ofstream log;
  if (!options.loss_log_path.empty()) {
    const bool fresh = state.epoch == 0 || !fs::exists(options.loss_log_path);
    log.open(options.loss_log_path, fresh ? std::ios::trunc : std::ios::app);
    if (!log) throw Error(ErrorCode::kIOError, "cannot write " + options.loss_log_path);
    if (fresh) log << "epoch,step,total,cls,reg\n";
    log.precision(10);
  }
  if (!options.checkpoint_dir.empty()) fs::create_directories(options.checkpoint_dir);

  const std::int64_t steps_per_epoch = (static_cast<std::int64_t>(examples.size()) + cfg.batch_size - 1) / cfg.batch_size;
  state.total_steps = steps_per_epoch * cfg.epochs;

  std::vector<size_t> order(examples.size());
  std::vector<const TrainingExample*> batch;
  for (int epoch = state.epoch; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(mix(state.seed, 0x45504F4348ull + static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);

    EpochRecord record{epoch + 1, 0.0, 0.0, 0.0};
    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
      batch.clear();
      for (size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i) batch.push_back(&examples[order[i]]);
      const LossBreakdown loss = train_step(state, batch, cfg);
      const double weight = static_cast<double>(batch.size()) / static_cast<double>(order.size());
      record.total += loss.total * weight;
      record.cls += loss.cls * weight;
      record.reg += loss.reg * weight;
      if (log.is_open()) log << epoch + 1 << ',' << state.step << ',' << loss.total << ',' << loss.cls << ',' << loss.reg << '\n';
    }
    state.epoch = epoch + 1;
    state.history.push_back(record);
    if (options.on_epoch) options.on_epoch(record);

    const bool last = state.epoch == cfg.epochs;
    if (!options.checkpoint_dir.empty() && (last || (cfg.checkpoint_every > 0 && state.epoch % cfg.checkpoint_every == 0))) {
      verify_frozen(state, options);
      char name[32];
      std::snprintf(name, sizeof(name), "epoch_%04d.ckpt", state.epoch);
      save_checkpoint(state, (fs::path(options.checkpoint_dir) / name).string());
    }
  }
  verify_frozen(state, options);
}

TrainState fit(std::span<const TrainingExample> examples, const Config& cfg, std::uint64_t seed,
               const FitOptions& options) {
  TrainState state = init_train_state(cfg, seed);
  fit(state, examples, cfg, options);
  return state;
}

namespace {

constexpr char kMagic[8] = {'W', 'P', 'S', 'C', 'K', 'P', 'T', '1'};

class Writer {
 public:
  template <typename T>
  void pod(const T& v) {
    buffer_.append(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void text(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    buffer_.append(s);
  }
  void matrix(const Matrix& m) {
    pod(static_cast<std::uint32_t>(m.rows()));
    pod(static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) pod(m(r, c));
    }
  }
  void raw(const void* p, size_t n) { buffer_.append(static_cast<const char*>(p), n); }
  const std::string& buffer() const { return buffer_; }

 private:
  std::string buffer_;
};

class Reader {
 public:
  Reader(const std::string& data, size_t end) : data_(data), end_(end) {}

  template <typename T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string text() {
    const auto n = pod<std::uint32_t>();
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  Matrix matrix() {
    const auto rows = pod<std::uint32_t>();
    const auto cols = pod<std::uint32_t>();
    need(static_cast<size_t>(rows) * cols * sizeof(double));
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = pod<double>();
    }
    return m;
  }
  bool done() const { return pos_ == end_; }

 private:
  void need(size_t n) const {
    if (pos_ + n > end_) throw Error(ErrorCode::kCorruptFile, "checkpoint truncated");
  }
  const std::string& data_;
  size_t end_;
  size_t pos_ = sizeof(kMagic);
};

}  // namespace

void save_checkpoint(const TrainState& state, const std::string& path) {
  Writer w;
  w.raw(kMagic, sizeof(kMagic));
  w.pod(kCheckpointVersion);
  w.pod(config_hash(state.cfg));
  w.text(serialize_config(state.cfg));
  w.pod(static_cast<std::int32_t>(state.epoch));
  w.pod(static_cast<std::int64_t>(state.step));
  w.pod(static_cast<std::int64_t>(state.total_steps));
  w.pod(state.seed);
  w.pod(static_cast<std::int64_t>(state.adam_t));
  w.pod(state.backend_checksum);
  w.pod(state.teacher_checksum);
  w.pod(static_cast<std::uint32_t>(state.history.size()));
  for (const auto& h : state.history) {
    w.pod(static_cast<std::int32_t>(h.epoch));
    w.pod(h.total);
    w.pod(h.cls);
    w.pod(h.reg);
  }
  const auto params = state.params.named_parameters();
  w.pod(static_cast<std::uint32_t>(params.size() * 3));
  for (size_t i = 0; i < params.size(); ++i) {
    w.text("param/" + params[i].name);
    w.matrix(params[i].var.value());
    w.text("adam_m/" + params[i].name);
    w.matrix(state.adam_m[i]);
    w.text("adam_v/" + params[i].name);
    w.matrix(state.adam_v[i]);
  }
  const std::uint64_t checksum = fnv1a(w.buffer().data(), w.buffer().size());
  w.pod(checksum);

  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIOError, "cannot write checkpoint " + path);
    out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
    if (!out) throw Error(ErrorCode::kIOError, "short write on checkpoint " + path);
  }
  fs::rename(tmp, target);
}

TrainState load_checkpoint(const std::string& path, const Config* expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIOError, "cannot open checkpoint " + path);
  const std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (data.size() < sizeof(kMagic) + sizeof(std::uint64_t) || std::memcmp(data.data(), kMagic, sizeof(kMagic)) != 0) {
    throw Error(ErrorCode::kCorruptFile, path + " is not a checkpoint");
  }
  const size_t body = data.size() - sizeof(std::uint64_t);
  std::uint64_t stored;
  std::memcpy(&stored, data.data() + body, sizeof(stored));
  Reader r(data, body);
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::kVersionMismatch, "checkpoint format version " + std::to_string(version) +
                                                 ", expected " + std::to_string(kCheckpointVersion));
  }
  if (stored != fnv1a(data.data(), body)) throw Error(ErrorCode::kCorruptFile, "checkpoint checksum mismatch");

  const auto hash = r.pod<std::uint64_t>();
  const std::string text = r.text();
  Config cfg;
  try {
    cfg = parse_config(text);
  } catch (const Error& e) {
    throw Error(ErrorCode::kCorruptFile, std::string("checkpoint config: ") + e.what());
  }
  if (config_hash(cfg) != hash) throw Error(ErrorCode::kCorruptFile, "checkpoint config hash inconsistent");
  if (expected && config_hash(*expected) != hash) {
    throw Error(ErrorCode::kVersionMismatch, "checkpoint config hash " + hash_hex(hash) + " differs from " +
                                                 hash_hex(config_hash(*expected)));
  }

  TrainState state = init_train_state(cfg, 0);
  state.epoch = r.pod<std::int32_t>();
  state.step = r.pod<std::int64_t>();
  state.total_steps = r.pod<std::int64_t>();
  state.seed = r.pod<std::uint64_t>();
  state.adam_t = r.pod<std::int64_t>();
  state.backend_checksum = r.pod<std::uint64_t>();
  state.teacher_checksum = r.pod<std::uint64_t>();
  const auto history = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < history; ++i) {
    EpochRecord h;
    h.epoch = r.pod<std::int32_t>();
    h.total = r.pod<double>();
    h.cls = r.pod<double>();
    h.reg = r.pod<double>();
    state.history.push_back(h);
  }

  auto params = state.params.named_parameters();
  const auto tensors = r.pod<std::uint32_t>();
  if (tensors != params.size() * 3) throw Error(ErrorCode::kCorruptFile, "checkpoint tensor count mismatch");
  for (size_t i = 0; i < params.size(); ++i) {
    Matrix* slots[3] = {&params[i].var.mutable_value(), &state.adam_m[i], &state.adam_v[i]};
    const char* kinds[3] = {"param/", "adam_m/", "adam_v/"};
    for (int k = 0; k < 3; ++k) {
      const std::string name = r.text();
      if (name != kinds[k] + params[i].name) throw Error(ErrorCode::kCorruptFile, "unexpected tensor " + name);
      Matrix m = r.matrix();
      if (m.rows() != slots[k]->rows() || m.cols() != slots[k]->cols()) {
        throw Error(ErrorCode::kCorruptFile, "shape mismatch for tensor " + name);
      }
      *slots[k] = std::move(m);
    }
  }
  if (!r.done()) throw Error(ErrorCode::kCorruptFile, "trailing bytes in checkpoint");
  return state;
}

}  // namespace wps
