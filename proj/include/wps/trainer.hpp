#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "wps/backend.hpp"
#include "wps/core.hpp"
#include "wps/data.hpp"
#include "wps/matching.hpp"
#include "wps/prompter.hpp"
#include "wps/teacher.hpp"

namespace wps {

// The backend is frozen, so its features can be computed once per image.
struct TrainingExample {
  std::string id;
  FeatureMap features;
  TargetSet targets;
};

// Reads only images and weak labels; ground-truth masks are never touched.
std::vector<TrainingExample> prepare_examples(const Dataset& dataset, const Backend& backend, const Teacher& teacher,
                                              const Config& cfg, LabelKind mode = LabelKind::kBox);

struct EpochRecord {
  int epoch = 0;
  double total = 0.0;
  double cls = 0.0;
  double reg = 0.0;
};

struct TrainState {
  Config cfg;
  PrompterParams params;
  std::vector<Matrix> adam_m;  // aligned with params.named_parameters()
  std::vector<Matrix> adam_v;
  std::int64_t adam_t = 0;
  int epoch = 0;  // completed epochs
  std::int64_t step = 0;
  std::int64_t total_steps = 0;  // schedule horizon, set by fit; 0 keeps lr constant
  std::uint64_t seed = 0;
  std::vector<EpochRecord> history;
  std::uint64_t backend_checksum = 0;
  std::uint64_t teacher_checksum = 0;
  double last_grad_norm = 0.0;
};

TrainState init_train_state(const Config& cfg, std::uint64_t seed);

// One Adam update from the mean loss over the batch.
LossBreakdown train_step(TrainState& state, std::span<const TrainingExample* const> batch, const Config& cfg);

// Same, encoding raw images through the frozen backend first.
LossBreakdown train_step(TrainState& state, const Backend& backend, std::span<const ImageTensor> images,
                         std::span<const TargetSet> targets, const Config& cfg);

struct FitOptions {
  std::string loss_log_path;    // CSV, empty to disable
  std::string checkpoint_dir;   // empty to disable periodic checkpoints
  const Backend* backend = nullptr;  // checksums verified when set
  const Teacher* teacher = nullptr;
  std::function<void(const EpochRecord&)> on_epoch;
};

// Runs epochs [state.epoch, cfg.epochs). Epoch shuffles are seeded by
// (seed, epoch), so resuming from a checkpoint replays the same order.
void fit(TrainState& state, std::span<const TrainingExample> examples, const Config& cfg,
         const FitOptions& options = {});
TrainState fit(std::span<const TrainingExample> examples, const Config& cfg, std::uint64_t seed,
               const FitOptions& options = {});

// Container: "WPSCKPT1", u32 version, u64 config hash, config text, counters,
// history, named tensor table, trailing FNV-1a checksum.
inline constexpr std::uint32_t kCheckpointVersion = 1;
void save_checkpoint(const TrainState& state, const std::string& path);
// When expected is given, a differing config hash raises VersionMismatch.
TrainState load_checkpoint(const std::string& path, const Config* expected = nullptr);

}  // namespace wps
