#pragma once

#include <string>
#include <vector>

#include "protomask/losses.hpp"
#include "protomask/model.hpp"

namespace protomask::training {

struct ScheduleConfig {
  int warmup_epochs = 5;
  int joint_epochs = 40;
  int finetune_epochs = 10;
  int batch_size = 16;
  double lr_backbone = 1e-3;
  double lr_prototypes = 3e-3;
  double lr_head = 1e-3;
  double momentum = 0.9;
  uint64_t seed = 0;

  void validate() const;
};

// View-level augmentation, used in the warmup and joint stages only.
struct AugmentConfig {
  bool enabled = true;
  bool hflip = true;
  int max_shift = 2;
};

struct TrainLogRow {
  int epoch = 0;  // global, 1-based
  double ce = 0.0;
  double cluster = 0.0;
  double separation = 0.0;
  double diversity = 0.0;
  double l1 = 0.0;     // head L1 at end of epoch
  double total = 0.0;  // the stage objective
};
using TrainLog = std::vector<TrainLogRow>;

void write_train_log_csv(const std::string& path, const TrainLog& log);

struct ProjectionEntry {
  int prototype = 0;
  int cls = 0;
  std::string image_id;
  int view = 0;
  double distance = 0.0;  // squared distance achieved at projection time
};
using ProjectionRecord = std::vector<ProjectionEntry>;

void write_projection_json(const std::string& path, const ProjectionRecord& record);
ProjectionRecord read_projection_json(const std::string& path);

struct TrainSample {
  maskgen::ViewBatch views;
  int label = 0;
  std::string image_id;
};
using TrainSet = std::vector<TrainSample>;

model::ClassificationHead init_head(const model::PrototypeSet& protos);

// Fresh model with seeded weights; prototypes ~ N(0, 0.5).
model::PrototypeModel init_model(const model::BackboneConfig& config, int classes, int per_class,
                                 double similarity_eps, uint64_t seed);

// Stage 0: prototypes and the projection-to-D layer train; conv weights and
// the head stay fixed.
void warmup_stage(model::PrototypeModel& m, const TrainSet& data, const ScheduleConfig& cfg,
                  const losses::LossWeights& weights, const AugmentConfig& augment, TrainLog* log);

// Stage 1: backbone and prototypes train against the combined objective;
// the head stays fixed at its init values.
void joint_stage(model::PrototypeModel& m, const TrainSet& data, const ScheduleConfig& cfg,
                 const losses::LossWeights& weights, const AugmentConfig& augment, TrainLog* log);

// Each prototype is replaced by its nearest same-class view embedding over
// the whole training set (frozen backbone); ties go to the lowest
// (sample index, view index).
ProjectionRecord project_prototypes(model::PrototypeModel& m, const TrainSet& data);

// Stage 2: head-only training on cross-entropy with an L1 proximal step;
// backbone and prototypes are frozen, so pooled similarities are cached.
// `weights` is only used to value the constant loss columns in the log.
void finetune_head(model::PrototypeModel& m, const TrainSet& data, const ScheduleConfig& cfg,
                   double lambda_l1, const losses::LossWeights& weights, TrainLog* log);

struct RunResult {
  model::PrototypeModel model;
  TrainLog log;
  ProjectionRecord projection;
};

// warmup -> joint -> projection -> finetune over an in-memory train set.
RunResult run_schedule(const model::BackboneConfig& config, int classes, int per_class,
                       double similarity_eps, const TrainSet& data, const ScheduleConfig& cfg,
                       const losses::LossWeights& weights, const AugmentConfig& augment);

// Embeds every view of every sample with the current (frozen) backbone.
std::vector<losses::EmbeddedSample> embed_train_set(const model::PrototypeModel& m,
                                                    const TrainSet& data);

}  // namespace protomask::training
