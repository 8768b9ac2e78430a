#include "protomask/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>

using nlohmann::json;

namespace protomask::training {
namespace {

constexpr uint64_t kWarmupTag = 0x77726d75;
constexpr uint64_t kJointTag = 0x6a6f696e;
constexpr uint64_t kFinetuneTag = 0x66696e65;
constexpr uint64_t kInitTag = 0x696e6974;

struct SgdState {
  model::BackboneGrads backbone_vel;
  Matrix proto_vel;
  Matrix head_vel;

  SgdState(const model::PrototypeModel& m)
      : backbone_vel(m.backbone),
        proto_vel(m.protos.prototypes.rows, m.protos.prototypes.cols),
        head_vel(m.head.weight.rows, m.head.weight.cols) {}
};

void axpy(std::vector<double>& vel, const std::vector<double>& grad, std::vector<double>& param,
          double momentum, double lr) {
  for (size_t i = 0; i < param.size(); ++i) {
    vel[i] = momentum * vel[i] + grad[i];
    param[i] -= lr * vel[i];
  }
}

maskgen::ViewBatch augment_views(const maskgen::ViewBatch& views, const AugmentConfig& cfg,
                                 Rng& rng) {
  maskgen::ViewBatch out = views;
  bool flip = cfg.hflip && rng.uniform() < 0.5;
  for (size_t v = 0; v < out.views.size(); ++v) {
    int dx = cfg.max_shift > 0 ? rng.uniform_int(-cfg.max_shift, cfg.max_shift) : 0;
    int dy = cfg.max_shift > 0 ? rng.uniform_int(-cfg.max_shift, cfg.max_shift) : 0;
    if (!out.valid[v]) continue;
    Image& img = out.views[v];
    Image src = img;
    for (int c = 0; c < img.channels; ++c)
      for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
          int sx = std::clamp(x - dx, 0, img.width - 1);
          int sy = std::clamp(y - dy, 0, img.height - 1);
          if (flip) sx = img.width - 1 - sx;
          img.at(c, y, x) = src.at(c, sy, sx);
        }
  }
  return out;
}

enum class Stage { Warmup, Joint };

// Shared epoch loop for warmup/joint; they differ only in which parameter
// groups receive updates.
void gradient_stage(Stage stage, model::PrototypeModel& m, const TrainSet& data,
                    const ScheduleConfig& cfg, const losses::LossWeights& weights,
                    const AugmentConfig& augment, TrainLog* log) {
  cfg.validate();
  int epochs = stage == Stage::Warmup ? cfg.warmup_epochs : cfg.joint_epochs;
  if (epochs == 0) return;
  require(!data.empty(), "training stage: empty train set");

  uint64_t stage_seed = Rng::mix(cfg.seed, stage == Stage::Warmup ? kWarmupTag : kJointTag);
  SgdState sgd(m);
  model::BackboneGrads bb_grads(m.backbone);

  std::vector<size_t> order(data.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < epochs; ++epoch) {
    Rng shuffle_rng(Rng::mix(stage_seed, uint64_t(epoch)));
    shuffle_rng.shuffle(order);

    double sum_ce = 0, sum_cl = 0, sum_sep = 0, sum_div = 0, sum_total = 0;
    size_t seen = 0;

    for (size_t start = 0; start < order.size(); start += size_t(cfg.batch_size)) {
      size_t end = std::min(order.size(), start + size_t(cfg.batch_size));
      std::vector<losses::EmbeddedSample> batch;
      std::vector<std::vector<model::BackboneTrace>> traces(end - start);
      for (size_t bi = start; bi < end; ++bi) {
        size_t idx = order[bi];
        maskgen::ViewBatch views = data[idx].views;
        if (augment.enabled) {
          Rng arng(Rng::mix(Rng::mix(stage_seed, 0xA6A6), uint64_t(epoch) * 1000003 + idx));
          views = augment_views(views, augment, arng);
        }
        losses::EmbeddedSample s;
        s.embeddings = model::embed_views(views, m.backbone, &traces[bi - start]);
        s.valid = views.valid;
        s.label = data[idx].label;
        batch.push_back(std::move(s));
      }

      std::vector<Matrix> grad_z;
      Matrix grad_p;
      losses::BatchLoss bl = losses::combined_batch(batch, m.protos, m.head, m.similarity_eps,
                                                    weights, &grad_z, &grad_p, nullptr);
      require(std::isfinite(bl.total),
              "training diverged: non-finite loss at epoch " + std::to_string(epoch + 1));

      bb_grads.zero();
      std::vector<double> dz_row(size_t(m.backbone.config.embedding_dim));
      for (size_t si = 0; si < batch.size(); ++si)
        for (int v = 0; v < grad_z[si].rows; ++v) {
          const double* row = grad_z[si].row(v);
          bool nonzero = false;
          for (int d = 0; d < grad_z[si].cols; ++d) nonzero = nonzero || row[d] != 0.0;
          if (!nonzero) continue;
          std::copy(row, row + grad_z[si].cols, dz_row.begin());
          m.backbone.backward(traces[si][size_t(v)], dz_row, &bb_grads);
        }

      // prototypes always train in these stages
      axpy(sgd.proto_vel.v, grad_p.v, m.protos.prototypes.v, cfg.momentum, cfg.lr_prototypes);
      // projection layer trains in both stages; conv weights only jointly
      axpy(sgd.backbone_vel.proj_weight.v, bb_grads.proj_weight.v, m.backbone.proj_weight.v,
           cfg.momentum, cfg.lr_backbone);
      axpy(sgd.backbone_vel.proj_bias, bb_grads.proj_bias, m.backbone.proj_bias, cfg.momentum,
           cfg.lr_backbone);
      if (stage == Stage::Joint) {
        for (size_t li = 0; li < m.backbone.convs.size(); ++li) {
          axpy(sgd.backbone_vel.conv_weight[li], bb_grads.conv_weight[li],
               m.backbone.convs[li].weight, cfg.momentum, cfg.lr_backbone);
          axpy(sgd.backbone_vel.conv_bias[li], bb_grads.conv_bias[li], m.backbone.convs[li].bias,
               cfg.momentum, cfg.lr_backbone);
        }
      }

      double n = double(end - start);
      sum_ce += bl.ce * n;
      sum_cl += bl.cluster * n;
      sum_sep += bl.separation * n;
      sum_div += bl.diversity * n;
      sum_total += bl.total * n;
      seen += end - start;
    }

    TrainLogRow row;
    row.epoch = int(log->size()) + 1;
    row.ce = sum_ce / double(seen);
    row.cluster = sum_cl / double(seen);
    row.separation = sum_sep / double(seen);
    row.diversity = sum_div / double(seen);
    row.l1 = losses::l1_head_penalty(m.head);
    row.total = sum_total / double(seen);
    log->push_back(row);
  }
}

}  // namespace

void ScheduleConfig::validate() const {
  require(warmup_epochs >= 0 && joint_epochs >= 1 && finetune_epochs >= 0,
          "schedule: joint_epochs must be >= 1, others >= 0");
  require(batch_size >= 1, "schedule: batch_size must be >= 1");
  require(lr_backbone > 0 && lr_prototypes > 0 && lr_head > 0, "schedule: rates must be > 0");
  require(momentum >= 0 && momentum < 1, "schedule: momentum must be in [0,1)");
}

model::ClassificationHead init_head(const model::PrototypeSet& protos) {
  model::ClassificationHead head;
  head.weight = protos.class_assignment;
  return head;
}

model::PrototypeModel init_model(const model::BackboneConfig& config, int classes, int per_class,
                                 double similarity_eps, uint64_t seed) {
  model::PrototypeModel m;
  m.backbone.config = config;
  Rng rng(Rng::mix(seed, kInitTag));
  m.backbone.init(rng);
  // Embeddings live in (0,1)^D, so prototypes start uniform over the box.
  m.protos = model::PrototypeSet::uniform(classes, per_class, config.embedding_dim);
  for (double& v : m.protos.prototypes.v) v = rng.uniform();
  m.head = init_head(m.protos);
  m.similarity_eps = similarity_eps;
  return m;
}

void warmup_stage(model::PrototypeModel& m, const TrainSet& data, const ScheduleConfig& cfg,
                  const losses::LossWeights& weights, const AugmentConfig& augment,
                  TrainLog* log) {
  gradient_stage(Stage::Warmup, m, data, cfg, weights, augment, log);
}

void joint_stage(model::PrototypeModel& m, const TrainSet& data, const ScheduleConfig& cfg,
                 const losses::LossWeights& weights, const AugmentConfig& augment,
                 TrainLog* log) {
  gradient_stage(Stage::Joint, m, data, cfg, weights, augment, log);
}

std::vector<losses::EmbeddedSample> embed_train_set(const model::PrototypeModel& m,
                                                    const TrainSet& data) {
  std::vector<losses::EmbeddedSample> out(data.size());
  parallel_for(int(data.size()), [&](int i) {
    out[size_t(i)].embeddings = model::embed_views(data[size_t(i)].views, m.backbone);
    out[size_t(i)].valid = data[size_t(i)].views.valid;
    out[size_t(i)].label = data[size_t(i)].label;
  });
  return out;
}

ProjectionRecord project_prototypes(model::PrototypeModel& m, const TrainSet& data) {
  require(!data.empty(), "project_prototypes: empty train set");
  std::vector<losses::EmbeddedSample> embedded = embed_train_set(m, data);

  ProjectionRecord record;
  Matrix new_p = m.protos.prototypes;
  for (int p = 0; p < m.protos.size(); ++p) {
    int cls = m.protos.proto_class[size_t(p)];
    int best_sample = -1, best_view = -1;
    double best_d2 = 0.0;
    for (size_t i = 0; i < embedded.size(); ++i) {
      if (embedded[i].label != cls) continue;
      for (int v = 0; v < embedded[i].embeddings.rows; ++v) {
        if (!embedded[i].valid[size_t(v)]) continue;
        double d2 = squared_distance(embedded[i].embeddings.row(v),
                                     m.protos.prototypes.row(p), m.protos.dim());
        if (best_sample < 0 || d2 < best_d2) {  // strict <: ties keep the earliest
          best_sample = int(i);
          best_view = v;
          best_d2 = d2;
        }
      }
    }
    require(best_sample >= 0,
            "project_prototypes: class " + std::to_string(cls) + " has no training samples");
    std::copy(embedded[size_t(best_sample)].embeddings.row(best_view),
              embedded[size_t(best_sample)].embeddings.row(best_view) + m.protos.dim(),
              new_p.row(p));
    record.push_back(ProjectionEntry{p, cls, data[size_t(best_sample)].image_id, best_view,
                                     best_d2});
  }
  m.protos.prototypes = std::move(new_p);
  return record;
}

void finetune_head(model::PrototypeModel& m, const TrainSet& data, const ScheduleConfig& cfg,
                   double lambda_l1, const losses::LossWeights& weights, TrainLog* log) {
  cfg.validate();
  require(lambda_l1 >= 0.0, "finetune: lambda_l1 must be >= 0");
  if (cfg.finetune_epochs == 0) return;
  require(!data.empty(), "finetune: empty train set");

  // f and P are frozen here, so embeddings and pooled similarities are fixed.
  std::vector<losses::EmbeddedSample> embedded = embed_train_set(m, data);
  std::vector<std::vector<double>> pooled(data.size());
  std::vector<int> labels(data.size());
  for (size_t i = 0; i < data.size(); ++i) {
    Matrix sim = model::similarity_matrix(embedded[i].embeddings, m.protos, m.similarity_eps);
    std::vector<int> arg;
    model::max_pool(sim, embedded[i].valid, &pooled[i], &arg);
    labels[i] = embedded[i].label;
  }
  double const_cluster = losses::cluster_loss(embedded, m.protos);
  double const_sep = losses::separation_loss(embedded, m.protos);
  double const_div = losses::diversity_loss(m.protos, weights.alpha);

  uint64_t stage_seed = Rng::mix(cfg.seed, kFinetuneTag);
  std::vector<size_t> order(data.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.finetune_epochs; ++epoch) {
    Rng shuffle_rng(Rng::mix(stage_seed, uint64_t(epoch)));
    shuffle_rng.shuffle(order);
    double sum_ce = 0.0;
    size_t seen = 0;
    for (size_t start = 0; start < order.size(); start += size_t(cfg.batch_size)) {
      size_t end = std::min(order.size(), start + size_t(cfg.batch_size));
      std::vector<std::vector<double>> batch_pooled;
      std::vector<int> batch_labels;
      for (size_t bi = start; bi < end; ++bi) {
        batch_pooled.push_back(pooled[order[bi]]);
        batch_labels.push_back(labels[order[bi]]);
      }
      Matrix grad;
      double ce = losses::head_cross_entropy(batch_pooled, batch_labels, m.head, &grad);
      require(std::isfinite(ce), "finetune diverged: non-finite loss");
      // Plain proximal gradient descent: a CE step followed by an L1
      // soft-threshold. No momentum here; accumulated velocity would leak
      // dead weights past the shrinkage and exact zeros would not survive.
      for (size_t k = 0; k < m.head.weight.v.size(); ++k) {
        double w = m.head.weight.v[k] - cfg.lr_head * grad.v[k];
        double shrink = cfg.lr_head * lambda_l1;
        m.head.weight.v[k] = w > shrink ? w - shrink : (w < -shrink ? w + shrink : 0.0);
      }
      sum_ce += ce * double(end - start);
      seen += end - start;
    }
    TrainLogRow row;
    row.epoch = int(log->size()) + 1;
    row.ce = sum_ce / double(seen);
    row.cluster = const_cluster;
    row.separation = const_sep;
    row.diversity = const_div;
    row.l1 = losses::l1_head_penalty(m.head);
    row.total = row.ce + lambda_l1 * row.l1;
    log->push_back(row);
  }
}

RunResult run_schedule(const model::BackboneConfig& config, int classes, int per_class,
                       double similarity_eps, const TrainSet& data, const ScheduleConfig& cfg,
                       const losses::LossWeights& weights, const AugmentConfig& augment) {
  RunResult r;
  r.model = init_model(config, classes, per_class, similarity_eps, cfg.seed);
  warmup_stage(r.model, data, cfg, weights, augment, &r.log);
  joint_stage(r.model, data, cfg, weights, augment, &r.log);
  r.projection = project_prototypes(r.model, data);
  finetune_head(r.model, data, cfg, weights.lambda_l1, weights, &r.log);
  return r;
}

void write_train_log_csv(const std::string& path, const TrainLog& log) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot write train log: " + path);
  out << "epoch,L_C,L_clst,L_sep,L_div,L1,total\n";
  char buf[256];
  for (const TrainLogRow& r : log) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.epoch, r.ce,
                  r.cluster, r.separation, r.diversity, r.l1, r.total);
    out << buf;
  }
}

void write_projection_json(const std::string& path, const ProjectionRecord& record) {
  json j;
  j["entries"] = json::array();
  for (const ProjectionEntry& e : record)
    j["entries"].push_back({{"prototype", e.prototype},
                            {"class", e.cls},
                            {"image_id", e.image_id},
                            {"view", e.view},
                            {"distance", e.distance}});
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot write projection record: " + path);
  out << j.dump(2) << "\n";
}

ProjectionRecord read_projection_json(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open projection record: " + path);
  json j = json::parse(in);
  ProjectionRecord record;
  for (const json& je : j.at("entries"))
    record.push_back(ProjectionEntry{je.at("prototype").get<int>(), je.at("class").get<int>(),
                                     je.at("image_id").get<std::string>(), je.at("view").get<int>(),
                                     je.at("distance").get<double>()});
  return record;
}

}  // namespace protomask::training
