#pragma once

#include <vector>

#include "protomask/model.hpp"

namespace protomask::losses {

struct LossWeights {
  double lambda_ce = 1.0;
  double lambda_cluster = 0.8;
  double lambda_sep = 0.08;
  double lambda_div = 0.1;
  double alpha = 0.1;    // diversity sharpness
  double lambda_l1 = 1e-4;
};

// One sample after view embedding: Z_x rows are per-view embeddings.
struct EmbeddedSample {
  Matrix embeddings;  // V x D
  std::vector<uint8_t> valid;
  int label = 0;
};

// Mean negative log-likelihood; probabilities clamped at 1e-12.
double cross_entropy(const std::vector<std::vector<double>>& probs_batch,
                     const std::vector<int>& labels);

// Mean over samples of min over same-class prototypes, min over valid views,
// of the squared L2 distance.
double cluster_loss(const std::vector<EmbeddedSample>& batch, const model::PrototypeSet& protos);

// Negative of the same double-min taken over other-class prototypes.
double separation_loss(const std::vector<EmbeddedSample>& batch,
                       const model::PrototypeSet& protos);

// Sum over classes of exp(-alpha * sum of pairwise squared distances between
// the class's prototypes, ordered pairs).
double diversity_loss(const model::PrototypeSet& protos, double alpha);

double combined_loss(double ce, double cluster, double separation, double diversity,
                     const LossWeights& weights);

double l1_head_penalty(const model::ClassificationHead& head);

struct BatchLoss {
  double ce = 0.0;
  double cluster = 0.0;
  double separation = 0.0;
  double diversity = 0.0;
  double total = 0.0;
};

// Full training objective with analytic gradients. Components with zero
// weight are skipped. Min/max ties are broken toward the lowest index, so
// the subgradient choice is deterministic. Any gradient output may be null.
BatchLoss combined_batch(const std::vector<EmbeddedSample>& batch,
                         const model::PrototypeSet& protos, const model::ClassificationHead& head,
                         double similarity_eps, const LossWeights& weights,
                         std::vector<Matrix>* grad_embeddings, Matrix* grad_prototypes,
                         Matrix* grad_head);

// Head-only cross-entropy on cached pooled similarities (finetune path).
double head_cross_entropy(const std::vector<std::vector<double>>& pooled_batch,
                          const std::vector<int>& labels, const model::ClassificationHead& head,
                          Matrix* grad_head);

}  // namespace protomask::losses
