#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vrap/scene.hpp"
#include "vrap/tensor.hpp"
#include "vrap/weights.hpp"

namespace vrap {

// Scene-graph model over ground-truth boxes: a 3-block conv backbone on
// 32x32 crops, a linear object head, and an MLP pair head over
// [subject, object, union] crop features plus the two label vectors.
struct SggModel {
  DatasetSchema schema;
  // conv3x3 same-pad + relu + avg_pool_2x2; channels 3 -> 8 -> 16 -> 32
  Tensor conv_w[3], conv_b[3];
  Tensor obj_w, obj_b;      // 512 -> m_c
  Tensor pair_w1, pair_b1;  // 3*512 + 2*m_c -> 64
  Tensor pair_w2, pair_b2;  // 64 -> m_r

  NamedTensors named_params() const;
  std::vector<Tensor> params() const;
  void set_requires_grad(bool rg) const;
};

static constexpr int kCropSize = 32;
static constexpr int kSggFeatureDim = 32 * 4 * 4;

enum class LabelMode { kSgCls, kPredCls };

struct SggOutput {
  Tensor p_c;  // n x m_c, row-stochastic
  Tensor p_r;  // n x (n-1) x m_r, row-stochastic, ordered pairs lexicographic
};

// Ordered pairs (mu, nu), mu != nu, lexicographic; pair_index inverts it.
std::vector<std::pair<int, int>> ordered_pairs(int n);
int pair_index(int n, int mu, int nu);

// Nearest-neighbor crop of bbox to size x size x 3 (HWC); the source index of
// output row i is floor((i+0.5)*len/size). Differentiable as a gather.
Tensor crop_resize(Graph* g, const Tensor& image_hwc, const BBox& bbox,
                   int size = kCropSize);

// PredCls feeds ground-truth one-hot label vectors to the pair head; SGCls
// feeds the predicted object distributions (keeps the graph differentiable).
SggOutput sgg_forward(Graph* g, const SggModel& model, const Tensor& image,
                      const std::vector<BBox>& boxes, LabelMode mode,
                      const std::vector<int>& gt_labels);

// Per-object-crop feature maps after backbone block k in {1,2,3}, stacked as
// [n, C_k, H_k, W_k].
Tensor block_features(Graph* g, const SggModel& model, const Tensor& image,
                      const std::vector<BBox>& boxes, int k);

struct TrainConfig {
  float lr = 0.05f;
  int epochs = 10;
  uint64_t seed = 0;
  int train_scenes = 2000;
  int val_scenes = 200;
};

struct SggMetrics {
  double object_accuracy = 0.0;    // SGCls argmax label accuracy on val
  double predicate_accuracy = 0.0; // PredCls per-pair argmax accuracy on val
  std::vector<double> epoch_losses;
};

SggModel init_sgg_model(const DatasetSchema& schema, uint64_t seed);

// Per-scene SGD on the summed object and predicate cross-entropies (SGCls
// mode). NaN loss is fatal and reports the epoch.
SggMetrics train_sgg(SggModel& model, const Dataset& train, const Dataset& val,
                     const TrainConfig& config);

SggMetrics eval_sgg_metrics(const SggModel& model, const Dataset& val);

void save_sgg_model(const std::string& path, const SggModel& model);
SggModel load_sgg_model(const std::string& path);

}  // namespace vrap
