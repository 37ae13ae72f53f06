#include "vrap/sgg_model.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"
#include "vrap/errors.hpp"
#include "vrap/rng.hpp"

namespace vrap {

namespace {

void fill_glorot(const Tensor& t, int fan_in, int fan_out, Xoshiro256& rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  for (auto& v : t->values)
    v = static_cast<float>(rng.uniform(-limit, limit));
}

Tensor one_hot(const std::vector<int>& idx, int m) {
  auto t = zeros({static_cast<int>(idx.size()), m});
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= m)
      throw DataError("one_hot: label " + std::to_string(idx[i]) +
                      " out of range [0," + std::to_string(m) + ")");
    t->values[i * m + idx[i]] = 1.0f;
  }
  return t;
}

// HWC [H,W,3] -> CHW [3,H,W] as an index permutation.
Tensor hwc_to_chw(Graph* g, const Tensor& img) {
  const int h = img->shape[0], w = img->shape[1], c = img->shape[2];
  std::vector<int> idx(static_cast<size_t>(h) * w * c);
  size_t k = 0;
  for (int ch = 0; ch < c; ++ch)
    for (int r = 0; r < h; ++r)
      for (int col = 0; col < w; ++col)
        idx[k++] = (r * w + col) * c + ch;
  return gather(g, img, std::move(idx), {c, h, w});
}

// Mean of -log p over rows of a row-stochastic table at the target columns.
Tensor cross_entropy(Graph* g, const Tensor& probs,
                     const std::vector<int>& targets) {
  const int m = probs->shape.back();
  auto hot = one_hot(targets, m);
  auto flat = reshape(g, probs, hot->shape);
  auto picked = mul(g, flat, hot);
  // floor keeps log finite; gradient is unaffected on (1e-12, 1]
  auto safe = clamp(g, add(g, picked, sub(g, full(hot->shape, 1.0f), hot)),
                    1e-12f, 2.0f);
  return scale(g, sum(g, log_(g, safe)),
               -1.0f / static_cast<float>(targets.size()));
}

}  // namespace

std::vector<std::pair<int, int>> ordered_pairs(int n) {
  std::vector<std::pair<int, int>> out;
  for (int mu = 0; mu < n; ++mu)
    for (int nu = 0; nu < n; ++nu)
      if (nu != mu) out.emplace_back(mu, nu);
  return out;
}

int pair_index(int n, int mu, int nu) {
  return mu * (n - 1) + (nu < mu ? nu : nu - 1);
}

NamedTensors SggModel::named_params() const {
  NamedTensors out;
  for (int i = 0; i < 3; ++i) {
    out.emplace_back("backbone.conv" + std::to_string(i + 1) + ".w", conv_w[i]);
    out.emplace_back("backbone.conv" + std::to_string(i + 1) + ".b", conv_b[i]);
  }
  out.emplace_back("object_head.w", obj_w);
  out.emplace_back("object_head.b", obj_b);
  out.emplace_back("pair_head.fc1.w", pair_w1);
  out.emplace_back("pair_head.fc1.b", pair_b1);
  out.emplace_back("pair_head.fc2.w", pair_w2);
  out.emplace_back("pair_head.fc2.b", pair_b2);
  return out;
}

std::vector<Tensor> SggModel::params() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_params()) out.push_back(t);
  return out;
}

void SggModel::set_requires_grad(bool rg) const {
  for (auto& t : params()) t->requires_grad = rg;
}

SggModel init_sgg_model(const DatasetSchema& schema, uint64_t seed) {
  Xoshiro256 rng(seed);
  SggModel m;
  m.schema = schema;
  const int chans[4] = {3, 8, 16, 32};
  for (int i = 0; i < 3; ++i) {
    m.conv_w[i] = zeros({chans[i + 1], chans[i], 3, 3});
    m.conv_b[i] = zeros({chans[i + 1]});
    fill_glorot(m.conv_w[i], chans[i] * 9, chans[i + 1] * 9, rng);
  }
  m.obj_w = zeros({kSggFeatureDim, schema.m_c});
  m.obj_b = zeros({schema.m_c});
  fill_glorot(m.obj_w, kSggFeatureDim, schema.m_c, rng);
  const int pair_in = 3 * kSggFeatureDim + 2 * schema.m_c;
  m.pair_w1 = zeros({pair_in, 64});
  m.pair_b1 = zeros({64});
  fill_glorot(m.pair_w1, pair_in, 64, rng);
  m.pair_w2 = zeros({64, schema.m_r});
  m.pair_b2 = zeros({schema.m_r});
  fill_glorot(m.pair_w2, 64, schema.m_r, rng);
  m.set_requires_grad(true);
  return m;
}

Tensor crop_resize(Graph* g, const Tensor& image_hwc, const BBox& bbox,
                   int size) {
  if (image_hwc->shape.size() != 3 || image_hwc->shape[2] != 3)
    throw DataError("crop_resize: want HxWx3, got " +
                    shape_str(image_hwc->shape));
  const int h = image_hwc->shape[0], w = image_hwc->shape[1];
  const int bw = bbox[2] - bbox[0], bh = bbox[3] - bbox[1];
  if (bw <= 0 || bh <= 0)
    throw DataError("crop_resize: degenerate bbox");
  if (bbox[0] < 0 || bbox[1] < 0 || bbox[2] > w || bbox[3] > h)
    throw DataError("crop_resize: bbox outside image");
  std::vector<int> idx(static_cast<size_t>(size) * size * 3);
  size_t k = 0;
  for (int i = 0; i < size; ++i) {
    const int sr = bbox[1] + static_cast<int>((i + 0.5) * bh / size);
    for (int j = 0; j < size; ++j) {
      const int sc = bbox[0] + static_cast<int>((j + 0.5) * bw / size);
      const int base = (sr * w + sc) * 3;
      idx[k++] = base;
      idx[k++] = base + 1;
      idx[k++] = base + 2;
    }
  }
  return gather(g, image_hwc, std::move(idx), {size, size, 3});
}

namespace {

BBox union_box(const BBox& a, const BBox& b) {
  return {std::min(a[0], b[0]), std::min(a[1], b[1]), std::max(a[2], b[2]),
          std::max(a[3], b[3])};
}

// Batch of CHW crops through conv blocks 1..k.
Tensor run_backbone(Graph* g, const SggModel& model,
                    const std::vector<Tensor>& crops_chw, int k) {
  auto x = stack0(g, crops_chw);
  for (int i = 0; i < k; ++i)
    x = avg_pool_2x2(
        g, relu(g, conv2d(g, x, model.conv_w[i], model.conv_b[i], 1, 1)));
  return x;
}

}  // namespace

SggOutput sgg_forward(Graph* g, const SggModel& model, const Tensor& image,
                      const std::vector<BBox>& boxes, LabelMode mode,
                      const std::vector<int>& gt_labels) {
  const int n = static_cast<int>(boxes.size());
  if (n < 2) throw DataError("sgg_forward: need at least 2 boxes");
  if (mode == LabelMode::kPredCls &&
      static_cast<int>(gt_labels.size()) != n)
    throw DataError("sgg_forward: PredCls needs one ground-truth label per box");

  const auto pairs = ordered_pairs(n);
  std::vector<Tensor> crops;
  crops.reserve(n + pairs.size());
  for (const auto& b : boxes)
    crops.push_back(hwc_to_chw(g, crop_resize(g, image, b)));
  for (const auto& [mu, nu] : pairs)
    crops.push_back(
        hwc_to_chw(g, crop_resize(g, image, union_box(boxes[mu], boxes[nu]))));

  auto feats = run_backbone(g, model, crops, 3);
  auto flat = reshape(g, feats,
                      {n + static_cast<int>(pairs.size()), kSggFeatureDim});

  std::vector<int> obj_rows(n);
  for (int i = 0; i < n; ++i) obj_rows[i] = i;
  auto obj_logits = add(g, matmul(g, take_rows(g, flat, obj_rows), model.obj_w),
                        model.obj_b);
  auto p_c = softmax(g, obj_logits);

  Tensor labels = mode == LabelMode::kSgCls
                      ? p_c
                      : one_hot(gt_labels, model.schema.m_c);

  std::vector<int> subj_rows, obj2_rows, union_rows;
  for (size_t t = 0; t < pairs.size(); ++t) {
    subj_rows.push_back(pairs[t].first);
    obj2_rows.push_back(pairs[t].second);
    union_rows.push_back(n + static_cast<int>(t));
  }
  auto pair_x = concat_last(
      g, {take_rows(g, flat, subj_rows), take_rows(g, flat, obj2_rows),
          take_rows(g, flat, union_rows), take_rows(g, labels, subj_rows),
          take_rows(g, labels, obj2_rows)});
  auto hidden = relu(g, add(g, matmul(g, pair_x, model.pair_w1), model.pair_b1));
  auto pair_logits = add(g, matmul(g, hidden, model.pair_w2), model.pair_b2);
  auto p_r = reshape(g, softmax(g, pair_logits), {n, n - 1, model.schema.m_r});
  return {p_c, p_r};
}

Tensor block_features(Graph* g, const SggModel& model, const Tensor& image,
                      const std::vector<BBox>& boxes, int k) {
  if (k < 1 || k > 3)
    throw DataError("block_features: k must be in {1,2,3}, got " +
                    std::to_string(k));
  if (boxes.empty()) throw DataError("block_features: no boxes");
  std::vector<Tensor> crops;
  crops.reserve(boxes.size());
  for (const auto& b : boxes)
    crops.push_back(hwc_to_chw(g, crop_resize(g, image, b)));
  return run_backbone(g, model, crops, k);
}

namespace {

struct SceneBatch {
  std::vector<BBox> boxes;
  std::vector<int> labels;
  std::vector<int> predicates;  // per ordered pair, lexicographic
};

SceneBatch scene_batch(const Scene& sc) {
  SceneBatch b;
  for (const auto& o : sc.objects) {
    b.boxes.push_back(o.bbox);
    b.labels.push_back(o.label);
  }
  for (const auto& r : sc.relations) b.predicates.push_back(r.predicate);
  return b;
}

}  // namespace

SggMetrics eval_sgg_metrics(const SggModel& model, const Dataset& val) {
  int64_t obj_hits = 0, obj_total = 0, pred_hits = 0, pred_total = 0;
  for (const auto& sc : val.scenes) {
    const auto b = scene_batch(sc);
    auto sgcls = sgg_forward(nullptr, model, sc.image, b.boxes,
                             LabelMode::kSgCls, {});
    const int m_c = model.schema.m_c;
    for (int i = 0; i < sc.n(); ++i) {
      const float* row = sgcls.p_c->values.data() + i * m_c;
      int arg = 0;
      for (int j = 1; j < m_c; ++j)
        if (row[j] > row[arg]) arg = j;
      obj_hits += (arg == b.labels[i]);
      obj_total++;
    }
    auto predcls = sgg_forward(nullptr, model, sc.image, b.boxes,
                               LabelMode::kPredCls, b.labels);
    const int m_r = model.schema.m_r;
    for (size_t t = 0; t < b.predicates.size(); ++t) {
      const float* row = predcls.p_r->values.data() + t * m_r;
      int arg = 0;
      for (int j = 1; j < m_r; ++j)
        if (row[j] > row[arg]) arg = j;
      pred_hits += (arg == b.predicates[t]);
      pred_total++;
    }
  }
  SggMetrics m;
  m.object_accuracy = obj_total ? double(obj_hits) / obj_total : 0.0;
  m.predicate_accuracy = pred_total ? double(pred_hits) / pred_total : 0.0;
  return m;
}

SggMetrics train_sgg(SggModel& model, const Dataset& train, const Dataset& val,
                     const TrainConfig& config) {
  auto params = model.params();
  model.set_requires_grad(true);
  SggMetrics metrics;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (const auto& sc : train.scenes) {
      const auto b = scene_batch(sc);
      Graph g;
      auto out = sgg_forward(&g, model, sc.image, b.boxes, LabelMode::kSgCls,
                             b.labels);
      auto loss = add(&g, cross_entropy(&g, out.p_c, b.labels),
                      cross_entropy(&g, out.p_r, b.predicates));
      const float lv = loss->values[0];
      if (!std::isfinite(lv))
        throw NumericError("train_sgg: loss diverged at epoch " +
                           std::to_string(epoch + 1));
      g.backward(loss);
      sgd_step(params, config.lr);
      epoch_loss += lv;
    }
    metrics.epoch_losses.push_back(epoch_loss / std::max<size_t>(1, train.scenes.size()));
  }
  auto quality = eval_sgg_metrics(model, val);
  metrics.object_accuracy = quality.object_accuracy;
  metrics.predicate_accuracy = quality.predicate_accuracy;
  return metrics;
}

void save_sgg_model(const std::string& path, const SggModel& model) {
  save_weights(path, model.named_params());
  nlohmann::json meta = {
      {"kind", "sgg"},
      {"mode", "sgcls"},
      {"schema", nlohmann::json::parse(schema_to_json_string(model.schema))},
      {"schema_hash", model.schema.hash()},
  };
  std::ofstream os(path + ".json");
  if (!os) throw DataError(path + ".json: cannot open for writing");
  os << meta.dump(2) << "\n";
}

SggModel load_sgg_model(const std::string& path) {
  std::ifstream is(path + ".json");
  if (!is) throw DataError(path + ".json: cannot open");
  nlohmann::json meta;
  try {
    is >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ".json: " + std::string(e.what()));
  }
  if (meta.value("kind", "") != "sgg")
    throw DataError(path + ": sidecar kind is not 'sgg'");
  SggModel model = init_sgg_model(
      schema_from_json_string(meta.at("schema").dump()), 0);
  auto loaded = load_weights(path);
  auto expect = model.named_params();
  if (loaded.size() != expect.size())
    throw DataError(path + ": wrong tensor count for an sgg model");
  for (size_t i = 0; i < expect.size(); ++i) {
    if (loaded[i].first != expect[i].first ||
        loaded[i].second->shape != expect[i].second->shape)
      throw DataError(path + ": unexpected tensor " + loaded[i].first);
    expect[i].second->values = loaded[i].second->values;
  }
  return model;
}

}  // namespace vrap
