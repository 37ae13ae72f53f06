#include "vrap/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "vrap/errors.hpp"

namespace vrap {

namespace {

using MatMap = Eigen::Map<
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap = Eigen::Map<
    const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

[[noreturn]] void shape_fail(const std::string& op, const std::string& detail) {
  throw DataError(op + ": shape mismatch, " + detail);
}

bool taping(Graph* g, std::initializer_list<const Tensor*> inputs) {
  if (!g) return false;
  for (const Tensor* t : inputs)
    if ((*t)->requires_grad) return true;
  return false;
}

void prepare(Graph* g, const Tensor& out,
             std::initializer_list<const Tensor*> inputs) {
  out->requires_grad = true;
  out->ensure_grad();
  for (const Tensor* t : inputs)
    if ((*t)->requires_grad) (*t)->ensure_grad();
  (void)g;
}

// Broadcast contract: b applies as-is (same shape), as a scalar, or as a
// trailing suffix of a's shape. Returns b's numel (the repeat period).
int64_t broadcast_period(const std::string& op, const Tensor& a,
                         const Tensor& b) {
  if (b->numel() == 1) return 1;
  if (b->shape.size() > a->shape.size())
    shape_fail(op, shape_str(b->shape) + " does not broadcast onto " +
                       shape_str(a->shape));
  size_t off = a->shape.size() - b->shape.size();
  for (size_t i = 0; i < b->shape.size(); ++i)
    if (b->shape[i] != a->shape[off + i])
      shape_fail(op, shape_str(b->shape) + " is not a trailing suffix of " +
                         shape_str(a->shape));
  return b->numel();
}

}  // namespace

int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw DataError("non-positive dimension in " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

Tensor zeros(std::vector<int> shape, bool requires_grad) {
  auto t = std::make_shared<TensorImpl>();
  int64_t n = shape_numel(shape);
  t->shape = std::move(shape);
  t->values.assign(n, 0.0f);
  t->requires_grad = requires_grad;
  return t;
}

Tensor tensor(std::vector<int> shape, std::vector<float> values,
              bool requires_grad) {
  if (shape_numel(shape) != static_cast<int64_t>(values.size()))
    throw DataError("tensor: " + std::to_string(values.size()) +
                    " values for shape " + shape_str(shape));
  auto t = std::make_shared<TensorImpl>();
  t->shape = std::move(shape);
  t->values = std::move(values);
  t->requires_grad = requires_grad;
  return t;
}

Tensor scalar(float v) { return tensor({}, std::vector<float>{v}); }

Tensor full(std::vector<int> shape, float v) {
  auto t = zeros(std::move(shape));
  std::fill(t->values.begin(), t->values.end(), v);
  return t;
}

void Graph::backward(const Tensor& loss) {
  if (loss->numel() != 1)
    throw DataError("backward: loss must be scalar, got " +
                    shape_str(loss->shape));
  if (used_) throw DataError("backward: graph already swept");
  used_ = true;
  loss->ensure_grad();
  loss->grad[0] += 1.0f;
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
}

// ---------------------------------------------------------------------------
// conv2d

Tensor conv2d(Graph* g, const Tensor& x, const Tensor& w, const Tensor& b,
              int stride, int padding) {
  if (x->shape.size() != 4 || w->shape.size() != 4 || b->shape.size() != 1)
    shape_fail("conv2d", "want x[N,C,H,W] w[O,I,K,K] b[O], got x=" +
                             shape_str(x->shape) + " w=" + shape_str(w->shape) +
                             " b=" + shape_str(b->shape));
  const int n = x->shape[0], cin = x->shape[1], h = x->shape[2], wd = x->shape[3];
  const int cout = w->shape[0], kh = w->shape[2], kw = w->shape[3];
  if (w->shape[1] != cin)
    shape_fail("conv2d", "x channels " + std::to_string(cin) + " vs kernel " +
                             std::to_string(w->shape[1]));
  if (b->shape[0] != cout)
    shape_fail("conv2d", "bias " + shape_str(b->shape) + " vs Cout " +
                             std::to_string(cout));
  if (stride < 1 || padding < 0) shape_fail("conv2d", "bad stride/padding");
  const int oh = (h + 2 * padding - kh) / stride + 1;
  const int ow = (wd + 2 * padding - kw) / stride + 1;
  if (oh <= 0 || ow <= 0)
    shape_fail("conv2d", "non-positive output dims for x=" + shape_str(x->shape) +
                             " w=" + shape_str(w->shape));

  const int ck = cin * kh * kw;
  const int os = oh * ow;
  auto out = zeros({n, cout, oh, ow});

  // im2col buffer per batch item, kept for the backward GEMMs.
  auto cols = std::make_shared<std::vector<float>>(
      static_cast<size_t>(n) * ck * os);
  for (int bi = 0; bi < n; ++bi) {
    float* col = cols->data() + static_cast<size_t>(bi) * ck * os;
    const float* src = x->values.data() + static_cast<size_t>(bi) * cin * h * wd;
    for (int c = 0; c < cin; ++c) {
      for (int ki = 0; ki < kh; ++ki) {
        for (int kj = 0; kj < kw; ++kj) {
          float* dst = col + (static_cast<size_t>(c) * kh * kw + ki * kw + kj) * os;
          for (int oi = 0; oi < oh; ++oi) {
            const int si = oi * stride + ki - padding;
            if (si < 0 || si >= h) {
              std::fill(dst, dst + ow, 0.0f);
              dst += ow;
              continue;
            }
            const float* row = src + (static_cast<size_t>(c) * h + si) * wd;
            for (int oj = 0; oj < ow; ++oj) {
              const int sj = oj * stride + kj - padding;
              *dst++ = (sj < 0 || sj >= wd) ? 0.0f : row[sj];
            }
          }
        }
      }
    }
    ConstMatMap wm(w->values.data(), cout, ck);
    ConstMatMap cm(col, ck, os);
    MatMap om(out->values.data() + static_cast<size_t>(bi) * cout * os, cout, os);
    om.noalias() = wm * cm;
    for (int c = 0; c < cout; ++c)
      om.row(c).array() += b->values[c];
  }

  if (taping(g, {&x, &w, &b})) {
    prepare(g, out, {&x, &w, &b});
    g->record([=]() {
      for (int bi = 0; bi < n; ++bi) {
        const float* col = cols->data() + static_cast<size_t>(bi) * ck * os;
        ConstMatMap go(out->grad.data() + static_cast<size_t>(bi) * cout * os,
                       cout, os);
        if (w->requires_grad) {
          ConstMatMap cm(col, ck, os);
          MatMap gw(w->grad.data(), cout, ck);
          gw.noalias() += go * cm.transpose();
        }
        if (b->requires_grad) {
          for (int c = 0; c < cout; ++c) b->grad[c] += go.row(c).sum();
        }
        if (x->requires_grad) {
          ConstMatMap wm(w->values.data(), cout, ck);
          Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>
              gcol = wm.transpose() * go;  // [ck, os]
          float* gx = x->grad.data() + static_cast<size_t>(bi) * cin * h * wd;
          const float* gc = gcol.data();
          for (int c = 0; c < cin; ++c) {
            for (int ki = 0; ki < kh; ++ki) {
              for (int kj = 0; kj < kw; ++kj) {
                const float* gsrc =
                    gc + (static_cast<size_t>(c) * kh * kw + ki * kw + kj) * os;
                for (int oi = 0; oi < oh; ++oi) {
                  const int si = oi * stride + ki - padding;
                  if (si < 0 || si >= h) continue;
                  float* grow = gx + (static_cast<size_t>(c) * h + si) * wd;
                  const float* gr = gsrc + static_cast<size_t>(oi) * ow;
                  for (int oj = 0; oj < ow; ++oj) {
                    const int sj = oj * stride + kj - padding;
                    if (sj >= 0 && sj < wd) grow[sj] += gr[oj];
                  }
                }
              }
            }
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// matmul

Tensor matmul(Graph* g, const Tensor& a, const Tensor& b) {
  if (a->shape.size() != 2 || b->shape.size() != 2 || a->shape[1] != b->shape[0])
    shape_fail("matmul", shape_str(a->shape) + " x " + shape_str(b->shape));
  const int m = a->shape[0], k = a->shape[1], n = b->shape[1];
  auto out = zeros({m, n});
  ConstMatMap am(a->values.data(), m, k), bm(b->values.data(), k, n);
  MatMap om(out->values.data(), m, n);
  om.noalias() = am * bm;

  if (taping(g, {&a, &b})) {
    prepare(g, out, {&a, &b});
    g->record([=]() {
      ConstMatMap go(out->grad.data(), m, n);
      if (a->requires_grad) {
        ConstMatMap bm2(b->values.data(), k, n);
        MatMap ga(a->grad.data(), m, k);
        ga.noalias() += go * bm2.transpose();
      }
      if (b->requires_grad) {
        ConstMatMap am2(a->values.data(), m, k);
        MatMap gb(b->grad.data(), k, n);
        gb.noalias() += am2.transpose() * go;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// elementwise with leading-dim broadcast on b

namespace {

enum class EwKind { kAdd, kSub, kMul };

Tensor elementwise(Graph* g, const Tensor& a, const Tensor& b, EwKind kind,
                   const char* name) {
  const int64_t period = broadcast_period(name, a, b);
  const int64_t n = a->numel();
  auto out = zeros(a->shape);
  const float* av = a->values.data();
  const float* bv = b->values.data();
  float* ov = out->values.data();
  switch (kind) {
    case EwKind::kAdd:
      for (int64_t i = 0; i < n; ++i) ov[i] = av[i] + bv[i % period];
      break;
    case EwKind::kSub:
      for (int64_t i = 0; i < n; ++i) ov[i] = av[i] - bv[i % period];
      break;
    case EwKind::kMul:
      for (int64_t i = 0; i < n; ++i) ov[i] = av[i] * bv[i % period];
      break;
  }
  if (taping(g, {&a, &b})) {
    prepare(g, out, {&a, &b});
    g->record([=]() {
      const float* go = out->grad.data();
      if (a->requires_grad) {
        float* ga = a->grad.data();
        if (kind == EwKind::kMul) {
          const float* bv2 = b->values.data();
          for (int64_t i = 0; i < n; ++i) ga[i] += go[i] * bv2[i % period];
        } else {
          for (int64_t i = 0; i < n; ++i) ga[i] += go[i];
        }
      }
      if (b->requires_grad) {
        float* gb = b->grad.data();
        switch (kind) {
          case EwKind::kAdd:
            for (int64_t i = 0; i < n; ++i) gb[i % period] += go[i];
            break;
          case EwKind::kSub:
            for (int64_t i = 0; i < n; ++i) gb[i % period] -= go[i];
            break;
          case EwKind::kMul: {
            const float* av2 = a->values.data();
            for (int64_t i = 0; i < n; ++i) gb[i % period] += go[i] * av2[i];
            break;
          }
        }
      }
    });
  }
  return out;
}

}  // namespace

Tensor add(Graph* g, const Tensor& a, const Tensor& b) {
  return elementwise(g, a, b, EwKind::kAdd, "add");
}
Tensor sub(Graph* g, const Tensor& a, const Tensor& b) {
  return elementwise(g, a, b, EwKind::kSub, "sub");
}
Tensor mul(Graph* g, const Tensor& a, const Tensor& b) {
  return elementwise(g, a, b, EwKind::kMul, "mul");
}

Tensor scale(Graph* g, const Tensor& x, float s) {
  const int64_t n = x->numel();
  auto out = zeros(x->shape);
  for (int64_t i = 0; i < n; ++i) out->values[i] = x->values[i] * s;
  if (taping(g, {&x})) {
    prepare(g, out, {&x});
    g->record([=]() {
      for (int64_t i = 0; i < n; ++i) x->grad[i] += out->grad[i] * s;
    });
  }
  return out;
}

Tensor relu(Graph* g, const Tensor& x) {
  const int64_t n = x->numel();
  auto out = zeros(x->shape);
  for (int64_t i = 0; i < n; ++i)
    out->values[i] = x->values[i] > 0.0f ? x->values[i] : 0.0f;
  if (taping(g, {&x})) {
    prepare(g, out, {&x});
    g->record([=]() {
      for (int64_t i = 0; i < n; ++i)
        if (x->values[i] > 0.0f) x->grad[i] += out->grad[i];
    });
  }
  return out;
}

Tensor sqrt_(Graph* g, const Tensor& x) {
  const int64_t n = x->numel();
  auto out = zeros(x->shape);
  for (int64_t i = 0; i < n; ++i) out->values[i] = std::sqrt(x->values[i]);
  if (taping(g, {&x})) {
    prepare(g, out, {&x});
    g->record([=]() {
      // Subgradient 0 at x == 0 (same convention as relu's kink).
      for (int64_t i = 0; i < n; ++i)
        if (out->values[i] > 0.0f)
          x->grad[i] += out->grad[i] * 0.5f / out->values[i];
    });
  }
  return out;
}

Tensor log_(Graph* g, const Tensor& x) {
  const int64_t n = x->numel();
  auto out = zeros(x->shape);
  for (int64_t i = 0; i < n; ++i) out->values[i] = std::log(x->values[i]);
  if (taping(g, {&x})) {
    prepare(g, out, {&x});
    g->record([=]() {
      for (int64_t i = 0; i < n; ++i)
        x->grad[i] += out->grad[i] / x->values[i];
    });
  }
  return out;
}

Tensor avg_pool_2x2(Graph* g, const Tensor& x) {
  if (x->shape.size() != 4 || x->shape[2] % 2 || x->shape[3] % 2)
    shape_fail("avg_pool_2x2", "want [N,C,2h,2w], got " + shape_str(x->shape));
  const int n = x->shape[0], c = x->shape[1], h = x->shape[2], w = x->shape[3];
  const int oh = h / 2, ow = w / 2;
  auto out = zeros({n, c, oh, ow});
  for (int64_t nc = 0; nc < static_cast<int64_t>(n) * c; ++nc) {
    const float* src = x->values.data() + nc * h * w;
    float* dst = out->values.data() + nc * oh * ow;
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j)
        dst[i * ow + j] =
            0.25f * (src[(2 * i) * w + 2 * j] + src[(2 * i) * w + 2 * j + 1] +
                     src[(2 * i + 1) * w + 2 * j] +
                     src[(2 * i + 1) * w + 2 * j + 1]);
  }
  if (taping(g, {&x})) {
    prepare(g, out, {&x});
    g->record([=]() {
      for (int64_t nc = 0; nc < static_cast<int64_t>(n) * c; ++nc) {
        float* gx = x->grad.data() + nc * h * w;
        const float* go = out->grad.data() + nc * oh * ow;
        for (int i = 0; i < oh; ++i)
          for (int j = 0; j < ow; ++j) {
            const float v = 0.25f * go[i * ow + j];
            gx[(2 * i) * w + 2 * j] += v;
            gx[(2 * i) * w + 2 * j + 1] += v;
            gx[(2 * i + 1) * w + 2 * j] += v;
            gx[(2 * i + 1) * w + 2 * j + 1] += v;
          }
      }
    });
  }
  return out;
}

Tensor softmax(Graph* g, const Tensor& x) {
  if (x->shape.empty()) shape_fail("softmax", "rank-0 input");
  const int m = x->shape.back();
  const int64_t rows = x->numel() / m;
  auto out = zeros(x->shape);
  for (int64_t r = 0; r < rows; ++r) {
    const float* xi = x->values.data() + r * m;
    float* yi = out->values.data() + r * m;
    float mx = xi[0];
    for (int j = 1; j < m; ++j) mx = std::max(mx, xi[j]);
    float s = 0.0f;
    for (int j = 0; j < m; ++j) {
      yi[j] = std::exp(xi[j] - mx);
      s += yi[j];
    }
    for (int j = 0; j < m; ++j) yi[j] /= s;
  }
  if (taping(g, {&x})) {
    prepare(g, out, {&x});
    g->record([=]() {
      for (int64_t r = 0; r < rows; ++r) {
        const float* y = out->values.data() + r * m;
        const float* go = out->grad.data() + r * m;
        float* gx = x->grad.data() + r * m;
        float dot = 0.0f;
        for (int j = 0; j < m; ++j) dot += go[j] * y[j];
        for (int j = 0; j < m; ++j) gx[j] += y[j] * (go[j] - dot);
      }
    });
  }
  return out;
}

Tensor sum(Graph* g, const Tensor& x) {
  float s = 0.0f;
  for (float v : x->values) s += v;
  auto out = tensor({}, std::vector<float>{s});
  if (taping(g, {&x})) {
    prepare(g, out, {&x});
    g->record([=]() {
      const float go = out->grad[0];
      for (int64_t i = 0; i < x->numel(); ++i) x->grad[i] += go;
    });
  }
  return out;
}

Tensor mean(Graph* g, const Tensor& x) {
  const int64_t n = x->numel();
  float s = 0.0f;
  for (float v : x->values) s += v;
  auto out = tensor({}, std::vector<float>{s / static_cast<float>(n)});
  if (taping(g, {&x})) {
    prepare(g, out, {&x});
    g->record([=]() {
      const float go = out->grad[0] / static_cast<float>(n);
      for (int64_t i = 0; i < n; ++i) x->grad[i] += go;
    });
  }
  return out;
}

MaxResult max_last(Graph* g, const Tensor& x) {
  if (x->shape.empty()) shape_fail("max_last", "rank-0 input");
  const int m = x->shape.back();
  const int64_t rows = x->numel() / m;
  std::vector<int> out_shape(x->shape.begin(), x->shape.end() - 1);
  auto out = zeros(out_shape);
  std::vector<int> arg(rows);
  for (int64_t r = 0; r < rows; ++r) {
    const float* xi = x->values.data() + r * m;
    int best = 0;
    for (int j = 1; j < m; ++j)
      if (xi[j] > xi[best]) best = j;
    out->values[r] = xi[best];
    arg[r] = best;
  }
  if (taping(g, {&x})) {
    prepare(g, out, {&x});
    auto argc = arg;
    g->record([=]() {
      for (int64_t r = 0; r < rows; ++r)
        x->grad[r * m + argc[r]] += out->grad[r];
    });
  }
  return {out, std::move(arg)};
}

Tensor concat_last(Graph* g, const std::vector<Tensor>& xs) {
  if (xs.empty()) shape_fail("concat_last", "no inputs");
  const auto& s0 = xs[0]->shape;
  if (s0.empty()) shape_fail("concat_last", "rank-0 input");
  int total_last = 0;
  for (const auto& t : xs) {
    if (t->shape.size() != s0.size() ||
        !std::equal(s0.begin(), s0.end() - 1, t->shape.begin()))
      shape_fail("concat_last",
                 shape_str(s0) + " vs " + shape_str(t->shape));
    total_last += t->shape.back();
  }
  std::vector<int> out_shape = s0;
  out_shape.back() = total_last;
  auto out = zeros(out_shape);
  const int64_t rows = out->numel() / total_last;
  int offset = 0;
  for (const auto& t : xs) {
    const int m = t->shape.back();
    for (int64_t r = 0; r < rows; ++r)
      std::memcpy(out->values.data() + r * total_last + offset,
                  t->values.data() + r * m, m * sizeof(float));
    offset += m;
  }
  bool any = false;
  for (const auto& t : xs) any = any || t->requires_grad;
  if (g && any) {
    out->requires_grad = true;
    out->ensure_grad();
    for (const auto& t : xs)
      if (t->requires_grad) t->ensure_grad();
    auto inputs = xs;
    g->record([=]() {
      int off = 0;
      for (const auto& t : inputs) {
        const int m = t->shape.back();
        if (t->requires_grad) {
          for (int64_t r = 0; r < rows; ++r) {
            const float* go = out->grad.data() + r * total_last + off;
            float* gt = t->grad.data() + r * m;
            for (int j = 0; j < m; ++j) gt[j] += go[j];
          }
        }
        off += m;
      }
    });
  }
  return out;
}

Tensor stack0(Graph* g, const std::vector<Tensor>& xs) {
  if (xs.empty()) shape_fail("stack0", "no inputs");
  const auto& s0 = xs[0]->shape;
  for (const auto& t : xs)
    if (t->shape != s0)
      shape_fail("stack0", shape_str(s0) + " vs " + shape_str(t->shape));
  std::vector<int> out_shape;
  out_shape.push_back(static_cast<int>(xs.size()));
  out_shape.insert(out_shape.end(), s0.begin(), s0.end());
  auto out = zeros(out_shape);
  const int64_t block = xs[0]->numel();
  for (size_t i = 0; i < xs.size(); ++i)
    std::memcpy(out->values.data() + i * block, xs[i]->values.data(),
                block * sizeof(float));
  bool any = false;
  for (const auto& t : xs) any = any || t->requires_grad;
  if (g && any) {
    out->requires_grad = true;
    out->ensure_grad();
    for (const auto& t : xs)
      if (t->requires_grad) t->ensure_grad();
    auto inputs = xs;
    g->record([=]() {
      for (size_t i = 0; i < inputs.size(); ++i) {
        if (!inputs[i]->requires_grad) continue;
        const float* go = out->grad.data() + i * block;
        float* gt = inputs[i]->grad.data();
        for (int64_t j = 0; j < block; ++j) gt[j] += go[j];
      }
    });
  }
  return out;
}

Tensor gather(Graph* g, const Tensor& src, std::vector<int> idx,
              std::vector<int> out_shape) {
  if (shape_numel(out_shape) != static_cast<int64_t>(idx.size()))
    shape_fail("gather", "index count " + std::to_string(idx.size()) +
                             " vs out shape " + shape_str(out_shape));
  const int64_t sn = src->numel();
  auto out = zeros(std::move(out_shape));
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= sn)
      shape_fail("gather", "index " + std::to_string(idx[i]) +
                               " out of range for " + shape_str(src->shape));
    out->values[i] = src->values[idx[i]];
  }
  if (taping(g, {&src})) {
    prepare(g, out, {&src});
    auto idxc = std::make_shared<std::vector<int>>(std::move(idx));
    g->record([=]() {
      for (size_t i = 0; i < idxc->size(); ++i)
        src->grad[(*idxc)[i]] += out->grad[i];
    });
  }
  return out;
}

Tensor clamp(Graph* g, const Tensor& x, float lo, float hi) {
  const int64_t n = x->numel();
  auto out = zeros(x->shape);
  for (int64_t i = 0; i < n; ++i)
    out->values[i] = std::min(std::max(x->values[i], lo), hi);
  if (taping(g, {&x})) {
    prepare(g, out, {&x});
    g->record([=]() {
      for (int64_t i = 0; i < n; ++i)
        if (x->values[i] > lo && x->values[i] < hi)
          x->grad[i] += out->grad[i];
    });
  }
  return out;
}

namespace {

// Index map of one quarter-turn: out[j][H-1-i] = in[i][j] on the leading two
// axes, trailing axes carried along.
std::vector<int> rot90_index(const std::vector<int>& in_shape) {
  const int h = in_shape[0], w = in_shape[1];
  int64_t inner = 1;
  for (size_t i = 2; i < in_shape.size(); ++i) inner *= in_shape[i];
  std::vector<int> idx(static_cast<size_t>(h) * w * inner);
  // out shape is [w, h, ...]; out[r][c] = in[h-1-c][r]
  for (int r = 0; r < w; ++r)
    for (int c = 0; c < h; ++c) {
      const int64_t src = ((static_cast<int64_t>(h - 1 - c)) * w + r) * inner;
      const int64_t dst = (static_cast<int64_t>(r) * h + c) * inner;
      for (int64_t k = 0; k < inner; ++k)
        idx[dst + k] = static_cast<int>(src + k);
    }
  return idx;
}

}  // namespace

Tensor rotate90(Graph* g, const Tensor& x, int k) {
  if (x->shape.size() < 2) shape_fail("rotate90", "rank < 2");
  k = ((k % 4) + 4) % 4;
  Tensor cur = x;
  if (k == 0) {
    // still a recorded copy so gradients flow uniformly
    std::vector<int> idx(x->numel());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    return gather(g, x, std::move(idx), x->shape);
  }
  for (int t = 0; t < k; ++t) {
    auto idx = rot90_index(cur->shape);
    std::vector<int> out_shape = cur->shape;
    std::swap(out_shape[0], out_shape[1]);
    cur = gather(g, cur, std::move(idx), std::move(out_shape));
  }
  return cur;
}

Tensor reshape(Graph* g, const Tensor& x, std::vector<int> shape) {
  if (shape_numel(shape) != x->numel())
    shape_fail("reshape", shape_str(x->shape) + " -> " + shape_str(shape));
  auto out = tensor(std::move(shape), x->values);
  if (taping(g, {&x})) {
    prepare(g, out, {&x});
    g->record([=]() {
      for (int64_t i = 0; i < x->numel(); ++i) x->grad[i] += out->grad[i];
    });
  }
  return out;
}

Tensor take_rows(Graph* g, const Tensor& x, const std::vector<int>& rows) {
  if (x->shape.size() != 2) shape_fail("take_rows", shape_str(x->shape));
  const int m = x->shape[1];
  std::vector<int> idx;
  idx.reserve(rows.size() * m);
  for (int r : rows) {
    if (r < 0 || r >= x->shape[0])
      shape_fail("take_rows", "row " + std::to_string(r) + " of " +
                                  shape_str(x->shape));
    for (int j = 0; j < m; ++j) idx.push_back(r * m + j);
  }
  return gather(g, x, std::move(idx),
                {static_cast<int>(rows.size()), m});
}

void sgd_step(const std::vector<Tensor>& params, float lr) {
  for (const auto& p : params) {
    if (p->grad.size() != p->values.size())
      throw DataError("sgd_step: param with missing grad, shape " +
                      shape_str(p->shape));
    for (size_t i = 0; i < p->values.size(); ++i)
      p->values[i] -= lr * p->grad[i];
    std::fill(p->grad.begin(), p->grad.end(), 0.0f);
  }
}

}  // namespace vrap
