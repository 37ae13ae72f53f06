#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace vrap {

// Dense row-major float32 tensor. `grad` is allocated (zero-filled) the first
// time the tensor participates in a recorded operation, and holds d(loss)/dt
// after Graph::backward.
class TensorImpl {
 public:
  std::vector<int> shape;
  std::vector<float> values;
  std::vector<float> grad;
  bool requires_grad = false;

  int64_t numel() const { return static_cast<int64_t>(values.size()); }

  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0f);
  }
};

using Tensor = std::shared_ptr<TensorImpl>;

int64_t shape_numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

Tensor zeros(std::vector<int> shape, bool requires_grad = false);
Tensor tensor(std::vector<int> shape, std::vector<float> values,
              bool requires_grad = false);
Tensor scalar(float v);
Tensor full(std::vector<int> shape, float v);

// Ordered record of executed primitive operations. Each op that touches a
// tensor requiring grad appends one backward step; backward() replays them in
// reverse, accumulating gradients (sum over all paths). Single-threaded per
// graph; distinct graphs may live on distinct threads.
class Graph {
 public:
  void record(std::function<void()> step) { steps_.push_back(std::move(step)); }

  // loss must be scalar; seeds d(loss)/d(loss) = 1 and sweeps the tape.
  void backward(const Tensor& loss);

  size_t size() const { return steps_.size(); }

 private:
  std::vector<std::function<void()>> steps_;
  bool used_ = false;
};

// Primitive ops. `g` may be null for inference: nothing is recorded and the
// output does not require grad. With a graph, the output requires grad iff
// any input does. Shape violations throw DataError with the offending shapes.

// x: [N,Cin,H,W], w: [Cout,Cin,kh,kw], b: [Cout]. Cross-correlation.
Tensor conv2d(Graph* g, const Tensor& x, const Tensor& w, const Tensor& b,
              int stride, int padding);

// a: [M,K], b: [K,N] -> [M,N].
Tensor matmul(Graph* g, const Tensor& a, const Tensor& b);

// Elementwise; b broadcasts when it is a scalar or matches a trailing suffix
// of a's shape (leading-dimension broadcast only).
Tensor add(Graph* g, const Tensor& a, const Tensor& b);
Tensor sub(Graph* g, const Tensor& a, const Tensor& b);
Tensor mul(Graph* g, const Tensor& a, const Tensor& b);

Tensor scale(Graph* g, const Tensor& x, float s);
Tensor relu(Graph* g, const Tensor& x);
Tensor sqrt_(Graph* g, const Tensor& x);
Tensor log_(Graph* g, const Tensor& x);

// x: [N,C,H,W] with even H,W; 2x2 mean, stride 2.
Tensor avg_pool_2x2(Graph* g, const Tensor& x);

// Softmax over the last axis; numerically stabilized by row-max subtraction.
Tensor softmax(Graph* g, const Tensor& x);

Tensor sum(Graph* g, const Tensor& x);   // -> rank-0 scalar
Tensor mean(Graph* g, const Tensor& x);  // -> rank-0 scalar

// Max over the last axis; gradient is routed to the argmax element only,
// ties broken by lowest index.
struct MaxResult {
  Tensor values;            // input shape minus last axis
  std::vector<int> argmax;  // same layout as values
};
MaxResult max_last(Graph* g, const Tensor& x);

// Concatenate along the last axis (equal leading dims) or stack equal-shape
// tensors along a new leading axis.
Tensor concat_last(Graph* g, const std::vector<Tensor>& xs);
Tensor stack0(Graph* g, const std::vector<Tensor>& xs);

// out[i] = src.values[idx[i]]; gradient scatter-adds into src. The workhorse
// behind crop/resize, layout permutes and row selection.
Tensor gather(Graph* g, const Tensor& src, std::vector<int> idx,
              std::vector<int> out_shape);

// Zero gradient outside (lo, hi), exclusive at both ends.
Tensor clamp(Graph* g, const Tensor& x, float lo, float hi);

// k quarter-turns of the first two axes (rank >= 2). Exact index permutation:
// k=1 maps in[i][j] to out[j][H-1-i].
Tensor rotate90(Graph* g, const Tensor& x, int k);

Tensor reshape(Graph* g, const Tensor& x, std::vector<int> shape);

// Select rows of a 2-D tensor: out[r] = x[rows[r]].
Tensor take_rows(Graph* g, const Tensor& x, const std::vector<int>& rows);

// p <- p - lr * grad(p), then zero grads. Every param must have a grad.
void sgd_step(const std::vector<Tensor>& params, float lr);

}  // namespace vrap
