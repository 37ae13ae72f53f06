#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include "doctest.h"
#include "oracles.hpp"
#include "vrap/errors.hpp"
#include "vrap/rng.hpp"
#include "vrap/tensor.hpp"
#include "vrap/weights.hpp"

using namespace vrap;
using vrap::testing::conv2d_direct;
using vrap::testing::fd_compare;

namespace {

Tensor random_tensor(std::vector<int> shape, Xoshiro256& rng, float lo = -1.0f,
                     float hi = 1.0f, bool rg = false) {
  auto t = zeros(std::move(shape), rg);
  for (auto& v : t->values) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

}  // namespace

TEST_CASE("conv2d 1x1 identity kernel") {
  Xoshiro256 rng(7);
  auto x = random_tensor({1, 1, 5, 4}, rng);
  auto w = tensor({1, 1, 1, 1}, {1.0f});
  auto b = tensor({1}, {0.0f});
  auto y = conv2d(nullptr, x, w, b, 1, 0);
  REQUIRE(y->shape == x->shape);
  for (int64_t i = 0; i < x->numel(); ++i)
    CHECK(y->values[i] == doctest::Approx(x->values[i]).epsilon(1e-7));
}

TEST_CASE("conv2d all-ones 3x3 kernel on constant input") {
  const float c = 0.37f;
  auto x = full({1, 1, 6, 6}, c);
  auto w = full({1, 1, 3, 3}, 1.0f);
  auto b = tensor({1}, {0.0f});
  auto y = conv2d(nullptr, x, w, b, 1, 0);
  REQUIRE(y->shape == std::vector<int>{1, 1, 4, 4});
  for (float v : y->values) CHECK(v == doctest::Approx(9.0f * c).epsilon(1e-6));
}

TEST_CASE("conv2d matches direct-loop oracle") {
  Xoshiro256 rng(11);
  auto x = random_tensor({1, 2, 5, 5}, rng);
  auto w = random_tensor({3, 2, 3, 3}, rng);
  auto b = random_tensor({3}, rng);
  for (auto [stride, pad] : {std::pair{1, 0}, {1, 1}, {2, 1}}) {
    auto y = conv2d(nullptr, x, w, b, stride, pad);
    auto ref = conv2d_direct(x->values, 1, 2, 5, 5, w->values, 3, 3, 3,
                             b->values, stride, pad);
    REQUIRE(y->values.size() == ref.size());
    for (size_t i = 0; i < ref.size(); ++i)
      CHECK(std::abs(y->values[i] - ref[i]) < 1e-5);
  }
}

TEST_CASE("conv2d rejects mismatched shapes") {
  auto x = full({1, 2, 5, 5}, 1.0f);
  auto w = full({3, 4, 3, 3}, 1.0f);
  auto b = full({3}, 0.0f);
  CHECK_THROWS_AS(conv2d(nullptr, x, w, b, 1, 0), DataError);
}

TEST_CASE("softmax") {
  SUBCASE("uniform logits") {
    auto y = softmax(nullptr, full({7}, 1.3f));
    for (float v : y->values) CHECK(v == doctest::Approx(1.0f / 7).epsilon(1e-6));
  }
  SUBCASE("analytic two-logit case") {
    auto y = softmax(nullptr, tensor({2}, {0.0f, std::log(3.0f)}));
    CHECK(y->values[0] == doctest::Approx(0.25).epsilon(1e-6));
    CHECK(y->values[1] == doctest::Approx(0.75).epsilon(1e-6));
  }
  SUBCASE("rows sum to one") {
    Xoshiro256 rng(3);
    auto y = softmax(nullptr, random_tensor({5, 9}, rng, -4.0f, 4.0f));
    for (int r = 0; r < 5; ++r) {
      float s = 0;
      for (int j = 0; j < 9; ++j) s += y->values[r * 9 + j];
      CHECK(std::abs(s - 1.0f) < 1e-5);
    }
  }
}

TEST_CASE("max over last axis") {
  auto [v, arg] = max_last(nullptr, tensor({1, 3}, {1.0f, 5.0f, 2.0f}));
  CHECK(v->values[0] == 5.0f);
  CHECK(arg[0] == 1);

  // ties break to the lowest index
  auto [v2, arg2] = max_last(nullptr, tensor({4}, {2.0f, 7.0f, 7.0f, 1.0f}));
  CHECK(arg2[0] == 1);
}

TEST_CASE("backward on relu sum") {
  Graph g;
  auto x = tensor({2}, {-1.0f, 2.0f}, true);
  auto loss = sum(&g, relu(&g, x));
  g.backward(loss);
  CHECK(x->grad[0] == 0.0f);
  CHECK(x->grad[1] == 1.0f);
}

TEST_CASE("backward on elementwise product") {
  Graph g;
  auto a = tensor({3}, {1.0f, 2.0f, 3.0f}, true);
  auto b = tensor({3}, {4.0f, 5.0f, 6.0f}, true);
  auto loss = sum(&g, mul(&g, a, b));
  g.backward(loss);
  for (int i = 0; i < 3; ++i) {
    CHECK(a->grad[i] == b->values[i]);
    CHECK(b->grad[i] == a->values[i]);
  }
}

TEST_CASE("backward requires scalar loss") {
  Graph g;
  auto x = tensor({2}, {1.0f, 2.0f}, true);
  auto y = relu(&g, x);
  CHECK_THROWS_AS(g.backward(y), DataError);
}

TEST_CASE("two-block conv net gradient vs finite differences") {
  Xoshiro256 rng(21);
  auto x = random_tensor({1, 2, 8, 8}, rng, 0.0f, 1.0f, true);
  auto w1 = random_tensor({3, 2, 3, 3}, rng, -0.5f, 0.5f, true);
  auto b1 = random_tensor({3}, rng, -0.1f, 0.1f, true);
  auto w2 = random_tensor({4, 3, 3, 3}, rng, -0.5f, 0.5f, true);
  auto b2 = random_tensor({4}, rng, -0.1f, 0.1f, true);
  auto proj = random_tensor({4 * 2 * 2}, rng);

  auto forward = [&](Graph* g) {
    auto h1 = avg_pool_2x2(g, relu(g, conv2d(g, x, w1, b1, 1, 1)));
    auto h2 = avg_pool_2x2(g, relu(g, conv2d(g, h1, w2, b2, 1, 1)));
    auto flat = reshape(g, h2, {4 * 2 * 2});
    return sum(g, mul(g, flat, proj));
  };

  Graph g;
  auto loss = forward(&g);
  g.backward(loss);
  auto loss_fn = [&]() { return double(forward(nullptr)->values[0]); };

  for (const auto& p : {x, w1, b1, w2, b2}) {
    auto res = fd_compare(loss_fn, p, p->grad);
    CHECK(res.pass_rate() >= 0.95);
  }
}

TEST_CASE("gradient fidelity of every primitive on random small shapes") {
  // 10 random trials per primitive, shapes <= 64 elements; the 95% bar is
  // over all sampled coordinates of an op across its trials.
  Xoshiro256 rng(1234);
  std::map<std::string, vrap::testing::FdResult> by_op;
  int trials = 10;
  for (int trial = 0; trial < trials; ++trial) {
    struct Case {
      const char* name;
      std::vector<Tensor> params;
      std::function<Tensor(Graph*)> forward;
    };
    std::vector<Case> cases;

    auto cx = random_tensor({1, 2, 4, 4}, rng, 0.0f, 1.0f, true);
    auto cw = random_tensor({2, 2, 3, 3}, rng, -0.7f, 0.7f, true);
    auto cb = random_tensor({2}, rng, -0.2f, 0.2f, true);
    cases.push_back({"conv2d",
                     {cx, cw, cb},
                     [=](Graph* g) { return conv2d(g, cx, cw, cb, 1, 1); }});

    auto ma = random_tensor({3, 4}, rng, -1, 1, true);
    auto mb = random_tensor({4, 5}, rng, -1, 1, true);
    cases.push_back(
        {"matmul", {ma, mb}, [=](Graph* g) { return matmul(g, ma, mb); }});

    auto aa = random_tensor({2, 3, 4}, rng, -1, 1, true);
    auto ab = random_tensor({4}, rng, -1, 1, true);
    cases.push_back(
        {"add broadcast", {aa, ab}, [=](Graph* g) { return add(g, aa, ab); }});
    cases.push_back(
        {"sub broadcast", {aa, ab}, [=](Graph* g) { return sub(g, aa, ab); }});
    cases.push_back(
        {"mul broadcast", {aa, ab}, [=](Graph* g) { return mul(g, aa, ab); }});

    auto sc = random_tensor({}, rng, 0.5f, 1.5f, true);
    cases.push_back(
        {"mul scalar", {aa, sc}, [=](Graph* g) { return mul(g, aa, sc); }});

    auto rx = random_tensor({5, 7}, rng, -1, 1, true);
    cases.push_back({"relu", {rx}, [=](Graph* g) { return relu(g, rx); }});
    cases.push_back({"scale", {rx}, [=](Graph* g) { return scale(g, rx, -1.7f); }});

    auto px = random_tensor({1, 3, 4, 4}, rng, -1, 1, true);
    cases.push_back(
        {"avg_pool_2x2", {px}, [=](Graph* g) { return avg_pool_2x2(g, px); }});

    auto sx = random_tensor({4, 6}, rng, -2, 2, true);
    cases.push_back({"softmax", {sx}, [=](Graph* g) { return softmax(g, sx); }});

    auto lx = random_tensor({3, 5}, rng, 0.2f, 3.0f, true);
    cases.push_back({"log", {lx}, [=](Graph* g) { return log_(g, lx); }});
    cases.push_back({"sqrt", {lx}, [=](Graph* g) { return sqrt_(g, lx); }});

    auto ux = random_tensor({6, 9}, rng, -1, 1, true);
    cases.push_back({"sum", {ux}, [=](Graph* g) { return sum(g, ux); }});
    cases.push_back({"mean", {ux}, [=](Graph* g) { return mean(g, ux); }});
    cases.push_back(
        {"max_last", {ux}, [=](Graph* g) { return max_last(g, ux).values; }});
    cases.push_back(
        {"clamp", {ux}, [=](Graph* g) { return clamp(g, ux, -0.5f, 0.5f); }});
    cases.push_back(
        {"rotate90", {ux}, [=](Graph* g) { return rotate90(g, ux, 1); }});
    cases.push_back(
        {"reshape", {ux}, [=](Graph* g) { return reshape(g, ux, {9, 6}); }});

    auto c1 = random_tensor({3, 2}, rng, -1, 1, true);
    auto c2 = random_tensor({3, 4}, rng, -1, 1, true);
    cases.push_back({"concat_last",
                     {c1, c2},
                     [=](Graph* g) { return concat_last(g, {c1, c2}); }});
    auto s1 = random_tensor({2, 3}, rng, -1, 1, true);
    auto s2 = random_tensor({2, 3}, rng, -1, 1, true);
    cases.push_back(
        {"stack0", {s1, s2}, [=](Graph* g) { return stack0(g, {s1, s2}); }});

    auto gx = random_tensor({4, 4}, rng, -1, 1, true);
    std::vector<int> gidx;
    for (int i = 0; i < 8; ++i) gidx.push_back(rng.uniform_int(16));
    cases.push_back({"gather", {gx}, [=](Graph* g) {
                       return gather(g, gx, gidx, {8});
                     }});
    cases.push_back({"take_rows", {gx}, [=](Graph* g) {
                       return take_rows(g, gx, {2, 0, 3});
                     }});

    for (auto& c : cases) {
      auto proj = random_tensor(c.forward(nullptr)->shape, rng);
      auto loss_of = [&](Graph* g) { return sum(g, mul(g, c.forward(g), proj)); };
      Graph g;
      g.backward(loss_of(&g));
      auto loss_fn = [&]() { return double(loss_of(nullptr)->values[0]); };
      for (auto& p : c.params) {
        auto res = fd_compare(loss_fn, p, p->grad);
        by_op[c.name].total += res.total;
        by_op[c.name].passed += res.passed;
        std::fill(p->grad.begin(), p->grad.end(), 0.0f);
      }
    }
  }
  for (const auto& [name, res] : by_op) {
    INFO(name);
    CHECK(res.pass_rate() >= 0.95);
  }
}

TEST_CASE("rotate90 k then 4-k is the identity, bit-exact") {
  Xoshiro256 rng(5);
  auto x = random_tensor({6, 4, 3}, rng);
  for (int k = 0; k <= 3; ++k) {
    auto y = rotate90(nullptr, rotate90(nullptr, x, k), 4 - k);
    REQUIRE(y->shape == x->shape);
    for (int64_t i = 0; i < x->numel(); ++i)
      CHECK(y->values[i] == x->values[i]);
  }
}

TEST_CASE("rotate90 k=1 index formula") {
  const int p = 4;
  auto x = zeros({p, p});
  std::iota(x->values.begin(), x->values.end(), 0.0f);
  auto y = rotate90(nullptr, x, 1);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < p; ++j)
      CHECK(y->values[j * p + (p - 1 - i)] == x->values[i * p + j]);
}

TEST_CASE("clamp gradient mask per element") {
  Graph g;
  auto x = tensor({5}, {-2.0f, 0.0f, 0.5f, 1.0f, 3.0f}, true);
  auto loss = sum(&g, clamp(&g, x, 0.0f, 1.0f));
  g.backward(loss);
  CHECK(x->grad == std::vector<float>{0, 0, 1, 0, 0});
}

TEST_CASE("sgd_step") {
  SUBCASE("basic update") {
    auto p = tensor({1}, {1.0f}, true);
    p->ensure_grad();
    p->grad[0] = 2.0f;
    sgd_step({p}, 0.1f);
    CHECK(p->values[0] == doctest::Approx(0.8f));
    CHECK(p->grad[0] == 0.0f);
  }
  SUBCASE("zero grad leaves param unchanged") {
    auto p = tensor({3}, {1.0f, -2.0f, 0.5f}, true);
    p->ensure_grad();
    sgd_step({p}, 0.7f);
    CHECK(p->values == std::vector<float>{1.0f, -2.0f, 0.5f});
  }
  SUBCASE("two steps equal one step at summed displacement") {
    auto p = tensor({1}, {1.0f}, true);
    auto q = tensor({1}, {1.0f}, true);
    p->ensure_grad();
    q->ensure_grad();
    for (int i = 0; i < 2; ++i) {
      p->grad[0] = 3.0f;
      sgd_step({p}, 0.1f);
    }
    q->grad[0] = 3.0f;
    sgd_step({q}, 0.2f);
    CHECK(p->values[0] == doctest::Approx(q->values[0]));
  }
  SUBCASE("missing grad is fatal") {
    auto p = tensor({2}, {1.0f, 2.0f}, true);
    CHECK_THROWS_AS(sgd_step({p}, 0.1f), DataError);
  }
}

TEST_CASE("gradient accumulates over multiple paths") {
  Graph g;
  auto x = tensor({2}, {1.5f, -0.5f}, true);
  auto loss = sum(&g, add(&g, x, x));
  g.backward(loss);
  CHECK(x->grad == std::vector<float>{2.0f, 2.0f});
}

TEST_CASE("determinism: identical seeds give bit-identical streams") {
  Xoshiro256 a(99), b(99);
  for (int i = 0; i < 1000; ++i) REQUIRE(a.next() == b.next());
}

TEST_CASE("VRW1 weight files round-trip") {
  Xoshiro256 rng(17);
  NamedTensors ts;
  ts.emplace_back("conv.w", random_tensor({2, 3, 3, 3}, rng));
  ts.emplace_back("head.b", random_tensor({9}, rng));
  const std::string path = "test_weights.vrw";
  save_weights(path, ts);
  auto back = load_weights(path);
  REQUIRE(back.size() == ts.size());
  for (size_t i = 0; i < ts.size(); ++i) {
    CHECK(back[i].first == ts[i].first);
    CHECK(back[i].second->shape == ts[i].second->shape);
    CHECK(back[i].second->values == ts[i].second->values);
  }
  SUBCASE("bad magic is fatal and names the file") {
    const std::string bad = "test_weights_bad.vrw";
    {
      std::ofstream os(bad, std::ios::binary);
      os << "NOPE1234";
    }
    try {
      load_weights(bad);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find(bad) != std::string::npos);
    }
  }
}
