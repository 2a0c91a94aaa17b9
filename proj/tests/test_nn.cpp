#include <cmath>
#include <random>
#include <stdexcept>

#include <doctest.h>

#include "rg/nn.hpp"

using namespace rg;
using nn::Tensor;
using nn::ValueRef;

namespace {

Tensor random_tensor(std::vector<int> shape, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.data) v = u(rng);
  return t;
}

// Central finite differences of a scalar-valued function of one tensor.
template <class F>
Tensor fd_grad(Tensor x, F&& f, double h = 1e-6) {
  Tensor g = Tensor::zeros(x.shape);
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    double keep = x.data[i];
    x.data[i] = keep + h;
    double plus = f(x);
    x.data[i] = keep - h;
    double minus = f(x);
    x.data[i] = keep;
    g.data[i] = (plus - minus) / (2 * h);
  }
  return g;
}

void check_close(const Tensor& a, const Tensor& b, double tol) {
  REQUIRE(a.data.size() == b.data.size());
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    double denom = std::max({std::abs(a.data[i]), std::abs(b.data[i]), 1e-6});
    CHECK(std::abs(a.data[i] - b.data[i]) / denom < tol);
  }
}

}  // namespace

TEST_CASE("identity dense layer reproduces its input") {
  nn::ParameterSet ps;
  Tensor w = Tensor::zeros({3, 3});
  for (int i = 0; i < 3; ++i) w.data[i * 3 + i] = 1.0;
  ps.add("net.l0.W", w);
  ps.add("net.l0.b", Tensor::zeros({3}));

  nn::NetworkSpec spec;
  spec.input_shape = {3};
  spec.layers.push_back(nn::DenseLayer{3, 3, nn::Act::None});

  nn::ForwardPass fwd(spec, ps, "net", Tensor::vec({0.3, -0.7, 1.1}));
  CHECK(fwd.output().data[0] == doctest::Approx(0.3));
  CHECK(fwd.output().data[1] == doctest::Approx(-0.7));
  CHECK(fwd.output().data[2] == doctest::Approx(1.1));
}

TEST_CASE("zero-weight network broadcasts the bias") {
  nn::ParameterSet ps;
  ps.add("net.l0.W", Tensor::zeros({2, 4}));
  ps.add("net.l0.b", Tensor::vec({0.5, -0.25}));
  nn::NetworkSpec spec;
  spec.input_shape = {4};
  spec.layers.push_back(nn::DenseLayer{4, 2, nn::Act::None});
  nn::ForwardPass fwd(spec, ps, "net", Tensor::vec({1, 2, 3, 4}));
  CHECK(fwd.output().data[0] == 0.5);
  CHECK(fwd.output().data[1] == -0.25);
}

TEST_CASE("two-layer MLP matches an independent matrix multiply") {
  std::mt19937_64 rng(3);
  nn::NetworkSpec spec = nn::mlp_spec(4, {5}, 3, nn::Act::Tanh, nn::Act::None);
  nn::ParameterSet ps;
  nn::init_params(spec, "net", rng, ps);
  Tensor x = random_tensor({4}, rng);

  nn::ForwardPass fwd(spec, ps, "net", x);

  // Straight-line re-implementation.
  const Tensor& w0 = ps.at("net.l0.W").value;
  const Tensor& b0 = ps.at("net.l0.b").value;
  const Tensor& w1 = ps.at("net.l1.W").value;
  const Tensor& b1 = ps.at("net.l1.b").value;
  std::vector<double> hid(5);
  for (int o = 0; o < 5; ++o) {
    double acc = b0.data[o];
    for (int i = 0; i < 4; ++i) acc += w0.data[o * 4 + i] * x.data[i];
    hid[o] = std::tanh(acc);
  }
  for (int o = 0; o < 3; ++o) {
    double acc = b1.data[o];
    for (int i = 0; i < 5; ++i) acc += w1.data[o * 5 + i] * hid[i];
    CHECK(std::abs(fwd.output().data[o] - acc) < 1e-12);
  }
}

TEST_CASE("linear layer analytic gradients") {
  // y = Wx, upstream gradient g: dW = g x^T, dx = W^T g, db = g.
  nn::ParameterSet ps;
  ps.add("net.l0.W", Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  ps.add("net.l0.b", Tensor::zeros({2}));
  nn::NetworkSpec spec;
  spec.input_shape = {3};
  spec.layers.push_back(nn::DenseLayer{3, 2, nn::Act::None});

  Tensor x = Tensor::vec({0.5, -1.0, 2.0});
  nn::ForwardPass fwd(spec, ps, "net", x);
  Tensor g = Tensor::vec({1.0, -2.0});
  Tensor dx = fwd.backward(g);

  const Tensor& dw = ps.at("net.l0.W").grad;
  for (int o = 0; o < 2; ++o)
    for (int i = 0; i < 3; ++i)
      CHECK(dw.data[o * 3 + i] == doctest::Approx(g.data[o] * x.data[i]));
  const Tensor& db = ps.at("net.l0.b").grad;
  CHECK(db.data[0] == 1.0);
  CHECK(db.data[1] == -2.0);
  const Tensor& w = ps.at("net.l0.W").value;
  for (int i = 0; i < 3; ++i) {
    double expect = w.data[i] * 1.0 + w.data[3 + i] * -2.0;
    CHECK(dx.data[i] == doctest::Approx(expect));
  }
}

TEST_CASE("three-layer net gradients match finite differences") {
  std::mt19937_64 rng(5);
  nn::NetworkSpec spec = nn::mlp_spec(3, {6, 6}, 2, nn::Act::LeakyRelu, nn::Act::Tanh);
  nn::ParameterSet ps;
  nn::init_params(spec, "net", rng, ps);
  Tensor x = random_tensor({3}, rng);
  Tensor g = random_tensor({2}, rng);

  ps.zero_grads();
  nn::ForwardPass fwd(spec, ps, "net", x);
  Tensor dx = fwd.backward(g);

  auto loss = [&](nn::ParameterSet& p, const Tensor& in) {
    nn::ForwardPass f(spec, p, "net", in);
    double acc = 0.0;
    for (std::size_t i = 0; i < g.data.size(); ++i) acc += g.data[i] * f.output().data[i];
    return acc;
  };

  for (auto& [name, param] : ps.params) {
    Tensor fd = Tensor::zeros(param.value.shape);
    const double h = 1e-5;
    for (std::size_t i = 0; i < param.value.data.size(); ++i) {
      double keep = param.value.data[i];
      param.value.data[i] = keep + h;
      double plus = loss(ps, x);
      param.value.data[i] = keep - h;
      double minus = loss(ps, x);
      param.value.data[i] = keep;
      fd.data[i] = (plus - minus) / (2 * h);
    }
    check_close(param.grad, fd, 1e-4);
  }
  Tensor fdx = fd_grad(x, [&](const Tensor& in) { return loss(ps, in); }, 1e-5);
  check_close(dx, fdx, 1e-4);
}

TEST_CASE("constant branches contribute zero gradient") {
  nn::Tape tape;
  ValueRef x = tape.leaf(Tensor::vec({1.0, 2.0}), true);
  ValueRef c = tape.constant(Tensor::vec({5.0, -3.0}));
  ValueRef y = tape.sum_all(tape.add(x, c));
  tape.backward(y);
  CHECK(tape.grad(x).data[0] == 1.0);
  CHECK(tape.grad(x).data[1] == 1.0);
  CHECK(!tape.requires_grad(c));
}

TEST_CASE("every op kind passes a randomized gradient check") {
  std::mt19937_64 rng(7);

  auto check_op = [&](auto&& build, std::vector<int> shape, double scale = 1.0) {
    for (int trial = 0; trial < 5; ++trial) {
      Tensor x = random_tensor(shape, rng, scale);
      Tensor weights = random_tensor(shape, rng);  // random linear functional
      auto value = [&](const Tensor& in) {
        nn::Tape tape;
        ValueRef r = build(tape, tape.leaf(in, true));
        // Reduce to a scalar through a fixed random functional so arbitrary
        // output shapes are covered.
        const Tensor& out = tape.value(r);
        nn::Tape tape2;
        (void)tape2;
        double acc = 0.0;
        for (std::size_t i = 0; i < out.data.size(); ++i)
          acc += out.data[i] * weights.data[i % weights.data.size()];
        return acc;
      };
      nn::Tape tape;
      ValueRef in = tape.leaf(x, true);
      ValueRef out = build(tape, in);
      Tensor seed = Tensor::zeros(tape.value(out).shape);
      for (std::size_t i = 0; i < seed.data.size(); ++i)
        seed.data[i] = weights.data[i % weights.data.size()];
      ValueRef scalar = tape.sum_all(tape.mul(out, tape.constant(seed)));
      tape.backward(scalar);
      Tensor fd = fd_grad(x, value, 1e-6);
      check_close(tape.grad(in), fd, 1e-4);
    }
  };

  check_op([](nn::Tape& t, ValueRef x) { return t.leaky_relu(x, 0.2); }, {7});
  check_op([](nn::Tape& t, ValueRef x) { return t.tanh_act(x); }, {5});
  check_op([](nn::Tape& t, ValueRef x) { return t.sigmoid_act(x); }, {5});
  check_op([](nn::Tape& t, ValueRef x) { return t.log_sigmoid(x); }, {5}, 3.0);
  check_op([](nn::Tape& t, ValueRef x) { return t.square(x); }, {6});
  check_op([](nn::Tape& t, ValueRef x) { return t.mean_all(x); }, {8});
  check_op([](nn::Tape& t, ValueRef x) { return t.sum_all(x); }, {8});
  check_op([](nn::Tape& t, ValueRef x) { return t.scale(x, -1.7); }, {4});
  check_op([](nn::Tape& t, ValueRef x) { return t.flatten(x); }, {3, 4});
  check_op([](nn::Tape& t, ValueRef x) { return t.mean_rows(x); }, {5, 2});
  check_op([](nn::Tape& t, ValueRef x) { return t.rotate_rows(x, 0.77); }, {5, 2});
  check_op(
      [](nn::Tape& t, ValueRef x) {
        return t.sub_row_broadcast(x, t.constant(Tensor::vec({0.3, -0.4})));
      },
      {5, 2});
  check_op(
      [](nn::Tape& t, ValueRef x) {
        return t.concat({x, t.constant(Tensor::vec({1.0, 2.0}))});
      },
      {4});
  check_op(
      [](nn::Tape& t, ValueRef x) {
        ValueRef c = t.constant(Tensor::vec({0.2, -0.7, 1.1, 0.4}));
        return t.mul(t.add(x, c), t.sub(x, c));
      },
      {4});

  // Dense and conv through parameters as well as inputs.
  check_op(
      [](nn::Tape& t, ValueRef x) {
        nn::Tensor w({3, 4}, {0.1, -0.2, 0.3, 0.4, 0.5, -0.6, 0.7, 0.8, -0.9, 1.0, 0.2, -0.3});
        return t.affine(t.constant(w), t.constant(Tensor::vec({0.1, 0.2, 0.3})), x);
      },
      {4});
  check_op(
      [](nn::Tape& t, ValueRef x) {
        std::mt19937_64 r2(11);
        Tensor w = random_tensor({2, 3, 3, 3}, r2);
        return t.conv2d(t.constant(w), t.constant(Tensor::vec({0.05, -0.05})), x, 2);
      },
      {3, 7, 7});

  // Gradients with respect to conv weights.
  {
    std::mt19937_64 r2(13);
    Tensor x = random_tensor({2, 6, 6}, r2);
    Tensor w = random_tensor({3, 2, 3, 3}, r2);
    Tensor b = random_tensor({3}, r2);
    auto value = [&](const Tensor& wt) {
      nn::Tape tape;
      ValueRef out = tape.conv2d(tape.leaf(wt, true), tape.constant(b), tape.constant(x), 1);
      return tape.value(tape.sum_all(out)).data[0];
    };
    nn::Tape tape;
    ValueRef wref = tape.leaf(w, true);
    ValueRef out = tape.conv2d(wref, tape.constant(b), tape.constant(x), 1);
    tape.backward(tape.sum_all(out));
    Tensor fd = fd_grad(w, value, 1e-6);
    check_close(tape.grad(wref), fd, 1e-4);
  }
}

TEST_CASE("adam_step behavior") {
  nn::ParameterSet ps;
  ps.add("w", Tensor::vec({1.0, -2.0}));
  nn::AdamConfig cfg;
  cfg.lr = 0.01;

  SUBCASE("zero gradient leaves parameters unchanged") {
    nn::adam_step(ps, cfg);
    CHECK(ps.at("w").value.data[0] == 1.0);
    CHECK(ps.at("w").value.data[1] == -2.0);
  }

  SUBCASE("first step is a signed lr-sized move") {
    ps.at("w").grad = Tensor::vec({0.5, -0.125});
    nn::adam_step(ps, cfg);
    // With bias correction the first update is -lr * g / (|g| + ~eps).
    CHECK(ps.at("w").value.data[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-3));
    CHECK(ps.at("w").value.data[1] == doctest::Approx(-2.0 + 0.01).epsilon(1e-3));
  }

  SUBCASE("deterministic across identical runs") {
    nn::ParameterSet ps2;
    ps2.add("w", Tensor::vec({1.0, -2.0}));
    for (int i = 0; i < 5; ++i) {
      ps.at("w").grad = Tensor::vec({0.3, 0.7});
      ps2.at("w").grad = Tensor::vec({0.3, 0.7});
      nn::adam_step(ps, cfg);
      nn::adam_step(ps2, cfg);
    }
    CHECK(ps.at("w").value.data[0] == ps2.at("w").value.data[0]);
    CHECK(ps.at("w").value.data[1] == ps2.at("w").value.data[1]);
  }

  SUBCASE("non-finite gradient names the parameter") {
    ps.at("w").grad.data[0] = std::numeric_limits<double>::quiet_NaN();
    try {
      nn::adam_step(ps, cfg);
      FAIL("expected an exception");
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()).find("w") != std::string::npos);
    }
  }
}

TEST_CASE("forward rejects shape mismatches and stale tapes") {
  std::mt19937_64 rng(17);
  nn::NetworkSpec spec = nn::mlp_spec(3, {4}, 2, nn::Act::LeakyRelu, nn::Act::None);
  nn::ParameterSet ps;
  nn::init_params(spec, "net", rng, ps);

  CHECK_THROWS_AS(nn::ForwardPass(spec, ps, "net", Tensor::vec({1.0, 2.0})),
                  std::invalid_argument);

  nn::ForwardPass fwd(spec, ps, "net", Tensor::vec({1.0, 2.0, 3.0}));
  ps.at("net.l0.W").grad = Tensor::zeros({4, 3});
  nn::adam_step(ps, {});  // version bump
  CHECK_THROWS_AS(fwd.backward(Tensor::vec({1.0, 0.0})), std::runtime_error);
}

TEST_CASE("network spec validation") {
  nn::NetworkSpec bad;
  bad.input_shape = {3};
  bad.layers.push_back(nn::DenseLayer{4, 2, nn::Act::None});  // 3 != 4
  CHECK_THROWS_AS(bad.output_shape(), std::invalid_argument);

  nn::NetworkSpec conv;
  conv.input_shape = {1, 16, 16};
  conv.layers.push_back(nn::Conv2dLayer{1, 8, 3, 2, nn::Act::LeakyRelu});
  conv.layers.push_back(nn::FlattenLayer{});
  auto out = conv.output_shape();
  REQUIRE(out.size() == 1);
  CHECK(out[0] == 8 * 7 * 7);
}

TEST_CASE("training two models in interleaved fashion is isolated") {
  std::mt19937_64 rng(19);
  nn::NetworkSpec spec = nn::mlp_spec(2, {4}, 1, nn::Act::Tanh, nn::Act::None);

  auto train_model = [&](nn::ParameterSet& ps, nn::ParameterSet* other) {
    std::mt19937_64 data_rng(101);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int step = 0; step < 20; ++step) {
      Tensor x = Tensor::vec({u(data_rng), u(data_rng)});
      double target = 0.5 * x.data[0] - 0.25 * x.data[1];
      ps.zero_grads();
      nn::ForwardPass fwd(spec, ps, "net", x);
      double err = fwd.output().data[0] - target;
      fwd.backward(Tensor::vec({2.0 * err}));
      nn::adam_step(ps, {1e-2, 0.9, 0.999, 1e-8});
      if (other) {
        // Interleave a forward pass on the other model; it must not change.
        nn::ForwardPass probe(spec, *other, "net", x);
        (void)probe.output();
      }
    }
  };

  nn::ParameterSet alone, inter, bystander;
  {
    std::mt19937_64 r1(23);
    nn::init_params(spec, "net", r1, alone);
  }
  {
    std::mt19937_64 r1(23);
    nn::init_params(spec, "net", r1, inter);
  }
  {
    std::mt19937_64 r1(29);
    nn::init_params(spec, "net", r1, bystander);
  }
  Tensor bystander_before = bystander.at("net.l0.W").value;

  train_model(alone, nullptr);
  train_model(inter, &bystander);

  for (const auto& [name, p] : alone.params) {
    const auto& q = inter.at(name);
    REQUIRE(p.value.data.size() == q.value.data.size());
    for (std::size_t i = 0; i < p.value.data.size(); ++i)
      CHECK(p.value.data[i] == q.value.data[i]);  // bit-identical
  }
  for (std::size_t i = 0; i < bystander_before.data.size(); ++i)
    CHECK(bystander.at("net.l0.W").value.data[i] == bystander_before.data[i]);
}

TEST_CASE("parameter set json round-trip") {
  std::mt19937_64 rng(31);
  nn::NetworkSpec spec = nn::mlp_spec(3, {4}, 2, nn::Act::LeakyRelu, nn::Act::None);
  nn::ParameterSet ps;
  nn::init_params(spec, "net", rng, ps);
  ps.at("net.l0.W").grad = random_tensor({4, 3}, rng);
  nn::adam_step(ps, {});

  auto j = nn::parameter_set_to_json(ps);
  auto back = nn::parameter_set_from_json(j);
  CHECK(back.version == ps.version);
  for (const auto& [name, p] : ps.params) {
    const auto& q = back.at(name);
    CHECK(q.value.shape == p.value.shape);
    for (std::size_t i = 0; i < p.value.data.size(); ++i) {
      CHECK(q.value.data[i] == p.value.data[i]);
      CHECK(q.m.data[i] == p.m.data[i]);
      CHECK(q.v.data[i] == p.v.data[i]);
    }
    CHECK(q.steps == p.steps);
  }
}
