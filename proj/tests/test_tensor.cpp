#include <doctest.h>

#include <cmath>
#include <vector>

#include "mrc/tensor.hpp"
#include "test_util.hpp"

using namespace mrc;
using mrc_test::finite_difference_grad;
using mrc_test::fill_uniform;
using mrc_test::grad_rel_error;

TEST_CASE("matmul identity and projector") {
  Graph g;
  Tensor eye(2, 2, {1, 0, 0, 1});
  Tensor a(2, 2, {1, 2, 3, 4});
  auto r = matmul(g.leaf(eye), g.leaf(a));
  CHECK(r.value() == std::vector<double>{1, 2, 3, 4});

  Tensor proj(2, 2, {1, 0, 0, 0});
  Tensor v(2, 1, {5, 7});
  auto p = matmul(g.leaf(proj), g.leaf(v));
  CHECK(p.value() == std::vector<double>{5, 0});
}

TEST_CASE("matmul rejects mismatched shapes naming both") {
  Graph g;
  Tensor a(2, 3), b(4, 5);
  auto va = g.leaf(a), vb = g.leaf(b);
  CHECK_THROWS_WITH_AS(g.matmul(va, vb), doctest::Contains("[2x3]"), DimensionError);
  try {
    g.matmul(va, vb);
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("[4x5]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient of sum(A*B) matches finite differences and B row sums") {
  Rng rng(7);
  Tensor a(3, 4, true);
  Tensor b(4, 2);
  fill_uniform(a, rng);
  fill_uniform(b, rng);

  auto loss = [&] {
    Graph g;
    return sum_all(matmul(g.leaf(a), g.leaf(b))).scalar();
  };
  a.zero_grad();
  {
    Graph g;
    auto l = sum_all(matmul(g.leaf(a), g.leaf(b)));
    g.backward(l);
  }
  const auto numeric = finite_difference_grad(a, loss);
  CHECK(grad_rel_error(a.g, numeric) < 1e-4);
  // d/dA[i][k] sum(A*B) = sum_j B[k][j], independent of i
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 4; ++k) {
      double row_sum = 0;
      for (int j = 0; j < 2; ++j) row_sum += b.at(k, j);
      CHECK(a.g[size_t(i) * 4 + k] == doctest::Approx(row_sum).epsilon(1e-12));
    }
}

TEST_CASE("softmax_rows closed forms") {
  Graph g;
  Tensor x(1, 2, {0, 0});
  auto s = softmax_rows(g.leaf(x));
  CHECK(s.value()[0] == doctest::Approx(0.5));
  CHECK(s.value()[1] == doctest::Approx(0.5));

  Tensor y(1, 2, {std::log(2.0), 0});
  auto sy = softmax_rows(g.leaf(y));
  CHECK(sy.value()[0] == doctest::Approx(2.0 / 3).epsilon(1e-12));
  CHECK(sy.value()[1] == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("softmax_rows survives large logits without overflow") {
  Graph g;
  Tensor x(1, 2, {1000, 0});
  auto s = softmax_rows(g.leaf(x));
  // high-precision oracle in long double
  const long double e = expl(-1000.0L);
  const long double p0 = 1.0L / (1.0L + e);
  CHECK(std::isfinite(s.value()[0]));
  CHECK(s.value()[0] == doctest::Approx(double(p0)).epsilon(1e-12));
  CHECK(s.value()[1] == doctest::Approx(double(1.0L - p0)));
}

TEST_CASE("softmax_rows rejects NaN input") {
  Graph g;
  Tensor x(1, 2, {std::nan(""), 0});
  auto v = g.leaf(x);
  CHECK_THROWS_AS(g.softmax_rows(v), NumericError);
}

TEST_CASE("softmax_rows rows sum to one and are shift invariant") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const int r = 1 + int(rng.below(4)), c = 1 + int(rng.below(6));
    Tensor x(r, c);
    fill_uniform(x, rng, -5, 5);
    Tensor shifted = x;
    const double delta = rng.uniform(-3, 3);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) shifted.at(i, j) += delta;

    Graph g;
    auto s = softmax_rows(g.leaf(x));
    auto s2 = softmax_rows(g.leaf(shifted));
    for (int i = 0; i < r; ++i) {
      double sum = 0;
      for (int j = 0; j < c; ++j) sum += s.value()[size_t(i) * c + j];
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
    for (size_t i = 0; i < s.value().size(); ++i)
      CHECK(s.value()[i] == doctest::Approx(s2.value()[i]).epsilon(1e-9));
  }
}

TEST_CASE("masked softmax zeroes padding and handles all-masked spans") {
  Graph g;
  Tensor x(2, 4, {1, 2, 3, 99, 4, 5, 6, 99});
  auto s = softmax_rows(g.leaf(x), /*valid_cols=*/3, /*valid_rows=*/1);
  // row 0: softmax over first 3; column 3 and row 1 are zero
  double sum = 0;
  for (int j = 0; j < 3; ++j) sum += s.value()[j];
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s.value()[3] == 0.0);
  for (int j = 0; j < 4; ++j) CHECK(s.value()[4 + j] == 0.0);

  // all -inf span (post diagonal mask on a 1x1) yields zeros, not NaN
  Tensor one(1, 1, {2.5});
  auto masked = softmax_cols(mask_diagonal(g.leaf(one)));
  CHECK(masked.value()[0] == 0.0);
}

TEST_CASE("elementwise closed forms") {
  Graph g;
  Tensor z(1, 1, {0});
  CHECK(sigmoid(g.leaf(z)).scalar() == doctest::Approx(0.5));
  Tensor n(1, 2, {-3, 3});
  auto r = relu(g.leaf(n));
  CHECK(r.value()[0] == 0.0);
  CHECK(r.value()[1] == 3.0);
}

TEST_CASE("sigmoid derivative at zero is 0.25 against finite differences") {
  Tensor x(1, 1, {0}, true);
  auto loss = [&] {
    Graph g;
    return sigmoid(g.leaf(x)).scalar();
  };
  x.zero_grad();
  {
    Graph g;
    g.backward(g.sigmoid(g.leaf(x)));
  }
  CHECK(x.g[0] == doctest::Approx(0.25).epsilon(1e-12));
  const auto numeric = finite_difference_grad(x, loss);
  CHECK(x.g[0] == doctest::Approx(numeric[0]).epsilon(1e-6));
}

TEST_CASE("log rejects non-positive input") {
  Graph g;
  Tensor x(1, 1, {0});
  auto v = g.leaf(x);
  CHECK_THROWS_AS(g.log(v), NumericError);
  Tensor y(1, 1, {-2});
  auto vy = g.leaf(y);
  CHECK_THROWS_AS(g.log(vy), NumericError);
}

TEST_CASE("concat stacks vectors and splits gradient") {
  Graph g;
  Tensor a(2, 1, {1, 2}, true);
  Tensor b(1, 1, {3}, true);
  auto c = concat<double>({g.leaf(a), g.leaf(b)}, 0);
  CHECK(c.rows() == 3);
  CHECK(c.value() == std::vector<double>{1, 2, 3});

  Tensor m1(4, 3), m2(4, 3);
  auto wide = concat<double>({g.leaf(m1), g.leaf(m2)}, 0);
  CHECK(wide.rows() == 8);
  CHECK(wide.cols() == 3);

  // backward of sum routes ones to each input
  Graph g2;
  auto c2 = concat<double>({g2.leaf(a), g2.leaf(b)}, 0);
  a.zero_grad();
  b.zero_grad();
  g2.backward(g2.sum_all(c2));
  CHECK(a.g == std::vector<double>{1, 1});
  CHECK(b.g == std::vector<double>{1});
  const auto na = finite_difference_grad(a, [&] {
    Graph gg;
    return sum_all(concat<double>({gg.leaf(a), gg.leaf(b)}, 0)).scalar();
  });
  CHECK(grad_rel_error(a.g, na) < 1e-4);
}

TEST_CASE("concat rejects ragged shapes") {
  Graph g;
  Tensor a(2, 3), b(2, 4);
  auto va = g.leaf(a), vb = g.leaf(b);
  CHECK_THROWS_AS(g.concat({va, vb}, 0), DimensionError);
}

TEST_CASE("dropout identity cases") {
  Rng rng(5);
  Graph g;
  Tensor x(3, 3);
  fill_uniform(x, rng);
  auto v = g.leaf(x);
  auto train0 = dropout(v, 0.0, true, rng);
  CHECK(train0.ix == v.ix);  // exact identity, not a copy
  auto eval_half = dropout(v, 0.5, false, rng);
  CHECK(eval_half.ix == v.ix);
  CHECK_THROWS_AS(g.dropout(v, 1.0, true, rng), ConfigError);
}

TEST_CASE("dropout mask is reproducible and has the right zero fraction") {
  const int n = 100000;
  const double rate = 0.1;
  Tensor x(1, n);
  x.fill(1.0);

  auto run = [&](uint64_t seed) {
    Rng rng(seed);
    Graph g;
    return dropout(g.leaf(x), rate, true, rng).value();
  };
  const auto a = run(42), b = run(42);
  CHECK(a == b);

  int zeros = 0;
  for (double v : a) {
    if (v == 0.0)
      ++zeros;
    else
      CHECK(v == doctest::Approx(1.0 / 0.9));
  }
  // binomial: mean n*rate, sigma = sqrt(n*rate*(1-rate))
  const double sigma = std::sqrt(n * rate * (1 - rate));
  CHECK(std::fabs(zeros - n * rate) < 3 * sigma);

  // survivors are scaled so the expectation matches the input
  double mean = 0;
  for (double v : a) mean += v;
  mean /= n;
  CHECK(mean == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("backward computes d(x^2)=2x and leaves disconnected leaves at zero") {
  Tensor x(1, 1, {3}, true);
  Tensor unused(2, 2, true);
  Graph g;
  auto vx = g.leaf(x);
  auto vu = g.leaf(unused);
  (void)vu;
  auto y = hadamard(vx, vx);
  x.zero_grad();
  unused.zero_grad();
  g.backward(y);
  CHECK(x.g[0] == doctest::Approx(6.0));
  CHECK(unused.g == std::vector<double>(4, 0.0));
}

TEST_CASE("backward guards: scalar root only, single execution") {
  Tensor x(2, 1, {1, 2}, true);
  Graph g;
  auto v = g.leaf(x);
  CHECK_THROWS_AS(g.backward(v), UsageError);
  auto s = g.sum_all(v);
  g.backward(s);
  CHECK_THROWS_AS(g.backward(s), UsageError);
}

// Every differentiable op, checked against central finite differences on
// random small tensors. The loss weights the op output elementwise by a fixed
// random matrix so nontrivial gradients reach every coordinate.
TEST_CASE("reverse-mode gradients match finite differences per op") {
  Rng rng(123);

  auto check_op = [&](const char* name, int pr, int pc,
                      const std::function<Var(Graph&, Var)>& op) {
    CAPTURE(name);
    Tensor param(pr, pc, true);
    fill_uniform(param, rng, -1.5, 1.5);
    Tensor weights;  // sized lazily after one forward

    auto build = [&](Graph& g) {
      auto out = op(g, g.leaf(param));
      if (weights.size() == 0) {
        weights = Tensor(out.rows(), out.cols());
        fill_uniform(weights, rng, -1, 1);
      }
      return sum_all(hadamard(out, g.leaf(weights)));
    };

    param.zero_grad();
    {
      Graph g;
      g.backward(build(g));
    }
    const auto analytic = param.g;
    const auto numeric = finite_difference_grad(param, [&] {
      Graph g;
      return build(g).scalar();
    });
    CHECK(grad_rel_error(analytic, numeric) < 1e-4);
  };

  Tensor other(4, 3);
  fill_uniform(other, rng);

  check_op("matmul_left", 3, 4, [&](Graph& g, Var p) { return matmul(p, g.leaf(other)); });
  check_op("matmul_right", 3, 2, [&](Graph& g, Var p) { return matmul(g.leaf(other), p); });
  check_op("transpose", 3, 4, [](Graph&, Var p) { return transpose(p); });
  check_op("add", 4, 3, [&](Graph& g, Var p) { return add(p, g.leaf(other)); });
  check_op("add_bias", 4, 3, [&](Graph& g, Var p) {
    Var b = g.input(4, 1, {0.1, -0.2, 0.3, 0.4});
    return add_bias(p, b);
  });
  check_op("bias_grad", 4, 1, [&](Graph& g, Var p) { return add_bias(g.leaf(other), p); });
  check_op("hadamard", 4, 3, [&](Graph& g, Var p) { return hadamard(p, g.leaf(other)); });
  check_op("affine", 3, 3, [](Graph&, Var p) { return affine(p, 2.5, -0.75); });
  check_op("concat0", 2, 3, [&](Graph& g, Var p) { return concat<double>({p, slice_rows(g.leaf(other), 0, 2)}, 0); });
  check_op("concat1", 4, 2, [&](Graph& g, Var p) { return concat<double>({p, g.leaf(other)}, 1); });
  check_op("slice_rows", 4, 3, [](Graph&, Var p) { return slice_rows(p, 1, 3); });
  check_op("slice_cols", 4, 3, [](Graph&, Var p) { return slice_cols(p, 0, 2); });
  check_op("relu", 3, 3, [](Graph&, Var p) { return relu(p); });
  check_op("sigmoid", 3, 3, [](Graph&, Var p) { return sigmoid(p); });
  check_op("tanh", 3, 3, [](Graph&, Var p) { return mrc::tanh(p); });
  check_op("exp", 3, 3, [](Graph&, Var p) { return mrc::exp(p); });
  check_op("log", 3, 3, [&](Graph& g, Var p) { return mrc::log(sigmoid(p)); });
  check_op("log_clamped", 3, 3, [](Graph&, Var p) { return log_clamped(sigmoid(p)); });
  check_op("softmax_rows", 3, 5, [](Graph&, Var p) { return softmax_rows(p); });
  check_op("softmax_rows_masked", 3, 5, [](Graph&, Var p) { return softmax_rows(p, 3, 2); });
  check_op("softmax_cols", 5, 3, [](Graph&, Var p) { return softmax_cols(p); });
  check_op("mask_diagonal", 4, 4, [](Graph&, Var p) { return softmax_cols(mask_diagonal(p)); });
  check_op("pick", 3, 3, [](Graph&, Var p) { return pick(p, 1, 2); });
}

TEST_CASE("embed_cols gathers rows as columns and routes gradients to the table") {
  Tensor table(4, 3, {0, 1, 2, 10, 11, 12, 20, 21, 22, 30, 31, 32}, true);
  Graph g;
  auto e = g.embed_cols(table, {2, 0, 2}, /*pad_to=*/4);
  CHECK(e.rows() == 3);
  CHECK(e.cols() == 4);
  CHECK(e.value_at(0, 0) == 20.0);
  CHECK(e.value_at(2, 1) == 2.0);
  CHECK(e.value_at(1, 3) == 0.0);  // padding column

  table.zero_grad();
  g.backward(g.sum_all(e));
  // row 2 used twice, row 0 once, rows 1 and 3 unused
  CHECK(table.g[0] == 1.0);
  CHECK(table.g[3] == 0.0);
  CHECK(table.g[6] == 2.0);
  CHECK(table.g[9] == 0.0);

  auto numeric = finite_difference_grad(table, [&] {
    Graph gg;
    return sum_all(gg.embed_cols(table, {2, 0, 2}, 4)).scalar();
  });
  CHECK(grad_rel_error(table.g, numeric) < 1e-4);
}

TEST_CASE("backward fault hook perturbs gradients (negative control)") {
  Rng rng(9);
  Tensor a(3, 3, true);
  Tensor b(3, 3);
  fill_uniform(a, rng);
  fill_uniform(b, rng);

  auto grads = [&](bool faulty) {
    Graph g;
    if (faulty) g.set_backward_fault("matmul");
    a.zero_grad();
    g.backward(g.sum_all(g.matmul(g.leaf(a), g.leaf(b))));
    return a.g;
  };
  const auto clean = grads(false);
  const auto dirty = grads(true);
  const auto numeric = finite_difference_grad(a, [&] {
    Graph g;
    return sum_all(matmul(g.leaf(a), g.leaf(b))).scalar();
  });
  CHECK(grad_rel_error(clean, numeric) < 1e-4);
  CHECK(grad_rel_error(dirty, numeric) > 1e-4);
}
