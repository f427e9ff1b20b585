// Copyright 2026 The Forge Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "forge/graph.hpp"

using forge::Graph;
using forge::GridPos;
using forge::Rng;
using forge::RopeTable;
using forge::Tensor;
using forge::Var;

namespace {

Tensor<double> rand_tensor(size_t r, size_t c, Rng& rng, double scale = 1.0) {
  return Tensor<double>::randn(r, c, rng, scale);
}

using Fn = std::function<Var<double>(Graph<double>&, Var<double>)>;

// Runs grad_check on `count` random inputs and returns the worst error.
double worst_grad_error(const Fn& fn, size_t r, size_t c, uint64_t seed,
                        int count = 10, bool positive = false) {
  Rng rng(seed);
  double worst = 0.0;
  for (int i = 0; i < count; ++i) {
    Tensor<double> x = rand_tensor(r, c, rng);
    if (positive) {
      double* p = x.data_mut();
      for (size_t j = 0; j < x.size(); ++j) p[j] = std::abs(p[j]) + 0.5;
    }
    worst = std::max(worst, forge::grad_check<double>(fn, x));
  }
  return worst;
}

}  // namespace

TEST_CASE("forward values are frozen for basic ops") {
  Graph<double> g;
  auto x = g.input(Tensor<double>::from_rows({{1.0, 2.0}, {3.0, 4.0}}), false);
  auto eye = g.constant(Tensor<double>::from_rows({{1.0, 0.0}, {0.0, 1.0}}));
  auto y = forge::matmul(x, eye);
  CHECK(y.value().same_values(x.value()));  // A @ I == A

  auto z = g.input(Tensor<double>::row_vector({0.0, 0.0}), false);
  auto sm = forge::softmax_rows(z);
  CHECK(sm.value().at(0, 0) == Catch::Approx(0.5).margin(1e-15));
  CHECK(sm.value().at(0, 1) == Catch::Approx(0.5).margin(1e-15));

  auto sl = forge::silu(z);
  CHECK(sl.value().at(0, 0) == 0.0);  // silu(0) == 0
}

TEST_CASE("sum of sigmoid at zero has gradient 0.25") {
  Graph<double> g;
  auto x = g.input(Tensor<double>::row_vector({0.0}), true);
  auto loss = forge::sum_all(forge::sigmoid(x));
  g.backward(loss);
  CHECK(g.grad_of(x).at(0, 0) == Catch::Approx(0.25).margin(1e-12));
}

TEST_CASE("softmax rows sum to one and sigmoid stays in (0,1)") {
  Rng rng(7);
  Tensor<double> x = rand_tensor(5, 9, rng, 3.0);
  Graph<double> g;
  auto v = g.input(x, false);
  auto sm = forge::softmax_rows(v);
  for (size_t i = 0; i < 5; ++i) {
    double s = 0.0;
    for (size_t j = 0; j < 9; ++j) s += sm.value().at(i, j);
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
  auto sg = forge::sigmoid(v);
  for (size_t i = 0; i < 5; ++i)
    for (size_t j = 0; j < 9; ++j) {
      CHECK(sg.value().at(i, j) > 0.0);
      CHECK(sg.value().at(i, j) < 1.0);
    }
}

TEST_CASE("log_sigmoid is finite and accurate at extreme inputs") {
  Graph<double> g;
  auto x = g.input(Tensor<double>::row_vector({-100.0, 0.0, 100.0}), false);
  auto y = forge::log_sigmoid(x);
  CHECK(y.value().at(0, 0) == Catch::Approx(-100.0).margin(1e-9));
  CHECK(y.value().at(0, 1) == Catch::Approx(-std::log(2.0)).margin(1e-12));
  CHECK(y.value().at(0, 2) == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("repeated evaluation is bit-identical") {
  Rng rng(11);
  Tensor<double> x = rand_tensor(4, 6, rng);
  Tensor<double> w = rand_tensor(6, 3, rng);
  auto run = [&]() {
    Graph<double> g;
    auto xv = g.input(x, false);
    auto wv = g.input(w, false);
    return forge::softmax_rows(forge::matmul(forge::silu(xv), wv)).value();
  };
  CHECK(run().same_values(run()));
}

TEST_CASE("shape mismatches raise errors naming the op and both shapes") {
  Graph<double> g;
  auto a = g.input(Tensor<double>(2, 3), false);
  auto b = g.input(Tensor<double>(4, 5), false);
  try {
    forge::matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const forge::ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4,5]") != std::string::npos);
  }
  CHECK_THROWS_AS(forge::add(a, b), forge::ShapeError);
}

TEST_CASE("backward requires a scalar loss") {
  Graph<double> g;
  auto a = g.input(Tensor<double>(2, 2), true);
  auto y = forge::silu(a);
  CHECK_THROWS_AS(g.backward(y), forge::ShapeError);
}

TEST_CASE("gradients match central finite differences per op") {
  const double tol = 1e-4;

  SECTION("add / sub / mul with broadcasting") {
    Rng rng(21);
    for (int i = 0; i < 10; ++i) {
      Tensor<double> b = rand_tensor(1, 5, rng);
      Fn fn = [b](Graph<double>& g, Var<double> x) {
        auto bv = g.input(b, false);
        return forge::sum_all(forge::mul(forge::add(x, bv), forge::sub(x, bv)));
      };
      CHECK(forge::grad_check<double>(fn, rand_tensor(4, 5, rng)) < tol);
    }
    // gradient w.r.t. the broadcast operand
    Tensor<double> x0 = rand_tensor(4, 5, rng);
    Fn fn_b = [x0](Graph<double>& g, Var<double> b) {
      auto xv = g.input(x0, false);
      return forge::sum_all(forge::mul(forge::add(xv, b), xv));
    };
    CHECK(forge::grad_check<double>(fn_b, rand_tensor(1, 5, rng)) < tol);
    CHECK(forge::grad_check<double>(fn_b, rand_tensor(4, 1, rng)) < tol);
    CHECK(forge::grad_check<double>(fn_b, rand_tensor(1, 1, rng)) < tol);
  }

  SECTION("matmul, both operands") {
    Rng rng(22);
    for (int i = 0; i < 10; ++i) {
      Tensor<double> w = rand_tensor(5, 3, rng);
      Fn fn_a = [w](Graph<double>& g, Var<double> x) {
        return forge::sum_all(forge::matmul(x, g.input(w, false)));
      };
      CHECK(forge::grad_check<double>(fn_a, rand_tensor(4, 5, rng)) < tol);
      Tensor<double> a = rand_tensor(4, 5, rng);
      Fn fn_b = [a](Graph<double>& g, Var<double> w2) {
        return forge::sum_all(forge::matmul(g.input(a, false), w2));
      };
      CHECK(forge::grad_check<double>(fn_b, rand_tensor(5, 3, rng)) < tol);
    }
  }

  SECTION("elementwise nonlinearities") {
    auto wrap = [](Var<double> (*op)(Var<double>)) {
      return Fn([op](Graph<double>& g, Var<double> x) {
        (void)g;
        return forge::sum_all(op(x));
      });
    };
    CHECK(worst_grad_error(wrap(&forge::sigmoid<double>), 3, 4, 31) < tol);
    CHECK(worst_grad_error(wrap(&forge::silu<double>), 3, 4, 32) < tol);
    CHECK(worst_grad_error(wrap(&forge::exp<double>), 3, 4, 33) < tol);
    CHECK(worst_grad_error(wrap(&forge::log_sigmoid<double>), 3, 4, 34) < tol);
    CHECK(worst_grad_error(wrap(&forge::log<double>), 3, 4, 35, 10, true) < tol);
  }

  SECTION("softmax / logsumexp / select_index") {
    Fn sm = [](Graph<double>& g, Var<double> x) {
      auto y = forge::softmax_rows(x);
      // weight the entries so the gradient is not trivially zero-sum
      auto mask = g.constant(Tensor<double>::from_rows(
          {{1.0, -2.0, 0.5, 3.0}, {0.2, 1.0, -1.0, 0.7}, {2.0, 0.1, 0.3, -0.4}}));
      return forge::sum_all(forge::mul(y, mask));
    };
    CHECK(worst_grad_error(sm, 3, 4, 41) < tol);

    Fn lse = [](Graph<double>& g, Var<double> x) {
      (void)g;
      return forge::sum_all(forge::logsumexp_rows(x));
    };
    CHECK(worst_grad_error(lse, 3, 4, 42) < tol);

    Fn sel = [](Graph<double>& g, Var<double> x) {
      (void)g;
      return forge::sum_all(forge::select_index(x, {2, 0, 3}));
    };
    CHECK(worst_grad_error(sel, 3, 4, 43) < tol);
  }

  SECTION("reductions and structure ops") {
    Fn mr = [](Graph<double>& g, Var<double> x) {
      auto m = forge::mean_rows(x);
      auto w = g.constant(Tensor<double>::from_rows({{1.0, -1.0, 2.0, 0.5}}));
      return forge::sum_all(forge::mul(m, w));
    };
    CHECK(worst_grad_error(mr, 5, 4, 51) < tol);

    Fn ga = [](Graph<double>& g, Var<double> x) {
      (void)g;
      // repeated index: gradients must accumulate
      return forge::sum_all(forge::gather_rows(x, {0, 2, 2, 1}));
    };
    CHECK(worst_grad_error(ga, 4, 3, 52) < tol);

    Fn cc = [](Graph<double>& g, Var<double> x) {
      auto a = forge::slice_cols(x, 0, 2);
      auto b = forge::slice_cols(x, 2, 3);
      auto joined = forge::concat_cols<double>({b, a});
      auto stacked = forge::concat_rows<double>({joined, joined});
      return forge::sum_all(forge::mul(stacked, stacked));
    };
    CHECK(worst_grad_error(cc, 3, 5, 53) < tol);

    Fn tr = [](Graph<double>& g, Var<double> x) {
      (void)g;
      auto t = forge::transpose(x);
      return forge::sum_all(forge::mul(t, t));
    };
    CHECK(worst_grad_error(tr, 3, 5, 54) < tol);

    Fn mn = [](Graph<double>& g, Var<double> x) {
      (void)g;
      return forge::mean_all(forge::mul(x, x));
    };
    CHECK(worst_grad_error(mn, 3, 5, 55) < tol);
  }

  SECTION("layernorm: input, gamma, beta") {
    Rng rng(61);
    Tensor<double> gamma = rand_tensor(1, 6, rng);
    Tensor<double> beta = rand_tensor(1, 6, rng);
    Fn fx = [gamma, beta](Graph<double>& g, Var<double> x) {
      auto y = forge::layernorm_rows(x, g.input(gamma, false),
                                     g.input(beta, false));
      return forge::sum_all(forge::mul(y, y));
    };
    CHECK(worst_grad_error(fx, 4, 6, 62) < tol);

    Tensor<double> x0 = rand_tensor(4, 6, rng);
    Fn fg = [x0, beta](Graph<double>& g, Var<double> gm) {
      auto y = forge::layernorm_rows(g.input(x0, false), gm,
                                     g.input(beta, false));
      return forge::sum_all(forge::mul(y, y));
    };
    CHECK(forge::grad_check<double>(fg, gamma) < tol);
    Fn fb = [x0, gamma](Graph<double>& g, Var<double> bt) {
      auto y = forge::layernorm_rows(g.input(x0, false),
                                     g.input(gamma, false), bt);
      return forge::sum_all(forge::mul(y, y));
    };
    CHECK(forge::grad_check<double>(fb, beta) < tol);
  }

  SECTION("l2 normalize rows") {
    Fn fn = [](Graph<double>& g, Var<double> x) {
      auto w = g.constant(Tensor<double>::from_rows(
          {{1.0, -1.0, 0.5, 2.0}, {0.3, 0.8, -0.2, 1.0}}));
      return forge::sum_all(forge::mul(forge::l2_normalize_rows(x), w));
    };
    CHECK(worst_grad_error(fn, 2, 4, 71) < tol);
  }

  SECTION("rope rotation") {
    std::vector<GridPos> pos = {{0, 0}, {1, 3}, {2, 1}, {5, 4}};
    auto table = RopeTable::build(pos, 8, 100.0);
    Fn fn = [table](Graph<double>& g, Var<double> x) {
      auto w = g.constant(Tensor<double>::full(4, 8, 0.7));
      return forge::sum_all(forge::mul(forge::rope2d(x, table), w));
    };
    CHECK(worst_grad_error(fn, 4, 8, 81) < tol);
  }
}

TEST_CASE("three-layer MLP gradient matches finite differences") {
  Rng rng(91);
  Tensor<double> w1 = rand_tensor(6, 8, rng, 0.5);
  Tensor<double> w2 = rand_tensor(8, 8, rng, 0.5);
  Tensor<double> w3 = rand_tensor(8, 2, rng, 0.5);
  Tensor<double> b1 = rand_tensor(1, 8, rng, 0.1);
  Tensor<double> b2 = rand_tensor(1, 8, rng, 0.1);

  auto mlp = [&](Graph<double>& g, Var<double> x, Var<double> w1v,
                 Var<double> w2v, Var<double> w3v) {
    auto h1 = forge::silu(forge::add(forge::matmul(x, w1v), g.input(b1, false)));
    auto h2 = forge::silu(forge::add(forge::matmul(h1, w2v), g.input(b2, false)));
    auto out = forge::matmul(h2, w3v);
    return forge::sum_all(forge::mul(out, out));
  };

  Tensor<double> x0 = rand_tensor(4, 6, rng);

  // gradient w.r.t. the input
  Fn f_in = [&](Graph<double>& g, Var<double> x) {
    return mlp(g, x, g.input(w1, false), g.input(w2, false), g.input(w3, false));
  };
  CHECK(forge::grad_check<double>(f_in, x0) < 1e-4);

  // gradient w.r.t. each weight matrix
  Fn f_w1 = [&](Graph<double>& g, Var<double> w) {
    return mlp(g, g.input(x0, false), w, g.input(w2, false), g.input(w3, false));
  };
  CHECK(forge::grad_check<double>(f_w1, w1) < 1e-4);
  Fn f_w2 = [&](Graph<double>& g, Var<double> w) {
    return mlp(g, g.input(x0, false), g.input(w1, false), w, g.input(w3, false));
  };
  CHECK(forge::grad_check<double>(f_w2, w2) < 1e-4);
  Fn f_w3 = [&](Graph<double>& g, Var<double> w) {
    return mlp(g, g.input(x0, false), g.input(w1, false), g.input(w2, false), w);
  };
  CHECK(forge::grad_check<double>(f_w3, w3) < 1e-4);
}

TEST_CASE("gradients accumulate across reuse of the same input") {
  Graph<double> g;
  auto x = g.input(Tensor<double>::row_vector({2.0}), true);
  auto y = forge::add(forge::mul(x, x), x);  // x^2 + x -> d/dx = 2x + 1 = 5
  g.backward(forge::sum_all(y));
  CHECK(g.grad_of(x).at(0, 0) == Catch::Approx(5.0).margin(1e-12));
}

TEST_CASE("rope preserves norms and positions (0,0) are identity") {
  Rng rng(101);
  std::vector<GridPos> pos = {{0, 0}, {3, 7}};
  auto table = RopeTable::build(pos, 16, 10000.0);
  Tensor<double> x = rand_tensor(2, 16, rng);
  Graph<double> g;
  auto y = forge::rope2d(g.input(x, false), table);
  // row 0 has position (0,0): identity
  for (size_t j = 0; j < 16; ++j)
    CHECK(y.value().at(0, j) == Catch::Approx(x.at(0, j)).margin(1e-15));
  // both rows keep their norm
  for (size_t i = 0; i < 2; ++i) {
    double n0 = 0, n1 = 0;
    for (size_t j = 0; j < 16; ++j) {
      n0 += x.at(i, j) * x.at(i, j);
      n1 += y.value().at(i, j) * y.value().at(i, j);
    }
    CHECK(std::abs(n0 - n1) < 1e-9);
  }
}
