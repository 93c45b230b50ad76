#include <cmath>
#include <numeric>

#include "doctest.h"
#include "rfs/numeric/linalg.hpp"
#include "rfs/numeric/ops.hpp"
#include "support.hpp"

using namespace rfs;
using rfs::testing::check_gradients;
using rfs::testing::probe_loss;
using rfs::testing::random_tensor;

TEST_CASE("softmax of equal logits is uniform") {
  auto out = ops::softmax(Tensor<double>({2}, {0.0, 0.0}));
  CHECK(out.data()[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(out.data()[1] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("softmax rows sum to one") {
  std::mt19937_64 rng(3);
  auto x = random_tensor({7, 13}, rng, false, -30.0, 30.0);
  auto y = ops::softmax(x);
  for (std::size_t r = 0; r < 7; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 13; ++c) s += y.at({r, c});
    CHECK(std::abs(s - 1.0) <= 1e-12);
  }
}

TEST_CASE("layernorm maps a constant row to the bias") {
  Tensor<double> x({1, 4}, {3.0, 3.0, 3.0, 3.0});
  auto g = Tensor<double>::full({4}, 1.0);
  auto b = Tensor<double>::zeros({4});
  auto y = ops::layernorm(x, g, b);
  for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("cross entropy of uniform logits is log V") {
  Tensor<double> logits({1, 4}, {0, 0, 0, 0});
  std::vector<TokenId> t{2};
  CHECK(ops::cross_entropy(logits, t).item() == doctest::Approx(std::log(4.0)).epsilon(1e-14));
  CHECK(std::abs(ops::cross_entropy(logits, t).item() - 1.386294) < 1e-6);
}

TEST_CASE("cross entropy ignores negative targets") {
  Tensor<double> logits({2, 3}, {0, 0, 0, 5, 1, 1});
  std::vector<TokenId> t{1, -1};
  CHECK(ops::cross_entropy(logits, t).item() == doctest::Approx(std::log(3.0)));
  std::vector<TokenId> none{-1, -1};
  CHECK(ops::cross_entropy(logits, none).item() == 0.0);
}

TEST_CASE("backward of sum of squares") {
  Tensor<double> x({3}, {1, 2, 3}, true);
  backward(ops::sum(ops::mul(x, x)));
  auto g = x.grad();
  CHECK(g[0] == 2.0);
  CHECK(g[1] == 4.0);
  CHECK(g[2] == 6.0);
}

TEST_CASE("backward of a constant leaves zero gradients") {
  Tensor<double> x({3}, {1, 2, 3}, true);
  auto c = Tensor<double>::scalar(5.0);
  backward(c);
  for (double g : x.grad()) CHECK(g == 0.0);
}

TEST_CASE("backward rejects non-scalar losses") {
  Tensor<double> x({3}, {1, 2, 3}, true);
  CHECK_THROWS_AS(backward(ops::scale(x, 2.0)), ShapeError);
}

TEST_CASE("leaf gradients accumulate across backward calls") {
  Tensor<double> x({2}, {1, 2}, true);
  backward(ops::sum(ops::scale(x, 3.0)));
  backward(ops::sum(ops::scale(x, 3.0)));
  CHECK(x.grad()[0] == 6.0);
  CHECK(x.grad()[1] == 6.0);
}

TEST_CASE("graph visits every record once") {
  Tensor<double> x({2}, {1, 2}, true);
  auto y = ops::mul(x, x);
  auto z = ops::add(y, y);  // y reached twice
  auto l = ops::sum(z);
  Graph<double> g(l);
  CHECK(g.size() == 4);
  backward(l);
  CHECK(x.grad()[0] == doctest::Approx(4.0));
  CHECK(x.grad()[1] == doctest::Approx(8.0));
}

TEST_CASE("no graph is recorded under NoGradGuard") {
  Tensor<double> x({2}, {1, 2}, true);
  NoGradGuard guard;
  auto y = ops::mul(x, x);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("shape errors name the operation and the dims") {
  Tensor<double> a({2, 3}), b({4, 5});
  try {
    ops::matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("3") != std::string::npos);
    CHECK(msg.find("4") != std::string::npos);
  }
  CHECK_THROWS_AS(ops::add(a, b), ShapeError);
  CHECK_THROWS_AS(ops::layernorm(a, Tensor<double>({2}), Tensor<double>({3})), ShapeError);
  std::vector<TokenId> ids{7};
  CHECK_THROWS_AS(ops::embed(ids, a), ShapeError);
  std::vector<TokenId> t{0};
  CHECK_THROWS_AS(ops::cross_entropy(a, t), ShapeError);
}

// Central-difference checks for every differentiable op at 64-bit.
TEST_CASE("op gradients match central differences") {
  std::mt19937_64 rng(11);
  constexpr double kTol = 1e-5;

  SUBCASE("matmul") {
    auto a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
    auto r = check_gradients({a, b}, [&] { return probe_loss(ops::matmul(a, b), 1); });
    CHECK_MESSAGE(r.max_rel_err < kTol, r.worst);
  }
  SUBCASE("linear") {
    auto x = random_tensor({5, 3}, rng), w = random_tensor({3, 4}, rng),
         b = random_tensor({4}, rng);
    auto r = check_gradients({x, w, b}, [&] { return probe_loss(ops::linear(x, w, b), 2); });
    CHECK_MESSAGE(r.max_rel_err < kTol, r.worst);
  }
  SUBCASE("add, mul, scale, add_constant") {
    auto a = random_tensor({2, 3}, rng), b = random_tensor({2, 3}, rng);
    std::vector<double> c(6, 0.25);
    auto r = check_gradients({a, b}, [&] {
      auto t = ops::add_constant(ops::scale(ops::mul(ops::add(a, b), a), 1.7),
                                 std::span<const double>(c));
      return probe_loss(t, 3);
    });
    CHECK_MESSAGE(r.max_rel_err < kTol, r.worst);
  }
  SUBCASE("softmax") {
    auto a = random_tensor({3, 5}, rng);
    auto r = check_gradients({a}, [&] { return probe_loss(ops::softmax(a), 4); });
    CHECK_MESSAGE(r.max_rel_err < kTol, r.worst);
  }
  SUBCASE("layernorm") {
    auto x = random_tensor({4, 6}, rng), g = random_tensor({6}, rng), b = random_tensor({6}, rng);
    auto r = check_gradients({x, g, b}, [&] { return probe_loss(ops::layernorm(x, g, b), 5); });
    CHECK_MESSAGE(r.max_rel_err < kTol, r.worst);
  }
  SUBCASE("gelu") {
    auto x = random_tensor({3, 7}, rng, true, -3.0, 3.0);
    auto r = check_gradients({x}, [&] { return probe_loss(ops::gelu(x), 6); });
    CHECK_MESSAGE(r.max_rel_err < kTol, r.worst);
  }
  SUBCASE("embed") {
    auto table = random_tensor({5, 3}, rng);
    std::vector<TokenId> ids{4, 0, 4, 2};
    auto r = check_gradients({table}, [&] { return probe_loss(ops::embed(ids, table), 7); });
    CHECK_MESSAGE(r.max_rel_err < kTol, r.worst);
  }
  SUBCASE("cross_entropy") {
    auto logits = random_tensor({4, 6}, rng, true, -2.0, 2.0);
    std::vector<TokenId> t{1, -1, 5, 0};
    auto r = check_gradients({logits}, [&] { return ops::cross_entropy(logits, t); });
    CHECK_MESSAGE(r.max_rel_err < kTol, r.worst);
  }
  SUBCASE("dropout") {
    auto x = random_tensor({4, 5}, rng);
    const Rng start(99);
    auto r = check_gradients({x}, [&] {
      Rng local = start;  // same mask every evaluation
      return probe_loss(ops::dropout(x, 0.3, local), 8);
    });
    CHECK_MESSAGE(r.max_rel_err < kTol, r.worst);
  }
  SUBCASE("split_heads and merge_heads") {
    auto x = random_tensor({6, 4}, rng);  // B=2, T=3, H=2, Dh=2
    auto r = check_gradients({x}, [&] {
      auto h = ops::split_heads(x, 2, 3, 2);
      return probe_loss(ops::merge_heads(ops::scale(h, 1.3)), 9);
    });
    CHECK_MESSAGE(r.max_rel_err < kTol, r.worst);
  }
  SUBCASE("rope, partial rotary") {
    auto x = random_tensor({1, 2, 3, 6}, rng);
    std::vector<double> pos{0.0, 1.5, 7.25};
    auto r = check_gradients({x}, [&] { return probe_loss(ops::rope(x, pos, 4, 10000.0), 10); });
    CHECK_MESSAGE(r.max_rel_err < kTol, r.worst);
  }
  SUBCASE("attention") {
    auto q = random_tensor({2, 2, 3, 4}, rng), k = random_tensor({2, 2, 3, 4}, rng),
         v = random_tensor({2, 2, 3, 4}, rng);
    auto r = check_gradients({q, k, v}, [&] {
      return probe_loss(ops::attention(q, k, v, std::span<const double>{}), 11);
    });
    CHECK_MESSAGE(r.max_rel_err < kTol, r.worst);
  }
  SUBCASE("attention with bias and a query offset") {
    auto q = random_tensor({1, 2, 2, 3}, rng), k = random_tensor({1, 2, 4, 3}, rng),
         v = random_tensor({1, 2, 4, 3}, rng);
    std::vector<double> bias(1 * 2 * 2 * 4);
    for (std::size_t i = 0; i < bias.size(); ++i) bias[i] = -0.1 * static_cast<double>(i % 5);
    auto r = check_gradients({q, k, v}, [&] {
      return probe_loss(ops::attention(q, k, v, std::span<const double>(bias), 2), 12);
    });
    CHECK_MESSAGE(r.max_rel_err < kTol, r.worst);
  }
}

TEST_CASE("two-layer MLP gradients match finite differences") {
  std::mt19937_64 rng(21);
  auto x = random_tensor({5, 4}, rng, false);
  auto w1 = random_tensor({4, 8}, rng), b1 = random_tensor({8}, rng);
  auto w2 = random_tensor({8, 3}, rng), b2 = random_tensor({3}, rng);
  std::vector<TokenId> t{0, 2, 1, 1, 0};
  auto r = check_gradients({w1, b1, w2, b2}, [&] {
    auto h = ops::gelu(ops::linear(x, w1, b1));
    return ops::cross_entropy(ops::linear(h, w2, b2), t);
  });
  CHECK_MESSAGE(r.max_rel_err < 1e-5, r.worst);
}

TEST_CASE("causal attention ignores later keys") {
  std::mt19937_64 rng(5);
  auto q = random_tensor({1, 1, 3, 2}, rng, false), k = random_tensor({1, 1, 3, 2}, rng, false),
       v = random_tensor({1, 1, 3, 2}, rng, false);
  auto before = ops::attention(q, k, v, std::span<const double>{});
  v.mutable_data()[4] += 10.0;  // key/value 2
  k.mutable_data()[4] += 3.0;
  auto after = ops::attention(q, k, v, std::span<const double>{});
  for (std::size_t i = 0; i < 4; ++i) CHECK(before.data()[i] == after.data()[i]);
}

TEST_CASE("singular values of simple matrices") {
  Tensor<double> eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto s = singular_values(eye);
  REQUIRE(s.size() == 3);
  for (double v : s) CHECK(v == doctest::Approx(1.0).epsilon(1e-14));

  Tensor<double> d({2, 2}, {3, 0, 0, 0});
  auto sd = singular_values(d);
  CHECK(sd[0] == doctest::Approx(3.0).epsilon(1e-14));
  CHECK(sd[1] == 0.0);
}

TEST_CASE("singular values agree with a Jacobi eigensolver on the Gram matrix") {
  std::mt19937_64 rng(8);
  auto m = random_tensor({8, 4}, rng, false);
  std::vector<double> gram(16, 0.0);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      for (std::size_t r = 0; r < 8; ++r) gram[i * 4 + j] += m.at({r, i}) * m.at({r, j});
  auto ev = rfs::testing::jacobi_eigenvalues(gram, 4);
  auto s = singular_values(m);
  REQUIRE(s.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(s[i] - std::sqrt(ev[i])) < 1e-10);
  for (std::size_t i = 1; i < 4; ++i) CHECK(s[i] <= s[i - 1]);
}

TEST_CASE("singular values of a wide matrix have length min(rows, cols)") {
  std::mt19937_64 rng(9);
  auto m = random_tensor({3, 7}, rng, false);
  CHECK(singular_values(m).size() == 3);
}

TEST_CASE("singular values are invariant under row permutation") {
  std::mt19937_64 rng(10);
  auto m = random_tensor({9, 5}, rng, false);
  std::vector<std::size_t> perm(9);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<double> shuffled;
  for (auto r : perm)
    for (std::size_t c = 0; c < 5; ++c) shuffled.push_back(m.at({r, c}));
  auto a = singular_values(m);
  auto b = singular_values(Tensor<double>({9, 5}, shuffled));
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-9);
}

TEST_CASE("singular values reject bad input") {
  CHECK_THROWS(singular_values(Tensor<double>({2, 2, 2})));
  CHECK_THROWS(singular_values(Tensor<double>({2, 2}, {1, NAN, 0, 1})));
}
