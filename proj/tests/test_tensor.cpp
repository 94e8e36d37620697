#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "samlp/error.hpp"
#include "samlp/rng.hpp"
#include "samlp/tensor.hpp"
#include "support.hpp"

using namespace samlp;
using namespace samlp::testing;

TEST_CASE("tensor shape and storage") {
  Tensor t({2, 3, 4});
  CHECK(t.size() == 24);
  CHECK(t.rows() == 6);
  CHECK(t.cols() == 4);
  CHECK(shape_to_string(t.shape()) == "[2, 3, 4]");
  CHECK_THROWS_AS(t.dim(3), DimensionError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<float>{1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(t.reshaped({5, 5}), DimensionError);
  CHECK(t.reshaped({6, 4}).shape() == Shape{6, 4});
  t[0] = std::nanf("");
  CHECK_FALSE(t.all_finite());
}

TEST_CASE("affine_map examples") {
  const Tensor x = Tensor::of({1, 2}, {2, 3});
  const Tensor w = Tensor::of({1, 2}, {0.5f, 0.25f});
  CHECK(affine_map(x, w)[0] == 1.75f);

  Rng rng(1);
  const Tensor in = random_tensor({2, 5, 3}, rng);
  const Tensor eye = Tensor::of({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  CHECK(affine_map(in, eye) == in);

  const Tensor zeros({4, 3});
  const Tensor bias = Tensor::of({1}, {1.5f});
  const Tensor out = affine_map(zeros, random_tensor({1, 3}, rng), &bias);
  for (float v : out.data()) CHECK(v == 1.5f);
}

TEST_CASE("affine_map shape errors name both shapes") {
  const Tensor x({2, 3});
  const Tensor w({4, 5});
  try {
    affine_map(x, w);
    FAIL("expected a DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2, 3]") != std::string::npos);
    CHECK(msg.find("[4, 5]") != std::string::npos);
  }
  const Tensor bias({2});
  CHECK_THROWS_AS(affine_map(Tensor({2, 5}), w, &bias), DimensionError);
}

TEST_CASE("affine_map matches a triple loop oracle") {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t rows = 1 + rng.below(8), c_in = 1 + rng.below(32), c_out = 1 + rng.below(32);
    const Tensor x = random_tensor({rows, c_in}, rng, -3, 3);
    const Tensor w = random_tensor({c_out, c_in}, rng);
    const Tensor b = random_tensor({c_out}, rng);
    const Tensor y = affine_map(x, w, &b);
    const auto ref = ref_affine(to_double(x), to_double(w), to_double(b), rows, c_in, c_out);
    for (std::size_t k = 0; k < ref.size(); ++k) {
      CHECK(std::abs(y[k] - ref[k]) <= 1e-5 * std::max(1.0, std::abs(ref[k])));
    }
  }
}

TEST_CASE("pairwise_l1_neg examples and properties") {
  CHECK(pairwise_l1_neg(Tensor::of({1, 2}, {1, 2}), Tensor::of({1, 2}, {0, 0}))[0] == -3.0f);
  const Tensor y = pairwise_l1_neg(Tensor::of({1, 2}, {0.5f, -0.5f}), Tensor::of({2, 2}, {1, 1, 0, -1}));
  CHECK(y == Tensor::of({1, 2}, {-2.0f, -1.0f}));

  Rng rng(3);
  const Tensor w = random_tensor({5, 7}, rng);
  Tensor x({3, 7});
  std::copy_n(w.data().begin() + 14, 7, x.data().begin() + 7);  // row 1 equals weight row 2
  const Tensor out = pairwise_l1_neg(x, w);
  CHECK(out[1 * 5 + 2] == 0.0f);
  for (float v : out.data()) CHECK(v <= 0.0f);
  for (std::size_t k = 0; k < out.size(); ++k) {
    if (k != 7) CHECK(out[k] < 0.0f);
  }
  CHECK_THROWS_AS(pairwise_l1_neg(Tensor({2, 3}), Tensor({2, 4})), DimensionError);
}

TEST_CASE("global_max_pool") {
  const auto res = global_max_pool(Tensor::of({1, 2, 2}, {1, 5, 3, 2}));
  CHECK(res.values == Tensor::of({1, 2}, {3, 5}));
  CHECK(res.argmax == std::vector<std::uint32_t>{1, 0});

  const Tensor single = Tensor::of({1, 1, 3}, {4, -2, 7});
  CHECK(global_max_pool(single).values.data()[1] == -2.0f);

  const auto ties = global_max_pool(Tensor::of({1, 3, 1}, {2, 2, 2}));
  CHECK(ties.argmax[0] == 0);
  CHECK_THROWS_AS(global_max_pool(Tensor({1, 0, 3})), EmptyInputError);
}

TEST_CASE("global_max_pool is permutation invariant") {
  Rng rng(4);
  const std::size_t n = 17, c = 5;
  const Tensor x = random_tensor({2, n, c}, rng);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (int trial = 0; trial < 20; ++trial) {
    rng.shuffle(perm);
    Tensor xp({2, n, c});
    for (std::size_t b = 0; b < 2; ++b) {
      for (std::size_t p = 0; p < n; ++p) {
        std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>((b * n + perm[p]) * c), c,
                    xp.data().begin() + static_cast<std::ptrdiff_t>((b * n + p) * c));
      }
    }
    CHECK(global_max_pool(xp).values == global_max_pool(x).values);
  }
}

TEST_CASE("softmax cross-entropy examples") {
  const std::vector<int> label0{0};
  const std::vector<int> label1{1};
  CHECK(softmax_cross_entropy(Tensor({1, 4}, 0.3f), label0).loss == doctest::Approx(std::log(4.0)).epsilon(1e-9));
  CHECK(softmax_cross_entropy(Tensor::of({1, 2}, {20, -20}), label0).loss < 1e-15);
  CHECK(softmax_cross_entropy(Tensor::of({1, 2}, {1, 2}), label1).loss ==
        doctest::Approx(std::log1p(std::exp(-1.0))).epsilon(1e-9));
  CHECK_THROWS_AS(softmax_cross_entropy(Tensor({1, 2}), std::vector<int>{2}), LabelError);
  CHECK_THROWS_AS(softmax_cross_entropy(Tensor({1, 2}), std::vector<int>{-1}), LabelError);
  CHECK_THROWS_AS(softmax_cross_entropy(Tensor({2, 2}), label0), DimensionError);
}

TEST_CASE("softmax cross-entropy gradient matches finite differences") {
  Rng rng(5);
  const std::size_t b = 3, k = 5;
  const Tensor logits = random_tensor({b, k}, rng, -3, 3);
  const std::vector<int> labels{0, 3, 4};
  auto loss = [&](const std::vector<double>& z) {
    double total = 0.0;
    for (std::size_t r = 0; r < b; ++r) {
      double peak = -1e300;
      for (std::size_t j = 0; j < k; ++j) peak = std::max(peak, z[r * k + j]);
      double denom = 0.0;
      for (std::size_t j = 0; j < k; ++j) denom += std::exp(z[r * k + j] - peak);
      total += std::log(denom) + peak - z[r * k + static_cast<std::size_t>(labels[r])];
    }
    return total / static_cast<double>(b);
  };
  const auto ce = softmax_cross_entropy(logits, labels);
  CHECK(ce.loss == doctest::Approx(loss(to_double(logits))).epsilon(1e-12));
  CHECK(relative_error(to_double(ce.dlogits), numeric_gradient(loss, to_double(logits))) <= 1e-4);
}

TEST_CASE("rng is deterministic and forks are independent") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c(42);
  Rng f1 = c.fork(1);
  Rng d(42);
  Rng f2 = d.fork(2);
  CHECK(f1.next_u64() != f2.next_u64());

  Rng r(9);
  double lo = 1, hi = 0;
  std::vector<int> hist(7, 0);
  for (int i = 0; i < 70000; ++i) {
    const double u = r.uniform();
    lo = std::min(lo, u);
    hi = std::max(hi, u);
    ++hist[r.below(7)];
  }
  CHECK(lo >= 0.0);
  CHECK(hi < 1.0);
  for (int h : hist) CHECK(std::abs(h - 10000) < 500);

  double sum = 0, sq = 0;
  for (int i = 0; i < 100000; ++i) {
    const double z = r.normal();
    sum += z;
    sq += z * z;
  }
  CHECK(std::abs(sum / 1e5) < 0.02);
  CHECK(std::abs(sq / 1e5 - 1.0) < 0.02);

  Rng t1(11), t2(11);
  CHECK(random_tensor({4, 4}, t1) == random_tensor({4, 4}, t2));
}

TEST_CASE("rms") {
  CHECK(rms(std::vector<float>{}) == 0.0);
  CHECK(rms(std::vector<float>{3, 4}) == doctest::Approx(std::sqrt(12.5)));
}
