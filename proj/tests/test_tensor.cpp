#include <doctest.h>

#include <cmath>
#include <sstream>

#include "mlec/rng.hpp"
#include "mlec/tensor.hpp"

using namespace mlec;

namespace {

Tensor randn(Shape shape, std::uint64_t seed, bool grad = true) {
  Rng rng(seed);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.normal();
  return Tensor::from_vector(std::move(shape), std::move(v), grad);
}

Tensor positive(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(0.5, 2.0);
  return Tensor::from_vector(std::move(shape), std::move(v), true);
}

// Weighted sum with fixed random weights, so every output coordinate matters.
Tensor probe(const Tensor& y, std::uint64_t seed = 99) { return sum_all(mul(y, randn(y.shape(), seed, false))); }

void check_values(const Tensor& t, const std::vector<double>& want) {
  REQUIRE(t.numel() == want.size());
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(t.data()[i] == doctest::Approx(want[i]).epsilon(1e-12));
}

}  // namespace

TEST_CASE("construction and shape errors") {
  CHECK(Tensor::zeros({2, 3}).numel() == 6);
  CHECK(Tensor::scalar(4).item() == 4);
  CHECK_THROWS_AS(Tensor::from_vector({2, 2}, {1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(add(Tensor::zeros({2}), Tensor::zeros({3})), ShapeError);
  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
  CHECK_THROWS(sum(Tensor::zeros({2, 3}), 2));
  CHECK_THROWS_AS(log(Tensor::from_vector({2}, {1.0, 0.0})), std::domain_error);
  CHECK_THROWS_AS(backward(Tensor::zeros({2}, true)), ShapeError);
}

TEST_CASE("matmul") {
  const auto x = randn({2, 2}, 1, false);
  const auto eye = Tensor::from_vector({2, 2}, {1, 0, 0, 1});
  check_values(matmul(eye, x), x.to_vector());
  check_values(matmul(Tensor::from_vector({2, 2}, {1, 2, 3, 4}), Tensor::from_vector({2, 1}, {1, 1})), {3, 7});
  const auto a = randn({3, 4}, 2);
  const auto b = randn({4, 2}, 3);
  CHECK(gradient_check([&] { return probe(matmul(a, b)); }, {a, b}) < 1e-6);
  const auto ba = randn({2, 3, 4}, 4);
  const auto bb = randn({2, 4, 5}, 5);
  CHECK(gradient_check([&] { return probe(bmm(ba, bb)); }, {ba, bb}) < 1e-6);
  CHECK(gradient_check([](const Tensor& t) { return probe(transpose(t)); }, randn({3, 4}, 6)) < 1e-6);

  SUBCASE("larger products agree with the naive loop") {
    const auto p = randn({37, 23}, 7, false);
    const auto q = randn({23, 19}, 8, false);
    const auto r = matmul(p, q);
    double worst = 0;
    for (std::size_t i = 0; i < 37; ++i) {
      for (std::size_t j = 0; j < 19; ++j) {
        double s = 0;
        for (std::size_t k = 0; k < 23; ++k) s += p.at({i, k}) * q.at({k, j});
        worst = std::max(worst, std::abs(s - r.at({i, j})));
      }
    }
    CHECK(worst == 0.0);
  }
}

TEST_CASE("elementwise values") {
  CHECK(sigmoid(Tensor::scalar(0)).item() == 0.5);
  CHECK(tanh(Tensor::scalar(0)).item() == 0.0);
  CHECK(std::abs(tanh(Tensor::scalar(40)).item() - 1.0) < 1e-12);
  CHECK(sigmoid(Tensor::scalar(-800)).item() >= 0.0);
  CHECK(std::isfinite(sigmoid(Tensor::scalar(-800)).item()));
  check_values(relu(Tensor::from_vector({3}, {-1, 0, 2})), {0, 0, 2});
  check_values(add(Tensor::from_vector({2}, {1, 2}), Tensor::scalar(3)), {4, 5});
  check_values(scale(Tensor::from_vector({2}, {1, 2}), -2), {-2, -4});
}

TEST_CASE("elementwise gradients") {
  const auto a = randn({3, 4}, 10);
  const auto b = randn({3, 4}, 11);
  const auto s = randn({}, 12);
  CHECK(gradient_check([&] { return probe(add(a, b)); }, {a, b}) < 1e-6);
  CHECK(gradient_check([&] { return probe(sub(a, b)); }, {a, b}) < 1e-6);
  CHECK(gradient_check([&] { return probe(mul(a, b)); }, {a, b}) < 1e-6);
  CHECK(gradient_check([&] { return probe(mul(a, s)); }, {a, s}) < 1e-6);
  CHECK(gradient_check([&] { return probe(add(s, b)); }, {s, b}) < 1e-6);
  CHECK(gradient_check([](const Tensor& x) { return probe(sigmoid(x)); }, a) < 1e-6);
  CHECK(gradient_check([](const Tensor& x) { return probe(tanh(x)); }, a) < 1e-6);
  CHECK(gradient_check([](const Tensor& x) { return probe(exp(x)); }, a) < 1e-6);
  CHECK(gradient_check([](const Tensor& x) { return probe(log(x)); }, positive({3, 4}, 13)) < 1e-6);
  CHECK(gradient_check([](const Tensor& x) { return probe(scale(add_scalar(x, 2), 3)); }, a) < 1e-6);
  // Keep relu inputs away from the kink.
  CHECK(gradient_check([](const Tensor& x) { return probe(relu(add_scalar(x, -1.25))); }, positive({3, 4}, 14)) <
        1e-6);
  const auto bias = randn({4}, 15);
  CHECK(gradient_check([&] { return probe(add_rowwise(randn({2, 3, 4}, 16, false), bias)); }, {bias}) < 1e-6);
}

TEST_CASE("reductions") {
  const auto v = Tensor::from_vector({3}, {1, 2, 3}, true);
  CHECK(mean(v, 0).item() == 2.0);
  backward(sum(v, 0));
  check_values(Tensor::from_vector({3}, std::vector<double>(v.grad().begin(), v.grad().end())), {1, 1, 1});

  SUBCASE("max routes to the first maximum") {
    const auto t = Tensor::from_vector({2, 3}, {1, 5, 5, 2, 0, 2}, true);
    const auto m = max(t, 1);
    check_values(m, {5, 2});
    backward(sum_all(m));
    const std::vector<double> g(t.grad().begin(), t.grad().end());
    CHECK(g == std::vector<double>{0, 1, 0, 1, 0, 0});
  }
  const auto x = randn({2, 3, 4}, 20);
  for (std::size_t axis = 0; axis < 3; ++axis) {
    CHECK(gradient_check([axis](const Tensor& t) { return probe(sum(t, axis)); }, x) < 1e-6);
    CHECK(gradient_check([axis](const Tensor& t) { return probe(mean(t, axis)); }, x) < 1e-6);
    CHECK(gradient_check([axis](const Tensor& t) { return probe(max(t, axis)); }, x) < 1e-6);
  }
  CHECK(gradient_check([](const Tensor& t) { return mean_all(mul(t, t)); }, x) < 1e-6);

  SUBCASE("masked mean") {
    const auto mask = Tensor::from_vector({2, 3}, {1, 1, 0, 1, 0, 0});
    const auto mm = masked_mean(x, mask);
    REQUIRE(mm.shape() == Shape{2, 4});
    for (std::size_t h = 0; h < 4; ++h) {
      CHECK(mm.at({0, h}) == doctest::Approx((x.at({0, 0, h}) + x.at({0, 1, h})) / 2).epsilon(1e-12));
      CHECK(mm.at({1, h}) == x.at({1, 0, h}));
    }
    CHECK(gradient_check([&](const Tensor& t) { return probe(masked_mean(t, mask)); }, x) < 1e-6);
  }
}

TEST_CASE("softmax") {
  check_values(softmax(Tensor::zeros({4}), 0), {0.25, 0.25, 0.25, 0.25});
  const auto masked = softmax(Tensor::from_vector({2}, {3, 3}), 0, Tensor::from_vector({2}, {1, 0}));
  CHECK(masked.data()[0] == 1.0);
  CHECK(masked.data()[1] == 0.0);
  CHECK_THROWS(softmax(Tensor::zeros({2, 2}), 1, Tensor::from_vector({2, 2}, {1, 1, 0, 0})));
  const auto big = softmax(Tensor::from_vector({3}, {1000, 1001, 999}), 0);
  double total = 0;
  for (double p : big.data()) total += p;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-14));
  const auto x = randn({2, 5}, 30);
  CHECK(gradient_check([](const Tensor& t) { return probe(softmax(t, 1)); }, x) < 1e-6);
  CHECK(gradient_check([](const Tensor& t) { return probe(softmax(t, 0)); }, x) < 1e-6);
  const auto m = Tensor::from_vector({2, 5}, {1, 1, 1, 0, 0, 1, 0, 0, 0, 0});
  CHECK(gradient_check([&](const Tensor& t) { return probe(softmax(t, 1, m)); }, x) < 1e-6);
}

TEST_CASE("dropout") {
  Rng rng(5);
  const auto x = randn({50}, 40, false);
  CHECK(dropout(x, 0.0, true, rng).to_vector() == x.to_vector());
  CHECK(dropout(x, 0.7, false, rng).to_vector() == x.to_vector());
  CHECK_THROWS(dropout(x, 1.0, true, rng));
  CHECK_THROWS(dropout(x, -0.1, true, rng));

  const auto ones = Tensor::full({100000}, 1.0);
  const auto y = dropout(ones, 0.5, true, rng);
  std::size_t survivors = 0;
  double total = 0;
  bool two_valued = true;
  for (double v : y.data()) {
    survivors += v != 0.0;
    total += v;
    two_valued = two_valued && (v == 0.0 || v == 2.0);
  }
  CHECK(two_valued);
  CHECK(std::abs(static_cast<double>(survivors) / 1e5 - 0.5) <= 0.01);
  CHECK(std::abs(total / 1e5 - 1.0) <= 0.02);
}

TEST_CASE("shape manipulation") {
  check_values(concat({Tensor::from_vector({2}, {1, 2}), Tensor::from_vector({1}, {3})}, 0), {1, 2, 3});
  CHECK(concat({Tensor::zeros({3, 4}), Tensor::zeros({3, 4})}, 1).shape() == Shape{3, 8});
  CHECK_THROWS_AS(concat({Tensor::zeros({3, 4}), Tensor::zeros({2, 4})}, 1), ShapeError);
  const auto a = randn({2, 3}, 50);
  const auto b = randn({2, 2}, 51);
  CHECK(gradient_check([&] { return probe(concat({a, b}, 1)); }, {a, b}) < 1e-6);
  const auto c = randn({2, 3}, 52);
  CHECK(gradient_check([&] { return probe(stack({a, c}, 1)); }, {a, c}) < 1e-6);
  const auto x = randn({2, 3, 4}, 53);
  CHECK(gradient_check([](const Tensor& t) { return probe(select(t, 1, 2)); }, x) < 1e-6);
  CHECK(gradient_check([](const Tensor& t) { return probe(narrow(t, 2, 1, 2)); }, x) < 1e-6);
  CHECK(gradient_check([](const Tensor& t) { return probe(reshape(t, {6, 4})); }, x) < 1e-6);
  CHECK_THROWS_AS(reshape(x, {5, 5}), ShapeError);
}

TEST_CASE("layer norm, embedding, masked update, attention") {
  const auto x = randn({2, 3, 4}, 60);
  const auto gamma = randn({4}, 61);
  const auto beta = randn({4}, 62);
  CHECK(gradient_check([&] { return probe(layer_norm(x, gamma, beta)); }, {x, gamma, beta}) < 1e-6);

  const auto table = randn({5, 3}, 63);
  const std::vector<std::int32_t> ids{4, 0, 4};
  const auto e = embedding(table, ids);
  CHECK(e.at({0, 1}) == table.at({4, 1}));
  CHECK(gradient_check([&] { return probe(embedding(table, ids)); }, {table}) < 1e-6);

  const auto prev = randn({3, 2}, 64);
  const auto next = randn({3, 2}, 65);
  const auto keep = Tensor::from_vector({3}, {1, 0, 1});
  const auto u = masked_update(prev, next, keep);
  CHECK(u.at({0, 0}) == next.at({0, 0}));
  CHECK(u.at({1, 1}) == prev.at({1, 1}));
  CHECK(gradient_check([&] { return probe(masked_update(prev, next, keep)); }, {prev, next}) < 1e-6);

  const auto q = randn({2, 4, 6}, 66);
  const auto k = randn({2, 4, 6}, 67);
  const auto v = randn({2, 4, 6}, 68);
  const auto mask = Tensor::from_vector({2, 4}, {1, 1, 1, 1, 1, 1, 0, 0});
  CHECK(gradient_check([&] { return probe(multi_head_attention(q, k, v, mask, 2)); }, {q, k, v}) < 1e-6);
}

TEST_CASE("backward semantics") {
  const auto x = randn({4}, 70);
  const auto unused = randn({3}, 71);
  backward(sum_all(x));
  for (double g : x.grad()) CHECK(g == 1.0);
  for (double g : unused.grad()) CHECK(g == 0.0);

  SUBCASE("uses accumulate") {
    const auto y = Tensor::from_vector({2}, {1.5, -2}, true);
    backward(sum_all(add(mul(y, y), y)));
    CHECK(y.grad()[0] == 4.0);
    CHECK(y.grad()[1] == -3.0);
  }
  SUBCASE("inputs are never mutated") {
    const auto a = randn({3, 3}, 72);
    const auto before = a.to_vector();
    backward(probe(softmax(tanh(matmul(a, a)), 1)));
    CHECK(a.to_vector() == before);
  }
  SUBCASE("composite sigmoid(matmul)") {
    const auto w = randn({3, 2}, 73);
    const auto in = randn({4, 3}, 74);
    CHECK(gradient_check([&] { return probe(sigmoid(matmul(in, w))); }, {w, in}) < 1e-6);
  }
}

TEST_CASE("gradient_check utility") {
  const auto x = Tensor::from_vector({2}, {1, 2}, true);
  CHECK(gradient_check([](const Tensor& t) { return sum_all(mul(t, t)); }, x) < 1e-8);
  backward(sum_all(mul(x, x)));
  CHECK(x.grad()[0] == 2.0);
  CHECK(x.grad()[1] == 4.0);
  CHECK(gradient_check([](const Tensor& t) { return sum_all(sigmoid(t)); }, randn({5}, 80)) < 1e-6);
  CHECK(gradient_check([](const Tensor&) { return Tensor::scalar(3.0); }, x) == 0.0);
}

TEST_CASE("tensor serialization") {
  const auto t = randn({2, 3, 2}, 90, false);
  std::stringstream ss;
  write_tensor(ss, t);
  const auto back = read_tensor(ss);
  CHECK(back.shape() == t.shape());
  CHECK(back.to_vector() == t.to_vector());
  std::stringstream bad("XXXX");
  CHECK_THROWS(read_tensor(bad));
  std::string bytes = [&] {
    std::stringstream s;
    write_tensor(s, t);
    return s.str();
  }();
  bytes[4] = 9;  // version field
  std::stringstream bumped(bytes);
  CHECK_THROWS(read_tensor(bumped));
}
