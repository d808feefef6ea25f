#include "doctest.h"
#include "oracles.hpp"

#include "frepa/losses.hpp"

#include <numbers>

using namespace frepa;

namespace {

// Worst relative error between the analytic gradient and central differences
// of `value` over every coordinate of `x`.
double fd_error(TensorD& x, const TensorD& analytic, const std::function<double()>& value) {
  Eigen::ArrayXd numeric(x.size());
  for (Index i = 0; i < x.size(); ++i) numeric[i] = oracle::central_difference(x.data(), i, 1e-6, value);
  return oracle::max_rel_error(numeric, analytic.data(), 1e-7);
}

PatchMask checker_mask(Index grid, Index patch) {
  PatchMask m;
  m.grid = {grid, grid};
  m.patch = patch;
  for (Index q = 0; q < grid * grid; ++q) m.masked.push_back(static_cast<std::uint8_t>((q / grid + q % grid) % 2));
  return m;
}

}  // namespace

TEST_CASE("loss gradients agree with central differences") {
  const auto bank = make_hfl_bank({12, 12});
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    TensorD pred = oracle::random_image<double>({2, 12, 12}, seed);
    const TensorD target = oracle::random_image<double>({2, 12, 12}, seed + 100);
    const PatchMask mask = checker_mask(3, 4);

    CHECK(fd_error(pred, loss_rmse(pred, target).grad, [&] { return loss_rmse(pred, target).value; }) < 1e-4);
    CHECK(fd_error(pred, loss_rmse(pred, target, &mask).grad,
                   [&] { return loss_rmse(pred, target, &mask).value; }) < 1e-4);
    CHECK(fd_error(pred, loss_grad(pred, target).grad, [&] { return loss_grad(pred, target).value; }) < 1e-4);
    CHECK(fd_error(pred, loss_hfl(pred, target, bank).grad, [&] { return loss_hfl(pred, target, bank).value; }) <
          1e-4);
  }
}

TEST_CASE("consistency gradients agree with central differences") {
  TensorD e1 = oracle::random_image<double>({6, 3, 3}, 1, -2.0, 2.0);
  TensorD e2 = oracle::random_image<double>({6, 3, 3}, 2, -2.0, 2.0);
  const PairLoss<double> c = loss_consistency(e1, e2);
  CHECK(fd_error(e1, c.grad1, [&] { return loss_consistency(e1, e2).value; }) < 1e-4);
  CHECK(fd_error(e2, c.grad2, [&] { return loss_consistency(e1, e2).value; }) < 1e-4);
}

TEST_CASE("losses vanish with zero gradient at equality") {
  const TensorD x = oracle::random_image<double>({1, 16, 16}, 4);
  const auto bank = make_hfl_bank({16, 16});
  for (const LossTerm<double>& t : {loss_rmse(x, x), loss_grad(x, x), loss_hfl(x, x, bank)}) {
    CHECK(t.value == 0.0);
    CHECK(t.grad.data().abs().maxCoeff() == 0.0);
  }
  const PairLoss<double> c = loss_consistency(x, x);
  CHECK(c.value == 0.0);
  CHECK(c.grad1.data().abs().maxCoeff() == 0.0);
}

TEST_CASE("constant residual") {
  const TensorD target = oracle::random_image<double>({3, 16, 16}, 5);
  TensorD pred = target;
  pred.data() += 0.1;
  CHECK(loss_rmse(pred, target).value == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(loss_grad(pred, target).value < 1e-9);
  CHECK(loss_hfl(pred, target, make_hfl_bank({16, 16})).value < 1e-9);
}

TEST_CASE("gradient and hierarchical losses ignore a global offset") {
  const TensorD pred = oracle::random_image<double>({1, 16, 16}, 6);
  const TensorD target = oracle::random_image<double>({1, 16, 16}, 7);
  TensorD shifted = pred;
  shifted.data() += 0.3;
  const auto bank = make_hfl_bank({16, 16});
  CHECK(loss_grad(shifted, target).value == doctest::Approx(loss_grad(pred, target).value).epsilon(1e-12));
  CHECK(loss_hfl(shifted, target, bank).value == doctest::Approx(loss_hfl(pred, target, bank).value).epsilon(1e-9));
}

TEST_CASE("Jensen-Shannon consistency") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const TensorD a = oracle::random_image<double>({8, 4, 4}, seed, -5.0, 5.0);
    const TensorD b = oracle::random_image<double>({8, 4, 4}, seed + 50, -5.0, 5.0);
    const double ab = loss_consistency(a, b).value, ba = loss_consistency(b, a).value;
    CHECK(ab == doctest::Approx(ba).epsilon(1e-12));
    CHECK(ab >= 0.0);
    CHECK(ab <= std::numbers::ln2);
  }
  TensorD a({2, 2, 2}), b({2, 2, 2});
  a.channel(0).setConstant(100.0);
  b.channel(1).setConstant(100.0);
  CHECK(loss_consistency(a, b).value == doctest::Approx(std::numbers::ln2).epsilon(1e-9));
  CHECK_THROWS_AS(loss_consistency(a, TensorD({2, 4, 4})), Error);
}

TEST_CASE("masked RMSE only sees masked patches") {
  const PatchMask mask = checker_mask(4, 4);
  const TensorD target = oracle::random_image<double>({2, 16, 16}, 8);
  TensorD pred = oracle::random_image<double>({2, 16, 16}, 9);
  const double before = loss_rmse(pred, target, &mask).value;
  const auto px = mask.pixel_mask({16, 16});
  for (Index i = 0; i < pred.size(); ++i)
    if (!px[static_cast<std::size_t>(i % 256)]) pred.data()[i] += 5.0;
  CHECK(loss_rmse(pred, target, &mask).value == before);
  const LossTerm<double> t = loss_rmse(pred, target, &mask);
  for (Index i = 0; i < pred.size(); ++i)
    if (!px[static_cast<std::size_t>(i % 256)]) REQUIRE(t.grad.data()[i] == 0.0);

  PatchMask none = mask;
  std::fill(none.masked.begin(), none.masked.end(), 0);
  CHECK_THROWS_WITH_AS(loss_rmse(pred, target, &none), doctest::Contains("no masked pixels"), Error);
}

TEST_CASE("total loss is the weighted sum of its terms") {
  const TensorD pred = oracle::random_image<double>({1, 16, 16}, 10);
  const TensorD target = oracle::random_image<double>({1, 16, 16}, 11);
  const TensorD e1 = oracle::random_image<double>({4, 2, 2}, 12);
  const TensorD e2 = oracle::random_image<double>({4, 2, 2}, 13);
  const auto bank = make_hfl_bank({16, 16});
  const LossWeights w{0.7, 1.3, 0.4};
  const LossBundle<double> b = loss_total(pred, target, nullptr, &e1, &e2, w, bank);
  const double expect = loss_rmse(pred, target).value + 0.7 * loss_grad(pred, target).value +
                        1.3 * loss_hfl(pred, target, bank).value + 0.4 * loss_consistency(e1, e2).value;
  CHECK(b.total == doctest::Approx(expect).epsilon(1e-12));

  TensorD d = loss_rmse(pred, target).grad;
  d.data() += 0.7 * loss_grad(pred, target).grad.data() + 1.3 * loss_hfl(pred, target, bank).grad.data();
  CHECK(max_abs_diff(b.d_pred, d) < 1e-15);
  CHECK(max_abs_diff(b.d_embed1, TensorD(e1.shape(), 0.4 * loss_consistency(e1, e2).grad1.data())) < 1e-15);

  const LossBundle<double> single = loss_total<double>(pred, target, nullptr, nullptr, nullptr, w, bank);
  CHECK(single.consistency == 0.0);
  CHECK(single.d_embed1.empty());

  CHECK_THROWS_AS(loss_hfl(pred, target, std::vector<FilterSpec>(bank.begin(), bank.begin() + 4)), Error);
  CHECK_THROWS_AS(loss_rmse(pred, TensorD({1, 8, 8})), Error);
}

TEST_CASE("single precision losses track double precision") {
  const TensorD pred = oracle::random_image<double>({1, 16, 16}, 14);
  const TensorD target = oracle::random_image<double>({1, 16, 16}, 15);
  const auto bank = make_hfl_bank({16, 16});
  const auto d = loss_total<double>(pred, target, nullptr, nullptr, nullptr, LossWeights{}, bank);
  const auto f = loss_total<float>(pred.cast<float>(), target.cast<float>(), nullptr, nullptr, nullptr, LossWeights{}, bank);
  CHECK(f.total == doctest::Approx(d.total).epsilon(1e-6));
  CHECK(max_abs_diff(f.d_pred.cast<double>(), d.d_pred) < 1e-6);
}
