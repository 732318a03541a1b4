#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "pdv/error.hpp"
#include "pdv/tuner.hpp"
#include "support/fixtures.hpp"

using namespace pdv;
using pdv::test::Rng;

namespace {

double grid_argmin(const std::function<double(double)>& f, double lo, double hi, double step) {
  double best_x = lo;
  double best_f = f(lo);
  for (double x = lo; x <= hi; x += step) {
    if (f(x) < best_f) {
      best_f = f(x);
      best_x = x;
    }
  }
  return best_x;
}

double loss_at(const PreparedQuery& p, double alpha_t, double alpha_i) {
  const RawVector text = compose_text(p.ref_text(), p.pdv(), alpha_t);
  const RawVector image = compose_image(p.ref_image(), p.pdv(), alpha_i);
  double acc = 0.0;
  for (std::size_t i = 0; i < text.size(); ++i) acc += (text[i] - image[i]) * (text[i] - image[i]);
  return std::sqrt(acc);
}

}  // namespace

TEST_CASE("nelder-mead examples") {
  SUBCASE("shifted quadratic") {
    const auto m = nelder_mead_scalar([](double x) { return (x - 3.0) * (x - 3.0); }, 0.0, 1.0, 1e-6, 200);
    CHECK(m.x == doctest::Approx(3.0).epsilon(1e-4));
    CHECK(m.converged);
  }
  SUBCASE("absolute value against grid search") {
    auto f = [](double x) { return std::abs(x); };
    const auto m = nelder_mead_scalar(f, 5.0, 0.5, 1e-6, 200);
    CHECK(std::abs(m.x - grid_argmin(f, -10.0, 10.0, 1e-3)) <= 1e-3);
  }
  SUBCASE("iteration cap") {
    const auto m = nelder_mead_scalar([](double x) { return x * x; }, 2.0, 0.5, 1e-6, 0);
    CHECK(m.x == 2.0);
    CHECK(m.fx == 4.0);
    CHECK_FALSE(m.converged);
    CHECK(m.iterations == 0);
  }
  SUBCASE("minimum below the start") {
    const auto m = nelder_mead_scalar([](double x) { return (x + 40.0) * (x + 40.0); }, 1.0, 0.5, 1e-6, 200);
    CHECK(m.x == doctest::Approx(-40.0).epsilon(1e-6));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(nelder_mead_scalar([](double) { return std::nan(""); }, 0.0, 1.0, 1e-6, 10), Error);
    try {
      nelder_mead_scalar([](double x) { return x > 1.2 ? std::numeric_limits<double>::infinity() : -x; },
                         0.0, 1.0, 1e-6, 10);
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::non_finite_objective);
    }
    CHECK_THROWS_AS(nelder_mead_scalar([](double x) { return x; }, 0.0, 0.0, 1e-6, 10), Error);
    CHECK_THROWS_AS(nelder_mead_scalar([](double x) { return x; }, 0.0, 1.0, -1.0, 10), Error);
  }
}

TEST_CASE("tune_alpha_i examples") {
  Rng rng(61);
  SUBCASE("image equals text gives one") {
    QueryBundle b = test::random_bundle(rng, 16);
    b.ref_image = b.ref_text;
    const TuneResult r = tune_alpha_i(b, 1.0);
    CHECK(r.alpha_i == doctest::Approx(1.0).epsilon(1e-4));
    CHECK(r.loss <= 1e-6);
  }
  SUBCASE("planted offset gives one minus c") {
    std::uniform_real_distribution<double> uc(-2.0, 2.0);
    for (int t = 0; t < 200; ++t) {
      const QueryBundle b = test::random_bundle(rng, 16);
      const PreparedQuery p(b);
      const double c = uc(rng);
      const RawVector image = compose_image(p.ref_text(), p.pdv(), c);
      std::vector<float> fi(image.begin(), image.end());
      const TuneResult r = tune_alpha_i_toward(compose_text(p.ref_text(), p.pdv(), 1.0),
                                               Embedding(fi), p.pdv());
      CHECK(std::abs(r.alpha_i - (1.0 - c)) <= 1e-4);
    }
  }
  SUBCASE("zero residual") {
    QueryBundle b = test::random_bundle(rng, 16);
    b.composed_text = b.ref_text;
    const TuneResult r = tune_alpha_i(b, 2.0);
    CHECK(r.alpha_i == 1.0);
    CHECK(r.converged);
    CHECK(r.iterations == 0);
    const PreparedQuery p(b);
    CHECK(r.loss == doctest::Approx(loss_at(p, 2.0, 1.0)));
  }
  SUBCASE("non-finite alpha_t") {
    const QueryBundle b = test::random_bundle(rng, 4);
    CHECK_THROWS_AS(tune_alpha_i(b, std::nan("")), Error);
  }
}

TEST_CASE("tuner matches closed form on random quadratics") {
  Rng rng(62);
  std::uniform_real_distribution<double> ua(-0.5, 3.0);
  for (int seed = 0; seed < 1000; ++seed) {
    const QueryBundle b = test::random_bundle(rng, 16);
    const PreparedQuery p(b);
    const double alpha_t = ua(rng);
    const TuneResult r = tune_alpha_i(p, alpha_t);
    const RawVector text = compose_text(p.ref_text(), p.pdv(), alpha_t);
    const double expected = test::oracle::closed_form_alpha(text, p.ref_image(), p.pdv());
    CHECK(std::abs(r.alpha_i - expected) <= 1e-4);
    CHECK(r.converged);
    CHECK(r.loss <= loss_at(p, alpha_t, 1.0) + 1e-9);
    CHECK(r.loss == doctest::Approx(loss_at(p, alpha_t, r.alpha_i)));
    CHECK(r.loss >= 0.0);
  }
}

TEST_CASE("re-parameterization consistency") {
  Rng rng(63);
  std::uniform_real_distribution<double> uc(0.2, 5.0);
  for (int t = 0; t < 200; ++t) {
    const QueryBundle b = test::random_bundle(rng, 12);
    const PreparedQuery p(b);
    const RawVector text = compose_text(p.ref_text(), p.pdv(), 1.3);
    const double c = uc(rng);
    RawVector scaled = p.pdv();
    for (auto& v : scaled) v *= c;
    const TuneResult r1 = tune_alpha_i_toward(text, p.ref_image(), p.pdv());
    const TuneResult r2 = tune_alpha_i_toward(text, p.ref_image(), scaled);
    CHECK(std::abs(r2.alpha_i - r1.alpha_i / c) <= 1e-3);
    CHECK(r2.loss == doctest::Approx(r1.loss).epsilon(1e-6));
  }
}

TEST_CASE("dataset tuning") {
  Rng rng(64);
  std::vector<QueryBundle> bundles;
  for (int i = 0; i < 6; ++i) {
    QueryBundle b = test::random_bundle(rng, 8, "q" + std::to_string(i));
    b.group = i < 2 ? "shirt" : "dress";
    bundles.push_back(b);
  }
  const DatasetTuning d = tune_dataset(bundles, 1.0);
  REQUIRE(d.per_query.size() == 6);
  double sum = 0.0;
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(d.per_query[i].first == bundles[i].query_id);
    CHECK(d.per_query[i].second.alpha_i == tune_alpha_i(bundles[i], 1.0).alpha_i);
    sum += d.per_query[i].second.alpha_i;
  }
  CHECK(d.mean_alpha_i == doctest::Approx(sum / 6.0));
  REQUIRE(d.per_group.size() == 2);
  CHECK(d.per_group[0].group == "shirt");
  CHECK(d.per_group[0].num_queries == 2);
  CHECK(d.per_group[0].mean_alpha_i ==
        doctest::Approx((d.per_query[0].second.alpha_i + d.per_query[1].second.alpha_i) / 2.0));
  CHECK_THROWS_AS(tune_dataset(std::span<const QueryBundle>(), 1.0), Error);
}
