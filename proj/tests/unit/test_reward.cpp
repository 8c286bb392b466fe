#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include <doctest.h>

#include "core/random.hpp"
#include "reward/kernel.hpp"
#include "reward/latent_reward.hpp"
#include "reward/probit.hpp"
#include "reward/reward_model.hpp"
#include "support/oracles.hpp"

using namespace handover;

namespace {

struct Fixture {
  FeedbackDataset data;
  std::vector<oracle::Rating> ratings;
  std::vector<oracle::Pref> prefs;
};

// E points in dim dimensions, spread wide enough that the Gram matrix stays
// well conditioned at unit lengthscale.
Fixture random_fixture(RandomSource& rng, std::size_t e, Eigen::Index dim, std::size_t n_ratings,
                       std::size_t n_prefs) {
  Fixture f;
  for (std::size_t i = 0; i < e; ++i) {
    Eigen::VectorXd p(dim);
    for (Eigen::Index d = 0; d < dim; ++d) p(d) = rng.uniform(-2.0, 2.0);
    f.data.points.push_back(p);
  }
  for (std::size_t m = 0; m < n_ratings; ++m) {
    const auto idx = static_cast<std::size_t>(rng.next_u64() % e);
    const double v = std::round(rng.uniform(1.0, 10.0) * 2.0) / 2.0;
    f.data.ratings.push_back({idx, v});
    f.ratings.push_back({idx, v});
  }
  for (std::size_t m = 0; m < n_prefs; ++m) {
    const auto w = static_cast<std::size_t>(rng.next_u64() % e);
    auto l = static_cast<std::size_t>(rng.next_u64() % e);
    if (l == w) l = (w + 1) % e;
    f.data.comparisons.push_back({w, l});
    f.prefs.push_back({w, l});
  }
  return f;
}

KernelHyper unit_hyper(Eigen::Index dim, double sv = 1.0, double ls = 1.0) {
  return KernelHyper::isotropic(sv, ls, dim);
}

}  // namespace

TEST_SUITE("kernel") {
  TEST_CASE("zero distance gives the signal variance") {
    const Eigen::VectorXd y = Eigen::VectorXd::Constant(8, 0.3);
    CHECK(kernel(y, y, unit_hyper(8)) == doctest::Approx(1.0).epsilon(1e-15));
  }

  TEST_CASE("one lengthscale apart gives exp(-1/2)") {
    KernelHyper h = unit_hyper(8);
    h.lengthscales(4) = 2.5;
    Eigen::VectorXd a = Eigen::VectorXd::Zero(8), b = a;
    b(4) = 2.5;
    CHECK(kernel(a, b, h) == doctest::Approx(std::exp(-0.5)).epsilon(1e-15));
    CHECK(kernel(a, b, h) == doctest::Approx(0.606531).epsilon(1e-6));
  }

  TEST_CASE("symmetric, bounded, and matches the reference form") {
    auto rng = seeded_rng(3);
    KernelHyper h = unit_hyper(8, 2.5);
    for (Eigen::Index d = 0; d < 8; ++d) h.lengthscales(d) = rng.uniform(0.3, 3.0);
    for (int i = 0; i < 200; ++i) {
      Eigen::VectorXd a(8), b(8);
      for (Eigen::Index d = 0; d < 8; ++d) {
        a(d) = rng.uniform(-3, 3);
        b(d) = rng.uniform(-3, 3);
      }
      CHECK(kernel(a, b, h) == kernel(b, a, h));
      CHECK(kernel(a, b, h) <= h.signal_var);
      CHECK(kernel(a, b, h) == doctest::Approx(oracle::se_kernel(a, b, h.signal_var, h.lengthscales)).epsilon(1e-14));
    }
  }

  TEST_CASE("non-positive hyperparameters are rejected") {
    CHECK_THROWS(KernelHyper::isotropic(0.0, 1.0, 8).validate());
    CHECK_THROWS(KernelHyper::isotropic(1.0, -1.0, 8).validate());
    const Eigen::VectorXd a = Eigen::VectorXd::Zero(8);
    KernelHyper bad = unit_hyper(8);
    bad.lengthscales(2) = 0.0;
    CHECK_THROWS(kernel(a, a, bad));
  }
}

TEST_SUITE("probit") {
  TEST_CASE("cdf and log cdf agree with erfc") {
    for (double z : {-8.0, -3.0, -1.0, 0.0, 0.5, 2.0, 6.0}) {
      CHECK(normal_cdf(z) == doctest::Approx(0.5 * std::erfc(-z / std::numbers::sqrt2)).epsilon(1e-12));
      CHECK(log_normal_cdf(z) == doctest::Approx(oracle::log_phi(z)).epsilon(1e-10));
    }
    CHECK(normal_cdf(0.0) == 0.5);
    CHECK(normal_cdf(std::numbers::sqrt2) == doctest::Approx(0.9213503964748574).epsilon(1e-12));
  }

  TEST_CASE("log cdf stays finite deep in the lower tail") {
    for (double z : {-40.0, -200.0, -1e4}) {
      const double v = log_normal_cdf(z);
      CHECK(std::isfinite(v));
      // leading asymptotic term -z^2/2 - log(-z) - log(sqrt(2 pi))
      const double asym = -0.5 * z * z - std::log(-z) - 0.5 * std::log(2 * std::numbers::pi);
      CHECK(v == doctest::Approx(asym).epsilon(1e-3));
      CHECK(std::isfinite(inverse_mills(z)));
      CHECK(inverse_mills(z) == doctest::Approx(-z).epsilon(1e-2));
    }
  }
}

TEST_SUITE("objective") {
  TEST_CASE("prior only: J(r) = r^T K^-1 r and J(0) = 0") {
    auto rng = seeded_rng(4);
    auto f = random_fixture(rng, 5, 3, 0, 0);
    const auto h = unit_hyper(3);
    const GramFactor g(gram_matrix(f.data.points, h), h.signal_var);
    const NoiseTerms noise;
    CHECK(objective_j(Eigen::VectorXd::Zero(5), f.data, g, noise) == 0.0);
    Eigen::VectorXd r(5);
    r << 1, -2, 0.5, 3, 0;
    CHECK(objective_j(r, f.data, g, noise) == doctest::Approx(r.dot(g.matrix().inverse() * r)).epsilon(1e-10));
  }

  TEST_CASE("scalar instance: J(R) = (5 - R)^2 / 2 + R^2") {
    FeedbackDataset d;
    d.points = {Eigen::VectorXd::Zero(1)};
    d.ratings = {{0, 5.0}};
    const GramFactor g(Eigen::MatrixXd::Ones(1, 1), 1.0);
    const NoiseTerms noise{1.0, 1.0};
    for (double r : {-1.0, 0.0, 5.0 / 3.0, 2.0, 7.0}) {
      Eigen::VectorXd v(1);
      v << r;
      const double expected = 0.5 * (5 - r) * (5 - r) + r * r;
      CHECK(objective_j(v, d, g, noise) == doctest::Approx(expected).epsilon(1e-12));
    }
  }

  TEST_CASE("matches a direct evaluation on random mixed datasets") {
    auto rng = seeded_rng(5);
    for (int rep = 0; rep < 10; ++rep) {
      auto f = random_fixture(rng, 5, 4, 3, 4);
      const auto h = unit_hyper(4, 2.0, 1.5);
      const GramFactor g(gram_matrix(f.data.points, h), h.signal_var);
      const NoiseTerms noise{0.7, 0.9};
      Eigen::VectorXd r(5);
      for (int i = 0; i < 5; ++i) r(i) = rng.uniform(-4, 4);
      const double ref = oracle::objective(r, g.matrix(), f.ratings, f.prefs, noise.sigma_p, noise.sigma_r);
      CHECK(objective_j(r, f.data, g, noise) == doctest::Approx(ref).epsilon(1e-12));
    }
  }

  TEST_CASE("analytic gradient and Hessian match finite differences") {
    auto rng = seeded_rng(6);
    auto f = random_fixture(rng, 6, 3, 3, 5);
    const auto h = unit_hyper(3, 1.0, 1.2);
    const GramFactor g(gram_matrix(f.data.points, h), h.signal_var);
    const NoiseTerms noise{0.6, 0.8};
    Eigen::VectorXd r(6);
    for (int i = 0; i < 6; ++i) r(i) = rng.uniform(-3, 3);
    const auto grad = objective_gradient(r, f.data, g, noise);
    const auto hess = objective_hessian(r, f.data, g, noise);
    const double step = 1e-5;
    for (int i = 0; i < 6; ++i) {
      Eigen::VectorXd hi = r, lo = r;
      hi(i) += step;
      lo(i) -= step;
      const double fd = (objective_j(hi, f.data, g, noise) - objective_j(lo, f.data, g, noise)) / (2 * step);
      CHECK(grad(i) == doctest::Approx(fd).epsilon(1e-6));
      const Eigen::VectorXd gfd =
          (objective_gradient(hi, f.data, g, noise) - objective_gradient(lo, f.data, g, noise)) / (2 * step);
      for (int j = 0; j < 6; ++j) CHECK(hess(j, i) == doctest::Approx(gfd(j)).epsilon(1e-5).scale(1.0));
    }
  }
}

TEST_SUITE("map") {
  TEST_CASE("scalar closed form: R = 5/3") {
    FeedbackDataset d;
    d.points = {Eigen::VectorXd::Zero(1)};
    d.ratings = {{0, 5.0}};
    const GramFactor g(Eigen::MatrixXd::Ones(1, 1), 1.0);
    const auto map = map_estimate(d, g, NoiseTerms{1.0, 1.0});
    CHECK(g.jitter() == 0.0);
    CHECK(std::abs(map.rewards(0) - 5.0 / 3.0) <= 1e-9);
    CHECK(map.gradient_norm <= 1e-8);
  }

  TEST_CASE("a single preference splits symmetrically") {
    FeedbackDataset d;
    Eigen::VectorXd a(2), b(2);
    a << 0, 0;
    b << 1, 0.5;
    d.points = {a, b};
    d.comparisons = {{0, 1}};
    const auto map = map_estimate(d, unit_hyper(2), NoiseTerms{});
    CHECK(map.rewards(0) > 0.0);
    CHECK(map.rewards(0) == doctest::Approx(-map.rewards(1)).epsilon(1e-10));
  }

  TEST_CASE("stationary, initialization-independent, and PSD at the optimum") {
    auto rng = seeded_rng(7);
    for (int rep = 0; rep < 5; ++rep) {
      auto f = random_fixture(rng, 8, 3, 4, 6);
      const auto h = unit_hyper(3, 4.0, 1.0);
      const GramFactor g(gram_matrix(f.data.points, h), h.signal_var);
      const NoiseTerms noise{0.8, 0.8};
      const auto base = map_estimate(f.data, g, noise);
      CHECK(base.gradient_norm <= 1e-8);
      CHECK(objective_gradient(base.rewards, f.data, g, noise).lpNorm<Eigen::Infinity>() <= 1e-7);
      for (int s = 0; s < 5; ++s) {
        Eigen::VectorXd init(8);
        for (int i = 0; i < 8; ++i) init(i) = rng.uniform(-10, 10);
        const auto other = map_estimate(f.data, g, noise, init);
        CHECK((other.rewards - base.rewards).lpNorm<Eigen::Infinity>() <= 1e-5);
      }
      const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(objective_hessian(base.rewards, f.data, g, noise));
      CHECK(es.eigenvalues().minCoeff() >= -1e-8);
    }
  }

  TEST_CASE("matches derivative-free minimization on a mixed E=6 dataset") {
    auto rng = seeded_rng(8);
    for (int rep = 0; rep < 3; ++rep) {
      auto f = random_fixture(rng, 6, 2, 3, 4);
      const auto h = unit_hyper(2, 2.0, 1.0);
      const GramFactor g(gram_matrix(f.data.points, h), h.signal_var);
      const NoiseTerms noise{0.8, 0.8};
      const auto map = map_estimate(f.data, g, noise);
      const Eigen::MatrixXd k = g.matrix();
      const auto fn = [&](const Eigen::VectorXd& r) {
        return oracle::objective(r, k, f.ratings, f.prefs, noise.sigma_p, noise.sigma_r);
      };
      const auto brute = oracle::nelder_mead(fn, Eigen::VectorXd::Zero(6), 2.0, 20000, 1e-16);
      CHECK((brute - map.rewards).lpNorm<Eigen::Infinity>() <= 1e-4);
    }
  }

  TEST_CASE("preference-only data matches an independent Newton solve") {
    auto rng = seeded_rng(9);
    auto f = random_fixture(rng, 7, 3, 0, 9);
    const auto h = unit_hyper(3, 3.0, 1.0);
    const GramFactor g(gram_matrix(f.data.points, h), h.signal_var);
    const NoiseTerms noise{0.5, 0.8};
    const auto map = map_estimate(f.data, g, noise);

    // Chu-style preference GP with the unhalved prior, Newton in reward space.
    const Eigen::MatrixXd kinv = g.matrix().inverse();
    const double c = std::numbers::sqrt2 * noise.sigma_p;
    Eigen::VectorXd r = Eigen::VectorXd::Zero(7);
    for (int it = 0; it < 100; ++it) {
      Eigen::VectorXd grad = 2.0 * kinv * r;
      Eigen::MatrixXd hess = 2.0 * kinv;
      for (const auto& p : f.prefs) {
        const double z = (r(p.winner) - r(p.loser)) / c;
        const double lam = normal_pdf(z) / normal_cdf(z);
        const double d2 = lam * (z + lam) / (c * c);
        grad(p.winner) -= lam / c;
        grad(p.loser) += lam / c;
        hess(p.winner, p.winner) += d2;
        hess(p.loser, p.loser) += d2;
        hess(p.winner, p.loser) -= d2;
        hess(p.loser, p.winner) -= d2;
      }
      r -= hess.ldlt().solve(grad);
    }
    CHECK((r - map.rewards).lpNorm<Eigen::Infinity>() <= 1e-8);
  }

  TEST_CASE("strengthening a preference chain widens the gap") {
    FeedbackDataset d;
    for (double x : {0.0, 0.7, 1.4}) d.points.push_back(Eigen::VectorXd::Constant(2, x));
    double prev = -1e9;
    for (int repeats = 1; repeats <= 6; ++repeats) {
      d.comparisons.push_back({0, 1});
      d.comparisons.push_back({1, 2});
      const auto map = map_estimate(d, unit_hyper(2), NoiseTerms{});
      const double gap = map.rewards(0) - map.rewards(2);
      CHECK(gap >= prev - 1e-12);
      prev = gap;
    }
  }

  TEST_CASE("needs at least one feedback event") {
    FeedbackDataset d;
    d.points = {Eigen::VectorXd::Zero(2)};
    CHECK_THROWS_AS(map_estimate(d, unit_hyper(2), NoiseTerms{}), Error);
  }
}

TEST_SUITE("gp regression reduction") {
  TEST_CASE("absolute-only MAP and predictions equal closed-form GP regression") {
    auto rng = seeded_rng(10);
    for (int rep = 0; rep < 10; ++rep) {
      const std::size_t e = 5 + rep;
      auto f = random_fixture(rng, e, 8, e + 3, 0);
      const auto h = unit_hyper(8, 4.0, 1.5);
      const NoiseTerms noise{0.8, 0.8};
      RewardModel model(Standardizer::identity(8), h, noise);
      model.fit(f.data);

      const Eigen::MatrixXd k = oracle::gram(f.data.points, h.signal_var, h.lengthscales);
      const oracle::GpRegression gp{0.5 * k, oracle::selection(e, f.ratings), oracle::rating_values(f.ratings),
                                    noise.sigma_r};
      CHECK((model.map_rewards() - gp.posterior_mean()).lpNorm<Eigen::Infinity>() <= 1e-6);
      for (int q = 0; q < 10; ++q) {
        Eigen::VectorXd y(8);
        for (int d = 0; d < 8; ++d) y(d) = rng.uniform(-2.5, 2.5);
        Eigen::VectorXd ks(static_cast<Eigen::Index>(e));
        for (std::size_t i = 0; i < e; ++i) ks(static_cast<Eigen::Index>(i)) = 0.5 * oracle::se_kernel(f.data.points[i], y, h.signal_var, h.lengthscales);
        CHECK(std::abs(model.predict(y).mean - gp.predict(ks)) <= 1e-6);
      }
    }
  }

  TEST_CASE("Laplace evidence is exact for Gaussian ratings") {
    auto rng = seeded_rng(12);
    for (int rep = 0; rep < 5; ++rep) {
      auto f = random_fixture(rng, 8, 3, 10, 0);
      const auto h = unit_hyper(3, 2.0, 1.0);
      const NoiseTerms noise{0.8, 0.7};
      const Eigen::MatrixXd k = oracle::gram(f.data.points, h.signal_var, h.lengthscales);
      const oracle::GpRegression gp{0.5 * k, oracle::selection(8, f.ratings), oracle::rating_values(f.ratings),
                                    noise.sigma_r};
      CHECK(laplace_evidence(f.data, h, noise) == doctest::Approx(gp.log_marginal()).epsilon(1e-8));
      CHECK(std::abs(laplace_evidence(f.data, h, noise) - gp.log_marginal()) <= 1e-6);
    }
  }

  TEST_CASE("evidence drops when the rating noise is set far too small") {
    auto rng = seeded_rng(13);
    FeedbackDataset d;
    for (int i = 0; i < 15; ++i) {
      Eigen::VectorXd p(1);
      p << 0.3 * i;
      d.points.push_back(p);
      d.ratings.push_back({static_cast<std::size_t>(i), 5.0 + 2.0 * std::sin(p(0)) + 0.5 * rng.normal()});
    }
    const auto h = unit_hyper(1, 8.0, 1.5);
    CHECK(laplace_evidence(d, h, NoiseTerms{0.8, 0.05}) < laplace_evidence(d, h, NoiseTerms{0.8, 0.5}));
  }

  TEST_CASE("empty dataset has zero evidence") {
    CHECK(laplace_evidence(FeedbackDataset{}, unit_hyper(2), NoiseTerms{}) == 0.0);
  }

  TEST_CASE("near-noiseless interpolation reproduces the rating") {
    FeedbackDataset d;
    Eigen::VectorXd a(2), b(2);
    a << 0, 0;
    b << 2, 1;
    d.points = {a, b};
    d.ratings = {{0, 7.0}, {1, 3.0}};
    RewardModel model(Standardizer::identity(2), unit_hyper(2, 16.0), NoiseTerms{0.8, 1e-3});
    model.fit(d);
    CHECK(std::abs(model.predict(a).mean - 7.0) <= 0.01);
    CHECK(std::abs(model.predict(b).mean - 3.0) <= 0.01);
  }
}

TEST_SUITE("reward model") {
  TEST_CASE("unfitted model refuses to predict; empty fit predicts the prior") {
    RewardModel model(Standardizer::identity(2), unit_hyper(2, 3.0), NoiseTerms{});
    CHECK_THROWS_AS(model.predict(Eigen::VectorXd::Zero(2)), Error);
    model.fit(FeedbackDataset{});
    const auto p = model.predict(Eigen::VectorXd::Ones(2));
    CHECK(p.mean == 0.0);
    CHECK(p.variance == 3.0);
  }

  TEST_CASE("predictions are linear in the ratings") {
    auto rng = seeded_rng(14);
    auto f = random_fixture(rng, 6, 3, 6, 0);
    auto g = f;
    for (auto& r : g.data.ratings) r.value = rng.uniform(1, 10);
    auto sum = f;
    for (std::size_t m = 0; m < sum.data.ratings.size(); ++m) {
      sum.data.ratings[m].value = 2.0 * f.data.ratings[m].value - 0.5 * g.data.ratings[m].value;
    }
    const auto h = unit_hyper(3);
    auto fit = [&](const FeedbackDataset& d) {
      RewardModel m(Standardizer::identity(3), h, NoiseTerms{});
      m.fit(d);
      return m;
    };
    const auto mf = fit(f.data), mg = fit(g.data), ms = fit(sum.data);
    for (int q = 0; q < 5; ++q) {
      Eigen::VectorXd y(3);
      for (int d = 0; d < 3; ++d) y(d) = rng.uniform(-2, 2);
      CHECK(ms.predict(y).mean == doctest::Approx(2.0 * mf.predict(y).mean - 0.5 * mg.predict(y).mean).epsilon(1e-8));
    }
  }

  TEST_CASE("prediction variance is non-negative and vanishes at training points") {
    auto rng = seeded_rng(15);
    auto f = random_fixture(rng, 6, 3, 6, 2);
    RewardModel m(Standardizer::identity(3), unit_hyper(3, 2.0), NoiseTerms{});
    m.fit(f.data);
    for (const auto& p : f.data.points) CHECK(m.predict(p).variance <= 1e-6);
    for (int q = 0; q < 50; ++q) {
      Eigen::VectorXd y(3);
      for (int d = 0; d < 3; ++d) y(d) = rng.uniform(-4, 4);
      CHECK(m.predict(y).variance >= 0.0);
    }
  }

  TEST_CASE("standardizer maps bounds to a unit-variance box") {
    const auto s = Standardizer::from_bounds(ContextBounds{}, ParamBounds{});
    REQUIRE(s.dim() == 8);
    Eigen::VectorXd mid(8), hi(8);
    mid << 0.55, 5, 500, 500, 500, 2.5, 275, 750;
    hi << 1.0, 10, 1000, 1000, 1000, 5, 500, 1200;
    CHECK(s.apply(mid).norm() <= 1e-12);
    for (int d = 0; d < 8; ++d) CHECK(s.apply(hi)(d) == doctest::Approx(std::sqrt(3.0)).epsilon(1e-12));
  }

  TEST_CASE("snapshot round-trips exactly") {
    auto rng = seeded_rng(16);
    auto f = random_fixture(rng, 7, 8, 5, 4);
    RewardModel m(Standardizer::from_bounds(ContextBounds{}, ParamBounds{}), unit_hyper(8, 4.0, 2.0), NoiseTerms{});
    m.fit(f.data);
    const auto back = RewardModel::from_snapshot(m.snapshot());
    CHECK(back.snapshot() == m.snapshot());
    for (const auto& p : f.data.points) CHECK(back.predict(p).mean == doctest::Approx(m.predict(p).mean).epsilon(1e-12));
    CHECK_THROWS(RewardModel::from_snapshot("not a snapshot"));
  }

  TEST_CASE("refit with no new feedback is stable") {
    auto rng = seeded_rng(17);
    auto f = random_fixture(rng, 9, 8, 4, 6);
    RewardModel m(Standardizer::identity(8), unit_hyper(8, 4.0, 2.0), NoiseTerms{});
    m.fit(f.data);
    const Eigen::VectorXd first = m.map_rewards();
    m.fit(f.data, first);
    CHECK((m.map_rewards() - first).lpNorm<Eigen::Infinity>() <= 1e-10);
  }
}

TEST_SUITE("hyperparameter selection") {
  TEST_CASE("single candidate is returned") {
    auto rng = seeded_rng(18);
    auto f = random_fixture(rng, 6, 2, 4, 2);
    const HyperCandidate c{unit_hyper(2, 2.0, 0.7), NoiseTerms{0.6, 0.9}};
    const std::vector<HyperCandidate> grid{c};
    const auto sel = select_hyperparameters(f.data, grid, HyperCandidate{unit_hyper(2), NoiseTerms{}});
    CHECK_FALSE(sel.fallback);
    CHECK(sel.chosen.kernel.lengthscales == c.kernel.lengthscales);
    CHECK(sel.chosen.noise.sigma_r == 0.9);
  }

  TEST_CASE("default grid has 27 candidates around the defaults") {
    const HyperCandidate d{unit_hyper(8, 4.0, 4.0), NoiseTerms{0.8, 0.8}};
    const auto grid = default_hyper_grid(d);
    CHECK(grid.size() == 27);
    int at_default = 0;
    for (const auto& c : grid) {
      if (c.kernel.signal_var == 4.0 && c.kernel.lengthscales(0) == 4.0 && c.noise.sigma_p == 0.8) ++at_default;
    }
    CHECK(at_default == 1);
  }

  TEST_CASE("recovers the generating lengthscale") {
    int hits = 0;
    for (int rep = 0; rep < 10; ++rep) {
      auto rng = seeded_rng(100 + static_cast<std::uint64_t>(rep));
      FeedbackDataset d;
      std::vector<Eigen::VectorXd> pts;
      for (int i = 0; i < 40; ++i) {
        Eigen::VectorXd p(2);
        p << rng.uniform(0, 3), rng.uniform(0, 3);
        pts.push_back(p);
      }
      // Draw R from the model's effective prior N(0, K / 2) with lengthscale 0.5.
      const double sv = 4.0, sr = 0.3;
      Eigen::MatrixXd k = oracle::gram(pts, sv, Eigen::VectorXd::Constant(2, 0.5)) * 0.5;
      k.diagonal().array() += 1e-9;
      const Eigen::MatrixXd l = k.llt().matrixL();
      Eigen::VectorXd z(40);
      for (int i = 0; i < 40; ++i) z(i) = rng.normal();
      const Eigen::VectorXd r = l * z;
      d.points = pts;
      for (int i = 0; i < 40; ++i) d.ratings.push_back({static_cast<std::size_t>(i), r(i) + sr * rng.normal()});

      std::vector<HyperCandidate> grid;
      for (double ls : {0.1, 0.5, 2.5}) grid.push_back({unit_hyper(2, sv, ls), NoiseTerms{0.8, sr}});
      const auto sel = select_hyperparameters(d, grid, grid[0]);
      if (sel.chosen.kernel.lengthscales(0) == 0.5) ++hits;
    }
    CHECK(hits >= 8);
  }

  TEST_CASE("selection ignores grid order") {
    auto rng = seeded_rng(19);
    auto f = random_fixture(rng, 10, 3, 6, 5);
    const HyperCandidate d{unit_hyper(3, 2.0, 1.0), NoiseTerms{0.8, 0.8}};
    auto grid = default_hyper_grid(d);
    const auto a = select_hyperparameters(f.data, grid, d);
    std::reverse(grid.begin(), grid.end());
    const auto b = select_hyperparameters(f.data, grid, d);
    std::rotate(grid.begin(), grid.begin() + 11, grid.end());
    const auto c = select_hyperparameters(f.data, grid, d);
    CHECK(a.chosen.kernel.lengthscales == b.chosen.kernel.lengthscales);
    CHECK(a.chosen.kernel.signal_var == b.chosen.kernel.signal_var);
    CHECK(a.chosen.noise.sigma_r == c.chosen.noise.sigma_r);
    CHECK(a.evidence == c.evidence);
  }

  TEST_CASE("exact ties go to the larger lengthscale") {
    // With preference-free, rating-free data every candidate has zero evidence.
    FeedbackDataset d;
    d.points = {Eigen::VectorXd::Zero(2)};
    std::vector<HyperCandidate> grid;
    for (double ls : {2.0, 0.5, 1.0}) grid.push_back({unit_hyper(2, 1.0, ls), NoiseTerms{}});
    const auto sel = select_hyperparameters(d, grid, grid[1]);
    CHECK(sel.chosen.kernel.lengthscales(0) == 2.0);
  }

  TEST_CASE("empty dataset is rejected") {
    const std::vector<HyperCandidate> grid{{unit_hyper(2), NoiseTerms{}}};
    CHECK_THROWS_AS(select_hyperparameters(FeedbackDataset{}, grid, grid[0]), Error);
  }
}
