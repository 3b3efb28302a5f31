#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "firecal/aies.hpp"

using namespace firecal;
using namespace firecal::aies;

namespace {

// Simpson's rule on [lo, hi].
template <class F>
double simpson(F f, double lo, double hi, int n = 200000) {
  const double h = (hi - lo) / n;
  double s = f(lo) + f(hi);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * f(lo + i * h);
  return s * h / 3.0;
}

double stretch_density(double z, double a) { return 1.0 / (std::sqrt(z) * 2.0 * (std::sqrt(a) - 1.0 / std::sqrt(a))); }

Eigen::MatrixXd gaussian_ball(Eigen::Index l, Eigen::Index m, double scale, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  Eigen::MatrixXd x(l, m);
  for (Eigen::Index i = 0; i < l; ++i)
    for (Eigen::Index j = 0; j < m; ++j) x(i, j) = n(rng);
  return x;
}

LogTarget correlated_gaussian(double rho) {
  return [rho](std::span<const double> x) {
    const double det = 1.0 - rho * rho;
    return -0.5 * (x[0] * x[0] - 2.0 * rho * x[0] * x[1] + x[1] * x[1]) / det;
  };
}

}  // namespace

TEST(StretchDraw, SupportEndpoints) {
  EXPECT_DOUBLE_EQ(stretch_from_uniform(2.0, 0.0), 0.5);
  EXPECT_DOUBLE_EQ(stretch_from_uniform(2.0, 1.0), 2.0);
  EXPECT_DOUBLE_EQ(stretch_from_uniform(3.5, 0.0), 1.0 / 3.5);
  std::mt19937_64 rng(1);
  EXPECT_THROW(stretch_draw(1.0, rng), DomainError);
}

TEST(StretchDraw, MeanMatchesQuadrature) {
  const double a = 2.0;
  const double norm = simpson([&](double z) { return stretch_density(z, a); }, 1.0 / a, a);
  ASSERT_NEAR(norm, 1.0, 1e-9);
  const double mean = simpson([&](double z) { return z * stretch_density(z, a); }, 1.0 / a, a);
  std::mt19937_64 rng(5);
  const int n = 1000000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = stretch_draw(a, rng);
    ASSERT_GE(z, 1.0 / a);
    ASSERT_LE(z, a);
    s += z;
    s2 += z * z;
  }
  const double m = s / n, se = std::sqrt((s2 / n - m * m) / n);
  EXPECT_NEAR(m, mean, 3.0 * se);
}

TEST(Accept, Rule) {
  EXPECT_FALSE(accept(1.5, 3, -std::numeric_limits<double>::infinity(), 0.0, 0.1));
  EXPECT_FALSE(accept(1.5, 3, std::nan(""), 0.0, 0.1));
  EXPECT_TRUE(accept(1.0, 3, 0.0, 0.0, 0.999));
  // ln u < (M-1) ln z: z² = 0.25, so accept iff u < 0.25.
  EXPECT_TRUE(accept(0.5, 3, 0.0, 0.0, 0.24));
  EXPECT_FALSE(accept(0.5, 3, 0.0, 0.0, 0.26));
  EXPECT_TRUE(accept(1.0, 2, -1.0, 0.0, std::exp(-1.0) * 0.99));
  EXPECT_FALSE(accept(1.0, 2, -1.0, 0.0, std::exp(-1.0) * 1.01));
}

TEST(StepEnsemble, FlatTargetAcceptanceMatchesQuadrature) {
  const std::size_t dim = 4;
  const double a = 2.0;
  const LogTarget flat = [](std::span<const double> x) {
    for (double v : x)
      if (std::abs(v) > 1e12) return -std::numeric_limits<double>::infinity();
    return 0.0;
  };
  SamplerConfig cfg;
  cfg.n_walkers = 10;
  // The ensemble spreads geometrically on a flat target, so restart it often
  // to stay far from the cutoff.
  std::size_t accepted = 0, proposed = 0;
  for (int r = 0; r < 1000; ++r) {
    auto st = make_state(gaussian_ball(10, dim, 1.0, 3 + static_cast<std::uint64_t>(r)), flat,
                         7 + static_cast<std::uint64_t>(r));
    for (int i = 0; i < 10; ++i) step_ensemble(st, flat, cfg);
    accepted += st.accepted;
    proposed += st.proposed;
  }
  const double p = simpson([&](double z) { return std::min(1.0, std::pow(z, dim - 1.0)) * stretch_density(z, a); },
                           1.0 / a, a);
  const double rate = static_cast<double>(accepted) / static_cast<double>(proposed);
  EXPECT_EQ(proposed, 100000u);
  EXPECT_NEAR(rate, p, 3.0 * std::sqrt(p * (1.0 - p) / 1e5));
}

TEST(StepEnsemble, OutsideSupportNeverAccepted) {
  const LogTarget box = [](std::span<const double> x) {
    return (x[0] >= 0.0 && x[0] <= 1.0) ? 0.0 : -std::numeric_limits<double>::infinity();
  };
  Eigen::MatrixXd init(6, 1);
  init << 0.1, 0.2, 0.5, 0.6, 0.8, 0.95;
  auto st = make_state(init, box, 2);
  SamplerConfig cfg;
  cfg.n_walkers = 6;
  for (int i = 0; i < 2000; ++i) {
    step_ensemble(st, box, cfg);
    for (Eigen::Index w = 0; w < 6; ++w) {
      ASSERT_GE(st.positions(w, 0), 0.0);
      ASSERT_LE(st.positions(w, 0), 1.0);
    }
  }
}

TEST(StepEnsemble, DeterministicUnderSeed) {
  const auto target = correlated_gaussian(0.5);
  SamplerConfig cfg;
  cfg.n_walkers = 8;
  cfg.n_steps = 300;
  auto s1 = make_state(gaussian_ball(8, 2, 1.0, 1), target, 11);
  auto s2 = make_state(gaussian_ball(8, 2, 1.0, 1), target, 11);
  const auto r1 = run(target, s1, cfg);
  const auto r2 = run(target, s2, cfg);
  EXPECT_EQ(r1.chain.positions, r2.chain.positions);
  EXPECT_EQ(r1.chain.log_prob, r2.chain.log_prob);
}

TEST(StepEnsemble, TargetFailureNamesWalker) {
  int calls = 0;
  const LogTarget bad = [&](std::span<const double>) -> double {
    if (++calls > 12) throw std::runtime_error("boom");
    return 0.0;
  };
  auto st = make_state(gaussian_ball(10, 2, 1.0, 1), bad, 1);
  SamplerConfig cfg;
  cfg.n_walkers = 10;
  try {
    step_ensemble(st, bad, cfg);
    FAIL();
  } catch (const SamplerError& e) {
    EXPECT_NE(std::string(e.what()).find("walker 2"), std::string::npos) << e.what();
  }
}

TEST(Run, CorrelatedGaussianMoments) {
  const double rho = 0.9;
  const auto target = correlated_gaussian(rho);
  SamplerConfig cfg;
  cfg.n_walkers = 10;
  cfg.n_steps = 20000;
  cfg.burn_in = 0.1;
  auto st = make_state(gaussian_ball(10, 2, 0.1, 4), target, 21);
  const auto res = run(target, st, cfg);
  const Eigen::MatrixXd s = res.post_burn_in();
  const Eigen::RowVectorXd mean = s.colwise().mean();
  const Eigen::MatrixXd c = s.rowwise() - mean;
  const Eigen::MatrixXd cov = c.transpose() * c / static_cast<double>(s.rows() - 1);
  for (int k = 0; k < 2; ++k) {
    const double tau = res.autocorr_time[static_cast<std::size_t>(k)];
    ASSERT_TRUE(std::isfinite(tau));
    const double se = std::sqrt(cov(k, k) * tau / static_cast<double>(s.rows()));
    EXPECT_NEAR(mean[k], 0.0, 3.0 * se) << "tau " << tau;
    EXPECT_NEAR(cov(k, k), 1.0, 0.1);
  }
  EXPECT_NEAR(cov(0, 1), rho, 0.1 * rho);
  EXPECT_GT(res.acceptance_rate, 0.2);
}

// Running on the affinely mapped target from the mapped ensemble with the same
// RNG stream reproduces the mapped trajectories. Rounding differences grow
// geometrically through chained moves, so the run is kept short.
TEST(Run, AffineEquivariance) {
  Eigen::Matrix3d a;
  a << 2.0, 0.5, 0.0, 0.0, 1.0, 0.3, 0.1, 0.0, 3.0;
  const Eigen::Vector3d b(1.0, -2.0, 5.0);
  const Eigen::Matrix3d ainv = a.inverse();
  const LogTarget base = [](std::span<const double> x) {
    return -0.5 * (x[0] * x[0] + 4.0 * x[1] * x[1] + 0.25 * x[2] * x[2] + 0.5 * x[0] * x[2]);
  };
  const LogTarget mapped = [&](std::span<const double> y) {
    const Eigen::Vector3d x = ainv * (Eigen::Vector3d(y[0], y[1], y[2]) - b);
    return base(std::span<const double>(x.data(), 3));
  };
  SamplerConfig cfg;
  cfg.n_walkers = 8;
  cfg.n_steps = 150;
  const Eigen::MatrixXd x0 = gaussian_ball(8, 3, 1.0, 9);
  const Eigen::MatrixXd y0 = (x0 * a.transpose()).rowwise() + b.transpose();
  auto sx = make_state(x0, base, 99);
  auto sy = make_state(y0, mapped, 99);
  const auto rx = run(base, sx, cfg);
  const auto ry = run(mapped, sy, cfg);
  double worst = 0.0;
  for (std::size_t s = 0; s < rx.chain.n_steps(); ++s)
    for (std::size_t w = 0; w < 8; ++w) {
      const Eigen::Vector3d x(rx.chain.x(s, w, 0), rx.chain.x(s, w, 1), rx.chain.x(s, w, 2));
      const Eigen::Vector3d y(ry.chain.x(s, w, 0), ry.chain.x(s, w, 1), ry.chain.x(s, w, 2));
      worst = std::max(worst, (a * x + b - y).cwiseAbs().maxCoeff());
    }
  EXPECT_LE(worst, 1e-9);
  EXPECT_EQ(sx.accepted, sy.accepted);
}

TEST(Run, KolmogorovSmirnovStandardNormal) {
  const LogTarget target = [](std::span<const double> x) { return -0.5 * x[0] * x[0]; };
  SamplerConfig cfg;
  cfg.n_walkers = 20;
  cfg.n_steps = 102000;
  cfg.burn_in = 2000.0 / 102000.0;
  auto st = make_state(gaussian_ball(20, 1, 1.0, 3), target, 5);
  const auto res = run(target, st, cfg);
  const Eigen::MatrixXd all = res.post_burn_in();
  // Thin by 20 sweeps to leave 1e5 nearly independent samples.
  std::vector<double> v;
  for (Eigen::Index r = 0; r < all.rows(); r += 20 * 20)
    for (Eigen::Index w = 0; w < 20 && r + w < all.rows(); ++w) v.push_back(all(r + w, 0));
  ASSERT_EQ(v.size(), 100000u);
  std::sort(v.begin(), v.end());
  double d = 0.0;
  const double n = static_cast<double>(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double f = 0.5 * std::erfc(-v[i] / std::sqrt(2.0));
    d = std::max({d, std::abs(f - i / n), std::abs(f - (i + 1) / n)});
  }
  EXPECT_LT(d, 1.628 / std::sqrt(n));
}

TEST(Run, StuckEnsembleIsReported) {
  Eigen::MatrixXd init(4, 2);
  init << 0, 0, 1, 0, 0, 1, 1, 1;
  const LogTarget spikes = [&](std::span<const double> x) {
    for (Eigen::Index w = 0; w < 4; ++w)
      if (x[0] == init(w, 0) && x[1] == init(w, 1)) return 0.0;
    return -std::numeric_limits<double>::infinity();
  };
  auto st = make_state(init, spikes, 1);
  SamplerConfig cfg;
  cfg.n_walkers = 4;
  cfg.n_steps = 1000;
  cfg.stuck_window = 50;
  EXPECT_THROW(run(spikes, st, cfg), SamplerError);
  EXPECT_EQ(st.step, 50u);
}

TEST(Run, RejectsBadConfiguration) {
  const auto target = correlated_gaussian(0.0);
  auto st = make_state(gaussian_ball(1, 2, 1.0, 1), target, 1);
  SamplerConfig cfg;
  cfg.n_walkers = 1;
  EXPECT_THROW(run(target, st, cfg), DomainError);
  auto st2 = make_state(gaussian_ball(4, 2, 1.0, 1), target, 1);
  cfg.n_walkers = 4;
  cfg.a = 1.0;
  EXPECT_THROW(run(target, st2, cfg), DomainError);
}

TEST(Autocorrelation, Ar1Process) {
  const double phi = 0.8;
  Chain c;
  c.n_walkers = 4;
  c.dim = 1;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  std::vector<double> x(4, 0.0);
  for (int s = 0; s < 50000; ++s)
    for (std::size_t w = 0; w < 4; ++w) {
      x[w] = phi * x[w] + n(rng);
      c.positions.push_back(x[w]);
      c.log_prob.push_back(0.0);
    }
  const double tau = autocorrelation_time(c)[0];
  EXPECT_NEAR(tau, (1.0 + phi) / (1.0 - phi), 0.1 * 9.0);
}

TEST(InitFromPrior, DrawsInsideBox) {
  bayes::PriorSpec p{{"a", "b", "c"}, {0.0, -1.0, 5.0}, {1.0, 1.0, 5.0}};
  const LogTarget any = [](std::span<const double>) { return 0.0; };
  const auto st = init_from_prior(p, 12, 3, any);
  for (Eigen::Index w = 0; w < 12; ++w) {
    EXPECT_GE(st.positions(w, 0), 0.0);
    EXPECT_LE(st.positions(w, 0), 1.0);
    EXPECT_EQ(st.positions(w, 2), 5.0);
    for (Eigen::Index v = 0; v < w; ++v) EXPECT_NE(st.positions(w, 0), st.positions(v, 0));
  }
  EXPECT_EQ(init_from_prior(p, 12, 3, any).positions, st.positions);
}

TEST(InitFromPrior, RedrawsAndGivesUp) {
  bayes::PriorSpec p{{"a"}, {0.0}, {1.0}};
  const LogTarget half = [](std::span<const double> x) {
    return x[0] < 0.5 ? 0.0 : -std::numeric_limits<double>::infinity();
  };
  const auto st = init_from_prior(p, 20, 4, half);
  for (Eigen::Index w = 0; w < 20; ++w) EXPECT_LT(st.positions(w, 0), 0.5);
  const LogTarget never = [](std::span<const double>) { return -std::numeric_limits<double>::infinity(); };
  EXPECT_THROW(init_from_prior(p, 2, 4, never), SamplerError);
}

TEST(Checkpoint, ResumeEqualsUninterruptedRun) {
  const auto target = correlated_gaussian(0.3);
  SamplerConfig cfg;
  cfg.n_walkers = 6;
  cfg.n_steps = 200;
  auto full = make_state(gaussian_ball(6, 2, 1.0, 2), target, 8);
  const auto rf = run(target, full, cfg);

  auto part = make_state(gaussian_ball(6, 2, 1.0, 2), target, 8);
  SamplerConfig first = cfg;
  first.n_steps = 80;
  run(target, part, first);
  std::stringstream ss;
  save_checkpoint(part, ss);
  auto resumed = load_checkpoint(ss);
  EXPECT_EQ(resumed.positions, part.positions);
  const auto rr = run(target, resumed, cfg);
  EXPECT_EQ(rr.chain.first_step, 80u);
  EXPECT_EQ(resumed.positions, full.positions);
  EXPECT_EQ(resumed.log_prob, full.log_prob);
  for (std::size_t s = 0; s < rr.chain.n_steps(); ++s)
    for (std::size_t w = 0; w < 6; ++w) EXPECT_EQ(rr.chain.x(s, w, 1), rf.chain.x(s + 80, w, 1));
  std::stringstream bad("garbage");
  EXPECT_THROW(load_checkpoint(bad), ConfigError);
}
