#include <gtest/gtest.h>

#include <random>

#include "ctd/common_factor.hpp"
#include "ctd/errors.hpp"
#include "ctd/estimators.hpp"
#include "ctd/term_structure.hpp"
#include "oracles.hpp"

using namespace ctd;

namespace {

Eigen::MatrixXd corr2(double rho) {
  Eigen::MatrixXd m(2, 2);
  m << 1.0, rho, rho, 1.0;
  return m;
}

// Table spreads at t = 20 with their exact pairwise correlation.
struct TableMarginals {
  std::vector<double> mus, sigmas;
  double rho = 0.0;
};

TableMarginals table_marginals(double t) {
  const SpreadParams s1{0.0078, 0.0018, ThetaCurve(0.000845), 0.000845};
  const SpreadParams s2{0.0076, 0.0023, ThetaCurve(0.001514), 0.001514};
  TableMarginals m;
  m.mus = {spread_mean(s1, t), spread_mean(s2, t)};
  m.sigmas = {std::sqrt(spread_variance(s1, t)), std::sqrt(spread_variance(s2, t))};
  m.rho = pair_correlation(s1, s2, 0.3, t);
  return m;
}

}  // namespace

TEST(OptimizeGamma, TwoComponentClosedForm) {
  const std::vector<double> s{0.001, 0.002};
  const GammaFit fit = optimize_gamma(s, corr2(0.3));
  EXPECT_NEAR(fit.gamma, 0.6, 1e-15);
  EXPECT_FALSE(fit.clamped);
  const double oracle_gamma = oracle::golden_min([&](double g) { return gamma_objective(s, corr2(0.3), g); }, 0.0, 1.0);
  EXPECT_NEAR(fit.gamma, oracle_gamma, 1e-8);
}

TEST(OptimizeGamma, IdentityTargetGivesZero) {
  const std::vector<double> s{0.001, 0.002, 0.004};
  EXPECT_NEAR(optimize_gamma(s, Eigen::MatrixXd::Identity(3, 3)).gamma, 0.0, 1e-9);
  EXPECT_EQ(optimize_gamma(std::vector<double>{0.001, 0.002}, Eigen::MatrixXd::Identity(2, 2)).gamma, 0.0);
}

TEST(OptimizeGamma, EqualSigmasKeepRho) {
  const std::vector<double> s{0.003, 0.003};
  EXPECT_NEAR(optimize_gamma(s, corr2(0.97)).gamma, 0.97, 1e-15);
}

TEST(OptimizeGamma, ClampsBelowOne) {
  const std::vector<double> s{0.001, 0.004};
  const GammaFit fit = optimize_gamma(s, corr2(0.5), 1e-10);
  EXPECT_TRUE(fit.clamped);
  EXPECT_NEAR(fit.unconstrained, 2.0, 1e-14);
  EXPECT_NEAR(fit.gamma, 1.0 - 1e-10, 1e-16);
}

TEST(OptimizeGamma, ThreeComponentsMatchGoldenSection) {
  const std::vector<double> s{0.0011, 0.0017, 0.0023};
  Eigen::MatrixXd t(3, 3);
  t << 1.0, 0.35, 0.22, 0.35, 1.0, 0.41, 0.22, 0.41, 1.0;
  const GammaFit fit = optimize_gamma(s, t);
  const double g = oracle::golden_min([&](double x) { return gamma_objective(s, t, x); }, 0.0, 1.0 - 1e-10);
  EXPECT_NEAR(fit.gamma, g, 1e-7);
  EXPECT_LE(gamma_objective(s, t, fit.gamma), gamma_objective(s, t, g) + 1e-14);
}

TEST(OptimizeGamma, RejectsAsymmetricTarget) {
  Eigen::MatrixXd t(2, 2);
  t << 1.0, 0.3, 0.2, 1.0;
  EXPECT_THROW(optimize_gamma(std::vector<double>{0.001, 0.002}, t), InputError);
}

TEST(Decompose, Invariants) {
  const TableMarginals m = table_marginals(20.0);
  const GammaFit fit = optimize_gamma(m.sigmas, corr2(m.rho));
  const FactorDecomposition d = decompose(m.mus, m.sigmas, fit.gamma);
  EXPECT_DOUBLE_EQ(d.c_variance, d.sigma_min_sq * d.gamma);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_DOUBLE_EQ(d.components[i].a_mean, m.mus[i]);
    EXPECT_NEAR(d.total_variance(i), m.sigmas[i] * m.sigmas[i], 1e-22);
    EXPECT_GT(d.components[i].a_variance, 0.0);
  }
  const FactorDecomposition ind = decompose(m.mus, m.sigmas, 0.0);
  EXPECT_EQ(ind.c_variance, 0.0);
  EXPECT_EQ(ind.components[1].a_variance, m.sigmas[1] * m.sigmas[1]);
}

TEST(Decompose, BoundaryAndErrors) {
  const std::vector<double> mus{0.0, 0.0}, s{0.002, 0.002};
  const FactorDecomposition d = decompose(mus, s, 1.0 - 1e-12);
  EXPECT_LT(d.components[0].a_variance, 1e-17);
  EXPECT_GE(d.components[0].a_variance, 0.0);
  EXPECT_THROW(decompose(mus, s, 1.0), InputError);
  EXPECT_THROW(decompose(mus, s, -0.1), InputError);
}

// Sampling C + A_i reproduces the marginals and the implied correlation.
TEST(Decompose, MarginalAndCorrelationPreservation) {
  const std::vector<double> mus{0.001, -0.0005, 0.002}, s{0.002, 0.003, 0.0025};
  const double gamma = 0.7;
  const FactorDecomposition d = decompose(mus, s, gamma);
  std::mt19937_64 gen(7);
  std::normal_distribution<double> nd;
  const int n = 1'000'000;
  std::vector<oracle::Stats> st(3);
  double s01 = 0.0;
  for (int k = 0; k < n; ++k) {
    const double c = std::sqrt(d.c_variance) * nd(gen);
    double x[3];
    for (int i = 0; i < 3; ++i) {
      x[i] = c + d.components[i].a_mean + std::sqrt(d.components[i].a_variance) * nd(gen);
      st[i].add(x[i]);
    }
    s01 += (x[0] - mus[0]) * (x[1] - mus[1]);
  }
  for (int i = 0; i < 3; ++i) {
    EXPECT_NEAR(st[i].mean, mus[i], 4.0 * st[i].se());
    const double v = s[i] * s[i];
    EXPECT_NEAR(st[i].var(), v, 4.0 * v * std::sqrt(2.0 / n));
  }
  const double model = d.c_variance / (s[0] * s[1]);
  const double empirical = s01 / n / std::sqrt(st[0].var() * st[1].var());
  EXPECT_NEAR(empirical, model, 4.0 * (1.0 - model * model) / std::sqrt(static_cast<double>(n)));
  EXPECT_LT(model, d.sigma_min_sq / (s[0] * s[1]));
}

TEST(IndependentMaxCdf, Values) {
  const std::vector<double> z1{0.0}, one{1.0};
  EXPECT_DOUBLE_EQ(independent_max_cdf(decompose(z1, one, 0.0), 0.0), 0.5);
  const std::vector<double> z2{0.0, 0.0}, ones{1.0, 1.0};
  const FactorDecomposition d = decompose(z2, ones, 0.0);
  EXPECT_DOUBLE_EQ(independent_max_cdf(d, 0.0), 0.25);
  EXPECT_NEAR(independent_max_cdf(d, 40.0), 1.0, 1e-300);
  EXPECT_NEAR(independent_max_cdf(d, -40.0), 0.0, 1e-300);
  const std::vector<double> mixed_mu{0.5, 0.0}, mixed_s{0.0, 1.0};
  const FactorDecomposition step = decompose(mixed_mu, mixed_s, 0.0);
  EXPECT_EQ(independent_max_cdf(step, 0.4), 0.0);
  EXPECT_NEAR(independent_max_cdf(step, 0.5), oracle::Phi(0.5), 1e-15);
}

TEST(ShiftedMaxCdf, SingleComponentIsNormal) {
  const double sigma = 0.004;
  const std::vector<double> mu{0.0}, s{sigma};
  const FactorDecomposition d = decompose(mu, s, 0.5);
  const GridSpec grid{-0.03, 5e-5, 1200};
  const GridFunction h = shifted_max_cdf(d, grid);
  double worst = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    worst = std::max(worst, std::abs(h[i] - oracle::Phi(h.x(i) / sigma)));
    if (i > 0) EXPECT_GE(h[i], h[i - 1]);
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(ShiftedMaxCdf, ValidCdfWithReachedTail) {
  const TableMarginals m = table_marginals(20.0);
  const FactorDecomposition d = decompose(m.mus, m.sigmas, optimize_gamma(m.sigmas, corr2(m.rho)).gamma);
  const CdfOnSupport sup = max_cdf_on_support(d);
  EXPECT_EQ(sup.cdf.x_lo(), 0.0);
  EXPECT_GE(sup.cdf.values().back(), 1.0 - 1e-10);
  for (std::size_t i = 0; i < sup.cdf.size(); ++i) {
    EXPECT_GE(sup.cdf[i], 0.0);
    EXPECT_LE(sup.cdf[i], 1.0);
    if (i > 0) EXPECT_GE(sup.cdf[i], sup.cdf[i - 1]);
  }
}

TEST(MaxMoments, HalfNormal) {
  const double sigma = 0.01;
  const std::vector<double> mu{0.0}, s{sigma};
  const CdfOnSupport sup = max_cdf_on_support(decompose(mu, s, 0.0));
  const double mean = max_expectation(sup.cdf);
  const double raw = max_raw_second_moment(sup.cdf);
  // Composite trapezoid error is (delta^2 / 12) |f'(0)|, with f'(0) = -phi(0) / sigma
  // for 1 - H and f'(0) = 1 for 2x (1 - H).
  const double h2 = 5e-5 * 5e-5 / 12.0;
  EXPECT_NEAR(mean, sigma / std::sqrt(2.0 * M_PI), 1.05 * h2 * oracle::phi(0.0) / sigma);
  EXPECT_NEAR(mean, 0.0039894, 1e-7);
  EXPECT_NEAR(raw, 5e-5, 1.05 * h2);
  EXPECT_NEAR(max_variance(mean, raw), sigma * sigma * (0.5 - 1.0 / (2.0 * M_PI)), 1e-9);
  EXPECT_NEAR(max_variance(mean, raw), 3.408e-5, 1e-8);
}

TEST(MaxMoments, HalfNormalConvergesQuadratically) {
  const double sigma = 0.01;
  const std::vector<double> mu{0.0}, s{sigma};
  const FactorDecomposition d = decompose(mu, s, 0.0);
  double prev = 0.0;
  for (double delta : {1e-4, 5e-5, 2.5e-5}) {
    ConvolutionSettings st;
    st.delta = delta;
    const double err = std::abs(max_expectation(max_cdf_on_support(d, st).cdf) - sigma / std::sqrt(2.0 * M_PI));
    if (prev > 0.0) EXPECT_NEAR(prev / err, 4.0, 0.1);
    prev = err;
  }
}

TEST(MaxMoments, FarNegativeMeansGiveZero) {
  const std::vector<double> mu{-0.05, -0.04}, s{1e-4, 2e-4};
  const CdfOnSupport sup = max_cdf_on_support(decompose(mu, s, 0.3));
  EXPECT_NEAR(max_expectation(sup.cdf), 0.0, 1e-15);
  EXPECT_NEAR(max_raw_second_moment(sup.cdf), 0.0, 1e-18);
}

TEST(MaxMoments, DomainChecks) {
  const GridFunction short_grid(0.0, 1e-3, std::vector<double>{0.5, 0.7, 0.9});
  EXPECT_THROW(max_expectation(short_grid), DomainError);
  const GridFunction shifted(-1e-3, 1e-3, std::vector<double>{0.2, 0.5, 1.0});
  EXPECT_THROW(max_expectation(shifted), InputError);
  EXPECT_EQ(max_variance(0.0, 2e-5), 2e-5);
  EXPECT_EQ(max_variance(1e-3, 1e-6 - 5e-13), 0.0);
  EXPECT_THROW(max_variance(1e-3, 0.9e-6), ConsistencyError);
}

// The estimator pipeline bypasses the grid for constant maxima.
TEST(MaxMoments, DeterministicSpreads) {
  const std::vector<SpreadParams> sp{{0.5, 0.0, ThetaCurve(0.002), 0.002}, {0.5, 0.0, ThetaCurve(-0.001), -0.001}};
  const TimeGrid grid(1.0, 0.5);
  const MaxMomentSeries s = moment_series(sp, CorrelationSpec::uniform(2, 0.3), grid);
  for (const TimePointMoments& p : s.points) {
    EXPECT_TRUE(p.analytic);
    EXPECT_DOUBLE_EQ(p.mean, 0.002);
    EXPECT_EQ(p.variance, 0.0);
    EXPECT_EQ(p.probs, (std::vector<double>{1.0, 0.0}));
  }
}

TEST(MaxMoments, TwoComponentsMatchBivariateQuadrature) {
  const TableMarginals m = table_marginals(20.0);
  const FactorDecomposition d = decompose(m.mus, m.sigmas, optimize_gamma(m.sigmas, corr2(m.rho)).gamma);
  const CdfOnSupport sup = max_cdf_on_support(d);
  const double e1 = oracle::max0_moment2(m.mus[0], m.sigmas[0], m.mus[1], m.sigmas[1], m.rho, 1);
  const double e2 = oracle::max0_moment2(m.mus[0], m.sigmas[0], m.mus[1], m.sigmas[1], m.rho, 2);
  EXPECT_NEAR(max_expectation(sup.cdf), e1, 1e-6);
  EXPECT_NEAR(max_raw_second_moment(sup.cdf), e2, 1e-8);
}

TEST(MaxMoments, OneComponentMatchesClosedForm) {
  for (double mu : {-0.004, 0.0, 0.0025}) {
    const std::vector<double> m{mu}, s{0.003};
    const CdfOnSupport sup = max_cdf_on_support(decompose(m, s, 0.4));
    EXPECT_NEAR(max_expectation(sup.cdf), oracle::max0_moment(mu, 0.003, 1), 1e-6);
    EXPECT_NEAR(max_raw_second_moment(sup.cdf), oracle::max0_moment(mu, 0.003, 2), 1e-6);
  }
}

TEST(MaxProbabilities, IndependentPair) {
  const std::vector<double> mu{0.0, 0.0}, s{0.002, 0.002};
  const MaxProbabilities p = max_probabilities(decompose(mu, s, 0.0));
  EXPECT_NEAR(p.probs[0], 0.375, 1e-8);
  EXPECT_NEAR(p.probs[1], 0.375, 1e-8);
  EXPECT_NEAR(p.residual, 0.25, 1e-8);
  const MaxProbabilities q = max_probabilities(decompose(mu, s, 1e-9));
  EXPECT_NEAR(q.probs[0], 0.375, 1e-8);
  EXPECT_NEAR(q.residual, 0.25, 1e-8);
}

// With a common factor the pair is correlated (r = gamma here) and the
// residual is the orthant probability 1/4 + asin(r) / (2 pi).
TEST(MaxProbabilities, CorrelatedPairOrthant) {
  const std::vector<double> mu{0.0, 0.0}, s{0.002, 0.002};
  for (double g : {0.2, 0.5, 0.9}) {
    const MaxProbabilities p = max_probabilities(decompose(mu, s, g));
    const double residual = 0.25 + std::asin(g) / (2.0 * M_PI);
    EXPECT_NEAR(p.residual, residual, 1e-8);
    EXPECT_NEAR(p.probs[0], 0.5 * (1.0 - residual), 1e-8);
    EXPECT_NEAR(p.probs[1], 0.5 * (1.0 - residual), 1e-8);
  }
}

TEST(MaxProbabilities, ConstantRivalInsideDomain) {
  const std::vector<double> mu{0.001, 0.0015}, s{0.002, 0.0};
  const MaxProbabilities p = max_probabilities(decompose(mu, s, 0.0));
  EXPECT_NEAR(p.probs[0], 1.0 - oracle::Phi((0.0015 - 0.001) / 0.002), 1e-8);
  EXPECT_NEAR(p.probs[1], oracle::Phi((0.0015 - 0.001) / 0.002), 1e-8);
  EXPECT_NEAR(p.residual, 0.0, 1e-8);
}

TEST(MaxProbabilities, IidPairAgainstSampling) {
  const std::vector<double> mu{0.0, 0.0}, s{0.002, 0.002};
  const FactorDecomposition d = decompose(mu, s, 0.5);
  std::mt19937_64 gen(3);
  std::normal_distribution<double> nd;
  const int n = 1'000'000;
  int first = 0;
  for (int k = 0; k < n; ++k) {
    const double c = std::sqrt(d.c_variance) * nd(gen);
    const double a = c + std::sqrt(d.components[0].a_variance) * nd(gen);
    const double b = c + std::sqrt(d.components[1].a_variance) * nd(gen);
    if (a > 0.0 && a > b) ++first;
  }
  const double se = std::sqrt(0.375 * 0.625 / n);
  EXPECT_NEAR(static_cast<double>(first) / n, max_probabilities(d).probs[0], 4.0 * se);
}

TEST(MaxProbabilities, DominantAndNegativeComponents) {
  const std::vector<double> mu{0.05, 0.0, -0.01}, s{0.002, 0.002, 0.002};
  const MaxProbabilities p = max_probabilities(decompose(mu, s, 0.3));
  EXPECT_NEAR(p.probs[0], 1.0, 1e-12);
  EXPECT_NEAR(p.probs[1], 0.0, 1e-12);
  EXPECT_NEAR(p.residual, 0.0, 1e-12);
  const std::vector<double> neg{-0.05, -0.04};
  const MaxProbabilities q = max_probabilities(decompose(neg, std::vector<double>{0.002, 0.003}, 0.3));
  EXPECT_NEAR(q.residual, 1.0, 1e-12);
}

// Sum of probabilities plus residual is one, and the residual is H(0).
TEST(MaxProbabilities, ClosureOverRandomSets) {
  std::mt19937_64 gen(2024);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + static_cast<std::size_t>(u(gen) * 5.0);
    std::vector<double> mu(n), s(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = 0.0005 + 0.006 * u(gen);
      mu[i] = (u(gen) - 0.5) * 4.0 * s[i];
    }
    const FactorDecomposition d = decompose(mu, s, 0.95 * u(gen));
    const MaxProbabilities p = max_probabilities(d);
    double total = p.residual;
    for (double v : p.probs) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
      total += v;
    }
    EXPECT_NEAR(total, 1.0, 1e-8) << "trial " << trial;
    const CdfOnSupport sup = max_cdf_on_support(d);
    EXPECT_NEAR(p.residual, sup.cdf[0], 1e-8) << "trial " << trial;
  }
}

TEST(TailCutoff, NormalTail) {
  const double sigma = 0.01;
  const std::vector<double> mu{0.0}, s{sigma};
  const double eps = oracle::Phi(-8.0);
  const double l = tail_cutoff(decompose(mu, s, 0.0), eps);
  EXPECT_NEAR(l, 8.0 * sigma, 5e-5 + 1e-12);
  EXPECT_GE(l, 8.0 * sigma - 1e-12);
}

TEST(TailCutoff, GrowsWithTime) {
  double prev = 0.0;
  for (double t : {1.0, 5.0, 10.0, 15.0, 20.0}) {
    const TableMarginals m = table_marginals(t);
    const FactorDecomposition d = decompose(m.mus, m.sigmas, optimize_gamma(m.sigmas, corr2(m.rho)).gamma);
    const double l = tail_cutoff(d, 1e-10);
    EXPECT_GE(l, prev);
    prev = l;
  }
}

TEST(AnalyticTailBound, CoversTheTail) {
  const std::vector<double> mu{0.001, 0.002}, sd{0.003, 0.001};
  const double b = analytic_tail_bound(mu, sd, 1e-10);
  EXPECT_GT(1.0 - oracle::Phi((b - 0.001) / 0.003) + 1.0 - oracle::Phi((b - 0.002) / 0.001), 0.0);
  EXPECT_LT(1.0 - oracle::Phi((b - 0.001) / 0.003) + 1.0 - oracle::Phi((b - 0.002) / 0.001), 1e-10);
}

TEST(TwoGroup, PooledLimit) {
  const std::vector<double> mu1{0.001, -0.0005}, s1{0.0015, 0.0012};
  const std::vector<double> mu2{0.0008}, s2{0.0018};
  const double cvar = 0.8e-6;
  const double g1 = cvar / 0.0012 / 0.0012;
  const double g2 = cvar / 0.0018 / 0.0018;
  const FactorDecomposition d1 = decompose(mu1, s1, g1);
  const FactorDecomposition d2 = decompose(mu2, s2, g2);
  ASSERT_NEAR(d1.c_variance, d2.c_variance, 1e-20);
  const std::vector<double> mup{0.001, -0.0005, 0.0008}, sp{0.0015, 0.0012, 0.0018};
  const FactorDecomposition pooled = decompose(mup, sp, g1);
  const GridFunction h = shifted_max_cdf(pooled, GridSpec{0.0, 5e-5, 200});
  for (std::size_t i = 0; i < h.size(); i += 10)
    EXPECT_NEAR(two_group_max_cdf(d1, d2, 1.0 - 1e-12, h.x(i)), h[i], 1e-6) << "x = " << h.x(i);
}

TEST(TwoGroup, FarNegativeGroupReducesToOneGroup) {
  const std::vector<double> mu1{0.001, 0.0004}, s1{0.0015, 0.0012};
  const std::vector<double> mu2{-1.0}, s2{0.0018};
  const FactorDecomposition d1 = decompose(mu1, s1, 0.5);
  const FactorDecomposition d2 = decompose(mu2, s2, 0.4);
  const GridFunction h = shifted_max_cdf(d1, GridSpec{0.0, 5e-5, 200});
  for (std::size_t i = 0; i < h.size(); i += 20)
    EXPECT_NEAR(two_group_max_cdf(d1, d2, 0.3, h.x(i)), h[i], 1e-6);
  EXPECT_EQ(two_group_max_cdf(d1, d2, 0.3, -1e-4), 0.0);
  EXPECT_NEAR(two_group_max_cdf(d1, d2, 0.3, 1.0), 1.0, 1e-12);
  EXPECT_THROW(two_group_max_cdf(d1, d2, 1.0, 0.0), InputError);
}

TEST(TwoGroup, FitAndProbabilities) {
  const std::vector<double> mu{0.001, 0.0006, 0.0012, 0.0009}, s{0.0015, 0.0012, 0.0018, 0.0016};
  Eigen::MatrixXd t(4, 4);
  t << 1.0, 0.4, 0.1, 0.1, 0.4, 1.0, 0.1, 0.1, 0.1, 0.1, 1.0, 0.5, 0.1, 0.1, 0.5, 1.0;
  const std::vector<int> membership{0, 0, 1, 1};
  const TwoGroupFactors f = fit_two_group(mu, s, t, membership, 0.2);
  EXPECT_EQ(f.members[0], (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(f.members[1], (std::vector<std::size_t>{2, 3}));
  for (int g = 0; g < 2; ++g)
    for (std::size_t k = 0; k < f.members[g].size(); ++k) {
      const std::size_t i = f.members[g][k];
      EXPECT_NEAR(f.group[g].total_variance(k), s[i] * s[i], 1e-20);
    }
  const MaxProbabilities p = two_group_max_probabilities(f);
  double total = p.residual;
  for (double v : p.probs) total += v;
  EXPECT_NEAR(total, 1.0, 1e-8);
  const CdfOnSupport sup = two_group_cdf_on_support(f);
  EXPECT_NEAR(p.residual, sup.cdf[0], 1e-6);
  EXPECT_THROW(fit_two_group(mu, s, t, std::vector<int>{0, 0, 0, 0}, 0.2), InputError);
}
