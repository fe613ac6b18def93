#include <gtest/gtest.h>

#include "ctd/errors.hpp"
#include "ctd/estimators.hpp"
#include "ctd/mc_oracle.hpp"
#include "oracles.hpp"

using namespace ctd;

namespace {

const SpreadParams kS1{0.0078, 0.0018, ThetaCurve(0.000845), 0.000845};
const SpreadParams kS2{0.0076, 0.0023, ThetaCurve(0.001514), 0.001514};

MaxMomentSeries constant_series(const TimeGrid& grid, double v, std::size_t n_probs = 0) {
  MaxMomentSeries s;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    TimePointMoments p;
    p.t = grid[k];
    p.variance = v;
    p.raw_second = v;
    p.probs.assign(n_probs, n_probs ? 1.0 / static_cast<double>(n_probs) : 0.0);
    p.residual = 0.0;
    s.points.push_back(p);
  }
  s.has_probabilities = n_probs > 0;
  return s;
}

double chi_closed_form(double v, double kappa, double t) {
  return 2.0 * v * (t / kappa - (1.0 - std::exp(-kappa * t)) / (kappa * kappa));
}

}  // namespace

TEST(DiffusionVariance, ConstantVariance) {
  const double v = 3e-5;
  for (double dt : {0.1, 0.05}) {
    const TimeGrid grid(20.0, dt);
    const double psi = diffusion_variance(constant_series(grid, v), grid);
    EXPECT_NEAR(psi, v * 400.0, v * 400.0 * (dt / 20.0) * 1.0001);
  }
}

TEST(DiffusionVariance, DecreasingIncrementsAreClamped) {
  const TimeGrid grid(1.0, 0.5);
  MaxMomentSeries s = constant_series(grid, 0.0);
  s.points[0].variance = 0.0;
  s.points[1].variance = 2.0;
  s.points[2].variance = 1.0;
  // W = (0, 2, 2): Psi = 2 * 0.25 * (2*0 + 1*2)
  EXPECT_DOUBLE_EQ(diffusion_variance(s, grid), 1.0);
}

TEST(MrVariance, ConstantKappaAndVariance) {
  const double v = 2e-5, kappa = 0.5, t = 20.0;
  double prev_err = 0.0;
  for (double dt : {0.1, 0.05, 0.025}) {
    const TimeGrid grid(t, dt);
    const MaxMomentSeries s = constant_series(grid, v);
    const std::vector<double> kt(grid.size(), kappa);
    const double chi = mr_variance(s, kt, grid);
    const double exact = chi_closed_form(v, kappa, t);
    const double err = std::abs(chi - exact);
    EXPECT_LT(err / exact, 0.5 * dt);
    if (prev_err > 0.0) {
      EXPECT_GT(prev_err / err, 1.6);
      EXPECT_LT(prev_err / err, 2.4);
    }
    prev_err = err;
  }
}

TEST(MrVariance, InnerVariableChoiceConverges) {
  const double v = 2e-5, kappa = 0.3;
  const TimeGrid grid(10.0, 0.01);
  const MaxMomentSeries s = constant_series(grid, v);
  const std::vector<double> kt(grid.size(), kappa);
  const double exact = chi_closed_form(v, kappa, 10.0);
  EXPECT_NEAR(mr_variance(s, kt, grid, VarianceMode::central, InnerVariable::s), exact, 0.5 * 0.01 * exact);
  EXPECT_NEAR(mr_variance(s, kt, grid, VarianceMode::central, InnerVariable::t), exact, 0.5 * 0.01 * exact);
}

TEST(WeightedKappa, Identities) {
  const TimeGrid grid(1.0, 0.5);
  MaxMomentSeries s = constant_series(grid, 0.0, 2);
  s.points[0].probs = {1.0, 0.0};
  s.points[1].probs = {0.0, 1.0};
  s.points[2].probs = {0.0, 0.0};
  s.points[2].residual = 1.0;
  const std::vector<double> k{0.3, 0.7};
  const std::vector<double> kt = weighted_kappa(s, k);
  EXPECT_DOUBLE_EQ(kt[0], 0.3);
  EXPECT_DOUBLE_EQ(kt[1], 0.7);
  EXPECT_DOUBLE_EQ(kt[2], 0.0);
}

TEST(MomentSeries, SingleSpreadMatchesClosedForm) {
  const SpreadParams p{0.4, 0.006, ThetaCurve(-0.002), 0.003};
  const TimeGrid grid(5.0, 0.25);
  EstimatorSettings st;
  st.conv.delta = 1e-5;
  const std::vector<SpreadParams> sp{p};
  const MaxMomentSeries s = moment_series(sp, CorrelationSpec::identity(1), grid, st);
  ASSERT_EQ(s.size(), grid.size());
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const double mu = spread_mean(p, grid[k]);
    if (k == 0) {
      EXPECT_DOUBLE_EQ(s.points[k].mean, 0.003);
      continue;
    }
    const double sd = std::sqrt(spread_variance(p, grid[k]));
    EXPECT_NEAR(s.points[k].mean, oracle::max0_moment(mu, sd, 1), 1e-8) << "t = " << grid[k];
    EXPECT_NEAR(s.points[k].raw_second, oracle::max0_moment(mu, sd, 2), 1e-8) << "t = " << grid[k];
    EXPECT_NEAR(s.points[k].probs[0] + s.points[k].residual, 1.0, 1e-8);
    EXPECT_NEAR(s.points[k].probs[0], oracle::Phi(mu / sd), 1e-8);
  }
}

TEST(MomentSeries, TableSpreadsInvariants) {
  const std::vector<SpreadParams> sp{kS1, kS2};
  const TimeGrid grid(20.0, 0.1);
  const MaxMomentSeries s = moment_series(sp, CorrelationSpec::uniform(2, 0.3), grid);
  for (const TimePointMoments& p : s.points) {
    const double mu_max = std::max({0.0, spread_mean(kS1, p.t), spread_mean(kS2, p.t)});
    EXPECT_GE(p.mean, mu_max - 1e-12);
    EXPECT_GE(p.variance, 0.0);
    double total = p.residual;
    for (double v : p.probs) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
      total += v;
    }
    EXPECT_NEAR(total, 1.0, 1e-8);
  }
  // Grid counts on [0, L(T)] near the published 818 (T = 5) and 1483 (T = 20).
  EXPECT_NEAR(static_cast<double>(s.points[50].grid_points), 818.0, 0.25 * 818.0);
  EXPECT_NEAR(static_cast<double>(s.points[200].grid_points), 1483.0, 0.25 * 1483.0);
}

TEST(Estimate, DeterministicLimit) {
  const SpreadParams a{0.5, 0.0, ThetaCurve(-0.002), 0.003};
  const SpreadParams b{0.2, 0.0, ThetaCurve(0.001), -0.001};
  const std::vector<SpreadParams> sp{a, b};
  const TimeGrid grid(10.0, 0.1);
  double sum = 0.0;
  for (std::size_t k = 0; k < grid.steps(); ++k)
    sum += std::max({0.0, spread_mean(a, grid[k]), spread_mean(b, grid[k])}) * grid.dt();
  const double expected = std::exp(-sum);
  const EstimateReport r = estimate(sp, CorrelationSpec::uniform(2, 0.3), grid);
  EXPECT_NEAR(r.cf1, expected, 1e-12);
  EXPECT_NEAR(r.cf2_diffusion, expected, 1e-12);
  EXPECT_NEAR(r.cf2_mr, expected, 1e-12);
  EXPECT_EQ(r.psi, 0.0);
  EXPECT_EQ(r.chi, 0.0);
  McSettings mc;
  mc.n_paths = 1000;
  const McEstimate df = mc_discount_factor(sp, CorrelationSpec::uniform(2, 0.3), grid, mc);
  EXPECT_NEAR(df.value, expected, 1e-12);
  EXPECT_NEAR(df.std_error, 0.0, 1e-14);
}

TEST(Estimate, SmallVolatilityApproachesDeterministicLimit) {
  const TimeGrid grid(10.0, 0.1);
  auto at = [&](double xi) {
    const std::vector<SpreadParams> sp{{0.5, xi, ThetaCurve(-0.002), 0.003}, {0.2, xi, ThetaCurve(0.004), -0.001}};
    EstimatorSettings st;
    st.conv.delta = 1e-6;
    return estimate(sp, CorrelationSpec::uniform(2, 0.3), grid, st);
  };
  const EstimateReport det = at(0.0);
  const EstimateReport small = at(1e-5);
  EXPECT_NEAR(small.cf1, det.cf1, 1e-6);
  EXPECT_NEAR(small.cf2_mr, det.cf2_mr, 1e-6);
  EXPECT_NEAR(small.cf2_diffusion, det.cf2_diffusion, 1e-6);
}

TEST(Estimate, SecondOrderRaisesFirstOrder) {
  const std::vector<SpreadParams> sp{kS1, kS2};
  const TimeGrid grid(20.0, 0.1);
  const EstimateReport r = estimate(sp, CorrelationSpec::uniform(2, 0.3), grid);
  EXPECT_NEAR(r.cf1, std::exp(-r.expectation_integral), 1e-15);
  EXPECT_NEAR(r.cf2_diffusion, r.cf1 * (1.0 + 0.5 * r.psi), 1e-15);
  EXPECT_NEAR(r.cf2_mr, r.cf1 * (1.0 + 0.5 * r.chi), 1e-15);
  EXPECT_GT(r.cf2_diffusion, r.cf1);
  EXPECT_GT(r.cf2_mr, r.cf1);
  EXPECT_GT(r.psi, 0.0);
  EXPECT_GT(r.chi, 0.0);
}

TEST(Estimate, BaseDiscountScalesReport) {
  const std::vector<SpreadParams> sp{kS1};
  const TimeGrid grid(2.0, 0.1);
  EstimatorSettings st;
  st.base_discount = 0.9;
  const EstimateReport r = estimate(sp, CorrelationSpec::identity(1), grid, st);
  EXPECT_DOUBLE_EQ(r.discounted(r.cf1), 0.9 * r.cf1);
}

TEST(Estimate, SelectionSkipsWork) {
  const std::vector<SpreadParams> sp{kS1, kS2};
  const TimeGrid grid(5.0, 0.1);
  EstimatorSettings st;
  st.select = {true, false};
  const EstimateReport r = estimate(sp, CorrelationSpec::uniform(2, 0.3), grid, st);
  EXPECT_FALSE(r.series.has_probabilities);
  EXPECT_GT(r.psi, 0.0);
}

TEST(Estimate, ThreadCountDoesNotChangeResults) {
  const std::vector<SpreadParams> sp{kS1, kS2};
  const TimeGrid grid(5.0, 0.1);
  EstimatorSettings one, four;
  one.threads = 1;
  four.threads = 4;
  const EstimateReport a = estimate(sp, CorrelationSpec::uniform(2, 0.3), grid, one);
  const EstimateReport b = estimate(sp, CorrelationSpec::uniform(2, 0.3), grid, four);
  EXPECT_EQ(a.cf1, b.cf1);
  EXPECT_EQ(a.psi, b.psi);
  EXPECT_EQ(a.chi, b.chi);
}

TEST(Estimate, RejectsNegativeCorrelationInBaseModel) {
  const std::vector<SpreadParams> sp{kS1, kS2};
  EXPECT_THROW(estimate(sp, CorrelationSpec::uniform(2, -0.2), TimeGrid(5.0, 0.1)), InputError);
  EXPECT_THROW(estimate(sp, CorrelationSpec::uniform(3, 0.2), TimeGrid(5.0, 0.1)), InputError);
}

TEST(Estimate, TwoGroupSplitRuns) {
  const std::vector<SpreadParams> sp{kS1, kS2, {0.0079, 0.002, ThetaCurve(0.0011), 0.0011}};
  const TimeGrid grid(5.0, 0.25);
  EstimatorSettings st;
  st.groups = GroupSplit{{0, 0, 1}, 0.2};
  const EstimateReport r = estimate(sp, CorrelationSpec::uniform(3, 0.3), grid, st);
  EXPECT_GT(r.cf1, 0.0);
  EXPECT_LT(r.cf1, 1.0);
  EXPECT_GE(r.cf2_mr, r.cf1);
}

TEST(AdmissibleBound, MatchesClampingBoundary) {
  const std::vector<SpreadParams> sp{{0.1, 0.001, ThetaCurve(0.0), 0.0}, {0.1, 0.004, ThetaCurve(0.0), 0.0}};
  const TimeGrid grid(5.0, 0.5);
  // Equal kappas: gamma = rho * 4, so the bound is (1 - eps) / 4.
  EXPECT_NEAR(admissible_correlation_bound(sp, grid), (1.0 - 1e-10) / 4.0, 1e-12);
  const std::vector<SpreadParams> table{kS1, kS2};
  EXPECT_GT(admissible_correlation_bound(table, TimeGrid(20.0, 0.1)), 0.75);
}
