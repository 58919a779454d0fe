#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "clearir/schedule.hpp"

using namespace clearir;

TEST(LrAt, StartAndRestartBoundaries) {
  const CosineRestarts s{1e-4, 1000, 2.0, 0.01};
  EXPECT_DOUBLE_EQ(lr_at(0, s), 1e-4);
  EXPECT_DOUBLE_EQ(lr_at(1000, s), 1e-4);
  EXPECT_DOUBLE_EQ(lr_at(3000, s), 1e-4);  // second period has length 2000
  EXPECT_DOUBLE_EQ(lr_at(7000, s), 1e-4);
  EXPECT_LT(lr_at(2999, s), 1e-4 * 0.0101);
}

TEST(LrAt, EndOfFirstPeriodNearFloor) {
  const CosineRestarts s{1e-3, 1000, 2.0, 0.01};
  const double floor = 0.01 * 1e-3;
  EXPECT_NEAR(lr_at(999, s), floor, 0.01 * floor);
  const double t = 999.0 / 1000.0;
  EXPECT_DOUBLE_EQ(lr_at(999, s), 1e-3 * (0.01 + 0.99 * 0.5 * (1.0 + std::cos(std::numbers::pi * t))));
}

TEST(LrAt, BoundedAndContinuousWithinPeriods) {
  const CosineRestarts s{2e-4, 37, 2.0, 0.05};
  double prev = lr_at(0, s);
  for (std::int64_t step = 1; step < 37 * 15; ++step) {
    const double v = lr_at(step, s);
    EXPECT_GE(v, 0.05 * 2e-4 * (1 - 1e-12));
    EXPECT_LE(v, 2e-4 * (1 + 1e-12));
    const PeriodPosition p = period_containing(step, s);
    if (p.start != step) {
      EXPECT_LE(v, prev);  // monotone decay inside a period
      EXPECT_LT(prev - v, 2e-4 * std::numbers::pi / static_cast<double>(p.length));
    } else {
      EXPECT_DOUBLE_EQ(v, 2e-4);
    }
    prev = v;
  }
}

TEST(LrAt, PeriodLengths) {
  const CosineRestarts s{1.0, 10, 2.0, 0.0};
  EXPECT_EQ(period_containing(9, s).start, 0);
  EXPECT_EQ(period_containing(10, s).length, 20);
  EXPECT_EQ(period_containing(30, s).length, 40);
  EXPECT_THROW(lr_at(-1, s), ParameterError);
  EXPECT_THROW((CosineRestarts{0.0, 10, 2.0, 0.0}.validate()), ConfigError);
  EXPECT_THROW((CosineRestarts{1.0, 0, 2.0, 0.0}.validate()), ConfigError);
}

TEST(Adam, FirstStepMatchesClosedForm) {
  Param<double> p("p", 3);
  p.value = {1.0, -2.0, 0.5};
  p.grad = {0.3, -4.0, 1e-3};
  const std::vector<double> start = p.value, g = p.grad;
  Adam<double> opt;
  opt.step({&p}, 0.01);
  // Bias-corrected step size with epsilon added to sqrt(v) of the raw
  // moment: lr * sqrt(1-b2)/(1-b1) * m / (sqrt(v) + eps).
  for (std::size_t i = 0; i < 3; ++i) {
    const double m = 0.1 * g[i], v = 0.001 * g[i] * g[i];
    const double expect = start[i] - 0.01 * std::sqrt(0.001) / 0.1 * m / (std::sqrt(v) + 1e-7);
    EXPECT_NEAR(p.value[i], expect, 1e-15);
    EXPECT_NEAR(std::abs(p.value[i] - start[i]), 0.01, 5e-5);
  }
  EXPECT_EQ(opt.steps(), 1);
}

TEST(Adam, MinimizesQuadratic) {
  Param<double> p("p", 4);
  p.value = {5.0, -3.0, 0.0, 10.0};
  Adam<double> opt;
  for (int it = 0; it < 3000; ++it) {
    for (std::size_t i = 0; i < 4; ++i) p.grad[i] = 2.0 * (p.value[i] - 1.5);
    opt.step({&p}, 0.05);
  }
  for (double v : p.value) EXPECT_NEAR(v, 1.5, 1e-3);
}

TEST(EarlyStopping, StopsPatienceEpochsAfterBest) {
  EarlyStopping es(3);
  const double vals[] = {5.0, 4.0, 4.5, 3.0, 3.0, 3.5, 3.2, 9.0};
  int stopped = 0;
  for (int e = 1; e <= 8; ++e) {
    es.update(e, vals[e - 1]);
    if (es.should_stop()) {
      stopped = e;
      break;
    }
  }
  EXPECT_EQ(es.best_epoch(), 4);
  EXPECT_EQ(stopped, 7);
  EXPECT_DOUBLE_EQ(es.best(), 3.0);
  EXPECT_THROW(EarlyStopping(0), ConfigError);
}
