#include "shwmpc/plant.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"

namespace shwmpc {
namespace {

TEST(Plant, ZeroExcitationSitsAtEquilibrium) {
  for (PlantMode mode : {PlantMode::kRealizable, PlantMode::kMisspecified}) {
    SyntheticPlant plant(PlantConfig{mode});
    ExcitationConfig exc;
    exc.zero = true;
    const TimeSeriesDataset ds = generate_dataset(plant, exc, 20.0, 0.1);
    const Record& last = ds.records.back();
    EXPECT_LT(last.ydot.norm(), 1e-8);
    EXPECT_LT((last.y - ds.records.front().y).norm(), 1e-8);
    EXPECT_EQ(last.ddot.norm(), 0.0);
  }
}

TEST(Plant, ExcitationCoversInputBox) {
  SyntheticPlant plant(PlantConfig{});
  const TimeSeriesDataset ds = generate_dataset(plant, ExcitationConfig{}, 400.0, 0.1);
  Vector lo = ds.records[0].u, hi = lo;
  for (const Record& r : ds.records) {
    lo = lo.cwiseMin(r.u);
    hi = hi.cwiseMax(r.u);
  }
  const Vector span = hi - lo;
  for (int k = 0; k < 3; ++k) EXPECT_GE(span(k), 0.8 * 2.0) << "channel " << k;
  EXPECT_GE(lo.minCoeff(), -1.0);
  EXPECT_LE(hi.maxCoeff(), 1.0);
}

TEST(Plant, DatasetIsReproducible) {
  SyntheticPlant plant(PlantConfig{});
  NoiseConfig noise{0.01, 0.01, 9};
  const TimeSeriesDataset a = generate_dataset(plant, ExcitationConfig{}, 10.0, 0.1, noise);
  const TimeSeriesDataset b = generate_dataset(plant, ExcitationConfig{}, 10.0, 0.1, noise);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.records[i].y, b.records[i].y);
    EXPECT_EQ(a.records[i].z, b.records[i].z);
    EXPECT_EQ(a.records[i].u, b.records[i].u);
  }
}

TEST(Plant, DerivativesMatchDifferencesToSecondOrder) {
  for (PlantMode mode : {PlantMode::kRealizable, PlantMode::kMisspecified}) {
    SyntheticPlant plant(PlantConfig{mode});
    auto worst = [&](double dt) {
      const TimeSeriesDataset ds = generate_dataset(plant, ExcitationConfig{}, 20.0, dt);
      double err = 0.0;
      for (std::size_t i = 1; i + 1 < ds.size(); ++i) {
        const auto& r = ds.records;
        const Vector cd = (r[i + 1].y - r[i - 1].y) / (2 * dt);
        err = std::max(err, (cd - r[i].ydot).cwiseAbs().maxCoeff());
      }
      return err;
    };
    const double coarse = worst(0.02);
    const double fine = worst(0.01);
    EXPECT_LT(coarse, 0.05);
    EXPECT_GT(coarse / fine, 3.0);
  }
}

TEST(Plant, MisspecifiedDriftIsDissipative) {
  SyntheticPlant plant(PlantConfig{PlantMode::kMisspecified});
  std::mt19937_64 rng(3);
  for (int i = 0; i < 1000; ++i) {
    Vector x = oracle::random_vector(3, rng);
    x *= 5.0 / x.norm();
    const Vector u = oracle::random_vector(3, rng).cwiseMax(-1.0).cwiseMin(1.0);
    const Vector d = oracle::random_vector(2, rng).cwiseMax(-1.0).cwiseMin(1.0);
    EXPECT_LT(x.dot(plant.rhs(x, u, d)), 0.0);
  }
}

TEST(Plant, Rk4IsFourthOrder) {
  SyntheticPlant plant(PlantConfig{PlantMode::kMisspecified});
  const Vector x0 = Vector::Constant(3, 1.5);
  const Vector u = Vector::Constant(3, 0.4);
  auto d = [](double t) { return Vector::Constant(2, std::sin(t)); };
  auto run = [&](int steps) {
    Vector x = x0;
    const double h = 2.0 / steps;
    for (int k = 0; k < steps; ++k) x = plant.rk4_step(x, u, d, k * h, h);
    return x;
  };
  const Vector ref = run(4096);
  const double e1 = (run(16) - ref).norm();
  const double e2 = (run(32) - ref).norm();
  EXPECT_GT(e1 / e2, 12.0);
  EXPECT_LT(e1 / e2, 20.0);
}

TEST(Plant, ConstantInputClosedLoopMatchesIndependentIntegration) {
  SyntheticPlant plant(PlantConfig{});
  Scenario sc;
  sc.reference = [](double) { return Vector::Zero(3); };
  sc.disturbance = [](double t) { return Vector::Constant(2, 0.3 * std::sin(0.5 * t)); };
  sc.x0 = Vector::Constant(3, 0.2);
  const Vector u = Vector::Constant(3, 0.5);
  const TrajectoryLog log = closed_loop(
      plant, [&](double, const Vector&, const Vector&, const Vector&, const Vector&) { return u; },
      sc, 2.0, 0.1);
  ASSERT_FALSE(log.aborted);
  ASSERT_EQ(log.t.size(), 21u);
  Vector x = sc.x0;
  const double h = 0.1 / 200;
  for (int k = 0; k < 4000; ++k) x = plant.rk4_step(x, u, sc.disturbance, k * h, h);
  EXPECT_LT((log.x.back() - x).norm(), 1e-9);
  EXPECT_LT((log.y.back() - plant.output_y(x, sc.disturbance(2.0))).norm(), 1e-8);
}

TEST(Plant, ControllerFailureAbortsWithPartialLog) {
  SyntheticPlant plant(PlantConfig{});
  Scenario sc;
  sc.reference = [](double) { return Vector::Zero(3); };
  sc.disturbance = [](double) { return Vector::Zero(2); };
  const TrajectoryLog log = closed_loop(
      plant,
      [](double t, const Vector&, const Vector&, const Vector&, const Vector&) -> Vector {
        if (t > 0.45) throw SolverError("boom");
        return Vector::Zero(3);
      },
      sc, 2.0, 0.1);
  EXPECT_TRUE(log.aborted);
  EXPECT_EQ(log.t.size(), 5u);
  EXPECT_EQ(log.error, "boom");
}

TEST(Plant, RealizableOutputsAreNormalized) {
  SyntheticPlant plant(PlantConfig{});
  const TimeSeriesDataset ds = generate_dataset(plant, ExcitationConfig{}, 200.0, 0.1);
  for (const Record& r : ds.records) EXPECT_LT(r.y.cwiseAbs().maxCoeff(), 2.0);
}

}  // namespace
}  // namespace shwmpc
