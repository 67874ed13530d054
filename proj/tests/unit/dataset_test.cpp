#include "shwmpc/dataset.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "oracles.hpp"

namespace shwmpc {
namespace {

TimeSeriesDataset quadratic_series(std::size_t n, bool derivs) {
  TimeSeriesDataset ds;
  ds.dims = {1, 1, 1, 1};
  for (std::size_t k = 0; k < n; ++k) {
    const double t = 0.1 * static_cast<double>(k);
    Record r;
    r.t = t;
    r.u = Vector::Constant(1, std::sin(t));
    r.d = Vector::Constant(1, 3.0 * t);
    r.y = Vector::Constant(1, t * t);
    r.z = Vector::Constant(1, 1.0 / 3.0);
    if (derivs) {
      r.ydot = Vector::Constant(1, 2.0 * t);
      r.ddot = Vector::Constant(1, 3.0);
    }
    ds.records.push_back(r);
  }
  return ds;
}

TEST(Dataset, CsvRoundtripIsExact) {
  const TimeSeriesDataset ds = quadratic_series(25, true);
  std::stringstream ss;
  write_dataset_csv(ss, ds, "config_hash=abc seed=1");
  const TimeSeriesDataset back = read_dataset_csv(ss);
  ASSERT_EQ(back.size(), ds.size());
  ASSERT_TRUE(back.has_derivatives());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(back.records[i].t, ds.records[i].t);
    EXPECT_EQ(back.records[i].y, ds.records[i].y);
    EXPECT_EQ(back.records[i].z, ds.records[i].z);
    EXPECT_EQ(back.records[i].ydot, ds.records[i].ydot);
    EXPECT_EQ(back.records[i].ddot, ds.records[i].ddot);
  }
}

TEST(Dataset, CsvHeaderLayout) {
  TimeSeriesDataset ds = quadratic_series(2, true);
  std::stringstream ss;
  write_dataset_csv(ss, ds);
  std::string header;
  std::getline(ss, header);
  EXPECT_EQ(header, "t,u_1,d_1,y_1,z_1,dd_1,dy_1");
}

TEST(Dataset, CsvWithoutDerivatives) {
  std::stringstream ss("t,u_1,d_1,y_1,z_1\n0,1,2,3,4\n0.5,1,2,3,4\n");
  const TimeSeriesDataset ds = read_dataset_csv(ss);
  EXPECT_EQ(ds.size(), 2u);
  EXPECT_FALSE(ds.has_derivatives());
}

TEST(Dataset, CsvRejectsMalformedInput) {
  std::stringstream bad_field("t,u_1,d_1,y_1,z_1\n0,1,2,x,4\n");
  EXPECT_THROW(read_dataset_csv(bad_field), Error);
  std::stringstream short_row("t,u_1,d_1,y_1,z_1\n0,1,2\n");
  EXPECT_THROW(read_dataset_csv(short_row), Error);
  std::stringstream unknown("t,q_1\n0,1\n");
  EXPECT_THROW(read_dataset_csv(unknown), Error);
  std::stringstream no_header("");
  EXPECT_THROW(read_dataset_csv(no_header), Error);
}

TEST(Dataset, ValidateChecksTimeAndDimensions) {
  TimeSeriesDataset ds = quadratic_series(5, true);
  EXPECT_NO_THROW(ds.validate());
  ds.records[3].t = ds.records[2].t;
  EXPECT_THROW(ds.validate(), Error);
  ds = quadratic_series(5, true);
  ds.records[1].y = Vector::Zero(2);
  EXPECT_THROW(ds.validate(), DimensionError);
  ds = quadratic_series(5, true);
  ds.records[4].ydot.resize(0);
  ds.records[4].ddot.resize(0);
  EXPECT_THROW(ds.validate(), Error);
}

TEST(Dataset, CentralDifferencesExactForQuadratics) {
  TimeSeriesDataset ds = quadratic_series(30, false);
  difference_derivatives(ds);
  ASSERT_TRUE(ds.has_derivatives());
  for (std::size_t i = 1; i + 1 < ds.size(); ++i) {
    EXPECT_NEAR(ds.records[i].ydot(0), 2.0 * ds.records[i].t, 1e-12);
    EXPECT_NEAR(ds.records[i].ddot(0), 3.0, 1e-12);
  }
  // One-sided at the ends: first-order error of h.
  EXPECT_NEAR(ds.records[0].ydot(0), 0.1, 1e-12);
}

TEST(Dataset, SplitTailKeepsOrder) {
  const TimeSeriesDataset ds = quadratic_series(10, true);
  const auto [train, val] = split_tail(ds, 0.2);
  EXPECT_EQ(train.size(), 8u);
  EXPECT_EQ(val.size(), 2u);
  EXPECT_EQ(val.records[0].t, ds.records[8].t);
  EXPECT_THROW(split_tail(ds, 1.0), ConfigError);
}

}  // namespace
}  // namespace shwmpc
