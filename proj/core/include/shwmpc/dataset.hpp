#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "shwmpc/linalg.hpp"
#include "shwmpc/shw_model.hpp"

namespace shwmpc {

struct Record {
  double t = 0.0;
  Vector u, d, y, z;
  Vector ydot, ddot;  // empty when the dataset carries no derivatives
};

struct TimeSeriesDataset {
  ShwDims dims;
  std::vector<Record> records;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
  bool has_derivatives() const {
    return !records.empty() && records.front().ydot.size() > 0;
  }

  /// Uniform dimensions, strictly increasing t, derivatives all or none.
  /// Throws DimensionError / Error.
  void validate() const;

  /// Records [begin, end).
  TimeSeriesDataset slice(std::size_t begin, std::size_t end) const;
};

/// Fills ydot/ddot by central differences over the series (one-sided at the
/// ends). Overwrites derivatives that are already present.
void difference_derivatives(TimeSeriesDataset& ds);

/// Training / validation split: the last `fraction` of records (by time)
/// is held out.
std::pair<TimeSeriesDataset, TimeSeriesDataset> split_tail(const TimeSeriesDataset& ds,
                                                           double fraction);

/// CSV with header t,u_1..,d_1..,y_1..,z_1..[,dd_1..,dy_1..]. Lines starting
/// with '#' before the header carry metadata and are skipped on read.
void write_dataset_csv(std::ostream& os, const TimeSeriesDataset& ds,
                       const std::string& comment = {});
void write_dataset_csv(const std::string& path, const TimeSeriesDataset& ds,
                       const std::string& comment = {});
TimeSeriesDataset read_dataset_csv(std::istream& is);
TimeSeriesDataset read_dataset_csv(const std::string& path);

/// Shortest round-trip decimal representation of a double.
std::string format_double(double v);

}  // namespace shwmpc
