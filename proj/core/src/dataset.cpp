#include "shwmpc/dataset.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "shwmpc/error.hpp"

namespace shwmpc {
namespace {

void check_dim(const Vector& v, int n, std::size_t index, const char* what) {
  if (v.size() != n) {
    std::ostringstream os;
    os << "dataset record " << index << ": " << what << " has dimension " << v.size()
       << ", expected " << n;
    throw DimensionError(os.str());
  }
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& s, std::size_t line) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    std::ostringstream os;
    os << "dataset csv line " << line << ": cannot parse '" << s << "'";
    throw Error(os.str());
  }
  return v;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void TimeSeriesDataset::validate() const {
  const bool derivs = has_derivatives();
  for (std::size_t i = 0; i < records.size(); ++i) {
    const Record& r = records[i];
    check_dim(r.u, dims.n_u, i, "u");
    check_dim(r.d, dims.n_d, i, "d");
    check_dim(r.y, dims.n_y, i, "y");
    check_dim(r.z, dims.n_z, i, "z");
    if (derivs) {
      check_dim(r.ydot, dims.n_y, i, "ydot");
      check_dim(r.ddot, dims.n_d, i, "ddot");
    } else if (r.ydot.size() != 0 || r.ddot.size() != 0) {
      throw Error("dataset: derivatives must be present on all records or none");
    }
    if (i > 0 && !(r.t > records[i - 1].t)) {
      std::ostringstream os;
      os << "dataset: time is not strictly increasing at record " << i;
      throw Error(os.str());
    }
  }
}

TimeSeriesDataset TimeSeriesDataset::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > records.size()) throw Error("dataset: slice out of range");
  TimeSeriesDataset out;
  out.dims = dims;
  out.records.assign(records.begin() + begin, records.begin() + end);
  return out;
}

void difference_derivatives(TimeSeriesDataset& ds) {
  const std::size_t n = ds.size();
  if (n < 2) throw Error("dataset: differencing needs at least two records");
  auto& r = ds.records;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i == 0 ? 0 : i - 1;
    const std::size_t hi = i + 1 == n ? n - 1 : i + 1;
    const double dt = r[hi].t - r[lo].t;
    r[i].ydot = (r[hi].y - r[lo].y) / dt;
    r[i].ddot = (r[hi].d - r[lo].d) / dt;
  }
}

std::pair<TimeSeriesDataset, TimeSeriesDataset> split_tail(const TimeSeriesDataset& ds,
                                                           double fraction) {
  if (!(fraction >= 0.0 && fraction < 1.0)) {
    throw ConfigError("validation fraction must lie in [0, 1)");
  }
  const auto n = ds.size();
  const auto n_val = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
  return {ds.slice(0, n - n_val), ds.slice(n - n_val, n)};
}

void write_dataset_csv(std::ostream& os, const TimeSeriesDataset& ds,
                       const std::string& comment) {
  if (!comment.empty()) os << "# " << comment << "\n";
  const auto& dm = ds.dims;
  os << "t";
  auto names = [&](const char* p, int n) {
    for (int k = 1; k <= n; ++k) os << ',' << p << k;
  };
  names("u_", dm.n_u);
  names("d_", dm.n_d);
  names("y_", dm.n_y);
  names("z_", dm.n_z);
  const bool derivs = ds.has_derivatives();
  if (derivs) {
    names("dd_", dm.n_d);
    names("dy_", dm.n_y);
  }
  os << "\n";
  auto vals = [&](const Vector& v) {
    for (Eigen::Index k = 0; k < v.size(); ++k) os << ',' << format_double(v(k));
  };
  for (const Record& r : ds.records) {
    os << format_double(r.t);
    vals(r.u);
    vals(r.d);
    vals(r.y);
    vals(r.z);
    if (derivs) {
      vals(r.ddot);
      vals(r.ydot);
    }
    os << "\n";
  }
}

void write_dataset_csv(const std::string& path, const TimeSeriesDataset& ds,
                       const std::string& comment) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path + "' for writing");
  write_dataset_csv(f, ds, comment);
  if (!f) throw Error("write to '" + path + "' failed");
}

TimeSeriesDataset read_dataset_csv(std::istream& is) {
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> header;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    header = split_csv_line(line);
    break;
  }
  if (header.empty() || header[0] != "t") throw Error("dataset csv: missing header row");

  // Column indices per prefix, ordered by suffix number.
  std::map<std::string, std::vector<int>> cols;
  for (std::size_t c = 1; c < header.size(); ++c) {
    const auto& h = header[c];
    const auto us = h.rfind('_');
    if (us == std::string::npos) throw Error("dataset csv: unexpected column '" + h + "'");
    const std::string prefix = h.substr(0, us);
    if (prefix != "u" && prefix != "d" && prefix != "y" && prefix != "z" && prefix != "dd" &&
        prefix != "dy" && prefix != "du") {
      throw Error("dataset csv: unexpected column '" + h + "'");
    }
    auto& v = cols[prefix];
    const int idx = std::stoi(h.substr(us + 1));
    if (idx != static_cast<int>(v.size()) + 1) {
      throw Error("dataset csv: columns for '" + prefix + "' out of order");
    }
    v.push_back(static_cast<int>(c));
  }
  TimeSeriesDataset ds;
  ds.dims = {static_cast<int>(cols["u"].size()), static_cast<int>(cols["y"].size()),
             static_cast<int>(cols["z"].size()), static_cast<int>(cols["d"].size())};
  const bool derivs = !cols["dy"].empty() || !cols["dd"].empty();
  if (derivs && (static_cast<int>(cols["dy"].size()) != ds.dims.n_y ||
                 static_cast<int>(cols["dd"].size()) != ds.dims.n_d)) {
    throw Error("dataset csv: incomplete derivative columns");
  }
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    if (f.size() != header.size()) {
      std::ostringstream os;
      os << "dataset csv line " << lineno << ": expected " << header.size()
         << " fields, got " << f.size();
      throw Error(os.str());
    }
    auto gather = [&](const std::vector<int>& idx) {
      Vector v(static_cast<Eigen::Index>(idx.size()));
      for (std::size_t k = 0; k < idx.size(); ++k) v(k) = parse_double(f[idx[k]], lineno);
      return v;
    };
    Record r;
    r.t = parse_double(f[0], lineno);
    r.u = gather(cols["u"]);
    r.d = gather(cols["d"]);
    r.y = gather(cols["y"]);
    r.z = gather(cols["z"]);
    if (derivs) {
      r.ydot = gather(cols["dy"]);
      r.ddot = gather(cols["dd"]);
    }
    ds.records.push_back(std::move(r));
  }
  ds.validate();
  return ds;
}

TimeSeriesDataset read_dataset_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open dataset '" + path + "'");
  return read_dataset_csv(f);
}

}  // namespace shwmpc
