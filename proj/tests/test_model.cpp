#include <string>

#include "doctest.h"
#include "stnngp/model.hpp"
#include "testutil.hpp"

using namespace stnngp;

namespace {

// Five stations observed over a few years, each row one station-year.
SpatioTemporalDataset station_data(int n_stations, int n_years, unsigned seed) {
  const Matrix stations = testutil::random_points(n_stations, 2, seed);
  const int n = n_stations * n_years;
  SpatioTemporalDataset data;
  data.coords.resize(n, 2);
  data.times.resize(static_cast<std::size_t>(n));
  data.response.resize(n);
  data.covariates.resize(n, 1);
  data.covariate_names = {"depth"};
  data.n_times = n_years;
  for (int t = 0; t < n_years; ++t)
    data.time_labels.push_back(2000 + t);
  int row = 0;
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int t = 0; t < n_years; ++t) {
    for (int s = 0; s < n_stations; ++s) {
      data.coords.row(row) = stations.row(s);
      data.times[static_cast<std::size_t>(row)] = t;
      data.response(row) = noise(rng);
      data.covariates(row, 0) = noise(rng);
      ++row;
    }
  }
  return data;
}

int find_reference_node(const ModelFrame& frame, const Vector& location) {
  for (Eigen::Index i = 0; i < frame.refs.locations.rows(); ++i)
    if ((frame.refs.locations.row(i).transpose() - location).norm() == 0.0)
      return static_cast<int>(i);
  return -1;
}

}  // namespace

TEST_CASE("default frame aliases every row to a reference effect") {
  SpatioTemporalDataset data = station_data(5, 3, 11u);
  const ModelFrame frame = build_frame(data, {});
  CHECK(frame.refs.locations.rows() == 5);
  CHECK(frame.transient_locations.rows() == 0);
  CHECK(frame.layout.n_times() == 3);
  CHECK(frame.n_effects() == 3 * (5 + 1));
  for (int i = 0; i < data.n_rows(); ++i) {
    const int t = data.times[static_cast<std::size_t>(i)];
    const int node = find_reference_node(frame, data.coords.row(i).transpose());
    REQUIRE(node >= 0);
    CHECK(frame.row_effect[static_cast<std::size_t>(i)] == frame.layout.w_index(t, node));
  }
}

TEST_CASE("rows at the same place and time share one effect") {
  SpatioTemporalDataset data = station_data(4, 2, 23u);
  // duplicate the first row
  const int n = data.n_rows();
  data.coords.conservativeResize(n + 1, 2);
  data.coords.row(n) = data.coords.row(0);
  data.times.push_back(data.times[0]);
  data.response.conservativeResize(n + 1);
  data.response(n) = 0.5;
  data.covariates.conservativeResize(n + 1, 1);
  data.covariates(n, 0) = -2.0;
  const ModelFrame frame = build_frame(data, {});
  CHECK(frame.row_effect.front() == frame.row_effect.back());
  CHECK(frame.refs.locations.rows() == 4);
}

TEST_CASE("a custom reference set turns off-reference rows into transients") {
  SpatioTemporalDataset data = station_data(6, 2, 31u);
  // references: all stations except the one in data row 2
  const Vector dropped = data.coords.row(2).transpose();
  Matrix refs(5, 2);
  int out = 0;
  for (int s = 0; s < 6; ++s) {
    const Vector loc = data.coords.row(s).transpose();
    if ((loc - dropped).norm() == 0.0) continue;
    refs.row(out++) = loc.transpose();
  }
  REQUIRE(out == 5);

  const ModelFrame frame = build_frame(data, {}, refs);
  CHECK(frame.refs.locations.rows() == 5);
  REQUIRE(frame.transient_locations.rows() == 1);
  CHECK((frame.transient_locations.row(0).transpose() - dropped).norm() == 0.0);
  REQUIRE(frame.systems.transients.size() == 1);

  // the dropped station appears at both times, so its transient is active twice
  REQUIRE(frame.layout.active.size() == 2);
  CHECK(frame.layout.active[0] == std::vector<int>{0});
  CHECK(frame.layout.active[1] == std::vector<int>{0});
  CHECK(frame.n_effects() == 2 * (5 + 1 + 1));

  for (int i = 0; i < data.n_rows(); ++i) {
    const int t = data.times[static_cast<std::size_t>(i)];
    const Vector loc = data.coords.row(i).transpose();
    const int e = frame.row_effect[static_cast<std::size_t>(i)];
    if ((loc - dropped).norm() == 0.0) {
      CHECK(e == frame.layout.v_index(t, 0));
    } else {
      CHECK(e == frame.layout.w_index(t, find_reference_node(frame, loc)));
    }
  }
}

TEST_CASE("a transient observed in one year only is active in that year") {
  SpatioTemporalDataset data = station_data(5, 1, 41u);
  data.n_times = 3;
  data.time_labels = {1990, 1991, 1992};
  for (auto& t : data.times) t = 1;  // every row in the middle year
  Matrix refs = data.coords.topRows(4);
  const ModelFrame frame = build_frame(data, {}, refs);
  CHECK(frame.layout.active[0].empty());
  CHECK(frame.layout.active[1] == std::vector<int>{0});
  CHECK(frame.layout.active[2].empty());
  // gap years still carry reference and temporal effects
  CHECK(frame.n_effects() == 3 * (4 + 1) + 1);
}

TEST_CASE("times default to consecutive labels when not given") {
  SpatioTemporalDataset data = station_data(3, 2, 53u);
  data.n_times = 0;
  data.time_labels.clear();
  const ModelFrame frame = build_frame(data, {});
  CHECK(frame.data.n_times == 2);
  CHECK(frame.data.time_labels == std::vector<long long>{0, 1});
}

TEST_CASE("frame validation names the offending row or column") {
  ModelSettings poisson_settings;
  poisson_settings.family = Family::poisson;
  poisson_settings.link = Link::log;

  SpatioTemporalDataset data = station_data(4, 2, 61u);
  data.response = data.response.array().abs().round();
  data.response(5) = -3.0;
  try {
    build_frame(data, poisson_settings);
    CHECK(false);
  } catch (const DataError& err) {
    CHECK(std::string(err.what()).find("row 6") != std::string::npos);
  }

  SpatioTemporalDataset flat = station_data(4, 2, 67u);
  flat.covariates.setConstant(2.0);
  CHECK_THROWS_WITH_AS(build_frame(flat, {}),
                       "covariate 'depth' is constant; its effect would alias the process mean",
                       DataError);

  SpatioTemporalDataset dup = station_data(4, 2, 71u);
  dup.covariates.conservativeResize(dup.n_rows(), 2);
  dup.covariates.col(1) = dup.response;
  dup.covariate_names = {"depth", "depth"};
  CHECK_THROWS_AS(build_frame(dup, {}), DataError);

  SpatioTemporalDataset bad_time = station_data(4, 2, 73u);
  bad_time.times[3] = 7;
  CHECK_THROWS_AS(build_frame(bad_time, {}), DataError);

  SpatioTemporalDataset nan_coord = station_data(4, 2, 79u);
  nan_coord.coords(1, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(build_frame(nan_coord, {}), DataError);

  ModelSettings mismatched;
  mismatched.family = Family::poisson;
  mismatched.link = Link::identity;
  SpatioTemporalDataset counts = station_data(4, 2, 83u);
  counts.response = counts.response.array().abs().round();
  CHECK_THROWS_AS(build_frame(counts, mismatched), DataError);
}

TEST_CASE("reference locations from another dimension are rejected") {
  SpatioTemporalDataset data = station_data(4, 2, 89u);
  Matrix refs(2, 3);
  refs.setZero();
  CHECK_THROWS_AS(build_frame(data, {}, refs), DataError);
}
