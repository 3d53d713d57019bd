#pragma once

#include <string>
#include <vector>

#include "stnngp/covariance.hpp"
#include "stnngp/families.hpp"
#include "stnngp/graph.hpp"
#include "stnngp/process.hpp"
#include "stnngp/types.hpp"

namespace stnngp {

/// Observations with 0-based internal time indices. time_labels maps an
/// internal index back to the user's label; internal indices with no data
/// rows are gap times that still carry random effects. When n_times is 0 the
/// frame builder derives it from the largest index and labels the times
/// 0..T-1.
struct SpatioTemporalDataset {
  Matrix coords;                       // n_rows x dim
  std::vector<int> times;              // per row
  Vector response;
  Matrix covariates;                   // n_rows x p, p may be 0
  std::vector<std::string> covariate_names;
  int n_times = 0;
  std::vector<long long> time_labels;  // size n_times

  int n_rows() const { return static_cast<int>(coords.rows()); }
  int n_covariates() const { return static_cast<int>(covariates.cols()); }
};

struct ModelSettings {
  Family family = Family::gaussian;
  Link link = Link::identity;
  CovFamily covariance = CovFamily::exponential;
  double smoothness = 0.5;
  int n_parents = 15;
  DistanceMetric metric = DistanceMetric::euclidean;
};

void validate(const SpatioTemporalDataset& data, const ModelSettings& settings);

/// Everything a fit needs that depends on the data and geometry but not on
/// parameter values: the ordered reference set, its neighbour graph, the
/// solved kriging systems, the unit-scale calibration, the effect layout,
/// and the map from data rows into the stacked effect vector.
struct ModelFrame {
  SpatioTemporalDataset data;
  ModelSettings settings;
  ReferenceSet refs;
  NeighbourDag dag;
  Matrix transient_locations;   // one row per off-reference location
  SpatialSystems systems;
  Calibration geometry;         // calibrated at unit spatial sd
  EffectLayout layout;
  std::vector<int> row_effect;  // data row -> stacked index, -1 for none

  CovarianceSpec covariance_spec(double spatial_sd = 1.0) const {
    return {settings.covariance, settings.smoothness, spatial_sd};
  }
  int n_effects() const { return layout.size(); }
};

/// Build the frame with the reference set taken from the unique data
/// locations. Every observation then aliases a reference effect.
ModelFrame build_frame(SpatioTemporalDataset data, const ModelSettings& settings);

/// Build the frame over a caller-supplied reference set. Data locations not
/// exactly matching a reference location get transient effects, active only
/// at the times where they are observed.
ModelFrame build_frame(SpatioTemporalDataset data, const ModelSettings& settings,
                       const Matrix& reference_locations);

}  // namespace stnngp
