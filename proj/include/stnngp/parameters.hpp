#pragma once

#include <string>
#include <vector>

#include "stnngp/types.hpp"

namespace stnngp {

/// Scale on which the outer optimizer moves a parameter: positive parameters
/// on the log scale, correlations through atanh, everything else as is.
enum class Transform { identity, positive, correlation };

double to_unconstrained(double value, Transform transform);
double from_unconstrained(double x, Transform transform);

/// d(natural value) / d(unconstrained value) at the unconstrained point x.
/// Standard errors estimated on the unconstrained scale are multiplied by
/// this to land on the natural scale.
double from_unconstrained_derivative(double x, Transform transform);

struct Parameter {
  std::string name;
  double value = 0.0;
  Transform transform = Transform::identity;
  bool fixed = false;
  double se = 0.0;
};

/// Named model parameters in a fixed order. The order determines the layout
/// of the packed free vector, so reports and optimizer traces line up.
struct ParameterSet {
  std::vector<Parameter> items;

  void add(Parameter p);
  bool has(const std::string& name) const;
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  double value_of(const std::string& name) const { return at(name).value; }

  std::vector<int> free_indices() const;
  int n_free() const { return static_cast<int>(free_indices().size()); }

  /// Unconstrained values of the free parameters, in item order.
  Vector pack_free() const;
  void unpack_free(const Vector& x);
};

}  // namespace stnngp
