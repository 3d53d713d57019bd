#include "stnngp/parameters.hpp"

#include <algorithm>
#include <cmath>

namespace stnngp {

double to_unconstrained(double value, Transform transform) {
  switch (transform) {
    case Transform::identity:
      return value;
    case Transform::positive:
      if (!(value > 0.0)) throw DataError("value must be positive");
      return std::log(value);
    case Transform::correlation:
      if (!(std::abs(value) < 1.0)) throw DataError("value must lie inside (-1, 1)");
      return std::atanh(value);
  }
  throw DataError("unknown transform");
}

double from_unconstrained(double x, Transform transform) {
  switch (transform) {
    case Transform::identity:
      return x;
    case Transform::positive:
      // Clamp so a wandering optimizer cannot overflow to infinity.
      return std::exp(std::clamp(x, -700.0, 700.0));
    case Transform::correlation: {
      const double limit = 1.0 - 1e-12;
      return std::clamp(std::tanh(x), -limit, limit);
    }
  }
  throw DataError("unknown transform");
}

double from_unconstrained_derivative(double x, Transform transform) {
  switch (transform) {
    case Transform::identity:
      return 1.0;
    case Transform::positive:
      return from_unconstrained(x, Transform::positive);
    case Transform::correlation: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
  }
  throw DataError("unknown transform");
}

void ParameterSet::add(Parameter p) {
  if (p.name.empty()) throw DataError("parameter needs a name");
  if (has(p.name)) throw DataError("duplicate parameter '" + p.name + "'");
  items.push_back(std::move(p));
}

bool ParameterSet::has(const std::string& name) const {
  return std::any_of(items.begin(), items.end(),
                     [&](const Parameter& p) { return p.name == name; });
}

Parameter& ParameterSet::at(const std::string& name) {
  for (Parameter& p : items)
    if (p.name == name) return p;
  throw DataError("unknown parameter '" + name + "'");
}

const Parameter& ParameterSet::at(const std::string& name) const {
  return const_cast<ParameterSet*>(this)->at(name);
}

std::vector<int> ParameterSet::free_indices() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < items.size(); ++i)
    if (!items[i].fixed) out.push_back(static_cast<int>(i));
  return out;
}

Vector ParameterSet::pack_free() const {
  const auto idx = free_indices();
  Vector x(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const Parameter& p = items[static_cast<std::size_t>(idx[k])];
    try {
      x(static_cast<Eigen::Index>(k)) = to_unconstrained(p.value, p.transform);
    } catch (const DataError& err) {
      throw DataError("parameter '" + p.name + "': " + err.what());
    }
  }
  return x;
}

void ParameterSet::unpack_free(const Vector& x) {
  const auto idx = free_indices();
  if (x.size() != static_cast<Eigen::Index>(idx.size()))
    throw DataError("free parameter vector has the wrong length");
  for (std::size_t k = 0; k < idx.size(); ++k) {
    Parameter& p = items[static_cast<std::size_t>(idx[k])];
    p.value = from_unconstrained(x(static_cast<Eigen::Index>(k)), p.transform);
  }
}

}  // namespace stnngp
