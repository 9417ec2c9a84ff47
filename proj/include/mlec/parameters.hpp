#pragma once

#include <string>
#include <vector>

#include "mlec/tensor.hpp"

namespace mlec {

class Rng;

/// A named trainable leaf. Frozen parameters still take part in the forward
/// pass and receive gradients, but optimizers skip them.
struct Parameter {
  std::string name;
  Tensor value;
  bool frozen = false;
};

using ParameterRefs = std::vector<Parameter*>;

Parameter make_parameter(std::string name, Tensor value);
/// U(-bound, bound) values.
Tensor uniform_init(Shape shape, double bound, Rng& rng);
/// N(0, stddev^2) values.
Tensor normal_init(Shape shape, double stddev, Rng& rng);

}  // namespace mlec
