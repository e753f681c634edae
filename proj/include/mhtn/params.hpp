#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mhtn/matrix.hpp"

namespace mhtn {

// One named bundle of weight/bias matrices sharing a learning rate.
struct ParamGroup {
  std::string name;
  std::vector<Matrix> mats;
  double learning_rate = 0.01;
  double weight_decay = 0.0005;
};

// theta <- theta - mu * (grad + weight_decay * theta), mu = lr * lr_scale.
// Shapes must match; all matrices must stay finite.
void sgd_step(ParamGroup& group, const std::vector<Matrix>& grads,
              double lr_scale);

// Uniform in +-sqrt(6 / (fan_in + fan_out)), filled row-major from the seed.
Matrix glorot_uniform(int rows, int cols, std::uint64_t seed);

}  // namespace mhtn
