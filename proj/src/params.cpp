#include "mhtn/params.hpp"

#include <cmath>
#include <cstring>

#include "mhtn/errors.hpp"
#include "mhtn/rng.hpp"

namespace mhtn {

double Rng::gaussian() {
  double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
  double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t salt) {
  std::uint64_t h = fnv1a64(&base, sizeof(base));
  h = fnv1a64(tag.data(), tag.size(), h);
  h = fnv1a64(&salt, sizeof(salt), h);
  return h;
}

Matrix glorot_uniform(int rows, int cols, std::uint64_t seed) {
  Rng rng(seed);
  double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = rng.uniform(-limit, limit);
  return m;
}

void sgd_step(ParamGroup& group, const std::vector<Matrix>& grads, double lr_scale) {
  if (grads.size() != group.mats.size())
    throw std::logic_error("sgd_step: gradient count does not match parameter count");
  double mu = group.learning_rate * lr_scale;
  for (std::size_t i = 0; i < group.mats.size(); ++i) {
    Matrix& m = group.mats[i];
    const Matrix& g = grads[i];
    if (g.rows() != m.rows() || g.cols() != m.cols())
      throw std::logic_error("sgd_step: gradient shape mismatch in group " + group.name);
    m -= mu * (g + group.weight_decay * m);
    if (!m.allFinite())
      throw NumericError("parameter group " + group.name + " became non-finite");
  }
}

}  // namespace mhtn
