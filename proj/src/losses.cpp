#include "mhtn/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mhtn/errors.hpp"

namespace mhtn {

void KernelSpec::validate() const {
  if (bandwidths.empty()) throw ConfigError("kernel needs at least one bandwidth");
  if (weights.size() != bandwidths.size())
    throw ConfigError("kernel weight count does not match bandwidth count");
  double total = 0.0;
  for (double s : bandwidths)
    if (!(s > 0.0)) throw ConfigError("kernel bandwidths must be > 0");
  for (double w : weights) {
    if (w < 0.0) throw ConfigError("kernel weights must be non-negative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("kernel weights must sum to 1");
}

KernelSpec KernelSpec::single(double bandwidth) {
  return KernelSpec{{bandwidth}, {1.0}};
}

KernelSpec KernelSpec::median_heuristic(const Matrix& a, const Matrix& b,
                                        const std::vector<double>& multipliers) {
  Matrix joined(a.rows() + b.rows(), a.cols());
  joined << a, b;
  std::vector<double> dists;
  dists.reserve(static_cast<std::size_t>(joined.rows()) * (joined.rows() - 1) / 2);
  for (Eigen::Index i = 0; i < joined.rows(); ++i)
    for (Eigen::Index j = i + 1; j < joined.rows(); ++j)
      dists.push_back((joined.row(i) - joined.row(j)).norm());
  double med = 1.0;
  if (!dists.empty()) {
    std::size_t mid = (dists.size() - 1) / 2;
    std::nth_element(dists.begin(), dists.begin() + mid, dists.end());
    med = dists[mid];
    if (!(med > 0.0)) med = 1.0;
  }
  KernelSpec spec;
  for (double m : multipliers) {
    spec.bandwidths.push_back(m * med);
    spec.weights.push_back(1.0 / static_cast<double>(multipliers.size()));
  }
  spec.validate();
  return spec;
}

KernelSpec KernelConfig::resolve(const Matrix& a, const Matrix& b) const {
  if (mode == Mode::fixed) return fixed;
  return KernelSpec::median_heuristic(a, b, median_multipliers);
}

namespace {

Matrix pairwise_sq_dists(const Matrix& a, const Matrix& b) {
  Matrix d(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j)
      d(i, j) = (a.row(i) - b.row(j)).squaredNorm();
  return d;
}

// K(i,j) = sum_k w_k exp(-d / (2 s_k^2)); D(i,j) = same weighted by 1/s_k^2,
// which is the factor the kernel derivative needs.
void kernel_sums(const Matrix& sqd, const KernelSpec& spec, Matrix& k, Matrix& dk) {
  k = Matrix::Zero(sqd.rows(), sqd.cols());
  dk = Matrix::Zero(sqd.rows(), sqd.cols());
  for (std::size_t i = 0; i < spec.bandwidths.size(); ++i) {
    double s2 = spec.bandwidths[i] * spec.bandwidths[i];
    Matrix e = (-sqd.array() / (2.0 * s2)).exp().matrix() * spec.weights[i];
    k += e;
    dk += e / s2;
  }
}

}  // namespace

Var mmd_squared(Tape& t, Var a, Var b, const KernelSpec& kernel) {
  kernel.validate();
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  if (av.cols() != bv.cols())
    throw ConfigError("mmd_squared: sample dims differ (" + std::to_string(av.cols()) +
                      " vs " + std::to_string(bv.cols()) + ")");
  if (av.rows() < 1 || bv.rows() < 1)
    throw ConfigError("mmd_squared: both sample sets must be non-empty");

  Matrix kaa, kbb, kab, daa, dbb, dab;
  kernel_sums(pairwise_sq_dists(av, av), kernel, kaa, daa);
  kernel_sums(pairwise_sq_dists(bv, bv), kernel, kbb, dbb);
  kernel_sums(pairwise_sq_dists(av, bv), kernel, kab, dab);

  Matrix out(1, 1);
  out(0, 0) = kaa.mean() + kbb.mean() - 2.0 * kab.mean();

  double na = static_cast<double>(av.rows());
  double nb = static_cast<double>(bv.rows());
  auto pull = [daa, dbb, dab, na, nb](Tape& tp, const Matrix& up,
                                      const std::vector<Var>& args) {
    const Matrix& A = tp.value(args[0]);
    const Matrix& B = tp.value(args[1]);
    double u = up(0, 0);
    // d/dA_p of mean(Kaa): -(2/na^2) sum_j Daa(p,j)(A_p - A_j); the cross
    // term contributes +(2/(na nb)) sum_j Dab(p,j)(A_p - B_j) after the -2.
    Matrix ga = (-2.0 / (na * na)) * (daa.rowwise().sum().asDiagonal() * A - daa * A) +
                (2.0 / (na * nb)) * (dab.rowwise().sum().asDiagonal() * A - dab * B);
    Matrix gb = (-2.0 / (nb * nb)) * (dbb.rowwise().sum().asDiagonal() * B - dbb * B) +
                (2.0 / (na * nb)) *
                    (dab.colwise().sum().transpose().asDiagonal() * B - dab.transpose() * A);
    tp.accumulate(args[0], u * ga);
    tp.accumulate(args[1], u * gb);
  };
  return t.record(std::move(out), {a, b}, std::move(pull));
}

Var single_modal_transfer_loss(Tape& t, const std::vector<Var>& source_layers,
                               const std::vector<Var>& image_layers,
                               const KernelConfig& kernel) {
  if (source_layers.size() != image_layers.size())
    throw ConfigError("transfer layer lists differ in length");
  if (source_layers.empty())
    throw ConfigError("transfer loss needs at least one layer pair");
  Var total{};
  for (std::size_t i = 0; i < source_layers.size(); ++i) {
    KernelSpec spec = kernel.resolve(t.value(source_layers[i]), t.value(image_layers[i]));
    Var m = mmd_squared(t, source_layers[i], image_layers[i], spec);
    total = total.valid() ? add(t, total, m) : m;
  }
  return total;
}

Var softmax_supervision_loss(Tape& t, Var logits, const std::vector<int>& labels) {
  const Matrix& z = t.value(logits);
  if (static_cast<Eigen::Index>(labels.size()) != z.rows())
    throw UsageError("label count does not match logit rows");
  Eigen::Index n = z.rows(), c = z.cols();
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] < 0 || labels[i] >= c)
      throw UsageError("label " + std::to_string(labels[i]) + " out of range at row " +
                       std::to_string(i));

  Matrix probs(n, c);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double m = z.row(i).maxCoeff();
    Eigen::ArrayXd e = (z.row(i).array() - m).exp();
    double denom = e.sum();
    probs.row(i) = (e / denom).matrix();
    loss += m + std::log(denom) - z(i, labels[static_cast<std::size_t>(i)]);
  }
  Matrix out(1, 1);
  out(0, 0) = loss / static_cast<double>(n);

  auto pull = [probs, labels](Tape& tp, const Matrix& up, const std::vector<Var>& args) {
    Matrix g = probs;
    for (Eigen::Index i = 0; i < g.rows(); ++i)
      g(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
    tp.accumulate(args[0], (up(0, 0) / static_cast<double>(g.rows())) * g);
  };
  return t.record(std::move(out), {logits}, std::move(pull));
}

Var pairwise_discrepancy(Tape& t, Var a_row, Var b_row) {
  const Matrix& a = t.value(a_row);
  const Matrix& b = t.value(b_row);
  if (a.rows() != 1 || b.rows() != 1)
    throw UsageError("pairwise_discrepancy expects single-row inputs");
  return squared_row_distance_sum(t, a_row, b_row);
}

Var cross_modal_transfer_loss(
    Tape& t, const std::string& image_tag,
    const std::map<std::string, std::vector<Var>>& specific_layers,
    const std::vector<int>& transfer_layers) {
  auto img = specific_layers.find(image_tag);
  if (img == specific_layers.end())
    throw ConfigError("cross-modal transfer: image modality '" + image_tag + "' missing");
  Var total{};
  for (const auto& [tag, layers] : specific_layers) {
    if (tag == image_tag) continue;
    for (int l : transfer_layers) {
      if (l < 0 || static_cast<std::size_t>(l) >= layers.size() ||
          static_cast<std::size_t>(l) >= img->second.size())
        throw ConfigError("transfer layer index " + std::to_string(l) + " out of range");
      Var d = squared_row_distance_sum(t, img->second[static_cast<std::size_t>(l)],
                                       layers[static_cast<std::size_t>(l)]);
      total = total.valid() ? add(t, total, d) : d;
    }
  }
  if (!total.valid())
    throw ConfigError("cross-modal transfer needs at least one non-image modality");
  return total;
}

Var semantic_consistency_loss(Tape& t,
                              const std::map<std::string, Var>& logits_per_modality,
                              const std::vector<int>& labels) {
  if (logits_per_modality.empty())
    throw UsageError("semantic consistency loss needs at least one modality");
  Var total{};
  for (const auto& [tag, logits] : logits_per_modality) {
    Var l = softmax_supervision_loss(t, logits, labels);
    total = total.valid() ? add(t, total, l) : l;
  }
  return total;
}

namespace {

inline double stable_sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace

Var sigmoid_cross_entropy(Tape& t, Var logits, const Matrix& targets, double normalizer) {
  const Matrix& z = t.value(logits);
  if (z.rows() != targets.rows() || z.cols() != targets.cols())
    throw ConfigError("sigmoid cross entropy: target shape mismatch");
  if (!(normalizer > 0.0)) throw UsageError("sigmoid cross entropy: normalizer must be > 0");

  double loss = 0.0;
  Matrix sig(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      double o = z(i, j), p = targets(i, j);
      // max(o,0) - o*p + log(1 + exp(-|o|)), the overflow-free composition
      loss += std::max(o, 0.0) - o * p + std::log1p(std::exp(-std::abs(o)));
      sig(i, j) = stable_sigmoid(o);
    }
  }
  Matrix out(1, 1);
  out(0, 0) = loss / normalizer;

  Matrix tgt = targets;
  auto pull = [sig, tgt, normalizer](Tape& tp, const Matrix& up, const std::vector<Var>& args) {
    tp.accumulate(args[0], (up(0, 0) / normalizer) * (sig - tgt));
  };
  return t.record(std::move(out), {logits}, std::move(pull));
}

Var modal_adversarial_loss(Tape& t, Var discriminator_logits,
                           const Matrix& modality_onehots, double normalizer) {
  for (Eigen::Index i = 0; i < modality_onehots.rows(); ++i) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < modality_onehots.cols(); ++j) {
      double v = modality_onehots(i, j);
      if (v != 0.0 && v != 1.0)
        throw UsageError("modality indicator row " + std::to_string(i) + " is not one-hot");
      s += v;
    }
    if (s != 1.0)
      throw UsageError("modality indicator row " + std::to_string(i) + " is not one-hot");
  }
  return sigmoid_cross_entropy(t, discriminator_logits, modality_onehots, normalizer);
}

Var total_objective(Tape& t, const ObjectiveTerms& terms, const LossWeights& w) {
  Var total{};
  auto push = [&](Var v) { total = total.valid() ? add(t, total, v) : v; };
  if (terms.st) push(scale(t, *terms.st, w.w_st));
  if (terms.sds) push(scale(t, *terms.sds, w.w_sds));
  if (terms.ct) push(scale(t, *terms.ct, w.w_ct));
  if (terms.sc) push(scale(t, *terms.sc, w.w_sc));
  if (terms.mc) {
    // mc + const(-(1+lambda)*mc) evaluates to -lambda*mc while leaving the
    // discriminator's +dMC and the reversed upstream -lambda*dMC intact.
    double mc_value = t.value(*terms.mc)(0, 0);
    Var correction = t.constant(Matrix::Constant(1, 1, -(1.0 + w.lambda) * mc_value));
    push(add(t, *terms.mc, correction));
  }
  if (!total.valid()) throw UsageError("objective needs at least one loss term");
  return total;
}

}  // namespace mhtn
