#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mhtn/tape.hpp"

namespace mhtn {

// Gaussian kernel mixture: k(x,y) = sum_i w_i * exp(-||x-y||^2 / (2 s_i^2)).
struct KernelSpec {
  std::vector<double> bandwidths;
  std::vector<double> weights;  // non-negative, sum to 1

  void validate() const;

  static KernelSpec single(double bandwidth);

  // Bandwidths are multiples of the median pairwise distance of the joined
  // rows of a and b (lower median; falls back to 1 when all rows coincide).
  static KernelSpec median_heuristic(const Matrix& a, const Matrix& b,
                                     const std::vector<double>& multipliers = {0.5, 1.0, 2.0});
};

// How per-batch kernels are chosen for the distribution-matching loss.
struct KernelConfig {
  enum class Mode { median, fixed };
  Mode mode = Mode::median;
  std::vector<double> median_multipliers{0.5, 1.0, 2.0};
  KernelSpec fixed = KernelSpec::single(1.0);

  KernelSpec resolve(const Matrix& a, const Matrix& b) const;
};

// Biased (V-statistic) squared MMD estimate between the row-sample sets a
// and b: mean(Kaa) + mean(Kbb) - 2 mean(Kab). Non-negative up to roundoff.
Var mmd_squared(Tape& t, Var a, Var b, const KernelSpec& kernel);

// Sum of squared MMDs over corresponding layer activations.
Var single_modal_transfer_loss(Tape& t, const std::vector<Var>& source_layers,
                               const std::vector<Var>& image_layers,
                               const KernelConfig& kernel);

// Mean negative log-likelihood under a row-wise softmax.
Var softmax_supervision_loss(Tape& t, Var logits, const std::vector<int>& labels);

// ||a - b||^2 for two rows of equal dimension.
Var pairwise_discrepancy(Tape& t, Var a_row, Var b_row);

// Sum over non-image modalities, configured layers, and documents of the
// squared distance between the image activation row and the paired row.
Var cross_modal_transfer_loss(
    Tape& t, const std::string& image_tag,
    const std::map<std::string, std::vector<Var>>& specific_layers,
    const std::vector<int>& transfer_layers);

// Sum over modalities of the per-modality softmax loss on shared labels.
Var semantic_consistency_loss(Tape& t,
                              const std::map<std::string, Var>& logits_per_modality,
                              const std::vector<int>& labels);

// Per-unit sigmoid cross entropy, summed over entries, divided by normalizer.
Var sigmoid_cross_entropy(Tape& t, Var logits, const Matrix& targets,
                          double normalizer);

// Rows are instances, columns are modality indicator units; each row of
// onehots must be exactly one-hot. normalizer is the document count.
Var modal_adversarial_loss(Tape& t, Var discriminator_logits,
                           const Matrix& modality_onehots, double normalizer);

struct LossWeights {
  double w_st = 1.0;
  double w_sds = 1.0;
  double w_ct = 0.001;
  double w_sc = 1.0;
  double lambda = 0.1;
};

// Five per-batch loss values with the weights that combined them.
struct LossBundle {
  double st = 0.0, sds = 0.0, ct = 0.0, sc = 0.0, mc = 0.0;
  LossWeights weights;

  // The objective the non-discriminator parameters descend.
  double generator_objective() const {
    return weights.w_st * st + weights.w_sds * sds + weights.w_ct * ct +
           weights.w_sc * sc - weights.lambda * mc;
  }
};

struct ObjectiveTerms {
  std::optional<Var> st, sds, ct, sc, mc;
};

// Combined training scalar. Forward value equals
//   w_st*ST + w_sds*SDS + w_ct*CT + w_sc*SC - lambda*MC.
// The MC term must already pass through gradient_reversal on its input side,
// so one backward gives the discriminator +dMC while every upstream group
// receives -lambda*dMC; the extra value correction is gradient-free.
Var total_objective(Tape& t, const ObjectiveTerms& terms, const LossWeights& w);

}  // namespace mhtn
