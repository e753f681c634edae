#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mhtn/data.hpp"
#include "mhtn/network.hpp"

namespace mhtn {

// One image-anchored tuple; member_rows index into the dataset's modality
// instance vectors (modality order == dataset order).
struct CrossModalDocument {
  std::vector<std::size_t> member_rows;
  int label = kUnlabeled;
};

enum class PairingPolicy { by_label, pair_table };

// One document per training image. by_label picks partners uniformly within
// the image's class, seeded; pair_table replays the dataset's aligned groups.
std::vector<CrossModalDocument> assemble_documents(const Dataset& target,
                                                   PairingPolicy policy,
                                                   std::uint64_t seed);

struct TrainSchedule {
  int epochs = 30;
  int batch_size_documents = 32;
  int batch_size_source = 32;
  std::uint64_t seed = 0;
  double lr_scale = 1.0;
  bool resample_documents_each_epoch = true;  // by_label only
  int checkpoint_every_epochs = 0;            // 0: only at the end

  void validate() const;
};

struct EpochStats {
  int epoch = 0;
  LossBundle losses;  // averaged over the epoch's steps
  double wall_ms = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
};

// One forward/backward/update cycle on explicit batches. Aborts with
// NumericError naming the offending term if any loss goes non-finite.
LossBundle train_step(StarNetwork& net, const BatchInputs& batch, double lr_scale);

// Full adversarial SGD loop over shuffled document batches paired with
// uniformly sampled source batches. When checkpoint_path is non-empty the
// final parameters are written there atomically.
TrainReport train(StarNetwork& net, const Dataset& source, const Dataset& target,
                  PairingPolicy policy, const TrainSchedule& schedule,
                  const std::string& checkpoint_path = "",
                  std::uint64_t config_digest = 0);

void write_train_report(const std::string& path, const TrainReport& report,
                        std::uint64_t seed, std::uint64_t config_digest);

// ---- modality probes ----
// Standalone discriminator trained on fixed feature rows (no reversal);
// reused for representation analyses. Inputs are standardized per column
// with statistics from the training rows.
struct ProbeResult {
  ParamGroup params;
  std::vector<int> hidden_widths;
  Matrix input_mean;   // 1 x dim
  Matrix input_scale;  // 1 x dim, reciprocal std
  double train_accuracy = 0.0;
};

ProbeResult train_modality_probe(const std::vector<Matrix>& features_per_modality,
                                 const std::vector<int>& hidden_widths, double lr,
                                 int steps, std::uint64_t seed);

double probe_accuracy(const ProbeResult& probe,
                      const std::vector<Matrix>& features_per_modality);

// Fraction of rows whose argmax logit matches their modality index.
double modality_argmax_accuracy(const Matrix& logits,
                                const std::vector<int>& modality_of_row);

}  // namespace mhtn
