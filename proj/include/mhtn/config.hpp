#pragma once

#include <cstdint>
#include <string>

#include "mhtn/data.hpp"
#include "mhtn/network.hpp"
#include "mhtn/trainer.hpp"

namespace mhtn {

// Everything one run needs, parsed from a sectioned key/value text file.
// The published training regime (layer widths, learning rates, loss weights,
// weight decay) is the default; a bare config reproduces it.
struct RunConfig {
  // [data]
  std::string manifest_path;
  SplitFractions split;
  PairingPolicy pairing = PairingPolicy::by_label;

  // [network]
  std::vector<int> pathway_widths{4096, 4096};
  std::vector<int> common_widths{4096, 4096};
  std::vector<int> discriminator_widths{1024, 1024};
  double pathway_lr = 0.01;
  double common_lr = 0.01;
  double discriminator_lr = 0.001;
  double weight_decay = 0.0005;
  LossWeights weights;
  std::vector<int> transfer_layers{0, 1};
  KernelConfig kernel;

  // [train]
  TrainSchedule schedule;

  // [ablation]
  bool no_source = false;
  bool no_sl_net = false;
  bool no_adver = false;
  bool no_sds = false;

  // [synthetic]
  SyntheticSpec synthetic;

  std::uint64_t seed = 7;
  std::string out_dir;
};

RunConfig load_run_config(const std::string& path);

// Network shapes resolved against the manifest's modalities and class counts.
NetworkConfig resolve_network(const RunConfig& run, const Manifest& manifest);

// Canonical sorted key=value dump of everything that defines the run's
// behavior (structure, weights, schedule, seed) -- not file paths.
std::string canonical_config(const RunConfig& run, const NetworkConfig& net);
std::uint64_t config_digest(const RunConfig& run, const NetworkConfig& net);

}  // namespace mhtn
