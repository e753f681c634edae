#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mhtn/matrix.hpp"

namespace mhtn {

constexpr int kUnlabeled = -1;

struct Instance {
  long long id = 0;
  int label = kUnlabeled;
  Vector features;
};

struct ModalityData {
  std::string modality;
  int dim = 0;
  std::vector<Instance> instances;

  const Instance* find(long long id) const;
};

// Aligned groups: one instance id per modality, in Dataset modality order.
using PairTable = std::vector<std::vector<long long>>;

struct Dataset {
  int num_classes = 0;
  std::vector<ModalityData> modalities;
  std::optional<PairTable> pair_table;

  const ModalityData* find(const std::string& modality) const;
  ModalityData* find(const std::string& modality);
  std::size_t total_instances() const;
  void validate() const;
};

// Content digest, invariant to file paths; feeds deterministic scheduling.
std::uint64_t dataset_digest(const Dataset& d);

// ---- feature files ----
// Plain text. '#' lines are comments. The header row is
//   <modality> <count> <dim> [<num_classes>]
// followed by one row per instance: <id> <label|-1> <dim floats>.
ModalityData load_features(const std::string& path);
void write_features(const std::string& path, const ModalityData& data,
                    const std::vector<std::string>& comments = {});

// ---- dataset manifest ----
struct Manifest {
  int classes = 0;
  int source_classes = 0;
  std::vector<std::pair<std::string, std::string>> modality_files;
  std::string source_file;      // optional
  std::string pair_table_file;  // optional
  std::string base_dir;
};

Manifest load_manifest(const std::string& path);
void write_manifest(const std::string& path, const Manifest& m,
                    const std::vector<std::string>& comments = {});

Dataset load_target_dataset(const Manifest& m);
Dataset load_source_dataset(const Manifest& m);

// ---- splitting ----
struct SplitFractions {
  double train = 0.8, test = 0.1, validation = 0.1;
};

struct SplitResult {
  Dataset train, test, validation;
};

// Stratified by class and modality (by aligned group when a pair table is
// present, so co-members stay in the same split). Deterministic per seed.
SplitResult split(const Dataset& d, SplitFractions f, std::uint64_t seed);

// ---- synthetic benchmark ----
// Latent per-class Gaussian prototypes observed through per-modality
// orthonormal distortions plus noise; the source domain draws disjoint
// classes in the same latent space and is observed as images.
struct SyntheticSpec {
  int num_classes = 4;
  int per_class = 50;  // instances per class per modality
  std::vector<std::pair<std::string, int>> modality_dims{
      {"image", 64}, {"text", 48}, {"audio", 32}};
  int latent_dim = 16;
  double noise = 0.2;
  double jitter = 0.6;  // within-class latent spread
  int source_classes = 6;
  int source_per_class = 50;
  std::uint64_t seed = 7;

  void validate() const;
};

struct SyntheticData {
  Dataset source;
  Dataset target;
};

SyntheticData generate_synthetic(const SyntheticSpec& spec);

}  // namespace mhtn
