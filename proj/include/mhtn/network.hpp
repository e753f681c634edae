#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mhtn/losses.hpp"
#include "mhtn/params.hpp"
#include "mhtn/tape.hpp"

namespace mhtn {

struct PathwaySpec {
  std::string modality;
  int input_dim = 0;
  std::vector<int> layer_widths{4096, 4096};
  double learning_rate = 0.01;
};

struct NetworkConfig {
  std::vector<PathwaySpec> pathways;  // target modalities, image first
  std::vector<int> common_widths{4096, 4096};
  std::vector<int> discriminator_widths{1024, 1024};
  int num_classes_target = 0;
  int num_classes_source = 0;
  double common_learning_rate = 0.01;
  double discriminator_learning_rate = 0.001;
  double weight_decay = 0.0005;
  LossWeights weights;
  std::vector<int> transfer_layers{0, 1};
  KernelConfig kernel;
  bool no_source = false;
  bool no_sl_net = false;
  bool no_adver = false;
  bool no_sds = false;

  const std::string& image_tag() const { return pathways.front().modality; }
  const PathwaySpec* find_pathway(const std::string& modality) const;
  std::vector<std::string> modality_tags() const;
  bool has_source() const { return !no_source; }
  bool has_discriminator() const { return !no_adver && !no_sl_net; }
  bool has_common_layers() const { return !no_sl_net; }
  void validate() const;
};

// Parameter groups of the six-pathway star. Group order is fixed:
// [source] image other... common [discriminator]; absent branches are
// simply not present.
struct StarNetwork {
  NetworkConfig config;
  std::vector<ParamGroup> groups;

  int group_index(const std::string& name) const;
  ParamGroup& group(const std::string& name);
  const ParamGroup& group(const std::string& name) const;
  std::size_t parameter_count() const;
};

// Deterministic per (config, seed); each matrix draws from its own derived
// stream so any subset of groups is reproducible in isolation. The source
// pathway starts as an exact copy of the target image pathway.
StarNetwork build_network(const NetworkConfig& config, std::uint64_t seed);

// Parameters staged onto a tape, parallel to net.groups / group.mats.
struct StagedNetwork {
  const StarNetwork* net = nullptr;
  std::vector<std::vector<Var>> vars;
};

StagedNetwork stage(Tape& t, const StarNetwork& net);

// Gradients per group per matrix after backward(); untouched entries zero.
std::vector<std::vector<Matrix>> collect_gradients(const Tape& t,
                                                   const StagedNetwork& staged);

struct BatchInputs {
  std::map<std::string, Matrix> features;  // per modality, one row per document
  std::vector<int> labels;                 // per document
  Matrix source_features;                  // empty when the source path is off
  std::vector<int> source_labels;
};

struct ForwardOutputs {
  std::map<std::string, std::vector<Var>> specific;  // post-activation, per layer
  std::map<std::string, Var> common;                 // final shared-layer output
  std::map<std::string, Var> logits;                 // classifier logits
  std::vector<Var> source_specific;
  Var source_logits{};
  std::map<std::string, Var> disc_logits;            // behind gradient reversal
};

// reversal_enabled=false bypasses the gradient reversal layer (used by tests
// and by probe training); the adversarial branch is otherwise unchanged.
ForwardOutputs forward_document_batch(Tape& t, const StagedNetwork& staged,
                                      const BatchInputs& batch,
                                      bool reversal_enabled = true);

// ---- evaluation-mode forward (no tape) ----

struct EvalActivations {
  std::vector<Matrix> specific;
  Matrix common;        // empty under no_sl_net
  Matrix logits;
  Matrix probabilities; // row-wise softmax of logits
};

EvalActivations activations(const StarNetwork& net, const std::string& modality,
                            const Matrix& rows);

// Predicted class probability vectors, one row per input row.
Matrix embed(const StarNetwork& net, const std::string& modality, const Matrix& rows);

// Discriminator logits for already-computed common representations.
Matrix discriminator_logits(const StarNetwork& net, const Matrix& common_rows);

Matrix softmax_rows(const Matrix& logits);

}  // namespace mhtn
