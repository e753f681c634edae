#include "mhtn/network.hpp"

#include <algorithm>

#include "mhtn/errors.hpp"
#include "mhtn/rng.hpp"

namespace mhtn {

const PathwaySpec* NetworkConfig::find_pathway(const std::string& modality) const {
  for (const auto& p : pathways)
    if (p.modality == modality) return &p;
  return nullptr;
}

std::vector<std::string> NetworkConfig::modality_tags() const {
  std::vector<std::string> tags;
  for (const auto& p : pathways) tags.push_back(p.modality);
  return tags;
}

void NetworkConfig::validate() const {
  if (pathways.empty()) throw ConfigError("network needs at least one modality pathway");
  if (pathways.front().modality != "image")
    throw ConfigError("the first modality must be 'image' (it bridges the domains)");
  for (const auto& p : pathways) {
    if (p.modality == "source") throw ConfigError("'source' is a reserved pathway name");
    if (p.input_dim <= 0)
      throw ConfigError("pathway " + p.modality + " has no input dimension");
    if (p.layer_widths.empty())
      throw ConfigError("pathway " + p.modality + " needs at least one layer");
    for (int w : p.layer_widths)
      if (w <= 0) throw ConfigError("pathway " + p.modality + " has a non-positive width");
    if (!(p.learning_rate > 0.0))
      throw ConfigError("pathway " + p.modality + " learning rate must be > 0");
  }
  for (std::size_t i = 1; i < pathways.size(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (pathways[i].modality == pathways[j].modality)
        throw ConfigError("duplicate modality tag " + pathways[i].modality);
  if (num_classes_target <= 0) throw ConfigError("target class count must be > 0");
  if (has_source() && num_classes_source <= 0)
    throw ConfigError("source class count must be > 0 when the source pathway is on");
  if (has_common_layers() && common_widths.empty())
    throw ConfigError("common representation needs at least one layer");
  if (has_discriminator() && discriminator_widths.empty())
    throw ConfigError("discriminator needs at least one hidden layer");
  if (weights.lambda < 0.0) throw ConfigError("lambda must be >= 0");
  int specific_depth = static_cast<int>(pathways.front().layer_widths.size());
  for (const auto& p : pathways)
    if (static_cast<int>(p.layer_widths.size()) != specific_depth)
      throw ConfigError("all pathways must share the same depth");
  if (transfer_layers.empty()) throw ConfigError("transfer layer set must be non-empty");
  for (int l : transfer_layers)
    if (l < 0 || l >= specific_depth)
      throw ConfigError("transfer layer index " + std::to_string(l) + " out of range");
  // Pathways must agree on the final width: the shared layers (or the
  // per-modality classifiers) consume every modality through one shape.
  int top = pathways.front().layer_widths.back();
  for (const auto& p : pathways)
    if (p.layer_widths.back() != top)
      throw ConfigError("pathway " + p.modality + " final width differs from image's");
}

int StarNetwork::group_index(const std::string& name) const {
  for (std::size_t i = 0; i < groups.size(); ++i)
    if (groups[i].name == name) return static_cast<int>(i);
  return -1;
}

ParamGroup& StarNetwork::group(const std::string& name) {
  int i = group_index(name);
  if (i < 0) throw UsageError("no parameter group named " + name);
  return groups[static_cast<std::size_t>(i)];
}

const ParamGroup& StarNetwork::group(const std::string& name) const {
  int i = group_index(name);
  if (i < 0) throw UsageError("no parameter group named " + name);
  return groups[static_cast<std::size_t>(i)];
}

std::size_t StarNetwork::parameter_count() const {
  std::size_t n = 0;
  for (const auto& g : groups)
    for (const auto& m : g.mats) n += static_cast<std::size_t>(m.size());
  return n;
}

namespace {

void append_stack(ParamGroup& g, int in_dim, const std::vector<int>& widths,
                  std::uint64_t seed, const std::string& tag, std::uint64_t* salt) {
  int in = in_dim;
  for (int w : widths) {
    g.mats.push_back(glorot_uniform(in, w, derive_seed(seed, tag, (*salt)++)));
    g.mats.push_back(Matrix::Zero(1, w));
    ++*salt;
    in = w;
  }
}

void append_classifier(ParamGroup& g, int in_dim, int classes, std::uint64_t seed,
                       const std::string& tag, std::uint64_t* salt) {
  g.mats.push_back(glorot_uniform(in_dim, classes, derive_seed(seed, tag, (*salt)++)));
  g.mats.push_back(Matrix::Zero(1, classes));
  ++*salt;
}

}  // namespace

StarNetwork build_network(const NetworkConfig& config, std::uint64_t seed) {
  config.validate();
  StarNetwork net;
  net.config = config;

  const PathwaySpec& image = config.pathways.front();
  ParamGroup image_group{"image", {}, image.learning_rate, config.weight_decay};
  std::uint64_t salt = 0;
  append_stack(image_group, image.input_dim, image.layer_widths, seed, "image", &salt);

  if (config.has_source()) {
    // Same weights as the image pathway at build time, plus its own head.
    ParamGroup src{"source", image_group.mats, image.learning_rate, config.weight_decay};
    std::uint64_t s = 0;
    append_classifier(src, image.layer_widths.back(), config.num_classes_source, seed,
                      "source_head", &s);
    net.groups.push_back(std::move(src));
  }
  net.groups.push_back(std::move(image_group));

  for (std::size_t i = 1; i < config.pathways.size(); ++i) {
    const PathwaySpec& p = config.pathways[i];
    ParamGroup g{p.modality, {}, p.learning_rate, config.weight_decay};
    std::uint64_t s = 0;
    append_stack(g, p.input_dim, p.layer_widths, seed, p.modality, &s);
    net.groups.push_back(std::move(g));
  }

  int top = config.pathways.front().layer_widths.back();
  ParamGroup common{"common", {}, config.common_learning_rate, config.weight_decay};
  std::uint64_t s = 0;
  if (config.has_common_layers()) {
    append_stack(common, top, config.common_widths, seed, "common", &s);
    append_classifier(common, config.common_widths.back(), config.num_classes_target,
                      seed, "classifier", &s);
  } else {
    // One classifier per modality, applied to that modality's specific output.
    for (const auto& p : config.pathways)
      append_classifier(common, top, config.num_classes_target, seed,
                        "classifier_" + p.modality, &s);
  }
  net.groups.push_back(std::move(common));

  if (config.has_discriminator()) {
    ParamGroup disc{"discriminator", {}, config.discriminator_learning_rate,
                    config.weight_decay};
    std::uint64_t ds = 0;
    append_stack(disc, config.common_widths.back(), config.discriminator_widths, seed,
                 "discriminator", &ds);
    append_classifier(disc, config.discriminator_widths.back(),
                      static_cast<int>(config.pathways.size()), seed,
                      "discriminator_head", &ds);
    net.groups.push_back(std::move(disc));
  }
  return net;
}

StagedNetwork stage(Tape& t, const StarNetwork& net) {
  StagedNetwork staged;
  staged.net = &net;
  staged.vars.resize(net.groups.size());
  for (std::size_t g = 0; g < net.groups.size(); ++g)
    for (const Matrix& m : net.groups[g].mats)
      staged.vars[g].push_back(t.leaf(m));
  return staged;
}

std::vector<std::vector<Matrix>> collect_gradients(const Tape& t,
                                                   const StagedNetwork& staged) {
  std::vector<std::vector<Matrix>> grads(staged.vars.size());
  for (std::size_t g = 0; g < staged.vars.size(); ++g)
    for (Var v : staged.vars[g]) grads[g].push_back(t.grad(v));
  return grads;
}

namespace {

struct StagedView {
  const StagedNetwork& staged;

  const std::vector<Var>& group(const std::string& name) const {
    int i = staged.net->group_index(name);
    if (i < 0) throw UsageError("group " + name + " is not part of this network");
    return staged.vars[static_cast<std::size_t>(i)];
  }
};

// Runs an affine+relu stack; layer i uses vars[2i], vars[2i+1].
std::vector<Var> run_stack(Tape& t, Var x, const std::vector<Var>& vars, int layers) {
  std::vector<Var> acts;
  Var h = x;
  for (int l = 0; l < layers; ++l) {
    h = relu(t, affine(t, h, vars[static_cast<std::size_t>(2 * l)],
                       vars[static_cast<std::size_t>(2 * l + 1)]));
    acts.push_back(h);
  }
  return acts;
}

}  // namespace

ForwardOutputs forward_document_batch(Tape& t, const StagedNetwork& staged,
                                      const BatchInputs& batch, bool reversal_enabled) {
  const StarNetwork& net = *staged.net;
  const NetworkConfig& cfg = net.config;
  StagedView view{staged};
  ForwardOutputs out;

  Eigen::Index docs = -1;
  for (const auto& p : cfg.pathways) {
    auto it = batch.features.find(p.modality);
    if (it == batch.features.end())
      throw ConfigError("document batch is missing modality " + p.modality);
    if (it->second.cols() != p.input_dim)
      throw ConfigError("modality " + p.modality + " features have dim " +
                        std::to_string(it->second.cols()) + ", pathway expects " +
                        std::to_string(p.input_dim));
    if (docs < 0)
      docs = it->second.rows();
    else if (it->second.rows() != docs)
      throw ConfigError("modality " + p.modality + " has a different document count");
  }
  if (docs <= 0) throw ConfigError("document batch is empty");

  int depth = static_cast<int>(cfg.pathways.front().layer_widths.size());
  for (std::size_t i = 0; i < cfg.pathways.size(); ++i) {
    const auto& p = cfg.pathways[i];
    Var x = t.constant(batch.features.at(p.modality));
    out.specific[p.modality] = run_stack(t, x, view.group(p.modality), depth);
  }

  if (cfg.has_source()) {
    if (batch.source_features.rows() == 0)
      throw ConfigError("source batch is empty but the source pathway is enabled");
    if (batch.source_features.cols() != cfg.pathways.front().input_dim)
      throw ConfigError("source features do not match the image pathway input dim");
    const std::vector<Var>& sv = view.group("source");
    Var s = t.constant(batch.source_features);
    out.source_specific = run_stack(t, s, sv, depth);
    out.source_logits = affine(t, out.source_specific.back(),
                               sv[static_cast<std::size_t>(2 * depth)],
                               sv[static_cast<std::size_t>(2 * depth + 1)]);
  }

  const std::vector<Var>& cv = view.group("common");
  if (cfg.has_common_layers()) {
    int common_depth = static_cast<int>(cfg.common_widths.size());
    for (const auto& p : cfg.pathways) {
      Var top = out.specific[p.modality].back();
      std::vector<Var> acts = run_stack(t, top, cv, common_depth);
      out.common[p.modality] = acts.back();
      out.logits[p.modality] =
          affine(t, acts.back(), cv[static_cast<std::size_t>(2 * common_depth)],
                 cv[static_cast<std::size_t>(2 * common_depth + 1)]);
    }
    if (cfg.has_discriminator()) {
      const std::vector<Var>& dv = view.group("discriminator");
      int disc_depth = static_cast<int>(cfg.discriminator_widths.size());
      for (const auto& p : cfg.pathways) {
        Var in = out.common[p.modality];
        if (reversal_enabled) in = gradient_reversal(t, in, cfg.weights.lambda);
        std::vector<Var> acts = run_stack(t, in, dv, disc_depth);
        out.disc_logits[p.modality] =
            affine(t, acts.back(), dv[static_cast<std::size_t>(2 * disc_depth)],
                   dv[static_cast<std::size_t>(2 * disc_depth + 1)]);
      }
    }
  } else {
    for (std::size_t i = 0; i < cfg.pathways.size(); ++i) {
      const auto& p = cfg.pathways[i];
      out.logits[p.modality] = affine(t, out.specific[p.modality].back(),
                                      cv[2 * i], cv[2 * i + 1]);
    }
  }
  return out;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::ArrayXd e = (logits.row(i).array() - logits.row(i).maxCoeff()).exp();
    p.row(i) = (e / e.sum()).matrix();
  }
  return p;
}

namespace {

Matrix eval_stack(const std::vector<Matrix>& mats, std::size_t offset, int layers,
                  Matrix x, std::vector<Matrix>* keep = nullptr) {
  for (int l = 0; l < layers; ++l) {
    x = (x * mats[offset + static_cast<std::size_t>(2 * l)]).eval();
    x.rowwise() += mats[offset + static_cast<std::size_t>(2 * l + 1)].row(0);
    x = x.cwiseMax(0.0);
    if (keep) keep->push_back(x);
  }
  return x;
}

}  // namespace

EvalActivations activations(const StarNetwork& net, const std::string& modality,
                            const Matrix& rows) {
  const NetworkConfig& cfg = net.config;
  const PathwaySpec* spec = cfg.find_pathway(modality);
  if (!spec) throw UsageError("unknown modality tag " + modality);
  if (rows.cols() != spec->input_dim)
    throw ConfigError("features for " + modality + " have dim " +
                      std::to_string(rows.cols()) + ", pathway expects " +
                      std::to_string(spec->input_dim));

  EvalActivations out;
  int depth = static_cast<int>(spec->layer_widths.size());
  const ParamGroup& path = net.group(modality);
  Matrix top = eval_stack(path.mats, 0, depth, rows, &out.specific);

  const ParamGroup& common = net.group("common");
  if (cfg.has_common_layers()) {
    int cd = static_cast<int>(cfg.common_widths.size());
    out.common = eval_stack(common.mats, 0, cd, top);
    out.logits = out.common * common.mats[static_cast<std::size_t>(2 * cd)];
    out.logits.rowwise() += common.mats[static_cast<std::size_t>(2 * cd + 1)].row(0);
  } else {
    std::size_t idx = 0;
    for (; idx < cfg.pathways.size(); ++idx)
      if (cfg.pathways[idx].modality == modality) break;
    out.logits = top * common.mats[2 * idx];
    out.logits.rowwise() += common.mats[2 * idx + 1].row(0);
  }
  out.probabilities = softmax_rows(out.logits);
  return out;
}

Matrix embed(const StarNetwork& net, const std::string& modality, const Matrix& rows) {
  if (rows.rows() == 0) return Matrix(0, net.config.num_classes_target);
  return activations(net, modality, rows).probabilities;
}

Matrix discriminator_logits(const StarNetwork& net, const Matrix& common_rows) {
  if (!net.config.has_discriminator())
    throw UsageError("this network has no discriminator");
  const ParamGroup& disc = net.group("discriminator");
  int dd = static_cast<int>(net.config.discriminator_widths.size());
  Matrix h = eval_stack(disc.mats, 0, dd, common_rows);
  Matrix logits = h * disc.mats[static_cast<std::size_t>(2 * dd)];
  logits.rowwise() += disc.mats[static_cast<std::size_t>(2 * dd + 1)].row(0);
  return logits;
}

}  // namespace mhtn
