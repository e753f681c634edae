#include "mhtn/trainer.hpp"

#include <chrono>
#include <cmath>
#include <map>
#include <sstream>

#include "mhtn/checkpoint.hpp"
#include "mhtn/errors.hpp"
#include "mhtn/rng.hpp"

namespace mhtn {

std::vector<CrossModalDocument> assemble_documents(const Dataset& target,
                                                   PairingPolicy policy,
                                                   std::uint64_t seed) {
  if (target.modalities.empty()) throw ConfigError("dataset has no modalities");

  std::vector<CrossModalDocument> docs;
  if (policy == PairingPolicy::pair_table) {
    if (!target.pair_table)
      throw ConfigError("pair_table pairing requested but the dataset has no pair table");
    std::vector<std::map<long long, std::size_t>> row_of(target.modalities.size());
    for (std::size_t mi = 0; mi < target.modalities.size(); ++mi)
      for (std::size_t r = 0; r < target.modalities[mi].instances.size(); ++r)
        row_of[mi][target.modalities[mi].instances[r].id] = r;
    for (const auto& group : *target.pair_table) {
      CrossModalDocument doc;
      for (std::size_t mi = 0; mi < group.size(); ++mi) {
        auto it = row_of[mi].find(group[mi]);
        if (it == row_of[mi].end())
          throw ConfigError("pair table id " + std::to_string(group[mi]) +
                            " missing from modality " + target.modalities[mi].modality);
        doc.member_rows.push_back(it->second);
      }
      doc.label = target.modalities[0].instances[doc.member_rows[0]].label;
      for (std::size_t mi = 0; mi < doc.member_rows.size(); ++mi) {
        int l = target.modalities[mi].instances[doc.member_rows[mi]].label;
        if (l != doc.label)
          throw ConfigError("label mismatch inside aligned group anchored at image id " +
                            std::to_string(group[0]));
      }
      docs.push_back(std::move(doc));
    }
    return docs;
  }

  // by_label: anchor on every image, draw partners from the same class.
  std::vector<std::map<int, std::vector<std::size_t>>> by_class(target.modalities.size());
  for (std::size_t mi = 0; mi < target.modalities.size(); ++mi)
    for (std::size_t r = 0; r < target.modalities[mi].instances.size(); ++r) {
      const Instance& ins = target.modalities[mi].instances[r];
      if (ins.label == kUnlabeled)
        throw ConfigError("unlabeled instance " + std::to_string(ins.id) + " in " +
                          target.modalities[mi].modality +
                          " cannot join label-based documents");
      by_class[mi][ins.label].push_back(r);
    }

  Rng rng(derive_seed(seed, "assemble"));
  const ModalityData& images = target.modalities[0];
  for (std::size_t r = 0; r < images.instances.size(); ++r) {
    CrossModalDocument doc;
    doc.label = images.instances[r].label;
    doc.member_rows.push_back(r);
    for (std::size_t mi = 1; mi < target.modalities.size(); ++mi) {
      auto it = by_class[mi].find(doc.label);
      if (it == by_class[mi].end() || it->second.empty())
        throw ConfigError("class " + std::to_string(doc.label) +
                          " has no instances in modality " +
                          target.modalities[mi].modality);
      doc.member_rows.push_back(it->second[rng.index(it->second.size())]);
    }
    docs.push_back(std::move(doc));
  }
  return docs;
}

void TrainSchedule::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size_documents < 1 || batch_size_source < 1)
    throw ConfigError("batch sizes must be >= 1");
  if (!(lr_scale >= 0.0)) throw ConfigError("lr_scale must be >= 0");
  if (checkpoint_every_epochs < 0) throw ConfigError("checkpoint_every must be >= 0");
}

namespace {

BatchInputs make_batch(const StarNetwork& net, const Dataset& target,
                       const std::vector<CrossModalDocument>& docs,
                       const std::vector<std::size_t>& doc_idx, const Dataset* source,
                       const std::vector<std::size_t>& src_idx) {
  BatchInputs batch;
  const auto& cfg = net.config;
  for (std::size_t mi = 0; mi < cfg.pathways.size(); ++mi) {
    const std::string& tag = cfg.pathways[mi].modality;
    const ModalityData* md = target.find(tag);
    if (!md) throw ConfigError("dataset is missing modality " + tag);
    Matrix rows(static_cast<Eigen::Index>(doc_idx.size()), md->dim);
    for (std::size_t k = 0; k < doc_idx.size(); ++k) {
      const CrossModalDocument& doc = docs[doc_idx[k]];
      rows.row(static_cast<Eigen::Index>(k)) =
          md->instances[doc.member_rows[mi]].features.transpose();
    }
    batch.features[tag] = std::move(rows);
  }
  for (std::size_t k = 0; k < doc_idx.size(); ++k)
    batch.labels.push_back(docs[doc_idx[k]].label);

  if (source && !src_idx.empty()) {
    const ModalityData& sm = source->modalities[0];
    batch.source_features.resize(static_cast<Eigen::Index>(src_idx.size()), sm.dim);
    for (std::size_t k = 0; k < src_idx.size(); ++k) {
      const Instance& ins = sm.instances[src_idx[k]];
      if (ins.label == kUnlabeled)
        throw ConfigError("source instance " + std::to_string(ins.id) + " is unlabeled");
      batch.source_features.row(static_cast<Eigen::Index>(k)) = ins.features.transpose();
      batch.source_labels.push_back(ins.label);
    }
  }
  return batch;
}

Matrix modality_onehot_rows(Eigen::Index n, int index, int width) {
  Matrix m = Matrix::Zero(n, width);
  m.col(index).setOnes();
  return m;
}

struct StepGraph {
  ObjectiveTerms terms;
  LossBundle bundle;
};

StepGraph build_losses(Tape& tape, const StarNetwork& net, const ForwardOutputs& fwd,
                       const BatchInputs& batch) {
  const NetworkConfig& cfg = net.config;
  StepGraph g;
  g.bundle.weights = cfg.weights;
  double docs = static_cast<double>(batch.labels.size());

  if (cfg.has_source() && cfg.weights.w_st != 0.0) {
    std::vector<Var> src_layers, img_layers;
    for (int l : cfg.transfer_layers) {
      src_layers.push_back(fwd.source_specific[static_cast<std::size_t>(l)]);
      img_layers.push_back(fwd.specific.at(cfg.image_tag())[static_cast<std::size_t>(l)]);
    }
    g.terms.st = single_modal_transfer_loss(tape, src_layers, img_layers, cfg.kernel);
  }
  if (cfg.has_source() && !cfg.no_sds && cfg.weights.w_sds != 0.0)
    g.terms.sds = softmax_supervision_loss(tape, fwd.source_logits, batch.source_labels);
  if (cfg.pathways.size() > 1 && cfg.weights.w_ct != 0.0)
    g.terms.ct = cross_modal_transfer_loss(tape, cfg.image_tag(), fwd.specific,
                                           cfg.transfer_layers);
  if (cfg.weights.w_sc != 0.0)
    g.terms.sc = semantic_consistency_loss(tape, fwd.logits, batch.labels);
  if (cfg.has_discriminator()) {
    Var mc{};
    int width = static_cast<int>(cfg.pathways.size());
    for (std::size_t mi = 0; mi < cfg.pathways.size(); ++mi) {
      Var logits = fwd.disc_logits.at(cfg.pathways[mi].modality);
      Var term = modal_adversarial_loss(
          tape, logits,
          modality_onehot_rows(tape.value(logits).rows(), static_cast<int>(mi), width),
          docs);
      mc = mc.valid() ? add(tape, mc, term) : term;
    }
    g.terms.mc = mc;
  }

  auto read = [&](const std::optional<Var>& v) {
    return v ? tape.value(*v)(0, 0) : 0.0;
  };
  g.bundle.st = read(g.terms.st);
  g.bundle.sds = read(g.terms.sds);
  g.bundle.ct = read(g.terms.ct);
  g.bundle.sc = read(g.terms.sc);
  g.bundle.mc = read(g.terms.mc);

  auto check = [&](double v, const char* name) {
    if (!std::isfinite(v))
      throw NumericError(std::string("loss ") + name + " is non-finite; aborting");
  };
  check(g.bundle.st, "ST");
  check(g.bundle.sds, "SDS");
  check(g.bundle.ct, "CT");
  check(g.bundle.sc, "SC");
  check(g.bundle.mc, "MC");
  return g;
}

}  // namespace

LossBundle train_step(StarNetwork& net, const BatchInputs& batch, double lr_scale) {
  Tape tape;
  StagedNetwork staged = stage(tape, net);
  ForwardOutputs fwd = forward_document_batch(tape, staged, batch);
  StepGraph g = build_losses(tape, net, fwd, batch);
  Var root = total_objective(tape, g.terms, net.config.weights);
  tape.backward(root);
  auto grads = collect_gradients(tape, staged);
  for (std::size_t gi = 0; gi < net.groups.size(); ++gi)
    sgd_step(net.groups[gi], grads[gi], lr_scale);
  return g.bundle;
}

TrainReport train(StarNetwork& net, const Dataset& source, const Dataset& target,
                  PairingPolicy policy, const TrainSchedule& schedule,
                  const std::string& checkpoint_path, std::uint64_t config_digest) {
  schedule.validate();
  TrainReport report;
  std::uint64_t data_key = dataset_digest(target);

  std::vector<CrossModalDocument> docs;
  for (int epoch = 1; epoch <= schedule.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    bool resample = policy == PairingPolicy::by_label &&
                    (schedule.resample_documents_each_epoch || docs.empty());
    if (docs.empty() || resample)
      docs = assemble_documents(
          target, policy,
          derive_seed(schedule.seed ^ data_key, "documents",
                      static_cast<std::uint64_t>(epoch)));

    std::vector<std::size_t> order(docs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(derive_seed(schedule.seed ^ data_key, "shuffle",
                                static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    Rng src_rng(derive_seed(schedule.seed ^ data_key, "source",
                            static_cast<std::uint64_t>(epoch)));
    std::size_t src_count =
        net.config.has_source() ? source.modalities.at(0).instances.size() : 0;
    if (net.config.has_source() && src_count == 0)
      throw ConfigError("source pathway enabled but the source dataset is empty");

    LossBundle sums;
    sums.weights = net.config.weights;
    int steps = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(schedule.batch_size_documents)) {
      std::size_t stop = std::min(
          order.size(), start + static_cast<std::size_t>(schedule.batch_size_documents));
      std::vector<std::size_t> doc_idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                       order.begin() + static_cast<std::ptrdiff_t>(stop));
      std::vector<std::size_t> src_idx;
      if (net.config.has_source())
        for (int k = 0; k < schedule.batch_size_source; ++k)
          src_idx.push_back(src_rng.index(src_count));
      BatchInputs batch = make_batch(net, target, docs, doc_idx,
                                     net.config.has_source() ? &source : nullptr, src_idx);
      LossBundle b = train_step(net, batch, schedule.lr_scale);
      sums.st += b.st;
      sums.sds += b.sds;
      sums.ct += b.ct;
      sums.sc += b.sc;
      sums.mc += b.mc;
      ++steps;
    }
    if (steps > 0) {
      sums.st /= steps;
      sums.sds /= steps;
      sums.ct /= steps;
      sums.sc /= steps;
      sums.mc /= steps;
    }
    auto t1 = std::chrono::steady_clock::now();
    double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    report.epochs.push_back(EpochStats{epoch, sums, ms});

    // Periodic checkpoints replace the file atomically, so an interrupted
    // run always leaves the last completed one behind.
    if (!checkpoint_path.empty() && schedule.checkpoint_every_epochs > 0 &&
        epoch % schedule.checkpoint_every_epochs == 0)
      save_checkpoint(checkpoint_path, net, config_digest, schedule.seed);
  }

  if (!checkpoint_path.empty())
    save_checkpoint(checkpoint_path, net, config_digest, schedule.seed);
  return report;
}

void write_train_report(const std::string& path, const TrainReport& report,
                        std::uint64_t seed, std::uint64_t config_digest) {
  std::ostringstream out;
  out << "# seed " << seed << "\n";
  out << "# config " << std::hex << config_digest << std::dec << "\n";
  out << "epoch\tst\tsds\tct\tsc\tmc\twall_ms\n";
  char buf[64];
  for (const EpochStats& e : report.epochs) {
    out << e.epoch;
    for (double v : {e.losses.st, e.losses.sds, e.losses.ct, e.losses.sc, e.losses.mc}) {
      std::snprintf(buf, sizeof(buf), "%.6g", v);
      out << "\t" << buf;
    }
    std::snprintf(buf, sizeof(buf), "%.1f", e.wall_ms);
    out << "\t" << buf << "\n";
  }
  atomic_write(path, out.str());
}

ProbeResult train_modality_probe(const std::vector<Matrix>& features_per_modality,
                                 const std::vector<int>& hidden_widths, double lr,
                                 int steps, std::uint64_t seed) {
  if (features_per_modality.size() < 2)
    throw UsageError("probe needs at least two modalities");
  int in_dim = static_cast<int>(features_per_modality[0].cols());
  for (const Matrix& m : features_per_modality)
    if (m.cols() != in_dim)
      throw ConfigError("probe features must share one dimension");
  int n_mod = static_cast<int>(features_per_modality.size());

  ProbeResult probe;
  probe.hidden_widths = hidden_widths;
  probe.params = ParamGroup{"probe", {}, lr, 0.0};
  int in = in_dim;
  std::uint64_t salt = 0;
  for (int w : hidden_widths) {
    probe.params.mats.push_back(glorot_uniform(in, w, derive_seed(seed, "probe", salt++)));
    probe.params.mats.push_back(Matrix::Zero(1, w));
    in = w;
  }
  probe.params.mats.push_back(glorot_uniform(in, n_mod, derive_seed(seed, "probe", salt++)));
  probe.params.mats.push_back(Matrix::Zero(1, n_mod));

  Eigen::Index total_rows = 0;
  for (const Matrix& m : features_per_modality) total_rows += m.rows();
  Matrix all(total_rows, in_dim);
  Matrix onehots = Matrix::Zero(total_rows, n_mod);
  Eigen::Index at = 0;
  for (int mi = 0; mi < n_mod; ++mi) {
    const Matrix& m = features_per_modality[static_cast<std::size_t>(mi)];
    all.middleRows(at, m.rows()) = m;
    onehots.block(at, mi, m.rows(), 1).setOnes();
    at += m.rows();
  }

  probe.input_mean = all.colwise().mean();
  probe.input_scale.resize(1, in_dim);
  for (int c = 0; c < in_dim; ++c) {
    double var = (all.col(c).array() - probe.input_mean(0, c)).square().mean();
    probe.input_scale(0, c) = 1.0 / std::max(std::sqrt(var), 1e-8);
  }
  all = ((all.rowwise() - probe.input_mean.row(0)).array().rowwise() *
         probe.input_scale.row(0).array())
            .matrix();

  for (int step = 0; step < steps; ++step) {
    Tape tape;
    std::vector<Var> vars;
    for (const Matrix& m : probe.params.mats) vars.push_back(tape.leaf(m));
    Var h = tape.constant(all);
    std::size_t layers = hidden_widths.size();
    for (std::size_t l = 0; l < layers; ++l)
      h = relu(tape, affine(tape, h, vars[2 * l], vars[2 * l + 1]));
    Var logits = affine(tape, h, vars[2 * layers], vars[2 * layers + 1]);
    Var loss = sigmoid_cross_entropy(tape, logits, onehots,
                                     static_cast<double>(total_rows));
    tape.backward(loss);
    std::vector<Matrix> grads;
    for (Var v : vars) grads.push_back(tape.grad(v));
    sgd_step(probe.params, grads, 1.0);
  }
  probe.train_accuracy = probe_accuracy(probe, features_per_modality);
  return probe;
}

double probe_accuracy(const ProbeResult& probe,
                      const std::vector<Matrix>& features_per_modality) {
  std::size_t layers = probe.hidden_widths.size();
  Eigen::Index total = 0;
  Eigen::Index hits = 0;
  for (std::size_t mi = 0; mi < features_per_modality.size(); ++mi) {
    Matrix h = ((features_per_modality[mi].rowwise() - probe.input_mean.row(0))
                    .array()
                    .rowwise() *
                probe.input_scale.row(0).array())
                   .matrix();
    for (std::size_t l = 0; l < layers; ++l) {
      h = (h * probe.params.mats[2 * l]).eval();
      h.rowwise() += probe.params.mats[2 * l + 1].row(0);
      h = h.cwiseMax(0.0);
    }
    Matrix logits = h * probe.params.mats[2 * layers];
    logits.rowwise() += probe.params.mats[2 * layers + 1].row(0);
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      Eigen::Index best;
      logits.row(r).maxCoeff(&best);
      if (best == static_cast<Eigen::Index>(mi)) ++hits;
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

double modality_argmax_accuracy(const Matrix& logits,
                                const std::vector<int>& modality_of_row) {
  if (static_cast<std::size_t>(logits.rows()) != modality_of_row.size())
    throw UsageError("row count does not match modality labels");
  if (logits.rows() == 0) return 0.0;
  Eigen::Index hits = 0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    Eigen::Index best;
    logits.row(r).maxCoeff(&best);
    if (best == modality_of_row[static_cast<std::size_t>(r)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(logits.rows());
}

}  // namespace mhtn
