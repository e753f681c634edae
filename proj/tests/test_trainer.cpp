#include <doctest.h>

#include <cstring>
#include <map>
#include <set>

#include "mhtn/errors.hpp"
#include "mhtn/trainer.hpp"
#include "mhtn/rng.hpp"
#include "oracles.hpp"

using namespace mhtn;

namespace {

NetworkConfig toy_config(int modalities, bool fixed_kernel = true) {
  NetworkConfig cfg;
  const char* tags[3] = {"image", "text", "audio"};
  int dims[3] = {10, 8, 6};
  for (int i = 0; i < modalities; ++i) {
    PathwaySpec p;
    p.modality = tags[i];
    p.input_dim = dims[i];
    p.layer_widths = {10, 10};
    cfg.pathways.push_back(p);
  }
  cfg.common_widths = {10, 10};
  cfg.discriminator_widths = {8, 8};
  cfg.num_classes_target = 3;
  cfg.num_classes_source = 4;
  if (fixed_kernel) {
    cfg.kernel.mode = KernelConfig::Mode::fixed;
    cfg.kernel.fixed = KernelSpec::single(1.0);
  }
  return cfg;
}

BatchInputs random_batch(const NetworkConfig& cfg, int docs, int src, std::uint64_t seed) {
  Rng rng(seed);
  BatchInputs batch;
  for (const auto& p : cfg.pathways)
    batch.features[p.modality] = oracle::random_matrix(docs, p.input_dim, rng);
  for (int i = 0; i < docs; ++i)
    batch.labels.push_back(static_cast<int>(
        rng.index(static_cast<std::size_t>(cfg.num_classes_target))));
  if (cfg.has_source()) {
    batch.source_features = oracle::random_matrix(src, cfg.pathways[0].input_dim, rng);
    for (int i = 0; i < src; ++i)
      batch.source_labels.push_back(static_cast<int>(
          rng.index(static_cast<std::size_t>(cfg.num_classes_source))));
  }
  return batch;
}

Dataset tiny_dataset(int classes, int per_class, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.num_classes = classes;
  spec.per_class = per_class;
  spec.modality_dims = {{"image", 10}, {"text", 8}};
  spec.latent_dim = 5;
  spec.source_classes = 2;
  spec.source_per_class = per_class;
  spec.seed = seed;
  return generate_synthetic(spec).target;
}

bool params_equal(const StarNetwork& a, const StarNetwork& b) {
  if (a.groups.size() != b.groups.size()) return false;
  for (std::size_t g = 0; g < a.groups.size(); ++g)
    for (std::size_t m = 0; m < a.groups[g].mats.size(); ++m)
      if (std::memcmp(a.groups[g].mats[m].data(), b.groups[g].mats[m].data(),
                      sizeof(double) *
                          static_cast<std::size_t>(a.groups[g].mats[m].size())) != 0)
        return false;
  return true;
}

}  // namespace

TEST_CASE("assemble_documents: one document per training image") {
  Dataset d = tiny_dataset(3, 5, 2);
  auto docs = assemble_documents(d, PairingPolicy::by_label, 1);
  CHECK(docs.size() == d.modalities[0].instances.size());
  for (const auto& doc : docs) {
    REQUIRE(doc.member_rows.size() == 2);
    CHECK(d.modalities[0].instances[doc.member_rows[0]].label == doc.label);
    CHECK(d.modalities[1].instances[doc.member_rows[1]].label == doc.label);
  }
  auto again = assemble_documents(d, PairingPolicy::by_label, 1);
  for (std::size_t i = 0; i < docs.size(); ++i)
    CHECK(docs[i].member_rows == again[i].member_rows);
  auto other = assemble_documents(d, PairingPolicy::by_label, 2);
  bool any_diff = false;
  for (std::size_t i = 0; i < docs.size(); ++i)
    any_diff = any_diff || docs[i].member_rows != other[i].member_rows;
  CHECK(any_diff);
}

TEST_CASE("assemble_documents: one instance per class makes assembly seed-free") {
  Dataset d = tiny_dataset(3, 1, 4);
  auto a = assemble_documents(d, PairingPolicy::by_label, 10);
  auto b = assemble_documents(d, PairingPolicy::by_label, 999);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].member_rows == b[i].member_rows);
}

TEST_CASE("assemble_documents: paired data replays the given pairs") {
  Dataset d = tiny_dataset(2, 4, 5);
  PairTable table;
  for (std::size_t i = 0; i < d.modalities[0].instances.size(); ++i) {
    // pair image i with a text of the same class
    const auto& img = d.modalities[0].instances[i];
    for (const auto& txt : d.modalities[1].instances)
      if (txt.label == img.label) {
        table.push_back({img.id, txt.id});
        break;
      }
  }
  d.pair_table = table;
  auto docs = assemble_documents(d, PairingPolicy::pair_table, 3);
  REQUIRE(docs.size() == table.size());
  for (std::size_t i = 0; i < docs.size(); ++i) {
    CHECK(d.modalities[0].instances[docs[i].member_rows[0]].id == table[i][0]);
    CHECK(d.modalities[1].instances[docs[i].member_rows[1]].id == table[i][1]);
  }
}

TEST_CASE("assemble_documents: empty class in a modality names class and modality") {
  Dataset d = tiny_dataset(3, 2, 6);
  auto& text = d.modalities[1];
  text.instances.erase(
      std::remove_if(text.instances.begin(), text.instances.end(),
                     [](const Instance& i) { return i.label == 1; }),
      text.instances.end());
  CHECK_THROWS_WITH_AS(assemble_documents(d, PairingPolicy::by_label, 1),
                       doctest::Contains("text"), ConfigError);
}

TEST_CASE("train_step: lr_scale 0 reports losses but changes nothing") {
  NetworkConfig cfg = toy_config(2);
  StarNetwork net = build_network(cfg, 3);
  StarNetwork before = build_network(cfg, 3);
  BatchInputs batch = random_batch(cfg, 4, 4, 9);
  LossBundle bundle = train_step(net, batch, 0.0);
  CHECK(params_equal(net, before));
  CHECK(bundle.sc > 0.0);
  CHECK(bundle.mc > 0.0);
  CHECK(bundle.st >= 0.0);
}

TEST_CASE("train_step: SC-only training converges on a separable toy batch") {
  NetworkConfig cfg = toy_config(2);
  cfg.no_source = true;
  cfg.no_adver = true;
  cfg.weights.w_ct = 0.0;
  StarNetwork net = build_network(cfg, 5);

  // two well-separated clusters per modality
  BatchInputs batch;
  Rng rng(31);
  Matrix img(6, 10), txt(6, 8);
  for (int i = 0; i < 6; ++i) {
    double sign = i < 3 ? 1.0 : -1.0;
    for (int j = 0; j < 10; ++j) img(i, j) = sign * 2.0 + 0.1 * rng.uniform();
    for (int j = 0; j < 8; ++j) txt(i, j) = sign * 2.0 + 0.1 * rng.uniform();
    batch.labels.push_back(i < 3 ? 0 : 1);
  }
  batch.features["image"] = img;
  batch.features["text"] = txt;

  double last = 0.0;
  for (int step = 0; step < 200; ++step) last = train_step(net, batch, 1.0).sc;
  CHECK(last < 0.05);
}

TEST_CASE("train_step: generator-side MC gradient equals -lambda times unreversed") {
  NetworkConfig cfg = toy_config(2);
  cfg.weights.lambda = 0.1;
  StarNetwork net = build_network(cfg, 11);
  BatchInputs batch = random_batch(cfg, 3, 3, 13);

  auto mc_gradients = [&](bool reversal) {
    Tape t;
    StagedNetwork staged = stage(t, net);
    ForwardOutputs fwd = forward_document_batch(t, staged, batch, reversal);
    Var mc{};
    for (std::size_t mi = 0; mi < cfg.pathways.size(); ++mi) {
      Var logits = fwd.disc_logits.at(cfg.pathways[mi].modality);
      Matrix onehot = Matrix::Zero(t.value(logits).rows(), 2);
      onehot.col(static_cast<int>(mi)).setOnes();
      Var term = modal_adversarial_loss(t, logits, onehot,
                                        static_cast<double>(batch.labels.size()));
      mc = mc.valid() ? add(t, mc, term) : term;
    }
    t.backward(mc);
    return collect_gradients(t, staged);
  };

  auto with_grl = mc_gradients(true);
  auto no_grl = mc_gradients(false);
  double lambda = cfg.weights.lambda;
  for (const char* name : {"image", "text", "common"}) {
    std::size_t g = static_cast<std::size_t>(net.group_index(name));
    for (std::size_t m = 0; m < with_grl[g].size(); ++m) {
      Matrix expect = -lambda * no_grl[g][m];
      CHECK((with_grl[g][m] - expect).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
  // the discriminator itself sees the unreversed gradient either way
  std::size_t dg = static_cast<std::size_t>(net.group_index("discriminator"));
  for (std::size_t m = 0; m < with_grl[dg].size(); ++m)
    CHECK((with_grl[dg][m] - no_grl[dg][m]).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("train_step: small steps do not increase the generator objective") {
  NetworkConfig cfg = toy_config(3);
  int decreased = 0, total = 0;
  for (std::uint64_t trial = 0; trial < 40; ++trial) {
    StarNetwork net = build_network(cfg, 100 + trial);
    BatchInputs batch = random_batch(cfg, 6, 6, 200 + trial);
    double before = train_step(net, batch, 0.0).generator_objective();
    train_step(net, batch, 1e-3);
    double after = train_step(net, batch, 0.0).generator_objective();
    if (after <= before + 1e-12) ++decreased;
    ++total;
  }
  CHECK(static_cast<double>(decreased) / total >= 0.95);
}

TEST_CASE("discriminator-only steps monotonically decrease MC") {
  NetworkConfig cfg = toy_config(2);
  StarNetwork net = build_network(cfg, 17);
  BatchInputs batch = random_batch(cfg, 8, 4, 19);

  auto mc_only_step = [&](double lr_scale) {
    Tape t;
    StagedNetwork staged = stage(t, net);
    ForwardOutputs fwd = forward_document_batch(t, staged, batch, false);
    Var mc{};
    for (std::size_t mi = 0; mi < cfg.pathways.size(); ++mi) {
      Var logits = fwd.disc_logits.at(cfg.pathways[mi].modality);
      Matrix onehot = Matrix::Zero(t.value(logits).rows(), 2);
      onehot.col(static_cast<int>(mi)).setOnes();
      Var term = modal_adversarial_loss(t, logits, onehot,
                                        static_cast<double>(batch.labels.size()));
      mc = mc.valid() ? add(t, mc, term) : term;
    }
    double value = t.value(mc)(0, 0);
    if (lr_scale > 0.0) {
      t.backward(mc);
      auto grads = collect_gradients(t, staged);
      std::size_t dg = static_cast<std::size_t>(net.group_index("discriminator"));
      sgd_step(net.groups[dg], grads[dg], lr_scale);
    }
    return value;
  };

  double prev = mc_only_step(0.0);
  for (int i = 0; i < 20; ++i) {
    mc_only_step(1.0);  // discriminator lr is already small (0.001)
    double now = mc_only_step(0.0);
    CHECK(now < prev);
    prev = now;
  }
}

TEST_CASE("train: zero epochs leaves parameters untouched and report empty") {
  NetworkConfig cfg = toy_config(2);
  StarNetwork net = build_network(cfg, 23);
  StarNetwork before = build_network(cfg, 23);
  Dataset target = tiny_dataset(3, 4, 29);
  SyntheticSpec sspec;
  sspec.num_classes = 4;
  sspec.per_class = 3;
  sspec.modality_dims = {{"image", 10}};
  sspec.latent_dim = 5;
  sspec.source_classes = 4;
  sspec.seed = 3;
  Dataset source = generate_synthetic(sspec).source;

  TrainSchedule sched;
  sched.epochs = 0;
  TrainReport report = train(net, source, target, PairingPolicy::by_label, sched);
  CHECK(report.epochs.empty());
  CHECK(params_equal(net, before));
}

TEST_CASE("train: identical seeds give identical parameters and loss curves") {
  NetworkConfig cfg = toy_config(2);
  cfg.num_classes_target = 3;
  cfg.num_classes_source = 2;
  Dataset target = tiny_dataset(3, 6, 37);
  SyntheticSpec sspec;
  sspec.num_classes = 2;
  sspec.per_class = 8;
  sspec.modality_dims = {{"image", 10}};
  sspec.latent_dim = 5;
  sspec.source_classes = 2;
  sspec.source_per_class = 8;
  sspec.seed = 5;
  Dataset source = generate_synthetic(sspec).source;

  TrainSchedule sched;
  sched.epochs = 2;
  sched.batch_size_documents = 4;
  sched.batch_size_source = 4;
  sched.seed = 77;

  StarNetwork a = build_network(cfg, 41);
  StarNetwork b = build_network(cfg, 41);
  TrainReport ra = train(a, source, target, PairingPolicy::by_label, sched);
  TrainReport rb = train(b, source, target, PairingPolicy::by_label, sched);
  CHECK(params_equal(a, b));
  REQUIRE(ra.epochs.size() == rb.epochs.size());
  for (std::size_t e = 0; e < ra.epochs.size(); ++e) {
    CHECK(ra.epochs[e].losses.sc == rb.epochs[e].losses.sc);
    CHECK(ra.epochs[e].losses.mc == rb.epochs[e].losses.mc);
  }

  TrainSchedule other = sched;
  other.seed = 78;
  StarNetwork c = build_network(cfg, 41);
  train(c, source, target, PairingPolicy::by_label, other);
  CHECK_FALSE(params_equal(a, c));
}

TEST_CASE("non-finite loss aborts naming the term") {
  NetworkConfig cfg = toy_config(2);
  StarNetwork net = build_network(cfg, 51);
  // two huge consecutive layers overflow the common activations to inf
  ParamGroup& common = net.group("common");
  common.mats[0].setConstant(1e200);
  common.mats[2].setConstant(1e200);
  BatchInputs batch = random_batch(cfg, 2, 2, 53);
  CHECK_THROWS_WITH_AS(train_step(net, batch, 1.0), doctest::Contains("loss"),
                       NumericError);
}

TEST_CASE("modality probe separates distinct clusters") {
  Rng rng(61);
  std::vector<Matrix> feats;
  for (int m = 0; m < 3; ++m) {
    Matrix f = oracle::random_matrix(30, 6, rng, 0.3);
    f.array() += 3.0 * m;
    feats.push_back(f);
  }
  ProbeResult probe = train_modality_probe(feats, {8}, 0.5, 60, 71);
  CHECK(probe.train_accuracy >= 0.95);
  CHECK(probe_accuracy(probe, feats) == probe.train_accuracy);
}

TEST_CASE("modality_argmax_accuracy") {
  Matrix logits(3, 2);
  logits << 2, 1, 0, 1, 5, -1;
  CHECK(modality_argmax_accuracy(logits, {0, 1, 0}) == doctest::Approx(1.0));
  CHECK(modality_argmax_accuracy(logits, {1, 1, 0}) == doctest::Approx(2.0 / 3.0));
}
