#include <doctest.h>

#include <cstring>
#include <filesystem>

#include "mhtn/checkpoint.hpp"
#include "mhtn/errors.hpp"
#include "mhtn/network.hpp"
#include "mhtn/rng.hpp"
#include "oracles.hpp"

using namespace mhtn;

namespace {

NetworkConfig small_config(int modalities = 3) {
  NetworkConfig cfg;
  const char* tags[5] = {"image", "text", "audio", "video", "model3d"};
  int dims[5] = {10, 8, 6, 7, 9};
  for (int i = 0; i < modalities; ++i) {
    PathwaySpec p;
    p.modality = tags[i];
    p.input_dim = dims[i];
    p.layer_widths = {12, 12};
    cfg.pathways.push_back(p);
  }
  cfg.common_widths = {12, 12};
  cfg.discriminator_widths = {8, 8};
  cfg.num_classes_target = 4;
  cfg.num_classes_source = 5;
  return cfg;
}

BatchInputs small_batch(const NetworkConfig& cfg, int docs, int src, std::uint64_t seed) {
  Rng rng(seed);
  BatchInputs batch;
  for (const auto& p : cfg.pathways)
    batch.features[p.modality] = oracle::random_matrix(docs, p.input_dim, rng);
  for (int i = 0; i < docs; ++i)
    batch.labels.push_back(static_cast<int>(rng.index(
        static_cast<std::size_t>(cfg.num_classes_target))));
  if (cfg.has_source()) {
    batch.source_features = oracle::random_matrix(src, cfg.pathways[0].input_dim, rng);
    for (int i = 0; i < src; ++i)
      batch.source_labels.push_back(static_cast<int>(rng.index(
          static_cast<std::size_t>(cfg.num_classes_source))));
  }
  return batch;
}

}  // namespace

TEST_CASE("build: structural counts and determinism") {
  NetworkConfig cfg = small_config(2);
  StarNetwork net = build_network(cfg, 1);
  // source + image + text + common + discriminator
  CHECK(net.groups.size() == 5);
  CHECK(net.group_index("source") >= 0);
  CHECK(net.group_index("image") >= 0);
  CHECK(net.group_index("text") >= 0);
  CHECK(net.group_index("common") >= 0);
  CHECK(net.group_index("discriminator") >= 0);

  StarNetwork again = build_network(cfg, 1);
  for (std::size_t g = 0; g < net.groups.size(); ++g)
    for (std::size_t m = 0; m < net.groups[g].mats.size(); ++m)
      CHECK(std::memcmp(net.groups[g].mats[m].data(), again.groups[g].mats[m].data(),
                        sizeof(double) *
                            static_cast<std::size_t>(net.groups[g].mats[m].size())) == 0);
}

TEST_CASE("build: discriminator output width equals modality count") {
  StarNetwork five = build_network(small_config(5), 3);
  const ParamGroup& disc = five.group("discriminator");
  CHECK(disc.mats[disc.mats.size() - 2].cols() == 5);
  CHECK(disc.mats.back().cols() == 5);
}

TEST_CASE("build: source pathway starts as a copy of the image pathway") {
  StarNetwork net = build_network(small_config(3), 9);
  const ParamGroup& src = net.group("source");
  const ParamGroup& img = net.group("image");
  REQUIRE(src.mats.size() == img.mats.size() + 2);  // plus its own head
  for (std::size_t m = 0; m < img.mats.size(); ++m)
    CHECK(std::memcmp(src.mats[m].data(), img.mats[m].data(),
                      sizeof(double) * static_cast<std::size_t>(img.mats[m].size())) == 0);
}

TEST_CASE("build: config validation") {
  NetworkConfig cfg = small_config(2);
  cfg.pathways[0].modality = "text";
  CHECK_THROWS_AS(build_network(cfg, 0), ConfigError);

  cfg = small_config(2);
  cfg.pathways[1].layer_widths = {12, 9};  // final width differs
  CHECK_THROWS_AS(build_network(cfg, 0), ConfigError);

  cfg = small_config(2);
  cfg.num_classes_target = 0;
  CHECK_THROWS_AS(build_network(cfg, 0), ConfigError);

  cfg = small_config(2);
  cfg.transfer_layers = {5};
  CHECK_THROWS_AS(build_network(cfg, 0), ConfigError);
}

TEST_CASE("forward: shape contract and determinism") {
  NetworkConfig cfg = small_config(2);
  StarNetwork net = build_network(cfg, 2);
  BatchInputs batch = small_batch(cfg, 1, 2, 77);

  Tape t;
  StagedNetwork staged = stage(t, net);
  ForwardOutputs fwd = forward_document_batch(t, staged, batch);
  CHECK(t.value(fwd.common.at("image")).rows() == 1);
  CHECK(t.value(fwd.common.at("image")).cols() == 12);
  CHECK(t.value(fwd.common.at("text")).rows() == 1);
  CHECK(t.value(fwd.logits.at("image")).cols() == 4);
  CHECK(t.value(fwd.disc_logits.at("text")).cols() == 2);
  CHECK(t.value(fwd.source_logits).cols() == 5);
  CHECK(fwd.specific.at("image").size() == 2);

  Tape t2;
  StagedNetwork staged2 = stage(t2, net);
  ForwardOutputs fwd2 = forward_document_batch(t2, staged2, batch);
  CHECK(t.value(fwd.logits.at("image")) == t2.value(fwd2.logits.at("image")));
}

TEST_CASE("forward: NoSource drops source activations") {
  NetworkConfig cfg = small_config(2);
  cfg.no_source = true;
  StarNetwork net = build_network(cfg, 2);
  CHECK(net.group_index("source") < 0);
  BatchInputs batch = small_batch(cfg, 2, 0, 78);
  Tape t;
  StagedNetwork staged = stage(t, net);
  ForwardOutputs fwd = forward_document_batch(t, staged, batch);
  CHECK(fwd.source_specific.empty());
  CHECK_FALSE(fwd.source_logits.valid());
}

TEST_CASE("forward: missing modality is a config error") {
  NetworkConfig cfg = small_config(2);
  StarNetwork net = build_network(cfg, 2);
  BatchInputs batch = small_batch(cfg, 2, 2, 79);
  batch.features.erase("text");
  Tape t;
  StagedNetwork staged = stage(t, net);
  CHECK_THROWS_WITH_AS(forward_document_batch(t, staged, batch),
                       doctest::Contains("text"), ConfigError);
}

TEST_CASE("embed: rows are probability distributions") {
  NetworkConfig cfg = small_config(3);
  StarNetwork net = build_network(cfg, 5);
  Rng rng(101);
  Matrix rows = oracle::random_matrix(7, cfg.pathways[1].input_dim, rng, 2.0);
  Matrix probs = embed(net, "text", rows);
  CHECK(probs.rows() == 7);
  CHECK(probs.cols() == 4);
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    CHECK(std::abs(probs.row(r).sum() - 1.0) < 1e-9);
    CHECK(probs.row(r).minCoeff() >= 0.0);
  }
  CHECK_THROWS_AS(embed(net, "bogus", rows), UsageError);
}

TEST_CASE("embed: zero-weight classifier gives the uniform vector") {
  NetworkConfig cfg = small_config(2);
  StarNetwork net = build_network(cfg, 3);
  ParamGroup& common = net.group("common");
  common.mats[common.mats.size() - 2].setZero();
  common.mats.back().setZero();
  Rng rng(5);
  Matrix rows = oracle::random_matrix(3, cfg.pathways[0].input_dim, rng);
  Matrix probs = embed(net, "image", rows);
  CHECK((probs.array() - 0.25).abs().maxCoeff() < 1e-12);
}

TEST_CASE("embed: invariant to batch composition") {
  NetworkConfig cfg = small_config(3);
  StarNetwork net = build_network(cfg, 13);
  Rng rng(103);
  Matrix rows = oracle::random_matrix(6, cfg.pathways[2].input_dim, rng, 1.5);
  Matrix batched = embed(net, "audio", rows);
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    Matrix single = embed(net, "audio", rows.row(r));
    CHECK((single.row(0) - batched.row(r)).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("embed: NoAdver changes no forward value at identical parameters") {
  NetworkConfig cfg = small_config(3);
  StarNetwork full = build_network(cfg, 21);
  cfg.no_adver = true;
  StarNetwork lean = build_network(cfg, 21);
  CHECK(lean.group_index("discriminator") < 0);
  Rng rng(107);
  Matrix rows = oracle::random_matrix(4, cfg.pathways[1].input_dim, rng);
  Matrix a = embed(full, "text", rows);
  Matrix b = embed(lean, "text", rows);
  CHECK(std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0);
}

TEST_CASE("no_sl_net: per-modality classifiers on specific representations") {
  NetworkConfig cfg = small_config(3);
  cfg.no_sl_net = true;
  StarNetwork net = build_network(cfg, 4);
  CHECK(net.group_index("discriminator") < 0);
  const ParamGroup& common = net.group("common");
  CHECK(common.mats.size() == 6);  // one (W, b) per modality

  BatchInputs batch = small_batch(cfg, 3, 2, 80);
  Tape t;
  StagedNetwork staged = stage(t, net);
  ForwardOutputs fwd = forward_document_batch(t, staged, batch);
  CHECK(fwd.common.empty());
  CHECK(fwd.disc_logits.empty());
  CHECK(t.value(fwd.logits.at("audio")).cols() == 4);

  Rng rng(6);
  Matrix rows = oracle::random_matrix(2, cfg.pathways[1].input_dim, rng);
  Matrix probs = embed(net, "text", rows);
  for (Eigen::Index r = 0; r < probs.rows(); ++r)
    CHECK(std::abs(probs.row(r).sum() - 1.0) < 1e-9);
}

TEST_CASE("checkpoint round trip preserves parameters exactly") {
  namespace fs = std::filesystem;
  NetworkConfig cfg = small_config(2);
  StarNetwork net = build_network(cfg, 31);
  fs::path dir = fs::temp_directory_path() / "mhtn_ckpt_test";
  fs::create_directories(dir);
  std::string path = (dir / "net.bin").string();
  save_checkpoint(path, net, 0xabcdef, 31);

  CheckpointInfo info = read_checkpoint_info(path);
  CHECK(info.config_digest == 0xabcdef);
  CHECK(info.seed == 31);

  StarNetwork other = build_network(cfg, 99);
  load_checkpoint(path, other, 0xabcdef);
  for (std::size_t g = 0; g < net.groups.size(); ++g)
    for (std::size_t m = 0; m < net.groups[g].mats.size(); ++m)
      CHECK(std::memcmp(net.groups[g].mats[m].data(), other.groups[g].mats[m].data(),
                        sizeof(double) *
                            static_cast<std::size_t>(net.groups[g].mats[m].size())) == 0);

  StarNetwork third = build_network(cfg, 1);
  CHECK_THROWS_WITH_AS(load_checkpoint(path, third, 0x123456),
                       doctest::Contains("digest"), ConfigError);

  NetworkConfig narrower = small_config(2);
  narrower.common_widths = {12, 10};
  StarNetwork mismatched = build_network(narrower, 1);
  CHECK_THROWS_AS(load_checkpoint(path, mismatched, 0xabcdef), ConfigError);
}

TEST_CASE("checkpoint files are byte-identical for identical runs") {
  namespace fs = std::filesystem;
  NetworkConfig cfg = small_config(2);
  fs::path dir = fs::temp_directory_path() / "mhtn_ckpt_test";
  fs::create_directories(dir);
  std::string p1 = (dir / "a.bin").string(), p2 = (dir / "b.bin").string();
  save_checkpoint(p1, build_network(cfg, 7), 1, 7);
  save_checkpoint(p2, build_network(cfg, 7), 1, 7);
  CHECK(file_digest(p1) == file_digest(p2));
}
