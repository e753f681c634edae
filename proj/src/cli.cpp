#include "mhtn/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "mhtn/checkpoint.hpp"
#include "mhtn/config.hpp"
#include "mhtn/errors.hpp"
#include "mhtn/retrieval.hpp"

namespace fs = std::filesystem;

namespace mhtn {

namespace {

struct CommonFlags {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<double> lambda;
  bool no_source = false, no_sl_net = false, no_adver = false, no_sds = false;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool with_ablations) {
  cmd->add_option("--config", f.config_path, "run configuration file");
  cmd->add_option("--out", f.out_dir, "output directory (default: $MHTN_OUT_DIR or .)");
  cmd->add_option("--seed", f.seed, "override the configured seed");
  if (with_ablations) {
    cmd->add_option("--epochs", f.epochs, "override the configured epoch count");
    cmd->add_option("--lambda", f.lambda, "override the adversarial weight");
    cmd->add_flag("--no-source", f.no_source, "drop the source image pathway");
    cmd->add_flag("--no-sl-net", f.no_sl_net,
                  "classify on specific representations (no shared layers)");
    cmd->add_flag("--no-adver", f.no_adver, "drop the modality discriminator");
    cmd->add_flag("--no-sds", f.no_sds, "drop the source supervision loss");
  }
}

RunConfig load_with_overrides(const CommonFlags& f) {
  RunConfig cfg;
  if (!f.config_path.empty()) cfg = load_run_config(f.config_path);
  if (f.seed) cfg.seed = *f.seed;
  if (f.epochs) cfg.schedule.epochs = *f.epochs;
  if (f.lambda) cfg.weights.lambda = *f.lambda;
  cfg.no_source |= f.no_source;
  cfg.no_sl_net |= f.no_sl_net;
  cfg.no_adver |= f.no_adver;
  cfg.no_sds |= f.no_sds;
  if (!f.out_dir.empty()) {
    cfg.out_dir = f.out_dir;
  } else if (cfg.out_dir.empty()) {
    const char* env = std::getenv("MHTN_OUT_DIR");
    cfg.out_dir = env ? env : ".";
  }
  cfg.schedule.seed = cfg.seed;
  return cfg;
}

std::string out_path(const RunConfig& cfg, const std::string& name) {
  fs::create_directories(cfg.out_dir);
  return (fs::path(cfg.out_dir) / name).string();
}

int cmd_gen(const CommonFlags& flags, const SyntheticSpec& cli_spec, bool spec_touched) {
  RunConfig cfg = load_with_overrides(flags);
  SyntheticSpec spec = spec_touched ? cli_spec : cfg.synthetic;
  spec.seed = cfg.seed;
  spec.validate();

  SyntheticData data = generate_synthetic(spec);
  std::vector<std::string> stamp = {"seed " + std::to_string(spec.seed)};

  Manifest m;
  m.classes = spec.num_classes;
  m.source_classes = spec.source_classes;
  for (const auto& md : data.target.modalities) {
    std::string file = md.modality + ".feat";
    write_features(out_path(cfg, file), md, stamp);
    m.modality_files.emplace_back(md.modality, file);
  }
  write_features(out_path(cfg, "source.feat"), data.source.modalities[0], stamp);
  m.source_file = "source.feat";
  write_manifest(out_path(cfg, "manifest.txt"), m, stamp);
  std::cout << "wrote " << m.modality_files.size() << " modality files + source + manifest to "
            << cfg.out_dir << "\n";
  return 0;
}

struct LoadedRun {
  RunConfig cfg;
  Manifest manifest;
  NetworkConfig net_cfg;
  std::uint64_t digest = 0;
};

LoadedRun prepare(const CommonFlags& flags) {
  LoadedRun run;
  run.cfg = load_with_overrides(flags);
  if (run.cfg.manifest_path.empty())
    throw UsageError("config is missing [data] manifest");
  run.manifest = load_manifest(run.cfg.manifest_path);
  run.net_cfg = resolve_network(run.cfg, run.manifest);
  run.digest = config_digest(run.cfg, run.net_cfg);
  return run;
}

int cmd_train(const CommonFlags& flags) {
  LoadedRun run = prepare(flags);
  Dataset target = load_target_dataset(run.manifest);
  Dataset source;
  if (run.net_cfg.has_source()) source = load_source_dataset(run.manifest);

  SplitResult parts = split(target, run.cfg.split, run.cfg.seed);
  StarNetwork net = build_network(run.net_cfg, run.cfg.seed);

  std::string ckpt = out_path(run.cfg, "checkpoint.bin");
  TrainReport report = train(net, source, parts.train, run.cfg.pairing,
                             run.cfg.schedule, ckpt, run.digest);
  write_train_report(out_path(run.cfg, "train_report.tsv"), report, run.cfg.seed,
                     run.digest);
  if (!report.epochs.empty()) {
    const auto& last = report.epochs.back().losses;
    std::cout << "epoch " << report.epochs.size() << ": st=" << last.st
              << " sds=" << last.sds << " ct=" << last.ct << " sc=" << last.sc
              << " mc=" << last.mc << "\n";
  }
  std::cout << "checkpoint: " << ckpt << "\n";
  return 0;
}

const Dataset& pick_split(const SplitResult& parts, const std::string& name) {
  if (name == "train") return parts.train;
  if (name == "test") return parts.test;
  if (name == "validation") return parts.validation;
  throw UsageError("unknown split '" + name + "'");
}

int cmd_eval(const CommonFlags& flags, const std::string& checkpoint,
             const std::string& split_name) {
  LoadedRun run = prepare(flags);
  StarNetwork net = build_network(run.net_cfg, run.cfg.seed);
  load_checkpoint(checkpoint, net, run.digest);

  Dataset target = load_target_dataset(run.manifest);
  SplitResult parts = split(target, run.cfg.split, run.cfg.seed);
  const Dataset& eval_set = pick_split(parts, split_name);

  std::vector<EmbeddedModality> sets;
  for (const auto& md : eval_set.modalities) {
    EmbeddedModality em;
    em.modality = md.modality;
    Matrix rows(static_cast<Eigen::Index>(md.instances.size()), md.dim);
    for (std::size_t i = 0; i < md.instances.size(); ++i) {
      rows.row(static_cast<Eigen::Index>(i)) = md.instances[i].features.transpose();
      em.ids.push_back(md.instances[i].id);
      em.labels.push_back(md.instances[i].label);
    }
    em.rows = embed(net, md.modality, rows);
    sets.push_back(std::move(em));
  }
  TaskMatrix results = evaluate_all(sets);
  write_results(out_path(run.cfg, "results.tsv"), results, run.cfg.seed, run.digest);
  write_pr_curves(run.cfg.out_dir, results, run.cfg.seed, run.digest);
  for (const auto& t : results.tasks)
    std::cout << t.query_modality << " -> " << t.gallery_modality << "  MAP "
              << t.map << "\n";
  std::cout << "average MAP " << results.average << "\n";
  return 0;
}

int cmd_embed(const CommonFlags& flags, const std::string& checkpoint,
              const std::string& features_path, const std::string& output_path) {
  LoadedRun run = prepare(flags);
  StarNetwork net = build_network(run.net_cfg, run.cfg.seed);
  load_checkpoint(checkpoint, net, run.digest);

  ModalityData in = load_features(features_path);
  if (!run.net_cfg.find_pathway(in.modality))
    throw UsageError("checkpoint knows no modality '" + in.modality + "'");

  Matrix rows(static_cast<Eigen::Index>(in.instances.size()), in.dim);
  for (std::size_t i = 0; i < in.instances.size(); ++i)
    rows.row(static_cast<Eigen::Index>(i)) = in.instances[i].features.transpose();
  Matrix probs = embed(net, in.modality, rows);

  ModalityData out;
  out.modality = in.modality;
  out.dim = run.net_cfg.num_classes_target;
  for (std::size_t i = 0; i < in.instances.size(); ++i)
    out.instances.push_back(Instance{in.instances[i].id, in.instances[i].label,
                                     probs.row(static_cast<Eigen::Index>(i)).transpose()});
  std::string path = output_path.empty() ? out_path(run.cfg, "embeddings.feat")
                                         : output_path;
  write_features(path, out,
                 {"seed " + std::to_string(run.cfg.seed),
                  "config " + std::to_string(run.digest)});
  std::cout << "embedded " << out.instances.size() << " instances -> " << path << "\n";
  return 0;
}

}  // namespace

int cli_run(const std::vector<std::string>& args) {
  CLI::App app{"hybrid-transfer cross-modal retrieval over precomputed features"};
  app.require_subcommand(1);

  CommonFlags gen_flags, train_flags, eval_flags, embed_flags;
  SyntheticSpec gen_spec;
  std::string gen_modalities;
  std::string eval_checkpoint, eval_split = "test";
  std::string embed_checkpoint, embed_features, embed_output;

  CLI::App* gen = app.add_subcommand("gen", "generate a synthetic multimodal benchmark");
  add_common(gen, gen_flags, false);
  gen->add_option("--classes", gen_spec.num_classes, "target class count");
  gen->add_option("--per-class", gen_spec.per_class, "instances per class per modality");
  gen->add_option("--modalities", gen_modalities, "tag:dim list, e.g. image:64,text:48");
  gen->add_option("--latent-dim", gen_spec.latent_dim, "shared semantic dimension");
  gen->add_option("--noise", gen_spec.noise, "observation noise scale");
  gen->add_option("--jitter", gen_spec.jitter, "within-class latent spread");
  gen->add_option("--source-classes", gen_spec.source_classes, "source class count");
  gen->add_option("--source-per-class", gen_spec.source_per_class,
                  "source instances per class");

  CLI::App* train = app.add_subcommand("train", "train and write a checkpoint");
  add_common(train, train_flags, true);

  CLI::App* eval = app.add_subcommand("eval", "bi-modal retrieval over a checkpoint");
  add_common(eval, eval_flags, true);
  eval->add_option("--checkpoint", eval_checkpoint, "trained checkpoint")->required();
  eval->add_option("--split", eval_split, "train | test | validation");

  CLI::App* embed_cmd = app.add_subcommand("embed", "embed one feature file");
  add_common(embed_cmd, embed_flags, true);
  embed_cmd->add_option("--checkpoint", embed_checkpoint, "trained checkpoint")->required();
  embed_cmd->add_option("--features", embed_features, "input feature file")->required();
  embed_cmd->add_option("--output", embed_output, "output embeddings file");

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) {
      bool touched = gen->count("--classes") || gen->count("--per-class") ||
                     gen->count("--modalities") || gen->count("--latent-dim") ||
                     gen->count("--noise") || gen->count("--jitter") ||
                     gen->count("--source-classes") || gen->count("--source-per-class");
      if (!gen_modalities.empty()) {
        std::vector<std::pair<std::string, int>> dims;
        std::string item;
        std::istringstream is(gen_modalities);
        while (std::getline(is, item, ',')) {
          std::size_t colon = item.find(':');
          if (colon == std::string::npos)
            throw UsageError("--modalities entries look like tag:dim");
          dims.emplace_back(item.substr(0, colon), std::stoi(item.substr(colon + 1)));
        }
        gen_spec.modality_dims = dims;
      }
      return cmd_gen(gen_flags, gen_spec, touched);
    }
    if (train->parsed()) return cmd_train(train_flags);
    if (eval->parsed()) return cmd_eval(eval_flags, eval_checkpoint, eval_split);
    if (embed_cmd->parsed())
      return cmd_embed(embed_flags, embed_checkpoint, embed_features, embed_output);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace mhtn
