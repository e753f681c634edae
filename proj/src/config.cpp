#include "mhtn/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "mhtn/errors.hpp"
#include "mhtn/rng.hpp"

namespace mhtn {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<double> parse_doubles(const std::string& v, const std::string& where) {
  std::istringstream is(v);
  std::vector<double> out;
  double d;
  while (is >> d) out.push_back(d);
  if (out.empty()) throw ConfigError(where + ": expected numbers, got '" + v + "'");
  return out;
}

std::vector<int> parse_ints(const std::string& v, const std::string& where) {
  std::vector<int> out;
  for (double d : parse_doubles(v, where)) out.push_back(static_cast<int>(d));
  return out;
}

double parse_double(const std::string& v, const std::string& where) {
  auto d = parse_doubles(v, where);
  if (d.size() != 1) throw ConfigError(where + ": expected one number");
  return d[0];
}

int parse_int(const std::string& v, const std::string& where) {
  return static_cast<int>(parse_double(v, where));
}

bool parse_bool(const std::string& v, const std::string& where) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(where + ": expected a boolean, got '" + v + "'");
}

}  // namespace

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);

  RunConfig cfg;
  std::string section, line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    if (s.front() == '[' && s.back() == ']') {
      section = s.substr(1, s.size() - 2);
      continue;
    }
    std::size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key = value");
    std::string key = trim(s.substr(0, eq));
    std::string value = trim(s.substr(eq + 1));
    std::string where = path + ":" + std::to_string(line_no) + " (" + key + ")";

    if (section == "data") {
      if (key == "manifest") {
        cfg.manifest_path = value;
      } else if (key == "split") {
        auto f = parse_doubles(value, where);
        if (f.size() != 3) throw ConfigError(where + ": split needs three fractions");
        cfg.split = SplitFractions{f[0], f[1], f[2]};
      } else if (key == "pairing") {
        if (value == "by_label")
          cfg.pairing = PairingPolicy::by_label;
        else if (value == "pair_table")
          cfg.pairing = PairingPolicy::pair_table;
        else
          throw ConfigError(where + ": pairing must be by_label or pair_table");
      } else {
        throw ConfigError(where + ": unknown [data] key");
      }
    } else if (section == "network") {
      if (key == "pathway_widths")
        cfg.pathway_widths = parse_ints(value, where);
      else if (key == "common_widths")
        cfg.common_widths = parse_ints(value, where);
      else if (key == "discriminator_widths")
        cfg.discriminator_widths = parse_ints(value, where);
      else if (key == "pathway_lr")
        cfg.pathway_lr = parse_double(value, where);
      else if (key == "common_lr")
        cfg.common_lr = parse_double(value, where);
      else if (key == "discriminator_lr")
        cfg.discriminator_lr = parse_double(value, where);
      else if (key == "weight_decay")
        cfg.weight_decay = parse_double(value, where);
      else if (key == "w_st")
        cfg.weights.w_st = parse_double(value, where);
      else if (key == "w_sds")
        cfg.weights.w_sds = parse_double(value, where);
      else if (key == "w_ct")
        cfg.weights.w_ct = parse_double(value, where);
      else if (key == "w_sc")
        cfg.weights.w_sc = parse_double(value, where);
      else if (key == "lambda")
        cfg.weights.lambda = parse_double(value, where);
      else if (key == "transfer_layers")
        cfg.transfer_layers = parse_ints(value, where);
      else if (key == "kernel") {
        std::istringstream is(value);
        std::string mode;
        is >> mode;
        if (mode == "median") {
          cfg.kernel.mode = KernelConfig::Mode::median;
          std::vector<double> mult;
          double d;
          while (is >> d) mult.push_back(d);
          if (!mult.empty()) cfg.kernel.median_multipliers = mult;
        } else if (mode == "fixed") {
          cfg.kernel.mode = KernelConfig::Mode::fixed;
          std::vector<double> bw;
          double d;
          while (is >> d) bw.push_back(d);
          if (bw.empty()) throw ConfigError(where + ": fixed kernel needs bandwidths");
          cfg.kernel.fixed.bandwidths = bw;
          cfg.kernel.fixed.weights.assign(bw.size(), 1.0 / static_cast<double>(bw.size()));
        } else {
          throw ConfigError(where + ": kernel must be 'median [multipliers...]' or "
                            "'fixed <bandwidths...>'");
        }
      } else {
        throw ConfigError(where + ": unknown [network] key");
      }
    } else if (section == "train") {
      if (key == "epochs")
        cfg.schedule.epochs = parse_int(value, where);
      else if (key == "batch_documents")
        cfg.schedule.batch_size_documents = parse_int(value, where);
      else if (key == "batch_source")
        cfg.schedule.batch_size_source = parse_int(value, where);
      else if (key == "lr_scale")
        cfg.schedule.lr_scale = parse_double(value, where);
      else if (key == "checkpoint_every")
        cfg.schedule.checkpoint_every_epochs = parse_int(value, where);
      else if (key == "resample_documents")
        cfg.schedule.resample_documents_each_epoch = parse_bool(value, where);
      else if (key == "seed")
        cfg.seed = static_cast<std::uint64_t>(parse_double(value, where));
      else
        throw ConfigError(where + ": unknown [train] key");
    } else if (section == "ablation") {
      if (key == "no_source")
        cfg.no_source = parse_bool(value, where);
      else if (key == "no_sl_net")
        cfg.no_sl_net = parse_bool(value, where);
      else if (key == "no_adver")
        cfg.no_adver = parse_bool(value, where);
      else if (key == "no_sds")
        cfg.no_sds = parse_bool(value, where);
      else
        throw ConfigError(where + ": unknown [ablation] key");
    } else if (section == "synthetic") {
      if (key == "classes")
        cfg.synthetic.num_classes = parse_int(value, where);
      else if (key == "per_class")
        cfg.synthetic.per_class = parse_int(value, where);
      else if (key == "latent_dim")
        cfg.synthetic.latent_dim = parse_int(value, where);
      else if (key == "noise")
        cfg.synthetic.noise = parse_double(value, where);
      else if (key == "jitter")
        cfg.synthetic.jitter = parse_double(value, where);
      else if (key == "source_classes")
        cfg.synthetic.source_classes = parse_int(value, where);
      else if (key == "source_per_class")
        cfg.synthetic.source_per_class = parse_int(value, where);
      else if (key == "modalities") {
        // tag:dim pairs, e.g. "image:64 text:48 audio:32"
        std::istringstream is(value);
        std::string item;
        std::vector<std::pair<std::string, int>> dims;
        while (is >> item) {
          std::size_t colon = item.find(':');
          if (colon == std::string::npos)
            throw ConfigError(where + ": modalities entries look like tag:dim");
          dims.emplace_back(item.substr(0, colon),
                            parse_int(item.substr(colon + 1), where));
        }
        if (dims.empty()) throw ConfigError(where + ": no modalities given");
        cfg.synthetic.modality_dims = dims;
      } else {
        throw ConfigError(where + ": unknown [synthetic] key");
      }
    } else if (section == "output") {
      if (key == "dir")
        cfg.out_dir = value;
      else
        throw ConfigError(where + ": unknown [output] key");
    } else {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": unknown section [" +
                        section + "]");
    }
  }
  return cfg;
}

NetworkConfig resolve_network(const RunConfig& run, const Manifest& manifest) {
  NetworkConfig net;
  for (const auto& [tag, file] : manifest.modality_files) {
    ModalityData md = load_features(
        (manifest.base_dir.empty() ? file
                                   : manifest.base_dir + "/" + file));
    PathwaySpec p;
    p.modality = tag;
    p.input_dim = md.dim;
    p.layer_widths = run.pathway_widths;
    p.learning_rate = run.pathway_lr;
    net.pathways.push_back(std::move(p));
  }
  net.common_widths = run.common_widths;
  net.discriminator_widths = run.discriminator_widths;
  net.num_classes_target = manifest.classes;
  net.num_classes_source = manifest.source_classes;
  net.common_learning_rate = run.common_lr;
  net.discriminator_learning_rate = run.discriminator_lr;
  net.weight_decay = run.weight_decay;
  net.weights = run.weights;
  net.transfer_layers = run.transfer_layers;
  net.kernel = run.kernel;
  net.no_source = run.no_source || manifest.source_file.empty();
  net.no_sl_net = run.no_sl_net;
  net.no_adver = run.no_adver;
  net.no_sds = run.no_sds;
  net.validate();
  return net;
}

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) os << ",";
    os << v[i];
  }
  return os.str();
}

std::string join_d(const std::vector<double>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) os << ",";
    os << num(v[i]);
  }
  return os.str();
}

}  // namespace

std::string canonical_config(const RunConfig& run, const NetworkConfig& net) {
  std::map<std::string, std::string> kv;
  kv["ablation.no_adver"] = net.no_adver ? "1" : "0";
  kv["ablation.no_sds"] = net.no_sds ? "1" : "0";
  kv["ablation.no_sl_net"] = net.no_sl_net ? "1" : "0";
  kv["ablation.no_source"] = net.no_source ? "1" : "0";
  kv["data.pairing"] = run.pairing == PairingPolicy::by_label ? "by_label" : "pair_table";
  kv["data.split"] = num(run.split.train) + "," + num(run.split.test) + "," +
                     num(run.split.validation);
  {
    std::ostringstream os;
    for (std::size_t i = 0; i < net.pathways.size(); ++i) {
      if (i) os << ",";
      os << net.pathways[i].modality << ":" << net.pathways[i].input_dim;
    }
    kv["network.modalities"] = os.str();
  }
  kv["network.classes"] = std::to_string(net.num_classes_target);
  kv["network.source_classes"] = std::to_string(net.num_classes_source);
  kv["network.pathway_widths"] = join(run.pathway_widths);
  kv["network.common_widths"] = join(run.common_widths);
  kv["network.discriminator_widths"] = join(run.discriminator_widths);
  kv["network.pathway_lr"] = num(run.pathway_lr);
  kv["network.common_lr"] = num(run.common_lr);
  kv["network.discriminator_lr"] = num(run.discriminator_lr);
  kv["network.weight_decay"] = num(run.weight_decay);
  kv["network.w_st"] = num(net.weights.w_st);
  kv["network.w_sds"] = num(net.weights.w_sds);
  kv["network.w_ct"] = num(net.weights.w_ct);
  kv["network.w_sc"] = num(net.weights.w_sc);
  kv["network.lambda"] = num(net.weights.lambda);
  kv["network.transfer_layers"] = join(net.transfer_layers);
  kv["network.kernel"] =
      net.kernel.mode == KernelConfig::Mode::median
          ? "median:" + join_d(net.kernel.median_multipliers)
          : "fixed:" + join_d(net.kernel.fixed.bandwidths);
  kv["train.epochs"] = std::to_string(run.schedule.epochs);
  kv["train.batch_documents"] = std::to_string(run.schedule.batch_size_documents);
  kv["train.batch_source"] = std::to_string(run.schedule.batch_size_source);
  kv["train.lr_scale"] = num(run.schedule.lr_scale);
  kv["train.resample_documents"] =
      run.schedule.resample_documents_each_epoch ? "1" : "0";
  kv["train.seed"] = std::to_string(run.seed);

  std::ostringstream out;
  for (const auto& [k, v] : kv) out << k << "=" << v << "\n";
  return out.str();
}

std::uint64_t config_digest(const RunConfig& run, const NetworkConfig& net) {
  std::string s = canonical_config(run, net);
  return fnv1a64(s.data(), s.size());
}

}  // namespace mhtn
