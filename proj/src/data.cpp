#include "mhtn/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "mhtn/checkpoint.hpp"
#include "mhtn/errors.hpp"
#include "mhtn/rng.hpp"

namespace fs = std::filesystem;

namespace mhtn {

const Instance* ModalityData::find(long long id) const {
  for (const auto& ins : instances)
    if (ins.id == id) return &ins;
  return nullptr;
}

const ModalityData* Dataset::find(const std::string& modality) const {
  for (const auto& m : modalities)
    if (m.modality == modality) return &m;
  return nullptr;
}

ModalityData* Dataset::find(const std::string& modality) {
  for (auto& m : modalities)
    if (m.modality == modality) return &m;
  return nullptr;
}

std::size_t Dataset::total_instances() const {
  std::size_t n = 0;
  for (const auto& m : modalities) n += m.instances.size();
  return n;
}

void Dataset::validate() const {
  for (const auto& m : modalities) {
    std::set<long long> seen;
    for (const auto& ins : m.instances) {
      if (!seen.insert(ins.id).second)
        throw ConfigError("duplicate id " + std::to_string(ins.id) + " in modality " +
                          m.modality);
      if (ins.features.size() != m.dim)
        throw ConfigError("instance " + std::to_string(ins.id) + " in " + m.modality +
                          " has wrong dimension");
      if (ins.label != kUnlabeled && (ins.label < 0 || ins.label >= num_classes))
        throw ConfigError("instance " + std::to_string(ins.id) + " in " + m.modality +
                          " has label outside [0, " + std::to_string(num_classes) + ")");
    }
  }
  if (pair_table) {
    for (const auto& g : *pair_table) {
      if (g.size() != modalities.size())
        throw ConfigError("pair table group width does not match modality count");
      for (std::size_t i = 0; i < g.size(); ++i)
        if (!modalities[i].find(g[i]))
          throw ConfigError("pair table references missing id " + std::to_string(g[i]) +
                            " in modality " + modalities[i].modality);
    }
  }
}

std::uint64_t dataset_digest(const Dataset& d) {
  std::uint64_t h = fnv1a64(&d.num_classes, sizeof(d.num_classes));
  for (const auto& m : d.modalities) {
    h = fnv1a64(m.modality.data(), m.modality.size(), h);
    h = fnv1a64(&m.dim, sizeof(m.dim), h);
    for (const auto& ins : m.instances) {
      h = fnv1a64(&ins.id, sizeof(ins.id), h);
      h = fnv1a64(&ins.label, sizeof(ins.label), h);
      h = fnv1a64(ins.features.data(),
                  sizeof(double) * static_cast<std::size_t>(ins.features.size()), h);
    }
  }
  return h;
}

namespace {

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

ModalityData load_features(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open feature file " + path);
  ModalityData data;
  std::string line;
  int line_no = 0;
  long long declared = -1;
  int num_classes = -1;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream is(line);
    if (!have_header) {
      long long count;
      if (!(is >> data.modality >> count >> data.dim))
        throw ConfigError(path + ":" + std::to_string(line_no) + ": malformed header");
      if (count < 0 || data.dim <= 0)
        throw ConfigError(path + ":" + std::to_string(line_no) + ": bad header counts");
      is >> num_classes;  // optional
      declared = count;
      have_header = true;
      continue;
    }
    Instance ins;
    if (!(is >> ins.id >> ins.label))
      throw ConfigError(path + ":" + std::to_string(line_no) + ": malformed row");
    ins.features.resize(data.dim);
    for (int i = 0; i < data.dim; ++i) {
      if (!(is >> ins.features[i]))
        throw ConfigError(path + ":" + std::to_string(line_no) + ": row has " +
                          std::to_string(i) + " values, expected " + std::to_string(data.dim));
      if (!std::isfinite(ins.features[i]))
        throw ConfigError(path + ":" + std::to_string(line_no) + ": non-finite value");
    }
    double extra;
    if (is >> extra)
      throw ConfigError(path + ":" + std::to_string(line_no) + ": row wider than dim " +
                        std::to_string(data.dim));
    if (ins.label < kUnlabeled || (num_classes > 0 && ins.label >= num_classes))
      throw ConfigError(path + ":" + std::to_string(line_no) + ": label out of range");
    data.instances.push_back(std::move(ins));
  }
  if (!have_header) throw ConfigError(path + ": empty feature file (no header)");
  if (declared >= 0 && declared != static_cast<long long>(data.instances.size()))
    throw ConfigError(path + ": header declares " + std::to_string(declared) +
                      " rows, found " + std::to_string(data.instances.size()));
  std::set<long long> seen;
  for (const auto& ins : data.instances)
    if (!seen.insert(ins.id).second)
      throw ConfigError(path + ": duplicate instance id " + std::to_string(ins.id));
  return data;
}

void write_features(const std::string& path, const ModalityData& data,
                    const std::vector<std::string>& comments) {
  std::ostringstream out;
  for (const auto& c : comments) out << "# " << c << "\n";
  out << data.modality << " " << data.instances.size() << " " << data.dim << "\n";
  for (const auto& ins : data.instances) {
    out << ins.id << " " << ins.label;
    for (Eigen::Index i = 0; i < ins.features.size(); ++i)
      out << " " << fmt_double(ins.features[i]);
    out << "\n";
  }
  atomic_write(path, out.str());
}

Manifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open manifest " + path);
  Manifest m;
  m.base_dir = fs::path(path).parent_path().string();
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream is(line);
    std::string key;
    is >> key;
    auto fail = [&](const std::string& msg) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": " + msg);
    };
    if (key == "classes") {
      if (!(is >> m.classes)) fail("classes needs a count");
    } else if (key == "source_classes") {
      if (!(is >> m.source_classes)) fail("source_classes needs a count");
    } else if (key == "modality") {
      std::string tag, file;
      if (!(is >> tag >> file)) fail("modality needs <tag> <file>");
      m.modality_files.emplace_back(tag, file);
    } else if (key == "source") {
      if (!(is >> m.source_file)) fail("source needs a file");
    } else if (key == "pair_table") {
      if (!(is >> m.pair_table_file)) fail("pair_table needs a file");
    } else {
      fail("unknown manifest key '" + key + "'");
    }
  }
  if (m.classes <= 0) throw ConfigError(path + ": manifest missing classes");
  if (m.modality_files.empty()) throw ConfigError(path + ": manifest lists no modalities");
  return m;
}

void write_manifest(const std::string& path, const Manifest& m,
                    const std::vector<std::string>& comments) {
  std::ostringstream out;
  for (const auto& c : comments) out << "# " << c << "\n";
  out << "classes " << m.classes << "\n";
  if (m.source_classes > 0) out << "source_classes " << m.source_classes << "\n";
  for (const auto& [tag, file] : m.modality_files)
    out << "modality " << tag << " " << file << "\n";
  if (!m.source_file.empty()) out << "source " << m.source_file << "\n";
  if (!m.pair_table_file.empty()) out << "pair_table " << m.pair_table_file << "\n";
  atomic_write(path, out.str());
}

namespace {

std::string resolve(const std::string& base, const std::string& file) {
  fs::path p(file);
  if (p.is_absolute() || base.empty()) return file;
  return (fs::path(base) / p).string();
}

PairTable load_pair_table(const std::string& path, std::size_t width) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open pair table " + path);
  PairTable table;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream is(line);
    std::vector<long long> group;
    long long id;
    while (is >> id) group.push_back(id);
    if (group.size() != width)
      throw ConfigError(path + ":" + std::to_string(line_no) + ": group has " +
                        std::to_string(group.size()) + " ids, expected " +
                        std::to_string(width));
    table.push_back(std::move(group));
  }
  return table;
}

}  // namespace

Dataset load_target_dataset(const Manifest& m) {
  Dataset d;
  d.num_classes = m.classes;
  for (const auto& [tag, file] : m.modality_files) {
    ModalityData md = load_features(resolve(m.base_dir, file));
    if (md.modality != tag)
      throw ConfigError(file + " declares modality '" + md.modality +
                        "' but the manifest says '" + tag + "'");
    d.modalities.push_back(std::move(md));
  }
  if (!m.pair_table_file.empty())
    d.pair_table = load_pair_table(resolve(m.base_dir, m.pair_table_file),
                                   d.modalities.size());
  d.validate();
  return d;
}

Dataset load_source_dataset(const Manifest& m) {
  if (m.source_file.empty()) throw ConfigError("manifest has no source feature file");
  if (m.source_classes <= 0) throw ConfigError("manifest missing source_classes");
  Dataset d;
  d.num_classes = m.source_classes;
  d.modalities.push_back(load_features(resolve(m.base_dir, m.source_file)));
  d.validate();
  return d;
}

namespace {

// Largest-remainder allocation of n into the three fractions.
std::array<std::size_t, 3> allocate(std::size_t n, const SplitFractions& f) {
  double fr[3] = {f.train, f.test, f.validation};
  std::array<std::size_t, 3> out{};
  double rem[3];
  std::size_t used = 0;
  for (int i = 0; i < 3; ++i) {
    double exact = fr[i] * static_cast<double>(n);
    out[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    rem[i] = exact - static_cast<double>(out[i]);
    used += out[i];
  }
  while (used < n) {
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (rem[i] > rem[best] + 1e-12) best = i;
    ++out[best];
    rem[best] -= 1.0;
    ++used;
  }
  return out;
}

}  // namespace

SplitResult split(const Dataset& d, SplitFractions f, std::uint64_t seed) {
  if (std::abs(f.train + f.test + f.validation - 1.0) > 1e-9)
    throw ConfigError("split fractions must sum to 1");
  d.validate();

  SplitResult out;
  for (Dataset* part : {&out.train, &out.test, &out.validation}) {
    part->num_classes = d.num_classes;
    for (const auto& m : d.modalities)
      part->modalities.push_back(ModalityData{m.modality, m.dim, {}});
  }

  auto check_nonempty = [&](std::size_t n, const std::string& what,
                            const std::array<std::size_t, 3>& alloc) {
    double fr[3] = {f.train, f.test, f.validation};
    for (int i = 0; i < 3; ++i)
      if (fr[i] > 0.0 && alloc[i] == 0)
        throw ConfigError(what + " has only " + std::to_string(n) +
                          " members; too few to appear in every split");
  };

  if (d.pair_table) {
    // Split whole aligned groups so co-members share a split.
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t g = 0; g < d.pair_table->size(); ++g) {
      long long image_id = (*d.pair_table)[g][0];
      const Instance* img = d.modalities[0].find(image_id);
      by_class[img->label].push_back(g);
    }
    for (Dataset* part : {&out.train, &out.test, &out.validation})
      part->pair_table = PairTable{};
    for (auto& [cls, groups] : by_class) {
      Rng rng(derive_seed(seed, "split_groups", static_cast<std::uint64_t>(cls)));
      rng.shuffle(groups);
      auto alloc = allocate(groups.size(), f);
      check_nonempty(groups.size(), "class " + std::to_string(cls), alloc);
      std::size_t pos = 0;
      Dataset* parts[3] = {&out.train, &out.test, &out.validation};
      for (int p = 0; p < 3; ++p) {
        for (std::size_t k = 0; k < alloc[static_cast<std::size_t>(p)]; ++k, ++pos) {
          const auto& group = (*d.pair_table)[groups[pos]];
          parts[p]->pair_table->push_back(group);
          for (std::size_t mi = 0; mi < d.modalities.size(); ++mi)
            parts[p]->modalities[mi].instances.push_back(
                *d.modalities[mi].find(group[mi]));
        }
      }
    }
  } else {
    for (std::size_t mi = 0; mi < d.modalities.size(); ++mi) {
      const ModalityData& m = d.modalities[mi];
      std::map<int, std::vector<std::size_t>> by_class;
      for (std::size_t i = 0; i < m.instances.size(); ++i)
        by_class[m.instances[i].label].push_back(i);
      for (auto& [cls, idxs] : by_class) {
        Rng rng(derive_seed(seed, "split_" + m.modality,
                            static_cast<std::uint64_t>(cls)));
        rng.shuffle(idxs);
        auto alloc = allocate(idxs.size(), f);
        check_nonempty(idxs.size(),
                       "class " + std::to_string(cls) + " in modality " + m.modality,
                       alloc);
        std::size_t pos = 0;
        Dataset* parts[3] = {&out.train, &out.test, &out.validation};
        for (int p = 0; p < 3; ++p)
          for (std::size_t k = 0; k < alloc[static_cast<std::size_t>(p)]; ++k, ++pos)
            parts[p]->modalities[mi].instances.push_back(m.instances[idxs[pos]]);
      }
    }
  }

  // Keep per-modality instance order deterministic and id-sorted.
  for (Dataset* part : {&out.train, &out.test, &out.validation})
    for (auto& m : part->modalities)
      std::sort(m.instances.begin(), m.instances.end(),
                [](const Instance& a, const Instance& b) { return a.id < b.id; });
  return out;
}

void SyntheticSpec::validate() const {
  if (num_classes < 1 || per_class < 1 || latent_dim < 1)
    throw ConfigError("synthetic spec counts must be >= 1");
  if (modality_dims.empty()) throw ConfigError("synthetic spec needs modalities");
  if (modality_dims.front().first != "image")
    throw ConfigError("synthetic spec must list image first");
  for (const auto& [tag, dim] : modality_dims)
    if (dim < latent_dim)
      throw ConfigError("modality " + tag + " dim must be >= latent_dim");
  if (noise < 0.0 || jitter < 0.0) throw ConfigError("noise and jitter must be >= 0");
  if (source_classes < 1 || source_per_class < 1)
    throw ConfigError("source domain counts must be >= 1");
}

namespace {

Matrix gaussian_matrix(int rows, int cols, Rng& rng) {
  Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = rng.gaussian();
  return m;
}

// dim x latent with orthonormal columns, so no modality view is degenerate.
Matrix orthonormal_distortion(int dim, int latent, Rng& rng) {
  Matrix g = gaussian_matrix(dim, latent, rng);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(dim, latent);
  return q;
}

}  // namespace

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  SyntheticData out;

  Rng proto_rng(derive_seed(spec.seed, "prototypes"));
  Matrix target_proto = gaussian_matrix(spec.num_classes, spec.latent_dim, proto_rng);
  Matrix source_proto = gaussian_matrix(spec.source_classes, spec.latent_dim, proto_rng);

  std::vector<Matrix> distortions;
  for (std::size_t mi = 0; mi < spec.modality_dims.size(); ++mi) {
    Rng rng(derive_seed(spec.seed, "distortion_" + spec.modality_dims[mi].first));
    distortions.push_back(
        orthonormal_distortion(spec.modality_dims[mi].second, spec.latent_dim, rng));
  }

  out.target.num_classes = spec.num_classes;
  for (std::size_t mi = 0; mi < spec.modality_dims.size(); ++mi) {
    const auto& [tag, dim] = spec.modality_dims[mi];
    ModalityData md{tag, dim, {}};
    Rng rng(derive_seed(spec.seed, "instances_" + tag));
    long long next_id = 0;
    for (int cls = 0; cls < spec.num_classes; ++cls) {
      for (int k = 0; k < spec.per_class; ++k) {
        Vector latent = target_proto.row(cls).transpose();
        for (int l = 0; l < spec.latent_dim; ++l)
          latent[l] += spec.jitter * rng.gaussian();
        Vector feat = distortions[mi] * latent;
        for (int l = 0; l < dim; ++l) feat[l] += spec.noise * rng.gaussian();
        md.instances.push_back(Instance{next_id++, cls, std::move(feat)});
      }
    }
    out.target.modalities.push_back(std::move(md));
  }

  out.source.num_classes = spec.source_classes;
  {
    const auto& [tag, dim] = spec.modality_dims.front();
    ModalityData md{tag, dim, {}};
    Rng rng(derive_seed(spec.seed, "source_instances"));
    long long next_id = 0;
    for (int cls = 0; cls < spec.source_classes; ++cls) {
      for (int k = 0; k < spec.source_per_class; ++k) {
        Vector latent = source_proto.row(cls).transpose();
        for (int l = 0; l < spec.latent_dim; ++l)
          latent[l] += spec.jitter * rng.gaussian();
        Vector feat = distortions[0] * latent;
        for (int l = 0; l < dim; ++l) feat[l] += spec.noise * rng.gaussian();
        md.instances.push_back(Instance{next_id++, cls, std::move(feat)});
      }
    }
    out.source.modalities.push_back(std::move(md));
  }
  return out;
}

}  // namespace mhtn
