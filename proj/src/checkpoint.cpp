#include "mhtn/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "mhtn/errors.hpp"
#include "mhtn/rng.hpp"

namespace mhtn {

namespace {

constexpr char kMagic[4] = {'M', 'H', 'T', 'N'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, sizeof(bits));
  put_u64(out, bits);
}

struct Reader {
  const std::string& bytes;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > bytes.size()) throw ConfigError("checkpoint file truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos++])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos++])) << (8 * i);
    return v;
  }
  double f64() {
    std::uint64_t bits = u64();
    double d;
    std::memcpy(&d, &bits, sizeof(d));
    return d;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes.substr(pos, n);
    pos += n;
    return s;
  }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

void atomic_write(const std::string& path, const std::string& bytes) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ConfigError("short write to " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw ConfigError("cannot rename " + tmp + " to " + path);
}

void save_checkpoint(const std::string& path, const StarNetwork& net,
                     std::uint64_t config_digest, std::uint64_t seed) {
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  put_u64(out, config_digest);
  put_u64(out, seed);
  put_u32(out, static_cast<std::uint32_t>(net.groups.size()));
  for (const ParamGroup& g : net.groups) {
    put_u32(out, static_cast<std::uint32_t>(g.name.size()));
    out += g.name;
    put_u32(out, static_cast<std::uint32_t>(g.mats.size()));
    for (const Matrix& m : g.mats) {
      put_u32(out, static_cast<std::uint32_t>(m.rows()));
      put_u32(out, static_cast<std::uint32_t>(m.cols()));
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) put_f64(out, m(r, c));
    }
  }
  atomic_write(path, out);
}

CheckpointInfo read_checkpoint_info(const std::string& path) {
  std::string bytes = slurp(path);
  Reader r{bytes};
  if (r.str(4) != std::string(kMagic, 4))
    throw ConfigError(path + " is not a checkpoint (bad magic)");
  CheckpointInfo info;
  info.version = r.u32();
  if (info.version != kVersion)
    throw ConfigError("unsupported checkpoint version " + std::to_string(info.version));
  info.config_digest = r.u64();
  info.seed = r.u64();
  return info;
}

CheckpointInfo load_checkpoint(const std::string& path, StarNetwork& net,
                               std::uint64_t expected_digest) {
  std::string bytes = slurp(path);
  Reader r{bytes};
  if (r.str(4) != std::string(kMagic, 4))
    throw ConfigError(path + " is not a checkpoint (bad magic)");
  CheckpointInfo info;
  info.version = r.u32();
  if (info.version != kVersion)
    throw ConfigError("unsupported checkpoint version " + std::to_string(info.version));
  info.config_digest = r.u64();
  info.seed = r.u64();
  if (info.config_digest != expected_digest)
    throw ConfigError("checkpoint config digest mismatch: file has " +
                      std::to_string(info.config_digest) + ", active config is " +
                      std::to_string(expected_digest));
  std::uint32_t ngroups = r.u32();
  if (ngroups != net.groups.size())
    throw ConfigError("checkpoint has " + std::to_string(ngroups) +
                      " parameter groups, network expects " +
                      std::to_string(net.groups.size()));
  for (ParamGroup& g : net.groups) {
    std::string name = r.str(r.u32());
    if (name != g.name)
      throw ConfigError("checkpoint group '" + name + "' does not match '" + g.name + "'");
    std::uint32_t nmats = r.u32();
    if (nmats != g.mats.size())
      throw ConfigError("group " + name + " matrix count mismatch");
    for (Matrix& m : g.mats) {
      std::uint32_t rows = r.u32(), cols = r.u32();
      if (static_cast<Eigen::Index>(rows) != m.rows() ||
          static_cast<Eigen::Index>(cols) != m.cols())
        throw ConfigError("group " + name + " matrix shape mismatch");
      for (std::uint32_t i = 0; i < rows; ++i)
        for (std::uint32_t j = 0; j < cols; ++j) m(i, j) = r.f64();
      require_finite(m, "checkpoint group " + name);
    }
  }
  return info;
}

std::uint64_t file_digest(const std::string& path) {
  std::string bytes = slurp(path);
  return fnv1a64(bytes.data(), bytes.size());
}

}  // namespace mhtn
