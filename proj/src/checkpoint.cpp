#include "o2rnet/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "o2rnet/model.hpp"

namespace o2r {

namespace {

constexpr char kMagic[8] = {'O', '2', 'R', 'C', 'K', 'P', 'T', '\0'};

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

void put_string(std::ostream& os, const std::string& s) {
  put<std::uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is) {
  const auto n = get<std::uint64_t>(is);
  if (n > (1ULL << 32)) throw std::runtime_error("checkpoint: corrupt string length");
  std::string s(n, '\0');
  if (!is.read(s.data(), static_cast<std::streamsize>(n))) throw std::runtime_error("checkpoint: truncated file");
  return s;
}

void put_matrix(std::ostream& os, const Matrix& m) {
  put<std::uint64_t>(os, static_cast<std::uint64_t>(m.rows()));
  put<std::uint64_t>(os, static_cast<std::uint64_t>(m.cols()));
  os.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
}

Matrix get_matrix(std::istream& is) {
  const auto r = get<std::uint64_t>(is);
  const auto c = get<std::uint64_t>(is);
  if (r * c > (1ULL << 34)) throw std::runtime_error("checkpoint: corrupt tensor size");
  Matrix m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  if (!is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double))))
    throw std::runtime_error("checkpoint: truncated file");
  return m;
}

}  // namespace

Checkpoint checkpoint_from_model(const O2RNet& model) {
  Checkpoint c;
  for (const Param* p : model.parameters()) c.params[p->name] = {p->shape, p->value};
  return c;
}

void restore_model(const Checkpoint& checkpoint, O2RNet& model) {
  auto params = model.parameters();
  for (Param* p : params) {
    auto it = checkpoint.params.find(p->name);
    if (it == checkpoint.params.end()) throw std::invalid_argument("checkpoint: missing parameter " + p->name);
    if (it->second.value.rows() != p->value.rows() || it->second.value.cols() != p->value.cols())
      throw std::invalid_argument("checkpoint: shape mismatch for parameter " + p->name);
  }
  if (checkpoint.params.size() != params.size()) {
    for (const auto& [name, t] : checkpoint.params)
      if (!model.find_parameter(name)) throw std::invalid_argument("checkpoint: unexpected parameter " + name);
  }
  for (Param* p : params) p->value = checkpoint.params.at(p->name).value;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("checkpoint: cannot write " + path.string());
    os.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(c.version));
    nlohmann::json header = {{"metadata", c.metadata}, {"iteration", c.iteration}};
    put_string(os, header.dump());
    put<std::uint64_t>(os, c.params.size());
    for (const auto& [name, t] : c.params) {
      put_string(os, name);
      put<std::uint32_t>(os, static_cast<std::uint32_t>(t.shape.size()));
      for (int d : t.shape) put<std::int32_t>(os, d);
      put_matrix(os, t.value);
    }
    put<std::uint64_t>(os, c.velocity.size());
    for (const auto& [name, v] : c.velocity) {
      put_string(os, name);
      put_matrix(os, v);
    }
    if (!os) throw std::runtime_error("checkpoint: write failed for " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path.string());
  char magic[sizeof(kMagic)];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path.string());
  Checkpoint c;
  c.version = static_cast<int>(get<std::uint32_t>(is));
  if (c.version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported format version " + std::to_string(c.version));
  const auto header = nlohmann::json::parse(get_string(is));
  c.metadata = header.value("metadata", nlohmann::json::object());
  c.iteration = header.value("iteration", 0);
  const auto n = get<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < n; ++i) {
    std::string name = get_string(is);
    NamedTensor t;
    const auto nd = get<std::uint32_t>(is);
    if (nd > 8) throw std::runtime_error("checkpoint: corrupt shape for " + name);
    for (std::uint32_t d = 0; d < nd; ++d) t.shape.push_back(get<std::int32_t>(is));
    t.value = get_matrix(is);
    c.params.emplace(std::move(name), std::move(t));
  }
  const auto nv = get<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < nv; ++i) {
    std::string name = get_string(is);
    c.velocity.emplace(std::move(name), get_matrix(is));
  }
  return c;
}

}  // namespace o2r
