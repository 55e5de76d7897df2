#include "dsf/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace dsf {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'D', 'S', 'F', 'C', 'K', 'P', 'T', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in, const fs::path& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error(path.string() + ": truncated checkpoint");
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

std::string read_string(std::istream& in, const fs::path& path, std::uint32_t limit) {
  const auto n = get_u32(in, path);
  if (n > limit) throw std::runtime_error(path.string() + ": corrupt checkpoint (string length " + std::to_string(n) + ")");
  std::string s(n, '\0');
  if (!in.read(s.data(), n)) throw std::runtime_error(path.string() + ": truncated checkpoint");
  return s;
}

void open_and_check(std::ifstream& in, const fs::path& path) {
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
    throw std::runtime_error(path.string() + " is not a checkpoint file");
  }
}

std::string shape_of(const nn::Tensor& t) { return t.shape_string(); }

}  // namespace

fs::path manifest_path(const fs::path& checkpoint) { return fs::path(checkpoint.string() + ".manifest"); }

Checkpoint Checkpoint::capture(const nn::ParameterRegistry& registry, nlohmann::json meta) {
  Checkpoint c;
  c.meta = std::move(meta);
  for (const auto& e : registry.entries()) c.tensors.push_back({e.name, nn::Var(e.var.value())});
  return c;
}

void Checkpoint::save(const fs::path& path) const {
  static_assert(sizeof(float) == 4);
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    out.write(kMagic, 8);
    const std::string m = meta.dump();
    put_u32(out, static_cast<std::uint32_t>(m.size()));
    out.write(m.data(), static_cast<std::streamsize>(m.size()));
    put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& e : tensors) {
      const auto& t = e.var.value();
      put_u32(out, static_cast<std::uint32_t>(e.name.size()));
      out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
      put_u32(out, static_cast<std::uint32_t>(t.channels));
      put_u32(out, static_cast<std::uint32_t>(t.height));
      put_u32(out, static_cast<std::uint32_t>(t.width));
      for (Eigen::Index i = 0; i < t.data.size(); ++i) {
        std::uint32_t bits;
        std::memcpy(&bits, t.data.data() + i, 4);
        put_u32(out, bits);
      }
    }
    if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
  }
  std::ofstream manifest(manifest_path(path));
  for (const auto& e : tensors) manifest << e.name << ' ' << shape_of(e.var.value()) << '\n';
}

Checkpoint Checkpoint::load(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  open_and_check(in, path);
  Checkpoint c;
  c.meta = nlohmann::json::parse(read_string(in, path, 1U << 24));
  const auto count = get_u32(in, path);
  for (std::uint32_t k = 0; k < count; ++k) {
    std::string name = read_string(in, path, 4096);
    const auto ch = get_u32(in, path);
    const auto h = get_u32(in, path);
    const auto w = get_u32(in, path);
    if (static_cast<std::uint64_t>(ch) * h * w > (1ULL << 30)) {
      throw std::runtime_error(path.string() + ": corrupt tensor header for " + name);
    }
    nn::Tensor t(static_cast<int>(ch), static_cast<int>(h), static_cast<int>(w));
    for (Eigen::Index i = 0; i < t.data.size(); ++i) {
      const std::uint32_t bits = get_u32(in, path);
      std::memcpy(t.data.data() + i, &bits, 4);
    }
    c.tensors.push_back({std::move(name), nn::Var(std::move(t))});
  }
  return c;
}

nlohmann::json Checkpoint::read_meta(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  open_and_check(in, path);
  return nlohmann::json::parse(read_string(in, path, 1U << 24));
}

std::string manifest_diff(const nn::ParameterRegistry& registry, const Checkpoint& checkpoint, bool allow_missing) {
  std::map<std::string, std::string> have;
  for (const auto& e : checkpoint.tensors) have[e.name] = shape_of(e.var.value());
  std::ostringstream diff;
  for (const auto& e : registry.entries()) {
    auto it = have.find(e.name);
    if (it == have.end()) {
      if (!allow_missing) diff << "- " << e.name << ' ' << shape_of(e.var.value()) << '\n';
      continue;
    }
    if (it->second != shape_of(e.var.value())) {
      diff << "~ " << e.name << " expected " << shape_of(e.var.value()) << " found " << it->second << '\n';
    }
    have.erase(it);
  }
  for (const auto& [name, shape] : have) diff << "+ " << name << ' ' << shape << '\n';
  return diff.str();
}

void restore(nn::ParameterRegistry& registry, const Checkpoint& checkpoint, bool allow_missing) {
  const std::string diff = manifest_diff(registry, checkpoint, allow_missing);
  if (!diff.empty()) throw std::runtime_error("checkpoint does not match model:\n" + diff);
  std::map<std::string, const nn::Var*> by_name;
  for (const auto& e : checkpoint.tensors) by_name[e.name] = &e.var;
  for (auto& e : registry.entries()) {
    if (auto it = by_name.find(e.name); it != by_name.end()) e.var.mutable_value() = it->second->value();
  }
}

}  // namespace dsf
