#include "tdv3/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace tdv3 {

namespace {

constexpr char kMagic[4] = {'T', 'D', 'V', '3'};

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_f32(std::ostream& out, float f) {
  std::uint32_t v;
  std::memcpy(&v, &f, 4);
  put_u32(out, v);
}

std::uint32_t get_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw std::runtime_error("checkpoint: truncated file '" + path + "'");
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

float get_f32(std::istream& in, const std::string& path) {
  const std::uint32_t v = get_u32(in, path);
  float f;
  std::memcpy(&f, &v, 4);
  return f;
}

}  // namespace

void checkpoint_save(const ParameterStore& store, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot write '" + path + "'");
  out.write(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(store.entries().size()));
  for (const auto& [name, t] : store.entries()) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : t.data) put_f32(out, static_cast<float>(v));
  }
  if (!out) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

std::map<std::string, Tensor> checkpoint_read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("checkpoint: bad magic in '" + path + "'");
  }
  const std::uint32_t version = get_u32(in, path);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version) + " in '" +
                             path + "'");
  }
  const std::uint32_t count = get_u32(in, path);
  std::map<std::string, Tensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = get_u32(in, path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw std::runtime_error("checkpoint: truncated file '" + path + "'");
    const std::uint32_t ndim = get_u32(in, path);
    Shape shape(ndim);
    for (auto& d : shape) d = static_cast<int>(get_u32(in, path));
    Tensor t(shape);
    for (double& v : t.data) v = static_cast<double>(get_f32(in, path));
    if (!out.emplace(std::move(name), std::move(t)).second) {
      throw std::runtime_error("checkpoint: duplicate record in '" + path + "'");
    }
  }
  return out;
}

void checkpoint_restore(ParameterStore& store, const std::map<std::string, Tensor>& loaded) {
  auto it_s = store.entries().begin();
  auto it_l = loaded.begin();
  while (it_s != store.entries().end() || it_l != loaded.end()) {
    if (it_l == loaded.end() || (it_s != store.entries().end() && it_s->first < it_l->first)) {
      throw std::invalid_argument("checkpoint: missing tensor '" + it_s->first + "'");
    }
    if (it_s == store.entries().end() || it_l->first < it_s->first) {
      throw std::invalid_argument("checkpoint: unexpected tensor '" + it_l->first + "'");
    }
    if (!it_s->second.same_shape(it_l->second)) {
      throw std::invalid_argument("checkpoint: shape mismatch for tensor '" + it_s->first + "': " +
                                  shape_str(it_s->second.shape) + " vs " + shape_str(it_l->second.shape));
    }
    ++it_s;
    ++it_l;
  }
  for (const auto& [name, t] : loaded) store.at(name) = t;
}

}  // namespace tdv3
