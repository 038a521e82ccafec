#pragma once

#include <fstream>
#include <map>
#include <string>

#include <json.hpp>

#include "cdrest/core/autograd.hpp"
#include "cdrest/core/hash.hpp"

namespace cdrest {

// Checkpoint container: a JSON metadata blob plus named float32 tensors.
// Layout: magic(8) | u64 meta_len | meta json | u64 ntensors |
//         per tensor: u32 name_len, name, u32 ndim, i64 dims[], f32 data[]
inline constexpr char kCkptMagic[9] = "CDRCKPT1";

template <typename T>
void save_checkpoint(const std::string& path, const nlohmann::json& meta,
                     const Params<T>& params) {
  std::ofstream f(path, std::ios::binary);
  CR_CHECK(f.good(), "cannot write checkpoint: ", path);
  f.write(kCkptMagic, 8);
  const std::string ms = meta.dump();
  const std::uint64_t mlen = ms.size();
  f.write(reinterpret_cast<const char*>(&mlen), 8);
  f.write(ms.data(), std::streamsize(ms.size()));
  const std::uint64_t nt = params.size();
  f.write(reinterpret_cast<const char*>(&nt), 8);
  for (const auto& [name, var] : params) {
    const std::uint32_t nl = std::uint32_t(name.size());
    f.write(reinterpret_cast<const char*>(&nl), 4);
    f.write(name.data(), nl);
    const auto& t = var.val();
    const std::uint32_t nd = std::uint32_t(t.ndim());
    f.write(reinterpret_cast<const char*>(&nd), 4);
    for (int d = 0; d < t.ndim(); ++d) {
      const idx dim = t.dim(d);
      f.write(reinterpret_cast<const char*>(&dim), 8);
    }
    for (idx i = 0; i < t.numel(); ++i) {
      const float v = float(t[i]);
      f.write(reinterpret_cast<const char*>(&v), 4);
    }
  }
  CR_CHECK(f.good(), "checkpoint write failed: ", path);
}

// Loads tensors by name into an already-constructed parameter set.
template <typename T>
nlohmann::json load_checkpoint(const std::string& path, Params<T>& params) {
  std::ifstream f(path, std::ios::binary);
  CR_CHECK(f.good(), "cannot open checkpoint: ", path);
  char magic[8];
  f.read(magic, 8);
  CR_CHECK(std::string(magic, 8) == std::string(kCkptMagic, 8), "bad checkpoint magic: ", path);
  std::uint64_t mlen = 0;
  f.read(reinterpret_cast<char*>(&mlen), 8);
  std::string ms(mlen, '\0');
  f.read(ms.data(), std::streamsize(mlen));
  nlohmann::json meta = nlohmann::json::parse(ms);
  std::uint64_t nt = 0;
  f.read(reinterpret_cast<char*>(&nt), 8);

  std::map<std::string, Var<T>*> by_name;
  for (auto& [name, var] : params) by_name[name] = &var;
  std::size_t loaded = 0;
  for (std::uint64_t k = 0; k < nt; ++k) {
    std::uint32_t nl = 0;
    f.read(reinterpret_cast<char*>(&nl), 4);
    std::string name(nl, '\0');
    f.read(name.data(), nl);
    std::uint32_t nd = 0;
    f.read(reinterpret_cast<char*>(&nd), 4);
    std::vector<idx> dims(nd);
    for (auto& d : dims) f.read(reinterpret_cast<char*>(&d), 8);
    const idx numel = numel_of(dims);
    std::vector<float> data(static_cast<std::size_t>(numel));
    f.read(reinterpret_cast<char*>(data.data()), std::streamsize(numel * 4));
    auto it = by_name.find(name);
    CR_CHECK(it != by_name.end(), "checkpoint tensor not in model: ", name);
    Tensor<T>& dst = it->second->val_mut();
    CR_CHECK(dst.shape() == dims, "checkpoint shape mismatch for ", name, ": ",
             shape_str(dims), " vs ", shape_str(dst.shape()));
    for (idx i = 0; i < numel; ++i) dst[i] = T(data[std::size_t(i)]);
    ++loaded;
  }
  CR_CHECK(loaded == params.size(), "checkpoint is missing tensors: has ", loaded, ", model needs ",
           params.size());
  CR_CHECK(f.good(), "truncated checkpoint: ", path);
  return meta;
}

inline nlohmann::json peek_checkpoint_meta(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  CR_CHECK(f.good(), "cannot open checkpoint: ", path);
  char magic[8];
  f.read(magic, 8);
  CR_CHECK(std::string(magic, 8) == std::string(kCkptMagic, 8), "bad checkpoint magic: ", path);
  std::uint64_t mlen = 0;
  f.read(reinterpret_cast<char*>(&mlen), 8);
  std::string ms(mlen, '\0');
  f.read(ms.data(), std::streamsize(mlen));
  return nlohmann::json::parse(ms);
}

// Order-stable fingerprint of parameter values (frozen-weights checks).
template <typename T>
std::string params_digest(const Params<T>& params) {
  Sha256 h;
  for (const auto& [name, var] : params) {
    h.update(name.data(), name.size());
    const auto& t = var.val();
    for (idx i = 0; i < t.numel(); ++i) {
      const float v = float(t[i]);
      h.update(&v, 4);
    }
  }
  return h.hex_digest();
}

}  // namespace cdrest
