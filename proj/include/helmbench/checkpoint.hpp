#pragma once
#include <fstream>

#include "helmbench/adam.hpp"
#include "helmbench/field_io.hpp"
#include "helmbench/unet.hpp"

namespace helm {

// UNW1 checkpoint: magic, u32 version, digest string, then one record per
// parameter in registry order: u32 name_len + name + u8 dtype (0 = f32) +
// u8 rank + 4 u32 dims (LE) + raw f32 LE data. Batch-norm running stats
// ride along as ordinary non-trainable records; ADAM moments are appended
// as "adam." records when requested.
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace ckptdet {

inline void write_record(std::ostream& os, const std::string& name, const Tensor4& t) {
  detail::put_u32(os, std::uint32_t(name.size()));
  os.write(name.data(), std::streamsize(name.size()));
  os.put(char(0));  // dtype f32
  os.put(char(4));  // rank
  detail::put_u32(os, std::uint32_t(t.n));
  detail::put_u32(os, std::uint32_t(t.c));
  detail::put_u32(os, std::uint32_t(t.h));
  detail::put_u32(os, std::uint32_t(t.w));
  for (float x : t.v) detail::put_f32(os, x);
}

inline std::pair<std::string, Tensor4> read_record(std::istream& is) {
  const std::uint32_t name_len = detail::get_u32(is);
  if (name_len > 4096) throw std::runtime_error("checkpoint record name too long");
  std::string name(name_len, '\0');
  is.read(name.data(), name_len);
  const int dtype = is.get();
  const int rank = is.get();
  if (dtype != 0 || rank != 4) throw std::runtime_error("unsupported checkpoint record");
  const int n = int(detail::get_u32(is)), c = int(detail::get_u32(is));
  const int h = int(detail::get_u32(is)), w = int(detail::get_u32(is));
  if (n <= 0 || c <= 0 || h <= 0 || w <= 0 || std::size_t(n) * c * h * w > (1u << 28))
    throw std::runtime_error("bad checkpoint record dims");
  Tensor4 t(n, c, h, w);
  for (auto& x : t.v) x = detail::get_f32(is);
  if (!is) throw std::runtime_error("truncated checkpoint");
  return {std::move(name), std::move(t)};
}

}  // namespace ckptdet

inline void save_checkpoint(const NetworkWeights& w, const std::string& path,
                            const std::string& config_digest, const AdamState* adam = nullptr,
                            const std::vector<Param*>* adam_params = nullptr) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint: " + path);
  os.write("UNW1", 4);
  detail::put_u32(os, kCheckpointVersion);
  detail::put_u32(os, std::uint32_t(config_digest.size()));
  os.write(config_digest.data(), std::streamsize(config_digest.size()));
  std::uint32_t count = std::uint32_t(w.size());
  if (adam && adam_params) count += std::uint32_t(2 * adam_params->size()) + 1;
  detail::put_u32(os, count);
  for (std::size_t i = 0; i < w.size(); ++i)
    ckptdet::write_record(os, w.at(i).name, w.at(i).value);
  if (adam && adam_params) {
    Tensor4 step(1, 1, 1, 1, float(adam->step));
    ckptdet::write_record(os, "adam.step", step);
    for (std::size_t i = 0; i < adam_params->size(); ++i) {
      ckptdet::write_record(os, "adam." + (*adam_params)[i]->name + ".m", adam->slots[i].m);
      ckptdet::write_record(os, "adam." + (*adam_params)[i]->name + ".v", adam->slots[i].v);
    }
  }
  if (!os) throw std::runtime_error("checkpoint write failed: " + path);
}

// Loads records into the registry in file order (creating or validating
// parameters), so save -> load -> save is byte-identical. Returns the
// stored config digest.
inline std::string load_checkpoint(const std::string& path, NetworkWeights& w) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "UNW1", 4) != 0)
    throw std::runtime_error("bad checkpoint magic: " + path);
  const std::uint32_t version = detail::get_u32(is);
  if (version != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t digest_len = detail::get_u32(is);
  if (digest_len > 4096) throw std::runtime_error("bad checkpoint digest");
  std::string digest(digest_len, '\0');
  is.read(digest.data(), digest_len);
  const std::uint32_t count = detail::get_u32(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    auto [name, tensor] = ckptdet::read_record(is);
    if (name.rfind("adam.", 0) == 0) continue;  // optimizer state: ignored on load
    const bool buffer = name.find(".rmean") != std::string::npos ||
                        name.find(".rvar") != std::string::npos ||
                        name.find(".count") != std::string::npos;
    Param& p = w.ensure(name, tensor, !buffer);
    p.value = std::move(tensor);
  }
  return digest;
}

}  // namespace helm
