#pragma once

// Model checkpoint container: versioned binary, little-endian on disk,
// self-describing (names, shapes, dtype width, embedded model config).
//
//   magic "ATCK" | u32 version | u32 dtype bytes
//   u64 config length | config JSON
//   u64 entry count
//   entry: u64 name length | name | u8 kind (0 param, 1 frozen param,
//          2 buffer) | u32 rank | i64 extents | raw values
//
// Round-trips are bit-exact: values are written as their in-memory IEEE bits.

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "atlab/config.hpp"
#include "atlab/io.hpp"
#include "atlab/nn.hpp"

namespace atlab {

inline constexpr uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
void put_tensor_entry(std::ostream& os, const std::string& name, uint8_t kind,
                      const Tensor<T>& t) {
  put<uint64_t>(os, name.size());
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  put<uint8_t>(os, kind);
  put<uint32_t>(os, static_cast<uint32_t>(t.ndim()));
  for (int64_t d : t.shape()) put<int64_t>(os, d);
  put_values(os, t.raw());
}

}  // namespace detail

template <typename T>
void save_checkpoint(const Model<T>& m, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw io_error("cannot open " + path + " for writing");
  os.write("ATCK", 4);
  detail::put<uint32_t>(os, kCheckpointVersion);
  detail::put<uint32_t>(os, sizeof(T));
  const std::string cfg = to_json(m.config());
  detail::put<uint64_t>(os, cfg.size());
  os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  detail::put<uint64_t>(os, m.params().size() + m.buffers().size());
  for (const Parameter<T>& p : m.params())
    detail::put_tensor_entry(os, p.name, p.trainable ? 0 : 1, p.value);
  for (const Buffer<T>& b : m.buffers()) detail::put_tensor_entry(os, b.name, 2, b.value);
  if (!os) throw io_error("write failure on " + path);
}

template <typename T>
Model<T> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "ATCK", 4) != 0)
    throw io_error(path + " is not a checkpoint file");
  const uint32_t version = detail::get<uint32_t>(is, "version");
  if (version != kCheckpointVersion)
    throw io_error("unsupported checkpoint version " + std::to_string(version));
  const uint32_t width = detail::get<uint32_t>(is, "dtype width");
  if (width != sizeof(T))
    throw io_error("checkpoint holds " + std::to_string(width * 8) +
                   "-bit values, expected " + std::to_string(sizeof(T) * 8) + "-bit");
  const uint64_t cfg_len = detail::get<uint64_t>(is, "config length");
  std::string cfg_text(cfg_len, '\0');
  is.read(cfg_text.data(), static_cast<std::streamsize>(cfg_len));
  if (!is) throw io_error("checkpoint truncated reading config");
  Model<T> m = Model<T>::build(model_config_from_json(cfg_text), 0);

  const uint64_t count = detail::get<uint64_t>(is, "entry count");
  if (count != m.params().size() + m.buffers().size())
    throw io_error("checkpoint entry count does not match the architecture");
  for (uint64_t i = 0; i < count; ++i) {
    const uint64_t name_len = detail::get<uint64_t>(is, "name length");
    std::string name(name_len, '\0');
    is.read(name.data(), static_cast<std::streamsize>(name_len));
    if (!is) throw io_error("checkpoint truncated reading name");
    const uint8_t kind = detail::get<uint8_t>(is, "entry kind");
    const uint32_t rank = detail::get<uint32_t>(is, "rank");
    Shape shape(rank);
    for (uint32_t d = 0; d < rank; ++d) shape[d] = detail::get<int64_t>(is, "extent");
    std::vector<T> values =
        detail::get_values<T>(is, static_cast<size_t>(numel(shape)), "tensor values");
    Tensor<T> t(std::move(shape), std::move(values));

    bool placed = false;
    if (kind == 2) {
      for (Buffer<T>& b : m.buffers())
        if (b.name == name) {
          if (b.value.shape() != t.shape())
            throw io_error("checkpoint shape mismatch for " + name);
          b.value = std::move(t);
          placed = true;
          break;
        }
    } else {
      for (Parameter<T>& p : m.params())
        if (p.name == name) {
          if (p.value.shape() != t.shape())
            throw io_error("checkpoint shape mismatch for " + name);
          t.set_requires_grad();
          p.value = std::move(t);
          p.trainable = kind == 0;
          placed = true;
          break;
        }
    }
    if (!placed) throw io_error("checkpoint entry " + name + " not present in the architecture");
  }
  return m;
}

}  // namespace atlab
