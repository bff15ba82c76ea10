#pragma once

// Per-example fixed-pattern store. Binds a dataset index to a tensor that is
// generated lazily on first access and then never changes: the generator seed
// is derived from (store seed, index) alone, so lookups are pure regardless of
// access order, epoch, or what else has been cached.
//
// Sidecar format (little-endian):
//   magic "ATPS" | u32 version | u32 dtype bytes | u64 tag length | tag
//   u32 rank | i64 extents | u64 entry count
//   entry: i64 index | raw values
//
// The tag names what the patterns are (e.g. "noise" or "mask") so a sidecar
// cannot be silently loaded into a store of the other kind.

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "atlab/io.hpp"
#include "atlab/rng.hpp"
#include "atlab/tensor.hpp"

namespace atlab {

inline constexpr uint32_t kPatternStoreVersion = 1;

template <typename T>
class FixedPatternStore {
public:
  /// Generator fills one pattern from an rng already seeded for its index.
  using Generator = std::function<std::vector<T>(Rng&)>;

  FixedPatternStore() = default;
  FixedPatternStore(Shape shape, uint64_t seed, std::string tag, Generator gen)
      : shape_(std::move(shape)), seed_(seed), tag_(std::move(tag)), gen_(std::move(gen)) {}

  const Shape& shape() const { return shape_; }
  const std::string& tag() const { return tag_; }
  size_t cached() const { return cache_.size(); }

  const Tensor<T>& get(int64_t index) {
    auto it = cache_.find(index);
    if (it == cache_.end()) {
      Rng rng(derive_seed(seed_, {0x9e3779b9u, static_cast<uint64_t>(index)}));
      std::vector<T> v = gen_(rng);
      if (static_cast<int64_t>(v.size()) != numel(shape_))
        throw shape_error("pattern generator produced " + std::to_string(v.size()) +
                          " values for shape " + shape_str(shape_));
      it = cache_.emplace(index, Tensor<T>(shape_, std::move(v))).first;
    }
    return it->second;
  }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("cannot write pattern sidecar " + path);
    os.write("ATPS", 4);
    detail::put<uint32_t>(os, kPatternStoreVersion);
    detail::put<uint32_t>(os, static_cast<uint32_t>(sizeof(T)));
    detail::put<uint64_t>(os, tag_.size());
    os.write(tag_.data(), static_cast<std::streamsize>(tag_.size()));
    detail::put<uint32_t>(os, static_cast<uint32_t>(shape_.size()));
    for (int64_t d : shape_) detail::put<int64_t>(os, d);
    detail::put<uint64_t>(os, cache_.size());
    for (const auto& [index, t] : cache_) {
      detail::put<int64_t>(os, index);
      detail::put_values(os, t.raw());
    }
    if (!os) throw io_error("write failure on pattern sidecar " + path);
  }

  /// Replaces the cache with the sidecar contents. Tag, dtype width, and
  /// pattern shape must all match the store's own configuration.
  void load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot open pattern sidecar " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != "ATPS")
      throw io_error(path + " is not a pattern sidecar");
    const auto version = detail::get<uint32_t>(is, "version");
    if (version != kPatternStoreVersion)
      throw io_error("unsupported pattern sidecar version " + std::to_string(version));
    const auto width = detail::get<uint32_t>(is, "dtype width");
    if (width != sizeof(T))
      throw io_error("pattern sidecar holds " + std::to_string(width) +
                     "-byte values, store expects " + std::to_string(sizeof(T)));
    const auto tag_len = detail::get<uint64_t>(is, "tag length");
    std::string tag(tag_len, '\0');
    is.read(tag.data(), static_cast<std::streamsize>(tag_len));
    if (!is) throw io_error("truncated file reading tag");
    if (tag != tag_)
      throw io_error("pattern sidecar tagged '" + tag + "', store expects '" + tag_ + "'");
    const auto rank = detail::get<uint32_t>(is, "rank");
    Shape shape(rank);
    for (auto& d : shape) d = detail::get<int64_t>(is, "extent");
    if (shape != shape_)
      throw io_error("pattern sidecar shape " + shape_str(shape) + " does not match " +
                     shape_str(shape_));
    const auto count = detail::get<uint64_t>(is, "entry count");
    std::map<int64_t, Tensor<T>> cache;
    const auto n = static_cast<size_t>(numel(shape_));
    for (uint64_t i = 0; i < count; ++i) {
      const auto index = detail::get<int64_t>(is, "entry index");
      cache.emplace(index, Tensor<T>(shape_, detail::get_values<T>(is, n, "pattern values")));
    }
    cache_ = std::move(cache);
  }

private:
  Shape shape_;
  uint64_t seed_ = 0;
  std::string tag_;
  Generator gen_;
  std::map<int64_t, Tensor<T>> cache_;
};

}  // namespace atlab
