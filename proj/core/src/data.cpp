#include "atlab/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace atlab {

namespace {

constexpr int64_t kCifarSide = 32;
constexpr int64_t kCifarChannels = 3;
constexpr int64_t kCifarPixels = kCifarChannels * kCifarSide * kCifarSide;

int64_t record_bytes(CifarKind kind) {
  return (kind == CifarKind::cifar10 ? 1 : 2) + kCifarPixels;
}

int64_t class_count(CifarKind kind) { return kind == CifarKind::cifar10 ? 10 : 100; }

std::vector<int64_t> iota_map(int64_t n) {
  std::vector<int64_t> map(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) map[static_cast<size_t>(i)] = i;
  return map;
}

DataSplit make_split(std::vector<float> pixels, std::vector<uint8_t> labels, int64_t channels,
                     int64_t side, int64_t classes) {
  const int64_t n = static_cast<int64_t>(labels.size());
  return DataSplit(std::make_shared<const std::vector<float>>(std::move(pixels)),
                   std::make_shared<const std::vector<uint8_t>>(std::move(labels)), channels, side,
                   side, classes, iota_map(n));
}

}  // namespace

DataSplit DataSplit::stratified_n(int64_t n) const {
  if (n < 0 || n > size())
    throw config_error("subset of " + std::to_string(n) + " from split of " +
                       std::to_string(size()));
  std::vector<std::vector<int64_t>> by_class(static_cast<size_t>(classes_));
  for (int64_t pos = 0; pos < size(); ++pos)
    by_class[static_cast<size_t>(label_at(pos))].push_back(index_map_[static_cast<size_t>(pos)]);
  std::vector<int64_t> map;
  map.reserve(static_cast<size_t>(n));
  // round-robin over classes so any prefix is as balanced as the data allows
  for (size_t depth = 0; static_cast<int64_t>(map.size()) < n; ++depth) {
    bool any = false;
    for (const auto& cls : by_class) {
      if (depth < cls.size()) {
        any = true;
        map.push_back(cls[depth]);
        if (static_cast<int64_t>(map.size()) == n) break;
      }
    }
    if (!any) break;
  }
  return DataSplit(pixels_, labels_, c_, h_, w_, classes_, std::move(map));
}

void parse_cifar_records(const std::string& path, CifarKind kind, std::vector<float>& pixels,
                         std::vector<uint8_t>& labels) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot open " + path);
  is.seekg(0, std::ios::end);
  const int64_t bytes = static_cast<int64_t>(is.tellg());
  is.seekg(0, std::ios::beg);
  const int64_t rec = record_bytes(kind);
  if (bytes <= 0 || bytes % rec != 0)
    throw io_error(path + ": size " + std::to_string(bytes) + " is not a multiple of the " +
                   std::to_string(rec) + " byte record");
  const int64_t count = bytes / rec;
  std::vector<unsigned char> buf(static_cast<size_t>(rec));
  pixels.reserve(pixels.size() + static_cast<size_t>(count * kCifarPixels));
  labels.reserve(labels.size() + static_cast<size_t>(count));
  for (int64_t r = 0; r < count; ++r) {
    if (!is.read(reinterpret_cast<char*>(buf.data()), rec))
      throw io_error(path + ": truncated record " + std::to_string(r));
    // cifar100 records lead with a coarse label byte; the fine label follows
    const unsigned char label = kind == CifarKind::cifar10 ? buf[0] : buf[1];
    if (label >= class_count(kind))
      throw io_error(path + ": label " + std::to_string(int(label)) + " out of range in record " +
                     std::to_string(r));
    labels.push_back(label);
    const unsigned char* px = buf.data() + (kind == CifarKind::cifar10 ? 1 : 2);
    for (int64_t i = 0; i < kCifarPixels; ++i)
      pixels.push_back(static_cast<float>(px[i]) / 255.0f);
  }
}

DatasetHandle load_cifar_binary(const std::string& dir, CifarKind kind) {
  std::vector<std::string> train_files, test_files;
  if (kind == CifarKind::cifar10) {
    for (int i = 1; i <= 5; ++i) train_files.push_back(dir + "/data_batch_" + std::to_string(i) + ".bin");
    test_files.push_back(dir + "/test_batch.bin");
  } else {
    train_files.push_back(dir + "/train.bin");
    test_files.push_back(dir + "/test.bin");
  }
  DatasetHandle handle;
  handle.name = kind == CifarKind::cifar10 ? "cifar10" : "cifar100";
  for (int split = 0; split < 2; ++split) {
    std::vector<float> pixels;
    std::vector<uint8_t> labels;
    for (const auto& f : (split == 0 ? train_files : test_files))
      parse_cifar_records(f, kind, pixels, labels);
    (split == 0 ? handle.train : handle.test) =
        make_split(std::move(pixels), std::move(labels), kCifarChannels, kCifarSide,
                   class_count(kind));
  }
  return handle;
}

namespace {

// Smooth per-class template: a class-specific low-frequency wave in the
// configured band. Classes are linearly separable because templates differ
// by much more than the noise floor across many pixels.
void fill_template(int64_t cls, int64_t classes, int64_t c, int64_t side, double lo, double hi,
                   std::vector<float>& out) {
  const double span = hi - lo;
  const double phase = 2.0 * 3.14159265358979323846 * static_cast<double>(cls) /
                       static_cast<double>(classes);
  out.resize(static_cast<size_t>(c * side * side));
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t y = 0; y < side; ++y)
      for (int64_t x = 0; x < side; ++x) {
        const double u = static_cast<double>(x + y + ch * 3) / static_cast<double>(side);
        const double wave = 0.5 + 0.5 * std::sin(phase + u * (2.0 + static_cast<double>(cls % 3)));
        out[static_cast<size_t>((ch * side + y) * side + x)] =
            static_cast<float>(lo + span * wave);
      }
}

float clamp01(double v) { return static_cast<float>(std::min(1.0, std::max(0.0, v))); }

}  // namespace

DatasetHandle synth_dataset(int64_t n, int64_t classes, int64_t image_size, uint64_t seed,
                            const SynthSpec& spec) {
  if (n < 1 || classes < 2 || image_size < 2)
    throw config_error("synth_dataset needs n >= 1, classes >= 2, image_size >= 2");
  if (classes > n) throw config_error("synth_dataset: more classes than examples");
  const int64_t c = 3;
  const int64_t per_image = c * image_size * image_size;

  std::vector<std::vector<float>> templates(static_cast<size_t>(classes));
  for (int64_t k = 0; k < classes; ++k)
    fill_template(k, classes, c, image_size, spec.template_lo, spec.template_hi,
                  templates[static_cast<size_t>(k)]);

  // Per-class shortcut pixel sites, disjoint across classes: a sparse cue of
  // amplitude shortcut_delta at class-owned positions. One deterministic
  // layout per dataset so train and test share it.
  Rng layout_rng(derive_seed(seed, {0x51u}));
  std::vector<std::vector<int64_t>> sites(static_cast<size_t>(classes));
  if (spec.shortcut_pixels > 0) {
    std::vector<int64_t> all(static_cast<size_t>(per_image));
    for (int64_t i = 0; i < per_image; ++i) all[static_cast<size_t>(i)] = i;
    for (int64_t i = per_image - 1; i > 0; --i)
      std::swap(all[static_cast<size_t>(i)], all[static_cast<size_t>(layout_rng.range(i + 1))]);
    const int64_t want = std::min(spec.shortcut_pixels, per_image / classes);
    for (int64_t k = 0; k < classes; ++k)
      sites[static_cast<size_t>(k)].assign(all.begin() + k * want, all.begin() + (k + 1) * want);
  }

  auto build = [&](int64_t count, uint64_t split_tag) {
    std::vector<float> pixels(static_cast<size_t>(count * per_image));
    std::vector<uint8_t> labels(static_cast<size_t>(count));
    // balanced labels: count/classes each, remainder to the first classes
    for (int64_t i = 0; i < count; ++i)
      labels[static_cast<size_t>(i)] = static_cast<uint8_t>(i % classes);
    for (int64_t i = 0; i < count; ++i) {
      Rng rng(derive_seed(seed, {split_tag, static_cast<uint64_t>(i)}));
      const int64_t cls = labels[static_cast<size_t>(i)];
      const auto& tmpl = templates[static_cast<size_t>(cls)];
      float* dst = pixels.data() + i * per_image;
      for (int64_t p = 0; p < per_image; ++p)
        dst[p] = clamp01(tmpl[static_cast<size_t>(p)] + spec.noise_std * rng.normal());
      for (int64_t site : sites[static_cast<size_t>(cls)])
        dst[site] = clamp01(static_cast<double>(dst[site]) + spec.shortcut_delta);
    }
    return make_split(std::move(pixels), std::move(labels), c, image_size, classes);
  };

  DatasetHandle handle;
  handle.name = "synth";
  handle.train = build(n, 0xA0u);
  handle.test = build(std::max(classes, n / 5), 0xB0u);
  return handle;
}

DatasetHandle synth_dataset(int64_t n, int64_t classes, int64_t image_size, uint64_t seed) {
  return synth_dataset(n, classes, image_size, seed, SynthSpec{});
}

}  // namespace atlab
