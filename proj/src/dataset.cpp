#include "mlwc/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

namespace mlwc {
namespace fs = std::filesystem;

std::vector<int> LabeledDataset::indices_of_class(int label) const {
  std::vector<int> out;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == label) out.push_back(static_cast<int>(i));
  }
  return out;
}

namespace {

constexpr int kMotifSize = 7;
constexpr int kMotifsPerFamily = 16;
constexpr int kLayouts = 8;
constexpr int kStampsPerImage = 5;
constexpr int kStampJitter = 2;
constexpr double kStampStrength = 0.45;
constexpr double kGradientAmp = 0.22;

// Substream tags.
constexpr std::uint64_t kTagArchetype = 0xA7C4;
constexpr std::uint64_t kTagAnchors = 0xA2C0;
constexpr std::uint64_t kTagSample = 0x5A3E;

/// Motif mask value in [0,1] at patch position (u,v). Family 0 uses oriented
/// stripes; family 1 a shifted pool (offset orientations, wider period,
/// inverted phase) so the patterns are distinct but remain texture-like.
double motif_mask(int family, int motif, int u, int v) {
  const double du = u - (kMotifSize - 1) / 2.0;
  const double dv = v - (kMotifSize - 1) / 2.0;
  if (family == 0) {
    const double theta = M_PI * motif / kMotifsPerFamily;
    const double s = std::cos(2.0 * M_PI * (du * std::cos(theta) + dv * std::sin(theta)) / 3.0);
    return s > 0.3 ? 1.0 : 0.0;
  }
  const double theta = M_PI * (motif + 0.5) / kMotifsPerFamily;
  const double s = std::cos(2.0 * M_PI * (du * std::cos(theta) + dv * std::sin(theta)) / 4.2);
  return s < -0.3 ? 1.0 : 0.0;
}

struct Archetype {
  int family;
  int motif;
  double grad_dir;    // gradient direction, radians
  double background;  // base intensity level
};

Archetype archetype_of(int family, int index) {
  Archetype a{};
  a.family = family;
  a.motif = index % kMotifsPerFamily;
  const int layout = index / kMotifsPerFamily;
  a.grad_dir = layout * (2.0 * M_PI / kLayouts);
  a.background = 0.30 + 0.06 * (layout % 4);
  return a;
}

struct ClassDef {
  Archetype archetype;
  std::vector<std::pair<int, int>> anchors;  // stamp anchor positions (x, y)
  std::array<double, 3> color;               // per-channel stamp gain
};

ClassDef make_class(const SynthSpec& spec, int family, int archetype_index,
                    std::uint64_t role_tag, int class_index) {
  ClassDef def{};
  def.archetype = archetype_of(family, archetype_index);
  RngStream rng = RngStream::substream(spec.seed, {kTagAnchors, role_tag,
                                                   static_cast<std::uint64_t>(class_index)});
  const int lo = kStampJitter;
  const int hi = spec.image_size - kMotifSize - kStampJitter;
  for (int s = 0; s < kStampsPerImage; ++s) {
    def.anchors.emplace_back(lo + rng.uniform_int(hi - lo + 1), lo + rng.uniform_int(hi - lo + 1));
  }
  for (int c = 0; c < 3; ++c) def.color[c] = 0.6 + 0.4 * rng.uniform();
  if (spec.channels == 1) def.color = {1.0, 1.0, 1.0};
  return def;
}

Tensor render_sample(const SynthSpec& spec, const ClassDef& def, RngStream& rng) {
  const int size = spec.image_size;
  Tensor img({spec.channels, size, size});

  // Layout jitter scales with the noise level so noiseless classes stay
  // identical up to stamp positions.
  const double bg = def.archetype.background + 2.0 * spec.noise_sigma * rng.uniform(-1.0, 1.0);
  const double amp = kGradientAmp * (1.0 + 4.0 * spec.noise_sigma * rng.uniform(-1.0, 1.0));
  const double cx = std::cos(def.archetype.grad_dir);
  const double cy = std::sin(def.archetype.grad_dir);
  for (int c = 0; c < spec.channels; ++c) {
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const double fx = size > 1 ? static_cast<double>(x) / (size - 1) - 0.5 : 0.0;
        const double fy = size > 1 ? static_cast<double>(y) / (size - 1) - 0.5 : 0.0;
        img.at({c, y, x}) = bg + amp * (fx * cx + fy * cy);
      }
    }
  }

  for (const auto& [ax, ay] : def.anchors) {
    const int sx = ax + rng.uniform_int(2 * kStampJitter + 1) - kStampJitter;
    const int sy = ay + rng.uniform_int(2 * kStampJitter + 1) - kStampJitter;
    for (int v = 0; v < kMotifSize; ++v) {
      for (int u = 0; u < kMotifSize; ++u) {
        const double m = motif_mask(def.archetype.family, def.archetype.motif, u, v);
        if (m == 0.0) continue;
        for (int c = 0; c < spec.channels; ++c) {
          double& px = img.at({c, sy + v, sx + u});
          px += kStampStrength * def.color[static_cast<size_t>(c)] * m;
        }
      }
    }
  }

  if (spec.noise_sigma > 0.0) {
    for (Eigen::Index i = 0; i < img.size(); ++i) img[i] += spec.noise_sigma * rng.normal();
  }
  for (Eigen::Index i = 0; i < img.size(); ++i) img[i] = std::min(1.0, std::max(0.0, img[i]));
  return img;
}

std::string class_name(const char* prefix, int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%03d", prefix, index);
  return buf;
}

LabeledDataset synth_split(const SynthSpec& spec, const std::vector<ClassDef>& defs,
                           DatasetRole role, int per_class, std::uint64_t split_tag) {
  LabeledDataset ds;
  ds.role = role;
  const char* prefix = role == DatasetRole::Base ? "base" : "novel";
  const std::uint64_t role_tag = role == DatasetRole::Base ? 0 : 1;
  for (size_t c = 0; c < defs.size(); ++c) ds.label_space.push_back(class_name(prefix, static_cast<int>(c)));
  for (size_t c = 0; c < defs.size(); ++c) {
    for (int s = 0; s < per_class; ++s) {
      RngStream rng = RngStream::substream(
          spec.seed, {kTagSample, role_tag, split_tag, static_cast<std::uint64_t>(c),
                      static_cast<std::uint64_t>(s)});
      ds.images.push_back(render_sample(spec, defs[c], rng));
      ds.labels.push_back(static_cast<int>(c));
    }
  }
  return ds;
}

void validate_spec(const SynthSpec& spec) {
  if (spec.image_size < kMotifSize + 2 * kStampJitter + 2) {
    throw DataError("synth: image_size too small for motif stamps");
  }
  if (spec.channels != 1 && spec.channels != 3) {
    throw DataError("synth: channels must be 1 or 3");
  }
  if (spec.n_base_classes < 1 || spec.n_novel_classes < 1 || spec.samples_per_class < 1 ||
      spec.test_samples_per_class < 1) {
    throw DataError("synth: class and sample counts must be positive");
  }
  if (spec.noise_sigma < 0.0) throw DataError("synth: noise_sigma must be >= 0");
}

}  // namespace

int synth_archetype_count() { return kMotifsPerFamily * kLayouts; }

DatasetPair synth_generate(const SynthSpec& spec) {
  validate_spec(spec);
  const int pool = synth_archetype_count();
  std::vector<int> base_arch, novel_arch;
  {
    RngStream rng = RngStream::substream(spec.seed, {kTagArchetype, 0});
    std::vector<int> perm(static_cast<size_t>(pool));
    for (int i = 0; i < pool; ++i) perm[static_cast<size_t>(i)] = i;
    rng.shuffle(perm);
    if (spec.novel_family_shift) {
      if (spec.n_base_classes > pool || spec.n_novel_classes > pool) {
        throw DataError("synth: archetype pool exhausted");
      }
      base_arch.assign(perm.begin(), perm.begin() + spec.n_base_classes);
      RngStream rng_b = RngStream::substream(spec.seed, {kTagArchetype, 1});
      std::vector<int> perm_b(static_cast<size_t>(pool));
      for (int i = 0; i < pool; ++i) perm_b[static_cast<size_t>(i)] = i;
      rng_b.shuffle(perm_b);
      novel_arch.assign(perm_b.begin(), perm_b.begin() + spec.n_novel_classes);
    } else {
      if (spec.n_base_classes + spec.n_novel_classes > pool) {
        throw DataError("synth: archetype pool exhausted");
      }
      base_arch.assign(perm.begin(), perm.begin() + spec.n_base_classes);
      novel_arch.assign(perm.begin() + spec.n_base_classes,
                        perm.begin() + spec.n_base_classes + spec.n_novel_classes);
    }
  }

  std::vector<ClassDef> base_defs, novel_defs;
  for (int c = 0; c < spec.n_base_classes; ++c) {
    base_defs.push_back(make_class(spec, 0, base_arch[static_cast<size_t>(c)], 0, c));
  }
  const int novel_family = spec.novel_family_shift ? 1 : 0;
  for (int c = 0; c < spec.n_novel_classes; ++c) {
    novel_defs.push_back(make_class(spec, novel_family, novel_arch[static_cast<size_t>(c)], 1, c));
  }

  DatasetPair pair;
  pair.base_train = synth_split(spec, base_defs, DatasetRole::Base, spec.samples_per_class, 0);
  pair.base_test = synth_split(spec, base_defs, DatasetRole::Base, spec.test_samples_per_class, 1);
  pair.novel_train_pool =
      synth_split(spec, novel_defs, DatasetRole::Novel, spec.samples_per_class, 2);
  pair.novel_test = synth_split(spec, novel_defs, DatasetRole::Novel, spec.test_samples_per_class, 3);
  return pair;
}

namespace {

LabeledDataset load_split(const fs::path& split_dir, DatasetRole role,
                          const std::vector<std::string>* expected_classes) {
  if (!fs::is_directory(split_dir)) {
    throw DataError("dataset: missing split directory " + split_dir.string());
  }
  std::vector<std::string> classes;
  for (const auto& entry : fs::directory_iterator(split_dir)) {
    if (entry.is_directory()) classes.push_back(entry.path().filename().string());
  }
  std::sort(classes.begin(), classes.end());
  if (classes.empty()) throw DataError("dataset: no class directories in " + split_dir.string());
  if (expected_classes && classes != *expected_classes) {
    throw DataError("dataset: class set in " + split_dir.string() +
                    " does not match the train split");
  }

  LabeledDataset ds;
  ds.role = role;
  ds.label_space = classes;
  for (size_t label = 0; label < classes.size(); ++label) {
    const fs::path class_dir = split_dir / classes[label];
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(class_dir)) {
      const std::string ext = entry.path().extension().string();
      if (entry.is_regular_file() && (ext == ".pgm" || ext == ".ppm")) {
        files.push_back(entry.path().filename().string());
      }
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("dataset: no images in " + class_dir.string());
    for (const std::string& f : files) {
      std::ifstream in(class_dir / f, std::ios::binary);
      if (!in) throw DataError("dataset: cannot open " + (class_dir / f).string());
      std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                      std::istreambuf_iterator<char>());
      try {
        ds.images.push_back(parse_netpbm(bytes));
      } catch (const DataError& e) {
        throw DataError(std::string(e.what()) + " in " + (class_dir / f).string());
      }
      ds.labels.push_back(static_cast<int>(label));
    }
  }
  return ds;
}

void check_uniform_shape(const DatasetPair& pair) {
  const Shape& shape = pair.base_train.images.front().shape();
  for (const LabeledDataset* ds :
       {&pair.base_train, &pair.base_test, &pair.novel_train_pool, &pair.novel_test}) {
    for (const Tensor& img : ds->images) {
      if (img.shape() != shape) {
        throw DataError("dataset: image shape " + shape_str(img.shape()) +
                        " differs from first image shape " + shape_str(shape));
      }
    }
  }
}

}  // namespace

DatasetPair load_image_dir(const fs::path& root) {
  DatasetPair pair;
  pair.base_train = load_split(root / "base" / "train", DatasetRole::Base, nullptr);
  pair.base_test =
      load_split(root / "base" / "test", DatasetRole::Base, &pair.base_train.label_space);
  pair.novel_train_pool = load_split(root / "novel" / "train", DatasetRole::Novel, nullptr);
  pair.novel_test =
      load_split(root / "novel" / "test", DatasetRole::Novel, &pair.novel_train_pool.label_space);

  std::set<std::string> base_names(pair.base_train.label_space.begin(),
                                   pair.base_train.label_space.end());
  for (const std::string& n : pair.novel_train_pool.label_space) {
    if (base_names.count(n)) {
      throw DataError("dataset: class name '" + n + "' appears in both base and novel");
    }
  }
  check_uniform_shape(pair);
  return pair;
}

namespace {

void save_split(const LabeledDataset& ds, const fs::path& split_dir) {
  std::vector<int> counter(static_cast<size_t>(ds.class_count()), 0);
  for (const std::string& cls : ds.label_space) fs::create_directories(split_dir / cls);
  for (size_t i = 0; i < ds.images.size(); ++i) {
    const int label = ds.labels[i];
    const std::string& cls = ds.label_space[static_cast<size_t>(label)];
    char name[32];
    std::snprintf(name, sizeof(name), "img_%04d.%s", counter[static_cast<size_t>(label)]++,
                  ds.images[i].dim(0) == 1 ? "pgm" : "ppm");
    const std::vector<std::uint8_t> bytes = emit_netpbm(ds.images[i]);
    std::ofstream out(split_dir / cls / name, std::ios::binary);
    if (!out) throw DataError("dataset: cannot write " + (split_dir / cls / name).string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
  }
}

}  // namespace

void save_dataset_dir(const DatasetPair& pair, const fs::path& root) {
  save_split(pair.base_train, root / "base" / "train");
  save_split(pair.base_test, root / "base" / "test");
  save_split(pair.novel_train_pool, root / "novel" / "train");
  save_split(pair.novel_test, root / "novel" / "test");
}

Episode sample_episode(const DatasetPair& pair, int k, RngStream& rng) {
  if (k < 1) throw DataError("episode: shot count must be >= 1");
  Episode ep;
  ep.shot_count = k;
  for (int cls = 0; cls < pair.novel_train_pool.class_count(); ++cls) {
    const std::vector<int> pool = pair.novel_train_pool.indices_of_class(cls);
    if (static_cast<int>(pool.size()) < k) {
      throw DataError("episode: class " + pair.novel_train_pool.label_space[static_cast<size_t>(cls)] +
                      " has only " + std::to_string(pool.size()) + " pool samples, need " +
                      std::to_string(k));
    }
    const std::vector<int> picks = rng.sample_without_replacement(static_cast<int>(pool.size()), k);
    std::vector<int> chosen;
    for (int p : picks) chosen.push_back(pool[static_cast<size_t>(p)]);
    ep.support.push_back(std::move(chosen));
  }
  ep.novel_queries.resize(pair.novel_test.images.size());
  for (size_t i = 0; i < ep.novel_queries.size(); ++i) ep.novel_queries[i] = static_cast<int>(i);
  ep.base_queries.resize(pair.base_test.images.size());
  for (size_t i = 0; i < ep.base_queries.size(); ++i) ep.base_queries[i] = static_cast<int>(i);
  return ep;
}

Tensor random_crop(const Tensor& image, double fraction, RngStream& rng) {
  if (image.rank() != 3) throw ShapeError("random_crop: image must be [C,H,W]");
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw std::invalid_argument("random_crop: fraction must lie in (0, 1]");
  }
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const int ch = std::max(1, static_cast<int>(std::lround(h * fraction)));
  const int cw = std::max(1, static_cast<int>(std::lround(w * fraction)));
  const int oy = ch < h ? rng.uniform_int(h - ch + 1) : 0;
  const int ox = cw < w ? rng.uniform_int(w - cw + 1) : 0;
  Tensor out({c, ch, cw});
  for (int ci = 0; ci < c; ++ci) {
    for (int y = 0; y < ch; ++y) {
      for (int x = 0; x < cw; ++x) {
        out.at({ci, y, x}) = image.at({ci, oy + y, ox + x});
      }
    }
  }
  return out;
}

}  // namespace mlwc
