#pragma once

// Synthetic driving-scene generator with outlier pasting, plus the TDSC1
// dataset container. Scenes are layered background bands, ID shapes, and
// (with some probability) pasted OOD shapes that occlude everything below.

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "tdos/errors.hpp"
#include "tdos/io.hpp"
#include "tdos/mask.hpp"
#include "tdos/rng.hpp"

namespace tdos {

struct LabeledScene {
  int h = 0, w = 0, c = 3;
  std::vector<double> image;          // h*w*c, values in [0,1]
  std::vector<std::uint8_t> class_map;  // h*w; OOD pixels carry K (sentinel)
  BinaryMask ood_mask;

  double pixel(int i, int j, int ch) const {
    return image[(static_cast<std::size_t>(i) * w + j) * c + ch];
  }
  bool operator==(const LabeledScene& o) const = default;
};

enum class ShapeKind { kBand, kSquare, kTriangle, kDisk, kRing, kCross };

inline std::string shape_kind_name(ShapeKind k) {
  switch (k) {
    case ShapeKind::kBand: return "band";
    case ShapeKind::kSquare: return "square";
    case ShapeKind::kTriangle: return "triangle";
    case ShapeKind::kDisk: return "disk";
    case ShapeKind::kRing: return "ring";
    case ShapeKind::kCross: return "cross";
  }
  return "?";
}

inline ShapeKind shape_kind_from(const std::string& s) {
  if (s == "band") return ShapeKind::kBand;
  if (s == "square") return ShapeKind::kSquare;
  if (s == "triangle") return ShapeKind::kTriangle;
  if (s == "disk") return ShapeKind::kDisk;
  if (s == "ring") return ShapeKind::kRing;
  if (s == "cross") return ShapeKind::kCross;
  throw FormatError("unknown shape kind '" + s + "'");
}

struct ShapeSpec {
  ShapeKind kind = ShapeKind::kSquare;
  std::array<double, 3> color = {0, 0, 0};
  bool operator==(const ShapeSpec&) const = default;
};

struct SceneRecipe {
  std::uint64_t seed = 1;
  int h = 32, w = 32;
  int num_classes = 4;  // K; class k uses id_palette[k]
  std::vector<ShapeSpec> id_palette;
  std::vector<ShapeSpec> ood_palette;
  double paste_probability = 0.8;
  int ood_min_size = 4, ood_max_size = 7;
  double color_jitter = 0.02;

  static SceneRecipe defaults() {
    SceneRecipe r;
    r.id_palette = {
        {ShapeKind::kBand, {0.38, 0.56, 0.86}},      // sky band
        {ShapeKind::kBand, {0.24, 0.24, 0.27}},      // road band
        {ShapeKind::kSquare, {0.82, 0.16, 0.14}},    // vehicle
        {ShapeKind::kTriangle, {0.95, 0.80, 0.20}},  // pedestrian
    };
    r.ood_palette = {
        {ShapeKind::kCross, {0.10, 0.88, 0.42}},
        {ShapeKind::kRing, {0.72, 0.20, 0.85}},
        {ShapeKind::kDisk, {0.15, 0.85, 0.90}},
    };
    return r;
  }

  void validate() const {
    if (id_palette.empty())
      throw std::invalid_argument("recipe: empty ID palette");
    if (static_cast<int>(id_palette.size()) != num_classes)
      throw std::invalid_argument("recipe: id_palette size must equal K");
    if (paste_probability < 0.0 || paste_probability > 1.0)
      throw std::invalid_argument("recipe: paste_probability outside [0,1]");
    if (ood_min_size < 1 || ood_max_size < ood_min_size)
      throw std::invalid_argument("recipe: bad ood size range");
    for (const auto& id : id_palette)
      for (const auto& ood : ood_palette)
        if (id == ood)
          throw std::invalid_argument(
              "recipe: ID and OOD palettes must be disjoint");
  }
};

namespace detail {

inline void rasterize(ShapeKind kind, int cy, int cx, int r, int h, int w,
                      std::vector<std::uint8_t>& hit) {
  hit.assign(static_cast<std::size_t>(h) * w, 0);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const int dy = i - cy, dx = j - cx;
      bool on = false;
      switch (kind) {
        case ShapeKind::kBand:
          on = false;  // bands are drawn separately
          break;
        case ShapeKind::kSquare:
          on = std::abs(dy) <= r && std::abs(dx) <= r;
          break;
        case ShapeKind::kTriangle:
          on = dy >= -r && dy <= r && std::abs(dx) <= (dy + r) / 2;
          break;
        case ShapeKind::kDisk:
          on = dy * dy + dx * dx <= r * r;
          break;
        case ShapeKind::kRing: {
          const int d2 = dy * dy + dx * dx;
          const int inner = std::max(r - 3, 0);
          on = d2 <= r * r && d2 >= inner * inner;
          break;
        }
        case ShapeKind::kCross:
          on = (std::abs(dy) <= 2 && std::abs(dx) <= r) ||
               (std::abs(dx) <= 2 && std::abs(dy) <= r);
          break;
      }
      if (on) hit[static_cast<std::size_t>(i) * w + j] = 1;
    }
}

inline void paint(LabeledScene& s, const std::vector<std::uint8_t>& hit,
                  const std::array<double, 3>& color, std::uint8_t cls) {
  for (int i = 0; i < s.h; ++i)
    for (int j = 0; j < s.w; ++j) {
      const std::size_t p = static_cast<std::size_t>(i) * s.w + j;
      if (!hit[p]) continue;
      for (int ch = 0; ch < 3; ++ch) s.image[p * 3 + ch] = color[ch];
      s.class_map[p] = cls;
    }
}

}  // namespace detail

inline LabeledScene generate_scene(const SceneRecipe& recipe, Rng rng) {
  LabeledScene s;
  s.h = recipe.h;
  s.w = recipe.w;
  s.c = 3;
  const std::size_t hw = static_cast<std::size_t>(s.h) * s.w;
  s.image.assign(hw * 3, 0.0);
  s.class_map.assign(hw, 0);
  s.ood_mask = BinaryMask::zeros(s.h, s.w);

  // Background bands: band classes split the image top-to-bottom.
  std::vector<int> band_classes;
  for (int k = 0; k < recipe.num_classes; ++k)
    if (recipe.id_palette[k].kind == ShapeKind::kBand) band_classes.push_back(k);
  const int horizon =
      band_classes.size() >= 2
          ? rng.uniform_int(s.h * 2 / 5, s.h * 7 / 10)
          : s.h;
  for (int i = 0; i < s.h; ++i) {
    const int band_idx = (i < horizon || band_classes.size() < 2) ? 0 : 1;
    const int cls = band_classes.empty() ? 0 : band_classes[band_idx];
    const auto& color = recipe.id_palette[cls].color;
    for (int j = 0; j < s.w; ++j) {
      const std::size_t p = static_cast<std::size_t>(i) * s.w + j;
      for (int ch = 0; ch < 3; ++ch) s.image[p * 3 + ch] = color[ch];
      s.class_map[p] = static_cast<std::uint8_t>(cls);
    }
  }

  // ID object shapes, one or two instances per object class.
  std::vector<std::uint8_t> hit;
  for (int k = 0; k < recipe.num_classes; ++k) {
    const auto& spec = recipe.id_palette[k];
    if (spec.kind == ShapeKind::kBand) continue;
    const int instances = rng.uniform_int(1, 2);
    for (int inst = 0; inst < instances; ++inst) {
      const int r = rng.uniform_int(3, std::max(3, s.h / 5));
      const int cy = rng.uniform_int(r + 1, s.h - r - 2);
      const int cx = rng.uniform_int(r + 1, s.w - r - 2);
      detail::rasterize(spec.kind, cy, cx, r, s.h, s.w, hit);
      detail::paint(s, hit, spec.color, static_cast<std::uint8_t>(k));
    }
  }

  // Outlier paste: OOD shapes occlude everything drawn so far.
  if (rng.uniform() < recipe.paste_probability && !recipe.ood_palette.empty()) {
    const int instances = rng.uniform_int(1, 2);
    for (int inst = 0; inst < instances; ++inst) {
      const auto& spec = recipe.ood_palette[rng.uniform_int(
          0, static_cast<int>(recipe.ood_palette.size()) - 1)];
      // Shapes must fit with a 1-cell margin; small scenes clamp the range.
      const int fit = (std::min(s.h, s.w) - 3) / 2;
      const int r_hi = std::min(recipe.ood_max_size, fit);
      const int r_lo = std::min(recipe.ood_min_size, r_hi);
      const int r = rng.uniform_int(r_lo, r_hi);
      const int cy = rng.uniform_int(r + 1, s.h - r - 2);
      const int cx = rng.uniform_int(r + 1, s.w - r - 2);
      detail::rasterize(spec.kind, cy, cx, r, s.h, s.w, hit);
      detail::paint(s, hit, spec.color,
                    static_cast<std::uint8_t>(recipe.num_classes));
      for (std::size_t p = 0; p < hw; ++p)
        if (hit[p]) s.ood_mask.data[p] = 1;
    }
  }

  // Mild pixel jitter on the image only; labels stay hard.
  if (recipe.color_jitter > 0.0) {
    for (double& v : s.image) {
      v += rng.normal(0.0, recipe.color_jitter);
      v = std::min(1.0, std::max(0.0, v));
    }
  }
  return s;
}

inline std::vector<LabeledScene> generate(const SceneRecipe& recipe, int n) {
  if (n < 1) throw std::invalid_argument("generate: n must be >= 1");
  recipe.validate();
  Rng root(recipe.seed);
  std::vector<LabeledScene> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i)
    out.push_back(generate_scene(recipe, root.child(i)));
  return out;
}

// ---------------------------------------------------------------------------
// Recipe file: key=value lines; palettes as kind:r,g,b entries joined by ';'.
// ---------------------------------------------------------------------------

inline std::vector<ShapeSpec> parse_palette(const std::string& text) {
  std::vector<ShapeSpec> out;
  std::istringstream ss(text);
  std::string entry;
  while (std::getline(ss, entry, ';')) {
    if (entry.empty()) continue;
    const auto colon = entry.find(':');
    if (colon == std::string::npos)
      throw FormatError("palette entry '" + entry + "' missing ':'");
    ShapeSpec spec;
    spec.kind = shape_kind_from(entry.substr(0, colon));
    std::istringstream cs(entry.substr(colon + 1));
    std::string num;
    for (int i = 0; i < 3; ++i) {
      if (!std::getline(cs, num, ','))
        throw FormatError("palette entry '" + entry + "' needs 3 color values");
      spec.color[i] = std::stod(num);
    }
    out.push_back(spec);
  }
  return out;
}

inline std::string palette_to_string(const std::vector<ShapeSpec>& palette) {
  std::ostringstream os;
  for (std::size_t i = 0; i < palette.size(); ++i) {
    if (i) os << ';';
    os << shape_kind_name(palette[i].kind) << ':' << palette[i].color[0] << ','
       << palette[i].color[1] << ',' << palette[i].color[2];
  }
  return os.str();
}

inline SceneRecipe parse_recipe(std::istream& is) {
  SceneRecipe r = SceneRecipe::defaults();
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw FormatError("recipe line '" + line + "' missing '='");
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    if (key == "seed") r.seed = std::stoull(val);
    else if (key == "height") r.h = std::stoi(val);
    else if (key == "width") r.w = std::stoi(val);
    else if (key == "classes") r.num_classes = std::stoi(val);
    else if (key == "id_palette") r.id_palette = parse_palette(val);
    else if (key == "ood_palette") r.ood_palette = parse_palette(val);
    else if (key == "paste_probability") r.paste_probability = std::stod(val);
    else if (key == "ood_min_size") r.ood_min_size = std::stoi(val);
    else if (key == "ood_max_size") r.ood_max_size = std::stoi(val);
    else if (key == "color_jitter") r.color_jitter = std::stod(val);
    else throw FormatError("recipe: unknown key '" + key + "'");
  }
  r.validate();
  return r;
}

inline SceneRecipe load_recipe(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("cannot open recipe file '" + path + "'");
  return parse_recipe(f);
}

inline void save_recipe(const SceneRecipe& r, std::ostream& os) {
  os << "seed=" << r.seed << "\nheight=" << r.h << "\nwidth=" << r.w
     << "\nclasses=" << r.num_classes
     << "\nid_palette=" << palette_to_string(r.id_palette)
     << "\nood_palette=" << palette_to_string(r.ood_palette)
     << "\npaste_probability=" << r.paste_probability
     << "\nood_min_size=" << r.ood_min_size
     << "\nood_max_size=" << r.ood_max_size
     << "\ncolor_jitter=" << r.color_jitter << "\n";
}

// ---------------------------------------------------------------------------
// TDSC1 container
// ---------------------------------------------------------------------------

inline constexpr const char* kDatasetMagic = "TDSC1";

struct Dataset {
  std::vector<LabeledScene> scenes;
  int num_classes = 0;
  std::uint64_t config_hash = 0;

  bool operator==(const Dataset&) const = default;
};

inline void save_dataset(const Dataset& ds, std::ostream& os) {
  os.write(kDatasetMagic, 5);
  write_u32(os, 1);  // version
  write_u64(os, ds.config_hash);
  write_u32(os, static_cast<std::uint32_t>(ds.scenes.size()));
  const int h = ds.scenes.empty() ? 0 : ds.scenes[0].h;
  const int w = ds.scenes.empty() ? 0 : ds.scenes[0].w;
  const int c = ds.scenes.empty() ? 3 : ds.scenes[0].c;
  write_u32(os, h);
  write_u32(os, w);
  write_u32(os, c);
  write_u32(os, ds.num_classes);
  for (const auto& s : ds.scenes) {
    if (s.h != h || s.w != w || s.c != c)
      throw FormatError("save_dataset: inhomogeneous scene shapes");
    write_f64_vec(os, s.image);
    write_bytes(os, s.class_map);
    write_bytes(os, s.ood_mask.data);
  }
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open '" + path + "' for writing");
  save_dataset(ds, f);
}

inline Dataset load_dataset(std::istream& is) {
  expect_magic(is, kDatasetMagic);
  const std::uint32_t version = read_u32(is);
  if (version != 1)
    throw FormatError("unsupported dataset version " + std::to_string(version));
  Dataset ds;
  ds.config_hash = read_u64(is);
  const std::uint32_t count = read_u32(is);
  const int h = static_cast<int>(read_u32(is));
  const int w = static_cast<int>(read_u32(is));
  const int c = static_cast<int>(read_u32(is));
  ds.num_classes = static_cast<int>(read_u32(is));
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (std::uint32_t i = 0; i < count; ++i) {
    LabeledScene s;
    s.h = h;
    s.w = w;
    s.c = c;
    s.image = read_f64_vec(is, hw * c);
    s.class_map = read_bytes(is, hw);
    s.ood_mask = {h, w, read_bytes(is, hw)};
    ds.scenes.push_back(std::move(s));
  }
  return ds;
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open dataset file '" + path + "'");
  return load_dataset(f);
}

// Content hash of a serialized dataset (identity for determinism checks).
inline std::uint64_t dataset_hash(const Dataset& ds) {
  std::ostringstream os(std::ios::binary);
  save_dataset(ds, os);
  const std::string bytes = os.str();
  return fnv1a_bytes(bytes.data(), bytes.size());
}

}  // namespace tdos
