#ifndef MCGEN_DATA_HPP
#define MCGEN_DATA_HPP

#include <filesystem>
#include <fstream>
#include <numbers>

#include "mcgen/checkpoint.hpp"
#include "mcgen/pgm.hpp"
#include "mcgen/rng.hpp"
#include "mcgen/tensor.hpp"

namespace mcgen {

enum class Regime { LowIntra, HighIntra };

inline std::string regime_name(Regime r) {
  return r == Regime::LowIntra ? "low" : "high";
}
inline Regime regime_from(const std::string& s) {
  if (s == "low") return Regime::LowIntra;
  if (s == "high") return Regime::HighIntra;
  throw ConfigError("unknown regime '" + s + "' (expected low|high)");
}

// Procedural multimodal image data: one base glyph per mode (oriented bar,
// ellipse or regular polygon with mode-specific pose), plus regime-dependent
// sample variation. Every sample carries its ground-truth mode.
struct SyntheticSpec {
  int modes = 8;
  Index per_mode = 500;
  Index size = 16;
  Regime regime = Regime::LowIntra;
  std::uint64_t seed = 0;
  int channels = 1;
  double heldout_frac = 0.1;
  // Regime defaults; override only in tests (negative = use the default).
  double noise_sigma = -1.0;
  double jitter_px = -1.0;
};

template <typename S>
struct Dataset {
  Tensor<S> images;  // (N, c, H, W) in [0, 1]
  std::vector<Index> labels;
  std::vector<std::uint8_t> split;  // 0 train, 1 heldout
  int modes = 0;

  Index count() const { return static_cast<Index>(labels.size()); }
  std::vector<Index> indices(bool heldout) const {
    std::vector<Index> out;
    for (Index i = 0; i < count(); ++i) {
      if ((split[static_cast<std::size_t>(i)] == 1) == heldout) out.push_back(i);
    }
    return out;
  }
  // Rows gathered into a fresh (n, c, H, W) batch tensor.
  Tensor<S> gather(const std::vector<Index>& idx) const {
    const Index c = images.dim(1), h = images.dim(2), w = images.dim(3);
    const Index chw = c * h * w;
    std::vector<S> out(static_cast<std::size_t>(static_cast<Index>(idx.size()) * chw));
    for (std::size_t r = 0; r < idx.size(); ++r) {
      std::memcpy(&out[r * static_cast<std::size_t>(chw)],
                  &images.data()[static_cast<std::size_t>(idx[r] * chw)],
                  static_cast<std::size_t>(chw) * sizeof(S));
    }
    return Tensor<S>::from_data({static_cast<Index>(idx.size()), c, h, w},
                                std::move(out));
  }
  std::vector<Index> gather_labels(const std::vector<Index>& idx) const {
    std::vector<Index> out;
    out.reserve(idx.size());
    for (Index i : idx) out.push_back(labels[static_cast<std::size_t>(i)]);
    return out;
  }
};

namespace glyph_detail {

struct GlyphParams {
  int type;        // 0 bar, 1 ellipse, 2 polygon
  int poly_sides;  // for type 2
  double cx, cy;   // center in pixels
  double angle;    // radians
  double major, minor;
};

// Base glyph of mode m: deterministic in (seed, m), pairwise distinct by
// construction (distinct ring positions and orientations).
inline GlyphParams mode_glyph(std::uint64_t seed, int mode, int modes,
                              Index size) {
  auto s = RngStream::derive(seed, "glyph", static_cast<std::uint64_t>(mode));
  GlyphParams g;
  g.type = mode % 3;
  g.poly_sides = 3 + (mode / 3) % 4;
  const double phi = 2.0 * std::numbers::pi * mode / std::max(1, modes);
  const double ring = 0.18 * static_cast<double>(size);
  g.cx = 0.5 * size + ring * std::cos(phi) + s.uniform(-0.5, 0.5);
  g.cy = 0.5 * size + ring * std::sin(phi) + s.uniform(-0.5, 0.5);
  g.angle = std::numbers::pi * mode / std::max(1, modes) + s.uniform(0.0, 0.15);
  g.major = (0.30 + 0.10 * s.uniform()) * size;
  g.minor = (0.08 + 0.05 * s.uniform()) * size;
  if (g.type == 1) g.minor = (0.14 + 0.06 * s.uniform()) * size;
  if (g.type == 2) g.minor = g.major = (0.20 + 0.06 * s.uniform()) * size;
  return g;
}

inline double glyph_sdf(const GlyphParams& g, double px, double py) {
  // Into glyph frame.
  const double dx = px - g.cx;
  const double dy = py - g.cy;
  const double ca = std::cos(-g.angle), sa = std::sin(-g.angle);
  const double x = ca * dx - sa * dy;
  const double y = sa * dx + ca * dy;
  switch (g.type) {
    case 0: {  // bar: axis-aligned rectangle in the glyph frame
      const double qx = std::abs(x) - g.major * 0.5;
      const double qy = std::abs(y) - g.minor * 0.5;
      return std::max(qx, qy);
    }
    case 1: {  // ellipse (scaled-distance approximation)
      const double a = g.major * 0.5, b = g.minor * 0.5;
      const double r = std::sqrt((x / a) * (x / a) + (y / b) * (y / b));
      return (r - 1.0) * std::min(a, b);
    }
    default: {  // regular polygon: max over edge half-planes
      const double r_in =
          g.major * 0.5 * std::cos(std::numbers::pi / g.poly_sides);
      double d = -1e30;
      for (int i = 0; i < g.poly_sides; ++i) {
        const double a = 2.0 * std::numbers::pi * i / g.poly_sides;
        d = std::max(d, x * std::cos(a) + y * std::sin(a) - r_in);
      }
      return d;
    }
  }
}

}  // namespace glyph_detail

template <typename S>
Dataset<S> make_synthetic(const SyntheticSpec& spec) {
  if (spec.modes < 2) throw ValueError("make_synthetic: need at least 2 modes");
  if (spec.size < 8) {
    throw ValueError("make_synthetic: image size " + std::to_string(spec.size) +
                     " too small for glyphs (min 8)");
  }
  if (spec.channels != 1) {
    throw ValueError("make_synthetic: grayscale only at desk scale");
  }
  const bool low = spec.regime == Regime::LowIntra;
  const double noise = spec.noise_sigma >= 0 ? spec.noise_sigma : 0.05;
  const double jitter = spec.jitter_px >= 0 ? spec.jitter_px : (low ? 1.0 : 2.0);

  const Index n = spec.modes * spec.per_mode;
  const Index sz = spec.size;
  std::vector<S> images(static_cast<std::size_t>(n * sz * sz));
  std::vector<Index> labels(static_cast<std::size_t>(n));
  std::vector<std::uint8_t> split(static_cast<std::size_t>(n), 0);
  const Index heldout_per_mode =
      static_cast<Index>(std::llround(spec.heldout_frac * static_cast<double>(spec.per_mode)));

  for (int m = 0; m < spec.modes; ++m) {
    const auto base = glyph_detail::mode_glyph(spec.seed, m, spec.modes, sz);
    for (Index i = 0; i < spec.per_mode; ++i) {
      const Index row = m * spec.per_mode + i;
      labels[static_cast<std::size_t>(row)] = m;
      if (i >= spec.per_mode - heldout_per_mode) {
        split[static_cast<std::size_t>(row)] = 1;
      }
      auto s = RngStream::derive(spec.seed, "sample",
                                 (static_cast<std::uint64_t>(m) << 32) |
                                     static_cast<std::uint64_t>(i));
      glyph_detail::GlyphParams g = base;
      double bg_amp = 0.0, bg_fx = 0.0, bg_fy = 0.0, bg_phase = 0.0;
      if (low) {
        if (jitter > 0) {
          g.cx += static_cast<double>(s.uniform_int(2 * static_cast<Index>(jitter) + 1)) - jitter;
          g.cy += static_cast<double>(s.uniform_int(2 * static_cast<Index>(jitter) + 1)) - jitter;
        }
      } else {
        g.angle += s.uniform(-std::numbers::pi / 6.0, std::numbers::pi / 6.0);
        const double scale = 1.0 + s.uniform(-0.25, 0.25);
        g.major *= scale;
        g.minor *= scale;
        g.cx += s.uniform(-jitter, jitter);
        g.cy += s.uniform(-jitter, jitter);
        bg_amp = 0.15;
        bg_fx = s.uniform(0.05, 0.25);
        bg_fy = s.uniform(0.05, 0.25);
        bg_phase = s.uniform(0.0, 2.0 * std::numbers::pi);
      }
      S* img = &images[static_cast<std::size_t>(row * sz * sz)];
      for (Index y = 0; y < sz; ++y) {
        for (Index x = 0; x < sz; ++x) {
          const double d = glyph_detail::glyph_sdf(g, x + 0.5, y + 0.5);
          const double cov = std::clamp(0.5 - d / 1.0, 0.0, 1.0);
          double v = 0.06 + 0.88 * cov;
          if (bg_amp > 0) {
            v += bg_amp *
                 0.5 *
                 (1.0 + std::sin(2.0 * std::numbers::pi * (bg_fx * x + bg_fy * y) +
                                 bg_phase)) *
                 (1.0 - cov);
          }
          if (noise > 0) v += noise * s.normal();
          img[y * sz + x] = static_cast<S>(std::clamp(v, 0.0, 1.0));
        }
      }
    }
  }
  Dataset<S> ds;
  ds.images = Tensor<S>::from_data({n, 1, sz, sz}, std::move(images));
  ds.labels = std::move(labels);
  ds.split = std::move(split);
  ds.modes = spec.modes;
  return ds;
}

// ---------------------------------------------------------------------------
// Image tensor <-> PNM files; [0,1] maps to bytes with round-half-up.
// ---------------------------------------------------------------------------

template <typename S>
void write_image(const std::string& path, const Tensor<S>& image) {
  if (image.rank() != 3 || (image.dim(0) != 1 && image.dim(0) != 3)) {
    throw ShapeError("write_image: (c,H,W) tensor with 1 or 3 channels required, got " +
                     shape_str(image.shape()));
  }
  PnmImage img;
  img.channels = static_cast<int>(image.dim(0));
  img.height = image.dim(1);
  img.width = image.dim(2);
  const Index hw = img.height * img.width;
  img.bytes.resize(static_cast<std::size_t>(hw * img.channels));
  auto v = image.data();
  for (Index p = 0; p < hw; ++p) {
    for (int c = 0; c < img.channels; ++c) {
      const double x = static_cast<double>(v[static_cast<std::size_t>(c * hw + p)]);
      const double b = std::floor(std::clamp(x, 0.0, 1.0) * 255.0 + 0.5);
      img.bytes[static_cast<std::size_t>(p * img.channels + c)] =
          static_cast<std::uint8_t>(b);
    }
  }
  write_pnm(path, img);
}

template <typename S>
Tensor<S> read_image(const std::string& path) {
  PnmImage img = read_pnm(path);
  const Index hw = img.height * img.width;
  std::vector<S> vals(static_cast<std::size_t>(hw * img.channels));
  for (Index p = 0; p < hw; ++p) {
    for (int c = 0; c < img.channels; ++c) {
      vals[static_cast<std::size_t>(c * hw + p)] = static_cast<S>(
          img.bytes[static_cast<std::size_t>(p * img.channels + c)] / 255.0);
    }
  }
  return Tensor<S>::from_data({img.channels, img.height, img.width},
                              std::move(vals));
}

// Tiles a batch into a rows x cols grid image with 1px mid-gray separators.
// Grid cell (r, c) holds batch image r*cols + c; callers put one mode per
// column.
template <typename S>
Tensor<S> make_grid(const Tensor<S>& images, Index rows, Index cols) {
  if (images.rank() != 4) throw ShapeError("make_grid: (N,c,H,W) batch required");
  const Index n = images.dim(0), ch = images.dim(1), h = images.dim(2),
              w = images.dim(3);
  if (rows * cols < n) {
    throw ValueError("make_grid: grid " + std::to_string(rows) + "x" +
                     std::to_string(cols) + " too small for " +
                     std::to_string(n) + " images");
  }
  const Index gh = rows * h + (rows - 1);
  const Index gw = cols * w + (cols - 1);
  std::vector<S> out(static_cast<std::size_t>(ch * gh * gw), S(0.5));
  auto v = images.data();
  for (Index k = 0; k < n; ++k) {
    const Index r = k / cols, c = k % cols;
    for (Index cc = 0; cc < ch; ++cc)
      for (Index y = 0; y < h; ++y)
        for (Index x = 0; x < w; ++x) {
          out[static_cast<std::size_t>((cc * gh + r * (h + 1) + y) * gw +
                                       c * (w + 1) + x)] =
              v[static_cast<std::size_t>(((k * ch + cc) * h + y) * w + x)];
        }
  }
  return Tensor<S>::from_data({ch, gh, gw}, std::move(out));
}

template <typename S>
void write_grid(const Tensor<S>& images, Index rows, Index cols,
                const std::string& path) {
  write_image(path, make_grid(images, rows, cols));
}

// ---------------------------------------------------------------------------
// Dataset directory: meta.txt (key=value), manifest.txt ("index label split"
// lines), images/NNNNNN.pgm.
// ---------------------------------------------------------------------------

template <typename S>
void save_dataset(const Dataset<S>& ds, const SyntheticSpec& spec,
                  const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "images");
  {
    std::map<std::string, std::string> kv;
    kv["modes"] = std::to_string(spec.modes);
    kv["per_mode"] = std::to_string(spec.per_mode);
    kv["size"] = std::to_string(spec.size);
    kv["regime"] = regime_name(spec.regime);
    kv["seed"] = std::to_string(spec.seed);
    kv["channels"] = std::to_string(spec.channels);
    kv["count"] = std::to_string(ds.count());
    std::ofstream f(fs::path(dir) / "meta.txt");
    if (!f) throw IoError("save_dataset: cannot write meta.txt");
    f << format_kv(kv);
  }
  {
    std::ofstream f(fs::path(dir) / "manifest.txt");
    if (!f) throw IoError("save_dataset: cannot write manifest.txt");
    for (Index i = 0; i < ds.count(); ++i) {
      f << i << " " << ds.labels[static_cast<std::size_t>(i)] << " "
        << (ds.split[static_cast<std::size_t>(i)] ? "heldout" : "train") << "\n";
    }
  }
  const Index chw = ds.images.dim(1) * ds.images.dim(2) * ds.images.dim(3);
  for (Index i = 0; i < ds.count(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "%06lld.pgm", static_cast<long long>(i));
    std::vector<S> one(ds.images.data().begin() + i * chw,
                       ds.images.data().begin() + (i + 1) * chw);
    write_image((fs::path(dir) / "images" / name).string(),
                Tensor<S>::from_data({ds.images.dim(1), ds.images.dim(2),
                                      ds.images.dim(3)},
                                     std::move(one)));
  }
}

inline std::map<std::string, std::string> load_dataset_meta(
    const std::string& dir) {
  std::ifstream f(std::filesystem::path(dir) / "meta.txt");
  if (!f) throw IoError("load_dataset: missing meta.txt in " + dir);
  std::string text((std::istreambuf_iterator<char>(f)),
                   std::istreambuf_iterator<char>());
  return parse_kv(text);
}

template <typename S>
Dataset<S> load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  auto meta = load_dataset_meta(dir);
  const Index count = std::stoll(meta.at("count"));
  const Index size = std::stoll(meta.at("size"));
  const int channels = std::stoi(meta.at("channels"));
  Dataset<S> ds;
  ds.modes = std::stoi(meta.at("modes"));
  ds.labels.resize(static_cast<std::size_t>(count));
  ds.split.resize(static_cast<std::size_t>(count));
  std::vector<S> images(
      static_cast<std::size_t>(count * channels * size * size));
  {
    std::ifstream f(fs::path(dir) / "manifest.txt");
    if (!f) throw IoError("load_dataset: missing manifest.txt in " + dir);
    Index idx, label;
    std::string split_name;
    Index seen = 0;
    while (f >> idx >> label >> split_name) {
      if (idx < 0 || idx >= count) {
        throw IoError("load_dataset: manifest index out of range");
      }
      ds.labels[static_cast<std::size_t>(idx)] = label;
      ds.split[static_cast<std::size_t>(idx)] = split_name == "heldout" ? 1 : 0;
      ++seen;
    }
    if (seen != count) {
      throw IoError("load_dataset: manifest lists " + std::to_string(seen) +
                    " of " + std::to_string(count) + " samples");
    }
  }
  const Index chw = channels * size * size;
  for (Index i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "%06lld.pgm", static_cast<long long>(i));
    auto img = read_image<S>((fs::path(dir) / "images" / name).string());
    if (img.dim(0) != channels || img.dim(1) != size || img.dim(2) != size) {
      throw IoError("load_dataset: image " + std::string(name) +
                    " has unexpected shape");
    }
    std::memcpy(&images[static_cast<std::size_t>(i * chw)], img.data().data(),
                static_cast<std::size_t>(chw) * sizeof(S));
  }
  ds.images = Tensor<S>::from_data({count, channels, size, size},
                                   std::move(images));
  for (Index l : ds.labels) {
    if (l < 0 || l >= ds.modes) throw IoError("load_dataset: label out of range");
  }
  return ds;
}

}  // namespace mcgen

#endif  // MCGEN_DATA_HPP
