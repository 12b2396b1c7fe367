#include "textcanvas/data.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "textcanvas/errors.hpp"
#include "textcanvas/image_io.hpp"
#include "textcanvas/rng.hpp"
#include "textcanvas/vocab.hpp"

namespace textcanvas::data {

namespace fs = std::filesystem;

void SynthConfig::validate() const {
  if (colors.size() < 2 || shapes.size() < 2)
    throw ConfigError("synthetic set needs >= 2 colors and >= 2 shapes");
  if (image_size < 8) throw ConfigError("synthetic image_size too small");
  if (samples_per_class < 1)
    throw ConfigError("samples_per_class must be >= 1");
}

namespace {

struct ShapeSpec {
  double cx, cy, r;
};

bool inside_shape(const std::string& shape, const ShapeSpec& s, double x,
                  double y) {
  const double dx = x - s.cx, dy = y - s.cy;
  if (shape == "circle") return dx * dx + dy * dy <= s.r * s.r;
  if (shape == "square")
    return std::abs(dx) <= 0.9 * s.r && std::abs(dy) <= 0.9 * s.r;
  if (shape == "triangle") {
    // upward triangle with apex at (cx, cy - r)
    const double ax = s.cx, ay = s.cy - s.r;
    const double bx = s.cx - 0.95 * s.r, by = s.cy + 0.8 * s.r;
    const double cx2 = s.cx + 0.95 * s.r, cy2 = s.cy + 0.8 * s.r;
    auto side = [](double px, double py, double qx, double qy, double rx,
                   double ry) {
      return (qx - px) * (ry - py) - (qy - py) * (rx - px);
    };
    const double d1 = side(ax, ay, bx, by, x, y);
    const double d2 = side(bx, by, cx2, cy2, x, y);
    const double d3 = side(cx2, cy2, ax, ay, x, y);
    const bool has_neg = d1 < 0 || d2 < 0 || d3 < 0;
    const bool has_pos = d1 > 0 || d2 > 0 || d3 > 0;
    return !(has_neg && has_pos);
  }
  throw ConfigError("unknown shape: " + shape);
}

Image raster(const std::string& shape, const std::array<double, 3>& rgb,
             int size, const ShapeSpec& spec) {
  Image im = Image::zero(size, size);  // neutral background at 0
  constexpr int ss = 3;                // supersampling grid
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      int hit = 0;
      for (int sy = 0; sy < ss; ++sy)
        for (int sx = 0; sx < ss; ++sx) {
          const double px = x + (sx + 0.5) / ss;
          const double py = y + (sy + 0.5) / ss;
          if (inside_shape(shape, spec, px, py)) ++hit;
        }
      if (hit == 0) continue;
      const double cover = static_cast<double>(hit) / (ss * ss);
      const Index p = static_cast<Index>(y) * size + x;
      for (int c = 0; c < 3; ++c) im.chw(c, p) = cover * rgb[c];
    }
  return im;
}

const char* kArticles[] = {"a", "the"};
const char* kPreps[] = {"on", "over"};
const char* kBackgrounds[] = {"gray", "grey", "plain"};

std::string make_caption(const std::string& color, const std::string& shape,
                         Rng& rng) {
  std::string s;
  s += kArticles[rng.integer(2)];
  s += " " + color + " " + shape + " ";
  s += kPreps[rng.integer(2)];
  s += " a ";
  s += kBackgrounds[rng.integer(3)];
  s += " background";
  return s;
}

}  // namespace

Dataset generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  Dataset ds;
  ds.image_size = cfg.image_size;
  ds.num_colors = static_cast<int>(cfg.colors.size());
  ds.num_shapes = static_cast<int>(cfg.shapes.size());
  const std::uint64_t base = derive_seed(cfg.seed, "synthetic");

  for (std::size_t ci = 0; ci < cfg.colors.size(); ++ci)
    for (std::size_t si = 0; si < cfg.shapes.size(); ++si) {
      const int class_id = static_cast<int>(ci * cfg.shapes.size() + si);
      for (int k = 0; k < cfg.samples_per_class; ++k) {
        // per-sample seed: stable under reordering or parallel generation
        Rng rng(splitmix64(base + static_cast<std::uint64_t>(class_id) * 1000003ULL +
                           static_cast<std::uint64_t>(k)));
        ShapeSpec spec;
        spec.cx = cfg.image_size * rng.uniform(0.38, 0.62);
        spec.cy = cfg.image_size * rng.uniform(0.38, 0.62);
        spec.r = cfg.image_size * rng.uniform(0.26, 0.38);
        Sample s;
        s.image = raster(cfg.shapes[si], cfg.colors[ci].second, cfg.image_size,
                         spec);
        s.caption = make_caption(cfg.colors[ci].first, cfg.shapes[si], rng);
        s.class_id = class_id;
        ds.samples.push_back(std::move(s));
      }
    }
  return ds;
}

bool color_dominant(const Image& image, const std::string& color_name) {
  const double r = image.chw.row(0).mean();
  const double g = image.chw.row(1).mean();
  const double b = image.chw.row(2).mean();
  if (color_name == "red") return r > g && r > b;
  if (color_name == "green") return g > r && g > b;
  if (color_name == "blue") return b > r && b > g;
  if (color_name == "yellow") return r > b && g > b;  // blue strictly smallest
  return false;
}

std::string caption_color_word(const std::string& caption,
                               const SynthConfig& cfg) {
  for (const auto& tok : vse::split_tokens(caption))
    for (const auto& [name, rgb] : cfg.colors)
      if (tok == name) return name;
  return {};
}

Dataset load_manifest(const std::string& manifest_path, int image_size) {
  std::ifstream in(manifest_path);
  if (!in) throw MissingImage("manifest not found: " + manifest_path);
  const fs::path root = fs::path(manifest_path).parent_path();

  Dataset ds;
  ds.image_size = image_size;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw MalformedLine("manifest line " + std::to_string(line_no) +
                          ": missing TAB separator");
    const std::string rel = line.substr(0, tab);
    const std::string caption = line.substr(tab + 1);
    if (rel.empty() || caption.empty())
      throw MalformedLine("manifest line " + std::to_string(line_no) +
                          ": empty path or caption");
    const fs::path img_path = root / rel;
    if (!fs::exists(img_path))
      throw MissingImage("manifest line " + std::to_string(line_no) +
                         ": missing image " + img_path.string());
    Sample s;
    s.image = io::resize_bilinear(io::read_png(img_path.string()), image_size,
                                  image_size);
    s.caption = caption;
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

std::string write_manifest(const Dataset& dataset, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "images");
  const fs::path manifest = fs::path(dir) / "manifest.tsv";
  std::ofstream out(manifest);
  if (!out) throw CorruptFile("cannot write manifest under " + dir);
  char name[64];
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    std::snprintf(name, sizeof(name), "images/sample_%05zu.png", i);
    io::write_png((fs::path(dir) / name).string(), dataset.samples[i].image);
    out << name << '\t' << dataset.samples[i].caption << '\n';
  }
  return manifest.string();
}

}  // namespace textcanvas::data
