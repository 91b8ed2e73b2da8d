#include "loco/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>

#include <json.hpp>

#include "loco/png_io.hpp"
#include "loco/rng.hpp"

namespace loco {
namespace fs = std::filesystem;

namespace {

struct Blob {
  double cy, cx, a, b, theta;
  Label cls;
};

// Radius of the circle enclosing blob + soft fringe.
double reach(const Blob& b, double fringe) { return std::max(b.a, b.b) + fringe; }

// Normalised elliptic radius; <= 1 inside.
double elliptic_radius(const Blob& b, double y, double x) {
  const double dy = y - b.cy, dx = x - b.cx;
  const double c = std::cos(b.theta), s = std::sin(b.theta);
  const double u = (dx * c + dy * s) / b.a;
  const double v = (-dx * s + dy * c) / b.b;
  return std::sqrt(u * u + v * v);
}

constexpr double kMinAspect = 0.6;
constexpr double kAreaJitter = 0.4;
constexpr double kFringe = 2.0;  // soft edge kept clear of other blobs, in softness units
constexpr int kLayoutAttempts = 50;

void check_feasible(const SynthConfig& cfg, double fraction, const char* what) {
  if (fraction < 0.0 || fraction >= 1.0)
    throw DataError(std::string(what) + " must lie in [0, 1)");
  if (fraction == 0.0 || cfg.max_blobs == 0) return;
  const double size = double(cfg.image_size);
  const double mean_blobs = 0.5 * double(cfg.max_blobs);
  const double area = fraction * size * size / mean_blobs * (1.0 + kAreaJitter);
  const double major = std::sqrt(area / (std::numbers::pi * kMinAspect));
  const double fringe = kFringe * cfg.boundary_softness + 1.0;
  if (2.0 * (major + fringe) > size)
    throw DataError(std::string("infeasible ") + what + " " + std::to_string(fraction) +
                    ": blobs of that size cannot fit a " + std::to_string(cfg.image_size) +
                    "px image");
}

std::optional<std::vector<Blob>> try_layout(const SynthConfig& cfg, Rng& rng) {
  const double size = double(cfg.image_size);
  const double fringe = kFringe * cfg.boundary_softness + 1.0;
  const double mean_blobs = 0.5 * double(cfg.max_blobs);
  std::vector<Blob> todo;
  const std::pair<Label, double> kinds[] = {{Label(1), cfg.minority_fraction},
                                            {Label(2), cfg.malignant_fraction}};
  for (const auto& [cls, fraction] : kinds) {
    if (cls >= cfg.class_count || fraction <= 0.0) continue;
    const Index n = std::uniform_int_distribution<Index>(0, cfg.max_blobs)(rng);
    for (Index i = 0; i < n; ++i) {
      const double area = fraction * size * size / mean_blobs *
                          uniform(rng, 1.0 - kAreaJitter, 1.0 + kAreaJitter);
      const double aspect = uniform(rng, kMinAspect, 1.0);
      Blob blob{};
      blob.cls = cls;
      blob.a = std::sqrt(area / (std::numbers::pi * aspect));
      blob.b = blob.a * aspect;
      blob.theta = uniform(rng, 0.0, std::numbers::pi);
      if (2.0 * reach(blob, fringe) > size) return std::nullopt;
      todo.push_back(blob);
    }
  }
  std::stable_sort(todo.begin(), todo.end(),
                   [](const Blob& x, const Blob& y) { return x.a > y.a; });
  std::vector<Blob> blobs;
  for (Blob blob : todo) {
    const double r = reach(blob, fringe);
    bool placed = false;
    for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
      blob.cy = uniform(rng, r, size - r);
      blob.cx = uniform(rng, r, size - r);
      placed = std::all_of(blobs.begin(), blobs.end(), [&](const Blob& o) {
        return std::hypot(o.cy - blob.cy, o.cx - blob.cx) >= r + reach(o, fringe);
      });
    }
    if (!placed) return std::nullopt;
    blobs.push_back(blob);
  }
  return blobs;
}

std::vector<Blob> place_blobs(const SynthConfig& cfg, Rng& rng) {
  for (int attempt = 0; attempt < kLayoutAttempts; ++attempt)
    if (auto blobs = try_layout(cfg, rng)) return std::move(*blobs);
  throw DataError("cannot place non-overlapping blobs; lower minority_fraction, "
                  "malignant_fraction or max_blobs");
}

struct Wave {
  double ky, kx, phase;
};

Sample render(const SynthConfig& cfg, Index index) {
  Rng rng(derive_seed(cfg.seed, {0x5e7, std::uint64_t(index)}));
  const Index n = cfg.image_size;
  const auto blobs = place_blobs(cfg, rng);

  std::vector<Wave> waves(4);
  for (auto& w : waves) {
    const double wavelength = uniform(rng, 16.0, 48.0);
    const double dir = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    const double k = 2.0 * std::numbers::pi / wavelength;
    w = {k * std::sin(dir), k * std::cos(dir), uniform(rng, 0.0, 2.0 * std::numbers::pi)};
  }
  std::normal_distribution<double> noise(0.0, 1.0);

  Sample s;
  s.name = "synth_" + std::to_string(index);
  s.image = Image<float>(3, 1, n, n);
  s.mask = Mask(1, n, n, 0);
  for (Index y = 0; y < n; ++y)
    for (Index x = 0; x < n; ++x) {
      const double py = double(y) + 0.5, px = double(x) + 0.5;
      double shift[3] = {0.0, 0.0, 0.0};
      for (const auto& b : blobs) {
        const double r = elliptic_radius(b, py, px);
        double alpha;
        if (cfg.boundary_softness > 0.0) {
          const double d = (r - 1.0) * std::sqrt(b.a * b.b);
          alpha = 0.5 * (1.0 - std::tanh(d / cfg.boundary_softness));
        } else {
          alpha = r <= 1.0 ? 1.0 : 0.0;
        }
        if (r <= 1.0) s.mask.at(0, y, x) = b.cls;
        const int ch = b.cls == 1 ? 1 : 0;
        shift[ch] += alpha * cfg.contrast_delta * (1.0 - kSynthBase[ch]);
      }
      double texture = 0.0;
      for (const auto& w : waves) texture += std::sin(w.ky * py + w.kx * px + w.phase);
      texture *= cfg.texture_amplitude / 2.0;
      for (int c = 0; c < 3; ++c) {
        double v = kSynthBase[c] + shift[c] + texture;
        if (cfg.noise_sigma > 0.0) v += cfg.noise_sigma * noise(rng);
        s.image.at(c, 0, y, x) = float(std::clamp(v, 0.0, 1.0));
      }
    }
  return s;
}

}  // namespace

Dataset generate(const SynthConfig& config, Index count, Index first_index) {
  if (count < 1) throw DataError("generate: count must be at least 1");
  if (config.image_size < 8) throw DataError("generate: image_size must be at least 8");
  if (config.class_count < 2 || config.class_count > 3)
    throw DataError("generate: class_count must be 2 or 3");
  if (config.contrast_delta < 0.0 || config.contrast_delta > 1.0)
    throw DataError("generate: contrast_delta must lie in [0, 1]");
  check_feasible(config, config.minority_fraction, "minority_fraction");
  if (config.class_count > 2) check_feasible(config, config.malignant_fraction, "malignant_fraction");
  Dataset out;
  out.reserve(std::size_t(count));
  for (Index i = 0; i < count; ++i) out.push_back(render(config, first_index + i));
  return out;
}

Mask threshold_classify(const Image<float>& image, double contrast_delta) {
  Mask m(image.count, image.height, image.width, 0);
  const double half = 0.5 * contrast_delta;
  for (Index p = 0; p < image.pixels(); ++p) {
    const double red = (double(image.data(0, p)) - kSynthBase[0]) / (1.0 - kSynthBase[0]);
    const double green = (double(image.data(1, p)) - kSynthBase[1]) / (1.0 - kSynthBase[1]);
    if (red >= half) m.values(p) = 2;
    else if (green >= half) m.values(p) = 1;
  }
  return m;
}

// ---------------------------------------------------------------------------

Palette Palette::binary() {
  Palette p;
  p.colors[key(0, 0, 0)] = 0;
  p.colors[key(255, 255, 255)] = 1;
  return p;
}

namespace {

bool is_png(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png";
}

std::map<std::string, fs::path> list_pngs(const fs::path& dir) {
  std::map<std::string, fs::path> out;
  if (!fs::exists(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && is_png(e.path())) out[e.path().stem().string()] = e.path();
  return out;
}

Image<float> to_image(const png::Raster& r) {
  Image<float> img(3, 1, r.height, r.width);
  for (Index y = 0; y < Index(r.height); ++y)
    for (Index x = 0; x < Index(r.width); ++x)
      for (Index c = 0; c < 3; ++c) {
        const auto src = (y * r.width + x) * r.channels + (r.channels == 3 ? c : 0);
        img.at(c, 0, y, x) = float(r.pixels[src]) / 255.0f;
      }
  return img;
}

Mask to_mask(const png::Raster& r, const Palette& palette, const fs::path& file) {
  Mask m(1, r.height, r.width, 0);
  for (Index p = 0; p < m.pixels(); ++p) {
    const std::uint8_t* px = r.pixels.data() + p * r.channels;
    const std::uint8_t red = px[0];
    const std::uint8_t green = r.channels == 3 ? px[1] : px[0];
    const std::uint8_t blue = r.channels == 3 ? px[2] : px[0];
    if (palette.empty()) {
      if (r.channels == 3 && (red != green || green != blue))
        throw DataError(file.string() + ": colour mask needs a palette");
      m.values(p) = red;
      continue;
    }
    const auto it = palette.colors.find(Palette::key(red, green, blue));
    if (it == palette.colors.end())
      throw DataError(file.string() + ": unmapped mask colour (" + std::to_string(red) + ", " +
                      std::to_string(green) + ", " + std::to_string(blue) + ")");
    m.values(p) = it->second;
  }
  return m;
}

}  // namespace

LoadResult load_folder(const fs::path& images_dir, const fs::path& masks_dir,
                       const Palette& palette) {
  LoadResult out;
  const auto images = list_pngs(images_dir);
  const auto masks = list_pngs(masks_dir);
  for (const auto& [stem, path] : images) {
    const auto m = masks.find(stem);
    if (m == masks.end()) {
      out.warnings.push_back("image without mask: " + path.string());
      continue;
    }
    Sample s;
    s.name = stem;
    s.image = to_image(png::read(path));
    s.mask = to_mask(png::read(m->second), palette, m->second);
    if (s.mask.height != s.image.height || s.mask.width != s.image.width)
      throw DataError(m->second.string() + ": mask size differs from its image");
    out.samples.push_back(std::move(s));
  }
  for (const auto& [stem, path] : masks)
    if (!images.count(stem)) out.warnings.push_back("mask without image: " + path.string());
  return out;
}

void save_folder(const Dataset& data, const fs::path& root) {
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");
  for (const auto& s : data) {
    png::Raster img{std::uint32_t(s.image.width), std::uint32_t(s.image.height), 3, {}};
    img.pixels.resize(std::size_t(s.image.plane()) * 3);
    for (Index p = 0; p < s.image.plane(); ++p)
      for (Index c = 0; c < 3; ++c)
        img.pixels[std::size_t(p * 3 + c)] = std::uint8_t(
            std::lround(std::clamp(double(s.image.data(c, p)), 0.0, 1.0) * 255.0));
    png::write(root / "images" / (s.name + ".png"), img);

    png::Raster mask{std::uint32_t(s.mask.width), std::uint32_t(s.mask.height), 1, {}};
    mask.pixels.assign(s.mask.values.data(), s.mask.values.data() + s.mask.pixels());
    png::write(root / "masks" / (s.name + ".png"), mask);
  }
}

void write_manifest(const fs::path& file, const std::vector<ManifestEntry>& entries,
                    const std::string& config_json) {
  nlohmann::json j;
  j["config"] = config_json.empty() ? nlohmann::json::object() : nlohmann::json::parse(config_json);
  j["files"] = nlohmann::json::array();
  for (const auto& e : entries) j["files"].push_back({{"name", e.name}, {"split", e.split}});
  std::ofstream(file) << j.dump(2) << "\n";
}

std::vector<ManifestEntry> read_manifest(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot open manifest " + file.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(file.string() + ": " + e.what());
  }
  std::vector<ManifestEntry> out;
  for (const auto& f : j.value("files", nlohmann::json::array()))
    out.push_back({f.at("name").get<std::string>(), f.value("split", std::string("train"))});
  return out;
}

// ---------------------------------------------------------------------------

Split split(Index dataset_size, const SplitSpec& spec) {
  if (dataset_size < 2) throw DataError("split: dataset needs at least 2 items");
  if (!(spec.labeled_fraction > 0.0 && spec.labeled_fraction < 1.0))
    throw DataError("split: labeled_fraction must lie in (0, 1)");
  const Index labeled = std::clamp<Index>(
      Index(std::lround(spec.labeled_fraction * double(dataset_size))), 1, dataset_size - 1);
  std::vector<Index> order(static_cast<std::size_t>(dataset_size));
  std::iota(order.begin(), order.end(), Index(0));
  if (spec.ordering == SplitOrder::random) {
    Rng rng(derive_seed(spec.split_seed, {0x5b1}));
    std::shuffle(order.begin(), order.end(), rng);
  }
  Split s;
  s.labeled.assign(order.begin(), order.begin() + labeled);
  s.unlabeled.assign(order.begin() + labeled, order.end());
  std::sort(s.labeled.begin(), s.labeled.end());
  std::sort(s.unlabeled.begin(), s.unlabeled.end());
  return s;
}

}  // namespace loco
