#include <doctest.h>

#include <unistd.h>

#include <array>
#include <filesystem>
#include <fstream>
#include <set>

#include "loco/datasets.hpp"
#include "loco/lcc.hpp"
#include "loco/png_io.hpp"

using namespace loco;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("loco_test_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

double accuracy(const Dataset& data, double delta) {
  Index right = 0, total = 0;
  for (const auto& s : data) {
    right += (threshold_classify(s.image, delta).values == s.mask.values).count();
    total += s.mask.pixels();
  }
  return double(right) / double(total);
}

void write_rgb(const fs::path& file, std::uint32_t w, std::uint32_t h, std::array<std::uint8_t, 3> rgb) {
  png::Raster r{w, h, 3, {}};
  for (std::uint32_t i = 0; i < w * h; ++i) r.pixels.insert(r.pixels.end(), rgb.begin(), rgb.end());
  png::write(file, r);
}

}  // namespace

TEST_CASE("generation is deterministic and indexable") {
  SynthConfig cfg;
  cfg.seed = 5;
  const auto a = generate(cfg, 6);
  const auto b = generate(cfg, 6);
  REQUIRE(a.size() == 6);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].name == b[i].name);
    CHECK(a[i].image.data == b[i].image.data);
    CHECK(a[i].mask == b[i].mask);
  }
  const auto tail = generate(cfg, 2, 4);
  CHECK(tail[0].image.data == a[4].image.data);
  CHECK(tail[1].mask == a[5].mask);
  cfg.seed = 6;
  CHECK(generate(cfg, 1)[0].image.data != a[0].image.data);
}

TEST_CASE("images lie in [0, 1] and masks use exactly the class labels") {
  SynthConfig cfg;
  cfg.seed = 1;
  std::set<int> seen;
  for (const auto& s : generate(cfg, 40)) {
    CHECK(s.image.data.minCoeff() >= 0.f);
    CHECK(s.image.data.maxCoeff() <= 1.f);
    CHECK(s.image.height == 64);
    for (Index p = 0; p < s.mask.pixels(); ++p) seen.insert(s.mask.values(p));
  }
  CHECK(seen == std::set<int>{0, 1, 2});
}

TEST_CASE("maximal contrast without noise is separable by intensity alone") {
  SynthConfig cfg;
  cfg.contrast_delta = 1.0;
  cfg.noise_sigma = 0.0;
  cfg.texture_amplitude = 0.0;
  cfg.seed = 2;
  CHECK(accuracy(generate(cfg, 30), 1.0) == 1.0);
}

TEST_CASE("lower contrast lowers threshold-classifier accuracy") {
  SynthConfig cfg;
  cfg.seed = 3;
  double previous = 1.1;
  for (double delta : {0.4, 0.2, 0.1, 0.05, 0.02}) {
    cfg.contrast_delta = delta;
    const double acc = accuracy(generate(cfg, 30), delta);
    CAPTURE(delta);
    CHECK(acc < previous);
    previous = acc;
  }
}

TEST_CASE("benign pixel share tracks the minority fraction") {
  SynthConfig cfg;
  cfg.minority_fraction = 0.05;
  cfg.seed = 9;
  Index benign = 0, total = 0;
  for (const auto& s : generate(cfg, 100)) {
    benign += (s.mask.values == 1).count();
    total += s.mask.pixels();
  }
  const double share = double(benign) / double(total);
  CHECK(share >= 0.03);
  CHECK(share <= 0.07);
}

TEST_CASE("every tumour image has boundary pixels") {
  SynthConfig cfg;
  cfg.seed = 4;
  LccConfig lcc;
  for (const auto& s : generate(cfg, 30)) {
    if ((s.mask.values == 0).all()) continue;
    CHECK(boundary_mask(s.mask, lcc).any());
  }
}

TEST_CASE("infeasible fractions are generation errors") {
  SynthConfig cfg;
  cfg.minority_fraction = 0.9;
  CHECK_THROWS_AS(generate(cfg, 1), DataError);
  cfg.minority_fraction = 0.05;
  cfg.malignant_fraction = 1.2;
  CHECK_THROWS_AS(generate(cfg, 1), DataError);
  cfg.malignant_fraction = 0.1;
  CHECK_THROWS_AS(generate(cfg, 0), DataError);
}

TEST_CASE("save and load round-trip") {
  TempDir dir("roundtrip");
  SynthConfig cfg;
  cfg.image_size = 16;
  cfg.minority_fraction = 0.02;
  cfg.malignant_fraction = 0.02;
  cfg.max_blobs = 1;
  const auto data = generate(cfg, 3);
  save_folder(data, dir.path);
  const auto loaded = load_folder(dir.path / "images", dir.path / "masks");
  REQUIRE(loaded.samples.size() == 3);
  CHECK(loaded.warnings.empty());
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(loaded.samples[i].name == data[i].name);
    CHECK(loaded.samples[i].mask == data[i].mask);
    CHECK((loaded.samples[i].image.data - data[i].image.data).cwiseAbs().maxCoeff() <= 0.5f / 255.f + 1e-6f);
  }
}

TEST_CASE("folder ingestion: empty, sorted, orphans and palettes") {
  TempDir dir("ingest");
  const auto images = dir.path / "images", masks = dir.path / "masks";
  CHECK(load_folder(images, masks).samples.empty());
  fs::create_directories(images);
  fs::create_directories(masks);
  CHECK(load_folder(images, masks).samples.empty());

  for (const char* name : {"c", "a", "b"}) {
    write_rgb(images / (std::string(name) + ".png"), 8, 8, {10, 20, 30});
    write_rgb(masks / (std::string(name) + ".png"), 8, 8, {255, 255, 255});
  }
  write_rgb(images / "orphan.png", 8, 8, {0, 0, 0});
  const auto r = load_folder(images, masks, Palette::binary());
  REQUIRE(r.samples.size() == 3);
  CHECK(r.samples[0].name == "a");
  CHECK(r.samples[2].name == "c");
  CHECK((r.samples[1].mask.values == 1).all());
  CHECK(r.warnings.size() == 1);
  CHECK(r.warnings[0].find("orphan") != std::string::npos);

  write_rgb(masks / "b.png", 8, 8, {12, 200, 7});
  try {
    load_folder(images, masks, Palette::binary());
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("(12, 200, 7)") != std::string::npos);
  }
}

TEST_CASE("manifest round-trip") {
  TempDir dir("manifest");
  const std::vector<ManifestEntry> entries{{"a", "train"}, {"b", "val"}};
  write_manifest(dir.path / "manifest.json", entries, R"({"seed": 3})");
  const auto back = read_manifest(dir.path / "manifest.json");
  REQUIRE(back.size() == 2);
  CHECK(back[1].name == "b");
  CHECK(back[1].split == "val");
  CHECK_THROWS_AS(read_manifest(dir.path / "missing.json"), DataError);
}

TEST_CASE("split sizes, disjointness and determinism") {
  auto check = [](Index n, double f, Index lab) {
    SplitSpec spec{f, 11, SplitOrder::random};
    const auto s = split(n, spec);
    CHECK(Index(s.labeled.size()) == lab);
    CHECK(Index(s.unlabeled.size()) == n - lab);
    std::set<Index> all(s.labeled.begin(), s.labeled.end());
    all.insert(s.unlabeled.begin(), s.unlabeled.end());
    CHECK(Index(all.size()) == n);
    CHECK(*all.rbegin() == n - 1);
    const auto again = split(n, spec);
    CHECK(again.labeled == s.labeled);
  };
  check(10, 0.5, 5);
  check(5, 0.1, 1);
  check(200, 0.1, 20);
  check(3, 0.9, 2);

  const auto chrono = split(10, {0.3, 0, SplitOrder::chronological});
  CHECK(chrono.labeled == std::vector<Index>{0, 1, 2});
  CHECK(split(50, {0.2, 1, SplitOrder::random}).labeled != split(50, {0.2, 2, SplitOrder::random}).labeled);
  CHECK_THROWS_AS(split(1, {}), DataError);
}
