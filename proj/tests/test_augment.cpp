#include <doctest.h>

#include <random>

#include "loco/augment.hpp"

using namespace loco;

namespace {

Image<float> random_image(std::mt19937_64& rng, Index h, Index w) {
  std::uniform_real_distribution<float> u(0.f, 1.f);
  Image<float> img(3, 1, h, w);
  for (Index i = 0; i < img.data.size(); ++i) img.data.data()[i] = u(rng);
  return img;
}

Mask random_mask(std::mt19937_64& rng, Index h, Index w) {
  std::uniform_int_distribution<int> c(0, 2);
  Mask m(1, h, w);
  for (Index p = 0; p < m.pixels(); ++p) m.values(p) = Label(c(rng));
  return m;
}

StrongConfig no_intensity() {
  StrongConfig s;
  s.jitter_prob = 0.0;
  s.grayscale_prob = 0.0;
  s.blur_prob = 0.0;
  s.cutmix_prob = 0.0;
  return s;
}

}  // namespace

TEST_CASE("unit scale without flip is the identity view") {
  std::mt19937_64 rng(1);
  const auto img = random_image(rng, 16, 16);
  const auto mask = random_mask(rng, 16, 16);
  WeakConfig cfg{16, 16, 1.0, 1.0, 0.0};
  const auto v = weak_perturb(img, std::optional<Mask>(mask), 42, cfg);
  CHECK(v.image.data == img.data);
  CHECK(*v.mask == mask);
}

TEST_CASE("flipping twice restores the image") {
  std::mt19937_64 rng(2);
  const auto img = random_image(rng, 9, 13);
  CHECK(hflip(hflip(img)).data == img.data);
  WeakConfig cfg{9, 13, 1.0, 1.0, 1.0};
  const auto v = weak_perturb(img, std::optional<Mask>{}, 3, cfg);
  CHECK(v.geometry.flip);
  CHECK(v.image.data == hflip(img).data);
}

TEST_CASE("weak views are deterministic, sized to the crop and replayable") {
  std::mt19937_64 rng(3);
  WeakConfig cfg;
  cfg.crop_h = cfg.crop_w = 24;
  for (int trial = 0; trial < 40; ++trial) {
    const auto img = random_image(rng, 16 + trial % 20, 20 + trial % 7);
    const auto mask = random_mask(rng, img.height, img.width);
    const std::uint64_t seed = 1000 + std::uint64_t(trial);
    const auto a = weak_perturb(img, std::optional<Mask>(mask), seed, cfg);
    const auto b = weak_perturb(img, std::optional<Mask>(mask), seed, cfg);
    CHECK(a.image.data == b.image.data);
    CHECK(*a.mask == *b.mask);
    CHECK(a.geometry == b.geometry);
    CHECK(a.image.height == 24);
    CHECK(a.image.width == 24);
    CHECK(replay(a.geometry, img).data == a.image.data);
    CHECK(replay(a.geometry, mask) == *a.mask);
  }
}

TEST_CASE("padding is zero in the image and ignore in the mask") {
  std::mt19937_64 rng(4);
  const auto img = random_image(rng, 10, 10);
  const auto mask = random_mask(rng, 10, 10);
  WeakConfig cfg{16, 16, 1.0, 1.0, 0.0};
  const auto v = weak_perturb(img, std::optional<Mask>(mask), 7, cfg);
  for (Index y = 0; y < 16; ++y)
    for (Index x = 0; x < 16; ++x) {
      const bool inside = y < 10 && x < 10;
      CHECK((v.mask->at(0, y, x) == kIgnore) == !inside);
      if (!inside) CHECK(v.image.data.col(y * 16 + x).isZero());
      else CHECK(v.mask->at(0, y, x) == mask.at(0, y, x));
    }
}

TEST_CASE("image and mask share geometry under scaling") {
  // a mask derived from the image by thresholding stays consistent where the
  // image is piecewise constant away from edges
  Image<float> img(3, 1, 16, 16);
  Mask mask(1, 16, 16, 0);
  for (Index y = 0; y < 16; ++y)
    for (Index x = 8; x < 16; ++x) {
      img.data.col(y * 16 + x).setOnes();
      mask.at(0, y, x) = 1;
    }
  WeakConfig cfg{16, 16, 0.5, 2.0, 0.5};
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto v = weak_perturb(img, std::optional<Mask>(mask), seed, cfg);
    for (Index p = 0; p < 256; ++p) {
      const Label l = v.mask->values(p);
      if (l == kIgnore) continue;
      const float g = v.image.data(0, p);
      if (g == 0.f) CHECK(l == 0);
      if (g == 1.f) CHECK(l == 1);
    }
  }
}

TEST_CASE("mask shape mismatch is rejected") {
  std::mt19937_64 rng(5);
  const auto img = random_image(rng, 8, 8);
  CHECK_THROWS_AS(weak_perturb(img, std::optional<Mask>(Mask(1, 8, 9)), 1, WeakConfig{}), ShapeError);
}

TEST_CASE("strong perturbation with everything off is the identity") {
  std::mt19937_64 rng(6);
  WeakView<float> view;
  view.image = random_image(rng, 12, 12);
  auto cfg = no_intensity();
  cfg.cutmix_prob = 1.0;
  PseudoLabelMap own(1, 12, 12, 1);
  const auto r = strong_perturb<float>(view, std::optional<PseudoLabelMap>(own), nullptr, nullptr,
                                       std::nullopt, 9, cfg);
  CHECK(r.view.image.data == view.image.data);
  CHECK(*r.pseudo == own);
  CHECK_FALSE(r.view.cutmix_box.has_value());

  cfg.jitter_prob = 1.0;
  cfg.brightness = cfg.contrast = cfg.saturation = cfg.hue = 0.0;
  cfg.cutmix_prob = 0.0;
  WeakView<float> partner;
  partner.image = random_image(rng, 12, 12);
  const auto r2 = strong_perturb(view, std::optional<PseudoLabelMap>(own), &partner, &own, Index(1), 9, cfg);
  CHECK(r2.view.image.data == view.image.data);
}

TEST_CASE("intensity perturbation stays in range and is seeded") {
  std::mt19937_64 rng(7);
  const auto img = random_image(rng, 16, 16);
  StrongConfig cfg;
  cfg.jitter_prob = cfg.blur_prob = 1.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto a = intensity_perturb(img, seed, cfg);
    CHECK(a.data.minCoeff() >= 0.f);
    CHECK(a.data.maxCoeff() <= 1.f);
    CHECK(a.data == intensity_perturb(img, seed, cfg).data);
  }
}

TEST_CASE("CutMix over the whole image returns the partner") {
  std::mt19937_64 rng(8);
  Image<float> img = random_image(rng, 8, 8);
  const Image<float> partner = random_image(rng, 8, 8);
  std::optional<PseudoLabelMap> own = PseudoLabelMap(1, 8, 8, 0);
  const PseudoLabelMap theirs(1, 8, 8, 2);
  apply_cutmix(img, own, partner, &theirs, CutMixBox{0, 0, 8, 8});
  CHECK(img.data == partner.data);
  CHECK(*own == theirs);
}

TEST_CASE("CutMix over the left half mixes labels pixel by pixel") {
  std::mt19937_64 rng(9);
  Image<float> img = random_image(rng, 6, 10);
  const Image<float> before = img;
  const Image<float> partner = random_image(rng, 6, 10);
  const Mask own_m = random_mask(rng, 6, 10), their_m = random_mask(rng, 6, 10);
  std::optional<PseudoLabelMap> own = own_m;
  apply_cutmix(img, own, partner, &their_m, CutMixBox{0, 0, 6, 5});
  for (Index y = 0; y < 6; ++y)
    for (Index x = 0; x < 10; ++x) {
      const Index p = y * 10 + x;
      const bool left = x < 5;
      CHECK(own->values(p) == (left ? their_m.values(p) : own_m.values(p)));
      CHECK(img.data.col(p) == (left ? partner.data.col(p) : before.data.col(p)));
    }
}

TEST_CASE("strong perturbation records its box and only changes labels inside it") {
  std::mt19937_64 rng(10);
  auto cfg = no_intensity();
  cfg.cutmix_prob = 1.0;
  WeakView<float> view, partner;
  view.image = random_image(rng, 16, 16);
  partner.image = random_image(rng, 16, 16);
  const auto own = random_mask(rng, 16, 16), theirs = random_mask(rng, 16, 16);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto r = strong_perturb(view, std::optional<PseudoLabelMap>(own), &partner, &theirs,
                                  Index(3), seed, cfg);
    REQUIRE(r.view.cutmix_box.has_value());
    CHECK(*r.view.source_index == 3);
    const auto box = *r.view.cutmix_box;
    const double area = double(box.h * box.w) / 256.0;
    CHECK(area >= 0.2);
    CHECK(area <= 0.56);
    for (Index y = 0; y < 16; ++y)
      for (Index x = 0; x < 16; ++x) {
        const Index p = y * 16 + x;
        const bool in = box.contains(y, x);
        CHECK(r.pseudo->values(p) == (in ? theirs.values(p) : own.values(p)));
        CHECK(r.view.image.data.col(p) == (in ? partner.image.data.col(p) : view.image.data.col(p)));
      }
  }
  WeakView<float> small;
  small.image = random_image(rng, 8, 8);
  CHECK_THROWS_AS(strong_perturb(view, std::optional<PseudoLabelMap>(own), &small, &theirs,
                                 Index(1), 1, cfg),
                  ShapeError);
}
