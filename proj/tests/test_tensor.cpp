#include <doctest.h>

#include <random>

#include "loco/tensor.hpp"

using namespace loco;

namespace {

Batch<float> one_pair(Index h, Index w, Index mh, Index mw, Label fill = 0) {
  Batch<float> b;
  b.labeled.push_back({Image<float>(3, 1, h, w), Mask(1, mh, mw, fill)});
  return b;
}

}  // namespace

TEST_CASE("validate accepts a zero image with an all-zero mask") {
  const auto b = one_pair(16, 16, 16, 16);
  CHECK(&validate(b, 3) == &b);
}

TEST_CASE("validate rejects a label equal to the class count") {
  const auto b = one_pair(16, 16, 16, 16, 3);
  CHECK_THROWS_AS(validate(b, 3), DomainError);
}

TEST_CASE("validate accepts ignore labels") {
  const auto b = one_pair(16, 16, 16, 16, kIgnore);
  CHECK_NOTHROW(validate(b, 3));
}

TEST_CASE("validate names the mismatched mask") {
  const auto b = one_pair(32, 32, 16, 16);
  try {
    validate(b, 3);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("labeled[0].mask") != std::string::npos);
  }
}

TEST_CASE("validate rejects out-of-range pixels and unlabeled shape drift") {
  auto b = one_pair(16, 16, 16, 16);
  b.labeled[0].image.data(0, 5) = 1.5f;
  CHECK_THROWS_AS(validate(b, 3), DomainError);
  b.labeled[0].image.data(0, 5) = 0.5f;
  b.unlabeled.push_back(Image<float>(3, 1, 8, 8));
  CHECK_THROWS_AS(validate(b, 3), ShapeError);
  b.labeled.clear();
  CHECK_THROWS_AS(validate(b, 3), ShapeError);
}

TEST_CASE("softmax columns sum to one and argmax prefers the lowest index on ties") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 4.0);
  Tensor<double> logits(4, 2, 5, 5);
  for (Index i = 0; i < logits.data.size(); ++i) logits.data.data()[i] = n(rng);
  const auto p = softmax(logits);
  for (Index c = 0; c < p.pixels(); ++c) CHECK(p.data.col(c).sum() == doctest::Approx(1.0).epsilon(1e-12));

  Tensor<double> tie(3, 1, 1, 2);
  tie.data << 0.4, 0.2, 0.4, 0.4, 0.2, 0.4;
  const auto am = argmax(tie);
  CHECK(am.values(0) == 0);
  CHECK(am.values(1) == 1);
}

TEST_CASE("concat and slice round-trip images and labels") {
  Tensor<float> a = Tensor<float>::constant(2, 1, 3, 4, 1.f);
  Tensor<float> b = Tensor<float>::constant(2, 2, 3, 4, 2.f);
  const auto ab = concat_batch(std::vector<const Tensor<float>*>{&a, &b});
  CHECK(ab.count == 3);
  CHECK(slice_batch(ab, 1, 2).data == b.data);
  CHECK(slice_batch(ab, 0, 1).data == a.data);

  LabelMap la(1, 3, 4, 1), lb(2, 3, 4, 2);
  const auto lab = concat_labels({&la, &lb});
  CHECK(slice_labels(lab, 1, 2) == lb);
  CHECK(slice_labels(lab, 0, 1) == la);

  Tensor<float> c(2, 1, 4, 4);
  CHECK_THROWS_AS(concat_batch(std::vector<const Tensor<float>*>{&a, &c}), ShapeError);
}

TEST_CASE("pixel addressing is image-major then row-major") {
  Tensor<int> t(1, 2, 3, 4);
  t.at(0, 1, 2, 3) = 7;
  CHECK(t.data(0, 1 * 12 + 2 * 4 + 3) == 7);
  LabelMap m(2, 3, 4);
  m.at(1, 0, 2) = 5;
  CHECK(m.values(12 + 2) == 5);
}
