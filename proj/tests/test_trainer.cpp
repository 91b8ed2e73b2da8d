#include <doctest.h>

#include <random>

#include "loco/datasets.hpp"
#include "loco/trainer.hpp"

using namespace loco;

namespace {

Image<float> random_image(std::mt19937_64& rng, Index h, Index w) {
  std::uniform_real_distribution<float> u(0.f, 1.f);
  Image<float> img(3, 1, h, w);
  for (Index i = 0; i < img.data.size(); ++i) img.data.data()[i] = u(rng);
  return img;
}

// Two-class blocky mask with a little of every class.
Mask block_mask(Index h, Index w, Index shift) {
  Mask m(1, h, w, 0);
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      if (x >= w / 2) m.at(0, y, x) = 1;
      if (y >= h - 3 && x < 3 + shift) m.at(0, y, x) = 2;
    }
  return m;
}

Batch<float> random_batch(std::mt19937_64& rng, Index nl, Index nu, Index size) {
  Batch<float> b;
  for (Index i = 0; i < nl; ++i) b.labeled.push_back({random_image(rng, size, size), block_mask(size, size, i)});
  for (Index j = 0; j < nu; ++j) b.unlabeled.push_back(random_image(rng, size, size));
  return b;
}

TrainConfig small_config(const std::string& variant) {
  TrainConfig c;
  apply_variant(c, variant);
  c.crop_size = 16;
  c.embedding_dim = 8;
  c.neighborhood_h = 8;
  c.learning_rate = 0.01;
  c.seed = 3;
  return c;
}

std::unique_ptr<nn::SegModel<float>> tiny(std::uint64_t seed = 1) {
  return std::make_unique<nn::TinyNet<float>>(3, 3, 6, seed);
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max(1e-4, std::max(std::abs(a), std::abs(b)));
}

}  // namespace

TEST_CASE("supervised loss hand cases") {
  ProbMap<double> uniform = ProbMap<double>::constant(3, 2, 2, 2, 1.0 / 3.0);
  Mask m(2, 2, 2, 1);
  CHECK(supervised_loss(uniform, m) == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  ProbMap<double> onehot(3, 1, 1, 2);
  onehot.data << 1, 0, 0, 0, 0, 1;
  Mask right(1, 1, 2);
  right.values << 0, 2;
  CHECK(supervised_loss(onehot, right) == 0.0);
  CHECK(supervised_loss(uniform, Mask(2, 2, 2, kIgnore)) == 0.0);

  // an image without labels leaves the outer mean
  Mask half(2, 2, 2, kIgnore);
  half.values.head(4).setConstant(0);
  CHECK(supervised_loss(uniform, half) == doctest::Approx(std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("unsupervised loss keeps the full denominator") {
  ProbMap<double> uniform = ProbMap<double>::constant(3, 1, 2, 2, 1.0 / 3.0);
  CHECK(unsupervised_loss(uniform, PseudoLabelMap(1, 2, 2, kIgnore)) == 0.0);
  PseudoLabelMap half(1, 2, 2, kIgnore);
  half.values(0) = 1;
  half.values(3) = 2;
  CHECK(unsupervised_loss(uniform, half) == doctest::Approx(std::log(3.0) / 2).epsilon(1e-12));
  ProbMap<double> onehot = ProbMap<double>::zeros(3, 1, 2, 2);
  onehot.data.row(1).setOnes();
  CHECK(unsupervised_loss(onehot, PseudoLabelMap(1, 2, 2, 1)) == 0.0);
}

TEST_CASE("total loss weighting") {
  CHECK(total_loss(1, 0, 0, {}) == 1.0);
  CHECK(total_loss(1, 2, 3, {}) == doctest::Approx(2.3).epsilon(1e-15));
  CHECK(total_loss(1.5, 2, 3, {0.0, 0.0}) == 1.5);
  try {
    total_loss(1, std::nan(""), 0, {});
    FAIL("expected NumericFault");
  } catch (const NumericFault& e) {
    CHECK(e.where() == "L_u");
  }
}

TEST_CASE("end-to-end gradient of the total loss matches finite differences") {
  std::mt19937_64 rng(7);
  auto cfg = small_config("m7");
  cfg.k_percent = 50;
  cfg.embedding_dim = 4;
  nn::TinyNet<double> net(3, 3, 4, 5);
  Projector<double> proj(4, 4, 6);
  // random projector biases: no pixel embedding sits at the origin
  std::normal_distribution<double> g(0.0, 0.5);
  for (auto* p : proj.parameters())
    if (p->value.cols() == 1)
      for (Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = g(rng);

  StepInputs<double> in;
  in.labeled = random_image(rng, 8, 8).cast<double>();
  in.masks = block_mask(8, 8, 1);
  in.unlabeled = random_image(rng, 8, 8).cast<double>();
  in.pseudo = block_mask(8, 8, 2);
  for (Index p = 0; p < 64; p += 5) in.pseudo.values(p) = kIgnore;

  net.zero_grad();
  for (auto* p : proj.parameters()) p->zero_grad();
  const auto parts = loss_and_grad<double>(net, proj, in, cfg, true);
  CHECK(parts.l_sup > 0.0);
  CHECK(parts.l_u > 0.0);
  CHECK(parts.l_lcc > 0.0);
  CHECK(parts.lcc_entries > 0);

  auto loss = [&]() { return loss_and_grad<double>(net, proj, in, cfg, false).total; };
  const double eps = 1e-6;
  double worst = 0.0;
  std::vector<nn::Param<double>*> params = net.parameters();
  for (auto* p : proj.parameters()) params.push_back(p);
  for (auto* p : params) {
    const Planes<double> analytic = p->grad;
    for (Index i = 0; i < p->value.size(); ++i) {
      const double v = p->value.data()[i];
      p->value.data()[i] = v + eps;
      const double up = loss();
      p->value.data()[i] = v - eps;
      const double down = loss();
      p->value.data()[i] = v;
      worst = std::max(worst, rel_err((up - down) / (2 * eps), analytic.data()[i]));
    }
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("disabled components are exactly zero") {
  std::mt19937_64 rng(8);
  const auto batch = random_batch(rng, 2, 2, 16);
  for (const char* v : {"m1", "m2", "m3", "m4", "m5", "m6", "m7"}) {
    auto cfg = small_config(v);
    Trainer<float> t(cfg, tiny(), 10);
    const auto r = t.step(batch);
    CAPTURE(v);
    if (!cfg.use_unsup) CHECK(r.losses.l_u == 0.0);
    if (!cfg.use_lcc()) {
      CHECK(r.losses.l_lcc == 0.0);
      CHECK(r.losses.lcc_entries == 0);
    }
    CHECK(r.losses.total ==
          doctest::Approx(r.losses.l_sup + 0.5 * r.losses.l_u + 0.1 * r.losses.l_lcc).epsilon(1e-12));
  }
}

TEST_CASE("M1 skips the teacher path and M2 filters at 0.95") {
  std::mt19937_64 rng(9);
  const auto batch = random_batch(rng, 2, 3, 16);
  {
    Trainer<float> t(small_config("m1"), tiny(), 10);
    const auto r = t.step(batch);
    CHECK(r.thresholds.empty());
    CHECK(r.losses.l_u == 0.0);
    CHECK(r.losses.l_lcc == 0.0);
    for (auto n : r.utilization.total) CHECK(n == 0);
    CHECK(r.state.step == 0);
  }
  {
    Trainer<float> t(small_config("m2"), tiny(), 10);
    const auto r = t.step(batch);
    CHECK(r.thresholds == std::vector<double>{0.95, 0.95, 0.95});
    CHECK(r.losses.l_lcc == 0.0);
    CHECK(r.state.step == 0);
    CHECK(r.utilization.kept == r.utilization_fixed.kept);
  }
  {
    Trainer<float> t(small_config("m3"), tiny(), 10);
    const auto r = t.step(batch);
    CHECK(r.state.step == 1);
    CHECK(r.thresholds.size() == 3);
    for (double v : r.thresholds) CHECK(v <= r.state.t_global);
  }
}

TEST_CASE("the teacher moves only by the EMA combination") {
  std::mt19937_64 rng(10);
  const auto batch = random_batch(rng, 2, 2, 16);
  auto cfg = small_config("m7");
  cfg.teacher_alpha = 0.9;
  Trainer<float> t(cfg, tiny(), 10);
  for (int s = 0; s < 3; ++s) {
    const auto teacher_before = t.teacher().clone();
    t.step(batch);
    auto pb = teacher_before->parameters(), pa = t.teacher().parameters(), ps = t.student().parameters();
    for (std::size_t i = 0; i < pa.size(); ++i) {
      const Planes<float> expect = 0.9f * pb[i]->value + (1.0f - 0.9f) * ps[i]->value;
      CHECK((pa[i]->value - expect).cwiseAbs().maxCoeff() < 1e-6f);
      CHECK(pa[i]->grad.isZero());
    }
  }
}

TEST_CASE("optimizer steps never touch the teacher") {
  std::mt19937_64 rng(11);
  const auto batch = random_batch(rng, 2, 2, 16);
  auto cfg = small_config("m7");
  cfg.teacher_alpha = 1.0;
  Trainer<float> t(cfg, tiny(), 10);
  const auto teacher_sum = nn::checksum(t.teacher());
  const auto student_sum = nn::checksum(t.student());
  CHECK(teacher_sum == student_sum);
  for (int s = 0; s < 3; ++s) t.step(batch);
  CHECK(nn::checksum(t.teacher()) == teacher_sum);
  CHECK(nn::checksum(t.student()) != student_sum);
}

TEST_CASE("EMA warm-up follows 1 - 1/(t+1) up to the configured momentum") {
  auto cfg = small_config("m2");
  cfg.ema_warmup = true;
  cfg.teacher_alpha = 0.9;
  Trainer<float> t(cfg, tiny(), 100);
  std::mt19937_64 rng(12);
  const auto batch = random_batch(rng, 1, 2, 16);
  std::vector<double> alphas;
  for (int s = 0; s < 12; ++s) alphas.push_back(t.step(batch).teacher_alpha);
  CHECK(alphas[0] == 0.0);
  CHECK(alphas[1] == 0.5);
  CHECK(alphas[4] == doctest::Approx(0.8));
  CHECK(alphas[11] == 0.9);
}

TEST_CASE("learning rate decays polynomially") {
  std::mt19937_64 rng(13);
  const auto batch = random_batch(rng, 1, 1, 16);
  auto cfg = small_config("m1");
  Trainer<float> t(cfg, tiny(), 6);
  std::vector<double> lrs;
  for (int s = 0; s < 6; ++s) lrs.push_back(t.step(batch).lr);
  CHECK(lrs.front() == cfg.learning_rate);
  for (std::size_t i = 1; i < lrs.size(); ++i) {
    CHECK(lrs[i] < lrs[i - 1]);
    CHECK(lrs[i] == doctest::Approx(cfg.learning_rate * std::pow(1.0 - double(i) / 6.0, 0.9)));
  }
}

TEST_CASE("steps are deterministic under a fixed seed") {
  std::mt19937_64 rng(14);
  const auto batch = random_batch(rng, 2, 2, 16);
  auto run = [&]() {
    Trainer<float> t(small_config("m7"), tiny(), 10);
    std::vector<double> out;
    for (int s = 0; s < 3; ++s) {
      const auto r = t.step(batch);
      out.push_back(r.losses.total);
      out.push_back(r.losses.l_lcc);
    }
    return std::pair(out, nn::checksum(t.student()));
  };
  CHECK(run() == run());
}

TEST_CASE("padded pixels never become pseudo-labels") {
  std::mt19937_64 rng(15);
  auto cfg = small_config("m2");
  cfg.fixed_threshold = 0.0;
  cfg.scale_min = cfg.scale_max = 0.5;
  cfg.cutmix_prob = 0.0;
  Trainer<float> t(cfg, tiny(), 10);
  const auto batch = random_batch(rng, 1, 2, 16);
  StepReport report;
  const auto in = t.prepare(batch, report);
  for (Index n = 0; n < 2; ++n)
    for (Index y = 0; y < 16; ++y)
      for (Index x = 0; x < 16; ++x) {
        const bool content = y < 8 && x < 8;
        CHECK((in.pseudo.at(n, y, x) != kIgnore) == content);
      }
  CHECK(report.utilization.total[0] + report.utilization.total[1] + report.utilization.total[2] == 2 * 64);
}

TEST_CASE("pseudo-labels follow the strong view geometry when CutMix is off") {
  std::mt19937_64 rng(16);
  auto cfg = small_config("m2");
  cfg.fixed_threshold = 0.0;
  cfg.cutmix_prob = 0.0;
  Trainer<float> t(cfg, tiny(), 10);
  const auto batch = random_batch(rng, 1, 2, 16);
  StepReport report;
  const auto in = t.prepare(batch, report);
  // the teacher on the weak view gives exactly the stored pseudo-labels
  for (Index j = 0; j < 2; ++j) {
    const auto weak = weak_perturb(batch.unlabeled[std::size_t(j)], std::optional<Mask>{},
                                   derive_seed(cfg.seed, {0, 2, std::uint64_t(j)}), cfg.weak());
    auto expect = argmax(t.teacher().forward(weak.image, nn::Mode::eval).probs);
    const auto pad = padding_mask(weak.geometry);
    for (Index p = 0; p < expect.pixels(); ++p)
      if (pad.values(p) == kIgnore) expect.values(p) = kIgnore;
    CHECK(slice_labels(in.pseudo, j, 1) == expect);
  }
}

TEST_CASE("step errors carry the step index") {
  std::mt19937_64 rng(17);
  auto batch = random_batch(rng, 1, 1, 16);
  batch.labeled[0].mask.values(0) = 7;
  Trainer<float> t(small_config("m7"), tiny(), 10);
  try {
    t.step(batch);
    FAIL("expected DomainError");
  } catch (const DomainError& e) {
    CHECK(std::string(e.what()).rfind("step 0: ", 0) == 0);
  }
}

TEST_CASE("reference net separates a high-contrast synthetic set") {
  SynthConfig sc;
  sc.image_size = 32;
  sc.contrast_delta = 1.0;
  sc.noise_sigma = 0.0;
  sc.texture_amplitude = 0.0;
  sc.seed = 4;
  const auto train = generate(sc, 16);
  const auto val = generate(sc, 8, 100);
  auto cfg = small_config("m1");
  cfg.crop_size = 32;
  cfg.labeled_batch = 4;
  cfg.learning_rate = 0.02;
  const long steps_per_epoch = 4, epochs = 20;
  Trainer<float> t(cfg, std::make_unique<nn::ReferenceNet<float>>(3, 3, 9), steps_per_epoch * epochs);
  for (long e = 0; e < epochs; ++e)
    for (long s = 0; s < steps_per_epoch; ++s) {
      Batch<float> b;
      for (Index i = 0; i < 4; ++i) {
        const auto& smp = train[std::size_t((s * 4 + i) % 16)];
        b.labeled.push_back({smp.image, smp.mask});
      }
      t.step(b);
    }
  Index right = 0, total = 0;
  for (const auto& s : val) {
    const auto pred = predictor(t.student())(s.image);
    right += (pred.values == s.mask.values).count();
    total += s.mask.pixels();
  }
  CHECK(double(right) / double(total) > 0.95);
}
