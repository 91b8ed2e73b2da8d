#pragma once

#include <cstring>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "loco/nn/layers.hpp"
#include "loco/rng.hpp"

namespace loco::nn {

template <typename Scalar>
struct ForwardOutput {
  Tensor<Scalar> logits;      // K x N*H*W at input resolution
  ProbMap<Scalar> probs;      // softmax(logits)
  FeatureMap<Scalar> features;  // penultimate activations
};

/// Segmentation network contract: images -> (logits at input resolution,
/// penultimate features). backward() must follow a train-mode forward and
/// accumulates into parameter gradients.
template <typename Scalar>
class SegModel {
 public:
  virtual ~SegModel() = default;

  virtual ForwardOutput<Scalar> forward(const Tensor<Scalar>& images, Mode mode) = 0;
  virtual void backward(const Tensor<Scalar>& grad_logits,
                        const FeatureMap<Scalar>* grad_features) = 0;
  virtual std::vector<Param<Scalar>*> parameters() = 0;
  virtual std::vector<Buffer<Scalar>> buffers() = 0;
  virtual std::unique_ptr<SegModel> clone() const = 0;
  /// "kind:key=value,...", enough to rebuild the architecture.
  virtual std::string architecture() const = 0;
  virtual Index classes() const = 0;
  virtual Index feature_dim() const = 0;

  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }
  /// Zero classifier weights: uniform probabilities everywhere.
  virtual void zero_classifier() = 0;
};

/// Encoder (4 stride-2 stages, 16/32/64/128 channels) with a two-step
/// decoder fusing skips at 1/8 and 1/4; the 64-channel 1/4-resolution
/// decoder output is the penultimate feature map.
template <typename Scalar>
class ReferenceNet final : public SegModel<Scalar> {
 public:
  ReferenceNet(Index in_channels, Index classes, std::uint64_t seed)
      : in_ch_(in_channels), classes_(classes),
        enc1_("enc1", in_channels, 16, 3, 2, 1, false), bn1_("bn1", 16),
        enc2_("enc2", 16, 32, 3, 2, 1, false), bn2_("bn2", 32),
        enc3_("enc3", 32, 64, 3, 2, 1, false), bn3_("bn3", 64),
        enc4_("enc4", 64, 128, 3, 2, 1, false), bn4_("bn4", 128),
        dec1_("dec1", 128 + 64, 64, 3, 1, 1, false), bnd1_("bnd1", 64),
        dec2_("dec2", 64 + 32, kFeatureDim, 3, 1, 1, false), bnd2_("bnd2", kFeatureDim),
        cls_("classifier", kFeatureDim, classes, 1, 1, 0, true) {
    Rng gen(seed);
    for (auto* c : {&enc1_, &enc2_, &enc3_, &enc4_, &dec1_, &dec2_, &cls_})
      he_normal(c->weight(), c->fan_in(), gen);
  }

  static constexpr Index kFeatureDim = 64;

  ForwardOutput<Scalar> forward(const Tensor<Scalar>& x, Mode mode) override {
    in_h_ = x.height;
    in_w_ = x.width;
    auto stage = [&](Conv2d<Scalar>& conv, BatchNorm<Scalar>& bn, Relu<Scalar>& relu,
                     const Tensor<Scalar>& in) {
      auto y = relu.forward(bn.forward(conv.forward(in), mode));
      check_finite(y, conv.name());
      return y;
    };
    e1_ = stage(enc1_, bn1_, r1_, x);
    e2_ = stage(enc2_, bn2_, r2_, e1_);
    e3_ = stage(enc3_, bn3_, r3_, e2_);
    auto e4 = stage(enc4_, bn4_, r4_, e3_);
    auto d1 = stage(dec1_, bnd1_, rd1_, concat_channels(up1_.forward(e4, e3_.height, e3_.width), e3_));
    auto feats = stage(dec2_, bnd2_, rd2_, concat_channels(up2_.forward(d1, e2_.height, e2_.width), e2_));
    auto low = cls_.forward(feats);
    check_finite(low, cls_.name());
    ForwardOutput<Scalar> out;
    out.logits = up_out_.forward(low, in_h_, in_w_);
    out.probs = softmax(out.logits);
    out.features = std::move(feats);
    return out;
  }

  void backward(const Tensor<Scalar>& grad_logits, const FeatureMap<Scalar>* grad_features) override {
    auto g_feats = cls_.backward(up_out_.backward(grad_logits));
    if (grad_features) g_feats.data += grad_features->data;
    auto g = dec2_.backward(bnd2_.backward(rd2_.backward(g_feats)));
    auto [g_up2, g_e2] = split_channels(g, 64);
    auto g_d1 = up2_.backward(g_up2);
    g = dec1_.backward(bnd1_.backward(rd1_.backward(g_d1)));
    auto [g_up1, g_e3] = split_channels(g, 128);
    auto g_e4 = up1_.backward(g_up1);
    g_e3.data += enc4_.backward(bn4_.backward(r4_.backward(g_e4))).data;
    g_e2.data += enc3_.backward(bn3_.backward(r3_.backward(g_e3))).data;
    auto g_e1 = enc2_.backward(bn2_.backward(r2_.backward(g_e2)));
    enc1_.backward(bn1_.backward(r1_.backward(g_e1)));
  }

  std::vector<Param<Scalar>*> parameters() override {
    std::vector<Param<Scalar>*> ps;
    enc1_.collect(ps); bn1_.collect(ps);
    enc2_.collect(ps); bn2_.collect(ps);
    enc3_.collect(ps); bn3_.collect(ps);
    enc4_.collect(ps); bn4_.collect(ps);
    dec1_.collect(ps); bnd1_.collect(ps);
    dec2_.collect(ps); bnd2_.collect(ps);
    cls_.collect(ps);
    return ps;
  }

  std::vector<Buffer<Scalar>> buffers() override {
    std::vector<Buffer<Scalar>> bs;
    for (auto* bn : {&bn1_, &bn2_, &bn3_, &bn4_, &bnd1_, &bnd2_}) bn->collect(bs);
    return bs;
  }

  std::unique_ptr<SegModel<Scalar>> clone() const override {
    return std::make_unique<ReferenceNet>(*this);
  }

  std::string architecture() const override {
    std::ostringstream s;
    s << "reference:in=" << in_ch_ << ",classes=" << classes_;
    return s.str();
  }
  Index classes() const override { return classes_; }
  Index feature_dim() const override { return kFeatureDim; }

  void zero_classifier() override {
    cls_.weight().value.setZero();
    cls_.bias().value.setZero();
  }

 private:
  Index in_ch_, classes_;
  Conv2d<Scalar> enc1_; BatchNorm<Scalar> bn1_; Relu<Scalar> r1_;
  Conv2d<Scalar> enc2_; BatchNorm<Scalar> bn2_; Relu<Scalar> r2_;
  Conv2d<Scalar> enc3_; BatchNorm<Scalar> bn3_; Relu<Scalar> r3_;
  Conv2d<Scalar> enc4_; BatchNorm<Scalar> bn4_; Relu<Scalar> r4_;
  Conv2d<Scalar> dec1_; BatchNorm<Scalar> bnd1_; Relu<Scalar> rd1_;
  Conv2d<Scalar> dec2_; BatchNorm<Scalar> bnd2_; Relu<Scalar> rd2_;
  Conv2d<Scalar> cls_;
  Upsample<Scalar> up1_, up2_, up_out_;
  Tensor<Scalar> e1_, e2_, e3_;
  Index in_h_ = 0, in_w_ = 0;
};

/// Two-layer network (3x3 conv + ReLU, 1x1 classifier) at full resolution.
/// Small enough for exhaustive finite-difference checks.
template <typename Scalar>
class TinyNet final : public SegModel<Scalar> {
 public:
  TinyNet(Index in_channels, Index classes, Index feature_dim, std::uint64_t seed)
      : in_ch_(in_channels), classes_(classes), feat_(feature_dim),
        conv_("conv", in_channels, feature_dim, 3, 1, 1, true),
        cls_("classifier", feature_dim, classes, 1, 1, 0, true) {
    Rng gen(seed);
    he_normal(conv_.weight(), conv_.fan_in(), gen);
    he_normal(cls_.weight(), cls_.fan_in(), gen);
    std::normal_distribution<double> small(0.0, 0.1);
    for (Index i = 0; i < conv_.bias().value.size(); ++i)
      conv_.bias().value.data()[i] = Scalar(small(gen));
  }

  ForwardOutput<Scalar> forward(const Tensor<Scalar>& x, Mode) override {
    auto feats = relu_.forward(conv_.forward(x));
    check_finite(feats, conv_.name());
    ForwardOutput<Scalar> out;
    out.logits = cls_.forward(feats);
    check_finite(out.logits, cls_.name());
    out.probs = softmax(out.logits);
    out.features = std::move(feats);
    return out;
  }

  void backward(const Tensor<Scalar>& grad_logits, const FeatureMap<Scalar>* grad_features) override {
    auto g = cls_.backward(grad_logits);
    if (grad_features) g.data += grad_features->data;
    conv_.backward(relu_.backward(g));
  }

  std::vector<Param<Scalar>*> parameters() override {
    std::vector<Param<Scalar>*> ps;
    conv_.collect(ps);
    cls_.collect(ps);
    return ps;
  }
  std::vector<Buffer<Scalar>> buffers() override { return {}; }
  std::unique_ptr<SegModel<Scalar>> clone() const override { return std::make_unique<TinyNet>(*this); }
  std::string architecture() const override {
    std::ostringstream s;
    s << "tiny:in=" << in_ch_ << ",classes=" << classes_ << ",features=" << feat_;
    return s.str();
  }
  Index classes() const override { return classes_; }
  Index feature_dim() const override { return feat_; }
  void zero_classifier() override {
    cls_.weight().value.setZero();
    cls_.bias().value.setZero();
  }

 private:
  Index in_ch_, classes_, feat_;
  Conv2d<Scalar> conv_;
  Relu<Scalar> relu_;
  Conv2d<Scalar> cls_;
};

// ---------------------------------------------------------------------------

template <typename Scalar>
void check_same_structure(SegModel<Scalar>& a, SegModel<Scalar>& b) {
  if (a.architecture() != b.architecture())
    throw StructuralError("architecture mismatch: " + a.architecture() + " vs " + b.architecture());
  auto pa = a.parameters();
  auto pb = b.parameters();
  if (pa.size() != pb.size()) throw StructuralError("parameter count mismatch");
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (pa[i]->name != pb[i]->name || pa[i]->value.rows() != pb[i]->value.rows() ||
        pa[i]->value.cols() != pb[i]->value.cols())
      throw StructuralError("parameter mismatch at " + pa[i]->name);
}

/// theta_t <- alpha * theta_t + (1 - alpha) * theta_s; normalisation
/// statistics are copied from the student.
template <typename Scalar>
void ema_update(SegModel<Scalar>& teacher, SegModel<Scalar>& student, double alpha) {
  check_same_structure(teacher, student);
  auto pt = teacher.parameters();
  auto ps = student.parameters();
  const Scalar a = Scalar(alpha), b = Scalar(1.0 - alpha);
  for (std::size_t i = 0; i < pt.size(); ++i) {
    if (alpha == 1.0) continue;
    if (alpha == 0.0) pt[i]->value = ps[i]->value;
    else pt[i]->value = a * pt[i]->value + b * ps[i]->value;
  }
  auto bt = teacher.buffers();
  auto bs = student.buffers();
  for (std::size_t i = 0; i < bt.size(); ++i) *bt[i].value = *bs[i].value;
}

/// Deep, independent copy.
template <typename Scalar>
std::unique_ptr<SegModel<Scalar>> snapshot(const SegModel<Scalar>& model) {
  return model.clone();
}

/// Parameters then buffers, in declaration order, raw little-endian scalars.
template <typename Scalar>
std::vector<std::uint8_t> serialize_state(SegModel<Scalar>& model) {
  std::vector<std::uint8_t> out;
  auto put = [&](const Planes<Scalar>& m) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(m.data());
    out.insert(out.end(), p, p + m.size() * sizeof(Scalar));
  };
  for (auto* p : model.parameters()) put(p->value);
  for (auto& b : model.buffers()) put(*b.value);
  return out;
}

template <typename Scalar>
void deserialize_state(SegModel<Scalar>& model, const std::uint8_t* data, std::size_t size) {
  std::size_t off = 0;
  auto get = [&](Planes<Scalar>& m) {
    const std::size_t n = std::size_t(m.size()) * sizeof(Scalar);
    if (off + n > size) throw StructuralError("model state truncated");
    std::memcpy(m.data(), data + off, n);
    off += n;
  };
  for (auto* p : model.parameters()) get(p->value);
  for (auto& b : model.buffers()) get(*b.value);
  if (off != size) throw StructuralError("model state size mismatch");
}

inline std::uint64_t fnv1a(const std::vector<std::uint8_t>& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

template <typename Scalar>
std::uint64_t checksum(SegModel<Scalar>& model) {
  return fnv1a(serialize_state(model));
}

/// Builds a model from an architecture() descriptor.
template <typename Scalar>
std::unique_ptr<SegModel<Scalar>> make_model(const std::string& descriptor, std::uint64_t seed) {
  const auto colon = descriptor.find(':');
  const std::string kind = descriptor.substr(0, colon);
  std::map<std::string, Index> kv;
  std::stringstream ss(colon == std::string::npos ? "" : descriptor.substr(colon + 1));
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) continue;
    kv[item.substr(0, eq)] = std::stol(item.substr(eq + 1));
  }
  auto need = [&](const char* k) {
    auto it = kv.find(k);
    if (it == kv.end()) throw StructuralError(std::string("architecture missing ") + k);
    return it->second;
  };
  if (kind == "reference")
    return std::make_unique<ReferenceNet<Scalar>>(need("in"), need("classes"), seed);
  if (kind == "tiny")
    return std::make_unique<TinyNet<Scalar>>(need("in"), need("classes"), need("features"), seed);
  throw StructuralError("unknown architecture " + descriptor);
}

}  // namespace loco::nn
