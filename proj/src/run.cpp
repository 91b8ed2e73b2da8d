#include "loco/run.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <regex>

#include "loco/png_io.hpp"
#include "loco/trainer.hpp"

namespace loco {
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

using Net = nn::SegModel<float>;

constexpr char kMagic[8] = {'L', 'O', 'C', 'O', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
std::optional<double> json_opt(const json& j) {
  return j.is_null() ? std::nullopt : std::optional<double>(j.get<double>());
}
json opt_vec_json(const std::vector<std::optional<double>>& v) {
  json a = json::array();
  for (const auto& x : v) a.push_back(opt_json(x));
  return a;
}
std::vector<std::optional<double>> json_opt_vec(const json& j) {
  std::vector<std::optional<double>> v;
  for (const auto& x : j) v.push_back(json_opt(x));
  return v;
}

json record_json(const EpochRecord& r) {
  return {{"epoch", r.epoch},
          {"l_sup", opt_json(r.l_sup)},
          {"l_u", opt_json(r.l_u)},
          {"l_lcc", opt_json(r.l_lcc)},
          {"total", opt_json(r.total)},
          {"lr", opt_json(r.lr)},
          {"t_global", opt_json(r.t_global)},
          {"t_local", opt_vec_json(r.t_local)},
          {"t_effective", opt_vec_json(r.t_effective)},
          {"utilization", opt_vec_json(r.utilization)},
          {"utilization_fixed", opt_vec_json(r.utilization_fixed)},
          {"miou", r.miou},
          {"dsc", r.dsc},
          {"nsd", r.nsd},
          {"iou", opt_vec_json(r.iou)},
          {"interclass_similarity", opt_json(r.interclass_similarity)}};
}

EpochRecord record_from_json(const json& j) {
  EpochRecord r;
  r.epoch = j.at("epoch").get<long>();
  r.l_sup = json_opt(j.at("l_sup"));
  r.l_u = json_opt(j.at("l_u"));
  r.l_lcc = json_opt(j.at("l_lcc"));
  r.total = json_opt(j.at("total"));
  r.lr = json_opt(j.at("lr"));
  r.t_global = json_opt(j.at("t_global"));
  r.t_local = json_opt_vec(j.at("t_local"));
  r.t_effective = json_opt_vec(j.at("t_effective"));
  r.utilization = json_opt_vec(j.at("utilization"));
  r.utilization_fixed = json_opt_vec(j.at("utilization_fixed"));
  r.miou = j.at("miou").get<double>();
  r.dsc = j.at("dsc").get<double>();
  r.nsd = j.at("nsd").get<double>();
  r.iou = json_opt_vec(j.at("iou"));
  r.interclass_similarity = json_opt(j.at("interclass_similarity"));
  return r;
}

// ---------------------------------------------------------------------------
// Checkpoint file: magic, u32 version, u64 header length, JSON header, then
// the blobs listed in header["blobs"] back to back.

struct Blob {
  std::string name;
  std::vector<std::uint8_t> bytes;
};

void append(std::vector<std::uint8_t>& out, const Planes<float>& m) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(m.data());
  out.insert(out.end(), p, p + m.size() * sizeof(float));
}

void restore(const std::vector<std::uint8_t>& in, std::vector<Planes<float>*> targets,
             const std::string& what) {
  std::size_t off = 0;
  for (auto* m : targets) {
    const std::size_t n = std::size_t(m->size()) * sizeof(float);
    if (off + n > in.size()) throw DataError("checkpoint: " + what + " truncated");
    std::memcpy(m->data(), in.data() + off, n);
    off += n;
  }
  if (off != in.size()) throw DataError("checkpoint: " + what + " size mismatch");
}

void write_checkpoint(const fs::path& file, json header, const std::vector<Blob>& blobs) {
  header["blobs"] = json::array();
  for (const auto& b : blobs) header["blobs"].push_back({{"name", b.name}, {"bytes", b.bytes.size()}});
  const std::string text = header.dump();
  const fs::path tmp = file.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(kMagic, sizeof kMagic);
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), std::streamsize(text.size()));
    for (const auto& b : blobs)
      out.write(reinterpret_cast<const char*>(b.bytes.data()), std::streamsize(b.bytes.size()));
    if (!out) throw DataError("short write on " + tmp.string());
  }
  fs::rename(tmp, file);
}

std::pair<json, std::vector<Blob>> read_checkpoint(const fs::path& file, bool with_blobs) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + file.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw DataError(file.string() + ": not a checkpoint");
  if (version != kCheckpointVersion)
    throw DataError(file.string() + ": unsupported checkpoint version " + std::to_string(version));
  std::string text(len, '\0');
  in.read(text.data(), std::streamsize(len));
  if (!in) throw DataError(file.string() + ": truncated header");
  json header = json::parse(text);
  std::vector<Blob> blobs;
  if (with_blobs)
    for (const auto& b : header.at("blobs")) {
      Blob blob{b.at("name").get<std::string>(), std::vector<std::uint8_t>(b.at("bytes").get<std::size_t>())};
      in.read(reinterpret_cast<char*>(blob.bytes.data()), std::streamsize(blob.bytes.size()));
      if (!in) throw DataError(file.string() + ": truncated blob " + blob.name);
      blobs.push_back(std::move(blob));
    }
  return {std::move(header), std::move(blobs)};
}

const Blob& find_blob(const std::vector<Blob>& blobs, const std::string& name) {
  for (const auto& b : blobs)
    if (b.name == name) return b;
  throw DataError("checkpoint lacks " + name);
}

std::vector<Planes<float>*> value_ptrs(const std::vector<nn::Param<float>*>& ps) {
  std::vector<Planes<float>*> out;
  for (auto* p : ps) out.push_back(&p->value);
  return out;
}

std::vector<std::uint8_t> projector_bytes(Projector<float>& proj) {
  std::vector<std::uint8_t> out;
  for (auto* p : proj.parameters()) append(out, p->value);
  return out;
}

// ---------------------------------------------------------------------------

std::string default_architecture(const TrainConfig& c) {
  return "reference:in=3,classes=" + std::to_string(c.class_count);
}

std::vector<std::optional<double>> as_opt(const std::vector<double>& v) {
  return {v.begin(), v.end()};
}

struct Csv {
  std::ofstream out;
  explicit Csv(const fs::path& p) : out(p) {
    if (!out) throw DataError("cannot write " + p.string());
  }
};

std::string cells(const std::vector<std::optional<double>>& v, std::size_t k) {
  std::string s;
  for (std::size_t c = 0; c < k; ++c) s += "," + csv_number(c < v.size() ? v[c] : std::nullopt);
  return s;
}

std::string header_cols(const char* prefix, std::size_t k) {
  std::string s;
  for (std::size_t c = 0; c < k; ++c) s += std::string(",") + prefix + std::to_string(c);
  return s;
}

std::vector<fs::path> write_csvs(const fs::path& dir, const TrainConfig& cfg,
                                 const std::vector<EpochRecord>& hist) {
  const std::size_t k = std::size_t(cfg.class_count);
  std::vector<fs::path> files;
  {
    files.push_back(dir / "losses.csv");
    Csv f(files.back());
    f.out << "epoch,l_sup,l_u,l_lcc,total,lr\n";
    for (const auto& r : hist)
      if (r.epoch > 0)
        f.out << r.epoch << ',' << csv_number(r.l_sup) << ',' << csv_number(r.l_u) << ','
              << csv_number(r.l_lcc) << ',' << csv_number(r.total) << ',' << csv_number(r.lr)
              << '\n';
  }
  {
    files.push_back(dir / "metrics.csv");
    Csv f(files.back());
    f.out << "epoch,miou,dsc,nsd" << header_cols("iou_", k) << '\n';
    for (const auto& r : hist)
      f.out << r.epoch << ',' << csv_number(r.miou) << ',' << csv_number(r.dsc) << ','
            << csv_number(r.nsd) << cells(r.iou, k) << '\n';
  }
  {
    files.push_back(dir / "diagnostics.csv");
    Csv f(files.back());
    f.out << "epoch,interclass_similarity\n";
    for (const auto& r : hist) f.out << r.epoch << ',' << csv_number(r.interclass_similarity) << '\n';
  }
  if (cfg.use_unsup && cfg.use_cdf) {
    files.push_back(dir / "thresholds.csv");
    Csv f(files.back());
    f.out << "epoch,t_global" << header_cols("t_local_", k) << header_cols("threshold_", k)
          << header_cols("utilization_", k) << '\n';
    for (const auto& r : hist)
      if (r.epoch > 0)
        f.out << r.epoch << ',' << csv_number(r.t_global) << cells(r.t_local, k)
              << cells(r.t_effective, k) << cells(r.utilization, k) << '\n';
  }
  if (cfg.use_unsup) {
    files.push_back(dir / "utilization_fixed.csv");
    Csv f(files.back());
    f.out << "epoch,threshold" << header_cols("utilization_", k) << '\n';
    for (const auto& r : hist)
      if (r.epoch > 0)
        f.out << r.epoch << ',' << csv_number(cfg.fixed_threshold) << cells(r.utilization_fixed, k)
              << '\n';
  }
  return files;
}

/// Eval-mode embeddings of the whole set, chunked to bound peak memory.
EmbeddingMap<float> embed(Net& net, Projector<float>& proj, const Dataset& data) {
  std::vector<Tensor<float>> parts;
  constexpr std::size_t kChunk = 8;
  for (std::size_t i = 0; i < data.size(); i += kChunk) {
    std::vector<const Tensor<float>*> imgs;
    for (std::size_t j = i; j < std::min(data.size(), i + kChunk); ++j) imgs.push_back(&data[j].image);
    const auto x = concat_batch(imgs);
    const auto out = net.forward(x, nn::Mode::eval);
    parts.push_back(proj.forward(out.features, x.height, x.width));
  }
  return concat_batch(parts);
}

Mask all_masks(const Dataset& data) {
  std::vector<const Mask*> ptrs;
  for (const auto& s : data) ptrs.push_back(&s.mask);
  return concat_labels(ptrs);
}

bool same_size(const Dataset& data) {
  for (const auto& s : data)
    if (s.image.height != data.front().image.height || s.image.width != data.front().image.width)
      return false;
  return true;
}

std::string file_safe(std::string s) {
  for (auto& ch : s)
    if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '-' && ch != '_') ch = '_';
  return s;
}

std::optional<std::pair<long, fs::path>> latest_epoch_checkpoint(const fs::path& dir) {
  if (!fs::exists(dir)) return std::nullopt;
  static const std::regex pattern(R"(epoch_(\d+)\.ckpt)");
  std::optional<std::pair<long, fs::path>> best;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = e.path().filename().string();
    if (!std::regex_match(name, m, pattern)) continue;
    const long n = std::stol(m[1]);
    if (!best || n > best->first) best = {n, e.path()};
  }
  return best;
}

}  // namespace

std::string csv_number(const std::optional<double>& v) {
  if (!v) return {};
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", *v);
  return buf;
}

json read_checkpoint_header(const fs::path& checkpoint) {
  return read_checkpoint(checkpoint, false).first;
}

LoadedModel load_model(const fs::path& checkpoint) {
  auto [header, blobs] = read_checkpoint(checkpoint, true);
  LoadedModel lm;
  lm.config = merge_config(TrainConfig{}, header.at("config"));
  std::shared_ptr<Net> net =
      nn::make_model<float>(header.at("architecture").get<std::string>(), 0);
  const auto& state = find_blob(blobs, "student").bytes;
  nn::deserialize_state(*net, state.data(), state.size());
  lm.predict = predictor(*net);
  lm.owner = net;
  return lm;
}

RunArtifacts run_training(const TrainConfig& cfg, const Dataset& labeled, const Dataset& unlabeled,
                          const Dataset& val, const fs::path& dir, const RunOptions& options) {
  if (labeled.empty()) throw DataError("run: no labeled images");
  if (val.empty()) throw DataError("run: no validation images");
  if (cfg.epochs < 0) throw std::invalid_argument("epochs must be non-negative");
  if (cfg.labeled_batch < 1 || cfg.unlabeled_batch < 1)
    throw std::invalid_argument("batch sizes must be positive");
  if (!same_size(val)) throw DataError("run: validation images differ in size");
  fs::create_directories(dir);
  auto log = [&](const std::string& line) {
    if (options.log) *options.log << line << std::endl;
  };

  const std::string arch = options.architecture.empty() ? default_architecture(cfg) : options.architecture;
  const Index nl = Index(labeled.size()), nu = Index(unlabeled.size());
  const long steps_per_epoch =
      nu > 0 ? long((nu + cfg.unlabeled_batch - 1) / cfg.unlabeled_batch)
             : long((nl + cfg.labeled_batch - 1) / cfg.labeled_batch);
  const long total_steps = steps_per_epoch * cfg.epochs;

  Trainer<float> trainer(cfg, nn::make_model<float>(arch, derive_seed(cfg.seed, {0xa11})), total_steps);
  std::unique_ptr<Net> best = trainer.student().clone();

  RunArtifacts art;
  art.dir = dir;
  long start_epoch = 1;
  const json config_json = cfg;

  auto state_blobs = [&]() {
    std::vector<Blob> blobs;
    blobs.push_back({"student", nn::serialize_state(trainer.student())});
    blobs.push_back({"teacher", nn::serialize_state(trainer.teacher())});
    blobs.push_back({"projector", projector_bytes(trainer.projector())});
    std::vector<std::uint8_t> vel;
    for (const auto& v : trainer.optimizer().velocity()) append(vel, v);
    blobs.push_back({"velocity", std::move(vel)});
    return blobs;
  };
  auto header_for = [&](long epoch) {
    json h;
    h["artifact_version"] = kArtifactVersion;
    h["scalar"] = "float32";
    h["architecture"] = arch;
    h["config"] = config_json;
    h["epoch"] = epoch;
    h["global_step"] = trainer.global_step();
    h["threshold_state"] = {{"t_global", trainer.thresholds().t_global},
                            {"t_local", trainer.thresholds().t_local},
                            {"step", trainer.thresholds().step}};
    h["best_epoch"] = art.best_epoch;
    h["best_miou"] = art.best_miou;
    json hist = json::array();
    for (const auto& r : art.history) hist.push_back(record_json(r));
    h["history"] = hist;
    return h;
  };

  if (options.resume) {
    if (const auto last = latest_epoch_checkpoint(dir)) {
      auto [header, blobs] = read_checkpoint(last->second, true);
      json stored = header.at("config");
      if (stored != config_json)
        throw std::invalid_argument("run directory " + dir.string() +
                                    " holds a checkpoint of a different config; use a new name");
      if (header.at("architecture").get<std::string>() != arch)
        throw std::invalid_argument("checkpoint architecture differs");
      const auto& st = find_blob(blobs, "student").bytes;
      nn::deserialize_state(trainer.student(), st.data(), st.size());
      const auto& te = find_blob(blobs, "teacher").bytes;
      nn::deserialize_state(trainer.teacher(), te.data(), te.size());
      restore(find_blob(blobs, "projector").bytes, value_ptrs(trainer.projector().parameters()),
              "projector");
      auto params = trainer.trainable();
      auto& vel = trainer.optimizer().velocity();
      vel.clear();
      for (auto* p : params) vel.push_back(Planes<float>::Zero(p->value.rows(), p->value.cols()));
      std::vector<Planes<float>*> vptr;
      for (auto& v : vel) vptr.push_back(&v);
      restore(find_blob(blobs, "velocity").bytes, vptr, "velocity");
      trainer.global_step() = header.at("global_step").get<long>();
      const auto& ts = header.at("threshold_state");
      trainer.thresholds().t_global = ts.at("t_global").get<double>();
      trainer.thresholds().t_local = ts.at("t_local").get<std::vector<double>>();
      trainer.thresholds().step = ts.at("step").get<long>();
      art.best_epoch = header.at("best_epoch").get<long>();
      art.best_miou = header.at("best_miou").get<double>();
      for (const auto& r : header.at("history")) art.history.push_back(record_from_json(r));
      start_epoch = header.at("epoch").get<long>() + 1;
      best = trainer.student().clone();
      if (fs::exists(dir / "best.ckpt")) {
        auto [bh, bb] = read_checkpoint(dir / "best.ckpt", true);
        const auto& bs = find_blob(bb, "student").bytes;
        nn::deserialize_state(*best, bs.data(), bs.size());
      }
      log("resumed " + dir.string() + " at epoch " + std::to_string(start_epoch));
    }
  }

  const Mask val_masks = all_masks(val);
  auto validate_epoch = [&](EpochRecord& rec) {
    const auto report = evaluate(trainer.student(), val, cfg.eval());
    rec.miou = report.miou;
    rec.dsc = report.dsc;
    rec.nsd = report.nsd;
    rec.iou = report.iou_per_class;
    const auto emb = embed(trainer.student(), trainer.projector(), val);
    const auto ce = class_embeddings(emb, val_masks, cfg.class_count);
    rec.interclass_similarity = interclass_similarity(ce);
    if (cfg.heatmap_images > 0) {
      fs::create_directories(dir / "heatmaps");
      const auto lcc = cfg.lcc();
      const Index n = std::min<Index>(cfg.heatmap_images, Index(val.size()));
      for (Index i = 0; i < n; ++i) {
        const auto e = slice_batch(emb, i, 1);
        const auto scores = boundary_similarity(e, boundary_mask(val[std::size_t(i)].mask, lcc), lcc);
        png::Raster r{std::uint32_t(e.width), std::uint32_t(e.height), 1, heatmap_bytes(scores, 0)};
        char name[64];
        std::snprintf(name, sizeof name, "epoch_%03ld_", rec.epoch);
        png::write(dir / "heatmaps" / (name + file_safe(val[std::size_t(i)].name) + ".png"), r);
      }
    }
    if (cfg.export_embeddings) {
      std::ofstream f(dir / "embeddings.csv");
      f << "image,y,x,label" << header_cols("e", std::size_t(emb.channels())) << '\n';
      const Index n = std::min<Index>(2, Index(val.size()));
      for (Index i = 0; i < n; ++i)
        for (Index p = 0; p < emb.plane(); p += 4) {
          const Index col = i * emb.plane() + p;
          f << i << ',' << p / emb.width << ',' << p % emb.width << ','
            << int(val_masks.values(col));
          for (Index c = 0; c < emb.channels(); ++c) f << ',' << csv_number(double(emb.data(c, col)));
          f << '\n';
        }
    }
    return report;
  };

  auto write_manifest_file = [&]() {
    json m;
    m["artifact_version"] = kArtifactVersion;
    m["config"] = config_json;
    m["seed"] = cfg.seed;
    m["architecture"] = arch;
    json data;
    for (const auto* part : {&labeled, &unlabeled, &val}) {
      json names = json::array();
      for (const auto& s : *part) names.push_back(s.name);
      data.push_back(names);
    }
    m["data"] = {{"labeled", data[0]}, {"unlabeled", data[1]}, {"val", data[2]}};
    json files = json::array();
    for (const auto& f : art.files) files.push_back(fs::relative(f, dir).string());
    m["files"] = files;
    std::ofstream(dir / "manifest.json") << m.dump(2) << '\n';
  };

  auto checkpoint = [&](long epoch, bool is_best) {
    if (!cfg.save_checkpoints) return;
    const auto header = header_for(epoch);
    const auto blobs = state_blobs();
    const fs::path file = dir / ("epoch_" + std::to_string(epoch) + ".ckpt");
    write_checkpoint(file, header, blobs);
    if (is_best) write_checkpoint(dir / "best.ckpt", header, blobs);
    for (const auto& e : fs::directory_iterator(dir)) {
      const auto name = e.path().filename().string();
      if (e.path() != file && name.rfind("epoch_", 0) == 0 && e.path().extension() == ".ckpt")
        fs::remove(e.path());
    }
  };

  if (art.history.empty()) {
    EpochRecord rec;
    rec.epoch = 0;
    validate_epoch(rec);
    art.history.push_back(rec);
    art.best_epoch = 0;
    art.best_miou = rec.miou;
    best = trainer.student().clone();
    if (cfg.save_checkpoints) write_checkpoint(dir / "best.ckpt", header_for(0), state_blobs());
    log("epoch 0  val mIoU " + csv_number(rec.miou));
  }

  for (long epoch = start_epoch; epoch <= cfg.epochs; ++epoch) {
    Rng order_rng(derive_seed(cfg.seed, {0x0bd, std::uint64_t(epoch)}));
    std::vector<Index> lab(static_cast<std::size_t>(nl)), unl(static_cast<std::size_t>(nu));
    std::iota(lab.begin(), lab.end(), Index(0));
    std::iota(unl.begin(), unl.end(), Index(0));
    std::shuffle(lab.begin(), lab.end(), order_rng);
    std::shuffle(unl.begin(), unl.end(), order_rng);

    double s_sup = 0, s_u = 0, s_lcc = 0, s_total = 0, last_lr = 0;
    UtilizationCounter util(cfg.class_count), util_fixed(cfg.class_count);
    std::vector<double> applied;
    for (long s = 0; s < steps_per_epoch; ++s) {
      Batch<float> batch;
      for (Index i = 0; i < cfg.labeled_batch; ++i) {
        const auto& smp = labeled[std::size_t(lab[std::size_t((s * cfg.labeled_batch + i) % nl)])];
        batch.labeled.push_back({smp.image, smp.mask});
      }
      if (cfg.use_unsup && nu > 0)
        for (Index j = 0; j < cfg.unlabeled_batch; ++j)
          batch.unlabeled.push_back(
              unlabeled[std::size_t(unl[std::size_t((s * cfg.unlabeled_batch + j) % nu)])].image);
      const auto rep = trainer.step(batch);
      s_sup += rep.losses.l_sup;
      s_u += rep.losses.l_u;
      s_lcc += rep.losses.l_lcc;
      s_total += rep.losses.total;
      last_lr = rep.lr;
      applied = rep.thresholds;
      for (std::size_t c = 0; c < util.kept.size(); ++c) {
        util.kept[c] += rep.utilization.kept[c];
        util.total[c] += rep.utilization.total[c];
        util_fixed.kept[c] += rep.utilization_fixed.kept[c];
        util_fixed.total[c] += rep.utilization_fixed.total[c];
      }
    }
    const double n = double(steps_per_epoch);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.l_sup = s_sup / n;
    rec.l_u = s_u / n;
    rec.l_lcc = s_lcc / n;
    rec.total = s_total / n;
    rec.lr = last_lr;
    if (cfg.use_unsup && cfg.use_cdf) {
      const auto& st = trainer.thresholds();
      rec.t_global = st.t_global;
      rec.t_local = as_opt(st.t_local);
      rec.t_effective = as_opt(effective_threshold(st, cfg.cdf()));
    } else if (cfg.use_unsup) {
      rec.t_effective = as_opt(applied);
    }
    if (cfg.use_unsup) {
      rec.utilization = util.rates();
      rec.utilization_fixed = util_fixed.rates();
    }
    validate_epoch(rec);
    art.history.push_back(rec);
    const bool improved = rec.miou > art.best_miou;
    if (improved) {
      art.best_miou = rec.miou;
      art.best_epoch = epoch;
      best = trainer.student().clone();
    }
    checkpoint(epoch, improved);
    write_csvs(dir, cfg, art.history);
    char line[256];
    std::snprintf(line, sizeof line, "epoch %ld  loss %.4f (sup %.4f u %.4f lcc %.4f)  val mIoU %.4f",
                  epoch, *rec.total, *rec.l_sup, *rec.l_u, *rec.l_lcc, rec.miou);
    log(line);
  }

  art.files = write_csvs(dir, cfg, art.history);
  art.final_report = evaluate(*best, val, cfg.eval());
  {
    std::ofstream csv(dir / "report.csv");
    write_report_csv(csv, art.final_report);
    std::ofstream txt(dir / "report.txt");
    txt << "best epoch " << art.best_epoch << "\n";
    write_report_text(txt, art.final_report);
  }
  art.files.push_back(dir / "report.csv");
  art.files.push_back(dir / "report.txt");
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".ckpt") art.files.push_back(e.path());
  if (fs::exists(dir / "heatmaps"))
    for (const auto& e : fs::directory_iterator(dir / "heatmaps")) art.files.push_back(e.path());
  if (fs::exists(dir / "embeddings.csv")) art.files.push_back(dir / "embeddings.csv");
  std::sort(art.files.begin(), art.files.end());
  art.files.push_back(dir / "manifest.json");
  write_manifest_file();
  return art;
}

}  // namespace loco
