// loco: synthetic data, ablation training, evaluation and curve export.
//
// Exit codes: 0 success, 2 usage, 3 data error, 4 numeric fault.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "loco/config.hpp"
#include "loco/datasets.hpp"
#include "loco/metrics.hpp"
#include "loco/run.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace loco;

namespace {

constexpr int kUsage = 2;
constexpr int kData = 3;
constexpr int kNumeric = 4;

std::string kebab(std::string s) {
  for (auto& c : s)
    if (c == '_') c = '-';
  return s;
}

fs::path run_root(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("LOCO_RUN_ROOT"); env && *env) return env;
  return "runs";
}

// ---------------------------------------------------------------------------

struct GenArgs {
  Index count = 200;
  Index val_count = 0;
  SynthConfig synth;
  std::string out;
};

int cmd_gen_data(const GenArgs& a) {
  const auto train = generate(a.synth, a.count, 0);
  Dataset val;
  if (a.val_count > 0) val = generate(a.synth, a.val_count, a.count);
  std::vector<ManifestEntry> entries;
  for (const auto& s : train) entries.push_back({s.name, "train"});
  for (const auto& s : val) entries.push_back({s.name, "val"});
  save_folder(train, a.out);
  if (!val.empty()) save_folder(val, a.out);
  const json cfg = {{"image_size", a.synth.image_size},
                    {"class_count", a.synth.class_count},
                    {"contrast_delta", a.synth.contrast_delta},
                    {"minority_fraction", a.synth.minority_fraction},
                    {"malignant_fraction", a.synth.malignant_fraction},
                    {"max_blobs", a.synth.max_blobs},
                    {"boundary_softness", a.synth.boundary_softness},
                    {"noise_sigma", a.synth.noise_sigma},
                    {"texture_amplitude", a.synth.texture_amplitude},
                    {"seed", a.synth.seed}};
  write_manifest(fs::path(a.out) / "manifest.json", entries, cfg.dump());
  std::cout << "wrote " << train.size() << " train and " << val.size() << " val pairs to " << a.out
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct DataArgs {
  std::string data;
  std::string val_data;
  bool binary_masks = false;
};

Dataset load(const fs::path& root, bool binary) {
  auto res = load_folder(root / "images", root / "masks", binary ? Palette::binary() : Palette{});
  for (const auto& w : res.warnings) std::cerr << "warning: " << w << "\n";
  return std::move(res.samples);
}

std::map<std::string, std::string> manifest_splits(const fs::path& root) {
  std::map<std::string, std::string> out;
  if (!fs::exists(root / "manifest.json")) return out;
  for (const auto& e : read_manifest(root / "manifest.json")) out[e.name] = e.split;
  return out;
}

/// Training pool and validation set: manifest "val" entries, a separate
/// directory, or (failing both) the last 20% of the pool in name order.
std::pair<Dataset, Dataset> train_val(const DataArgs& a) {
  Dataset all = load(a.data, a.binary_masks);
  Dataset pool, val;
  if (!a.val_data.empty()) {
    pool = std::move(all);
    val = load(a.val_data, a.binary_masks);
  } else {
    const auto splits = manifest_splits(a.data);
    for (auto& s : all) {
      const auto it = splits.find(s.name);
      (it != splits.end() && it->second == "val" ? val : pool).push_back(std::move(s));
    }
    if (val.empty() && pool.size() >= 5) {
      const std::size_t keep = pool.size() - pool.size() / 5;
      val.assign(std::make_move_iterator(pool.begin() + std::ptrdiff_t(keep)),
                 std::make_move_iterator(pool.end()));
      pool.resize(keep);
      std::cerr << "note: no validation split given; holding out the last " << val.size()
                << " images\n";
    }
  }
  return {std::move(pool), std::move(val)};
}

struct TrainArgs {
  DataArgs data;
  std::string config_file;
  std::string variant;
  double labeled_fraction = 0.1;
  std::uint64_t split_seed = 0;
  std::string split_order = "random";
  std::string run_root;
  bool no_resume = false;
  std::map<std::string, std::string> overrides;  // config key -> raw flag text
  std::map<std::string, CLI::Option*> flags;
};

json parse_override(const json& like, const std::string& key, const std::string& raw) {
  try {
    if (like.is_boolean()) {
      if (raw.empty() || raw == "true" || raw == "1" || raw == "on") return true;
      if (raw == "false" || raw == "0" || raw == "off") return false;
      throw std::invalid_argument("");
    }
    if (like.is_number_unsigned()) {
      std::size_t used = 0;
      const auto v = std::stoull(raw, &used);
      if (used != raw.size()) throw std::invalid_argument("");
      return v;
    }
    if (like.is_number_integer()) {
      std::size_t used = 0;
      const auto v = std::stoll(raw, &used);
      if (used != raw.size()) throw std::invalid_argument("");
      return v;
    }
    if (like.is_number_float()) {
      std::size_t used = 0;
      const auto v = std::stod(raw, &used);
      if (used != raw.size()) throw std::invalid_argument("");
      return v;
    }
    return raw;
  } catch (const std::exception&) {
    throw std::invalid_argument("--" + kebab(key) + ": cannot parse '" + raw + "'");
  }
}

TrainConfig resolve_config(TrainArgs& a, bool& name_given) {
  TrainConfig cfg;
  json file = json::object();
  if (!a.config_file.empty()) {
    std::ifstream in(a.config_file);
    if (!in) throw std::invalid_argument("cannot read config file " + a.config_file);
    try {
      in >> file;
    } catch (const json::exception& e) {
      throw std::invalid_argument(a.config_file + ": " + e.what());
    }
    if (file.contains("variant") && file["variant"].is_string())
      apply_variant(cfg, file["variant"].get<std::string>());
    cfg = merge_config(cfg, file);
  }
  if (!a.variant.empty()) apply_variant(cfg, a.variant);
  const json defaults = cfg;
  json patch = json::object();
  for (const auto& [key, opt] : a.flags)
    if (opt->count() > 0) patch[key] = parse_override(defaults[key], key, a.overrides[key]);
  cfg = merge_config(cfg, patch);
  name_given = file.contains("name") || patch.contains("name");
  return cfg;
}

int cmd_train(TrainArgs& a) {
  bool name_given = false;
  TrainConfig cfg = resolve_config(a, name_given);
  if (a.data.binary_masks) cfg.class_count = 2;
  if (!name_given) cfg.name = cfg.variant + "_seed" + std::to_string(cfg.seed);
  if (a.split_order != "random" && a.split_order != "chronological")
    throw std::invalid_argument("--split-order must be random or chronological");

  auto [pool, val] = train_val(a.data);
  if (pool.size() < 2) throw DataError("training set needs at least 2 images in " + a.data.data);
  if (val.empty()) throw DataError("no validation images");
  SplitSpec spec{a.labeled_fraction, a.split_seed,
                 a.split_order == "random" ? SplitOrder::random : SplitOrder::chronological};
  const auto parts = split(Index(pool.size()), spec);
  Dataset labeled, unlabeled;
  for (Index i : parts.labeled) labeled.push_back(pool[std::size_t(i)]);
  for (Index i : parts.unlabeled) unlabeled.push_back(pool[std::size_t(i)]);

  const fs::path dir = run_root(a.run_root) / cfg.name;
  std::cout << "run " << dir.string() << ": " << labeled.size() << " labeled, " << unlabeled.size()
            << " unlabeled, " << val.size() << " val, variant " << cfg.variant << "\n";
  RunOptions opts;
  opts.resume = !a.no_resume;
  opts.log = &std::cout;
  const auto art = run_training(cfg, labeled, unlabeled, val, dir, opts);
  std::cout << "best epoch " << art.best_epoch << "\n";
  write_report_text(std::cout, art.final_report);
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  DataArgs data;
  std::string checkpoint;
  std::string out;
  bool all = false;
  bool replay_truth = false;
  double nsd_tolerance = -1.0;
};

int cmd_eval(const EvalArgs& a) {
  if (a.checkpoint.empty() && !a.replay_truth)
    throw std::invalid_argument("eval needs --checkpoint (or --replay-truth)");
  Dataset data;
  {
    auto [pool, val] = train_val(a.data);
    if (a.all || !a.data.val_data.empty()) {
      data = a.data.val_data.empty() ? std::move(pool) : std::move(val);
      if (a.all && a.data.val_data.empty()) data.insert(data.end(), val.begin(), val.end());
    } else {
      data = std::move(val);
    }
  }
  if (data.empty()) throw std::invalid_argument("no evaluation images found");

  EvalOptions opts;
  Predictor predict;
  std::shared_ptr<void> owner;
  if (a.replay_truth) {
    std::map<const float*, Mask> truth;
    for (const auto& s : data) truth[s.image.data.data()] = s.mask;
    predict = [truth](const Image<float>& img) { return truth.at(img.data.data()); };
    opts.classes = a.data.binary_masks ? 2 : 3;
  } else {
    if (!fs::exists(a.checkpoint)) throw DataError("checkpoint not found: " + a.checkpoint);
    auto lm = load_model(a.checkpoint);
    opts = lm.config.eval();
    predict = lm.predict;
    owner = lm.owner;
  }
  if (a.nsd_tolerance >= 0.0) opts.nsd_tolerance = a.nsd_tolerance;
  const auto report = evaluate(predict, data, opts);
  write_report_text(std::cout, report);
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    std::ofstream csv(fs::path(a.out) / "report.csv");
    write_report_csv(csv, report);
    std::ofstream txt(fs::path(a.out) / "report.txt");
    write_report_text(txt, report);
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  long column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return long(i);
    return -1;
  }
};

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

Table read_csv(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError("missing " + file.string());
  Table t;
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty " + file.string());
  t.header = split_csv_line(line);
  while (std::getline(in, line))
    if (!line.empty()) t.rows.push_back(split_csv_line(line));
  return t;
}

struct CurvesArgs {
  std::string run;
  std::string out;
};

int cmd_curves(const CurvesArgs& a) {
  const fs::path run = a.run;
  if (!fs::is_directory(run)) throw DataError("run directory not found: " + a.run);
  const fs::path out = a.out.empty() ? run / "curves" : fs::path(a.out);
  fs::create_directories(out);

  const auto diag = read_csv(run / "diagnostics.csv");
  {
    std::ofstream f(out / "interclass_similarity.csv");
    f << "epoch,series,value\n";
    for (const auto& r : diag.rows) f << r[0] << ",interclass_similarity," << r.at(1) << "\n";
  }
  std::vector<std::string> written = {"interclass_similarity.csv"};

  const bool has_cdf = fs::exists(run / "thresholds.csv");
  const bool has_fixed = fs::exists(run / "utilization_fixed.csv");
  if (has_cdf) {
    const auto t = read_csv(run / "thresholds.csv");
    std::ofstream f(out / "thresholds.csv");
    f << "epoch,series,class,value\n";
    for (const auto& r : t.rows)
      for (std::size_t i = 1; i < t.header.size() && i < r.size(); ++i) {
        const auto& h = t.header[i];
        if (h == "t_global") f << r[0] << ",t_global,all," << r[i] << "\n";
        else if (h.rfind("t_local_", 0) == 0) f << r[0] << ",t_local," << h.substr(8) << "," << r[i] << "\n";
        else if (h.rfind("threshold_", 0) == 0) f << r[0] << ",threshold," << h.substr(10) << "," << r[i] << "\n";
      }
    written.push_back("thresholds.csv");
  }
  if (has_cdf || has_fixed) {
    std::ofstream f(out / "utilization.csv");
    f << "epoch,filter,class,value\n";
    auto emit = [&](const Table& t, const char* filter) {
      for (const auto& r : t.rows)
        for (std::size_t i = 1; i < t.header.size() && i < r.size(); ++i)
          if (t.header[i].rfind("utilization_", 0) == 0)
            f << r[0] << ',' << filter << ',' << t.header[i].substr(12) << ',' << r[i] << "\n";
    };
    if (has_cdf) emit(read_csv(run / "thresholds.csv"), "cdf");
    if (has_fixed) emit(read_csv(run / "utilization_fixed.csv"), "fixed");
    written.push_back("utilization.csv");
  }
  for (const auto& w : written) std::cout << (out / w).string() << "\n";
  return 0;
}

void add_data_flags(CLI::App* cmd, DataArgs& d, bool required) {
  cmd->add_option("--data", d.data, "Dataset root with images/, masks/ and optional manifest.json")
      ->required(required);
  cmd->add_option("--val-data", d.val_data, "Separate validation dataset root");
  cmd->add_flag("--binary-masks", d.binary_masks,
                "Masks are black/white (K = 2) instead of grayscale class indices");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"loco: semi-supervised low-contrast segmentation"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate a synthetic low-contrast dataset");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--count", gen.count, "Training image/mask pairs")->capture_default_str();
  g->add_option("--val-count", gen.val_count, "Additional validation pairs")->capture_default_str();
  g->add_option("--contrast", gen.synth.contrast_delta, "Class contrast in [0, 1]")->capture_default_str();
  g->add_option("--minority", gen.synth.minority_fraction, "Expected benign pixel share")->capture_default_str();
  g->add_option("--malignant", gen.synth.malignant_fraction, "Expected malignant pixel share")->capture_default_str();
  g->add_option("--image-size", gen.synth.image_size, "Square image side in pixels")->capture_default_str();
  g->add_option("--classes", gen.synth.class_count, "2 (normal/benign) or 3")->capture_default_str();
  g->add_option("--max-blobs", gen.synth.max_blobs, "Maximum blobs per tumour class")->capture_default_str();
  g->add_option("--softness", gen.synth.boundary_softness, "Boundary blur width in pixels")->capture_default_str();
  g->add_option("--noise", gen.synth.noise_sigma, "White noise sigma")->capture_default_str();
  g->add_option("--texture", gen.synth.texture_amplitude, "Background texture amplitude")->capture_default_str();
  g->add_option("--seed", gen.synth.seed, "Generator seed")->capture_default_str();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train one ablation variant; writes runs/<name>/");
  add_data_flags(t, tr.data, true);
  t->add_option("--config", tr.config_file, "JSON file whose keys are config field names");
  t->add_option("--variant", tr.variant, "Ablation preset m1..m7");
  t->add_option("--labeled-fraction", tr.labeled_fraction, "Share of the pool with labels")->capture_default_str();
  t->add_option("--split-seed", tr.split_seed, "Seed of the labeled/unlabeled partition")->capture_default_str();
  t->add_option("--split-order", tr.split_order, "random or chronological")->capture_default_str();
  t->add_option("--run-root", tr.run_root, "Run root (default $LOCO_RUN_ROOT or ./runs)");
  t->add_flag("--no-resume", tr.no_resume, "Ignore checkpoints already in the run directory");
  {
    const json defaults = TrainConfig{};
    for (const auto& [key, value] : defaults.items()) {
      if (key == "variant") continue;
      auto* opt = t->add_option("--" + kebab(key), tr.overrides[key],
                                "config " + key + " (default " + value.dump() + ")");
      if (value.is_boolean()) opt->expected(0, 1);
      tr.flags[key] = opt;
    }
  }

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on the validation split");
  add_data_flags(e, ev.data, true);
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint file (best.ckpt or epoch_<n>.ckpt)");
  e->add_option("--out", ev.out, "Directory for report.csv and report.txt");
  e->add_option("--nsd-tolerance", ev.nsd_tolerance, "Override the NSD tolerance in pixels");
  e->add_flag("--all", ev.all, "Evaluate every image, not only the validation split");
  e->add_flag("--replay-truth", ev.replay_truth, "Score the ground truth against itself (sanity check)");

  CurvesArgs cv;
  auto* c = app.add_subcommand("curves", "Export tidy threshold, utilization and similarity curves");
  c->add_option("--run", cv.run, "Run directory")->required();
  c->add_option("--out", cv.out, "Output directory (default <run>/curves)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : kUsage;
  }

  try {
    if (g->parsed()) return cmd_gen_data(gen);
    if (t->parsed()) return cmd_train(tr);
    if (e->parsed()) return cmd_eval(ev);
    if (c->parsed()) return cmd_curves(cv);
  } catch (const NumericFault& err) {
    std::cerr << "numeric fault: " << err.what() << "\n";
    return kNumeric;
  } catch (const DataError& err) {
    std::cerr << "data error: " << err.what() << "\n";
    return kData;
  } catch (const ShapeError& err) {
    std::cerr << "data error: " << err.what() << "\n";
    return kData;
  } catch (const DomainError& err) {
    std::cerr << "data error: " << err.what() << "\n";
    return kData;
  } catch (const std::invalid_argument& err) {
    std::cerr << "usage: " << err.what() << "\n";
    return kUsage;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return kUsage;
}
