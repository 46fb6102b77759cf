// stcl: data generation, training, prediction, segmentation, evaluation
// and gradient checks for the ST-ConvLSTM library.

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "stcl/gradcheck.hpp"
#include "stcl/io.hpp"
#include "stcl/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace stcl;

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitIo = 2;
constexpr int kExitCheck = 3;

// Gradient checks fail above this worst relative error.
constexpr double kGradTolerance = 1e-5;

int thread_cap() {
  int n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* env = std::getenv("STCL_THREADS")) {
    const int cap = std::atoi(env);
    if (cap >= 1) n = std::min(n, cap);
  }
  return n;
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Callers write
/// into slot i, so aggregation order never depends on scheduling.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn fn) {
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex error_mutex;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

void write_json(const fs::path& path, const json& j) { write_file(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// Dataset manifest

struct Dataset {
  fs::path dir;
  json manifest;
  std::string mode;

  static Dataset open(const fs::path& dir) {
    Dataset d;
    d.dir = dir;
    if (!fs::exists(dir / "manifest.json")) throw IoError("no manifest.json in " + dir.string());
    d.manifest = read_json(dir / "manifest.json");
    d.mode = d.manifest.value("mode", std::string());
    if (d.mode != "predict" && d.mode != "segment")
      throw FormatError((dir / "manifest.json").string() + ": unknown dataset mode \"" + d.mode + "\"");
    return d;
  }

  const json& entries() const { return manifest.at(mode == "predict" ? "patients" : "cases"); }
};

/// Network and training settings: built-in defaults for the mode, then the
/// config file, then individual flags.
struct Settings {
  NetworkConfig net;
  TrainConfig train;
  int window_stride = 5;
};

Settings load_settings(const std::string& mode, const std::string& config_path) {
  Settings s;
  json file = json::object();
  if (!config_path.empty()) file = read_json(config_path);
  json net = file.value("network", json::object());
  if (!net.contains("mode")) net["mode"] = mode;
  try {
    s.net = net.get<NetworkConfig>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("network config: ") + e.what());
  }
  if (to_string(s.net.mode) != mode)
    throw ConfigError("config network mode \"" + to_string(s.net.mode) + "\" does not match dataset mode \"" + mode +
                      "\"");
  s.train = mode == "predict" ? TrainConfig::prediction() : TrainConfig::segmentation();
  // A full pass over the augmented pool is far beyond a desktop budget.
  if (mode == "predict") s.train.samples_per_epoch = 2000;
  try {
    if (file.contains("train")) from_json(file["train"], s.train);
    s.window_stride = file.value("window_stride", s.window_stride);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  return s;
}

// ---------------------------------------------------------------------------
// gen-data

struct GenArgs {
  int count = -1;
  std::uint64_t seed = 7;
  std::string out;
  std::string mode = "predict";
  int folds = 3;
};

int cmd_gen_data(const GenArgs& a) {
  if (a.folds < 1) throw ConfigError("--folds must be >= 1");
  const fs::path out(a.out);
  fs::create_directories(out);
  json m = {{"kind", "dataset"}, {"mode", a.mode}, {"seed", a.seed}};
  const int threads = thread_cap();
  if (a.mode == "predict") {
    const int n = a.count < 0 ? 33 : a.count;
    if (n == 0) std::cerr << "warning: generating an empty dataset\n";
    const std::vector<int> folds = fold_assignment(n, a.folds, a.seed);
    std::vector<DatasetRecord> records(static_cast<std::size_t>(n));
    parallel_for(records.size(), threads, [&](std::size_t i) {
      records[i] = generate_patient(patient_seed(a.seed, static_cast<int>(i)), static_cast<int>(i));
      write_record(out, records[i]);
    });
    json patients = json::array();
    for (const DatasetRecord& r : records) {
      json files = json::array();
      for (int t = 0; t < r.times(); ++t) files.push_back(record_filename(r.id, t));
      patients.push_back({{"id", r.id},
                          {"seed", r.seed},
                          {"fold", folds[static_cast<std::size_t>(r.id)]},
                          {"intervals", r.intervals},
                          {"files", files}});
    }
    m["folds"] = a.folds;
    m["patients"] = patients;
  } else {
    const int n = a.count < 0 ? 15 : a.count;
    if (n == 0) std::cerr << "warning: generating an empty dataset\n";
    const SegmentationPhantomConfig pc;
    const int n_test = n / 3;
    json cases = json::array();
    std::vector<std::uint64_t> seeds(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) seeds[static_cast<std::size_t>(i)] = patient_seed(a.seed, i);
    parallel_for(seeds.size(), threads, [&](std::size_t i) {
      write_segmentation_case(out, static_cast<int>(i), seeds[i], generate_segmentation_case(seeds[i], pc));
    });
    for (int i = 0; i < n; ++i)
      cases.push_back({{"id", i}, {"seed", seeds[static_cast<std::size_t>(i)]}, {"split", i < n - n_test ? "train" : "test"}});
    m["cases"] = cases;
    m["phantom"] = {{"size", pc.size}, {"slices", pc.slices}, {"times", pc.times}, {"noise_sigma", pc.noise_sigma}};
  }
  write_json(out / "manifest.json", m);
  std::cout << "wrote " << m[a.mode == "predict" ? "patients" : "cases"].size() << " " << a.mode << " records to "
            << out.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string dataset, out, config, mode;
  std::optional<std::uint64_t> seed;
  int fold = 0;
  std::optional<int> epochs, batch_size, slices;
  std::optional<std::size_t> samples_per_epoch;
  std::optional<double> learning_rate;
};

int cmd_train(const TrainArgs& a) {
  const Dataset ds = Dataset::open(a.dataset);
  if (!a.mode.empty() && a.mode != ds.mode)
    throw ConfigError("--mode " + a.mode + " does not match dataset mode " + ds.mode);
  Settings s = load_settings(ds.mode, a.config);
  if (a.seed) s.train.seed = *a.seed;
  if (a.epochs) s.train.epochs = *a.epochs;
  if (a.batch_size) s.train.batch_size = *a.batch_size;
  if (a.slices) s.train.slices = *a.slices;
  if (a.samples_per_epoch) s.train.samples_per_epoch = *a.samples_per_epoch;
  if (a.learning_rate) s.train.learning_rate = *a.learning_rate;
  s.train.threads = thread_cap();
  s.train.validate();
  s.net.validate();

  const fs::path out(a.out);
  fs::create_directories(out);
  json extra = {{"mode", ds.mode}, {"slices", s.train.slices}, {"dataset_seed", ds.manifest.value("seed", 0ULL)}};
  std::string csv = "epoch,loss\n";
  const auto t0 = std::chrono::steady_clock::now();
  auto on_epoch = [&](int epoch, double loss, const NetworkParams& p, const OptimizerState& opt) {
    write_checkpoint(out / ("checkpoint_epoch" + std::to_string(epoch) + ".stcl"),
                     {s.net, p, opt, epoch, s.train.seed, extra});
    csv += std::to_string(epoch) + "," + fmt(loss) + "\n";
    write_file(out / "loss.csv", csv);
    std::cerr << "epoch " << epoch << " loss " << fmt(loss) << " (" << static_cast<int>(seconds_since(t0)) << " s)\n";
  };

  TrainResult result;
  json manifest = {{"kind", "training"}, {"dataset", fs::absolute(ds.dir).lexically_normal().string()}};
  if (ds.mode == "predict") {
    const int nfolds = ds.manifest.value("folds", 3);
    if (a.fold < 0 || a.fold >= nfolds) throw ConfigError("--fold must be in [0, " + std::to_string(nfolds) + ")");
    std::vector<DatasetRecord> records;
    std::vector<int> folds;
    json test_ids = json::array();
    for (const json& p : ds.entries()) {
      records.push_back(read_record(ds.dir, p.at("id").get<int>()));
      folds.push_back(p.at("fold").get<int>());
      if (folds.back() == a.fold) test_ids.push_back(p.at("id"));
    }
    extra["fold"] = a.fold;
    std::vector<std::string> warnings;
    result = train_prediction_fold(records, folds, a.fold, s.net, s.train, on_epoch, &warnings);
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
    manifest["fold"] = a.fold;
    manifest["test_ids"] = test_ids;
    manifest["warnings"] = warnings;
  } else {
    std::vector<SegmentationCase> cases;
    json train_ids = json::array();
    for (const json& c : ds.entries())
      if (c.value("split", std::string()) == "train") {
        cases.push_back(read_segmentation_case(ds.dir, c.at("id").get<int>()));
        train_ids.push_back(c.at("id"));
      }
    extra["window_stride"] = s.window_stride;
    result = train_segmentation(cases, s.net, s.train, s.window_stride, on_epoch);
    manifest["train_ids"] = train_ids;
  }
  write_checkpoint(out / "checkpoint.stcl", {s.net, result.params, result.optimizer, s.train.epochs, s.train.seed, extra});
  json train_cfg = s.train;
  train_cfg.erase("threads");
  manifest["config"] = {{"network", s.net}, {"train", train_cfg}, {"window_stride", s.window_stride}};
  manifest["seed"] = s.train.seed;
  manifest["epoch_loss"] = result.epoch_loss;
  write_json(out / "manifest.json", manifest);
  std::cout << "final loss " << fmt(result.epoch_loss.back()) << ", checkpoint " << (out / "checkpoint.stcl").string()
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// predict

struct PredictArgs {
  std::string dataset, checkpoint, out;
  std::optional<int> fold;
  double interval_days = 0.0;
  bool all = false;
};

void write_slices(const fs::path& dir, const std::string& stem, const Volume& v,
                  const std::vector<std::string>& channel_names) {
  for (int z = 0; z < v.depth; ++z)
    for (int k = 0; k < v.channels; ++k)
      write_file(dir / (stem + "_s" + std::to_string(z + 1) + "_" + channel_names[static_cast<std::size_t>(k)] + ".pgm"),
                 encode_pgm(v, z, k));
}

void write_cohort(const fs::path& out, std::vector<PatientOutcome> rows, json extra) {
  json report = cohort_report(rows);
  for (auto& [k, v] : extra.items()) report[k] = v;
  write_json(out / "metrics.json", report);
  write_file(out / "metrics.csv", cohort_csv(rows));
  std::cout << "patients " << rows.size() << "  Dice " << report["network"]["dice"]["text"].get<std::string>()
            << "  RVD " << report["network"]["rvd"]["text"].get<std::string>() << "  baseline Dice "
            << report["linear_baseline"]["dice"]["text"].get<std::string>() << "\n";
}

int cmd_predict(const PredictArgs& a) {
  const Checkpoint ck = read_checkpoint(a.checkpoint);
  if (ck.config.mode != Mode::Prediction) throw ConfigError("predict needs a prediction-mode checkpoint");
  const Dataset ds = Dataset::open(a.dataset);
  if (ds.mode != "predict") throw ConfigError("predict needs a prediction dataset");
  if (a.interval_days < 0) throw ConfigError("--interval-days must be positive");
  const int fold = a.fold.value_or(ck.extra.value("fold", 0));
  const int S = ck.extra.value("slices", 5);

  std::vector<int> ids;
  std::vector<int> folds;
  for (const json& p : ds.entries())
    if (a.all || p.at("fold").get<int>() == fold) {
      ids.push_back(p.at("id").get<int>());
      folds.push_back(p.at("fold").get<int>());
    }
  const fs::path out(a.out);
  fs::create_directories(out / "pgm");
  std::vector<PatientOutcome> rows(ids.size());
  std::vector<bool> scored(ids.size(), false);
  const auto t0 = std::chrono::steady_clock::now();
  parallel_for(ids.size(), thread_cap(), [&](std::size_t i) {
    const DatasetRecord r = read_record(ds.dir, ids[i]);
    const Volume v = predict_volume(r, ck.params, ck.config, S, a.interval_days);
    json meta = {{"kind", "prediction"},
                 {"patient", r.id},
                 {"time", 3},
                 {"interval_days", a.interval_days > 0 ? a.interval_days : r.intervals.at(1)},
                 {"channels", {"icvf", "ct", "mask"}}};
    write_file(out / record_filename(r.id, 2), encode_volume(v, meta));
    write_slices(out / "pgm", "patient" + std::to_string(r.id) + "_t3", v, {"icvf", "ct", "mask"});
    if (r.times() >= 3) {
      rows[i] = evaluate_patient(r, v);
      rows[i].fold = folds[i];
      scored[i] = true;
    }
  });
  std::cerr << "predicted " << ids.size() << " patients in " << seconds_since(t0) << " s\n";
  std::vector<PatientOutcome> kept;
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (scored[i]) kept.push_back(rows[i]);
  json extra = {{"checkpoint_epoch", ck.epoch}, {"fold", a.all ? json(nullptr) : json(fold)}};
  extra["interval_days"] = a.interval_days > 0 ? json(a.interval_days) : json(nullptr);
  write_cohort(out, kept, extra);
  return 0;
}

// ---------------------------------------------------------------------------
// segment

struct SegmentArgs {
  std::string dataset, checkpoint, out;
  bool all = false;
};

int cmd_segment(const SegmentArgs& a) {
  const Checkpoint ck = read_checkpoint(a.checkpoint);
  if (ck.config.mode != Mode::Segmentation) throw ConfigError("segment needs a segmentation-mode checkpoint");
  const Dataset ds = Dataset::open(a.dataset);
  if (ds.mode != "segment") throw ConfigError("segment needs a segmentation dataset");
  const int S = ck.extra.value("slices", 10);

  std::vector<int> ids;
  for (const json& c : ds.entries())
    if (a.all || c.value("split", std::string()) == "test") ids.push_back(c.at("id").get<int>());
  const fs::path out(a.out);
  fs::create_directories(out / "pgm");
  std::vector<json> rows(ids.size());
  std::vector<double> dice_all;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const SegmentationCase c = read_segmentation_case(ds.dir, ids[i]);
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<FeatureMap> masks = segment_case(c, ck.params, ck.config, S);
    std::cerr << "case " << ids[i] << " segmented in " << seconds_since(t0) << " s\n";
    const int n = c.images.slices;
    for (int t = 0; t < c.images.times; ++t) {
      const FeatureMap& f0 = masks[static_cast<std::size_t>(t) * n];
      Volume v(n, f0.rows(), f0.cols(), 1);
      for (int s = 0; s < n; ++s) v.set_slice(s, masks[static_cast<std::size_t>(t) * n + s]);
      write_file(out / record_filename(ids[i], t),
                 encode_volume(v, {{"kind", "segmentation"}, {"patient", ids[i]}, {"time", t + 1}}));
      write_slices(out / "pgm", "case" + std::to_string(ids[i]) + "_t" + std::to_string(t + 1), v, {"mask"});
    }
    const std::vector<double> d = segmentation_dice(c, masks);
    json per_time = json::object();
    for (std::size_t k = 0; k < d.size(); ++k) {
      per_time["t" + std::to_string(c.labeled_times[k] + 1)] = d[k];
      dice_all.push_back(d[k]);
    }
    rows[i] = {{"id", ids[i]}, {"dice", per_time}};
  }
  const json report = {{"cases", rows}, {"dice", to_json(summarize(dice_all))}, {"checkpoint_epoch", ck.epoch}};
  write_json(out / "segmentation.json", report);
  std::cout << "cases " << ids.size() << "  Dice at labeled times " << report["dice"]["text"].get<std::string>()
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string pred, dataset, out;
};

int cmd_eval(const EvalArgs& a) {
  const Dataset ds = Dataset::open(a.dataset);
  if (ds.mode != "predict") throw ConfigError("eval needs a prediction dataset");
  std::map<int, int> fold_of;
  for (const json& p : ds.entries()) fold_of[p.at("id").get<int>()] = p.at("fold").get<int>();

  std::vector<int> ids;
  std::vector<int> unmatched;
  for (const auto& entry : fs::directory_iterator(a.pred)) {
    const std::string name = entry.path().filename().string();
    const std::string prefix = "patient", suffix = "_t3.stcl";
    if (name.size() <= prefix.size() + suffix.size() || !name.starts_with(prefix) || !name.ends_with(suffix)) continue;
    int id = -1;
    const char* first = name.data() + prefix.size();
    const char* last = name.data() + name.size() - suffix.size();
    const auto [end, ec] = std::from_chars(first, last, id);
    if (ec != std::errc() || end != last) continue;
    (fold_of.count(id) ? ids : unmatched).push_back(id);
  }
  std::sort(ids.begin(), ids.end());
  std::sort(unmatched.begin(), unmatched.end());
  std::vector<PatientOutcome> rows(ids.size());
  parallel_for(ids.size(), thread_cap(), [&](std::size_t i) {
    const DatasetRecord r = read_record(ds.dir, ids[i]);
    const Volume v = volume_from(read_array(fs::path(a.pred) / record_filename(ids[i], 2)));
    if (!v.same_shape(r.volumes.at(2)))
      throw FormatError(record_filename(ids[i], 2) + ": shape " + v.shape() + " differs from ground truth " +
                        r.volumes[2].shape());
    rows[i] = evaluate_patient(r, v);
    rows[i].fold = fold_of[ids[i]];
  });
  const fs::path out(a.out.empty() ? a.pred : a.out);
  fs::create_directories(out);
  write_cohort(out, rows, {{"unmatched_ids", unmatched}});
  if (!unmatched.empty()) {
    std::cerr << "error: predictions without ground truth for patient ids:";
    for (int id : unmatched) std::cerr << " " << id;
    std::cerr << "\n";
    return kExitConfig;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// gradcheck

int cmd_gradcheck(std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<GradCheckResult> results = gradcheck_all(seed);
  for (const GradCheckResult& r : results)
    std::printf("%-48s %10zu  %.3e%s\n", r.name.c_str(), r.entries, r.max_relative_error,
                r.max_relative_error < kGradTolerance ? "" : "  FAIL");
  const double worst = worst_error(results);
  std::printf("worst relative error %.3e (tolerance %.0e), %.1f s\n", worst, kGradTolerance, seconds_since(t0));
  return worst < kGradTolerance ? 0 : kExitCheck;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatio-temporal ConvLSTM for 4D tumour growth prediction and segmentation"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--seed", gen.seed, "Cohort seed")->capture_default_str();
  g->add_option("--patients,-n", gen.count, "Number of patients (default 33) or cases (default 15)");
  g->add_option("--mode", gen.mode, "predict or segment")->check(CLI::IsMember({"predict", "segment"}))->capture_default_str();
  g->add_option("--folds", gen.folds, "Cross-validation folds")->capture_default_str();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train on a dataset; one checkpoint per epoch");
  t->add_option("--dataset", tr.dataset, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  t->add_option("--out", tr.out, "Output directory")->required();
  t->add_option("--config", tr.config, "JSON config with \"network\" and \"train\" objects")->check(CLI::ExistingFile);
  t->add_option("--seed", tr.seed, "Training seed");
  t->add_option("--fold", tr.fold, "Held-out fold (prediction mode)")->capture_default_str();
  t->add_option("--mode", tr.mode, "Expected dataset mode")->check(CLI::IsMember({"predict", "segment"}));
  t->add_option("--epochs", tr.epochs, "Epochs");
  t->add_option("--batch-size", tr.batch_size, "Mini-batch size");
  t->add_option("--slices", tr.slices, "Sub-sequence length S");
  t->add_option("--samples-per-epoch", tr.samples_per_epoch, "Samples drawn per epoch, 0 for the whole pool");
  t->add_option("--learning-rate", tr.learning_rate, "ADAM learning rate");

  PredictArgs pr;
  auto* p = app.add_subcommand("predict", "Predict time-3 volumes and score them");
  p->add_option("--dataset", pr.dataset, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  p->add_option("--checkpoint", pr.checkpoint, "Checkpoint file")->required();
  p->add_option("--out", pr.out, "Output directory")->required();
  p->add_option("--fold", pr.fold, "Fold to predict (default: the checkpoint's held-out fold)");
  p->add_option("--interval-days", pr.interval_days, "Substitute the t2->t3 interval (days)");
  p->add_flag("--all", pr.all, "Predict every patient");

  SegmentArgs se;
  auto* s = app.add_subcommand("segment", "Segment every slice and phase of the test cases");
  s->add_option("--dataset", se.dataset, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  s->add_option("--checkpoint", se.checkpoint, "Checkpoint file")->required();
  s->add_option("--out", se.out, "Output directory")->required();
  s->add_flag("--all", se.all, "Segment training cases too");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Score raw predictions against a dataset");
  e->add_option("--pred", ev.pred, "Directory of predicted volumes")->required()->check(CLI::ExistingDirectory);
  e->add_option("--dataset", ev.dataset, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  e->add_option("--out", ev.out, "Report directory (default: --pred)");

  std::uint64_t gc_seed = 1;
  auto* c = app.add_subcommand("gradcheck", "Finite-difference check of every backward pass");
  c->add_option("--seed", gc_seed, "Seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*g) return cmd_gen_data(gen);
    if (*t) return cmd_train(tr);
    if (*p) return cmd_predict(pr);
    if (*s) return cmd_segment(se);
    if (*e) return cmd_eval(ev);
    if (*c) return cmd_gradcheck(gc_seed);
  } catch (const ConfigError& err) {
    std::cerr << "configuration error: " << err.what() << "\n";
    return kExitConfig;
  } catch (const ContractError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitConfig;
  } catch (const MetricError& err) {
    std::cerr << "metric error: " << err.what() << "\n";
    return kExitConfig;
  } catch (const FormatError& err) {
    std::cerr << "format error: " << err.what() << "\n";
    return kExitIo;
  } catch (const IoError& err) {
    std::cerr << "I/O error: " << err.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& err) {
    std::cerr << "I/O error: " << err.what() << "\n";
    return kExitIo;
  } catch (const json::exception& err) {
    std::cerr << "format error: " << err.what() << "\n";
    return kExitIo;
  }
  return 0;
}
