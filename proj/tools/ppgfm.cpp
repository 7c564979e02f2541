// ppgfm — PPG self-supervised pipeline driver.
//
// Subcommands: ingest | preprocess | morphology | pretrain | embed | probe |
// report | selftest. Every stage is reproducible from (config, seed, inputs);
// reports embed the config hash for provenance.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "ppgfm/config.hpp"
#include "ppgfm/eval.hpp"
#include "ppgfm/model.hpp"
#include "ppgfm/morphology.hpp"
#include "ppgfm/preprocess.hpp"
#include "ppgfm/ssl.hpp"
#include "ppgfm/stats.hpp"
#include "ppgfm/waveform.hpp"

namespace fs = std::filesystem;
using namespace ppgfm;

namespace {

RunConfig load_config_or_default(const std::string& path_flag) {
  std::string path = path_flag;
  if (path.empty()) {
    if (const char* env = std::getenv("PPGFM_CONFIG")) path = env;
  }
  if (path.empty()) return RunConfig{};
  return load_run_config(path);
}

std::string csv_escape(const std::string& s) {
  if (s.find(',') == std::string::npos && s.find('"') == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

// ---------------------------------------------------------------------------
// ingest
// ---------------------------------------------------------------------------

struct IngestArgs {
  std::string in_dir;
  std::string out_dir;
  int synth_subjects = 0;
  double synth_seconds = 200.0;
  double synth_fs = 125.0;
  bool synth_two_class = false;
  uint64_t seed = 0;
};

int cmd_ingest(const IngestArgs& args) {
  fs::create_directories(args.out_dir);
  int written = 0;

  if (args.synth_subjects > 0) {
    std::mt19937_64 rng(args.seed);
    std::uniform_real_distribution<double> hr_dist(55.0, 95.0);
    std::uniform_real_distribution<double> depth_dist(0.55, 0.9);
    std::uniform_real_distribution<double> noise_dist(0.02, 0.08);

    std::ofstream tasks(fs::path(args.out_dir) / "tasks.csv");
    tasks << "subject_id,class,hr,notch_level,group\n";
    for (int s = 0; s < args.synth_subjects; ++s) {
      // Two-class mode mirrors every other record in time: the secondary
      // lobe then precedes the systolic peak, so the class pair is
      // notch-rich vs notch-free with identical amplitude statistics.
      const bool rich = args.synth_two_class ? (s % 2 == 0) : true;
      const double hr = hr_dist(rng);
      const double depth = depth_dist(rng);
      const double sigma = noise_dist(rng);
      auto synth = synth_ppg(hr, args.synth_fs, args.synth_seconds, depth, sigma,
                             args.seed * 100003ULL + static_cast<uint64_t>(s));
      if (!rich)
        std::reverse(synth.record.samples.begin(), synth.record.samples.end());
      char name[32];
      std::snprintf(name, sizeof(name), "s%04d", s);
      synth.record.subject_id = name;
      synth.record.source_tag = "synth";
      save_record_csv(fs::path(args.out_dir) / (std::string(name) + ".csv"), synth.record);
      const int notch_level = depth < 0.67 ? (depth < 0.61 ? 0 : 1) : 2;
      tasks << name << ',' << (rich ? 1 : 0) << ',' << hr << ',' << notch_level << ','
            << (s % 3 == 0 ? "site_a" : "site_b") << "\n";
      ++written;
    }
    std::cout << "ingest: wrote " << written << " synthetic records + tasks.csv to "
              << args.out_dir << "\n";
    return 0;
  }

  if (args.in_dir.empty())
    throw std::runtime_error("ingest: need --in or --synth-subjects");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(args.in_dir))
    if (entry.path().extension() == ".csv") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    const auto rec = load_record(f, RecordFormat::csv);
    save_record_csv(fs::path(args.out_dir) / f.filename(), rec);
    ++written;
  }
  std::cout << "ingest: validated and copied " << written << " records to "
            << args.out_dir << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// preprocess
// ---------------------------------------------------------------------------

struct PreprocessArgs {
  std::string in_dir;
  std::string out_store;
  std::string report_path;
  std::string config_path;
  double window_s = -1.0;     // overrides config when >= 0
  double flat_thresh = -1.0;  // overrides config when >= 0
};

int cmd_preprocess(const PreprocessArgs& args) {
  RunConfig config = load_config_or_default(args.config_path);
  if (args.window_s > 0.0) config.preprocess.window_s = args.window_s;
  if (args.flat_thresh >= 0.0) config.preprocess.flat_threshold = args.flat_thresh;
  config.validate();

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(args.in_dir))
    if (entry.path().extension() == ".csv" && entry.path().filename() != "tasks.csv")
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("preprocess: no .csv records in " + args.in_dir);

  SegmentStore store;
  store.sampling_rate_hz = config.preprocess.target_hz;
  store.segment_length =
      static_cast<int64_t>(std::llround(config.preprocess.window_s * config.preprocess.target_hz));

  const std::string report_path =
      args.report_path.empty() ? args.out_store + ".report.csv" : args.report_path;
  std::ofstream report(report_path);
  report << "subject_id,windows_total,dropped_flat,dropped_zero_var,emitted\n";

  for (const auto& f : files) {
    const auto rec = load_record(f, RecordFormat::csv);
    const auto result = preprocess_pipeline(rec, config.preprocess);
    for (const auto& seg : result.segments) {
      store.segments.emplace_back(seg.values);
      store.meta.push_back({seg.subject_id, seg.index, rec.source_tag});
    }
    const auto& r = result.report;
    report << csv_escape(r.subject_id) << ',' << r.windows_total << ',' << r.dropped_flat
           << ',' << r.dropped_zero_var << ',' << r.emitted << "\n";
  }
  write_store(args.out_store, store);
  std::cout << "preprocess: " << store.segments.size() << " segments from "
            << files.size() << " records -> " << args.out_store << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// morphology
// ---------------------------------------------------------------------------

struct MorphologyArgs {
  std::string store_path;
  std::string out_csv;
  int bins = 8;
};

int cmd_morphology(const MorphologyArgs& args) {
  const auto store = read_store(args.store_path);
  std::vector<std::optional<MorphologyLabels>> labels;
  labels.reserve(store.segments.size());
  std::vector<double> svri_values;
  for (size_t i = 0; i < store.segments.size(); ++i) {
    Segment seg;
    seg.values = store.segments[i];
    seg.fs_hz = store.sampling_rate_hz;
    seg.subject_id = store.meta[i].subject_id;
    seg.index = store.meta[i].index;
    auto l = segment_morphology(seg);
    if (l) svri_values.push_back(l->svri);
    labels.push_back(std::move(l));
  }

  std::optional<BinEdges> edges;
  if (static_cast<int>(svri_values.size()) >= args.bins) {
    try {
      edges = fit_bins(svri_values, args.bins);
    } catch (const std::invalid_argument&) {
      // not enough distinct values; bins stay empty
    }
  }

  std::ofstream out(args.out_csv);
  if (!out.good()) throw std::runtime_error("cannot write " + args.out_csv);
  out << "subject_id,index,svri,ipa,sqi,bin\n";
  out.precision(10);
  int64_t labeled = 0;
  for (size_t i = 0; i < store.segments.size(); ++i) {
    out << csv_escape(store.meta[i].subject_id) << ',' << store.meta[i].index << ',';
    if (labels[i]) {
      out << labels[i]->svri << ',';
      if (labels[i]->ipa) out << *labels[i]->ipa;
      out << ',' << labels[i]->sqi << ',';
      if (edges) out << assign_bin(labels[i]->svri, *edges);
      ++labeled;
    } else {
      out << ",,,";
    }
    out << "\n";
  }
  std::cout << "morphology: labeled " << labeled << "/" << store.segments.size()
            << " segments -> " << args.out_csv << "\n";
  return 0;
}

std::vector<std::optional<MorphologyLabels>> read_labels_csv(const std::string& path,
                                                             size_t expected) {
  std::ifstream in(path);
  if (!in.good()) throw std::runtime_error("cannot open labels: " + path);
  std::string line;
  std::getline(in, line);  // header
  std::vector<std::optional<MorphologyLabels>> labels;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    cells.resize(6);
    if (cells[2].empty()) {
      labels.push_back(std::nullopt);
      continue;
    }
    MorphologyLabels l;
    l.svri = std::stod(cells[2]);
    if (!cells[3].empty()) l.ipa = std::stod(cells[3]);
    l.sqi = std::stod(cells[4]);
    if (!cells[5].empty()) l.svri_bin = std::stoi(cells[5]);
    labels.push_back(l);
  }
  if (labels.size() != expected)
    throw std::runtime_error("labels row count does not match the store");
  return labels;
}

// ---------------------------------------------------------------------------
// pretrain
// ---------------------------------------------------------------------------

struct PretrainArgs {
  std::string mode = "s";
  std::string store_path;
  std::string labels_path;
  std::string config_path;
  std::string out_dir;
  int64_t steps = -1;
  int64_t batch_pairs = -1;
  double alpha = -1.0;
  double temperature = -1.0;
  double lr = -1.0;
  int64_t seed = -1;
};

int cmd_pretrain(const PretrainArgs& args) {
  RunConfig config = load_config_or_default(args.config_path);
  TrainConfig tc = config.train;
  tc.mode = args.mode == "p" ? ContrastiveMode::participant : ContrastiveMode::morphology;
  tc.augment = tc.mode == ContrastiveMode::participant ? config.augment_participant
                                                       : config.augment_morphology;
  if (args.steps > 0) tc.steps = args.steps;
  if (args.batch_pairs > 0) tc.batch_pairs = args.batch_pairs;
  if (args.alpha >= 0.0) tc.alpha = args.alpha;
  if (args.temperature > 0.0) tc.temperature = args.temperature;
  if (args.lr > 0.0) tc.lr = args.lr;
  if (args.seed >= 0) tc.seed = static_cast<uint64_t>(args.seed);
  tc.validate();  // config errors fire before any data is touched

  const auto store = read_store(args.store_path);
  TrainDataset dataset;
  if (tc.mode == ContrastiveMode::morphology) {
    if (args.labels_path.empty())
      throw std::runtime_error("pretrain --mode s needs --labels");
    dataset = TrainDataset::from_store(
        store, read_labels_csv(args.labels_path, store.segments.size()));
  } else {
    dataset = TrainDataset::from_store(store);
  }

  ModelConfig mc = config.model;
  mc.encoder.input_len = store.segment_length;

  fs::create_directories(args.out_dir);
  {
    RunConfig effective = config;
    effective.train = tc;
    effective.model = mc;
    std::ofstream cfg_out(fs::path(args.out_dir) / "config.json");
    cfg_out << dump_run_config(effective) << "\n";
    std::ofstream hash_out(fs::path(args.out_dir) / "config.hash");
    hash_out << config_hash(effective) << "\n";
  }

  const auto result = train(dataset, tc, mc, fs::path(args.out_dir));
  std::cout << "pretrain: " << tc.steps << " steps done, final loss "
            << result.log.back().total << ", checkpoints in " << args.out_dir << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// embed
// ---------------------------------------------------------------------------

struct EmbedArgs {
  std::string store_path;
  std::string ckpt_path;
  bool stat_features_mode = false;
  std::string out_path;
};

int cmd_embed(const EmbedArgs& args) {
  const auto store = read_store(args.store_path);
  EmbeddingSet set;
  if (args.stat_features_mode) {
    set.dim = 7;
    for (size_t i = 0; i < store.segments.size(); ++i) {
      Segment seg;
      seg.values = store.segments[i];
      seg.fs_hz = store.sampling_rate_hz;
      const auto f = stat_features(seg);
      set.rows.emplace_back(f.begin(), f.end());
      set.subject_ids.push_back(store.meta[i].subject_id);
      set.segment_indices.push_back(store.meta[i].index);
    }
  } else {
    if (args.ckpt_path.empty()) throw std::runtime_error("embed: need --ckpt or --stat-features");
    auto ckpt = load_checkpoint(args.ckpt_path);
    set = extract_embeddings(*ckpt.model, store);
  }
  write_embeddings(args.out_path, set);
  std::cout << "embed: " << set.size() << " x " << set.dim << " -> " << args.out_path
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// probe
// ---------------------------------------------------------------------------

struct TaskTable {
  std::vector<std::string> columns;
  std::map<std::string, std::vector<std::string>> by_subject;  // raw cells
};

TaskTable read_tasks_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in.good()) throw std::runtime_error("cannot open tasks: " + path);
  TaskTable table;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty tasks file");
  std::stringstream hs(line);
  std::string cell;
  while (std::getline(hs, cell, ',')) table.columns.push_back(cell);
  if (table.columns.empty() || table.columns[0] != "subject_id")
    throw std::runtime_error("tasks csv must start with a subject_id column");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    cells.resize(table.columns.size());
    table.by_subject[cells[0]] = cells;
  }
  return table;
}

size_t task_column(const TaskTable& table, const std::string& name) {
  for (size_t c = 1; c < table.columns.size(); ++c)
    if (table.columns[c] == name) return c;
  throw std::runtime_error("task column not found: " + name);
}

struct ProbeArgs {
  std::string emb_path;
  std::string tasks_path;
  std::string task;
  std::string type = "auto";
  std::string split = "60/20/20";
  std::string group_by;
  std::string report_dir;
  std::string config_path;
  uint64_t seed = 7;
  bool pool_subjects = false;
};

TaskType infer_type(const std::vector<double>& values) {
  bool binary = true, integral = true;
  std::set<double> distinct;
  for (double v : values) {
    distinct.insert(v);
    if (v != 0.0 && v != 1.0) binary = false;
    if (v != std::floor(v) || v < 0.0) integral = false;
  }
  if (binary) return TaskType::binary;
  if (integral && distinct.size() <= 20 && distinct.size() > 2) return TaskType::multiclass;
  return TaskType::regression;
}

int cmd_probe(const ProbeArgs& args) {
  RunConfig config = load_config_or_default(args.config_path);

  EmbeddingSet set = read_embeddings(args.emb_path);
  const auto tasks = read_tasks_csv(args.tasks_path);
  const size_t col = task_column(tasks, args.task);

  set.labels.clear();
  for (const auto& subject : set.subject_ids) {
    const auto it = tasks.by_subject.find(subject);
    if (it == tasks.by_subject.end())
      throw std::runtime_error("no task row for subject " + subject);
    set.labels.push_back(std::stod(it->second[col]));
  }

  ProbeOptions options;
  options.seed = args.seed;
  options.bootstrap_n = config.eval.bootstrap_n;
  options.cv_folds = config.eval.cv_folds;
  options.pool_subjects = args.pool_subjects || config.eval.pool_subjects;
  {
    std::array<double, 3> ratios{};
    if (std::sscanf(args.split.c_str(), "%lf/%lf/%lf", &ratios[0], &ratios[1],
                    &ratios[2]) != 3)
      throw std::runtime_error("bad --split, expected e.g. 60/20/20");
    double sum = ratios[0] + ratios[1] + ratios[2];
    for (auto& r : ratios) r /= sum;
    options.ratios = ratios;
  }

  TaskType type;
  if (args.type == "binary") type = TaskType::binary;
  else if (args.type == "regression") type = TaskType::regression;
  else if (args.type == "multiclass") type = TaskType::multiclass;
  else type = infer_type(set.labels);

  const auto report = run_probe(set, args.task, type, options);

  fs::create_directories(args.report_dir);
  const std::string hash = config_hash(config);
  write_reports_csv({report}, fs::path(args.report_dir) / (args.task + "_report.csv"), hash);
  write_reports_markdown({report}, fs::path(args.report_dir) / (args.task + "_report.md"),
                         hash);

  if (!args.group_by.empty()) {
    // Per-group metric table over the test rows of the probe's split.
    const size_t gcol = task_column(tasks, args.group_by);
    const EmbeddingSet working = options.pool_subjects ? pool_by_subject(set) : set;
    const auto split = subject_split(working, options.ratios, options.seed);
    // Refit on train rows with the selected type, then group the test rows.
    std::vector<std::vector<double>> x_train;
    std::vector<double> y_train;
    for (int64_t i : split.train_rows) {
      x_train.push_back(working.rows[static_cast<size_t>(i)]);
      y_train.push_back(working.labels[static_cast<size_t>(i)]);
    }
    std::vector<double> y_test, preds;
    std::vector<std::string> groups;
    if (type == TaskType::regression) {
      const auto model = ridge_fit(x_train, y_train, {0.1, 1.0, 10.0, 100.0},
                                   options.cv_folds, options.seed);
      for (int64_t i : split.test_rows) {
        preds.push_back(model.predict(working.rows[static_cast<size_t>(i)]));
        y_test.push_back(working.labels[static_cast<size_t>(i)]);
        groups.push_back(tasks.by_subject.at(working.subject_ids[static_cast<size_t>(i)])[gcol]);
      }
      const auto rows = grouped_metrics(y_test, preds, groups, metric_mae, 10,
                                        options.bootstrap_n, options.seed);
      std::ofstream out(fs::path(args.report_dir) / (args.task + "_groups.csv"));
      out << "group,n,metric,point,ci_lo,ci_hi,below_min_size\n";
      for (const auto& r : rows)
        out << csv_escape(r.group) << ',' << r.n << ",mae," << r.point << ',' << r.lo
            << ',' << r.hi << ',' << (r.below_min_size ? 1 : 0) << "\n";
    } else {
      const auto model = logistic_fit(x_train, y_train, {}, options.cv_folds, options.seed);
      for (int64_t i : split.test_rows) {
        preds.push_back(model.predict_proba(working.rows[static_cast<size_t>(i)]));
        y_test.push_back(working.labels[static_cast<size_t>(i)]);
        groups.push_back(tasks.by_subject.at(working.subject_ids[static_cast<size_t>(i)])[gcol]);
      }
      const auto rows = grouped_metrics(y_test, preds, groups, metric_auroc, 10,
                                        options.bootstrap_n, options.seed);
      std::ofstream out(fs::path(args.report_dir) / (args.task + "_groups.csv"));
      out << "group,n,metric,point,ci_lo,ci_hi,below_min_size\n";
      for (const auto& r : rows)
        out << csv_escape(r.group) << ',' << r.n << ",auroc," << r.point << ',' << r.lo
            << ',' << r.hi << ',' << (r.below_min_size ? 1 : 0) << "\n";
    }
  }

  char line[160];
  std::snprintf(line, sizeof(line), "probe %s [%s]: %s = %.4f [%.4f-%.4f], n_test=%lld",
                report.task.c_str(), report.task_type.c_str(), report.metric_name.c_str(),
                report.point, report.ci_lo, report.ci_hi,
                static_cast<long long>(report.n_test));
  std::cout << line << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

struct ReportArgs {
  std::string in_dir;
  std::string emb_path;
  std::string distances;
  std::string out_dir;
  std::string config_path;
};

int cmd_report(const ReportArgs& args) {
  fs::create_directories(args.out_dir);
  RunConfig config = load_config_or_default(args.config_path);
  const std::string hash = config_hash(config);

  if (!args.in_dir.empty()) {
    // Merge per-task probe CSVs into one table.
    std::vector<std::string> rows;
    std::string header;
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(args.in_dir))
      if (entry.path().extension() == ".csv" &&
          entry.path().string().find("_report") != std::string::npos)
        files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      std::ifstream in(f);
      std::string line;
      std::getline(in, line);
      if (header.empty()) header = line;
      while (std::getline(in, line))
        if (!line.empty()) rows.push_back(line);
    }
    if (header.empty()) throw std::runtime_error("report: no probe reports in " + args.in_dir);
    std::ofstream out(fs::path(args.out_dir) / "combined_report.csv");
    out << header << "\n";
    for (const auto& r : rows) out << r << "\n";
    std::cout << "report: merged " << rows.size() << " probe rows\n";
  }

  if (!args.emb_path.empty()) {
    const auto set = read_embeddings(args.emb_path);
    const auto metric =
        args.distances == "euclidean" ? DistanceMetric::euclidean : DistanceMetric::cosine;
    const auto dist = pairwise_distances(set, metric);
    std::ofstream hist(fs::path(args.out_dir) / "distances_hist.csv");
    hist << "bin_lo,bin_hi,count\n";
    for (size_t b = 0; b < dist.histogram.size(); ++b)
      hist << dist.bin_edges[b] << ',' << dist.bin_edges[b + 1] << ',' << dist.histogram[b]
           << "\n";
    std::ofstream raw(fs::path(args.out_dir) / "distances_raw.csv");
    raw << "subject_a,subject_b,distance\n";
    raw.precision(10);
    for (size_t i = 0; i < dist.values.size(); ++i)
      raw << csv_escape(dist.pairs[i].first) << ',' << csv_escape(dist.pairs[i].second)
          << ',' << dist.values[i] << "\n";
    std::cout << "report: " << dist.values.size() << " subject pairs, histogram in "
              << args.out_dir << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// selftest
// ---------------------------------------------------------------------------

double selftest_ntxent_bruteforce(const std::vector<std::vector<double>>& z, double tau) {
  const size_t rows = z.size();
  auto cosine = [&](size_t a, size_t b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t j = 0; j < z[a].size(); ++j) {
      dot += z[a][j] * z[b][j];
      na += z[a][j] * z[a][j];
      nb += z[b][j] * z[b][j];
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
  };
  double total = 0.0;
  for (size_t k = 0; k < rows / 2; ++k) {
    for (int dir = 0; dir < 2; ++dir) {
      const size_t i = 2 * k + static_cast<size_t>(dir);
      const size_t j = 2 * k + static_cast<size_t>(1 - dir);
      double denom = 0.0;
      for (size_t v = 0; v < rows; ++v)
        if (v != i) denom += std::exp(cosine(i, v) / tau);
      total += -std::log(std::exp(cosine(i, j) / tau) / denom);
    }
  }
  return total / static_cast<double>(rows);
}

int cmd_selftest() {
  int failures = 0;
  auto check = [&](bool ok, const std::string& what) {
    std::cout << (ok ? "[PASS] " : "[FAIL] ") << what << "\n";
    if (!ok) ++failures;
  };

  {  // finite-difference check on a conv+relu+mean composite
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    Tensor<double> xt({2, 2, 9}), wt({3, 2, 3}), bt({3});
    for (int64_t i = 0; i < xt.numel(); ++i) xt[i] = dist(rng);
    for (int64_t i = 0; i < wt.numel(); ++i) wt[i] = dist(rng);
    for (int64_t i = 0; i < bt.numel(); ++i) bt[i] = dist(rng);
    auto forward = [&](const Tensor<double>& x, const Tensor<double>& w,
                       const Tensor<double>& b, bool need_grad,
                       ad::Var<double>* gx) {
      auto xv = ad::Var<double>::leaf(x, need_grad);
      auto wv = ad::Var<double>::leaf(w, false);
      auto bv = ad::Var<double>::leaf(b, false);
      auto loss = ad::mean_all(ad::relu(ad::conv1d(xv, wv, bv, 2, 1)));
      if (gx) *gx = xv;
      return loss;
    };
    ad::Var<double> xv;
    auto loss = forward(xt, wt, bt, true, &xv);
    ad::backward(loss);
    double worst = 0.0;
    for (int64_t e = 0; e < xt.numel(); ++e) {
      const double h = 1e-6;
      Tensor<double> plus = xt, minus = xt;
      plus[e] += h;
      minus[e] -= h;
      const double numeric = (forward(plus, wt, bt, false, nullptr).value().item() -
                              forward(minus, wt, bt, false, nullptr).value().item()) /
                             (2.0 * h);
      worst = std::max(worst, std::abs(numeric - xv.grad()[e]) /
                                  std::max(1.0, std::abs(xv.grad()[e])));
    }
    check(worst < 1e-4, "conv1d gradient vs central differences");
  }

  {  // loss-oracle equivalence
    std::mt19937_64 rng(2);
    std::normal_distribution<double> dist(0.0, 1.0);
    bool ok = true;
    for (int rep = 0; rep < 20 && ok; ++rep) {
      const int64_t rows = 2 * (1 + rep % 6);
      Tensor<double> z({rows, 5});
      std::vector<std::vector<double>> zr(static_cast<size_t>(rows),
                                          std::vector<double>(5));
      for (int64_t i = 0; i < rows; ++i)
        for (int64_t j = 0; j < 5; ++j) {
          z[i * 5 + j] = dist(rng);
          zr[static_cast<size_t>(i)][static_cast<size_t>(j)] = z[i * 5 + j];
        }
      const double fast = ntxent(ad::Var<double>::leaf(z), 0.5).value().item();
      ok = std::abs(fast - selftest_ntxent_bruteforce(zr, 0.5)) < 1e-6;
    }
    check(ok, "vectorized contrastive loss vs double-loop formula");
  }

  {  // Adam sanity
    auto w = ad::Var<float>::leaf(Tensor<float>({1}, 0.0f), true);
    nn::AdamConfig<float> cfg;
    cfg.lr = 0.1f;
    nn::Adam<float> adam({{"w", w}}, cfg);
    w.grad()[0] = 1.0f;
    adam.step();
    check(std::abs(w.value()[0] + 0.1f) < 1e-4f, "adam bias-corrected first step");
  }

  if (failures == 0) std::cout << "selftest: all checks passed\n";
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PPG morphology-aware self-supervised learning toolkit"};
  app.require_subcommand(1);

  IngestArgs ingest;
  auto* c_ingest = app.add_subcommand("ingest", "validate raw records or generate a synthetic corpus");
  c_ingest->add_option("--in", ingest.in_dir, "directory of raw .csv records");
  c_ingest->add_option("--out", ingest.out_dir, "output directory")->required();
  c_ingest->add_option("--synth-subjects", ingest.synth_subjects, "generate N synthetic subjects");
  c_ingest->add_option("--synth-seconds", ingest.synth_seconds, "record length per subject");
  c_ingest->add_option("--synth-fs", ingest.synth_fs, "synthetic sampling rate (Hz)");
  c_ingest->add_flag("--synth-two-class", ingest.synth_two_class,
                     "alternate notch-rich / notch-poor subjects");
  c_ingest->add_option("--seed", ingest.seed, "generator seed");

  PreprocessArgs preprocess;
  auto* c_pre = app.add_subcommand("preprocess", "filter, window, reject, normalize, resample");
  c_pre->add_option("--in", preprocess.in_dir, "directory of .csv records")->required();
  c_pre->add_option("--out", preprocess.out_store, "output segment store")->required();
  c_pre->add_option("--window-s", preprocess.window_s, "window length in seconds");
  c_pre->add_option("--flat-thresh", preprocess.flat_thresh, "flatline rejection threshold");
  c_pre->add_option("--report", preprocess.report_path, "drop-count report path");
  c_pre->add_option("--config", preprocess.config_path, "run config JSON");

  MorphologyArgs morph;
  auto* c_morph = app.add_subcommand("morphology", "per-segment sVRI/IPA/SQI labels");
  c_morph->add_option("--store", morph.store_path, "segment store")->required();
  c_morph->add_option("--out", morph.out_csv, "labels CSV")->required();
  c_morph->add_option("--bins", morph.bins, "sVRI bin count");

  PretrainArgs pretrain_args;
  auto* c_train = app.add_subcommand("pretrain", "contrastive pre-training");
  c_train->add_option("--mode", pretrain_args.mode, "p (participant) or s (morphology)")
      ->check(CLI::IsMember({"p", "s"}));
  c_train->add_option("--store", pretrain_args.store_path, "segment store")->required();
  c_train->add_option("--labels", pretrain_args.labels_path, "morphology labels CSV");
  c_train->add_option("--config", pretrain_args.config_path, "run config JSON");
  c_train->add_option("--out", pretrain_args.out_dir, "checkpoint directory")->required();
  c_train->add_option("--steps", pretrain_args.steps, "training steps");
  c_train->add_option("--batch-pairs", pretrain_args.batch_pairs, "positive pairs per batch");
  c_train->add_option("--alpha", pretrain_args.alpha, "contrastive/head loss mix");
  c_train->add_option("--temperature", pretrain_args.temperature, "NT-Xent temperature");
  c_train->add_option("--lr", pretrain_args.lr, "learning rate");
  c_train->add_option("--seed", pretrain_args.seed, "training seed");

  EmbedArgs embed;
  auto* c_embed = app.add_subcommand("embed", "extract embeddings or the stat-features baseline");
  c_embed->add_option("--store", embed.store_path, "segment store")->required();
  c_embed->add_option("--ckpt", embed.ckpt_path, "model checkpoint");
  c_embed->add_flag("--stat-features", embed.stat_features_mode,
                    "emit the 7-dim statistical baseline instead of a model");
  c_embed->add_option("--out", embed.out_path, "output embeddings file")->required();

  ProbeArgs probe;
  auto* c_probe = app.add_subcommand("probe", "linear evaluation of one task");
  c_probe->add_option("--emb", probe.emb_path, "embeddings file")->required();
  c_probe->add_option("--labels", probe.tasks_path, "tasks CSV (subject_id,task,...)")->required();
  c_probe->add_option("--task", probe.task, "task column name")->required();
  c_probe->add_option("--type", probe.type, "auto|binary|regression|multiclass")
      ->check(CLI::IsMember({"auto", "binary", "regression", "multiclass"}));
  c_probe->add_option("--split", probe.split, "train/val/test ratios, e.g. 60/20/20");
  c_probe->add_option("--group-by", probe.group_by, "emit per-group metrics for this column");
  c_probe->add_option("--report", probe.report_dir, "report output directory")->required();
  c_probe->add_option("--seed", probe.seed, "split/bootstrap seed");
  c_probe->add_flag("--pool-subjects", probe.pool_subjects, "pool embeddings per subject first");
  c_probe->add_option("--config", probe.config_path, "run config JSON");

  ReportArgs report;
  auto* c_report = app.add_subcommand("report", "merge probe reports / embedding distances");
  c_report->add_option("--in", report.in_dir, "directory of probe report CSVs");
  c_report->add_option("--emb", report.emb_path, "embeddings for pairwise distances");
  c_report->add_option("--distances", report.distances, "cosine|euclidean")
      ->check(CLI::IsMember({"cosine", "euclidean"}));
  c_report->add_option("--out", report.out_dir, "output directory")->required();
  c_report->add_option("--config", report.config_path, "run config JSON");

  auto* c_selftest = app.add_subcommand("selftest", "gradient and loss-oracle checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // parse problems exit 2; --help exits 0
  }

  try {
    if (c_ingest->parsed()) return cmd_ingest(ingest);
    if (c_pre->parsed()) return cmd_preprocess(preprocess);
    if (c_morph->parsed()) return cmd_morphology(morph);
    if (c_train->parsed()) return cmd_pretrain(pretrain_args);
    if (c_embed->parsed()) return cmd_embed(embed);
    if (c_probe->parsed()) return cmd_probe(probe);
    if (c_report->parsed()) return cmd_report(report);
    if (c_selftest->parsed()) return cmd_selftest();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
