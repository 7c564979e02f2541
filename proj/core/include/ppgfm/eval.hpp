#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ppgfm/model.hpp"
#include "ppgfm/preprocess.hpp"
#include "ppgfm/waveform.hpp"

namespace ppgfm {

// ---------------------------------------------------------------------------
// Embeddings
// ---------------------------------------------------------------------------

struct EmbeddingSet {
  int64_t dim = 0;
  std::vector<std::vector<double>> rows;
  std::vector<std::string> subject_ids;
  std::vector<int64_t> segment_indices;  // may be empty
  std::vector<double> labels;            // numeric task labels; may be empty

  int64_t size() const { return static_cast<int64_t>(rows.size()); }
  void check_consistent() const;
};

/// Eval-mode forward over the whole store; rows are the projection output Z.
/// Throws if the store's segment length does not match the encoder input.
EmbeddingSet extract_embeddings(SslModel<float>& model, const SegmentStore& store,
                                int64_t batch_size = 256);

/// Arithmetic mean of each subject's rows. When labels are present they must
/// be constant within a subject.
EmbeddingSet pool_by_subject(const EmbeddingSet& set);

/// "PPGE" binary: u16 version, u32 N, u32 D, little-endian f32 rows, plus a
/// JSON-lines sidecar (subject_id, index) at <path>.meta.
void write_embeddings(const std::filesystem::path& path, const EmbeddingSet& set);
EmbeddingSet read_embeddings(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Splits and features
// ---------------------------------------------------------------------------

struct SubjectSplit {
  std::vector<int64_t> train_rows, val_rows, test_rows;
  std::vector<std::string> train_subjects, val_subjects, test_subjects;
};

/// Disjoint subject-level partition with largest-remainder apportionment;
/// deterministic under seed.
SubjectSplit subject_split(const EmbeddingSet& set,
                           const std::array<double, 3>& ratios, uint64_t seed);

/// mean, median, max, min, p25, p50, p75 (linear-interpolation percentiles).
std::array<double, 7> stat_features(const std::vector<double>& segment);
std::array<double, 7> stat_features(const Segment& segment);

// ---------------------------------------------------------------------------
// Linear probes
// ---------------------------------------------------------------------------

/// Per-feature affine map fitted on training rows.
struct Standardizer {
  std::vector<double> mean, std;
  void fit(const std::vector<std::vector<double>>& x);
  std::vector<double> apply(const std::vector<double>& x) const;
};

struct RidgeModel {
  Standardizer scaler;
  std::vector<double> weights;
  double intercept = 0.0;
  double alpha = 1.0;
  double predict(const std::vector<double>& x) const;
};

/// Closed-form ridge regression on standardized features; alpha selected by
/// k-fold cross-validation (mean absolute error) over the grid.
RidgeModel ridge_fit(const std::vector<std::vector<double>>& x,
                     const std::vector<double>& y,
                     const std::vector<double>& alphas = {0.1, 1.0, 10.0, 100.0},
                     int folds = 5, uint64_t seed = 0);

enum class Penalty { l2, l1 };

struct LogisticModel {
  Standardizer scaler;
  std::vector<double> weights;
  double intercept = 0.0;
  double c = 1.0;
  Penalty penalty = Penalty::l2;
  int max_iter = 100;
  double predict_proba(const std::vector<double>& x) const;
};

struct LogisticGrid {
  std::vector<double> c_values = {0.01, 0.1, 1.0, 10.0, 100.0};
  std::vector<Penalty> penalties = {Penalty::l2, Penalty::l1};
  std::vector<int> max_iters = {100, 200};
};

/// Regularized logistic regression: quasi-Newton (L-BFGS) for l2, proximal
/// gradient for l1; hyperparameters selected by k-fold CV on AUROC.
/// Labels must be 0/1 with both classes present.
LogisticModel logistic_fit(const std::vector<std::vector<double>>& x,
                           const std::vector<double>& y,
                           const LogisticGrid& grid = {}, int folds = 5,
                           uint64_t seed = 0);

struct MultinomialModel {
  Standardizer scaler;
  int64_t n_classes = 0;
  std::vector<double> weights;  // [n_classes x dim], row-major
  std::vector<double> intercepts;
  double c = 1.0;
  std::vector<double> predict_proba(const std::vector<double>& x) const;
  int64_t predict(const std::vector<double>& x) const;
};

/// Softmax regression with l2 penalty (multiclass probe); C selected by
/// k-fold CV on accuracy. Labels are class codes 0..K-1.
MultinomialModel multinomial_logistic_fit(
    const std::vector<std::vector<double>>& x, const std::vector<double>& y,
    const std::vector<double>& c_values = {0.01, 0.1, 1.0, 10.0, 100.0},
    int folds = 5, uint64_t seed = 0);

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Mann-Whitney AUROC; ties count one half. Throws if a class is missing.
double metric_auroc(const std::vector<double>& scores,
                    const std::vector<double>& labels);
double metric_mae(const std::vector<double>& pred, const std::vector<double>& truth);
/// (100/n) * sum |p-t| / ((|p|+|t|)/2), pairs with |p|+|t| = 0 skipped.
double metric_smape(const std::vector<double>& pred, const std::vector<double>& truth);
double metric_f1(const std::vector<double>& pred_class,
                 const std::vector<double>& truth);
double metric_r2(const std::vector<double>& pred, const std::vector<double>& truth);
double metric_accuracy(const std::vector<double>& pred_class,
                       const std::vector<double>& truth);

using MetricFn =
    std::function<double(const std::vector<double>&, const std::vector<double>&)>;

enum class BootstrapMode { sampled, exhaustive };

/// Percentile bootstrap CI (2.5/97.5) over joint resamples of
/// (truth, prediction); resamples on which the metric is undefined are
/// redrawn. Exhaustive mode enumerates every index tuple (tiny n only).
std::pair<double, double> bootstrap_ci(const std::vector<double>& y_true,
                                       const std::vector<double>& y_pred,
                                       const MetricFn& metric, int n = 500,
                                       uint64_t seed = 0,
                                       BootstrapMode mode = BootstrapMode::sampled);

/// Two-sided Wilcoxon signed-rank p-value for paired samples: exact sign
/// enumeration for n <= 12 nonzero differences, normal approximation with tie
/// and continuity corrections above.
double wilcoxon_signed_rank(const std::vector<double>& a,
                            const std::vector<double>& b);

enum class DistanceMetric { cosine, euclidean };

struct PairwiseDistances {
  std::vector<double> values;  // one per unordered subject pair
  std::vector<std::pair<std::string, std::string>> pairs;
  std::vector<int64_t> histogram;
  std::vector<double> bin_edges;  // histogram.size() + 1 edges
};

/// Distances between subject-pooled embedding rows plus a fixed-width
/// histogram for plotting.
PairwiseDistances pairwise_distances(const EmbeddingSet& set, DistanceMetric metric,
                                     int histogram_bins = 30);

struct GroupMetricRow {
  std::string group;
  int64_t n = 0;
  double point = 0.0, lo = 0.0, hi = 0.0;
  bool below_min_size = false;
};

/// Metric and bootstrap CI within each group; groups under min_size are
/// flagged rather than dropped.
std::vector<GroupMetricRow> grouped_metrics(const std::vector<double>& y_true,
                                            const std::vector<double>& y_pred,
                                            const std::vector<std::string>& groups,
                                            const MetricFn& metric,
                                            int64_t min_size = 10,
                                            int bootstrap_n = 500, uint64_t seed = 0);

// ---------------------------------------------------------------------------
// Probe harness
// ---------------------------------------------------------------------------

enum class TaskType { binary, regression, multiclass };

struct ProbeOptions {
  std::array<double, 3> ratios = {0.6, 0.2, 0.2};
  uint64_t seed = 7;
  int bootstrap_n = 500;
  bool pool_subjects = false;
  int cv_folds = 5;
};

struct ProbeReport {
  std::string task;
  std::string task_type;
  std::string metric_name;
  std::string probe_name;
  std::string hyperparams;
  double point = 0.0;
  double ci_lo = 0.0, ci_hi = 0.0;
  int64_t n_test = 0;
  uint64_t seed = 0;
  std::string note;
};

/// Subject-split linear evaluation of one task. The set's labels field holds
/// the task values; the split's train/test subject disjointness is asserted
/// at run time.
ProbeReport run_probe(const EmbeddingSet& set, const std::string& task_name,
                      TaskType type, const ProbeOptions& options);

/// Report emission: CSV plus a markdown table with the CI rendered as
/// "x.xx [lo-hi]".
void write_reports_csv(const std::vector<ProbeReport>& reports,
                       const std::filesystem::path& path,
                       const std::string& config_hash);
void write_reports_markdown(const std::vector<ProbeReport>& reports,
                            const std::filesystem::path& path,
                            const std::string& config_hash);

}  // namespace ppgfm
