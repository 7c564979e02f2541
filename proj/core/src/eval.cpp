#include "ppgfm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "ppgfm/autodiff.hpp"
#include "ppgfm/blas.hpp"
#include "ppgfm/stats.hpp"

namespace ppgfm {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::runtime_error(msg);
}

}  // namespace

// ---------------------------------------------------------------------------
// Embeddings
// ---------------------------------------------------------------------------

void EmbeddingSet::check_consistent() const {
  const size_t n = rows.size();
  if (subject_ids.size() != n)
    throw std::invalid_argument("embedding set: subject id count mismatch");
  if (!segment_indices.empty() && segment_indices.size() != n)
    throw std::invalid_argument("embedding set: segment index count mismatch");
  if (!labels.empty() && labels.size() != n)
    throw std::invalid_argument("embedding set: label count mismatch");
  for (const auto& r : rows)
    if (static_cast<int64_t>(r.size()) != dim)
      throw std::invalid_argument("embedding set: ragged rows");
}

EmbeddingSet extract_embeddings(SslModel<float>& model, const SegmentStore& store,
                                int64_t batch_size) {
  if (store.segment_length != model.config().encoder.input_len)
    throw std::invalid_argument(
        "extract_embeddings: store segment length does not match encoder input");
  EmbeddingSet set;
  set.dim = model.config().encoder.embedding_dim;

  ad::NoGradGuard guard;
  nn::Ctx<float> ctx{false, nullptr};
  const int64_t n = static_cast<int64_t>(store.segments.size());
  const int64_t len = store.segment_length;
  for (int64_t start = 0; start < n; start += batch_size) {
    const int64_t b = std::min(batch_size, n - start);
    Tensor<float> x({b, 1, len});
    for (int64_t i = 0; i < b; ++i)
      std::copy(store.segments[static_cast<size_t>(start + i)].begin(),
                store.segments[static_cast<size_t>(start + i)].end(),
                x.data() + i * len);
    auto z = model.project(model.encode(ad::Var<float>::leaf(std::move(x), false), ctx));
    for (int64_t i = 0; i < b; ++i) {
      std::vector<double> row(static_cast<size_t>(set.dim));
      for (int64_t j = 0; j < set.dim; ++j)
        row[static_cast<size_t>(j)] = z.value()[i * set.dim + j];
      set.rows.push_back(std::move(row));
      set.subject_ids.push_back(store.meta[static_cast<size_t>(start + i)].subject_id);
      set.segment_indices.push_back(store.meta[static_cast<size_t>(start + i)].index);
    }
  }
  return set;
}

EmbeddingSet pool_by_subject(const EmbeddingSet& set) {
  set.check_consistent();
  if (set.subject_ids.empty())
    throw std::invalid_argument("pool_by_subject: empty embedding set");

  std::map<std::string, std::vector<int64_t>> groups;
  for (int64_t i = 0; i < set.size(); ++i)
    groups[set.subject_ids[static_cast<size_t>(i)]].push_back(i);

  EmbeddingSet out;
  out.dim = set.dim;
  for (const auto& [subject, idx] : groups) {
    std::vector<double> mean(static_cast<size_t>(set.dim), 0.0);
    for (int64_t i : idx)
      for (int64_t j = 0; j < set.dim; ++j)
        mean[static_cast<size_t>(j)] += set.rows[static_cast<size_t>(i)][static_cast<size_t>(j)];
    for (auto& v : mean) v /= static_cast<double>(idx.size());
    out.rows.push_back(std::move(mean));
    out.subject_ids.push_back(subject);
    if (!set.labels.empty()) {
      const double label = set.labels[static_cast<size_t>(idx.front())];
      for (int64_t i : idx)
        if (set.labels[static_cast<size_t>(i)] != label)
          throw std::invalid_argument("pool_by_subject: conflicting labels for subject " +
                                      subject);
      out.labels.push_back(label);
    }
  }
  return out;
}

namespace {
constexpr char kEmbMagic[4] = {'P', 'P', 'G', 'E'};
constexpr uint16_t kEmbVersion = 1;
}  // namespace

void write_embeddings(const std::filesystem::path& path, const EmbeddingSet& set) {
  set.check_consistent();
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot write embeddings: " + path.string());
  out.write(kEmbMagic, 4);
  out.write(reinterpret_cast<const char*>(&kEmbVersion), 2);
  const auto n = static_cast<uint32_t>(set.rows.size());
  const auto d = static_cast<uint32_t>(set.dim);
  out.write(reinterpret_cast<const char*>(&n), 4);
  out.write(reinterpret_cast<const char*>(&d), 4);
  for (const auto& row : set.rows)
    for (double v : row) {
      const float f = static_cast<float>(v);
      out.write(reinterpret_cast<const char*>(&f), 4);
    }
  require(out.good(), "embedding write failed: " + path.string());
  out.close();

  std::ofstream meta(path.string() + ".meta");
  require(meta.good(), "cannot write sidecar: " + path.string() + ".meta");
  for (size_t i = 0; i < set.rows.size(); ++i) {
    nlohmann::json j;
    j["subject_id"] = set.subject_ids[i];
    j["index"] = set.segment_indices.empty() ? static_cast<int64_t>(i)
                                             : set.segment_indices[i];
    meta << j.dump() << "\n";
  }
}

EmbeddingSet read_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open embeddings: " + path.string());
  char magic[4];
  in.read(magic, 4);
  require(in.gcount() == 4 && std::memcmp(magic, kEmbMagic, 4) == 0,
          "bad embedding magic in " + path.string());
  uint16_t version = 0;
  in.read(reinterpret_cast<char*>(&version), 2);
  require(version == kEmbVersion, "unknown embedding version");
  uint32_t n = 0, d = 0;
  in.read(reinterpret_cast<char*>(&n), 4);
  in.read(reinterpret_cast<char*>(&d), 4);

  EmbeddingSet set;
  set.dim = d;
  set.rows.reserve(n);
  for (uint32_t i = 0; i < n; ++i) {
    std::vector<double> row(d);
    for (uint32_t j = 0; j < d; ++j) {
      float f = 0.0f;
      in.read(reinterpret_cast<char*>(&f), 4);
      row[j] = f;
    }
    require(in.good(), "truncated embeddings in " + path.string());
    set.rows.push_back(std::move(row));
  }

  std::ifstream meta(path.string() + ".meta");
  require(meta.good(), "missing sidecar: " + path.string() + ".meta");
  std::string line;
  while (std::getline(meta, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    set.subject_ids.push_back(j.at("subject_id").get<std::string>());
    set.segment_indices.push_back(j.at("index").get<int64_t>());
  }
  require(set.subject_ids.size() == set.rows.size(),
          "sidecar count mismatch for " + path.string());
  return set;
}

// ---------------------------------------------------------------------------
// Splits and features
// ---------------------------------------------------------------------------

SubjectSplit subject_split(const EmbeddingSet& set,
                           const std::array<double, 3>& ratios, uint64_t seed) {
  double sum = 0.0;
  int parts = 0;
  for (double r : ratios) {
    if (r < 0.0) throw std::invalid_argument("subject_split: negative ratio");
    sum += r;
    if (r > 0.0) ++parts;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("subject_split: ratios must sum to 1");

  std::vector<std::string> subjects(set.subject_ids.begin(), set.subject_ids.end());
  std::sort(subjects.begin(), subjects.end());
  subjects.erase(std::unique(subjects.begin(), subjects.end()), subjects.end());
  const int64_t n = static_cast<int64_t>(subjects.size());
  if (n < parts) throw std::invalid_argument("subject_split: fewer subjects than partitions");

  std::mt19937_64 rng(seed);
  for (int64_t i = n - 1; i > 0; --i) {
    std::uniform_int_distribution<int64_t> pick(0, i);
    std::swap(subjects[static_cast<size_t>(i)], subjects[static_cast<size_t>(pick(rng))]);
  }

  // Largest-remainder apportionment of subject counts.
  std::array<int64_t, 3> sizes{};
  std::array<double, 3> frac{};
  int64_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double target = ratios[static_cast<size_t>(i)] * static_cast<double>(n);
    sizes[static_cast<size_t>(i)] = static_cast<int64_t>(std::floor(target));
    frac[static_cast<size_t>(i)] = target - std::floor(target);
    assigned += sizes[static_cast<size_t>(i)];
  }
  while (assigned < n) {
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (frac[static_cast<size_t>(i)] > frac[static_cast<size_t>(best)]) best = i;
    ++sizes[static_cast<size_t>(best)];
    frac[static_cast<size_t>(best)] = -1.0;
    ++assigned;
  }

  SubjectSplit split;
  int64_t cursor = 0;
  auto take = [&](int64_t count, std::vector<std::string>& dst) {
    for (int64_t i = 0; i < count; ++i) dst.push_back(subjects[static_cast<size_t>(cursor++)]);
  };
  take(sizes[0], split.train_subjects);
  take(sizes[1], split.val_subjects);
  take(sizes[2], split.test_subjects);

  std::set<std::string> train(split.train_subjects.begin(), split.train_subjects.end());
  std::set<std::string> val(split.val_subjects.begin(), split.val_subjects.end());
  std::set<std::string> test(split.test_subjects.begin(), split.test_subjects.end());
  for (int64_t i = 0; i < set.size(); ++i) {
    const auto& s = set.subject_ids[static_cast<size_t>(i)];
    if (train.count(s)) split.train_rows.push_back(i);
    else if (val.count(s)) split.val_rows.push_back(i);
    else if (test.count(s)) split.test_rows.push_back(i);
  }
  return split;
}

std::array<double, 7> stat_features(const std::vector<double>& segment) {
  if (segment.empty()) throw std::invalid_argument("stat_features: empty segment");
  std::vector<double> sorted = segment;
  std::sort(sorted.begin(), sorted.end());
  return {mean_of(segment),          quantile_sorted(sorted, 0.50),
          sorted.back(),             sorted.front(),
          quantile_sorted(sorted, 0.25), quantile_sorted(sorted, 0.50),
          quantile_sorted(sorted, 0.75)};
}

std::array<double, 7> stat_features(const Segment& segment) {
  return stat_features(std::vector<double>(segment.values.begin(), segment.values.end()));
}

// ---------------------------------------------------------------------------
// Probes
// ---------------------------------------------------------------------------

void Standardizer::fit(const std::vector<std::vector<double>>& x) {
  if (x.empty()) throw std::invalid_argument("standardizer: empty input");
  const size_t d = x[0].size();
  mean.assign(d, 0.0);
  std.assign(d, 0.0);
  for (const auto& row : x)
    for (size_t j = 0; j < d; ++j) mean[j] += row[j];
  for (auto& m : mean) m /= static_cast<double>(x.size());
  for (const auto& row : x)
    for (size_t j = 0; j < d; ++j) {
      const double c = row[j] - mean[j];
      std[j] += c * c;
    }
  for (auto& s : std) {
    s = std::sqrt(s / static_cast<double>(x.size()));
    if (s < 1e-12) s = 1.0;  // constant feature: leave it centered only
  }
}

std::vector<double> Standardizer::apply(const std::vector<double>& x) const {
  std::vector<double> out(x.size());
  for (size_t j = 0; j < x.size(); ++j) out[j] = (x[j] - mean[j]) / std[j];
  return out;
}

namespace {

/// Solve (G + alpha I) w = rhs for SPD G via in-place Cholesky.
std::vector<double> solve_spd(std::vector<double> g, int64_t d, double alpha,
                              std::vector<double> rhs) {
  for (int64_t i = 0; i < d; ++i) g[static_cast<size_t>(i * d + i)] += alpha;
  // Cholesky: G = L L^T
  for (int64_t i = 0; i < d; ++i) {
    for (int64_t j = 0; j <= i; ++j) {
      double s = g[static_cast<size_t>(i * d + j)];
      for (int64_t k = 0; k < j; ++k)
        s -= g[static_cast<size_t>(i * d + k)] * g[static_cast<size_t>(j * d + k)];
      if (i == j) {
        if (s <= 0.0) throw std::runtime_error("ridge: Gram matrix not positive definite");
        g[static_cast<size_t>(i * d + j)] = std::sqrt(s);
      } else {
        g[static_cast<size_t>(i * d + j)] = s / g[static_cast<size_t>(j * d + j)];
      }
    }
  }
  // forward then backward substitution
  for (int64_t i = 0; i < d; ++i) {
    double s = rhs[static_cast<size_t>(i)];
    for (int64_t k = 0; k < i; ++k) s -= g[static_cast<size_t>(i * d + k)] * rhs[static_cast<size_t>(k)];
    rhs[static_cast<size_t>(i)] = s / g[static_cast<size_t>(i * d + i)];
  }
  for (int64_t i = d - 1; i >= 0; --i) {
    double s = rhs[static_cast<size_t>(i)];
    for (int64_t k = i + 1; k < d; ++k)
      s -= g[static_cast<size_t>(k * d + i)] * rhs[static_cast<size_t>(k)];
    rhs[static_cast<size_t>(i)] = s / g[static_cast<size_t>(i * d + i)];
  }
  return rhs;
}

/// Ridge weights on already-standardized features and centered targets.
std::vector<double> ridge_solve(const std::vector<std::vector<double>>& xs,
                                const std::vector<double>& yc, double alpha) {
  const int64_t n = static_cast<int64_t>(xs.size());
  const int64_t d = static_cast<int64_t>(xs[0].size());
  std::vector<double> flat(static_cast<size_t>(n * d));
  for (int64_t i = 0; i < n; ++i)
    std::copy(xs[static_cast<size_t>(i)].begin(), xs[static_cast<size_t>(i)].end(),
              flat.begin() + i * d);
  std::vector<double> gram(static_cast<size_t>(d * d));
  detail::gemm(true, false, d, d, n, 1.0, flat.data(), d, flat.data(), d, 0.0,
               gram.data(), d);
  std::vector<double> rhs(static_cast<size_t>(d), 0.0);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j)
      rhs[static_cast<size_t>(j)] += flat[static_cast<size_t>(i * d + j)] * yc[static_cast<size_t>(i)];
  return solve_spd(std::move(gram), d, alpha, std::move(rhs));
}

/// Deterministic k-fold assignment over n indices.
std::vector<std::vector<int64_t>> kfold_indices(int64_t n, int folds, uint64_t seed) {
  std::vector<int64_t> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  for (int64_t i = n - 1; i > 0; --i) {
    std::uniform_int_distribution<int64_t> pick(0, i);
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(pick(rng))]);
  }
  const int k = std::min<int>(folds, static_cast<int>(n));
  std::vector<std::vector<int64_t>> out(static_cast<size_t>(k));
  for (int64_t i = 0; i < n; ++i)
    out[static_cast<size_t>(i % k)].push_back(idx[static_cast<size_t>(i)]);
  return out;
}

// --- L-BFGS ---------------------------------------------------------------

using ValueGrad = std::function<double(const std::vector<double>&, std::vector<double>&)>;

double grad_inf_norm(const std::vector<double>& g) {
  double m = 0.0;
  for (double v : g) m = std::max(m, std::abs(v));
  return m;
}

std::vector<double> lbfgs_minimize(const ValueGrad& fg, std::vector<double> x,
                                   int max_iter, double tol = 1e-10) {
  const size_t d = x.size();
  constexpr int kHistory = 8;
  std::vector<std::vector<double>> s_hist, y_hist;
  std::vector<double> rho_hist;

  std::vector<double> g(d);
  double f = fg(x, g);
  for (int iter = 0; iter < max_iter; ++iter) {
    if (grad_inf_norm(g) < tol) break;

    // Two-loop recursion for the search direction.
    std::vector<double> q = g;
    const int h = static_cast<int>(s_hist.size());
    std::vector<double> alpha_coef(static_cast<size_t>(h));
    for (int i = h - 1; i >= 0; --i) {
      double dot = 0.0;
      for (size_t j = 0; j < d; ++j) dot += s_hist[static_cast<size_t>(i)][j] * q[j];
      alpha_coef[static_cast<size_t>(i)] = rho_hist[static_cast<size_t>(i)] * dot;
      for (size_t j = 0; j < d; ++j)
        q[j] -= alpha_coef[static_cast<size_t>(i)] * y_hist[static_cast<size_t>(i)][j];
    }
    double gamma = 1.0;
    if (h > 0) {
      double sy = 0.0, yy = 0.0;
      for (size_t j = 0; j < d; ++j) {
        sy += s_hist.back()[j] * y_hist.back()[j];
        yy += y_hist.back()[j] * y_hist.back()[j];
      }
      if (yy > 0.0) gamma = sy / yy;
    }
    for (auto& v : q) v *= gamma;
    for (int i = 0; i < h; ++i) {
      double dot = 0.0;
      for (size_t j = 0; j < d; ++j) dot += y_hist[static_cast<size_t>(i)][j] * q[j];
      const double beta = rho_hist[static_cast<size_t>(i)] * dot;
      for (size_t j = 0; j < d; ++j)
        q[j] += s_hist[static_cast<size_t>(i)][j] *
                (alpha_coef[static_cast<size_t>(i)] - beta);
    }

    // Backtracking Armijo line search along -q.
    double gq = 0.0;
    for (size_t j = 0; j < d; ++j) gq += g[j] * q[j];
    if (gq <= 0.0) {  // not a descent direction; fall back to steepest descent
      q = g;
      gq = 0.0;
      for (size_t j = 0; j < d; ++j) gq += g[j] * g[j];
    }
    double step = 1.0;
    std::vector<double> x_new(d), g_new(d);
    double f_new = f;
    bool moved = false;
    for (int ls = 0; ls < 40; ++ls) {
      for (size_t j = 0; j < d; ++j) x_new[j] = x[j] - step * q[j];
      f_new = fg(x_new, g_new);
      if (f_new <= f - 1e-4 * step * gq) {
        moved = true;
        break;
      }
      step *= 0.5;
    }
    if (!moved) break;

    std::vector<double> s(d), yv(d);
    double sy = 0.0;
    for (size_t j = 0; j < d; ++j) {
      s[j] = x_new[j] - x[j];
      yv[j] = g_new[j] - g[j];
      sy += s[j] * yv[j];
    }
    if (sy > 1e-12) {
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(yv));
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > kHistory) {
        s_hist.erase(s_hist.begin());
        y_hist.erase(y_hist.begin());
        rho_hist.erase(rho_hist.begin());
      }
    }
    x = std::move(x_new);
    g = g_new;
    f = f_new;
  }
  return x;
}

/// Negative log-likelihood objective shared by l1/l2 logistic regression:
/// smooth(w, b) = C * sum log(1 + exp(-y_pm (x.w + b))).
struct LogisticSmooth {
  const std::vector<std::vector<double>>* xs;
  const std::vector<double>* y_pm;  // labels in {-1, +1}
  double c;

  double operator()(const std::vector<double>& theta, std::vector<double>& grad) const {
    const size_t d = theta.size() - 1;
    const double b = theta[d];
    std::fill(grad.begin(), grad.end(), 0.0);
    double f = 0.0;
    for (size_t i = 0; i < xs->size(); ++i) {
      const auto& x = (*xs)[i];
      const double y = (*y_pm)[i];
      double margin = b;
      for (size_t j = 0; j < d; ++j) margin += x[j] * theta[j];
      const double z = -y * margin;
      // log(1 + exp(z)) computed stably
      f += z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
      const double sig = 1.0 / (1.0 + std::exp(-z));  // d/dz log(1+e^z)
      const double coef = -y * sig;
      for (size_t j = 0; j < d; ++j) grad[j] += coef * x[j];
      grad[d] += coef;
    }
    f *= c;
    for (auto& v : grad) v *= c;
    return f;
  }
};

/// l2 logistic: 0.5 ||w||^2 + smooth, solved with L-BFGS.
std::pair<std::vector<double>, double> fit_logistic_l2(
    const std::vector<std::vector<double>>& xs, const std::vector<double>& y_pm,
    double c, int max_iter) {
  const size_t d = xs[0].size();
  LogisticSmooth smooth{&xs, &y_pm, c};
  auto fg = [&](const std::vector<double>& theta, std::vector<double>& grad) {
    double f = smooth(theta, grad);
    for (size_t j = 0; j < d; ++j) {
      f += 0.5 * theta[j] * theta[j];
      grad[j] += theta[j];
    }
    return f;
  };
  auto theta = lbfgs_minimize(fg, std::vector<double>(d + 1, 0.0), max_iter);
  const double b = theta.back();
  theta.pop_back();
  return {std::move(theta), b};
}

/// l1 logistic: ||w||_1 + smooth, solved with proximal gradient descent
/// (backtracking ISTA); the intercept is unpenalized.
std::pair<std::vector<double>, double> fit_logistic_l1(
    const std::vector<std::vector<double>>& xs, const std::vector<double>& y_pm,
    double c, int max_iter) {
  const size_t d = xs[0].size();
  LogisticSmooth smooth{&xs, &y_pm, c};
  std::vector<double> theta(d + 1, 0.0), grad(d + 1), trial(d + 1), trial_grad(d + 1);
  double step = 1.0;
  double f = smooth(theta, grad);
  for (int iter = 0; iter < max_iter; ++iter) {
    bool accepted = false;
    for (int bt = 0; bt < 60; ++bt) {
      for (size_t j = 0; j < d; ++j) {
        const double u = theta[j] - step * grad[j];
        trial[j] = std::copysign(std::max(0.0, std::abs(u) - step), u);
      }
      trial[d] = theta[d] - step * grad[d];
      const double f_trial = smooth(trial, trial_grad);
      double quad = f;
      double dist = 0.0;
      for (size_t j = 0; j <= d; ++j) {
        const double diff = trial[j] - theta[j];
        quad += grad[j] * diff;
        dist += diff * diff;
      }
      quad += dist / (2.0 * step);
      if (f_trial <= quad + 1e-12) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    double move = 0.0;
    for (size_t j = 0; j <= d; ++j) move = std::max(move, std::abs(trial[j] - theta[j]));
    theta = trial;
    grad = trial_grad;
    f = smooth(theta, grad);
    if (move < 1e-12) break;
    step *= 1.2;  // gentle growth after an accepted step
  }
  const double b = theta.back();
  theta.pop_back();
  return {std::move(theta), b};
}

}  // namespace

double RidgeModel::predict(const std::vector<double>& x) const {
  const auto xs = scaler.apply(x);
  double y = intercept;
  for (size_t j = 0; j < xs.size(); ++j) y += weights[j] * xs[j];
  return y;
}

RidgeModel ridge_fit(const std::vector<std::vector<double>>& x,
                     const std::vector<double>& y, const std::vector<double>& alphas,
                     int folds, uint64_t seed) {
  if (x.size() != y.size() || x.size() < 2)
    throw std::invalid_argument("ridge_fit: need at least two aligned samples");
  const double y_mean = mean_of(y);
  double y_var = 0.0;
  for (double v : y) y_var += (v - y_mean) * (v - y_mean);
  if (y_var == 0.0) throw std::invalid_argument("ridge_fit: constant target");
  if (alphas.empty()) throw std::invalid_argument("ridge_fit: empty alpha grid");

  const int64_t n = static_cast<int64_t>(x.size());
  double best_alpha = alphas.front();
  if (alphas.size() > 1 && n >= 2 * folds) {
    const auto fold_idx = kfold_indices(n, folds, seed);
    double best_score = std::numeric_limits<double>::max();
    for (double alpha : alphas) {
      double err_sum = 0.0;
      int64_t err_n = 0;
      for (const auto& val_rows : fold_idx) {
        std::vector<std::vector<double>> xt;
        std::vector<double> yt;
        std::vector<bool> is_val(static_cast<size_t>(n), false);
        for (int64_t i : val_rows) is_val[static_cast<size_t>(i)] = true;
        for (int64_t i = 0; i < n; ++i)
          if (!is_val[static_cast<size_t>(i)]) {
            xt.push_back(x[static_cast<size_t>(i)]);
            yt.push_back(y[static_cast<size_t>(i)]);
          }
        if (xt.size() < 2) continue;
        Standardizer sc;
        sc.fit(xt);
        std::vector<std::vector<double>> xs;
        xs.reserve(xt.size());
        for (const auto& r : xt) xs.push_back(sc.apply(r));
        const double ym = mean_of(yt);
        std::vector<double> yc(yt.size());
        for (size_t i = 0; i < yt.size(); ++i) yc[i] = yt[i] - ym;
        const auto w = ridge_solve(xs, yc, alpha);
        for (int64_t i : val_rows) {
          const auto xv = sc.apply(x[static_cast<size_t>(i)]);
          double pred = ym;
          for (size_t j = 0; j < xv.size(); ++j) pred += w[j] * xv[j];
          err_sum += std::abs(pred - y[static_cast<size_t>(i)]);
          ++err_n;
        }
      }
      const double score = err_n > 0 ? err_sum / static_cast<double>(err_n)
                                     : std::numeric_limits<double>::max();
      if (score < best_score) {
        best_score = score;
        best_alpha = alpha;
      }
    }
  }

  RidgeModel model;
  model.alpha = best_alpha;
  model.scaler.fit(x);
  std::vector<std::vector<double>> xs;
  xs.reserve(x.size());
  for (const auto& r : x) xs.push_back(model.scaler.apply(r));
  std::vector<double> yc(y.size());
  for (size_t i = 0; i < y.size(); ++i) yc[i] = y[i] - y_mean;
  model.weights = ridge_solve(xs, yc, best_alpha);
  model.intercept = y_mean;  // features are centered by the scaler
  return model;
}

double LogisticModel::predict_proba(const std::vector<double>& x) const {
  const auto xs = scaler.apply(x);
  double margin = intercept;
  for (size_t j = 0; j < xs.size(); ++j) margin += weights[j] * xs[j];
  return 1.0 / (1.0 + std::exp(-margin));
}

LogisticModel logistic_fit(const std::vector<std::vector<double>>& x,
                           const std::vector<double>& y, const LogisticGrid& grid,
                           int folds, uint64_t seed) {
  if (x.size() != y.size() || x.empty())
    throw std::invalid_argument("logistic_fit: empty or misaligned input");
  int64_t pos = 0;
  for (double v : y) {
    if (v != 0.0 && v != 1.0)
      throw std::invalid_argument("logistic_fit: labels must be 0/1");
    pos += v == 1.0 ? 1 : 0;
  }
  if (pos == 0 || pos == static_cast<int64_t>(y.size()))
    throw std::invalid_argument("logistic_fit: single-class training data");

  struct Combo {
    double c;
    Penalty penalty;
    int max_iter;
  };
  std::vector<Combo> combos;
  for (double c : grid.c_values)
    for (Penalty p : grid.penalties)
      for (int mi : grid.max_iters) combos.push_back({c, p, mi});
  if (combos.empty()) throw std::invalid_argument("logistic_fit: empty grid");

  auto fit_one = [](const std::vector<std::vector<double>>& xs,
                    const std::vector<double>& y_pm, const Combo& combo) {
    return combo.penalty == Penalty::l2 ? fit_logistic_l2(xs, y_pm, combo.c, combo.max_iter)
                                        : fit_logistic_l1(xs, y_pm, combo.c, combo.max_iter);
  };

  const int64_t n = static_cast<int64_t>(x.size());
  Combo best = combos.front();
  if (combos.size() > 1) {
    const auto fold_idx = kfold_indices(n, folds, seed);
    double best_score = -1.0;
    for (const auto& combo : combos) {
      double auc_sum = 0.0;
      int scored = 0;
      for (const auto& val_rows : fold_idx) {
        std::vector<bool> is_val(static_cast<size_t>(n), false);
        for (int64_t i : val_rows) is_val[static_cast<size_t>(i)] = true;
        std::vector<std::vector<double>> xt;
        std::vector<double> yt;
        for (int64_t i = 0; i < n; ++i)
          if (!is_val[static_cast<size_t>(i)]) {
            xt.push_back(x[static_cast<size_t>(i)]);
            yt.push_back(y[static_cast<size_t>(i)]);
          }
        int64_t tp = 0;
        for (double v : yt) tp += v == 1.0 ? 1 : 0;
        if (xt.empty() || tp == 0 || tp == static_cast<int64_t>(yt.size())) continue;
        Standardizer sc;
        sc.fit(xt);
        std::vector<std::vector<double>> xs;
        std::vector<double> y_pm;
        for (size_t i = 0; i < xt.size(); ++i) {
          xs.push_back(sc.apply(xt[i]));
          y_pm.push_back(yt[i] == 1.0 ? 1.0 : -1.0);
        }
        auto [w, b] = fit_one(xs, y_pm, combo);
        std::vector<double> scores, truth;
        for (int64_t i : val_rows) {
          const auto xv = sc.apply(x[static_cast<size_t>(i)]);
          double margin = b;
          for (size_t j = 0; j < xv.size(); ++j) margin += w[j] * xv[j];
          scores.push_back(margin);
          truth.push_back(y[static_cast<size_t>(i)]);
        }
        try {
          auc_sum += metric_auroc(scores, truth);
          ++scored;
        } catch (const std::invalid_argument&) {
          // single-class validation fold; skip
        }
      }
      if (scored > 0) {
        const double score = auc_sum / scored;
        if (score > best_score) {
          best_score = score;
          best = combo;
        }
      }
    }
  }

  LogisticModel model;
  model.c = best.c;
  model.penalty = best.penalty;
  model.max_iter = best.max_iter;
  model.scaler.fit(x);
  std::vector<std::vector<double>> xs;
  std::vector<double> y_pm;
  for (size_t i = 0; i < x.size(); ++i) {
    xs.push_back(model.scaler.apply(x[i]));
    y_pm.push_back(y[i] == 1.0 ? 1.0 : -1.0);
  }
  auto [w, b] = fit_one(xs, y_pm, best);
  model.weights = std::move(w);
  model.intercept = b;
  return model;
}

std::vector<double> MultinomialModel::predict_proba(const std::vector<double>& x) const {
  const auto xs = scaler.apply(x);
  const size_t d = xs.size();
  std::vector<double> logits(static_cast<size_t>(n_classes));
  for (int64_t k = 0; k < n_classes; ++k) {
    double v = intercepts[static_cast<size_t>(k)];
    for (size_t j = 0; j < d; ++j) v += weights[static_cast<size_t>(k) * d + j] * xs[j];
    logits[static_cast<size_t>(k)] = v;
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (auto& v : logits) {
    v = std::exp(v - mx);
    z += v;
  }
  for (auto& v : logits) v /= z;
  return logits;
}

int64_t MultinomialModel::predict(const std::vector<double>& x) const {
  const auto p = predict_proba(x);
  return static_cast<int64_t>(std::max_element(p.begin(), p.end()) - p.begin());
}

MultinomialModel multinomial_logistic_fit(const std::vector<std::vector<double>>& x,
                                          const std::vector<double>& y,
                                          const std::vector<double>& c_values,
                                          int folds, uint64_t seed) {
  if (x.size() != y.size() || x.empty())
    throw std::invalid_argument("multinomial_fit: empty or misaligned input");
  int64_t n_classes = 0;
  for (double v : y) {
    if (v < 0.0 || v != std::floor(v))
      throw std::invalid_argument("multinomial_fit: labels must be class codes 0..K-1");
    n_classes = std::max<int64_t>(n_classes, static_cast<int64_t>(v) + 1);
  }
  if (n_classes < 2) throw std::invalid_argument("multinomial_fit: single-class data");

  const size_t d = x[0].size();
  auto fit_one = [&](const std::vector<std::vector<double>>& xs,
                     const std::vector<double>& ys, double c) {
    // theta layout: [W (K x d) | b (K)]
    auto fg = [&](const std::vector<double>& theta, std::vector<double>& grad) {
      std::fill(grad.begin(), grad.end(), 0.0);
      double f = 0.0;
      std::vector<double> logits(static_cast<size_t>(n_classes));
      for (size_t i = 0; i < xs.size(); ++i) {
        for (int64_t k = 0; k < n_classes; ++k) {
          double v = theta[static_cast<size_t>(n_classes) * d + static_cast<size_t>(k)];
          for (size_t j = 0; j < d; ++j)
            v += theta[static_cast<size_t>(k) * d + j] * xs[i][j];
          logits[static_cast<size_t>(k)] = v;
        }
        const double mx = *std::max_element(logits.begin(), logits.end());
        double z = 0.0;
        for (double v : logits) z += std::exp(v - mx);
        const auto yk = static_cast<int64_t>(ys[i]);
        f += c * (std::log(z) + mx - logits[static_cast<size_t>(yk)]);
        for (int64_t k = 0; k < n_classes; ++k) {
          const double p = std::exp(logits[static_cast<size_t>(k)] - mx) / z;
          const double coef = c * (p - (k == yk ? 1.0 : 0.0));
          for (size_t j = 0; j < d; ++j)
            grad[static_cast<size_t>(k) * d + j] += coef * xs[i][j];
          grad[static_cast<size_t>(n_classes) * d + static_cast<size_t>(k)] += coef;
        }
      }
      for (size_t j = 0; j < static_cast<size_t>(n_classes) * d; ++j) {
        f += 0.5 * theta[j] * theta[j];
        grad[j] += theta[j];
      }
      return f;
    };
    return lbfgs_minimize(fg, std::vector<double>(static_cast<size_t>(n_classes) * d +
                                                      static_cast<size_t>(n_classes),
                                                  0.0),
                          200);
  };

  const int64_t n = static_cast<int64_t>(x.size());
  double best_c = c_values.empty() ? 1.0 : c_values.front();
  if (c_values.size() > 1) {
    const auto fold_idx = kfold_indices(n, folds, seed);
    double best_score = -1.0;
    for (double c : c_values) {
      double acc_sum = 0.0;
      int scored = 0;
      for (const auto& val_rows : fold_idx) {
        std::vector<bool> is_val(static_cast<size_t>(n), false);
        for (int64_t i : val_rows) is_val[static_cast<size_t>(i)] = true;
        std::vector<std::vector<double>> xt;
        std::vector<double> yt;
        for (int64_t i = 0; i < n; ++i)
          if (!is_val[static_cast<size_t>(i)]) {
            xt.push_back(x[static_cast<size_t>(i)]);
            yt.push_back(y[static_cast<size_t>(i)]);
          }
        if (xt.empty() || val_rows.empty()) continue;
        Standardizer sc;
        sc.fit(xt);
        std::vector<std::vector<double>> xs;
        for (const auto& r : xt) xs.push_back(sc.apply(r));
        const auto theta = fit_one(xs, yt, c);
        int64_t correct = 0;
        for (int64_t i : val_rows) {
          const auto xv = sc.apply(x[static_cast<size_t>(i)]);
          int64_t arg = 0;
          double bestv = -std::numeric_limits<double>::max();
          for (int64_t k = 0; k < n_classes; ++k) {
            double v = theta[static_cast<size_t>(n_classes) * d + static_cast<size_t>(k)];
            for (size_t j = 0; j < d; ++j)
              v += theta[static_cast<size_t>(k) * d + j] * xv[j];
            if (v > bestv) {
              bestv = v;
              arg = k;
            }
          }
          correct += arg == static_cast<int64_t>(y[static_cast<size_t>(i)]) ? 1 : 0;
        }
        acc_sum += static_cast<double>(correct) / static_cast<double>(val_rows.size());
        ++scored;
      }
      if (scored > 0 && acc_sum / scored > best_score) {
        best_score = acc_sum / scored;
        best_c = c;
      }
    }
  }

  MultinomialModel model;
  model.n_classes = n_classes;
  model.c = best_c;
  model.scaler.fit(x);
  std::vector<std::vector<double>> xs;
  for (const auto& r : x) xs.push_back(model.scaler.apply(r));
  const auto theta = fit_one(xs, y, best_c);
  model.weights.assign(theta.begin(), theta.begin() + static_cast<int64_t>(n_classes * d));
  model.intercepts.assign(theta.begin() + static_cast<int64_t>(n_classes * d), theta.end());
  return model;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

double metric_auroc(const std::vector<double>& scores,
                    const std::vector<double>& labels) {
  if (scores.size() != labels.size() || scores.empty())
    throw std::invalid_argument("auroc: empty or misaligned input");
  int64_t n_pos = 0, n_neg = 0;
  for (double l : labels) (l == 1.0 ? n_pos : n_neg) += 1;
  if (n_pos == 0 || n_neg == 0)
    throw std::invalid_argument("auroc: needs both classes");

  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });

  // Rank-sum with average ranks over tied scores.
  double pos_rank_sum = 0.0;
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (size_t k = i; k <= j; ++k)
      if (labels[order[k]] == 1.0) pos_rank_sum += avg_rank;
    i = j + 1;
  }
  const double u = pos_rank_sum - static_cast<double>(n_pos) * (n_pos + 1) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double metric_mae(const std::vector<double>& pred, const std::vector<double>& truth) {
  if (pred.size() != truth.size() || pred.empty())
    throw std::invalid_argument("mae: empty or misaligned input");
  double s = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - truth[i]);
  return s / static_cast<double>(pred.size());
}

double metric_smape(const std::vector<double>& pred, const std::vector<double>& truth) {
  if (pred.size() != truth.size() || pred.empty())
    throw std::invalid_argument("smape: empty or misaligned input");
  double s = 0.0;
  int64_t n = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const double denom = (std::abs(pred[i]) + std::abs(truth[i])) / 2.0;
    if (denom == 0.0) continue;
    s += std::abs(pred[i] - truth[i]) / denom;
    ++n;
  }
  if (n == 0) throw std::invalid_argument("smape: no scorable pairs");
  return 100.0 * s / static_cast<double>(n);
}

double metric_f1(const std::vector<double>& pred_class,
                 const std::vector<double>& truth) {
  if (pred_class.size() != truth.size() || pred_class.empty())
    throw std::invalid_argument("f1: empty or misaligned input");
  int64_t tp = 0, fp = 0, fn = 0;
  for (size_t i = 0; i < truth.size(); ++i) {
    const bool p = pred_class[i] == 1.0;
    const bool t = truth[i] == 1.0;
    tp += p && t;
    fp += p && !t;
    fn += !p && t;
  }
  if (tp == 0) return 0.0;
  const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  const double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  return 2.0 * precision * recall / (precision + recall);
}

double metric_r2(const std::vector<double>& pred, const std::vector<double>& truth) {
  if (pred.size() != truth.size() || pred.empty())
    throw std::invalid_argument("r2: empty or misaligned input");
  const double mean = mean_of(truth);
  double ss_res = 0.0, ss_tot = 0.0;
  for (size_t i = 0; i < truth.size(); ++i) {
    ss_res += (truth[i] - pred[i]) * (truth[i] - pred[i]);
    ss_tot += (truth[i] - mean) * (truth[i] - mean);
  }
  if (ss_tot == 0.0) throw std::invalid_argument("r2: constant truth");
  return 1.0 - ss_res / ss_tot;
}

double metric_accuracy(const std::vector<double>& pred_class,
                       const std::vector<double>& truth) {
  if (pred_class.size() != truth.size() || pred_class.empty())
    throw std::invalid_argument("accuracy: empty or misaligned input");
  int64_t hit = 0;
  for (size_t i = 0; i < truth.size(); ++i) hit += pred_class[i] == truth[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

std::pair<double, double> bootstrap_ci(const std::vector<double>& y_true,
                                       const std::vector<double>& y_pred,
                                       const MetricFn& metric, int n, uint64_t seed,
                                       BootstrapMode mode) {
  if (y_true.size() != y_pred.size() || y_true.size() < 2)
    throw std::invalid_argument("bootstrap_ci: need at least two aligned pairs");
  const size_t m = y_true.size();
  std::vector<double> stats;

  if (mode == BootstrapMode::exhaustive) {
    if (m > 8) throw std::invalid_argument("bootstrap_ci: too many points to enumerate");
    // Odometer over all m^m index tuples.
    std::vector<size_t> idx(m, 0);
    std::vector<double> t(m), p(m);
    while (true) {
      for (size_t i = 0; i < m; ++i) {
        t[i] = y_true[idx[i]];
        p[i] = y_pred[idx[i]];
      }
      try {
        stats.push_back(metric(p, t));
      } catch (const std::invalid_argument&) {
        // undefined on this resample; excluded, matching the redraw rule
      }
      size_t pos = 0;
      while (pos < m && ++idx[pos] == m) idx[pos++] = 0;
      if (pos == m) break;
    }
  } else {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<size_t> pick(0, m - 1);
    std::vector<double> t(m), p(m);
    const int64_t max_attempts = static_cast<int64_t>(n) * 1000;
    int64_t attempts = 0;
    while (static_cast<int>(stats.size()) < n) {
      if (++attempts > max_attempts)
        throw std::runtime_error("bootstrap_ci: metric undefined on all resamples");
      for (size_t i = 0; i < m; ++i) {
        const size_t k = pick(rng);
        t[i] = y_true[k];
        p[i] = y_pred[k];
      }
      try {
        stats.push_back(metric(p, t));
      } catch (const std::invalid_argument&) {
        continue;  // degenerate resample: redraw
      }
    }
  }
  if (stats.empty()) throw std::runtime_error("bootstrap_ci: metric undefined on all resamples");
  std::sort(stats.begin(), stats.end());
  return {quantile_sorted(stats, 0.025), quantile_sorted(stats, 0.975)};
}

double wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty())
    throw std::invalid_argument("wilcoxon: empty or misaligned input");
  std::vector<double> diff;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    if (d != 0.0) diff.push_back(d);
  }
  if (diff.empty()) throw std::invalid_argument("wilcoxon: all differences zero");
  if (diff.size() < 5)
    throw std::invalid_argument("wilcoxon: need at least 5 nonzero differences");

  const size_t n = diff.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t x, size_t y) {
    return std::abs(diff[x]) < std::abs(diff[y]);
  });
  std::vector<double> rank(n);
  std::vector<double> tie_sizes;
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && std::abs(diff[order[j + 1]]) == std::abs(diff[order[i]])) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (size_t k = i; k <= j; ++k) rank[order[k]] = avg_rank;
    tie_sizes.push_back(static_cast<double>(j - i + 1));
    i = j + 1;
  }

  double t_pos = 0.0;
  for (size_t k = 0; k < n; ++k)
    if (diff[k] > 0.0) t_pos += rank[k];
  const double mu = static_cast<double>(n) * (n + 1) / 4.0;

  if (n <= 12) {
    // Exact two-sided p by enumerating all sign assignments.
    const uint64_t total = 1ULL << n;
    const double observed = std::abs(t_pos - mu);
    uint64_t extreme = 0;
    // Ranks sorted ascending for the enumeration.
    std::vector<double> ranks_sorted = rank;
    std::sort(ranks_sorted.begin(), ranks_sorted.end());
    for (uint64_t massk = 0; massk < total; ++massk) {
      double t = 0.0;
      for (size_t k = 0; k < n; ++k)
        if (massk & (1ULL << k)) t += ranks_sorted[k];
      if (std::abs(t - mu) >= observed - 1e-12) ++extreme;
    }
    return static_cast<double>(extreme) / static_cast<double>(total);
  }

  double tie_term = 0.0;
  for (double t : tie_sizes) tie_term += t * t * t - t;
  const double sigma2 =
      static_cast<double>(n) * (n + 1) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
  if (sigma2 <= 0.0) throw std::domain_error("wilcoxon: degenerate variance");
  const double z = (std::abs(t_pos - mu) - 0.5) / std::sqrt(sigma2);
  return std::min(1.0, 2.0 * (1.0 - norm_cdf(z)));
}

PairwiseDistances pairwise_distances(const EmbeddingSet& set, DistanceMetric metric,
                                     int histogram_bins) {
  EmbeddingSet no_labels = set;
  no_labels.labels.clear();
  const EmbeddingSet pooled = pool_by_subject(no_labels);
  if (pooled.size() < 2)
    throw std::invalid_argument("pairwise_distances: need at least two subjects");

  PairwiseDistances out;
  for (int64_t i = 0; i < pooled.size(); ++i)
    for (int64_t j = i + 1; j < pooled.size(); ++j) {
      const auto& u = pooled.rows[static_cast<size_t>(i)];
      const auto& v = pooled.rows[static_cast<size_t>(j)];
      double d = 0.0;
      if (metric == DistanceMetric::euclidean) {
        for (size_t k = 0; k < u.size(); ++k) d += (u[k] - v[k]) * (u[k] - v[k]);
        d = std::sqrt(d);
      } else {
        double dot = 0.0, nu = 0.0, nv = 0.0;
        for (size_t k = 0; k < u.size(); ++k) {
          dot += u[k] * v[k];
          nu += u[k] * u[k];
          nv += v[k] * v[k];
        }
        if (nu == 0.0 || nv == 0.0)
          throw std::domain_error("pairwise_distances: zero-norm subject embedding");
        d = 1.0 - dot / (std::sqrt(nu) * std::sqrt(nv));
      }
      out.values.push_back(d);
      out.pairs.emplace_back(pooled.subject_ids[static_cast<size_t>(i)],
                             pooled.subject_ids[static_cast<size_t>(j)]);
    }

  const auto [mn_it, mx_it] = std::minmax_element(out.values.begin(), out.values.end());
  double lo = *mn_it, hi = *mx_it;
  if (lo == hi) hi = lo + 1.0;  // all-equal distances: single occupied bin
  out.histogram.assign(static_cast<size_t>(histogram_bins), 0);
  for (int k = 0; k <= histogram_bins; ++k)
    out.bin_edges.push_back(lo + (hi - lo) * k / histogram_bins);
  for (double v : out.values) {
    auto bin = static_cast<int64_t>((v - lo) / (hi - lo) * histogram_bins);
    bin = std::clamp<int64_t>(bin, 0, histogram_bins - 1);
    ++out.histogram[static_cast<size_t>(bin)];
  }
  return out;
}

std::vector<GroupMetricRow> grouped_metrics(const std::vector<double>& y_true,
                                            const std::vector<double>& y_pred,
                                            const std::vector<std::string>& groups,
                                            const MetricFn& metric, int64_t min_size,
                                            int bootstrap_n, uint64_t seed) {
  if (y_true.size() != y_pred.size() || y_true.size() != groups.size() || y_true.empty())
    throw std::invalid_argument("grouped_metrics: empty or misaligned input");
  std::map<std::string, std::vector<size_t>> by_group;
  for (size_t i = 0; i < groups.size(); ++i) by_group[groups[i]].push_back(i);

  std::vector<GroupMetricRow> out;
  uint64_t group_idx = 0;
  for (const auto& [name, idx] : by_group) {
    GroupMetricRow row;
    row.group = name;
    row.n = static_cast<int64_t>(idx.size());
    row.below_min_size = row.n < min_size;
    std::vector<double> t, p;
    for (size_t i : idx) {
      t.push_back(y_true[i]);
      p.push_back(y_pred[i]);
    }
    row.point = metric(p, t);
    if (t.size() >= 2) {
      const auto [lo, hi] = bootstrap_ci(t, p, metric, bootstrap_n, seed + group_idx);
      row.lo = lo;
      row.hi = hi;
    } else {
      row.lo = row.hi = row.point;
    }
    out.push_back(std::move(row));
    ++group_idx;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Probe harness
// ---------------------------------------------------------------------------

ProbeReport run_probe(const EmbeddingSet& set, const std::string& task_name,
                      TaskType type, const ProbeOptions& options) {
  set.check_consistent();
  if (set.labels.empty())
    throw std::invalid_argument("run_probe: embedding set has no task labels");

  const EmbeddingSet working = options.pool_subjects ? pool_by_subject(set) : set;
  const SubjectSplit split = subject_split(working, options.ratios, options.seed);

  // Leakage assertion, enforced at run time rather than only in tests.
  std::set<std::string> train_set(split.train_subjects.begin(), split.train_subjects.end());
  for (const auto& s : split.test_subjects)
    if (train_set.count(s))
      throw std::logic_error("run_probe: train/test subject overlap for " + s);

  auto gather = [&](const std::vector<int64_t>& rows) {
    std::pair<std::vector<std::vector<double>>, std::vector<double>> out;
    for (int64_t i : rows) {
      out.first.push_back(working.rows[static_cast<size_t>(i)]);
      out.second.push_back(working.labels[static_cast<size_t>(i)]);
    }
    return out;
  };
  auto [x_train, y_train] = gather(split.train_rows);
  auto [x_test, y_test] = gather(split.test_rows);
  if (x_train.empty() || x_test.empty())
    throw std::runtime_error("run_probe: empty train or test split");

  ProbeReport report;
  report.task = task_name;
  report.seed = options.seed;
  report.n_test = static_cast<int64_t>(x_test.size());

  std::ostringstream hp;
  if (type == TaskType::binary) {
    report.task_type = "binary";
    report.metric_name = "auroc";
    report.probe_name = "logistic_regression";
    const auto model = logistic_fit(x_train, y_train, {}, options.cv_folds, options.seed);
    std::vector<double> scores;
    scores.reserve(x_test.size());
    for (const auto& r : x_test) scores.push_back(model.predict_proba(r));
    report.point = metric_auroc(scores, y_test);
    const auto [lo, hi] = bootstrap_ci(y_test, scores, metric_auroc,
                                       options.bootstrap_n, options.seed);
    report.ci_lo = lo;
    report.ci_hi = hi;
    hp << "C=" << model.c << ",penalty=" << (model.penalty == Penalty::l2 ? "l2" : "l1")
       << ",max_iter=" << model.max_iter;
  } else if (type == TaskType::regression) {
    report.task_type = "regression";
    report.metric_name = "mae";
    report.probe_name = "ridge_regression";
    const auto model = ridge_fit(x_train, y_train, {0.1, 1.0, 10.0, 100.0},
                                 options.cv_folds, options.seed);
    std::vector<double> preds;
    preds.reserve(x_test.size());
    for (const auto& r : x_test) preds.push_back(model.predict(r));
    report.point = metric_mae(preds, y_test);
    const auto [lo, hi] =
        bootstrap_ci(y_test, preds, metric_mae, options.bootstrap_n, options.seed);
    report.ci_lo = lo;
    report.ci_hi = hi;
    hp << "alpha=" << model.alpha;
  } else {
    report.task_type = "multiclass";
    report.metric_name = "accuracy";
    report.probe_name = "multinomial_logistic_regression";
    report.note = "multinomial logistic probe substituted for the random-forest baseline";
    const auto model = multinomial_logistic_fit(x_train, y_train,
                                                {0.01, 0.1, 1.0, 10.0, 100.0},
                                                options.cv_folds, options.seed);
    std::vector<double> preds;
    preds.reserve(x_test.size());
    for (const auto& r : x_test) preds.push_back(static_cast<double>(model.predict(r)));
    report.point = metric_accuracy(preds, y_test);
    const auto [lo, hi] = bootstrap_ci(y_test, preds, metric_accuracy,
                                       options.bootstrap_n, options.seed);
    report.ci_lo = lo;
    report.ci_hi = hi;
    hp << "C=" << model.c;
  }
  report.hyperparams = hp.str();
  return report;
}

void write_reports_csv(const std::vector<ProbeReport>& reports,
                       const std::filesystem::path& path,
                       const std::string& config_hash) {
  std::ofstream out(path);
  require(out.good(), "cannot write report: " + path.string());
  out << "task,task_type,metric,probe,point,ci_lo,ci_hi,n_test,seed,hyperparams,"
         "note,config_hash\n";
  out.precision(10);
  for (const auto& r : reports) {
    out << r.task << ',' << r.task_type << ',' << r.metric_name << ',' << r.probe_name
        << ',' << r.point << ',' << r.ci_lo << ',' << r.ci_hi << ',' << r.n_test << ','
        << r.seed << ',' << '"' << r.hyperparams << '"' << ',' << '"' << r.note << '"'
        << ',' << config_hash << "\n";
  }
}

void write_reports_markdown(const std::vector<ProbeReport>& reports,
                            const std::filesystem::path& path,
                            const std::string& config_hash) {
  std::ofstream out(path);
  require(out.good(), "cannot write report: " + path.string());
  out << "| Task | Type | Probe | Metric | Value | n_test | Seed |\n";
  out << "|---|---|---|---|---|---|---|\n";
  char value[96];
  for (const auto& r : reports) {
    std::snprintf(value, sizeof(value), "%.2f [%.2f\xE2\x80\x93%.2f]", r.point, r.ci_lo,
                  r.ci_hi);
    out << "| " << r.task << " | " << r.task_type << " | " << r.probe_name << " | "
        << r.metric_name << " | " << value << " | " << r.n_test << " | " << r.seed
        << " |\n";
    if (!r.note.empty()) out << "| " << r.task << " (note) |  |  |  | " << r.note
                             << " |  |  |\n";
  }
  out << "\nconfig_hash: `" << config_hash << "`\n";
}

}  // namespace ppgfm
