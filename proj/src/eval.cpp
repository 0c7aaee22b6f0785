#include "unirep/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "unirep/common.hpp"
#include "unirep/linalg.hpp"
#include "unirep/losses.hpp"
#include "unirep/train.hpp"

namespace unirep {

CentroidSet compute_centroids(const Tensor& feats, const std::vector<int>& labels,
                              std::optional<std::size_t> num_classes) {
  if (feats.rank() != 2) fail(errc::shape_mismatch, "compute_centroids: expects rank-2 features");
  if (feats.dim(0) != labels.size())
    fail(errc::shape_mismatch, "compute_centroids: " + std::to_string(labels.size()) +
                                   " labels for " + std::to_string(feats.dim(0)) + " rows");
  std::set<int> distinct(labels.begin(), labels.end());
  std::vector<int> class_ids(distinct.begin(), distinct.end());
  if (num_classes.has_value()) {
    for (std::size_t c = 0; c < *num_classes; ++c)
      if (!distinct.count(static_cast<int>(c)))
        fail(errc::validation, "compute_centroids: class " + std::to_string(c) +
                                   " has no support embedding");
    class_ids.resize(*num_classes);
    for (std::size_t c = 0; c < *num_classes; ++c) class_ids[c] = static_cast<int>(c);
  }

  std::size_t n = feats.dim(0), c_count = class_ids.size();
  std::vector<double> counts(c_count, 0.0);
  std::vector<std::size_t> local(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto it = std::lower_bound(class_ids.begin(), class_ids.end(), labels[i]);
    local[i] = static_cast<std::size_t>(it - class_ids.begin());
    counts[local[i]] += 1.0;
  }
  std::vector<double> avg(c_count * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) avg[local[i] * n + i] = 1.0 / counts[local[i]];
  CentroidSet cs;
  cs.centroids = matmul(Tensor::from_data({c_count, n}, std::move(avg)), feats);
  cs.class_ids = std::move(class_ids);
  return cs;
}

Tensor row_normalize(const Tensor& x) {
  std::size_t n = x.dim(0), d = x.dim(1);
  Tensor norms = add(sqrt_pos(reduce_sum(mul(x, x), 1)), 1e-12);
  Tensor inv_col = reshape(div(1.0, norms), {n, 1});
  return mul(x, matmul(inv_col, Tensor::ones({1, d})));
}

namespace {

Tensor cosine_logits(const Tensor& query, const Tensor& centroids, double scale) {
  Tensor sims = matmul(row_normalize(query), transpose(row_normalize(centroids)));
  return scale == 1.0 ? sims : mul(sims, scale);
}

std::vector<int> argmax_rows(const Tensor& scores, const std::vector<int>& class_ids) {
  std::size_t n = scores.dim(0), c = scores.dim(1);
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (scores.at(i, j) > scores.at(i, best)) best = j;
    out[i] = class_ids[best];
  }
  return out;
}

}  // namespace

NccPrediction ncc_predict(const Tensor& query_feats, const CentroidSet& centroids,
                          double cosine_scale) {
  if (query_feats.rank() != 2 || centroids.centroids.rank() != 2 ||
      query_feats.dim(1) != centroids.centroids.dim(1))
    fail(errc::shape_mismatch, "ncc_predict: feature dims disagree");
  Tensor logits = cosine_logits(query_feats, centroids.centroids, cosine_scale);
  NccPrediction pred;
  pred.probs = softmax_rows(logits);
  pred.labels = argmax_rows(logits, centroids.class_ids);
  return pred;
}

// --- support-set adaptation -----------------------------------------------------

AdaptationResult adapt_features(const Tensor& support_feats, const std::vector<int>& labels,
                                const AdaptConfig& cfg) {
  if (support_feats.rank() != 2) fail(errc::shape_mismatch, "adapt_features: rank-2 features expected");
  std::size_t d = support_feats.dim(1);
  std::size_t way = 0;
  for (int y : labels) {
    if (y < 0) fail(errc::validation, "adapt_features: negative label");
    way = std::max(way, static_cast<std::size_t>(y) + 1);
  }
  Tensor sup = support_feats.detach();

  AdaptationResult result;
  result.theta = Adapter::identity(d, true);
  Adadelta opt({result.theta.matrix}, AdadeltaConfig{cfg.rho, cfg.eps, cfg.lr});

  auto support_nll = [&]() -> Tensor {
    Tensor z = result.theta.apply(sup);
    CentroidSet cs = compute_centroids(z, labels, way);
    return cross_entropy(cosine_logits(z, cs.centroids, cfg.cosine_scale), labels);
  };

  Tensor loss = support_nll();
  double current = loss.item();
  if (!std::isfinite(current)) fail(errc::divergence, "adapt_features: non-finite initial NLL");
  result.nll_trace.reserve(cfg.iterations + 1);
  result.nll_trace.push_back(current);

  std::vector<double> before(d * d);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    auto theta_data = result.theta.matrix.raw_data();
    std::copy(theta_data.begin(), theta_data.end(), before.begin());
    opt.zero_grad();
    backward(loss);
    opt.step();
    Tensor trial = support_nll();
    double trial_nll = trial.item();
    if (!std::isfinite(trial_nll))
      fail(errc::divergence, "adapt_features: NLL diverged at iteration " + std::to_string(it));
    if (trial_nll <= current) {
      current = trial_nll;
      loss = trial;
    } else {
      // Reject the uphill step: restore the map, keep the optimizer state.
      std::copy(before.begin(), before.end(), theta_data.begin());
    }
    result.nll_trace.push_back(current);
  }
  return result;
}

AdaptationResult adapt_features(const Episode& episode, const Backbone& backbone,
                                const AdaptConfig& cfg) {
  Tensor feats = backbone.forward(episode.support_x).detach();
  return adapt_features(feats, episode.support_y, cfg);
}

// --- covariance-metric classifier --------------------------------------------------

MahalanobisParams fit_mahalanobis(const Tensor& support_feats, const std::vector<int>& labels,
                                  double ridge_rel) {
  if (support_feats.rank() != 2) fail(errc::shape_mismatch, "fit_mahalanobis: rank-2 features expected");
  if (ridge_rel < 0.0) fail(errc::invalid_argument, "fit_mahalanobis: ridge must be nonnegative");
  std::size_t n = support_feats.dim(0), d = support_feats.dim(1);
  if (labels.size() != n) fail(errc::shape_mismatch, "fit_mahalanobis: label count mismatch");

  CentroidSet cs = compute_centroids(support_feats.detach(), labels);
  std::vector<double> scatter(d * d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    auto it = std::lower_bound(cs.class_ids.begin(), cs.class_ids.end(), labels[i]);
    std::size_t c = static_cast<std::size_t>(it - cs.class_ids.begin());
    std::vector<double> diff(d);
    for (std::size_t k = 0; k < d; ++k) diff[k] = support_feats.at(i, k) - cs.centroids.at(c, k);
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b <= a; ++b) scatter[a * d + b] += diff[a] * diff[b];
  }
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = 0; b <= a; ++b) {
      scatter[a * d + b] /= static_cast<double>(n);
      scatter[b * d + a] = scatter[a * d + b];
    }

  double trace = 0.0;
  for (std::size_t a = 0; a < d; ++a) trace += scatter[a * d + a];
  double ridge = ridge_rel * trace / static_cast<double>(d);
  if (ridge_rel > 0.0 && ridge <= 0.0) ridge = ridge_rel;  // all-zero scatter (e.g. one shot)

  MahalanobisParams params;
  params.d = d;
  params.ridge = ridge;
  params.covariance = std::move(scatter);
  for (std::size_t a = 0; a < d; ++a) params.covariance[a * d + a] += ridge;
  std::vector<double> chol;
  try {
    chol = cholesky_lower(params.covariance, d);
  } catch (const Error&) {
    fail(errc::numeric, "fit_mahalanobis: covariance is singular (ridge " +
                            std::to_string(ridge) + ")");
  }
  params.transform = lower_triangular_inverse(chol, d);
  return params;
}

namespace {

// rows of x mapped by the lower-triangular transform F: out[i] = F x[i]
std::vector<double> apply_transform(const MahalanobisParams& params, const Tensor& x) {
  std::size_t n = x.dim(0), d = params.d;
  std::vector<double> out(n * d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < d; ++a) {
      double s = 0.0;
      for (std::size_t b = 0; b <= a; ++b) s += params.transform[a * d + b] * x.at(i, b);
      out[i * d + a] = s;
    }
  return out;
}

}  // namespace

std::vector<int> mahalanobis_predict(const Tensor& query_feats, const Tensor& support_feats,
                                     const std::vector<int>& labels, double ridge_rel) {
  if (query_feats.rank() != 2 || query_feats.dim(1) != support_feats.dim(1))
    fail(errc::shape_mismatch, "mahalanobis_predict: feature dims disagree");
  MahalanobisParams params = fit_mahalanobis(support_feats, labels, ridge_rel);
  CentroidSet cs = compute_centroids(support_feats.detach(), labels);
  std::size_t d = params.d, c_count = cs.class_ids.size();

  std::vector<double> qt = apply_transform(params, query_feats);
  std::vector<double> ct = apply_transform(params, cs.centroids);

  std::size_t n = query_feats.dim(0);
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    double best_dist = 0.0;
    for (std::size_t c = 0; c < c_count; ++c) {
      double dist = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        double diff = qt[i * d + k] - ct[c * d + k];
        dist += diff * diff;
      }
      if (c == 0 || dist < best_dist) {
        best = c;
        best_dist = dist;
      }
    }
    out[i] = cs.class_ids[best];
  }
  return out;
}

// --- episodic evaluation --------------------------------------------------------------

const char* classifier_name(ClassifierKind c) noexcept {
  switch (c) {
    case ClassifierKind::ncc: return "ncc";
    case ClassifierKind::ncc_adapt: return "ncc-adapt";
    case ClassifierKind::ncc_md: return "ncc-md";
  }
  return "unknown";
}

ClassifierKind parse_classifier(const std::string& name) {
  if (name == "ncc") return ClassifierKind::ncc;
  if (name == "ncc-adapt") return ClassifierKind::ncc_adapt;
  if (name == "ncc-md") return ClassifierKind::ncc_md;
  fail(errc::invalid_argument, "unknown classifier '" + name + "'");
}

EvalRow evaluate_episodes_with(const DomainDataset& ds, const Backbone& backbone,
                               const EpisodeClassifier& classify, const std::string& classifier_tag,
                               Regime regime, std::size_t episodes, std::uint64_t seed,
                               const EpisodeConfig& ep_cfg, EvalDetail* detail) {
  if (episodes == 0) fail(errc::invalid_argument, "evaluate_episodes: episode count must be positive");
  Tensor feats_all = backbone.forward(ds.test.x).detach();

  std::vector<double> accs;
  accs.reserve(episodes);
  for (std::size_t e = 0; e < episodes; ++e) {
    Rng rng = Rng::stream(seed, ds.name + "/episode/" + std::to_string(e));
    Episode ep = sample_episode(ds, regime, rng, ep_cfg);
    Tensor sup = gather_rows(feats_all, ep.support_rows);
    Tensor qry = gather_rows(feats_all, ep.query_rows);
    std::vector<int> pred = classify(ep, sup, qry, e);
    if (pred.size() != ep.query_y.size())
      fail(errc::validation, "classifier returned wrong prediction count");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
      if (pred[i] == ep.query_y[i]) ++hits;
    accs.push_back(static_cast<double>(hits) / static_cast<double>(pred.size()));
  }

  double mean = 0.0;
  for (double a : accs) mean += a;
  mean /= static_cast<double>(accs.size());
  std::optional<double> ci;
  if (accs.size() >= 2) {
    double var = 0.0;
    for (double a : accs) var += (a - mean) * (a - mean);
    var /= static_cast<double>(accs.size() - 1);
    ci = 1.96 * std::sqrt(var) / std::sqrt(static_cast<double>(accs.size()));
  }
  if (detail) detail->episode_accuracy = accs;

  EvalRow row;
  row.dataset = ds.name;
  row.regime = regime_name(regime);
  row.classifier = classifier_tag;
  row.episodes = episodes;
  row.mean_accuracy = mean;
  row.ci95 = ci;
  return row;
}

EvalRow evaluate_episodes(const DomainDataset& ds, const Backbone& backbone,
                          ClassifierKind classifier, Regime regime, std::size_t episodes,
                          std::uint64_t seed, const AdaptConfig& adapt, double ridge_rel,
                          const EpisodeConfig& ep_cfg, EvalDetail* detail) {
  EpisodeClassifier classify = [&](const Episode& ep, const Tensor& sup, const Tensor& qry,
                                   std::size_t) -> std::vector<int> {
    switch (classifier) {
      case ClassifierKind::ncc: {
        CentroidSet cs = compute_centroids(sup, ep.support_y, ep.way());
        return ncc_predict(qry, cs, adapt.cosine_scale).labels;
      }
      case ClassifierKind::ncc_adapt: {
        AdaptationResult ar = adapt_features(sup, ep.support_y, adapt);
        if (detail) detail->nll_traces.push_back(ar.nll_trace);
        Adapter frozen;
        frozen.matrix = ar.theta.matrix.detach();
        CentroidSet cs = compute_centroids(frozen.apply(sup), ep.support_y, ep.way());
        return ncc_predict(frozen.apply(qry), cs, adapt.cosine_scale).labels;
      }
      case ClassifierKind::ncc_md:
        return mahalanobis_predict(qry, sup, ep.support_y, ridge_rel);
    }
    fail(errc::invalid_argument, "bad classifier kind");
  };
  return evaluate_episodes_with(ds, backbone, classify, classifier_name(classifier), regime,
                                episodes, seed, ep_cfg, detail);
}

// --- retrieval ----------------------------------------------------------------------

std::map<std::size_t, double> recall_at_k(const Tensor& feats, const std::vector<int>& labels,
                                          const std::vector<std::size_t>& ks) {
  if (feats.rank() != 2) fail(errc::shape_mismatch, "recall_at_k: rank-2 features expected");
  std::size_t n = feats.dim(0), d = feats.dim(1);
  if (labels.size() != n) fail(errc::shape_mismatch, "recall_at_k: label count mismatch");
  if (ks.empty()) fail(errc::invalid_argument, "recall_at_k: no k values");
  std::map<int, std::size_t> counts;
  for (int y : labels) counts[y]++;
  for (const auto& [cls, count] : counts)
    if (count < 2)
      fail(errc::validation, "recall_at_k: class " + std::to_string(cls) +
                                 " has a single sample (no non-self neighbor)");

  // Unit-normalized rows; cosine similarity by dot product.
  std::vector<double> unit(feats.data().begin(), feats.data().end());
  for (std::size_t i = 0; i < n; ++i) {
    double norm = 0.0;
    for (std::size_t k = 0; k < d; ++k) norm += unit[i * d + k] * unit[i * d + k];
    norm = std::sqrt(norm) + 1e-12;
    for (std::size_t k = 0; k < d; ++k) unit[i * d + k] /= norm;
  }

  std::size_t kmax = *std::max_element(ks.begin(), ks.end());
  kmax = std::min(kmax, n - 1);
  // first_hit[i] = rank (1-based) of the nearest same-label neighbor
  std::vector<std::size_t> first_hit(n, n);
  std::vector<std::pair<double, std::size_t>> sims;
  for (std::size_t i = 0; i < n; ++i) {
    sims.clear();
    sims.reserve(n - 1);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += unit[i * d + k] * unit[j * d + k];
      sims.emplace_back(s, j);
    }
    std::sort(sims.begin(), sims.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;  // ties by sample index
    });
    for (std::size_t r = 0; r < kmax; ++r) {
      if (labels[sims[r].second] == labels[i]) {
        first_hit[i] = r + 1;
        break;
      }
    }
  }

  std::map<std::size_t, double> out;
  for (std::size_t k : ks) {
    std::size_t kk = std::min(k, n - 1);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (first_hit[i] <= kk) ++hits;
    out[k] = static_cast<double>(hits) / static_cast<double>(n);
  }
  return out;
}

double ncc_holdout_accuracy(const Backbone& backbone, const SplitData& split) {
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < split.y.size(); ++i) by_class[split.y[i]].push_back(i);
  std::vector<std::size_t> support_rows, query_rows;
  std::vector<int> support_y, query_y;
  for (const auto& [cls, rows] : by_class) {
    std::size_t half = std::max<std::size_t>(1, rows.size() / 2);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (i < half) {
        support_rows.push_back(rows[i]);
        support_y.push_back(cls);
      } else {
        query_rows.push_back(rows[i]);
        query_y.push_back(cls);
      }
    }
  }
  if (query_rows.empty()) fail(errc::validation, "holdout accuracy: no query samples");
  Tensor feats = backbone.forward(split.x).detach();
  CentroidSet cs = compute_centroids(gather_rows(feats, support_rows), support_y);
  NccPrediction pred = ncc_predict(gather_rows(feats, query_rows), cs);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < query_y.size(); ++i)
    if (pred.labels[i] == query_y[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(query_y.size());
}

// --- reports ---------------------------------------------------------------------------

std::string format_mean_ci(double mean, std::optional<double> ci) {
  char buf[64];
  if (ci.has_value())
    std::snprintf(buf, sizeof(buf), "%.1f±%.1f", mean * 100.0, *ci * 100.0);
  else
    std::snprintf(buf, sizeof(buf), "%.1f±n/a", mean * 100.0);
  return buf;
}

void write_eval_csv(const std::filesystem::path& path, std::span<const EvalRow> rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(errc::io, "cannot write report " + path.string());
  out << "dataset,regime,classifier,episodes,mean,ci\n";
  char buf[64];
  for (const auto& row : rows) {
    out << row.dataset << "," << row.regime << "," << row.classifier << "," << row.episodes << ",";
    std::snprintf(buf, sizeof(buf), "%.6f", row.mean_accuracy);
    out << buf << ",";
    if (row.ci95.has_value()) {
      std::snprintf(buf, sizeof(buf), "%.6f", *row.ci95);
      out << buf;
    }
    out << "\n";
  }
  out.flush();
  if (!out.good()) fail(errc::io, "failed writing report " + path.string());
}

std::string eval_table(std::span<const EvalRow> rows) {
  std::vector<std::array<std::string, 5>> cells;
  cells.push_back({"dataset", "regime", "classifier", "episodes", "accuracy"});
  for (const auto& row : rows)
    cells.push_back({row.dataset, row.regime, row.classifier, std::to_string(row.episodes),
                     format_mean_ci(row.mean_accuracy, row.ci95)});
  std::array<std::size_t, 5> width{};
  for (const auto& line : cells)
    for (std::size_t c = 0; c < 5; ++c) width[c] = std::max(width[c], line[c].size());
  std::ostringstream os;
  for (const auto& line : cells) {
    for (std::size_t c = 0; c < 5; ++c) {
      os << line[c];
      if (c + 1 < 5) os << std::string(width[c] - line[c].size() + 2, ' ');
    }
    os << "\n";
  }
  return os.str();
}

void write_recall_csv(const std::filesystem::path& path, std::span<const RecallRow> rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(errc::io, "cannot write report " + path.string());
  out << "dataset,k,recall\n";
  char buf[32];
  for (const auto& row : rows) {
    std::snprintf(buf, sizeof(buf), "%.6f", row.recall);
    out << row.dataset << "," << row.k << "," << buf << "\n";
  }
  out.flush();
  if (!out.good()) fail(errc::io, "failed writing report " + path.string());
}

std::string recall_table(std::span<const RecallRow> rows) {
  std::ostringstream os;
  os << "dataset  k  recall\n";
  char buf[32];
  for (const auto& row : rows) {
    std::snprintf(buf, sizeof(buf), "%5.1f", row.recall * 100.0);
    os << row.dataset << "  " << row.k << "  " << buf << "\n";
  }
  return os.str();
}

}  // namespace unirep
