#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "unirep/data.hpp"
#include "unirep/nets.hpp"
#include "unirep/tensor.hpp"

namespace unirep {

struct CentroidSet {
  Tensor centroids;           // [C x d], row c is the mean of class class_ids[c]
  std::vector<int> class_ids;  // ascending
};

// Differentiable through feats. When num_classes is given, labels must cover
// [0, num_classes) and an absent class is an error.
CentroidSet compute_centroids(const Tensor& feats, const std::vector<int>& labels,
                              std::optional<std::size_t> num_classes = std::nullopt);

struct NccPrediction {
  Tensor probs;             // [n x C], rows sum to 1
  std::vector<int> labels;  // nearest centroid by cosine; ties to lowest class id
};

// Softmax over cosine similarities to centroids (negative cosine distance).
NccPrediction ncc_predict(const Tensor& query_feats, const CentroidSet& centroids,
                          double cosine_scale = 1.0);

// Row-normalized copy of x with epsilon-guarded norms.
Tensor row_normalize(const Tensor& x);

struct AdaptConfig {
  std::size_t iterations = 40;
  double lr = 0.1;
  double rho = 0.9;
  double eps = 1e-6;
  double cosine_scale = 1.0;
};

struct AdaptationResult {
  Adapter theta;
  // Support NLL at iterations 0..iterations; nonincreasing (steps that would
  // raise the support NLL are rejected).
  std::vector<double> nll_trace;
};

// Learns an identity-initialized square map on the support set by Adadelta
// on the centroid-classifier negative log-likelihood. The feature extractor
// stays frozen; only the map moves.
AdaptationResult adapt_features(const Tensor& support_feats, const std::vector<int>& labels,
                                const AdaptConfig& cfg = {});
AdaptationResult adapt_features(const Episode& episode, const Backbone& backbone,
                                const AdaptConfig& cfg = {});

struct MahalanobisParams {
  std::size_t d = 0;
  double ridge = 0.0;
  std::vector<double> covariance;  // Q = pooled within-class scatter + ridge I
  std::vector<double> transform;   // F with F^T F = Q^{-1}; distance = |F (z - c)|^2
};

// Pooled within-class covariance with relative ridge
// (ridge_rel * trace(S) / d; falls back to ridge_rel when the scatter is
// exactly zero). ridge_rel = 0 attempts the raw scatter and fails on a
// singular matrix.
MahalanobisParams fit_mahalanobis(const Tensor& support_feats, const std::vector<int>& labels,
                                  double ridge_rel = 1e-3);

// Nearest centroid under squared Mahalanobis distance; ties to lowest class
// id. Returns labels drawn from the distinct support labels.
std::vector<int> mahalanobis_predict(const Tensor& query_feats, const Tensor& support_feats,
                                     const std::vector<int>& labels, double ridge_rel = 1e-3);

enum class ClassifierKind { ncc, ncc_adapt, ncc_md };
const char* classifier_name(ClassifierKind c) noexcept;
ClassifierKind parse_classifier(const std::string& name);

struct EvalRow {
  std::string dataset;
  std::string regime;
  std::string classifier;
  std::size_t episodes = 0;
  double mean_accuracy = 0.0;
  std::optional<double> ci95;  // absent with fewer than 2 episodes
};

struct RecallRow {
  std::string dataset;
  std::size_t k = 0;
  double recall = 0.0;
};

struct EvalDetail {
  std::vector<double> episode_accuracy;
  std::vector<std::vector<double>> nll_traces;  // ncc_adapt only
};

// Episode stream is a pure function of (dataset, regime, seed); classifiers
// and models see identical episodes for a given seed.
EvalRow evaluate_episodes(const DomainDataset& ds, const Backbone& backbone,
                          ClassifierKind classifier, Regime regime, std::size_t episodes,
                          std::uint64_t seed, const AdaptConfig& adapt = {},
                          double ridge_rel = 1e-3, const EpisodeConfig& ep_cfg = {},
                          EvalDetail* detail = nullptr);

// Aggregation core with an injected per-episode classifier (support features,
// query features -> predicted labels); used by tests.
using EpisodeClassifier =
    std::function<std::vector<int>(const Episode&, const Tensor&, const Tensor&, std::size_t)>;
EvalRow evaluate_episodes_with(const DomainDataset& ds, const Backbone& backbone,
                               const EpisodeClassifier& classify, const std::string& classifier_tag,
                               Regime regime, std::size_t episodes, std::uint64_t seed,
                               const EpisodeConfig& ep_cfg = {}, EvalDetail* detail = nullptr);

// Fraction of samples whose k nearest neighbors (cosine, self excluded, ties
// by sample index) include a same-label sample.
std::map<std::size_t, double> recall_at_k(const Tensor& feats, const std::vector<int>& labels,
                                          const std::vector<std::size_t>& ks);

// Deterministic NCC accuracy on a split (per class: first half support,
// second half query); used for early stopping.
double ncc_holdout_accuracy(const Backbone& backbone, const SplitData& split);

// --- report output -----------------------------------------------------------

std::string format_mean_ci(double mean, std::optional<double> ci);
void write_eval_csv(const std::filesystem::path& path, std::span<const EvalRow> rows);
std::string eval_table(std::span<const EvalRow> rows);
void write_recall_csv(const std::filesystem::path& path, std::span<const RecallRow> rows);
std::string recall_table(std::span<const RecallRow> rows);

}  // namespace unirep
