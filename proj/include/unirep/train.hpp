#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "unirep/data.hpp"
#include "unirep/losses.hpp"
#include "unirep/nets.hpp"
#include "unirep/tensor.hpp"

namespace unirep {

// SGD with momentum, weight decay, and cosine-annealed learning rate with
// warm restarts every anneal_freq iterations:
//   eta(t) = lr * 0.5 * (1 + cos(pi * (t mod F) / F))
//   v <- momentum * v + g + weight_decay * p;  p <- p - eta(t) * v
struct SgdConfig {
  double lr = 0.03;
  double momentum = 0.9;
  double weight_decay = 7e-4;
  std::size_t anneal_freq = 400;
  std::size_t max_iter = 2000;
};

class Sgd {
 public:
  Sgd(std::vector<Tensor> params, SgdConfig cfg);
  double lr_at(std::size_t t) const;
  void zero_grad();
  void step(std::size_t t);

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> velocity_;
  SgdConfig cfg_;
};

// Adadelta (Zeiler, 2012):
//   E[g^2] <- rho E[g^2] + (1-rho) g^2
//   dx = -sqrt(E[dx^2]+eps)/sqrt(E[g^2]+eps) * g
//   E[dx^2] <- rho E[dx^2] + (1-rho) dx^2;  p <- p + lr * dx
struct AdadeltaConfig {
  double rho = 0.9;
  double eps = 1e-6;
  double lr = 1.0;
};

class Adadelta {
 public:
  Adadelta(std::vector<Tensor> params, AdadeltaConfig cfg);
  void zero_grad();
  void step();

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> grad_sq_, delta_sq_;
  AdadeltaConfig cfg_;
};

// lambda(t) = lambda0 * max(0, 1 - t/T)
double anneal_lambda(double lambda0, std::size_t t, std::size_t horizon);

struct BackboneConfig {
  std::vector<std::size_t> hidden = {64, 64};
  std::size_t feature_dim = 32;

  std::vector<std::size_t> widths(std::size_t input_dim) const;
};

// Loss trace row; feature/kl columns are zero when the term is inactive.
struct TraceRow {
  std::size_t iter = 0;
  std::string domain;
  double ce = 0.0;
  double kl = 0.0;
  double feat = 0.0;
  double lambda_p = 0.0;
  double lambda_f = 0.0;
};

void write_trace_csv(const std::filesystem::path& path, const std::vector<TraceRow>& trace);

struct SdlResult {
  SingleDomainModel model;  // best-validation snapshot, frozen
  std::vector<TraceRow> trace;
  double best_val_accuracy = 0.0;
  std::size_t best_iter = 0;
};

// Stage 1: one domain, cross-entropy on head-over-backbone. Early stopping
// on validation NCC accuracy, checked every annealing period.
SdlResult train_single_domain(const DomainDataset& ds, const BackboneConfig& net_cfg,
                              const SgdConfig& sgd_cfg, std::size_t batch_size,
                              std::uint64_t seed);

struct MdlResult {
  MultiDomainModel model;
  std::vector<TraceRow> trace;
  double best_val_accuracy = 0.0;
  std::size_t best_iter = 0;
};

// Joint objective: sum over domains of per-batch cross-entropy; updates the
// shared backbone and every head, adapters untouched.
MdlResult train_mdl(const std::vector<DomainDataset>& datasets, const BackboneConfig& net_cfg,
                    const SgdConfig& sgd_cfg, const std::vector<std::size_t>& batch_sizes,
                    std::uint64_t seed);

enum class FeatureLossKind { cka, l2, cosine, none };
const char* feature_loss_name(FeatureLossKind k) noexcept;
FeatureLossKind parse_feature_loss(const std::string& name);

struct DistillConfig {
  FeatureLossKind feature_loss = FeatureLossKind::cka;
  bool use_kl = true;
  KernelSpec kernel{KernelKind::rbf, 0.5, std::nullopt};
  double ce_weight = 1.0;
  double lambda_p = 1.0;
  double lambda_f = 1.0;
  // Optional anchor domain whose lambdas are multiplied (off by default).
  std::string anchor_domain;
  double anchor_multiplier = 4.0;
  // Iterations until lambda reaches zero; 0 means max_iter. Per-domain
  // overrides win over the shared value.
  std::size_t anneal_horizon = 0;
  std::map<std::string, double> lambda_p_by_domain;
  std::map<std::string, double> lambda_f_by_domain;
  std::map<std::string, std::size_t> horizon_by_domain;
};

// Distillation from frozen teachers: per domain, cross-entropy plus annealed
// KL on predictions and an adapter-aligned feature loss against the teacher
// features. Updates backbone, heads, and adapters; teachers never move.
MdlResult train_url(const std::vector<DomainDataset>& datasets, const TeacherBank& teachers,
                    const BackboneConfig& net_cfg, const DistillConfig& distill_cfg,
                    const SgdConfig& sgd_cfg, const std::vector<std::size_t>& batch_sizes,
                    std::uint64_t seed);

}  // namespace unirep
