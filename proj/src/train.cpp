#include "unirep/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "unirep/common.hpp"
#include "unirep/eval.hpp"

namespace unirep {

namespace {

void check_params(const std::vector<Tensor>& params, const char* who) {
  if (params.empty()) fail(errc::invalid_argument, std::string(who) + ": no parameters");
  for (const auto& p : params)
    if (!p.defined() || !p.is_leaf() || !p.requires_grad())
      fail(errc::missing_gradient, std::string(who) + ": parameter without gradient tracking");
}

}  // namespace

Sgd::Sgd(std::vector<Tensor> params, SgdConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  check_params(params_, "sgd");
  if (!(cfg_.lr > 0.0)) fail(errc::invalid_argument, "sgd: learning rate must be positive");
  if (cfg_.momentum < 0.0 || cfg_.momentum >= 1.0)
    fail(errc::invalid_argument, "sgd: momentum must be in [0,1)");
  if (cfg_.anneal_freq == 0) fail(errc::invalid_argument, "sgd: annealing frequency must be positive");
  velocity_.reserve(params_.size());
  for (const auto& p : params_) velocity_.emplace_back(p.numel(), 0.0);
}

double Sgd::lr_at(std::size_t t) const {
  std::size_t phase = t % cfg_.anneal_freq;
  double frac = static_cast<double>(phase) / static_cast<double>(cfg_.anneal_freq);
  return cfg_.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

void Sgd::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Sgd::step(std::size_t t) {
  double eta = lr_at(t);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto g = params_[i].grad();
    auto p = params_[i].raw_data();
    auto& v = velocity_[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      v[k] = cfg_.momentum * v[k] + g[k] + cfg_.weight_decay * p[k];
      p[k] -= eta * v[k];
    }
  }
}

Adadelta::Adadelta(std::vector<Tensor> params, AdadeltaConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  check_params(params_, "adadelta");
  if (!(cfg_.rho >= 0.0 && cfg_.rho < 1.0)) fail(errc::invalid_argument, "adadelta: rho must be in [0,1)");
  if (!(cfg_.eps > 0.0)) fail(errc::invalid_argument, "adadelta: eps must be positive");
  grad_sq_.reserve(params_.size());
  delta_sq_.reserve(params_.size());
  for (const auto& p : params_) {
    grad_sq_.emplace_back(p.numel(), 0.0);
    delta_sq_.emplace_back(p.numel(), 0.0);
  }
}

void Adadelta::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Adadelta::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto g = params_[i].grad();
    auto p = params_[i].raw_data();
    auto& eg2 = grad_sq_[i];
    auto& ed2 = delta_sq_[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      eg2[k] = cfg_.rho * eg2[k] + (1.0 - cfg_.rho) * g[k] * g[k];
      double dx = -std::sqrt(ed2[k] + cfg_.eps) / std::sqrt(eg2[k] + cfg_.eps) * g[k];
      ed2[k] = cfg_.rho * ed2[k] + (1.0 - cfg_.rho) * dx * dx;
      p[k] += cfg_.lr * dx;
    }
  }
}

double anneal_lambda(double lambda0, std::size_t t, std::size_t horizon) {
  if (horizon == 0) fail(errc::invalid_argument, "anneal_lambda: horizon must be positive");
  double frac = 1.0 - static_cast<double>(t) / static_cast<double>(horizon);
  return lambda0 * std::max(0.0, frac);
}

std::vector<std::size_t> BackboneConfig::widths(std::size_t input_dim) const {
  std::vector<std::size_t> w;
  w.push_back(input_dim);
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(feature_dim);
  return w;
}

void write_trace_csv(const std::filesystem::path& path, const std::vector<TraceRow>& trace) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(errc::io, "cannot write trace " + path.string());
  out << "iter,domain,ce,kl,feat,lambda_p,lambda_f\n";
  char buf[160];
  for (const auto& row : trace) {
    std::snprintf(buf, sizeof(buf), "%zu,%s,%.9g,%.9g,%.9g,%.9g,%.9g\n", row.iter,
                  row.domain.c_str(), row.ce, row.kl, row.feat, row.lambda_p, row.lambda_f);
    out << buf;
  }
  out.flush();
  if (!out.good()) fail(errc::io, "failed writing trace " + path.string());
}

const char* feature_loss_name(FeatureLossKind k) noexcept {
  switch (k) {
    case FeatureLossKind::cka: return "cka";
    case FeatureLossKind::l2: return "l2";
    case FeatureLossKind::cosine: return "cosine";
    case FeatureLossKind::none: return "none";
  }
  return "unknown";
}

FeatureLossKind parse_feature_loss(const std::string& name) {
  if (name == "cka") return FeatureLossKind::cka;
  if (name == "l2") return FeatureLossKind::l2;
  if (name == "cosine") return FeatureLossKind::cosine;
  if (name == "none") return FeatureLossKind::none;
  fail(errc::invalid_argument, "unknown feature loss '" + name + "'");
}

// --- trainers ------------------------------------------------------------------

namespace {

// Snapshot / restore of parameter values for best-validation selection.
std::vector<std::vector<double>> snapshot(const std::vector<Tensor>& params) {
  std::vector<std::vector<double>> out;
  out.reserve(params.size());
  for (const auto& p : params) out.emplace_back(p.data().begin(), p.data().end());
  return out;
}

void restore(std::vector<Tensor>& params, const std::vector<std::vector<double>>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].raw_data();
    std::copy(values[i].begin(), values[i].end(), dst.begin());
  }
}

double mean_val_accuracy(const Backbone& backbone, const std::vector<DomainDataset>& datasets) {
  double acc = 0.0;
  for (const auto& ds : datasets) acc += ncc_holdout_accuracy(backbone, ds.val);
  return acc / static_cast<double>(datasets.size());
}

[[noreturn]] void diverged(std::size_t iter, const std::string& what) {
  fail(errc::divergence, "training diverged at iteration " + std::to_string(iter) + ": " + what);
}

struct BestTracker {
  double best_acc = -1.0;
  std::size_t best_iter = 0;
  std::vector<std::vector<double>> best_values;

  void consider(double acc, std::size_t iter, const std::vector<Tensor>& params) {
    if (acc > best_acc) {
      best_acc = acc;
      best_iter = iter;
      best_values = snapshot(params);
    }
  }
};

}  // namespace

SdlResult train_single_domain(const DomainDataset& ds, const BackboneConfig& net_cfg,
                              const SgdConfig& sgd_cfg, std::size_t batch_size,
                              std::uint64_t seed) {
  if (ds.train.size() == 0) fail(errc::validation, "train split is empty");
  Rng init_rng = Rng::stream(seed, "model-init");
  Backbone backbone = Backbone::init(net_cfg.widths(ds.input_dim), init_rng);
  Head head = Head::init(net_cfg.feature_dim, ds.train.classes.size(), init_rng);

  std::vector<Tensor> params = backbone.parameters();
  for (auto& p : head.parameters()) params.push_back(p);
  Sgd opt(params, sgd_cfg);
  MultiDomainBatcher batcher({&ds}, {batch_size}, Rng::stream(seed, "batches"));

  SdlResult result;
  BestTracker best;
  best.consider(ncc_holdout_accuracy(backbone, ds.val), 0, params);

  for (std::size_t t = 0; t < sgd_cfg.max_iter; ++t) {
    DomainBatch batch = std::move(batcher.next()[0]);
    Tensor loss;
    try {
      loss = cross_entropy(head.forward(backbone.forward(batch.x)), batch.y);
    } catch (const Error& e) {
      if (e.exit_code() == 3) diverged(t, e.what());
      throw;
    }
    double value = loss.item();
    if (!std::isfinite(value)) diverged(t, "loss is not finite");
    result.trace.push_back({t, ds.name, value, 0.0, 0.0, 0.0, 0.0});
    opt.zero_grad();
    backward(loss);
    opt.step(t);
    if ((t + 1) % sgd_cfg.anneal_freq == 0 || t + 1 == sgd_cfg.max_iter)
      best.consider(ncc_holdout_accuracy(backbone, ds.val), t + 1, params);
  }
  if (!best.best_values.empty()) restore(params, best.best_values);

  result.model.domain = ds.name;
  result.model.backbone = backbone.clone(false);
  result.model.head = head.clone(false);
  result.best_val_accuracy = best.best_acc;
  result.best_iter = best.best_iter;
  return result;
}

namespace {

MultiDomainModel init_multi_domain(const std::vector<DomainDataset>& datasets,
                                   const BackboneConfig& net_cfg, std::uint64_t seed) {
  if (datasets.empty()) fail(errc::invalid_argument, "no datasets");
  std::size_t p = datasets.front().input_dim;
  for (const auto& ds : datasets)
    if (ds.input_dim != p) fail(errc::validation, "datasets disagree on input width");
  Rng init_rng = Rng::stream(seed, "model-init");
  MultiDomainModel model;
  model.backbone = Backbone::init(net_cfg.widths(p), init_rng);
  for (const auto& ds : datasets)
    model.heads.emplace(ds.name, Head::init(net_cfg.feature_dim, ds.train.classes.size(), init_rng));
  for (const auto& ds : datasets)
    model.adapters.emplace(ds.name, Adapter::identity(net_cfg.feature_dim));
  model.validate();
  return model;
}

std::vector<const DomainDataset*> dataset_ptrs(const std::vector<DomainDataset>& datasets) {
  std::vector<const DomainDataset*> ptrs;
  ptrs.reserve(datasets.size());
  for (const auto& ds : datasets) ptrs.push_back(&ds);
  return ptrs;
}

}  // namespace

MdlResult train_mdl(const std::vector<DomainDataset>& datasets, const BackboneConfig& net_cfg,
                    const SgdConfig& sgd_cfg, const std::vector<std::size_t>& batch_sizes,
                    std::uint64_t seed) {
  MultiDomainModel model = init_multi_domain(datasets, net_cfg, seed);
  std::vector<Tensor> params = model.parameters(/*include_adapters=*/false);
  Sgd opt(params, sgd_cfg);
  MultiDomainBatcher batcher(dataset_ptrs(datasets), batch_sizes, Rng::stream(seed, "batches"));

  MdlResult result;
  BestTracker best;
  best.consider(mean_val_accuracy(model.backbone, datasets), 0, params);

  for (std::size_t t = 0; t < sgd_cfg.max_iter; ++t) {
    std::vector<DomainBatch> batches = batcher.next();
    Tensor total;
    try {
      for (std::size_t d = 0; d < datasets.size(); ++d) {
        const std::string& domain = datasets[d].name;
        Tensor ce = cross_entropy(
            model.heads.at(domain).forward(model.backbone.forward(batches[d].x)), batches[d].y);
        result.trace.push_back({t, domain, ce.item(), 0.0, 0.0, 0.0, 0.0});
        total = total.defined() ? add(total, ce) : ce;
      }
    } catch (const Error& e) {
      if (e.exit_code() == 3) diverged(t, e.what());
      throw;
    }
    if (!std::isfinite(total.item())) diverged(t, "loss is not finite");
    opt.zero_grad();
    backward(total);
    opt.step(t);
    if ((t + 1) % sgd_cfg.anneal_freq == 0 || t + 1 == sgd_cfg.max_iter)
      best.consider(mean_val_accuracy(model.backbone, datasets), t + 1, params);
  }
  if (!best.best_values.empty()) restore(params, best.best_values);

  result.model = std::move(model);
  result.best_val_accuracy = best.best_acc;
  result.best_iter = best.best_iter;
  return result;
}

MdlResult train_url(const std::vector<DomainDataset>& datasets, const TeacherBank& teachers,
                    const BackboneConfig& net_cfg, const DistillConfig& distill_cfg,
                    const SgdConfig& sgd_cfg, const std::vector<std::size_t>& batch_sizes,
                    std::uint64_t seed) {
  MultiDomainModel model = init_multi_domain(datasets, net_cfg, seed);
  for (const auto& ds : datasets) {
    auto it = teachers.teachers.find(ds.name);
    if (it == teachers.teachers.end())
      fail(errc::validation, "no teacher for domain " + ds.name);
    const SingleDomainModel& teacher = it->second;
    if (teacher.backbone.feature_dim() != net_cfg.feature_dim)
      fail(errc::shape_mismatch, "teacher feature dim " +
                                     std::to_string(teacher.backbone.feature_dim()) +
                                     " does not match student dim " +
                                     std::to_string(net_cfg.feature_dim));
    if (teacher.backbone.input_dim() != ds.input_dim)
      fail(errc::shape_mismatch, "teacher input width mismatch for domain " + ds.name);
    for (const auto& p : teacher.backbone.parameters())
      if (p.requires_grad()) fail(errc::validation, "teacher parameters must be frozen");
  }

  bool train_adapters = distill_cfg.feature_loss != FeatureLossKind::none;
  std::vector<Tensor> params = model.parameters(train_adapters);
  Sgd opt(params, sgd_cfg);
  MultiDomainBatcher batcher(dataset_ptrs(datasets), batch_sizes, Rng::stream(seed, "batches"));

  auto lambda_for = [&](const std::map<std::string, double>& overrides, double base,
                        const std::string& domain) {
    auto it = overrides.find(domain);
    double v = it != overrides.end() ? it->second : base;
    if (domain == distill_cfg.anchor_domain) v *= distill_cfg.anchor_multiplier;
    if (v < 0.0) fail(errc::invalid_argument, "lambda must be nonnegative");
    return v;
  };
  auto horizon_for = [&](const std::string& domain) {
    auto it = distill_cfg.horizon_by_domain.find(domain);
    std::size_t h = it != distill_cfg.horizon_by_domain.end() ? it->second
                                                              : distill_cfg.anneal_horizon;
    return h == 0 ? sgd_cfg.max_iter : h;
  };

  MdlResult result;
  BestTracker best;
  best.consider(mean_val_accuracy(model.backbone, datasets), 0, params);

  for (std::size_t t = 0; t < sgd_cfg.max_iter; ++t) {
    std::vector<DomainBatch> batches = batcher.next();
    Tensor total;
    try {
      for (std::size_t d = 0; d < datasets.size(); ++d) {
        const std::string& domain = datasets[d].name;
        const SingleDomainModel& teacher = teachers.teachers.at(domain);
        const Tensor& x = batches[d].x;

        Tensor feats = model.backbone.forward(x);
        Tensor logits = model.heads.at(domain).forward(feats);
        Tensor ce = cross_entropy(logits, batches[d].y);

        double lp = anneal_lambda(lambda_for(distill_cfg.lambda_p_by_domain,
                                             distill_cfg.lambda_p, domain),
                                  t, horizon_for(domain));
        double lf = anneal_lambda(lambda_for(distill_cfg.lambda_f_by_domain,
                                             distill_cfg.lambda_f, domain),
                                  t, horizon_for(domain));
        bool want_kl = distill_cfg.use_kl && lp > 0.0;
        bool want_feat = train_adapters && lf > 0.0;

        TraceRow row{t, domain, ce.item(), 0.0, 0.0, want_kl ? lp : 0.0, want_feat ? lf : 0.0};
        Tensor domain_loss = distill_cfg.ce_weight == 1.0 ? ce : mul(ce, distill_cfg.ce_weight);

        if (want_kl || want_feat) {
          Tensor teacher_feats = teacher.backbone.forward(x).detach();
          if (want_kl) {
            Tensor teacher_logits = teacher.head.forward(teacher_feats).detach();
            Tensor kl = kl_pred_loss(logits, teacher_logits);
            row.kl = kl.item();
            domain_loss = add(domain_loss, mul(kl, lp));
          }
          if (want_feat) {
            Tensor aligned = model.adapters.at(domain).apply(feats);
            Tensor fl;
            switch (distill_cfg.feature_loss) {
              case FeatureLossKind::cka:
                fl = cka_dissimilarity(aligned, teacher_feats, distill_cfg.kernel);
                break;
              case FeatureLossKind::l2:
                fl = l2_feature_loss(aligned, teacher_feats);
                break;
              case FeatureLossKind::cosine:
                fl = cosine_feature_loss(aligned, teacher_feats);
                break;
              case FeatureLossKind::none: break;
            }
            row.feat = fl.item();
            domain_loss = add(domain_loss, mul(fl, lf));
          }
        }
        result.trace.push_back(row);
        total = total.defined() ? add(total, domain_loss) : domain_loss;
      }
    } catch (const Error& e) {
      if (e.exit_code() == 3) diverged(t, e.what());
      throw;
    }
    if (!std::isfinite(total.item())) diverged(t, "loss is not finite");
    opt.zero_grad();
    backward(total);
    opt.step(t);
    if ((t + 1) % sgd_cfg.anneal_freq == 0 || t + 1 == sgd_cfg.max_iter)
      best.consider(mean_val_accuracy(model.backbone, datasets), t + 1, params);
  }
  if (!best.best_values.empty()) restore(params, best.best_values);

  result.model = std::move(model);
  result.best_val_accuracy = best.best_acc;
  result.best_iter = best.best_iter;
  return result;
}

}  // namespace unirep
