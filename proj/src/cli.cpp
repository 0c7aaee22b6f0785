#include "unirep/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "unirep/common.hpp"
#include "unirep/data.hpp"
#include "unirep/eval.hpp"
#include "unirep/losses.hpp"
#include "unirep/nets.hpp"
#include "unirep/serialize.hpp"
#include "unirep/train.hpp"

namespace unirep {

namespace {

namespace fs = std::filesystem;

std::vector<DomainDataset> load_all_domains(const fs::path& root) {
  if (!fs::is_directory(root)) fail(errc::missing_payload, "dataset root not found: " + root.string());
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory() && fs::exists(entry.path() / "manifest.json"))
      dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) fail(errc::missing_payload, "no dataset directories under " + root.string());
  std::vector<DomainDataset> out;
  out.reserve(dirs.size());
  for (const auto& dir : dirs) out.push_back(load_dataset(dir));
  return out;
}

std::vector<std::size_t> batch_plan(std::size_t base, std::vector<std::size_t> weights,
                                    std::size_t domains) {
  if (weights.empty()) weights.assign(domains, 1);
  if (weights.size() != domains)
    fail(errc::invalid_argument, "need one batch weight per domain (" + std::to_string(domains) +
                                     " domains, " + std::to_string(weights.size()) + " weights)");
  std::vector<std::size_t> sizes;
  sizes.reserve(domains);
  for (std::size_t w : weights) {
    if (w == 0) fail(errc::invalid_argument, "batch weights must be positive");
    sizes.push_back(base * w);
  }
  return sizes;
}

struct SgdFlags {
  SgdConfig cfg;
  std::size_t batch = 16;

  void attach(CLI::App* cmd) {
    cmd->add_option("--lr", cfg.lr, "peak learning rate");
    cmd->add_option("--momentum", cfg.momentum, "SGD momentum");
    cmd->add_option("--weight-decay", cfg.weight_decay, "weight decay");
    cmd->add_option("--anneal-freq", cfg.anneal_freq, "cosine annealing period (iterations)")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--iters", cfg.max_iter, "training iterations");
    cmd->add_option("--batch", batch, "batch size per domain")->check(CLI::PositiveNumber);
  }
};

struct NetFlags {
  BackboneConfig cfg;

  void attach(CLI::App* cmd) {
    cmd->add_option("--hidden", cfg.hidden, "hidden layer widths")->delimiter(',');
    cmd->add_option("--feature-dim", cfg.feature_dim, "feature dimension")
        ->check(CLI::PositiveNumber);
  }
};

int cmd_gen(const SyntheticSpec& spec, std::uint64_t seed, const std::string& out_dir) {
  auto datasets = generate_synthetic(spec, seed);
  for (const auto& ds : datasets) {
    fs::path dir = fs::path(out_dir) / ds.name;
    save_dataset(ds, dir);
    std::cout << "wrote " << dir.string() << " (" << ds.train.size() << " train / "
              << ds.val.size() << " val / " << ds.test.size() << " test)\n";
  }
  return 0;
}

int cmd_train_sdl(const std::string& data_root, const std::string& domain,
                  const std::string& out_path, const NetFlags& net, const SgdFlags& sgd,
                  std::uint64_t seed, const std::string& trace_path) {
  DomainDataset ds = load_dataset(fs::path(data_root) / domain);
  SdlResult result = train_single_domain(ds, net.cfg, sgd.cfg, sgd.batch, seed);
  save_teacher(result.model, out_path);
  if (!trace_path.empty()) write_trace_csv(trace_path, result.trace);
  std::printf("trained %s: best val acc %.4f at iter %zu; saved %s\n", domain.c_str(),
              result.best_val_accuracy, result.best_iter, out_path.c_str());
  return 0;
}

int cmd_train_mdl(const std::string& data_root, const std::string& out_path, const NetFlags& net,
                  const SgdFlags& sgd, const std::vector<std::size_t>& weights, std::uint64_t seed,
                  const std::string& trace_path) {
  auto datasets = load_all_domains(data_root);
  MdlResult result = train_mdl(datasets, net.cfg, sgd.cfg,
                               batch_plan(sgd.batch, weights, datasets.size()), seed);
  save_model(result.model, out_path);
  if (!trace_path.empty()) write_trace_csv(trace_path, result.trace);
  std::printf("trained mdl over %zu domains: best val acc %.4f at iter %zu; saved %s\n",
              datasets.size(), result.best_val_accuracy, result.best_iter, out_path.c_str());
  return 0;
}

int cmd_train_url(const std::string& data_root, const std::string& teacher_dir,
                  const std::string& out_path, const NetFlags& net, const SgdFlags& sgd,
                  const DistillConfig& distill, const std::vector<std::size_t>& weights,
                  std::uint64_t seed, const std::string& trace_path) {
  auto datasets = load_all_domains(data_root);
  TeacherBank teachers;
  for (const auto& ds : datasets) {
    fs::path path = fs::path(teacher_dir) / (ds.name + ".ckpt");
    teachers.teachers.emplace(ds.name, load_teacher(path, false));
  }
  MdlResult result = train_url(datasets, teachers, net.cfg, distill, sgd.cfg,
                               batch_plan(sgd.batch, weights, datasets.size()), seed);
  save_model(result.model, out_path);
  if (!trace_path.empty()) write_trace_csv(trace_path, result.trace);
  std::printf("trained url (%s%s) over %zu domains: best val acc %.4f at iter %zu; saved %s\n",
              feature_loss_name(distill.feature_loss), distill.use_kl ? "+kl" : "",
              datasets.size(), result.best_val_accuracy, result.best_iter, out_path.c_str());
  return 0;
}

int cmd_eval(const std::string& data_root, const std::string& ckpt, const std::string& classifier,
             const std::string& regime, std::size_t episodes, std::uint64_t seed,
             const AdaptConfig& adapt, double ridge, const EpisodeConfig& ep_cfg,
             const std::string& out_path) {
  auto datasets = load_all_domains(data_root);
  Backbone backbone = load_backbone(ckpt);
  std::vector<EvalRow> rows;
  for (const auto& ds : datasets)
    rows.push_back(evaluate_episodes(ds, backbone, parse_classifier(classifier),
                                     parse_regime(regime), episodes, seed, adapt, ridge, ep_cfg));
  std::cout << eval_table(rows);
  if (!out_path.empty()) write_eval_csv(out_path, rows);
  return 0;
}

int cmd_retrieval(const std::string& data_root, const std::string& ckpt,
                  const std::vector<std::size_t>& ks, const std::string& out_path) {
  if (ks.empty()) fail(errc::invalid_argument, "retrieval: no k values given");
  auto datasets = load_all_domains(data_root);
  Backbone backbone = load_backbone(ckpt);
  std::vector<RecallRow> rows;
  for (const auto& ds : datasets) {
    Tensor feats = backbone.forward(ds.test.x).detach();
    auto recalls = recall_at_k(feats, ds.test.y, ks);
    for (std::size_t k : ks) rows.push_back({ds.name, k, recalls.at(k)});
  }
  std::cout << recall_table(rows);
  if (!out_path.empty()) write_recall_csv(out_path, rows);
  return 0;
}

int cmd_cka(const std::string& a_path, const std::string& b_path, const KernelSpec& spec) {
  Tensor a = read_feature_matrix(a_path);
  Tensor b = read_feature_matrix(b_path);
  double value = cka_dissimilarity(a, b, spec).item();
  std::printf("dissimilarity %.6f\n", value);
  return 0;
}

}  // namespace

int dispatch(int argc, const char* const* argv) {
  CLI::App app{"universal-representation toolkit: synthetic multi-domain distillation and "
               "few-shot evaluation"};
  app.require_subcommand(1);

  // gen ----------------------------------------------------------------
  auto* gen = app.add_subcommand("gen", "generate synthetic multi-domain datasets");
  gen->set_config("--config");
  SyntheticSpec spec;
  std::uint64_t gen_seed = 0;
  std::string gen_out;
  gen->add_option("--out", gen_out, "output root directory")->required();
  gen->add_option("--seed", gen_seed, "sampling seed")->required();
  gen->add_option("--domains", spec.domains)->check(CLI::PositiveNumber);
  gen->add_option("--train-classes", spec.train_classes)->check(CLI::PositiveNumber);
  gen->add_option("--val-classes", spec.val_classes)->check(CLI::PositiveNumber);
  gen->add_option("--test-classes", spec.test_classes)->check(CLI::PositiveNumber);
  gen->add_option("--samples-per-class", spec.samples_per_class)->check(CLI::PositiveNumber);
  gen->add_option("--latent-dim", spec.latent_dim)->check(CLI::PositiveNumber);
  gen->add_option("--input-dim", spec.input_dim)->check(CLI::PositiveNumber);
  gen->add_option("--noise", spec.noise_scale)->check(CLI::NonNegativeNumber);
  gen->add_option("--transform-seed", spec.transform_seed);

  // train-sdl ------------------------------------------------------------
  auto* sdl = app.add_subcommand("train-sdl", "train one single-domain teacher");
  sdl->set_config("--config");
  std::string sdl_data, sdl_domain, sdl_out, sdl_trace;
  std::uint64_t sdl_seed = 0;
  NetFlags sdl_net;
  SgdFlags sdl_sgd;
  sdl->add_option("--data", sdl_data, "dataset root directory")->required();
  sdl->add_option("--domain", sdl_domain, "domain name")->required();
  sdl->add_option("--out", sdl_out, "output checkpoint path")->required();
  sdl->add_option("--seed", sdl_seed)->required();
  sdl->add_option("--trace", sdl_trace, "loss trace CSV path");
  sdl_net.attach(sdl);
  sdl_sgd.attach(sdl);

  // train-mdl -------------------------------------------------------------
  auto* mdl = app.add_subcommand("train-mdl", "train the joint multi-domain baseline");
  mdl->set_config("--config");
  std::string mdl_data, mdl_out, mdl_trace;
  std::uint64_t mdl_seed = 0;
  std::vector<std::size_t> mdl_weights;
  NetFlags mdl_net;
  SgdFlags mdl_sgd;
  mdl->add_option("--data", mdl_data)->required();
  mdl->add_option("--out", mdl_out)->required();
  mdl->add_option("--seed", mdl_seed)->required();
  mdl->add_option("--batch-weights", mdl_weights, "per-domain batch multipliers")->delimiter(',');
  mdl->add_option("--trace", mdl_trace);
  mdl_net.attach(mdl);
  mdl_sgd.attach(mdl);

  // train-url --------------------------------------------------------------
  auto* url = app.add_subcommand("train-url", "distill frozen teachers into one network");
  url->set_config("--config");
  std::string url_data, url_teachers, url_out, url_trace;
  std::string url_floss = "cka", url_kernel = "rbf";
  std::uint64_t url_seed = 0;
  std::vector<std::size_t> url_weights;
  double url_sigma = 0.0;
  DistillConfig distill;
  NetFlags url_net;
  SgdFlags url_sgd;
  url->add_option("--data", url_data)->required();
  url->add_option("--teachers", url_teachers, "directory with <domain>.ckpt teachers")->required();
  url->add_option("--out", url_out)->required();
  url->add_option("--seed", url_seed)->required();
  url->add_option("--feature-loss", url_floss, "cka|l2|cosine|none");
  url->add_flag("--kl", distill.use_kl, "add prediction matching");
  url->add_option("--kernel", url_kernel, "linear|rbf");
  url->add_option("--bandwidth-fraction", distill.kernel.bandwidth_fraction)
      ->check(CLI::PositiveNumber);
  url->add_option("--sigma", url_sigma, "explicit rbf bandwidth");
  url->add_option("--lambda-p", distill.lambda_p)->check(CLI::NonNegativeNumber);
  url->add_option("--lambda-f", distill.lambda_f)->check(CLI::NonNegativeNumber);
  url->add_option("--ce-weight", distill.ce_weight)->check(CLI::NonNegativeNumber);
  url->add_option("--anchor", distill.anchor_domain, "domain with multiplied lambdas");
  url->add_option("--anchor-multiplier", distill.anchor_multiplier);
  url->add_option("--anneal-horizon", distill.anneal_horizon,
                  "iterations until lambda reaches zero (0 = training length)");
  url->add_option("--batch-weights", url_weights)->delimiter(',');
  url->add_option("--trace", url_trace);
  url_net.attach(url);
  url_sgd.attach(url);

  // eval ----------------------------------------------------------------------
  auto* ev = app.add_subcommand("eval", "episodic few-shot evaluation");
  ev->set_config("--config");
  std::string ev_data, ev_ckpt, ev_classifier = "ncc", ev_regime = "varying", ev_out;
  std::size_t ev_episodes = 600;
  std::uint64_t ev_seed = 0;
  AdaptConfig adapt;
  EpisodeConfig ep_cfg;
  double ev_ridge = 1e-3;
  ev->add_option("--data", ev_data)->required();
  ev->add_option("--ckpt", ev_ckpt)->required();
  ev->add_option("--seed", ev_seed)->required();
  ev->add_option("--classifier", ev_classifier, "ncc|ncc-adapt|ncc-md");
  ev->add_option("--regime", ev_regime, "varying|vw5shot|5way1shot");
  ev->add_option("--episodes", ev_episodes)->check(CLI::PositiveNumber);
  ev->add_option("--out", ev_out, "report CSV path");
  ev->add_option("--adapt-iters", adapt.iterations);
  ev->add_option("--adapt-lr", adapt.lr)->check(CLI::PositiveNumber);
  ev->add_option("--cosine-scale", adapt.cosine_scale)->check(CLI::PositiveNumber);
  ev->add_option("--ridge", ev_ridge)->check(CLI::NonNegativeNumber);
  ev->add_option("--max-way", ep_cfg.max_way)->check(CLI::PositiveNumber);
  ev->add_option("--max-shot", ep_cfg.max_shot)->check(CLI::PositiveNumber);
  ev->add_option("--query-cap", ep_cfg.query_cap)->check(CLI::PositiveNumber);

  // retrieval --------------------------------------------------------------------
  auto* ret = app.add_subcommand("retrieval", "global recall@k over the test pool");
  ret->set_config("--config");
  std::string ret_data, ret_ckpt, ret_out;
  std::vector<std::size_t> ret_ks = {1, 2, 4, 8};
  ret->add_option("--data", ret_data)->required();
  ret->add_option("--ckpt", ret_ckpt)->required();
  ret->add_option("--k", ret_ks, "neighbor counts")->delimiter(',');
  ret->add_option("--out", ret_out);

  // cka -----------------------------------------------------------------------------
  auto* ck = app.add_subcommand("cka", "compare two feature matrices");
  ck->set_config("--config");
  std::string ck_a, ck_b, ck_kernel = "linear";
  double ck_sigma = 0.0;
  KernelSpec ck_spec;
  ck->add_option("--a", ck_a)->required();
  ck->add_option("--b", ck_b)->required();
  ck->add_option("--kernel", ck_kernel, "linear|rbf");
  ck->add_option("--bandwidth-fraction", ck_spec.bandwidth_fraction)->check(CLI::PositiveNumber);
  ck->add_option("--sigma", ck_sigma, "explicit rbf bandwidth");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      std::cout << app.help();
      return 0;
    }
    std::cerr << "error: " << e.what() << "\n" << app.help();
    return 1;
  }

  try {
    if (gen->parsed()) return cmd_gen(spec, gen_seed, gen_out);
    if (sdl->parsed())
      return cmd_train_sdl(sdl_data, sdl_domain, sdl_out, sdl_net, sdl_sgd, sdl_seed, sdl_trace);
    if (mdl->parsed())
      return cmd_train_mdl(mdl_data, mdl_out, mdl_net, mdl_sgd, mdl_weights, mdl_seed, mdl_trace);
    if (url->parsed()) {
      distill.feature_loss = parse_feature_loss(url_floss);
      distill.kernel.kind = url_kernel == "rbf" ? KernelKind::rbf : KernelKind::linear;
      if (url_kernel != "rbf" && url_kernel != "linear")
        fail(errc::usage, "unknown kernel '" + url_kernel + "'");
      if (url_sigma > 0.0) distill.kernel.sigma = url_sigma;
      return cmd_train_url(url_data, url_teachers, url_out, url_net, url_sgd, distill, url_weights,
                           url_seed, url_trace);
    }
    if (ev->parsed())
      return cmd_eval(ev_data, ev_ckpt, ev_classifier, ev_regime, ev_episodes, ev_seed, adapt,
                      ev_ridge, ep_cfg, ev_out);
    if (ret->parsed()) return cmd_retrieval(ret_data, ret_ckpt, ret_ks, ret_out);
    if (ck->parsed()) {
      ck_spec.kind = ck_kernel == "rbf" ? KernelKind::rbf : KernelKind::linear;
      if (ck_kernel != "rbf" && ck_kernel != "linear")
        fail(errc::usage, "unknown kernel '" + ck_kernel + "'");
      if (ck_sigma > 0.0) ck_spec.sigma = ck_sigma;
      return cmd_cka(ck_a, ck_b, ck_spec);
    }
  } catch (const Error& e) {
    std::cerr << "error (" << errc_name(e.code()) << "): " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 1;
}

}  // namespace unirep
