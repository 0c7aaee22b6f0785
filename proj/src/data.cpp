#include "unirep/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "unirep/common.hpp"
#include "unirep/serialize.hpp"

namespace unirep {

const char* regime_name(Regime r) noexcept {
  switch (r) {
    case Regime::varying: return "varying";
    case Regime::vw5shot: return "vw5shot";
    case Regime::fiveway1shot: return "5way1shot";
  }
  return "unknown";
}

Regime parse_regime(const std::string& name) {
  if (name == "varying") return Regime::varying;
  if (name == "vw5shot") return Regime::vw5shot;
  if (name == "5way1shot") return Regime::fiveway1shot;
  fail(errc::invalid_argument, "unknown episode regime '" + name + "'");
}

const SplitData& DomainDataset::split(Split s) const {
  switch (s) {
    case Split::train: return train;
    case Split::val: return val;
    case Split::test: return test;
  }
  fail(errc::invalid_argument, "bad split");
}

int local_label(const SplitData& split, int global_label) {
  auto it = std::lower_bound(split.classes.begin(), split.classes.end(), global_label);
  if (it == split.classes.end() || *it != global_label)
    fail(errc::validation, "label " + std::to_string(global_label) + " not in split class set");
  return static_cast<int>(it - split.classes.begin());
}

// --- synthetic generation ---------------------------------------------------

namespace {

// Gram-Schmidt orthonormal columns of a gaussian p x k matrix.
std::vector<double> orthonormal_map(std::size_t p, std::size_t k, Rng& rng) {
  std::vector<std::vector<double>> cols(k, std::vector<double>(p));
  for (auto& col : cols)
    for (auto& v : col) v = rng.normal();
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t prev = 0; prev < j; ++prev) {
      double dot = 0.0;
      for (std::size_t i = 0; i < p; ++i) dot += cols[j][i] * cols[prev][i];
      for (std::size_t i = 0; i < p; ++i) cols[j][i] -= dot * cols[prev][i];
    }
    double norm = 0.0;
    for (double v : cols[j]) norm += v * v;
    norm = std::sqrt(norm);
    if (norm < 1e-9) fail(errc::degenerate, "synthetic transform degenerated");
    for (auto& v : cols[j]) v /= norm;
  }
  std::vector<double> w(p * k);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < k; ++j) w[i * k + j] = cols[j][i];
  return w;
}

double apply_nonlinearity(std::size_t kind, double u) {
  switch (kind % 3) {
    case 0: return std::tanh(u);
    case 1: return u / (1.0 + std::abs(u));  // softsign
    default: return u;
  }
}

SplitData make_split(const std::vector<std::vector<double>>& rows, const std::vector<int>& labels,
                     std::size_t p) {
  SplitData out;
  std::vector<double> flat;
  flat.reserve(rows.size() * p);
  for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
  out.x = Tensor::from_data({rows.size(), p}, std::move(flat));
  out.y = labels;
  std::set<int> classes(labels.begin(), labels.end());
  out.classes.assign(classes.begin(), classes.end());
  return out;
}

}  // namespace

std::vector<DomainDataset> generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  if (spec.domains == 0 || spec.train_classes == 0 || spec.val_classes == 0 ||
      spec.test_classes == 0 || spec.samples_per_class == 0 || spec.latent_dim == 0 ||
      spec.input_dim == 0)
    fail(errc::invalid_argument, "synthetic spec: all counts must be positive");
  if (spec.input_dim < spec.latent_dim)
    fail(errc::invalid_argument, "synthetic spec: input_dim must be >= latent_dim");
  if (!(spec.noise_scale >= 0.0))
    fail(errc::invalid_argument, "synthetic spec: noise scale must be nonnegative");

  std::size_t total_classes = spec.train_classes + spec.val_classes + spec.test_classes;
  std::vector<DomainDataset> out;
  out.reserve(spec.domains);
  for (std::size_t domain = 0; domain < spec.domains; ++domain) {
    std::string tag = "domain" + std::to_string(domain);
    Rng proto_rng = Rng::stream(spec.transform_seed, tag + "/prototypes");
    Rng map_rng = Rng::stream(spec.transform_seed, tag + "/map");
    Rng bias_rng = Rng::stream(spec.transform_seed, tag + "/bias");
    Rng noise_rng = Rng::stream(seed, tag + "/noise");

    std::vector<std::vector<double>> prototypes(total_classes,
                                                std::vector<double>(spec.latent_dim));
    for (auto& proto : prototypes)
      for (auto& v : proto) v = proto_rng.normal();

    std::vector<double> w = orthonormal_map(spec.input_dim, spec.latent_dim, map_rng);
    std::vector<double> bias(spec.input_dim);
    for (auto& v : bias) v = bias_rng.uniform(-0.5, 0.5);
    std::size_t nl = domain;  // cycles tanh / softsign / identity

    auto emit_class = [&](std::size_t cls, std::vector<std::vector<double>>& rows,
                          std::vector<int>& labels) {
      std::vector<double> z(spec.latent_dim);
      for (std::size_t s = 0; s < spec.samples_per_class; ++s) {
        for (std::size_t k = 0; k < spec.latent_dim; ++k)
          z[k] = prototypes[cls][k] + spec.noise_scale * noise_rng.normal();
        std::vector<double> x(spec.input_dim);
        for (std::size_t i = 0; i < spec.input_dim; ++i) {
          double u = 0.0;
          for (std::size_t k = 0; k < spec.latent_dim; ++k) u += w[i * spec.latent_dim + k] * z[k];
          x[i] = apply_nonlinearity(nl, u) + bias[i];
        }
        rows.push_back(std::move(x));
        labels.push_back(static_cast<int>(cls));
      }
    };

    DomainDataset ds;
    ds.name = tag;
    ds.input_dim = spec.input_dim;
    std::vector<std::vector<double>> rows;
    std::vector<int> labels;
    for (std::size_t c = 0; c < spec.train_classes; ++c) emit_class(c, rows, labels);
    ds.train = make_split(rows, labels, spec.input_dim);
    rows.clear();
    labels.clear();
    for (std::size_t c = spec.train_classes; c < spec.train_classes + spec.val_classes; ++c)
      emit_class(c, rows, labels);
    ds.val = make_split(rows, labels, spec.input_dim);
    rows.clear();
    labels.clear();
    for (std::size_t c = spec.train_classes + spec.val_classes; c < total_classes; ++c)
      emit_class(c, rows, labels);
    ds.test = make_split(rows, labels, spec.input_dim);
    validate_dataset(ds);
    out.push_back(std::move(ds));
  }
  return out;
}

void validate_dataset(const DomainDataset& ds) {
  const SplitData* splits[3] = {&ds.train, &ds.val, &ds.test};
  const char* names[3] = {"train", "val", "test"};
  std::set<int> seen;
  for (int s = 0; s < 3; ++s) {
    const SplitData& sp = *splits[s];
    if (sp.size() == 0) fail(errc::validation, "split '" + std::string(names[s]) + "' is empty");
    if (sp.x.rank() != 2 || sp.x.dim(0) != sp.size() || sp.x.dim(1) != ds.input_dim)
      fail(errc::validation, "split '" + std::string(names[s]) + "' sample matrix shape mismatch");
    std::set<int> observed(sp.y.begin(), sp.y.end());
    std::set<int> declared(sp.classes.begin(), sp.classes.end());
    if (observed != declared || declared.size() != sp.classes.size())
      fail(errc::validation,
           "split '" + std::string(names[s]) + "' class list disagrees with labels");
    for (int c : declared) {
      if (seen.count(c))
        fail(errc::validation, "class " + std::to_string(c) + " appears in more than one split");
      seen.insert(c);
    }
  }
  std::map<int, std::size_t> test_counts;
  for (int y : ds.test.y) test_counts[y]++;
  for (const auto& [cls, count] : test_counts)
    if (count < 2)
      fail(errc::validation,
           "test class " + std::to_string(cls) + " has fewer than 2 samples");
}

// --- episode sampling ---------------------------------------------------------

Episode sample_episode(const DomainDataset& ds, Regime regime, Rng& rng,
                       const EpisodeConfig& cfg) {
  const SplitData& split = ds.test;
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < split.y.size(); ++i) by_class[split.y[i]].push_back(i);

  std::size_t min_count = regime == Regime::vw5shot ? 6 : 2;
  std::vector<int> candidates;
  for (const auto& [cls, rows] : by_class)
    if (rows.size() >= min_count) candidates.push_back(cls);

  std::size_t way;
  if (regime == Regime::fiveway1shot) {
    if (candidates.size() < 5)
      fail(errc::infeasible_episode,
           "5way1shot infeasible: only " + std::to_string(candidates.size()) + " usable classes");
    way = 5;
  } else {
    if (candidates.size() < 2)
      fail(errc::infeasible_episode, regime == Regime::vw5shot
                                         ? "vw5shot infeasible: fewer than 2 classes with 6+ samples"
                                         : "varying regime infeasible: fewer than 2 usable classes");
    way = rng.range_inclusive(2, std::min(cfg.max_way, candidates.size()));
  }

  std::vector<std::size_t> chosen_idx = rng.pick(candidates.size(), way);
  std::vector<int> class_ids;
  class_ids.reserve(way);
  for (std::size_t i : chosen_idx) class_ids.push_back(candidates[i]);
  std::sort(class_ids.begin(), class_ids.end());

  Episode ep;
  ep.regime = regime;
  ep.class_ids = class_ids;
  for (std::size_t local = 0; local < class_ids.size(); ++local) {
    std::vector<std::size_t> rows = by_class[class_ids[local]];
    rng.shuffle(rows);
    std::size_t shot;
    switch (regime) {
      case Regime::varying:
        shot = rng.range_inclusive(1, std::min(cfg.max_shot, rows.size() - 1));
        break;
      case Regime::vw5shot: shot = 5; break;
      case Regime::fiveway1shot: shot = 1; break;
      default: shot = 1;
    }
    std::size_t queries = std::min(cfg.query_cap, rows.size() - shot);
    for (std::size_t i = 0; i < shot; ++i) {
      ep.support_rows.push_back(rows[i]);
      ep.support_y.push_back(static_cast<int>(local));
    }
    for (std::size_t i = shot; i < shot + queries; ++i) {
      ep.query_rows.push_back(rows[i]);
      ep.query_y.push_back(static_cast<int>(local));
    }
  }
  ep.support_x = gather_rows(split.x, ep.support_rows);
  ep.query_x = gather_rows(split.x, ep.query_rows);
  return ep;
}

// --- batching -------------------------------------------------------------------

MultiDomainBatcher::MultiDomainBatcher(std::vector<const DomainDataset*> datasets,
                                       std::vector<std::size_t> batch_sizes, Rng rng)
    : datasets_(std::move(datasets)), batch_sizes_(std::move(batch_sizes)), rng_(rng) {
  if (datasets_.empty()) fail(errc::invalid_argument, "batcher: no datasets");
  if (batch_sizes_.size() != datasets_.size())
    fail(errc::invalid_argument, "batcher: one batch size per domain required");
  for (std::size_t d = 0; d < datasets_.size(); ++d) {
    if (batch_sizes_[d] == 0) fail(errc::invalid_argument, "batcher: batch sizes must be positive");
    std::size_t n = datasets_[d]->train.size();
    if (n == 0) fail(errc::validation, "batcher: empty train split in " + datasets_[d]->name);
    Cursor cur;
    cur.perm.resize(n);
    for (std::size_t i = 0; i < n; ++i) cur.perm[i] = i;
    rng_.shuffle(cur.perm);
    cursors_.push_back(std::move(cur));
  }
}

std::vector<DomainBatch> MultiDomainBatcher::next() {
  std::vector<DomainBatch> out;
  out.reserve(datasets_.size());
  for (std::size_t d = 0; d < datasets_.size(); ++d) {
    Cursor& cur = cursors_[d];
    const SplitData& train = datasets_[d]->train;
    std::vector<std::size_t> rows;
    rows.reserve(batch_sizes_[d]);
    while (rows.size() < batch_sizes_[d]) {
      if (cur.pos == cur.perm.size()) {
        rng_.shuffle(cur.perm);
        cur.pos = 0;
      }
      rows.push_back(cur.perm[cur.pos++]);
    }
    DomainBatch batch;
    batch.x = gather_rows(train.x, rows);
    batch.y.reserve(rows.size());
    for (std::size_t r : rows) batch.y.push_back(local_label(train, train.y[r]));
    out.push_back(std::move(batch));
  }
  return out;
}

// --- persistence ------------------------------------------------------------------

namespace {

using nlohmann::ordered_json;

ordered_json split_manifest(const SplitData& sp, const std::string& name) {
  ordered_json j;
  j["classes"] = sp.classes;
  j["samples"] = sp.size();
  j["x"] = name + "_x.f64";
  j["y"] = name + "_y.i32";
  return j;
}

void save_split(const SplitData& sp, const std::filesystem::path& dir, const std::string& name) {
  write_f64_file(dir / (name + "_x.f64"), sp.x.data());
  write_i32_file(dir / (name + "_y.i32"), sp.y);
}

SplitData load_split(const ordered_json& manifest, const std::filesystem::path& dir,
                     const std::string& name, std::size_t input_dim) {
  if (!manifest.contains(name))
    fail(errc::bad_format, "manifest missing split '" + name + "'");
  const ordered_json& j = manifest.at(name);
  std::size_t samples = j.at("samples").get<std::size_t>();
  std::vector<double> x = read_f64_file(dir / j.at("x").get<std::string>());
  std::vector<int> y = read_i32_file(dir / j.at("y").get<std::string>());
  if (x.size() != samples * input_dim)
    fail(errc::validation, "split '" + name + "': sample payload holds " +
                               std::to_string(x.size()) + " values, manifest claims " +
                               std::to_string(samples * input_dim));
  if (y.size() != samples)
    fail(errc::validation, "split '" + name + "': label payload holds " +
                               std::to_string(y.size()) + " labels, manifest claims " +
                               std::to_string(samples));
  SplitData sp;
  sp.x = Tensor::from_data({samples, input_dim}, std::move(x));
  sp.y = std::move(y);
  sp.classes = j.at("classes").get<std::vector<int>>();
  std::sort(sp.classes.begin(), sp.classes.end());
  std::set<int> observed(sp.y.begin(), sp.y.end());
  if (std::vector<int>(observed.begin(), observed.end()) != sp.classes)
    fail(errc::validation, "split '" + name + "': manifest class list disagrees with labels");
  return sp;
}

}  // namespace

void save_dataset(const DomainDataset& ds, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(errc::io, "cannot create dataset directory " + dir.string());
  ordered_json manifest;
  manifest["format_version"] = kDatasetFormatVersion;
  manifest["domain"] = ds.name;
  manifest["input_dim"] = ds.input_dim;
  ordered_json splits;
  splits["train"] = split_manifest(ds.train, "train");
  splits["val"] = split_manifest(ds.val, "val");
  splits["test"] = split_manifest(ds.test, "test");
  manifest["splits"] = splits;
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) fail(errc::io, "cannot write manifest in " + dir.string());
  out << manifest.dump(2) << "\n";
  out.flush();
  if (!out.good()) fail(errc::io, "failed writing manifest in " + dir.string());
  save_split(ds.train, dir, "train");
  save_split(ds.val, dir, "val");
  save_split(ds.test, dir, "test");
}

DomainDataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) fail(errc::missing_payload, "manifest not found in " + dir.string());
  ordered_json manifest;
  try {
    in >> manifest;
  } catch (const std::exception& e) {
    fail(errc::bad_format, "bad manifest in " + dir.string() + ": " + e.what());
  }
  int version = manifest.value("format_version", -1);
  if (version != kDatasetFormatVersion)
    fail(errc::bad_version,
         "unsupported dataset format version " + std::to_string(version) + " in " + dir.string());
  DomainDataset ds;
  try {
    ds.name = manifest.at("domain").get<std::string>();
    ds.input_dim = manifest.at("input_dim").get<std::size_t>();
    const ordered_json& splits = manifest.at("splits");
    ds.train = load_split(splits, dir, "train", ds.input_dim);
    ds.val = load_split(splits, dir, "val", ds.input_dim);
    ds.test = load_split(splits, dir, "test", ds.input_dim);
  } catch (const nlohmann::json::exception& e) {
    fail(errc::bad_format, "bad manifest in " + dir.string() + ": " + e.what());
  }
  validate_dataset(ds);
  return ds;
}

}  // namespace unirep
