#include "unirep/nets.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "unirep/common.hpp"
#include "unirep/serialize.hpp"

namespace unirep {

namespace {

Tensor glorot_matrix(std::size_t fan_in, std::size_t fan_out, Rng& rng, bool trainable) {
  double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> data(fan_in * fan_out);
  for (auto& v : data) v = rng.uniform(-limit, limit);
  return Tensor::from_data({fan_in, fan_out}, std::move(data), trainable);
}

// logits[i,:] = feats[i,:] * W + b, bias broadcast over rows via ones-column.
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor prod = matmul(x, w);
  Tensor ones_col = Tensor::ones({x.dim(0), 1});
  Tensor bias_rows = matmul(ones_col, reshape(b, {1, b.numel()}));
  return add(prod, bias_rows);
}

}  // namespace

Backbone Backbone::init(std::vector<std::size_t> widths, Rng& rng, bool trainable) {
  if (widths.size() < 2) fail(errc::invalid_argument, "backbone needs at least input and output widths");
  Backbone net;
  net.widths = std::move(widths);
  for (std::size_t i = 0; i + 1 < net.widths.size(); ++i) {
    net.weights.push_back(glorot_matrix(net.widths[i], net.widths[i + 1], rng, trainable));
    net.biases.push_back(Tensor::zeros({net.widths[i + 1]}, trainable));
  }
  return net;
}

Tensor Backbone::forward(const Tensor& batch) const {
  if (batch.rank() != 2 || batch.dim(1) != input_dim())
    fail(errc::shape_mismatch, "backbone forward: batch " + shape_str(batch.shape()) +
                                   " does not match input width " + std::to_string(input_dim()));
  Tensor h = batch;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    h = affine(h, weights[i], biases[i]);
    if (i + 1 < weights.size()) h = relu(h);
  }
  return h;
}

std::vector<Tensor> Backbone::parameters() const {
  std::vector<Tensor> params;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    params.push_back(weights[i]);
    params.push_back(biases[i]);
  }
  return params;
}

Backbone Backbone::clone(bool trainable) const {
  Backbone out;
  out.widths = widths;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out.weights.push_back(weights[i].clone(trainable));
    out.biases.push_back(biases[i].clone(trainable));
  }
  return out;
}

Head Head::init(std::size_t feature_dim, std::size_t classes, Rng& rng, bool trainable) {
  if (classes == 0) fail(errc::invalid_argument, "head needs at least one class");
  Head head;
  head.weight = glorot_matrix(feature_dim, classes, rng, trainable);
  head.bias = Tensor::zeros({classes}, trainable);
  return head;
}

Tensor Head::forward(const Tensor& feats) const {
  if (feats.rank() != 2 || feats.dim(1) != feature_dim())
    fail(errc::shape_mismatch, "head forward: features " + shape_str(feats.shape()) +
                                   " do not match feature dim " + std::to_string(feature_dim()));
  return affine(feats, weight, bias);
}

std::vector<Tensor> Head::parameters() const { return {weight, bias}; }

Head Head::clone(bool trainable) const {
  Head out;
  out.weight = weight.clone(trainable);
  out.bias = bias.clone(trainable);
  return out;
}

Adapter Adapter::identity(std::size_t d, bool trainable) {
  std::vector<double> data(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) data[i * d + i] = 1.0;
  Adapter a;
  a.matrix = Tensor::from_data({d, d}, std::move(data), trainable);
  return a;
}

Tensor Adapter::apply(const Tensor& feats) const {
  if (feats.rank() != 2 || feats.dim(1) != dim())
    fail(errc::shape_mismatch, "adapter: features " + shape_str(feats.shape()) +
                                   " do not match adapter size " + std::to_string(dim()));
  return matmul(feats, matrix);
}

std::vector<Tensor> Adapter::parameters() const { return {matrix}; }

Adapter Adapter::clone(bool trainable) const {
  Adapter out;
  out.matrix = matrix.clone(trainable);
  return out;
}

std::vector<Tensor> MultiDomainModel::parameters(bool include_adapters) const {
  std::vector<Tensor> params = backbone.parameters();
  for (const auto& [name, head] : heads)
    for (auto& p : head.parameters()) params.push_back(p);
  if (include_adapters)
    for (const auto& [name, adapter] : adapters)
      for (auto& p : adapter.parameters()) params.push_back(p);
  return params;
}

void MultiDomainModel::validate() const {
  std::set<std::string> head_keys, adapter_keys;
  for (const auto& [k, v] : heads) head_keys.insert(k);
  for (const auto& [k, v] : adapters) adapter_keys.insert(k);
  if (head_keys != adapter_keys)
    fail(errc::validation, "model heads and adapters are keyed by different domain sets");
}

// --- checkpoint name mapping -------------------------------------------------

namespace {

void append_backbone(NamedTensors& out, const Backbone& net) {
  for (std::size_t i = 0; i < net.weights.size(); ++i) {
    out.emplace_back("backbone." + std::to_string(i) + ".weight", net.weights[i]);
    out.emplace_back("backbone." + std::to_string(i) + ".bias", net.biases[i]);
  }
}

Backbone parse_backbone(const NamedTensors& entries, const std::filesystem::path& path) {
  std::map<std::size_t, Tensor> ws, bs;
  for (const auto& [name, t] : entries) {
    if (name.rfind("backbone.", 0) != 0) continue;
    std::size_t dot = name.find('.', 9);
    if (dot == std::string::npos) fail(errc::bad_format, "bad tensor name '" + name + "' in " + path.string());
    std::size_t layer = std::stoul(name.substr(9, dot - 9));
    std::string kind = name.substr(dot + 1);
    if (kind == "weight")
      ws.emplace(layer, t);
    else if (kind == "bias")
      bs.emplace(layer, t);
    else
      fail(errc::bad_format, "bad tensor name '" + name + "' in " + path.string());
  }
  if (ws.empty() || ws.size() != bs.size())
    fail(errc::bad_format, "incomplete backbone in " + path.string());
  Backbone net;
  net.widths.push_back(ws.begin()->second.dim(0));
  for (std::size_t i = 0; i < ws.size(); ++i) {
    auto w = ws.find(i), b = bs.find(i);
    if (w == ws.end() || b == bs.end())
      fail(errc::bad_format, "missing backbone layer " + std::to_string(i) + " in " + path.string());
    if (w->second.dim(0) != net.widths.back() || b->second.dim(0) != w->second.dim(1))
      fail(errc::validation, "inconsistent backbone layer shapes in " + path.string());
    net.widths.push_back(w->second.dim(1));
    net.weights.push_back(w->second);
    net.biases.push_back(b->second);
  }
  return net;
}

// "<prefix>.<domain>.<suffix>" with domain possibly containing dots.
std::string middle_name(const std::string& name, const std::string& prefix, const std::string& suffix) {
  return name.substr(prefix.size(), name.size() - prefix.size() - suffix.size());
}

}  // namespace

void save_model(const MultiDomainModel& model, const std::filesystem::path& path) {
  model.validate();
  NamedTensors entries;
  append_backbone(entries, model.backbone);
  for (const auto& [domain, head] : model.heads) {
    entries.emplace_back("head." + domain + ".weight", head.weight);
    entries.emplace_back("head." + domain + ".bias", head.bias);
  }
  for (const auto& [domain, adapter] : model.adapters)
    entries.emplace_back("adapter." + domain + ".matrix", adapter.matrix);
  save_tensors(path, entries);
}

MultiDomainModel load_model(const std::filesystem::path& path, bool trainable) {
  NamedTensors entries = load_tensors(path, trainable);
  MultiDomainModel model;
  model.backbone = parse_backbone(entries, path);
  std::map<std::string, Tensor> head_w, head_b;
  for (const auto& [name, t] : entries) {
    if (name.rfind("head.", 0) == 0) {
      if (name.size() > 7 && name.compare(name.size() - 7, 7, ".weight") == 0)
        head_w.emplace(middle_name(name, "head.", ".weight"), t);
      else if (name.size() > 5 && name.compare(name.size() - 5, 5, ".bias") == 0)
        head_b.emplace(middle_name(name, "head.", ".bias"), t);
      else
        fail(errc::bad_format, "bad tensor name '" + name + "' in " + path.string());
    } else if (name.rfind("adapter.", 0) == 0) {
      if (name.size() > 7 && name.compare(name.size() - 7, 7, ".matrix") == 0) {
        Adapter a;
        a.matrix = t;
        model.adapters.emplace(middle_name(name, "adapter.", ".matrix"), std::move(a));
      } else {
        fail(errc::bad_format, "bad tensor name '" + name + "' in " + path.string());
      }
    }
  }
  for (const auto& [domain, w] : head_w) {
    auto b = head_b.find(domain);
    if (b == head_b.end()) fail(errc::bad_format, "head bias missing for domain " + domain);
    Head head;
    head.weight = w;
    head.bias = b->second;
    model.heads.emplace(domain, std::move(head));
  }
  if (model.heads.size() != head_b.size())
    fail(errc::bad_format, "head weight missing for some domain in " + path.string());
  model.validate();
  return model;
}

void save_teacher(const SingleDomainModel& model, const std::filesystem::path& path) {
  NamedTensors entries;
  append_backbone(entries, model.backbone);
  entries.emplace_back("head." + model.domain + ".weight", model.head.weight);
  entries.emplace_back("head." + model.domain + ".bias", model.head.bias);
  save_tensors(path, entries);
}

SingleDomainModel load_teacher(const std::filesystem::path& path, bool trainable) {
  NamedTensors entries = load_tensors(path, trainable);
  SingleDomainModel model;
  model.backbone = parse_backbone(entries, path);
  bool have_w = false, have_b = false;
  for (const auto& [name, t] : entries) {
    if (name.rfind("head.", 0) != 0) continue;
    if (name.size() > 7 && name.compare(name.size() - 7, 7, ".weight") == 0) {
      if (have_w) fail(errc::bad_format, "multiple heads in teacher checkpoint " + path.string());
      model.domain = middle_name(name, "head.", ".weight");
      model.head.weight = t;
      have_w = true;
    } else if (name.size() > 5 && name.compare(name.size() - 5, 5, ".bias") == 0) {
      model.head.bias = t;
      have_b = true;
    }
  }
  if (!have_w || !have_b) fail(errc::bad_format, "teacher head missing in " + path.string());
  return model;
}

Backbone load_backbone(const std::filesystem::path& path) {
  NamedTensors entries = load_tensors(path, false);
  return parse_backbone(entries, path);
}

}  // namespace unirep
