#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "unirep/rng.hpp"
#include "unirep/tensor.hpp"

namespace unirep {

// Fully connected feature extractor: ReLU on hidden layers, linear output.
// widths = {input, hidden..., feature_dim}.
struct Backbone {
  std::vector<std::size_t> widths;
  std::vector<Tensor> weights;  // [widths[i] x widths[i+1]]
  std::vector<Tensor> biases;   // [widths[i+1]]

  static Backbone init(std::vector<std::size_t> widths, Rng& rng, bool trainable = true);

  Tensor forward(const Tensor& batch) const;
  std::size_t input_dim() const { return widths.front(); }
  std::size_t feature_dim() const { return widths.back(); }
  std::vector<Tensor> parameters() const;
  Backbone clone(bool trainable) const;
};

// Linear classifier over features.
struct Head {
  Tensor weight;  // [d x classes]
  Tensor bias;    // [classes]

  static Head init(std::size_t feature_dim, std::size_t classes, Rng& rng, bool trainable = true);

  Tensor forward(const Tensor& feats) const;
  std::size_t class_count() const { return bias.dim(0); }
  std::size_t feature_dim() const { return weight.dim(0); }
  std::vector<Tensor> parameters() const;
  Head clone(bool trainable) const;
};

// Square linear map on features, no bias.
struct Adapter {
  Tensor matrix;  // [d x d]

  static Adapter identity(std::size_t d, bool trainable = true);

  Tensor apply(const Tensor& feats) const;
  std::size_t dim() const { return matrix.dim(0); }
  std::vector<Tensor> parameters() const;
  Adapter clone(bool trainable) const;
};

// Shared backbone with one head and one adapter per training domain.
struct MultiDomainModel {
  Backbone backbone;
  std::map<std::string, Head> heads;
  std::map<std::string, Adapter> adapters;

  std::vector<Tensor> parameters(bool include_adapters) const;
  void validate() const;  // heads and adapters keyed by identical domain sets
};

struct SingleDomainModel {
  std::string domain;
  Backbone backbone;
  Head head;
};

// Frozen per-domain teachers; no tensor requires grad.
struct TeacherBank {
  std::map<std::string, SingleDomainModel> teachers;
};

// Checkpoint mapping (bit-exact round trip; see serialize.hpp for the layout).
void save_model(const MultiDomainModel& model, const std::filesystem::path& path);
MultiDomainModel load_model(const std::filesystem::path& path, bool trainable = true);

void save_teacher(const SingleDomainModel& model, const std::filesystem::path& path);
SingleDomainModel load_teacher(const std::filesystem::path& path, bool trainable = false);

// Works for both model and teacher checkpoints; used by eval-only commands.
Backbone load_backbone(const std::filesystem::path& path);

}  // namespace unirep
