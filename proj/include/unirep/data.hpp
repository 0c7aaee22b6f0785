#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "unirep/rng.hpp"
#include "unirep/tensor.hpp"

namespace unirep {

enum class Split { train, val, test };
enum class Regime { varying, vw5shot, fiveway1shot };

const char* regime_name(Regime r) noexcept;
Regime parse_regime(const std::string& name);

struct SplitData {
  Tensor x;                  // [n x p]
  std::vector<int> y;        // global class ids, one per row
  std::vector<int> classes;  // sorted distinct class ids
  std::size_t size() const { return y.size(); }
};

// One labeled data source. Splits carry mutually exclusive class sets.
struct DomainDataset {
  std::string name;
  std::size_t input_dim = 0;
  SplitData train, val, test;

  const SplitData& split(Split s) const;
};

// Synthetic stand-in for a multi-domain benchmark: per domain, class
// prototypes live in a shared-size latent space and are pushed through a
// fixed domain transform (orthonormal map, elementwise nonlinearity, bias).
// Class identities are disjoint across splits; the transform is keyed by
// transform_seed, sample noise by the generation seed.
struct SyntheticSpec {
  std::size_t domains = 3;
  std::size_t train_classes = 10;
  std::size_t val_classes = 5;
  std::size_t test_classes = 10;
  std::size_t samples_per_class = 20;
  std::size_t latent_dim = 8;
  std::size_t input_dim = 16;
  double noise_scale = 0.3;
  std::uint64_t transform_seed = 7;
};

std::vector<DomainDataset> generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

// Hard validation: split class-disjointness, label/class consistency, at
// least two samples per test class.
void validate_dataset(const DomainDataset& ds);

struct EpisodeConfig {
  std::size_t max_way = 10;
  std::size_t max_shot = 10;
  std::size_t query_cap = 10;  // queries per class
};

// One few-shot task. Labels are episode-local indices into class_ids (sorted
// ascending); support and query row sets are disjoint.
struct Episode {
  Regime regime = Regime::varying;
  std::vector<int> class_ids;
  Tensor support_x, query_x;
  std::vector<int> support_y, query_y;
  std::vector<std::size_t> support_rows, query_rows;  // rows into the source split
  std::size_t way() const { return class_ids.size(); }
};

Episode sample_episode(const DomainDataset& ds, Regime regime, Rng& rng,
                       const EpisodeConfig& cfg = {});

struct DomainBatch {
  Tensor x;
  std::vector<int> y;  // local train-class indices
};

// Replacement-free per-domain epochs, reshuffled per epoch; one batch per
// domain per step. Single consumer; owns its rng.
class MultiDomainBatcher {
 public:
  MultiDomainBatcher(std::vector<const DomainDataset*> datasets,
                     std::vector<std::size_t> batch_sizes, Rng rng);

  std::vector<DomainBatch> next();
  std::size_t domain_count() const { return datasets_.size(); }

 private:
  struct Cursor {
    std::vector<std::size_t> perm;
    std::size_t pos = 0;
  };
  std::vector<const DomainDataset*> datasets_;
  std::vector<std::size_t> batch_sizes_;
  std::vector<Cursor> cursors_;
  Rng rng_;
};

int local_label(const SplitData& split, int global_label);

// Dataset directory: manifest.json plus raw little-endian float64 sample and
// int32 label files per split. Round-trip is bit-exact.
inline constexpr int kDatasetFormatVersion = 1;

void save_dataset(const DomainDataset& ds, const std::filesystem::path& dir);
DomainDataset load_dataset(const std::filesystem::path& dir);

}  // namespace unirep
