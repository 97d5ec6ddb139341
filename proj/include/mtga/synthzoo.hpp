#pragma once
// Deterministic synthetic multi-domain person-image datasets (64x32 RGB) and
// an ingestion path for externally supplied data in the documented directory
// layout. Identities are parameterized figures (head ellipse, torso block,
// leg blocks) whose colors and geometry derive from a seeded hash, composited
// over camera-specific backgrounds, with a per-domain style transform.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mtga/rng.hpp"
#include "mtga/tensor.hpp"

namespace mtga::synthzoo {

inline constexpr std::int64_t kImageH = 64;
inline constexpr std::int64_t kImageW = 32;

struct DomainStyle {
  double hue_shift = 0.0;     // degrees in [-180, 180]
  double brightness = 1.0;    // scale in [0.5, 1.5]
  double contrast = 1.0;      // scale in [0.5, 1.5]
  double noise_sigma = 0.0;   // pixel units in [0, 0.1]
  std::vector<std::array<double, 3>> background_palette;
};

struct DomainSpec {
  std::string domain_id;
  DomainStyle style;
  std::int64_t n_identities = 0;
  std::int64_t images_per_identity = 0;
  std::int64_t n_cameras = 0;
  std::uint64_t rng_seed = 0;
};

// Throws std::invalid_argument naming the offending field.
void validate(const DomainSpec& spec);

struct ImageBatch {
  Tensor<float> pixels;  // [B, 3, H, W] in [0,1]
  std::vector<std::int64_t> ids;
  std::vector<std::int64_t> cams;
  std::string domain;

  std::int64_t size() const { return pixels.defined() ? pixels.dim(0) : 0; }
};

struct SplitDataset {
  std::string split;  // train | query | gallery
  ImageBatch data;
};

struct DomainData {
  std::string domain_id;
  SplitDataset train, query, gallery;

  const SplitDataset& split(const std::string& name) const;
};

// Deterministic function of the spec; train identities are disjoint from
// query/gallery identities.
DomainData generate_domain(const DomainSpec& spec);

// Reads `<root>/<domain_id>/<split>/<identity>/<camera>_<seq>.png`; images
// are decoded to [0,1] and bilinearly resized to 64x32.
DomainData load_dataset(const std::string& root_path, const std::string& domain_id);

// Writes a DomainData in the same layout (8-bit RGB PNG).
void write_dataset(const std::string& root_path, const DomainData& data);

// Uniform sample of batch_size images without replacement; advances rng.
ImageBatch sample_batch(const SplitDataset& dataset, std::int64_t batch_size, Rng& rng);

// Select a subset by index (in order given).
ImageBatch take(const ImageBatch& b, const std::vector<std::int64_t>& indices);

// The five stock domains: D1-D3 form the training data zoo, D4 is the
// held-out target-model training domain, D5 is the unseen test domain.
DomainSpec stock_domain(const std::string& domain_id);
std::vector<std::string> stock_domain_ids();

// Rec. 601 luma of one image [3,H,W] -> [H*W] doubles.
std::vector<double> luminance(const Tensor<float>& chw, std::int64_t image_index = -1);

}  // namespace mtga::synthzoo
