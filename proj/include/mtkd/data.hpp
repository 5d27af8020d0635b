#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mtkd/encoder.hpp"
#include "mtkd/numerics.hpp"
#include "mtkd/rng.hpp"

namespace mtkd {

// Planted-cluster paired data: per class, one anchor per modality with
// coordinates N(0, anchor_scale^2); each sample is its class anchor plus
// N(0, noise_sigma^2) per coordinate. The two modalities share nothing but
// the class id.
struct SyntheticSpec {
  std::size_t num_classes = 8;
  std::size_t raw_image_dim = 32;
  std::size_t raw_text_dim = 24;
  std::size_t samples_per_class = 250;
  double noise_sigma = 0.35;
  double anchor_scale = 1.0;
  std::uint64_t seed = 0;

  void validate() const;  // InvalidSpec
  std::size_t num_samples() const noexcept { return num_classes * samples_per_class; }
  bool operator==(const SyntheticSpec&) const = default;
};

std::string spec_to_json(const SyntheticSpec& spec);
SyntheticSpec spec_from_json(const std::string& text);  // InvalidSpec on bad fields

// Rows are class-major: class c occupies [c * spc, (c + 1) * spc).
struct PairedDataset {
  SyntheticSpec spec;
  DenseMatrix image_raw;      // M x raw_image_dim
  DenseMatrix text_raw;       // M x raw_text_dim
  std::vector<std::size_t> labels;
  DenseMatrix image_anchors;  // N x raw_image_dim
  DenseMatrix text_anchors;   // N x raw_text_dim; the class "prompt" inputs
  // Nearest-anchor accuracy on a fresh held-out draw; a separability check.
  double image_probe_accuracy = 0.0;
  double text_probe_accuracy = 0.0;

  std::size_t size() const noexcept { return labels.size(); }
  bool operator==(const PairedDataset&) const = default;
};

// Anchor sets with any pair above this cosine are redrawn.
inline constexpr double kMaxAnchorCosine = 0.99;

PairedDataset generate(const SyntheticSpec& spec);

double min_anchor_distance(const DenseMatrix& anchors);

struct DatasetSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> eval;
};

// First round(train_fraction * spc) samples of every class go to train.
DatasetSplit split_dataset(const PairedDataset& ds, double train_fraction = 0.8);

struct Corruption {
  enum class Kind { None, WeightNoise, LabelShuffle };
  Kind kind = Kind::None;
  double sigma_w = 0.0;
};

std::string to_string(Corruption::Kind kind);

// WeightNoise adds N(0, sigma_w^2) to every weight (biases untouched).
// LabelShuffle only sets the tag; the trainer pretrains tagged teachers
// against a fixed permutation of the class ids.
EncoderParams corrupt_teacher(const EncoderParams& params, const Corruption& corruption, SeededRng& rng);

// Encodes each class text anchor once; rows come out unit-norm.
DenseMatrix build_class_bank(const EncoderParams& text_encoder, const PairedDataset& ds);

inline constexpr std::uint32_t kDatasetFormatVersion = 1;

void save_dataset(const PairedDataset& ds, const std::filesystem::path& path);
PairedDataset load_dataset(const std::filesystem::path& path);

}  // namespace mtkd
