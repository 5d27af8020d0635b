#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mtkd/numerics.hpp"
#include "mtkd/rng.hpp"

namespace mtkd {

enum class Activation { Relu, Tanh, Identity };

std::string to_string(Activation a);
Activation parse_activation(const std::string& name);

struct EncoderConfig {
  std::size_t input_dim = 1;
  std::vector<std::size_t> hidden_widths;
  std::size_t output_dim = 1;
  Activation activation = Activation::Relu;
  double dropout_p = 0.0;

  void validate() const;
  std::size_t num_layers() const { return hidden_widths.size() + 1; }
  bool operator==(const EncoderConfig&) const = default;
};

struct Layer {
  DenseMatrix weight;  // out x in
  std::vector<double> bias;
  bool operator==(const Layer&) const = default;
};

// Also used as the gradient container: same shapes, same layout.
struct EncoderParams {
  EncoderConfig config;
  std::vector<Layer> layers;
  // Set by data::corrupt_teacher; the trainer pretrains such a teacher against
  // a permuted class assignment.
  bool shuffled_label_tag = false;

  std::size_t parameter_count() const;
  bool operator==(const EncoderParams&) const = default;
};

EncoderParams zeros_like(const EncoderParams& params);
std::vector<double> flatten(const EncoderParams& params);
EncoderParams unflatten(const EncoderConfig& config, std::span<const double> flat);
void add_scaled(EncoderParams& dst, const EncoderParams& src, double scale);
// FNV-1a over the little-endian bytes of flatten(params).
std::uint64_t checksum(const EncoderParams& params);

// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases exactly zero.
EncoderParams init_params(const EncoderConfig& config, SeededRng& rng);

// Everything backward needs for one forward pass. The weights are
// snapshotted so the tape stays valid after the live parameters move on.
struct ForwardTape {
  EncoderConfig config;
  std::vector<DenseMatrix> weights;
  DenseMatrix input;
  std::vector<DenseMatrix> pre_activations;  // one per hidden layer
  std::vector<DenseMatrix> dropout_masks;    // scaled keep masks, one per hidden layer
  std::vector<DenseMatrix> hidden_outputs;   // post activation and dropout
  DenseMatrix raw_output;                    // before L2 normalization
  std::vector<double> row_norms;
  DenseMatrix features;
  bool consumed = false;

  std::size_t batch() const { return input.rows(); }
};

struct EncodeResult {
  DenseMatrix features;  // B x output_dim, unit rows
  ForwardTape tape;
};

EncodeResult encode(const EncoderParams& params, const DenseMatrix& X, bool train_mode, SeededRng& rng);
// Eval-mode convenience: no dropout, no tape kept by the caller.
DenseMatrix encode_eval(const EncoderParams& params, const DenseMatrix& X);

struct BackwardResult {
  EncoderParams grad_params;
  DenseMatrix grad_input;
};

BackwardResult backward(ForwardTape& tape, const DenseMatrix& grad_features);
// Several cotangents against one tape; the tape is consumed once.
std::vector<BackwardResult> backward(ForwardTape& tape, std::span<const DenseMatrix> grad_features);

struct AdamState {
  EncoderParams m;
  EncoderParams v;
  std::uint64_t t = 0;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

AdamState make_adam_state(const EncoderParams& params, double lr);
void adam_step(EncoderParams& params, const EncoderParams& grads, AdamState& state);

}  // namespace mtkd
