#include "mtkd/encoder.hpp"

#include <bit>
#include <cmath>
#include <cstring>

namespace mtkd {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::Relu: return "relu";
    case Activation::Tanh: return "tanh";
    case Activation::Identity: return "identity";
  }
  return "relu";
}

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::Relu;
  if (name == "tanh") return Activation::Tanh;
  if (name == "identity") return Activation::Identity;
  fail(ErrorCode::InvalidConfig, "unknown activation '" + name + "'");
}

void EncoderConfig::validate() const {
  require(input_dim >= 1 && output_dim >= 1, ErrorCode::InvalidConfig, "encoder dims must be >= 1");
  for (std::size_t w : hidden_widths) require(w >= 1, ErrorCode::InvalidConfig, "hidden width must be >= 1");
  require(dropout_p >= 0.0 && dropout_p < 1.0, ErrorCode::InvalidConfig, "dropout_p must be in [0,1)");
}

namespace {

std::size_t layer_in(const EncoderConfig& c, std::size_t l) {
  return l == 0 ? c.input_dim : c.hidden_widths[l - 1];
}

std::size_t layer_out(const EncoderConfig& c, std::size_t l) {
  return l < c.hidden_widths.size() ? c.hidden_widths[l] : c.output_dim;
}

double activate(Activation a, double z) {
  switch (a) {
    case Activation::Relu: return z > 0.0 ? z : 0.0;
    case Activation::Tanh: return std::tanh(z);
    case Activation::Identity: return z;
  }
  return z;
}

double activation_derivative(Activation a, double z) {
  switch (a) {
    case Activation::Relu: return z > 0.0 ? 1.0 : 0.0;
    case Activation::Tanh: {
      const double t = std::tanh(z);
      return 1.0 - t * t;
    }
    case Activation::Identity: return 1.0;
  }
  return 1.0;
}

// z = X W^T + b
DenseMatrix affine(const DenseMatrix& X, const Layer& layer) {
  DenseMatrix z(X.rows(), layer.weight.rows());
  for (std::size_t i = 0; i < X.rows(); ++i) {
    auto x = X.row(i);
    for (std::size_t o = 0; o < layer.weight.rows(); ++o) {
      auto w = layer.weight.row(o);
      double s = layer.bias[o];
      for (std::size_t k = 0; k < x.size(); ++k) s += w[k] * x[k];
      z(i, o) = s;
    }
  }
  return z;
}

void check_shapes(const EncoderParams& a, const EncoderParams& b) {
  require(a.layers.size() == b.layers.size(), ErrorCode::ShapeMismatch, "layer count mismatch");
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    require(a.layers[l].weight.same_shape(b.layers[l].weight) && a.layers[l].bias.size() == b.layers[l].bias.size(),
            ErrorCode::ShapeMismatch, "layer " + std::to_string(l) + " shape mismatch");
  }
}

}  // namespace

std::size_t EncoderParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

EncoderParams zeros_like(const EncoderParams& params) {
  EncoderParams z;
  z.config = params.config;
  for (const auto& l : params.layers)
    z.layers.push_back({DenseMatrix(l.weight.rows(), l.weight.cols()), std::vector<double>(l.bias.size(), 0.0)});
  return z;
}

std::vector<double> flatten(const EncoderParams& params) {
  std::vector<double> flat;
  flat.reserve(params.parameter_count());
  for (const auto& l : params.layers) {
    flat.insert(flat.end(), l.weight.data().begin(), l.weight.data().end());
    flat.insert(flat.end(), l.bias.begin(), l.bias.end());
  }
  return flat;
}

EncoderParams unflatten(const EncoderConfig& config, std::span<const double> flat) {
  EncoderParams p;
  p.config = config;
  std::size_t offset = 0;
  for (std::size_t l = 0; l < config.num_layers(); ++l) {
    const std::size_t in = layer_in(config, l);
    const std::size_t out = layer_out(config, l);
    require(offset + out * in + out <= flat.size(), ErrorCode::ShapeMismatch, "flat vector too short");
    std::vector<double> w(flat.begin() + offset, flat.begin() + offset + out * in);
    offset += out * in;
    std::vector<double> b(flat.begin() + offset, flat.begin() + offset + out);
    offset += out;
    p.layers.push_back({DenseMatrix(out, in, std::move(w)), std::move(b)});
  }
  require(offset == flat.size(), ErrorCode::ShapeMismatch, "flat vector too long");
  return p;
}

void add_scaled(EncoderParams& dst, const EncoderParams& src, double scale) {
  check_shapes(dst, src);
  for (std::size_t l = 0; l < dst.layers.size(); ++l) {
    dst.layers[l].weight.add_scaled(src.layers[l].weight, scale);
    for (std::size_t i = 0; i < dst.layers[l].bias.size(); ++i) dst.layers[l].bias[i] += scale * src.layers[l].bias[i];
  }
}

std::uint64_t checksum(const EncoderParams& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (double x : flatten(params)) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(x);
    for (int b = 0; b < 8; ++b) {
      h ^= (bits >> (8 * b)) & 0xFF;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

EncoderParams init_params(const EncoderConfig& config, SeededRng& rng) {
  config.validate();
  EncoderParams p;
  p.config = config;
  for (std::size_t l = 0; l < config.num_layers(); ++l) {
    const std::size_t in = layer_in(config, l);
    const std::size_t out = layer_out(config, l);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Layer layer{DenseMatrix(out, in), std::vector<double>(out, 0.0)};
    for (double& w : layer.weight.data()) w = rng.uniform(-bound, bound);
    p.layers.push_back(std::move(layer));
  }
  return p;
}

EncodeResult encode(const EncoderParams& params, const DenseMatrix& X, bool train_mode, SeededRng& rng) {
  const auto& cfg = params.config;
  require(X.cols() == cfg.input_dim, ErrorCode::ShapeMismatch,
          "encoder expects input dim " + std::to_string(cfg.input_dim) + ", got " + std::to_string(X.cols()));
  require(X.all_finite(), ErrorCode::NumericError, "non-finite encoder input");

  EncodeResult result;
  ForwardTape& tape = result.tape;
  tape.config = cfg;
  tape.input = X;
  for (const auto& l : params.layers) tape.weights.push_back(l.weight);

  const double keep = 1.0 - cfg.dropout_p;
  const bool use_dropout = train_mode && cfg.dropout_p > 0.0;
  DenseMatrix h = X;
  for (std::size_t l = 0; l + 1 < params.layers.size(); ++l) {
    DenseMatrix z = affine(h, params.layers[l]);
    DenseMatrix mask(z.rows(), z.cols(), 1.0);
    if (use_dropout) {
      for (double& m : mask.data()) m = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
    }
    DenseMatrix a(z.rows(), z.cols());
    for (std::size_t i = 0; i < z.size(); ++i) a.data()[i] = activate(cfg.activation, z.data()[i]) * mask.data()[i];
    tape.pre_activations.push_back(std::move(z));
    tape.dropout_masks.push_back(std::move(mask));
    tape.hidden_outputs.push_back(a);
    h = std::move(a);
  }
  DenseMatrix y = affine(h, params.layers.back());

  DenseMatrix f(y.rows(), y.cols());
  tape.row_norms.resize(y.rows());
  for (std::size_t i = 0; i < y.rows(); ++i) {
    const double n = norm2(y.row(i));
    require(n >= kZeroNormThreshold, ErrorCode::ZeroVector, "encoder output row " + std::to_string(i) + " has zero norm");
    tape.row_norms[i] = n;
    for (std::size_t k = 0; k < y.cols(); ++k) f(i, k) = y(i, k) / n;
  }
  tape.raw_output = std::move(y);
  tape.features = f;
  result.features = std::move(f);
  return result;
}

DenseMatrix encode_eval(const EncoderParams& params, const DenseMatrix& X) {
  SeededRng unused(0);
  return encode(params, X, false, unused).features;
}

std::vector<BackwardResult> backward(ForwardTape& tape, std::span<const DenseMatrix> grad_features) {
  require(!tape.consumed, ErrorCode::TapeReused, "forward tape was already consumed");
  for (const auto& g : grad_features)
    require(g.same_shape(tape.features), ErrorCode::ShapeMismatch,
            "grad_features " + std::to_string(g.rows()) + "x" + std::to_string(g.cols()) + " vs features " +
                std::to_string(tape.features.rows()) + "x" + std::to_string(tape.features.cols()));
  tape.consumed = true;

  const std::size_t num_layers = tape.weights.size();
  std::vector<BackwardResult> results;
  results.reserve(grad_features.size());
  for (const auto& gf : grad_features) {
    BackwardResult r;
    r.grad_params.config = tape.config;
    r.grad_params.layers.resize(num_layers);

    // f = y / |y|  =>  dL/dy = (g - f (f . g)) / |y|
    DenseMatrix grad(gf.rows(), gf.cols());
    for (std::size_t i = 0; i < gf.rows(); ++i) {
      const double proj = dot(tape.features.row(i), gf.row(i));
      for (std::size_t k = 0; k < gf.cols(); ++k)
        grad(i, k) = (gf(i, k) - tape.features(i, k) * proj) / tape.row_norms[i];
    }

    for (std::size_t l = num_layers; l-- > 0;) {
      const DenseMatrix& layer_input = l == 0 ? tape.input : tape.hidden_outputs[l - 1];
      Layer& g = r.grad_params.layers[l];
      g.weight = matmul_at_b(grad, layer_input);
      g.bias.assign(grad.cols(), 0.0);
      for (std::size_t i = 0; i < grad.rows(); ++i)
        for (std::size_t o = 0; o < grad.cols(); ++o) g.bias[o] += grad(i, o);

      DenseMatrix grad_in = matmul(grad, tape.weights[l]);
      if (l > 0) {
        const DenseMatrix& z = tape.pre_activations[l - 1];
        const DenseMatrix& mask = tape.dropout_masks[l - 1];
        for (std::size_t i = 0; i < grad_in.size(); ++i)
          grad_in.data()[i] *= activation_derivative(tape.config.activation, z.data()[i]) * mask.data()[i];
      }
      grad = std::move(grad_in);
    }
    r.grad_input = std::move(grad);
    results.push_back(std::move(r));
  }
  return results;
}

BackwardResult backward(ForwardTape& tape, const DenseMatrix& grad_features) {
  auto results = backward(tape, std::span<const DenseMatrix>(&grad_features, 1));
  return std::move(results.front());
}

AdamState make_adam_state(const EncoderParams& params, double lr) {
  AdamState s;
  s.m = zeros_like(params);
  s.v = zeros_like(params);
  s.lr = lr;
  return s;
}

void adam_step(EncoderParams& params, const EncoderParams& grads, AdamState& state) {
  check_shapes(params, grads);
  check_shapes(params, state.m);
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  auto update = [&](std::span<double> p, std::span<const double> g, std::span<double> m, std::span<double> v) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      p[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  };
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    update(params.layers[l].weight.data(), grads.layers[l].weight.data(), state.m.layers[l].weight.data(),
           state.v.layers[l].weight.data());
    update(params.layers[l].bias, grads.layers[l].bias, state.m.layers[l].bias, state.v.layers[l].bias);
  }
}

}  // namespace mtkd
