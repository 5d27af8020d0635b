#include "mtkd/data.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "binary_io.hpp"
#include "json.hpp"

namespace mtkd {

namespace {

using nlohmann::json;

constexpr char kMagic[12] = {'M', 'T', 'K', 'D', '-', 'D', 'A', 'T', 'A', 'S', 'E', 'T'};
constexpr std::size_t kHeaderBytes = 16;
constexpr std::size_t kMinFileBytes = kHeaderBytes + 8;
constexpr int kMaxAnchorDraws = 1000;

// Substream tags of the generator seeded by spec.seed.
constexpr std::uint64_t kAnchorStream = 1;
constexpr std::uint64_t kSampleStream = 2;
constexpr std::uint64_t kProbeStream = 3;

json spec_json(const SyntheticSpec& s) {
  return json{{"num_classes", s.num_classes},     {"raw_image_dim", s.raw_image_dim},
              {"raw_text_dim", s.raw_text_dim},   {"samples_per_class", s.samples_per_class},
              {"noise_sigma", s.noise_sigma},     {"anchor_scale", s.anchor_scale},
              {"seed", s.seed}};
}

SyntheticSpec spec_from(const json& j) {
  require(j.is_object(), ErrorCode::ConfigParseError, "data spec must be a JSON object");
  SyntheticSpec s;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "num_classes") s.num_classes = value.get<std::size_t>();
      else if (key == "raw_image_dim") s.raw_image_dim = value.get<std::size_t>();
      else if (key == "raw_text_dim") s.raw_text_dim = value.get<std::size_t>();
      else if (key == "samples_per_class") s.samples_per_class = value.get<std::size_t>();
      else if (key == "noise_sigma") s.noise_sigma = value.get<double>();
      else if (key == "anchor_scale") s.anchor_scale = value.get<double>();
      else if (key == "seed") s.seed = value.get<std::uint64_t>();
      else fail(ErrorCode::ConfigParseError, "unknown data spec field '" + key + "'");
    } catch (const json::exception& e) {
      fail(ErrorCode::ConfigParseError, "data spec field '" + key + "': " + e.what());
    }
  }
  s.validate();
  return s;
}

DenseMatrix draw_anchors(std::size_t n, std::size_t dim, double scale, SeededRng& rng) {
  for (int attempt = 0; attempt < kMaxAnchorDraws; ++attempt) {
    DenseMatrix a(n, dim);
    for (double& x : a.data()) x = rng.normal(0.0, scale);
    bool distinct = true;
    for (std::size_t i = 0; i < n && distinct; ++i) {
      if (norm2(a.row(i)) < kZeroNormThreshold) distinct = false;
      for (std::size_t j = i + 1; j < n && distinct; ++j)
        if (cosine_sim(a.row(i), a.row(j)) > kMaxAnchorCosine) distinct = false;
    }
    if (distinct) return a;
  }
  fail(ErrorCode::InvalidSpec, "could not draw distinct class anchors");
}

void add_noisy_copy(std::span<const double> anchor, double sigma, SeededRng& rng, std::span<double> out) {
  for (std::size_t k = 0; k < anchor.size(); ++k) out[k] = anchor[k] + sigma * rng.normal();
}

double nearest_anchor_accuracy(const DenseMatrix& anchors, double sigma, std::size_t per_class, SeededRng& rng) {
  std::vector<double> x(anchors.cols());
  std::size_t correct = 0;
  for (std::size_t c = 0; c < anchors.rows(); ++c) {
    for (std::size_t s = 0; s < per_class; ++s) {
      add_noisy_copy(anchors.row(c), sigma, rng, x);
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < anchors.rows(); ++a) {
        double d = 0.0;
        for (std::size_t k = 0; k < x.size(); ++k) d += (x[k] - anchors(a, k)) * (x[k] - anchors(a, k));
        if (d < best_d) {
          best_d = d;
          best = a;
        }
      }
      if (best == c) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(anchors.rows() * per_class);
}

}  // namespace

void SyntheticSpec::validate() const {
  require(num_classes >= 2, ErrorCode::InvalidSpec, "num_classes must be >= 2");
  require(raw_image_dim >= 2 && raw_text_dim >= 2, ErrorCode::InvalidSpec, "raw dims must be >= 2");
  require(samples_per_class >= 1, ErrorCode::InvalidSpec, "samples_per_class must be >= 1");
  require(std::isfinite(noise_sigma) && noise_sigma >= 0.0, ErrorCode::InvalidSpec, "noise_sigma must be >= 0");
  require(std::isfinite(anchor_scale) && anchor_scale > 0.0, ErrorCode::InvalidSpec, "anchor_scale must be > 0");
}

std::string spec_to_json(const SyntheticSpec& spec) { return spec_json(spec).dump(); }

SyntheticSpec spec_from_json(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  require(!j.is_discarded(), ErrorCode::ConfigParseError, "data spec is not valid JSON");
  return spec_from(j);
}

PairedDataset generate(const SyntheticSpec& spec) {
  spec.validate();
  const SeededRng root(spec.seed);
  SeededRng anchor_rng = root.derive(kAnchorStream);
  SeededRng sample_rng = root.derive(kSampleStream);
  SeededRng probe_rng = root.derive(kProbeStream);

  PairedDataset ds;
  ds.spec = spec;
  ds.image_anchors = draw_anchors(spec.num_classes, spec.raw_image_dim, spec.anchor_scale, anchor_rng);
  ds.text_anchors = draw_anchors(spec.num_classes, spec.raw_text_dim, spec.anchor_scale, anchor_rng);

  const std::size_t m = spec.num_samples();
  ds.image_raw = DenseMatrix(m, spec.raw_image_dim);
  ds.text_raw = DenseMatrix(m, spec.raw_text_dim);
  ds.labels.resize(m);
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    for (std::size_t s = 0; s < spec.samples_per_class; ++s) {
      const std::size_t row = c * spec.samples_per_class + s;
      ds.labels[row] = c;
      add_noisy_copy(ds.image_anchors.row(c), spec.noise_sigma, sample_rng, ds.image_raw.row(row));
      add_noisy_copy(ds.text_anchors.row(c), spec.noise_sigma, sample_rng, ds.text_raw.row(row));
    }
  }
  ds.image_probe_accuracy = nearest_anchor_accuracy(ds.image_anchors, spec.noise_sigma, spec.samples_per_class, probe_rng);
  ds.text_probe_accuracy = nearest_anchor_accuracy(ds.text_anchors, spec.noise_sigma, spec.samples_per_class, probe_rng);
  return ds;
}

double min_anchor_distance(const DenseMatrix& anchors) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < anchors.rows(); ++i)
    for (std::size_t j = i + 1; j < anchors.rows(); ++j) {
      double d = 0.0;
      for (std::size_t k = 0; k < anchors.cols(); ++k) d += (anchors(i, k) - anchors(j, k)) * (anchors(i, k) - anchors(j, k));
      best = std::min(best, std::sqrt(d));
    }
  return best;
}

DatasetSplit split_dataset(const PairedDataset& ds, double train_fraction) {
  require(train_fraction > 0.0 && train_fraction < 1.0, ErrorCode::InvalidConfig, "train_fraction must be in (0, 1)");
  const std::size_t spc = ds.spec.samples_per_class;
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(spc)));
  require(n_train >= 1 && n_train < spc, ErrorCode::InvalidConfig, "split leaves a class without train or eval rows");
  DatasetSplit split;
  for (std::size_t c = 0; c < ds.spec.num_classes; ++c)
    for (std::size_t s = 0; s < spc; ++s) (s < n_train ? split.train : split.eval).push_back(c * spc + s);
  return split;
}

std::string to_string(Corruption::Kind kind) {
  switch (kind) {
    case Corruption::Kind::None: return "none";
    case Corruption::Kind::WeightNoise: return "weight_noise";
    case Corruption::Kind::LabelShuffle: return "label_shuffle";
  }
  return "unknown";
}

EncoderParams corrupt_teacher(const EncoderParams& params, const Corruption& corruption, SeededRng& rng) {
  EncoderParams out = params;
  switch (corruption.kind) {
    case Corruption::Kind::None: break;
    case Corruption::Kind::WeightNoise:
      require(std::isfinite(corruption.sigma_w) && corruption.sigma_w >= 0.0, ErrorCode::InvalidConfig,
              "sigma_w must be >= 0");
      if (corruption.sigma_w == 0.0) break;
      for (auto& layer : out.layers)
        for (double& w : layer.weight.data()) w += corruption.sigma_w * rng.normal();
      break;
    case Corruption::Kind::LabelShuffle: out.shuffled_label_tag = true; break;
  }
  return out;
}

DenseMatrix build_class_bank(const EncoderParams& text_encoder, const PairedDataset& ds) {
  return encode_eval(text_encoder, ds.text_anchors);
}

void save_dataset(const PairedDataset& ds, const std::filesystem::path& path) {
  json meta{{"spec", spec_json(ds.spec)},
            {"num_samples", ds.size()},
            {"image_dim", ds.image_raw.cols()},
            {"text_dim", ds.text_raw.cols()},
            {"num_classes", ds.image_anchors.rows()},
            {"image_probe_accuracy", ds.image_probe_accuracy},
            {"text_probe_accuracy", ds.text_probe_accuracy}};
  const std::string meta_text = meta.dump();

  std::vector<std::uint8_t> bytes(kMagic, kMagic + sizeof(kMagic));
  detail::put_u32(bytes, kDatasetFormatVersion);
  detail::put_u64(bytes, meta_text.size());
  bytes.insert(bytes.end(), meta_text.begin(), meta_text.end());
  detail::put_f64s(bytes, ds.image_raw.data());
  detail::put_f64s(bytes, ds.text_raw.data());
  detail::put_f64s(bytes, ds.image_anchors.data());
  detail::put_f64s(bytes, ds.text_anchors.data());
  for (std::size_t y : ds.labels) detail::put_u64(bytes, static_cast<std::uint64_t>(static_cast<std::int64_t>(y)));
  detail::put_u64(bytes, detail::fnv1a64(bytes));
  detail::write_file(path, bytes);
}

PairedDataset load_dataset(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = detail::read_file(path);
  const std::span<const std::uint8_t> in(bytes);
  require(bytes.size() >= kMinFileBytes, ErrorCode::ChecksumMismatch, "dataset file is truncated");
  require(std::equal(kMagic, kMagic + sizeof(kMagic), bytes.begin()), ErrorCode::FormatVersionMismatch,
          "not a dataset file (bad magic)");
  const std::uint32_t version = detail::get_u32(in, sizeof(kMagic));
  require(version == kDatasetFormatVersion, ErrorCode::FormatVersionMismatch,
          "dataset format version " + std::to_string(version));
  const std::size_t body = bytes.size() - 8;
  require(detail::fnv1a64(in.first(body)) == detail::get_u64(in, body), ErrorCode::ChecksumMismatch,
          "dataset checksum mismatch");

  require(body >= kHeaderBytes + 8, ErrorCode::FormatVersionMismatch, "missing metadata block");
  const std::uint64_t meta_len = detail::get_u64(in, kHeaderBytes);
  std::size_t offset = kHeaderBytes + 8;
  require(meta_len <= body - offset, ErrorCode::FormatVersionMismatch, "metadata block overruns file");
  json meta = json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(offset),
                          bytes.begin() + static_cast<std::ptrdiff_t>(offset + meta_len), nullptr, false);
  require(!meta.is_discarded() && meta.is_object(), ErrorCode::FormatVersionMismatch, "metadata is not JSON");
  offset += meta_len;

  PairedDataset ds;
  std::size_t m = 0, di = 0, dt = 0, n = 0;
  try {
    ds.spec = spec_from(meta.at("spec"));
    m = meta.at("num_samples").get<std::size_t>();
    di = meta.at("image_dim").get<std::size_t>();
    dt = meta.at("text_dim").get<std::size_t>();
    n = meta.at("num_classes").get<std::size_t>();
    ds.image_probe_accuracy = meta.at("image_probe_accuracy").get<double>();
    ds.text_probe_accuracy = meta.at("text_probe_accuracy").get<double>();
  } catch (const json::exception& e) {
    fail(ErrorCode::FormatVersionMismatch, std::string("bad metadata: ") + e.what());
  } catch (const Error& e) {
    fail(ErrorCode::FormatVersionMismatch, std::string("bad metadata: ") + e.what());
  }
  const std::size_t values = m * di + m * dt + n * di + n * dt + m;
  require(body - offset == 8 * values, ErrorCode::FormatVersionMismatch, "payload size does not match metadata");

  auto read_matrix = [&](std::size_t rows, std::size_t cols) {
    DenseMatrix out(rows, cols);
    for (double& x : out.data()) {
      x = detail::get_f64(in, offset);
      offset += 8;
    }
    return out;
  };
  ds.image_raw = read_matrix(m, di);
  ds.text_raw = read_matrix(m, dt);
  ds.image_anchors = read_matrix(n, di);
  ds.text_anchors = read_matrix(n, dt);
  ds.labels.resize(m);
  for (std::size_t& y : ds.labels) {
    const auto v = static_cast<std::int64_t>(detail::get_u64(in, offset));
    offset += 8;
    require(v >= 0 && static_cast<std::size_t>(v) < n, ErrorCode::FormatVersionMismatch, "label out of range");
    y = static_cast<std::size_t>(v);
  }
  return ds;
}

}  // namespace mtkd
