#include "mtkd/checkpoint.hpp"

#include "binary_io.hpp"
#include "json.hpp"

namespace mtkd {

using nlohmann::json;

namespace {

json config_to_json(const EncoderConfig& c) {
  return {{"input_dim", c.input_dim},
          {"hidden_widths", c.hidden_widths},
          {"output_dim", c.output_dim},
          {"activation", to_string(c.activation)},
          {"dropout_p", c.dropout_p}};
}

EncoderConfig config_from_json(const json& j) {
  EncoderConfig c;
  c.input_dim = j.at("input_dim").get<std::size_t>();
  c.hidden_widths = j.at("hidden_widths").get<std::vector<std::size_t>>();
  c.output_dim = j.at("output_dim").get<std::size_t>();
  c.activation = parse_activation(j.at("activation").get<std::string>());
  c.dropout_p = j.at("dropout_p").get<double>();
  c.validate();
  return c;
}

}  // namespace

void save_checkpoint(const EncoderParams& params, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec, ErrorCode::IoError, "cannot create " + dir.string());
  json manifest = {{"format", "mtkd-encoder"},
                   {"version", 1},
                   {"config", config_to_json(params.config)},
                   {"shuffled_label_tag", params.shuffled_label_tag},
                   {"layers", json::array()}};
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& layer = params.layers[l];
    const std::string file = "layer_" + std::to_string(l) + ".bin";
    std::vector<std::uint8_t> bytes;
    detail::put_f64s(bytes, layer.weight.data());
    detail::put_f64s(bytes, layer.bias);
    detail::write_file(dir / file, bytes);
    manifest["layers"].push_back({{"file", file}, {"rows", layer.weight.rows()}, {"cols", layer.weight.cols()}});
  }
  const std::string text = manifest.dump(2);
  detail::write_file(dir / "checkpoint.json", std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

EncoderParams load_checkpoint(const std::filesystem::path& dir) {
  const auto raw = detail::read_file(dir / "checkpoint.json");
  json manifest;
  try {
    manifest = json::parse(raw.begin(), raw.end());
  } catch (const json::exception& e) {
    fail(ErrorCode::IoError, "checkpoint manifest: " + std::string(e.what()));
  }
  require(manifest.value("format", "") == "mtkd-encoder" && manifest.value("version", 0) == 1,
          ErrorCode::FormatVersionMismatch, "unsupported checkpoint format in " + dir.string());

  EncoderParams params;
  try {
    params.config = config_from_json(manifest.at("config"));
    params.shuffled_label_tag = manifest.value("shuffled_label_tag", false);
    for (const auto& entry : manifest.at("layers")) {
      const auto rows = entry.at("rows").get<std::size_t>();
      const auto cols = entry.at("cols").get<std::size_t>();
      const auto bytes = detail::read_file(dir / entry.at("file").get<std::string>());
      require(bytes.size() == 8 * (rows * cols + rows), ErrorCode::IoError,
              "layer blob size mismatch in " + dir.string());
      std::vector<double> w(rows * cols);
      for (std::size_t i = 0; i < w.size(); ++i) w[i] = detail::get_f64(bytes, 8 * i);
      std::vector<double> b(rows);
      for (std::size_t i = 0; i < rows; ++i) b[i] = detail::get_f64(bytes, 8 * (rows * cols + i));
      params.layers.push_back({DenseMatrix(rows, cols, std::move(w)), std::move(b)});
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::IoError, "checkpoint manifest: " + std::string(e.what()));
  }
  // Round-trip through unflatten to validate the layer shapes against the config.
  auto checked = unflatten(params.config, flatten(params));
  checked.shuffled_label_tag = params.shuffled_label_tag;
  return checked;
}

}  // namespace mtkd
