#pragma once

// Model checkpoints as JSON, format version 1:
//
//   {
//     "format": "cssl-mlp",
//     "version": 1,
//     "layer_sizes": [input, hidden..., K],
//     "activation": "sigmoid" | "relu",
//     "dropout_rate": r,
//     "params": [ ...flat parameters... ]
//   }
//
// `params` is the concatenation, per layer, of the row-major weight matrix
// (out x in) followed by the bias vector.

#include <fstream>
#include <string>

#include <json.hpp>

#include "cssl/neural.hpp"

namespace cssl {

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json checkpoint_to_json(const MlpModel& model) {
  nlohmann::json j;
  j["format"] = "cssl-mlp";
  j["version"] = kCheckpointVersion;
  j["layer_sizes"] = model.layer_sizes();
  j["activation"] = to_string(model.activation());
  j["dropout_rate"] = model.dropout_rate();
  j["params"] = std::vector<double>(model.params().begin(), model.params().end());
  return j;
}

inline MlpModel checkpoint_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "cssl-mlp") throw std::invalid_argument("not a cssl-mlp checkpoint");
  const int version = j.at("version").get<int>();
  if (version != kCheckpointVersion) {
    throw std::invalid_argument("unsupported checkpoint version " + std::to_string(version));
  }
  MlpModel m(j.at("layer_sizes").get<std::vector<std::size_t>>(),
             activation_from_string(j.at("activation").get<std::string>()), j.at("dropout_rate").get<double>());
  const auto params = j.at("params").get<std::vector<double>>();
  detail::require_same_size(params.size(), m.n_params(), "checkpoint params");
  std::copy(params.begin(), params.end(), m.params().begin());
  return m;
}

inline void save_checkpoint(const MlpModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  out << checkpoint_to_json(model).dump(1) << '\n';
}

inline MlpModel load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path);
  return checkpoint_from_json(nlohmann::json::parse(in));
}

}  // namespace cssl
