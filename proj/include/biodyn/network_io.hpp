#pragma once

// JSON form of a Network:
//   { "version": 1, "layer_sizes": [...], "activations": ["linear","tanh",...],
//     "weights": [ gap1 rows..., ... ], "biases": [ layer1..., ... ] }
// weights[g][i][j] connects neuron j of layer g to neuron i of layer g+1.

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "biodyn/error.hpp"
#include "biodyn/netcore.hpp"

namespace biodyn {

inline constexpr int kNetworkFormatVersion = 1;

inline nlohmann::json network_to_json(const Network& net) {
  nlohmann::json j;
  j["version"] = kNetworkFormatVersion;
  j["layer_sizes"] = net.layer_sizes();
  auto& acts = j["activations"] = nlohmann::json::array();
  for (std::size_t l = 0; l < net.layer_count(); ++l) acts.push_back(to_string(net.activation(l)));
  auto& ws = j["weights"] = nlohmann::json::array();
  auto& bs = j["biases"] = nlohmann::json::array();
  for (std::size_t l = 1; l < net.layer_count(); ++l) {
    nlohmann::json m = nlohmann::json::array();
    const Matrix& w = net.weights(l);
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      nlohmann::json row = nlohmann::json::array();
      for (Eigen::Index c = 0; c < w.cols(); ++c) row.push_back(w(i, c));
      m.push_back(std::move(row));
    }
    ws.push_back(std::move(m));
    nlohmann::json b = nlohmann::json::array();
    for (double v : net.bias(l)) b.push_back(v);
    bs.push_back(std::move(b));
  }
  return j;
}

inline Network network_from_json(const nlohmann::json& j) {
  try {
    require(j.at("version").get<int>() == kNetworkFormatVersion, ErrorClass::Format, "unsupported network version");
    Network net(j.at("layer_sizes").get<std::vector<std::size_t>>());
    const auto& acts = j.at("activations");
    require(acts.size() == net.layer_count(), ErrorClass::Format, "activation list length");
    for (std::size_t l = 0; l < net.layer_count(); ++l)
      require(acts[l].get<std::string>() == to_string(net.activation(l)), ErrorClass::Format,
              "layer " + std::to_string(l) + " must be " + to_string(net.activation(l)));
    const auto& ws = j.at("weights");
    const auto& bs = j.at("biases");
    require(ws.size() + 1 == net.layer_count() && bs.size() + 1 == net.layer_count(), ErrorClass::Format,
            "weights/biases count");
    for (std::size_t l = 1; l < net.layer_count(); ++l) {
      const auto& m = ws[l - 1];
      Matrix& w = net.weights(l);
      require(m.size() == static_cast<std::size_t>(w.rows()), ErrorClass::Shape, "weight rows into layer " + std::to_string(l));
      for (Eigen::Index i = 0; i < w.rows(); ++i) {
        const auto& row = m[static_cast<std::size_t>(i)];
        require(row.size() == static_cast<std::size_t>(w.cols()), ErrorClass::Shape, "weight row length");
        for (Eigen::Index c = 0; c < w.cols(); ++c) w(i, c) = row[static_cast<std::size_t>(c)].get<double>();
      }
      const auto& b = bs[l - 1];
      Vector& bv = net.bias(l);
      require(b.size() == static_cast<std::size_t>(bv.size()), ErrorClass::Shape, "bias length of layer " + std::to_string(l));
      for (Eigen::Index i = 0; i < bv.size(); ++i) bv(i) = b[static_cast<std::size_t>(i)].get<double>();
    }
    net.validate();
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorClass::Format, std::string("network json: ") + e.what());
  }
}

inline void save_network(const Network& net, const std::filesystem::path& path) {
  std::ofstream out(path);
  require(out.good(), ErrorClass::Io, "cannot write " + path.string());
  out << network_to_json(net).dump() << '\n';
}

inline Network load_network(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorClass::Io, "cannot read " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorClass::Format, path.string() + ": " + e.what());
  }
  return network_from_json(j);
}

}  // namespace biodyn
