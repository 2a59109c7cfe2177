#include "arpm/checkpoint.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace arpm {

namespace {

using nlohmann::json;

json to_json(const Matrix& m) {
  json j;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  std::vector<double> data(m.data(), m.data() + m.size());
  j["data"] = data;
  return j;
}

Matrix matrix_from_json(const json& j) {
  Matrix m(j.at("rows").get<Eigen::Index>(), j.at("cols").get<Eigen::Index>());
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != m.size())
    throw std::runtime_error("checkpoint matrix size mismatch");
  std::copy(data.begin(), data.end(), m.data());
  return m;
}

json to_json(const Vector& v) {
  return json(std::vector<double>(v.data(), v.data() + v.size()));
}

Vector vector_from_json(const json& j) {
  const auto data = j.get<std::vector<double>>();
  Vector v(static_cast<Eigen::Index>(data.size()));
  std::copy(data.begin(), data.end(), v.data());
  return v;
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  json j;
  j["version"] = ck.version;
  j["config_hash"] = ck.config_hash;
  j["step"] = ck.step;

  json model;
  model["input_dim"] = ck.model.cfg.input_dim;
  model["hidden_dims"] = ck.model.cfg.hidden_dims;
  model["feature_dim"] = ck.model.cfg.feature_dim;
  model["feature_norm"] = ck.model.feature_norm;
  model["normalize_classifier"] = ck.model.normalize_classifier;
  model["classifier"] = to_json(ck.model.classifier);
  model["projection_W"] = to_json(ck.model.projection.W);
  model["projection_b"] = to_json(ck.model.projection.b);
  for (std::size_t l = 0; l < ck.model.hidden.size(); ++l) {
    json layer;
    layer["W"] = to_json(ck.model.hidden[l].W);
    layer["b"] = to_json(ck.model.hidden[l].b);
    layer["bn_gamma"] = to_json(ck.model.bns[l].gamma);
    layer["bn_beta"] = to_json(ck.model.bns[l].beta);
    layer["bn_running_mean"] = to_json(ck.model.bns[l].running_mean);
    layer["bn_running_var"] = to_json(ck.model.bns[l].running_var);
    model["hidden"].push_back(layer);
  }
  j["model"] = model;

  json disc;
  for (std::size_t l = 0; l < ck.discriminator.layers.size(); ++l) {
    json layer;
    layer["W"] = to_json(ck.discriminator.layers[l].W);
    layer["b"] = to_json(ck.discriminator.layers[l].b);
    layer["sn_u"] = to_json(ck.discriminator.sn_u[l]);
    disc["layers"].push_back(layer);
  }
  j["discriminator"] = disc;
  j["weights"] = to_json(ck.weights);

  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  f << j.dump();
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  json j = json::parse(f);
  Checkpoint ck;
  ck.version = j.at("version").get<int>();
  if (ck.version != 1)
    throw std::runtime_error("unsupported checkpoint version");
  ck.config_hash = j.at("config_hash").get<std::string>();
  ck.step = j.at("step").get<long>();

  const json& model = j.at("model");
  ck.model.cfg.input_dim = model.at("input_dim").get<int>();
  ck.model.cfg.hidden_dims = model.at("hidden_dims").get<std::vector<int>>();
  ck.model.cfg.feature_dim = model.at("feature_dim").get<int>();
  ck.model.feature_norm = model.at("feature_norm").get<double>();
  ck.model.normalize_classifier = model.at("normalize_classifier").get<bool>();
  ck.model.classifier = matrix_from_json(model.at("classifier"));
  ck.model.projection.W = matrix_from_json(model.at("projection_W"));
  ck.model.projection.b = vector_from_json(model.at("projection_b"));
  if (model.contains("hidden")) {
    for (const auto& layer : model.at("hidden")) {
      LinearLayer lin;
      lin.W = matrix_from_json(layer.at("W"));
      lin.b = vector_from_json(layer.at("b"));
      ck.model.hidden.push_back(std::move(lin));
      BatchNormLayer bn;
      bn.gamma = vector_from_json(layer.at("bn_gamma"));
      bn.beta = vector_from_json(layer.at("bn_beta"));
      bn.running_mean = vector_from_json(layer.at("bn_running_mean"));
      bn.running_var = vector_from_json(layer.at("bn_running_var"));
      ck.model.bns.push_back(std::move(bn));
    }
  }

  if (j.contains("discriminator") && j["discriminator"].contains("layers")) {
    for (const auto& layer : j.at("discriminator").at("layers")) {
      LinearLayer lin;
      lin.W = matrix_from_json(layer.at("W"));
      lin.b = vector_from_json(layer.at("b"));
      ck.discriminator.layers.push_back(std::move(lin));
      ck.discriminator.sn_u.push_back(vector_from_json(layer.at("sn_u")));
    }
  }
  ck.weights = vector_from_json(j.at("weights"));
  return ck;
}

}  // namespace arpm
