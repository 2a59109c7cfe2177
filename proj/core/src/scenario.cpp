#include "arpm/scenario.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "arpm/adapt_ext.hpp"

namespace arpm {

std::string role_name(ClassRole r) {
  switch (r) {
    case ClassRole::Common: return "common";
    case ClassRole::SourcePrivate: return "source_private";
    case ClassRole::TargetPrivate: return "target_private";
    case ClassRole::Na: return "na";
  }
  return "na";
}

ClassRole role_from_name(const std::string& s) {
  if (s == "common") return ClassRole::Common;
  if (s == "source_private") return ClassRole::SourcePrivate;
  if (s == "target_private") return ClassRole::TargetPrivate;
  if (s == "na") return ClassRole::Na;
  throw std::invalid_argument("unknown role: " + s);
}

std::string ScenarioSpec::to_json() const {
  nlohmann::json j;
  j["seed"] = seed;
  j["input_dim"] = input_dim;
  j["n_common"] = n_common;
  j["n_source_private"] = n_source_private;
  j["n_target_private"] = n_target_private;
  j["samples_per_class"] = samples_per_class;
  j["cluster_spread"] = cluster_spread;
  j["domain_shift"] = {{"scale", domain_shift.scale},
                       {"magnitude", domain_shift.magnitude}};
  return j.dump(2);
}

ScenarioSpec ScenarioSpec::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  ScenarioSpec s;
  s.seed = j.value("seed", s.seed);
  s.input_dim = j.value("input_dim", s.input_dim);
  s.n_common = j.value("n_common", s.n_common);
  s.n_source_private = j.value("n_source_private", s.n_source_private);
  s.n_target_private = j.value("n_target_private", s.n_target_private);
  s.samples_per_class = j.value("samples_per_class", s.samples_per_class);
  s.cluster_spread = j.value("cluster_spread", s.cluster_spread);
  if (j.contains("domain_shift")) {
    s.domain_shift.scale = j["domain_shift"].value("scale", 1.0);
    s.domain_shift.magnitude = j["domain_shift"].value("magnitude", 0.0);
  }
  return s;
}

namespace {

Vector random_unit(int dim, Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Vector v(dim);
  for (int i = 0; i < dim; ++i) v(i) = g(rng);
  return v / v.norm();
}

Matrix sample_cluster(const Vector& center, double spread, int n, Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix x(n, center.size());
  for (int i = 0; i < n; ++i)
    for (Eigen::Index d = 0; d < center.size(); ++d)
      x(i, d) = center(d) + spread * g(rng);
  return x;
}

double min_dist_to(const std::vector<Vector>& centers, const Vector& p) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& c : centers) best = std::min(best, (p - c).norm());
  return best;
}

}  // namespace

Scenario generate_scenario(const ScenarioSpec& spec) {
  if (spec.n_common < 2 || spec.samples_per_class < 1 || spec.input_dim < 2 ||
      spec.n_source_private < 0 || spec.n_target_private < 0)
    throw std::invalid_argument("inconsistent scenario spec");

  Rng rng(spec.seed);
  const int dim = spec.input_dim;
  const double center_radius = 6.0 * spec.cluster_spread;

  std::vector<Vector> common_src(spec.n_common);
  for (auto& c : common_src) c = random_unit(dim, rng) * center_radius;

  const Vector shift_dir = random_unit(dim, rng);
  const Vector shift = shift_dir * spec.domain_shift.magnitude;
  std::vector<Vector> common_tgt(spec.n_common);
  for (int c = 0; c < spec.n_common; ++c)
    common_tgt[c] = spec.domain_shift.scale * common_src[c] + shift;

  // Reference distance: the worst source<->target displacement among
  // common classes, floored by the centroid scale so private clusters
  // stay well separated even under the identity shift.
  double ref = center_radius;
  for (int c = 0; c < spec.n_common; ++c)
    ref = std::max(ref, (common_src[c] - common_tgt[c]).norm());

  std::vector<Vector> private_src(spec.n_source_private);
  for (auto& c : private_src) {
    c = random_unit(dim, rng) * (center_radius + 2.5 * ref);
    while (min_dist_to(common_tgt, c) < 2.0 * ref) c *= 1.5;
  }
  std::vector<Vector> private_tgt(spec.n_target_private);
  for (auto& c : private_tgt) {
    c = random_unit(dim, rng) * (center_radius + 2.5 * ref);
    while (min_dist_to(common_src, c) < 2.0 * ref ||
           min_dist_to(common_tgt, c) < 2.0 * ref)
      c *= 1.5;
  }

  Scenario out;
  out.n_source_classes = spec.n_common + spec.n_source_private;
  const int spc = spec.samples_per_class;

  const int m = out.n_source_classes * spc;
  out.source.features.resize(m, dim);
  out.source.domain_tag = "source";
  int row = 0;
  for (int c = 0; c < spec.n_common; ++c) {
    out.source.features.middleRows(row, spc) =
        sample_cluster(common_src[c], spec.cluster_spread, spc, rng);
    for (int i = 0; i < spc; ++i) {
      out.source.labels.push_back(c);
      out.source.roles.push_back(ClassRole::Common);
    }
    row += spc;
  }
  for (int c = 0; c < spec.n_source_private; ++c) {
    out.source.features.middleRows(row, spc) =
        sample_cluster(private_src[c], spec.cluster_spread, spc, rng);
    for (int i = 0; i < spc; ++i) {
      out.source.labels.push_back(spec.n_common + c);
      out.source.roles.push_back(ClassRole::SourcePrivate);
    }
    row += spc;
  }

  const int n = (spec.n_common + spec.n_target_private) * spc;
  out.target.features.resize(n, dim);
  out.target.domain_tag = "target";
  row = 0;
  for (int c = 0; c < spec.n_common; ++c) {
    out.target.features.middleRows(row, spc) =
        sample_cluster(common_tgt[c], spec.cluster_spread, spc, rng);
    for (int i = 0; i < spc; ++i) {
      out.target.labels.push_back(c);
      out.target.roles.push_back(ClassRole::Common);
    }
    row += spc;
  }
  for (int c = 0; c < spec.n_target_private; ++c) {
    out.target.features.middleRows(row, spc) =
        sample_cluster(private_tgt[c], spec.cluster_spread, spc, rng);
    for (int i = 0; i < spc; ++i) {
      out.target.labels.push_back(-1);
      out.target.roles.push_back(ClassRole::TargetPrivate);
    }
    row += spc;
  }
  return out;
}

ForwardResult eval_forward(const RecognitionModel& model, const Matrix& x) {
  // Eval mode mutates nothing.
  return forward_recognition(const_cast<RecognitionModel&>(model), x,
                             Mode::Eval);
}

double accuracy(const RecognitionModel& model, const Dataset& data) {
  if (data.size() == 0) throw std::invalid_argument("empty dataset");
  ForwardResult fr = eval_forward(model, data.features);
  long correct = 0, total = 0;
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    if (data.labels[i] < 0) continue;
    Eigen::Index pred;
    fr.probs.row(i).maxCoeff(&pred);
    if (static_cast<int>(pred) == data.labels[i]) correct++;
    total++;
  }
  if (total == 0) throw std::invalid_argument("no labeled samples");
  return static_cast<double>(correct) / static_cast<double>(total);
}

double h_score(const RecognitionModel& model, const Dataset& data,
               double threshold) {
  ForwardResult fr = eval_forward(model, data.features);
  long common_total = 0, common_correct = 0;
  long priv_total = 0, priv_unknown = 0;
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    const int pred =
        classify_with_unknown(fr.probs.row(i).transpose(), threshold);
    if (data.roles[i] == ClassRole::Common) {
      common_total++;
      if (pred == data.labels[i]) common_correct++;
    } else if (data.roles[i] == ClassRole::TargetPrivate) {
      priv_total++;
      if (pred == kUnknownClass) priv_unknown++;
    }
  }
  if (common_total == 0 || priv_total == 0)
    throw std::invalid_argument("h_score needs common and private samples");
  const double a = static_cast<double>(common_correct) / common_total;
  const double b = static_cast<double>(priv_unknown) / priv_total;
  if (a + b == 0.0) return 0.0;
  return 2.0 * a * b / (a + b);
}

double empirical_margin(const RecognitionModel& model, const Dataset& data) {
  if (data.size() == 0) throw std::invalid_argument("empty dataset");
  ForwardResult fr = eval_forward(model, data.features);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < data.size(); ++i)
    acc += margin(fr.probs.row(i).transpose());
  return acc / static_cast<double>(data.size());
}

double empirical_robustness(const RecognitionModel& model, const Dataset& data,
                            double xi, int probes, Rng& rng) {
  if (xi < 0 || probes < 1) throw std::invalid_argument("bad robustness args");
  if (data.size() == 0) throw std::invalid_argument("empty dataset");
  ForwardResult base = eval_forward(model, data.features);
  std::vector<Eigen::Index> base_pred(data.size());
  for (Eigen::Index i = 0; i < data.size(); ++i)
    base.probs.row(i).maxCoeff(&base_pred[i]);

  const int dim = static_cast<int>(data.features.cols());
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  long flipped = 0;
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    bool flip = false;
    for (int p = 0; p < probes && !flip; ++p) {
      Vector dir = random_unit(dim, rng);
      const double r = xi * std::pow(unif(rng), 1.0 / dim);
      Matrix x = data.features.row(i) + r * dir.transpose();
      ForwardResult fr = eval_forward(model, x);
      Eigen::Index pred;
      fr.probs.row(0).maxCoeff(&pred);
      if (pred != base_pred[i]) flip = true;
    }
    if (flip) flipped++;
  }
  return static_cast<double>(flipped) / static_cast<double>(data.size());
}

void write_dataset_csv(const Dataset& data, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  f.precision(17);
  f << "id,domain,label,role";
  for (Eigen::Index d = 0; d < data.features.cols(); ++d) f << ",f" << d;
  f << "\n";
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    f << i << "," << data.domain_tag << "," << data.labels[i] << ","
      << role_name(data.roles[i]);
    for (Eigen::Index d = 0; d < data.features.cols(); ++d)
      f << "," << data.features(i, d);
    f << "\n";
  }
}

Dataset read_dataset_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error("empty csv: " + path);
  int n_feat = -4;  // columns after id,domain,label,role
  {
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) n_feat++;
  }
  if (n_feat < 1) throw std::runtime_error("bad csv header: " + path);

  Dataset data;
  std::vector<std::vector<double>> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string tok;
    std::getline(ss, tok, ',');  // id
    std::getline(ss, tok, ',');
    data.domain_tag = tok;
    std::getline(ss, tok, ',');
    data.labels.push_back(std::stoi(tok));
    std::getline(ss, tok, ',');
    data.roles.push_back(role_from_name(tok));
    std::vector<double> feat;
    while (std::getline(ss, tok, ',')) feat.push_back(std::stod(tok));
    if (static_cast<int>(feat.size()) != n_feat)
      throw std::runtime_error("ragged csv row in " + path);
    rows.push_back(std::move(feat));
  }
  data.features.resize(static_cast<Eigen::Index>(rows.size()), n_feat);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (int d = 0; d < n_feat; ++d) data.features(i, d) = rows[i][d];
  return data;
}

}  // namespace arpm
