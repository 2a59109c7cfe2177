#include "arpm/nets.hpp"

#include <cmath>
#include <iostream>
#include <stdexcept>

namespace arpm {

namespace {

LinearLayer make_linear(int in, int out, Rng& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / in));
  LinearLayer l;
  l.W.resize(out, in);
  for (Eigen::Index i = 0; i < l.W.size(); ++i) l.W.data()[i] = dist(rng);
  l.b = Vector::Zero(out);
  return l;
}

BatchNormLayer make_bn(int dim) {
  BatchNormLayer bn;
  bn.gamma = Vector::Ones(dim);
  bn.beta = Vector::Zero(dim);
  bn.running_mean = Vector::Zero(dim);
  bn.running_var = Vector::Ones(dim);
  return bn;
}

}  // namespace

RecognitionModel RecognitionModel::create(const ExtractorConfig& cfg,
                                          int n_classes, double feature_norm,
                                          bool normalize_classifier, Rng& rng) {
  if (cfg.input_dim < 1 || cfg.feature_dim < 1 || n_classes < 2)
    throw std::invalid_argument("invalid model config");
  RecognitionModel m;
  m.cfg = cfg;
  m.feature_norm = feature_norm;
  m.normalize_classifier = normalize_classifier;
  int in = cfg.input_dim;
  for (int h : cfg.hidden_dims) {
    m.hidden.push_back(make_linear(in, h, rng));
    m.bns.push_back(make_bn(h));
    in = h;
  }
  m.projection = make_linear(in, cfg.feature_dim, rng);
  std::normal_distribution<double> dist(0.0, 0.01);
  m.classifier.resize(n_classes, cfg.feature_dim);
  for (Eigen::Index i = 0; i < m.classifier.size(); ++i)
    m.classifier.data()[i] = dist(rng);
  if (normalize_classifier) m.renormalize_classifier_rows();
  return m;
}

void RecognitionModel::renormalize_classifier_rows() {
  for (Eigen::Index r = 0; r < classifier.rows(); ++r) {
    double n = classifier.row(r).norm();
    if (n > 0) classifier.row(r) /= n;
  }
}

ForwardResult forward_recognition(RecognitionModel& model, const Matrix& x,
                                  Mode mode, ForwardCache* cache) {
  if (x.cols() != model.cfg.input_dim)
    throw std::invalid_argument("input dimension mismatch");
  if (mode == Mode::Train && x.rows() < 2)
    throw std::invalid_argument("batch-norm undefined");

  const Eigen::Index batch = x.rows();
  const std::size_t n_hidden = model.hidden.size();

  if (cache) {
    *cache = ForwardCache{};
    cache->x = x;
    cache->mode = mode;
    cache->revision = model.revision;
    cache->lin_out.resize(n_hidden);
    cache->mu.resize(n_hidden);
    cache->var.resize(n_hidden);
    cache->xhat.resize(n_hidden);
    cache->act.resize(n_hidden);
  }

  Matrix h = x;
  for (std::size_t l = 0; l < n_hidden; ++l) {
    Matrix a = (h * model.hidden[l].W.transpose()).rowwise() +
               model.hidden[l].b.transpose();
    BatchNormLayer& bn = model.bns[l];
    Vector mu, var;
    if (mode == Mode::Train) {
      mu = a.colwise().mean();
      Matrix centered = a.rowwise() - mu.transpose();
      var = centered.array().square().colwise().mean();
      bn.running_mean = (1.0 - bn.momentum) * bn.running_mean + bn.momentum * mu;
      bn.running_var = (1.0 - bn.momentum) * bn.running_var + bn.momentum * var;
    } else {
      mu = bn.running_mean;
      var = bn.running_var;
    }
    Vector inv_std = (var.array() + bn.eps).rsqrt();
    Matrix xhat =
        (a.rowwise() - mu.transpose()).array().rowwise() * inv_std.transpose().array();
    Matrix s = (xhat.array().rowwise() * bn.gamma.transpose().array()).rowwise() +
               bn.beta.transpose().array();
    Matrix act = s.cwiseMax(0.0);
    if (cache) {
      cache->lin_out[l] = std::move(a);
      cache->mu[l] = std::move(mu);
      cache->var[l] = std::move(var);
      cache->xhat[l] = std::move(xhat);
      cache->act[l] = act;
    }
    h = std::move(act);
  }

  Matrix pre = (h * model.projection.W.transpose()).rowwise() +
               model.projection.b.transpose();
  Vector norms(batch);
  Matrix features(batch, model.cfg.feature_dim);
  for (Eigen::Index i = 0; i < batch; ++i) {
    double n = pre.row(i).norm();
    if (n <= 0.0 || !std::isfinite(n))
      throw std::runtime_error("degenerate feature");
    norms(i) = n;
    features.row(i) = pre.row(i) * (model.feature_norm / n);
  }
  Matrix logits = features * model.classifier.transpose();
  Matrix probs = softmax_rows(logits);

  if (cache) {
    cache->pre_feature = std::move(pre);
    cache->pre_norms = std::move(norms);
    cache->features = features;
    cache->logits = logits;
    cache->probs = probs;
    cache->valid = true;
  }
  return ForwardResult{std::move(features), std::move(logits), std::move(probs)};
}

ModelGrads ModelGrads::zeros_like(const RecognitionModel& m) {
  ModelGrads g;
  for (const auto& l : m.hidden) {
    g.hidden_W.push_back(Matrix::Zero(l.W.rows(), l.W.cols()));
    g.hidden_b.push_back(Vector::Zero(l.b.size()));
  }
  for (const auto& bn : m.bns) {
    g.bn_gamma.push_back(Vector::Zero(bn.gamma.size()));
    g.bn_beta.push_back(Vector::Zero(bn.beta.size()));
  }
  g.projection_W = Matrix::Zero(m.projection.W.rows(), m.projection.W.cols());
  g.projection_b = Vector::Zero(m.projection.b.size());
  g.classifier = Matrix::Zero(m.classifier.rows(), m.classifier.cols());
  return g;
}

void ModelGrads::add_scaled(const ModelGrads& o, double s) {
  for (std::size_t l = 0; l < hidden_W.size(); ++l) {
    hidden_W[l] += s * o.hidden_W[l];
    hidden_b[l] += s * o.hidden_b[l];
    bn_gamma[l] += s * o.bn_gamma[l];
    bn_beta[l] += s * o.bn_beta[l];
  }
  projection_W += s * o.projection_W;
  projection_b += s * o.projection_b;
  classifier += s * o.classifier;
}

bool ModelGrads::all_finite() const {
  for (std::size_t l = 0; l < hidden_W.size(); ++l)
    if (!hidden_W[l].allFinite() || !hidden_b[l].allFinite() ||
        !bn_gamma[l].allFinite() || !bn_beta[l].allFinite())
      return false;
  return projection_W.allFinite() && projection_b.allFinite() &&
         classifier.allFinite();
}

ModelGrads backward_recognition(const RecognitionModel& model,
                                const ForwardCache& cache,
                                const Matrix& grad_logits,
                                const BackwardRoute& route) {
  if (!cache.valid || cache.revision != model.revision)
    throw std::runtime_error("stale forward cache");
  if (grad_logits.rows() != cache.x.rows() ||
      grad_logits.cols() != model.classifier.rows())
    throw std::invalid_argument("grad shape mismatch");

  ModelGrads g = ModelGrads::zeros_like(model);
  if (route.into_classifier)
    g.classifier = grad_logits.transpose() * cache.features;
  if (!route.into_extractor) return g;

  // Through the classifier into the normalized features.
  Matrix grad_z = grad_logits * model.classifier;

  // L2 normalization: z = r * u / |u|; radial component is projected out.
  const Eigen::Index batch = cache.x.rows();
  Matrix grad_pre(batch, cache.pre_feature.cols());
  for (Eigen::Index i = 0; i < batch; ++i) {
    const double n = cache.pre_norms(i);
    Vector u_hat = cache.pre_feature.row(i).transpose() / n;
    Vector gz = grad_z.row(i).transpose();
    grad_pre.row(i) =
        ((model.feature_norm / n) * (gz - (gz.dot(u_hat)) * u_hat)).transpose();
  }

  const std::size_t n_hidden = model.hidden.size();
  const Matrix& last_act = n_hidden ? cache.act[n_hidden - 1] : cache.x;
  g.projection_W = grad_pre.transpose() * last_act;
  g.projection_b = grad_pre.colwise().sum();
  Matrix grad_h = grad_pre * model.projection.W;

  for (std::size_t li = n_hidden; li-- > 0;) {
    // ReLU
    Matrix grad_s =
        (cache.act[li].array() > 0.0).cast<double>() * grad_h.array();
    const BatchNormLayer& bn = model.bns[li];
    g.bn_gamma[li] = (grad_s.array() * cache.xhat[li].array()).colwise().sum();
    g.bn_beta[li] = grad_s.colwise().sum();

    Vector inv_std = (cache.var[li].array() + bn.eps).rsqrt();
    Matrix dxhat = grad_s.array().rowwise() * bn.gamma.transpose().array();
    Matrix grad_a;
    if (cache.mode == Mode::Train) {
      const double B = static_cast<double>(batch);
      Matrix centered =
          cache.lin_out[li].rowwise() - cache.mu[li].transpose();
      Vector sum_dxhat = dxhat.colwise().sum();
      Vector sum_dxhat_xhat =
          (dxhat.array() * cache.xhat[li].array()).colwise().sum();
      // dx = (1/B) inv_std (B dxhat - sum dxhat - xhat * sum(dxhat*xhat))
      grad_a = ((B * dxhat.array() -
                 (Matrix::Ones(batch, 1) * sum_dxhat.transpose()).array() -
                 cache.xhat[li].array().rowwise() *
                     sum_dxhat_xhat.transpose().array())
                    .rowwise() *
                inv_std.transpose().array()) /
               B;
    } else {
      grad_a = dxhat.array().rowwise() * inv_std.transpose().array();
    }

    const Matrix& in = li == 0 ? cache.x : cache.act[li - 1];
    g.hidden_W[li] = grad_a.transpose() * in;
    g.hidden_b[li] = grad_a.colwise().sum();
    grad_h = grad_a * model.hidden[li].W;
  }
  return g;
}

Matrix softmax_backward(const Matrix& probs, const Matrix& grad_probs) {
  Matrix out(probs.rows(), probs.cols());
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const auto p = probs.row(i).array();
    const auto gp = grad_probs.row(i).array();
    const double dot = (p * gp).sum();
    out.row(i) = p * (gp - dot);
  }
  return out;
}

Discriminator Discriminator::create(int input_dim,
                                    const std::vector<int>& hidden_dims,
                                    Rng& rng) {
  Discriminator d;
  int in = input_dim;
  for (int h : hidden_dims) {
    d.layers.push_back(make_linear(in, h, rng));
    in = h;
  }
  d.layers.push_back(make_linear(in, 1, rng));
  std::normal_distribution<double> dist(0.0, 1.0);
  for (const auto& l : d.layers) {
    Vector u(l.W.rows());
    for (Eigen::Index i = 0; i < u.size(); ++i) u(i) = dist(rng);
    u.normalize();
    d.sn_u.push_back(u);
  }
  return d;
}

Vector discriminator_forward(const Discriminator& d, const Matrix& z,
                             DiscCache* cache) {
  if (cache) {
    *cache = DiscCache{};
    cache->x = z;
    cache->pre_act.resize(d.layers.size());
  }
  Matrix h = z;
  for (std::size_t l = 0; l < d.layers.size(); ++l) {
    Matrix a = (h * d.layers[l].W.transpose()).rowwise() +
               d.layers[l].b.transpose();
    if (cache) cache->pre_act[l] = a;
    h = (l + 1 < d.layers.size()) ? a.cwiseMax(0.0) : a;
  }
  if (cache) cache->valid = true;
  return h.col(0);
}

DiscGrads DiscGrads::zeros_like(const Discriminator& d) {
  DiscGrads g;
  for (const auto& l : d.layers) {
    g.W.push_back(Matrix::Zero(l.W.rows(), l.W.cols()));
    g.b.push_back(Vector::Zero(l.b.size()));
  }
  return g;
}

DiscGrads discriminator_backward(const Discriminator& d, const DiscCache& cache,
                                 const Vector& grad_scores) {
  if (!cache.valid) throw std::runtime_error("stale discriminator cache");
  DiscGrads g = DiscGrads::zeros_like(d);
  const std::size_t L = d.layers.size();
  Matrix grad_a = grad_scores;  // batch x 1
  for (std::size_t li = L; li-- > 0;) {
    const Matrix in = li == 0 ? cache.x : cache.pre_act[li - 1].cwiseMax(0.0);
    g.W[li] = grad_a.transpose() * in;
    g.b[li] = grad_a.colwise().sum();
    if (li > 0) {
      Matrix grad_h = grad_a * d.layers[li].W;
      grad_a = (cache.pre_act[li - 1].array() > 0.0).cast<double>() *
               grad_h.array();
    }
  }
  return g;
}

void apply_spectral_norm(Discriminator& d) {
  for (std::size_t l = 0; l < d.layers.size(); ++l) {
    double sigma = top_singular_value_step(d.layers[l].W, d.sn_u[l]);
    if (sigma > 0) d.layers[l].W /= sigma;
  }
}

double lr_schedule(double kappa, double p) {
  if (p < 0.0 || p > 1.0) {
    std::cerr << "warning: lr_schedule progress " << p
              << " outside [0,1], clamping\n";
    p = std::min(1.0, std::max(0.0, p));
  }
  return kappa * std::pow(1.0 + 10.0 * p, -0.75);
}

Matrix pca_init_classifier(const Matrix& source_feats,
                           const std::vector<int>& source_labels,
                           const Matrix& target_feats, int n_classes,
                           bool normalize_rows) {
  if (source_feats.rows() != static_cast<Eigen::Index>(source_labels.size()))
    throw std::invalid_argument("label count mismatch");
  if (n_classes > std::min(target_feats.rows(),
                           static_cast<Eigen::Index>(target_feats.cols())))
    throw std::invalid_argument("too few target samples for pca init");

  PcaResult pca = pca_components(target_feats, n_classes);
  const Matrix& V = pca.components;  // feature_dim x n_classes

  Matrix scores = source_feats * V;  // m x n_classes
  Matrix confusion = Matrix::Zero(n_classes, n_classes);
  std::vector<int> class_counts(n_classes, 0);
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    int y = source_labels[i];
    if (y < 0 || y >= n_classes)
      throw std::invalid_argument("label out of range");
    Eigen::Index j;
    scores.row(i).maxCoeff(&j);
    confusion(y, j) += 1.0;
    class_counts[y]++;
  }
  for (int c = 0; c < n_classes; ++c) {
    if (class_counts[c] == 0) throw std::invalid_argument("empty class");
    confusion.row(c) /= static_cast<double>(class_counts[c]);
  }
  Matrix W = confusion * V.transpose();
  if (normalize_rows) {
    for (Eigen::Index r = 0; r < W.rows(); ++r) {
      double n = W.row(r).norm();
      if (n > 0) W.row(r) /= n;
    }
  }
  return W;
}

AdamState AdamState::zeros_like(const Discriminator& d) {
  AdamState s;
  for (const auto& l : d.layers) {
    s.mW.push_back(Matrix::Zero(l.W.rows(), l.W.cols()));
    s.vW.push_back(Matrix::Zero(l.W.rows(), l.W.cols()));
    s.mb.push_back(Vector::Zero(l.b.size()));
    s.vb.push_back(Vector::Zero(l.b.size()));
  }
  return s;
}

void adam_step(AdamState& s, Discriminator& d, const DiscGrads& g) {
  s.t += 1;
  const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.t));
  const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.t));
  for (std::size_t l = 0; l < d.layers.size(); ++l) {
    s.mW[l] = s.beta1 * s.mW[l] + (1.0 - s.beta1) * g.W[l];
    s.vW[l] = s.beta2 * s.vW[l].array() +
              (1.0 - s.beta2) * g.W[l].array().square();
    d.layers[l].W.array() -=
        s.lr * (s.mW[l].array() / bc1) /
        ((s.vW[l].array() / bc2).sqrt() + s.eps);
    s.mb[l] = s.beta1 * s.mb[l] + (1.0 - s.beta1) * g.b[l];
    s.vb[l] = s.beta2 * s.vb[l].array() +
              (1.0 - s.beta2) * g.b[l].array().square();
    d.layers[l].b.array() -=
        s.lr * (s.mb[l].array() / bc1) /
        ((s.vb[l].array() / bc2).sqrt() + s.eps);
  }
}

OptimizerState OptimizerState::create(const RecognitionModel& m,
                                      const Discriminator& d, double base_lr) {
  OptimizerState s;
  s.momentum = ModelGrads::zeros_like(m);
  s.base_lr = base_lr;
  s.adam = AdamState::zeros_like(d);
  return s;
}

void optimizer_step(OptimizerState& state, RecognitionModel& model,
                    const ModelGrads& grads, double progress) {
  const double lr_c = lr_schedule(state.base_lr, progress);
  const double lr_f = lr_c / state.classifier_lr_multiplier;
  const double mu = state.momentum_coef;
  ModelGrads& v = state.momentum;

  for (std::size_t l = 0; l < model.hidden.size(); ++l) {
    if (grads.hidden_W[l].rows() != model.hidden[l].W.rows() ||
        grads.hidden_W[l].cols() != model.hidden[l].W.cols())
      throw std::invalid_argument("gradient shape mismatch");
    v.hidden_W[l] = mu * v.hidden_W[l] + grads.hidden_W[l];
    v.hidden_b[l] = mu * v.hidden_b[l] + grads.hidden_b[l];
    v.bn_gamma[l] = mu * v.bn_gamma[l] + grads.bn_gamma[l];
    v.bn_beta[l] = mu * v.bn_beta[l] + grads.bn_beta[l];
    model.hidden[l].W -= lr_f * v.hidden_W[l];
    model.hidden[l].b -= lr_f * v.hidden_b[l];
    model.bns[l].gamma -= lr_f * v.bn_gamma[l];
    model.bns[l].beta -= lr_f * v.bn_beta[l];
  }
  v.projection_W = mu * v.projection_W + grads.projection_W;
  v.projection_b = mu * v.projection_b + grads.projection_b;
  model.projection.W -= lr_f * v.projection_W;
  model.projection.b -= lr_f * v.projection_b;

  v.classifier = mu * v.classifier + grads.classifier;
  model.classifier -= lr_c * v.classifier;
  if (model.normalize_classifier) model.renormalize_classifier_rows();
  model.revision++;
}

}  // namespace arpm
