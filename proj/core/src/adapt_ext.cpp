#include "arpm/adapt_ext.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace arpm {

int classify_with_unknown(const Vector& probs, double threshold) {
  if (threshold < 0.0 || threshold > 1.0)
    throw std::invalid_argument("threshold out of range");
  Eigen::Index arg;
  const double top = probs.maxCoeff(&arg);
  return top >= threshold ? static_cast<int>(arg) : kUnknownClass;
}

namespace {

std::vector<int> sample_without_replacement(int n, int k, Rng& rng) {
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = 0; i < k; ++i) {
    std::uniform_int_distribution<int> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(k);
  return idx;
}

// Ascending stable sort of target indices by weight, ties by index.
std::vector<int> weight_order(const Vector& w) {
  std::vector<int> order(w.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return w(a) < w(b); });
  return order;
}

}  // namespace

TrainResult train_open_universal(const TrainConfig& config,
                                 const Dataset& source, const Dataset& target) {
  config.validate();
  const int m = static_cast<int>(source.size());
  const int n = static_cast<int>(target.size());
  if (m < 2 || n < 2) throw std::invalid_argument("datasets too small");
  const int n_tau = static_cast<int>(std::ceil(config.tau * n));
  if (n_tau < 1) throw std::invalid_argument("n*tau < 1");
  int n_classes = 0;
  for (int y : source.labels) n_classes = std::max(n_classes, y + 1);
  if (n_classes < 2) throw std::invalid_argument("source must be labeled");

  Rng rng(config.seed);
  ExtractorConfig ecfg;
  ecfg.input_dim = static_cast<int>(source.features.cols());
  ecfg.hidden_dims = config.hidden_dims;
  ecfg.feature_dim = config.feature_dim;
  RecognitionModel model =
      RecognitionModel::create(ecfg, n_classes, config.feature_norm,
                               config.normalize_classifier, rng);
  Discriminator disc =
      Discriminator::create(config.feature_dim, config.disc_hidden_dims, rng);
  OptimizerState opt = OptimizerState::create(model, disc, config.kappa);

  {
    Matrix src_f = eval_forward(model, source.features).features;
    Matrix tgt_f = eval_forward(model, target.features).features;
    model.classifier = pca_init_classifier(src_f, source.labels, tgt_f,
                                           n_classes, config.normalize_classifier);
  }

  // Target-side weights; all-ones start puts the slices at the index ends.
  Vector w = Vector::Ones(n);
  std::vector<bool> in_top(n, false), in_bottom(n, false);
  auto refresh_slices = [&]() {
    std::vector<int> order = weight_order(w);
    std::fill(in_top.begin(), in_top.end(), false);
    std::fill(in_bottom.begin(), in_bottom.end(), false);
    for (int i = 0; i < n_tau; ++i) in_bottom[order[i]] = true;
    for (int i = n - n_tau; i < n; ++i) in_top[order[i]] = true;
  };
  refresh_slices();

  const int tgt_batch = std::max(2, std::min(config.batch_size, n));
  const bool target_labeled =
      std::any_of(target.labels.begin(), target.labels.end(),
                  [](int y) { return y >= 0; });
  const double alpha = config.alpha;

  TrainResult result{model, disc, {}};
  RecognitionModel checkpoint = model;
  TrainLog& log = result.log;
  int round = 0;

  for (long step = 0; step < config.total_steps; ++step) {
    const double p =
        static_cast<double>(step) / static_cast<double>(config.total_steps);

    // Source classification is unweighted in this extension.
    Batch sb = sample_batch(source, Vector::Ones(m), "weighted_loss",
                            config.batch_size, rng);
    Matrix xs(sb.indices.size(), source.features.cols());
    std::vector<int> ys(sb.indices.size());
    for (std::size_t i = 0; i < sb.indices.size(); ++i) {
      xs.row(i) = source.features.row(sb.indices[i]);
      ys[i] = source.labels[sb.indices[i]];
    }
    ForwardCache cache_s;
    forward_recognition(model, xs, Mode::Train, &cache_s);
    LossGrad cls =
        reweighted_ce(cache_s.probs, ys, sb.loss_weights, config.smoothing);
    ModelGrads grads =
        backward_recognition(model, cache_s, cls.grad, {true, true});

    // lambda' (L_com - L_pri) on the target batch, extractor only.
    std::vector<int> ti = sample_without_replacement(n, tgt_batch, rng);
    Matrix xt(ti.size(), target.features.cols());
    for (std::size_t i = 0; i < ti.size(); ++i)
      xt.row(i) = target.features.row(ti[i]);
    ForwardCache cache_t;
    forward_recognition(model, xt, Mode::Train, &cache_t);

    int ct = 0, cb = 0;
    for (int idx : ti) {
      if (in_top[idx]) ct++;
      if (in_bottom[idx]) cb++;
    }
    double l_com = 0.0, l_pri = 0.0;
    Matrix grad_probs = Matrix::Zero(cache_t.probs.rows(), n_classes);
    for (Eigen::Index j = 0; j < cache_t.probs.rows(); ++j) {
      const int idx = ti[j];
      if (!in_top[idx] && !in_bottom[idx]) continue;
      const Vector pj = cache_t.probs.row(j).transpose();
      const double h = alpha_power_value(pj, alpha);
      Vector dh(pj.size());
      for (Eigen::Index k = 0; k < pj.size(); ++k)
        dh(k) = alpha * std::pow(pj(k), alpha - 1.0);
      if (in_top[idx]) {
        l_com -= w(idx) * h / ct;
        grad_probs.row(j) -=
            (config.lambda_prime * w(idx) / ct) * dh.transpose();
      }
      if (in_bottom[idx]) {
        l_pri -= h / cb;
        grad_probs.row(j) += (config.lambda_prime / cb) * dh.transpose();
      }
    }
    Matrix grad_logits_t = softmax_backward(cache_t.probs, grad_probs);
    ModelGrads tgrads =
        backward_recognition(model, cache_t, grad_logits_t, {false, true});
    grads.add_scaled(tgrads, 1.0);

    const double total_loss =
        cls.loss + config.lambda_prime * (l_com - l_pri);
    if (!std::isfinite(total_loss) || !grads.all_finite()) {
      log.aborted = true;
      log.abort_reason = "non-finite loss at step " + std::to_string(step);
      result.model = checkpoint;
      break;
    }
    optimizer_step(opt, model, grads, p);
    log.steps.push_back({step, cls.loss, l_com - l_pri, 0.0});

    if (step % config.eval_every == 0 && target_labeled)
      log.evals.push_back({step, accuracy(model, target)});

    if (step > 0 && step % config.N == 0) {
      Matrix src_f = eval_forward(model, source.features).features;
      Matrix tgt_f = eval_forward(model, target.features).features;
      DualPotentialReport rep = train_dual_discriminator(
          disc, opt.adam, src_f, tgt_f, config.disc_steps);
      // Roles swapped: the weights live on the target terms, so larger
      // critic scores (source-like samples) must get larger weights.
      Vector d_t = discriminator_forward(disc, tgt_f);
      Vector w_new = solve_weights(-d_t, config.rho);
      round++;
      const double rel = (w_new - w).norm() / std::max(w.norm(), 1e-12);
      log.rounds.push_back({step, round, rel, rep.wasserstein_estimate});
      w = w_new;
      refresh_slices();
      checkpoint = model;
    }
  }

  if (!log.aborted) result.model = model;
  if (target_labeled && (log.evals.empty() ||
                         log.evals.back().step != config.total_steps - 1))
    log.evals.push_back(
        {config.total_steps - 1, accuracy(result.model, target)});
  log.final_weights = w;
  result.discriminator = disc;
  return result;
}

TTAResult tta_step(TTAState& state, RecognitionModel& model,
                   const Matrix& batch) {
  if (batch.rows() < 2) throw std::invalid_argument("batch-norm undefined");

  // One ascent step on mean H_alpha, BN scale/shift only, batch stats.
  ForwardCache cache;
  forward_recognition(model, batch, Mode::Train, &cache);
  const double b = static_cast<double>(batch.rows());
  Matrix grad_probs(cache.probs.rows(), cache.probs.cols());
  for (Eigen::Index i = 0; i < cache.probs.rows(); ++i)
    for (Eigen::Index k = 0; k < cache.probs.cols(); ++k)
      grad_probs(i, k) =
          state.alpha * std::pow(cache.probs(i, k), state.alpha - 1.0) / b;
  Matrix grad_logits = softmax_backward(cache.probs, grad_probs);
  ModelGrads grads =
      backward_recognition(model, cache, grad_logits, {false, true});
  for (std::size_t l = 0; l < model.bns.size(); ++l) {
    model.bns[l].gamma += state.tta_lr * grads.bn_gamma[l];
    model.bns[l].beta += state.tta_lr * grads.bn_beta[l];
  }
  model.revision++;
  state.steps_taken++;

  ForwardCache after;
  forward_recognition(model, batch, Mode::Train, &after);
  TTAResult out;
  out.probs = after.probs;
  out.predictions.resize(batch.rows());
  for (Eigen::Index i = 0; i < batch.rows(); ++i) {
    Eigen::Index arg;
    after.probs.row(i).maxCoeff(&arg);
    out.predictions[i] = static_cast<int>(arg);
  }
  return out;
}

TTAStreamReport run_tta_stream(TTAState& state, RecognitionModel& model,
                               const Dataset& stream, int batch_size) {
  if (batch_size < 2) throw std::invalid_argument("batch size must be >= 2");
  TTAStreamReport report;
  long correct = 0, total = 0;
  for (Eigen::Index start = 0; start + 2 <= stream.size();
       start += batch_size) {
    const Eigen::Index b =
        std::min<Eigen::Index>(batch_size, stream.size() - start);
    if (b < 2) break;
    Matrix xb = stream.features.middleRows(start, b);
    TTAResult r = tta_step(state, model, xb);
    long batch_correct = 0;
    for (Eigen::Index i = 0; i < b; ++i) {
      if (stream.labels[start + i] < 0) continue;
      if (r.predictions[i] == stream.labels[start + i]) batch_correct++;
    }
    report.batch_accuracy.push_back(static_cast<double>(batch_correct) /
                                    static_cast<double>(b));
    correct += batch_correct;
    total += b;
  }
  report.overall_accuracy =
      total > 0 ? static_cast<double>(correct) / static_cast<double>(total)
                : 0.0;
  return report;
}

}  // namespace arpm
