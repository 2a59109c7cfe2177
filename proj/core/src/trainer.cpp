#include "arpm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace arpm {

std::string TrainConfig::to_json() const {
  nlohmann::json j;
  j["kappa"] = kappa;
  j["lambda"] = lambda;
  j["rho"] = rho;
  j["alpha"] = alpha;
  j["K"] = K;
  j["M"] = M;
  j["N"] = N;
  j["n_prime"] = n_prime;
  j["batch_size"] = batch_size;
  j["total_steps"] = total_steps;
  j["feature_norm"] = feature_norm;
  j["smoothing"] = smoothing;
  j["seed"] = seed;
  j["sampler_mode"] = sampler_mode;
  j["normalize_classifier"] = normalize_classifier;
  j["enable_reweight"] = enable_reweight;
  j["enable_uncertainty"] = enable_uncertainty;
  j["enable_nrc"] = enable_nrc;
  j["uncertainty_kind"] = uncertainty_kind;
  j["hidden_dims"] = hidden_dims;
  j["feature_dim"] = feature_dim;
  j["disc_hidden_dims"] = disc_hidden_dims;
  j["disc_steps"] = disc_steps;
  j["group_threshold"] = group_threshold;
  j["subsample_threshold"] = subsample_threshold;
  j["inner_rounds"] = inner_rounds;
  j["eval_every"] = eval_every;
  j["tau"] = tau;
  j["lambda_prime"] = lambda_prime;
  j["unknown_threshold"] = unknown_threshold;
  j["tta_lr"] = tta_lr;
  return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  TrainConfig c;
  c.kappa = j.value("kappa", c.kappa);
  c.lambda = j.value("lambda", c.lambda);
  c.rho = j.value("rho", c.rho);
  c.alpha = j.value("alpha", c.alpha);
  c.K = j.value("K", c.K);
  c.M = j.value("M", c.M);
  c.N = j.value("N", c.N);
  c.n_prime = j.value("n_prime", c.n_prime);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.total_steps = j.value("total_steps", c.total_steps);
  c.feature_norm = j.value("feature_norm", c.feature_norm);
  c.smoothing = j.value("smoothing", c.smoothing);
  c.seed = j.value("seed", c.seed);
  c.sampler_mode = j.value("sampler_mode", c.sampler_mode);
  c.normalize_classifier = j.value("normalize_classifier", c.normalize_classifier);
  c.enable_reweight = j.value("enable_reweight", c.enable_reweight);
  c.enable_uncertainty = j.value("enable_uncertainty", c.enable_uncertainty);
  c.enable_nrc = j.value("enable_nrc", c.enable_nrc);
  c.uncertainty_kind = j.value("uncertainty_kind", c.uncertainty_kind);
  c.hidden_dims = j.value("hidden_dims", c.hidden_dims);
  c.feature_dim = j.value("feature_dim", c.feature_dim);
  c.disc_hidden_dims = j.value("disc_hidden_dims", c.disc_hidden_dims);
  c.disc_steps = j.value("disc_steps", c.disc_steps);
  c.group_threshold = j.value("group_threshold", c.group_threshold);
  c.subsample_threshold = j.value("subsample_threshold", c.subsample_threshold);
  c.inner_rounds = j.value("inner_rounds", c.inner_rounds);
  c.eval_every = j.value("eval_every", c.eval_every);
  c.tau = j.value("tau", c.tau);
  c.lambda_prime = j.value("lambda_prime", c.lambda_prime);
  c.unknown_threshold = j.value("unknown_threshold", c.unknown_threshold);
  c.tta_lr = j.value("tta_lr", c.tta_lr);
  return c;
}

std::string TrainConfig::hash() const {
  std::ostringstream os;
  os << std::hex << std::hash<std::string>{}(to_json());
  return os.str();
}

void TrainConfig::validate() const {
  if (kappa <= 0 || rho <= 0 || alpha <= 1 || K < 1 || M < 1 || N < 1 ||
      batch_size < 2 || total_steps < 1 || feature_norm <= 0 ||
      smoothing < 0 || smoothing >= 1 || disc_steps < 1 || eval_every < 1 ||
      tau <= 0 || tau >= 1 || unknown_threshold <= 0 || unknown_threshold >= 1)
    throw std::invalid_argument("invalid train config");
  if (sampler_mode != "auto" && sampler_mode != "weighted_loss" &&
      sampler_mode != "weighted_sampler")
    throw std::invalid_argument("invalid sampler_mode");
  parse_uncertainty_loss(uncertainty_kind, alpha);
}

void TrainLog::write_ndjson(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  for (const auto& e : steps) {
    nlohmann::json j{{"event", "step"},
                     {"step", e.step},
                     {"l_cls", e.l_cls},
                     {"l_pow", e.l_pow},
                     {"l_nrc", e.l_nrc}};
    f << j.dump() << "\n";
  }
  for (const auto& e : rounds) {
    nlohmann::json j{{"event", "round"},
                     {"step", e.step},
                     {"round", e.round},
                     {"rel_weight_change", e.rel_weight_change},
                     {"wasserstein", e.wasserstein}};
    f << j.dump() << "\n";
  }
  for (const auto& e : evals) {
    nlohmann::json j{{"event", "eval"},
                     {"step", e.step},
                     {"target_accuracy", e.target_accuracy}};
    f << j.dump() << "\n";
  }
  if (aborted) {
    nlohmann::json j{{"event", "abort"}, {"reason", abort_reason}};
    f << j.dump() << "\n";
  }
}

void TrainLog::write_summary_csv(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  f.precision(17);
  f << "schema_version,kind,step,value\n";
  for (const auto& e : evals)
    f << "1,eval_accuracy," << e.step << "," << e.target_accuracy << "\n";
  for (const auto& e : rounds)
    f << "1,round_rel_weight_change," << e.step << "," << e.rel_weight_change
      << "\n";
  if (!evals.empty())
    f << "1,final_accuracy," << evals.back().step << ","
      << evals.back().target_accuracy << "\n";
  f << "1,aborted,0," << (aborted ? 1 : 0) << "\n";
}

Batch sample_batch(const Dataset& source, const Vector& weights,
                   const std::string& mode, int batch_size, Rng& rng) {
  const int m = static_cast<int>(source.size());
  if (m < 1) throw std::invalid_argument("empty source dataset");
  Batch batch;
  batch.indices.reserve(batch_size);
  if (mode == "weighted_sampler") {
    if (weights.sum() <= 0.0)
      throw std::invalid_argument("all-zero weights");
    std::discrete_distribution<int> dist(weights.data(), weights.data() + m);
    batch.loss_weights = Vector::Ones(batch_size);
    for (int i = 0; i < batch_size; ++i) batch.indices.push_back(dist(rng));
  } else if (mode == "weighted_loss") {
    std::uniform_int_distribution<int> dist(0, m - 1);
    batch.loss_weights.resize(batch_size);
    for (int i = 0; i < batch_size; ++i) {
      const int idx = dist(rng);
      batch.indices.push_back(idx);
      batch.loss_weights(i) = weights(idx);
    }
  } else {
    throw std::invalid_argument("invalid sampler mode: " + mode);
  }
  return batch;
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

}  // namespace

TrainResult train(const TrainConfig& config, const Dataset& source,
                  const Dataset& target) {
  config.validate();
  const int m = static_cast<int>(source.size());
  const int n = static_cast<int>(target.size());
  if (m < 2 || n < 2) throw std::invalid_argument("datasets too small");
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

  // PCA classifier init on the untrained extractor's features.
  {
    Matrix src_f = eval_forward(model, source.features).features;
    Matrix tgt_f = eval_forward(model, target.features).features;
    model.classifier = pca_init_classifier(src_f, source.labels, tgt_f,
                                           n_classes, config.normalize_classifier);
  }

  // Bank warm-up: one full eval pass over the target set.
  Banks banks;
  {
    ForwardResult fr = eval_forward(model, target.features);
    banks.Z = fr.features;
    banks.S = fr.probs;
    banks.initialized = true;
  }

  Vector w = Vector::Ones(m);
  const std::string sampler =
      config.sampler_mode != "auto"
          ? config.sampler_mode
          : (m > 10000 ? std::string("weighted_sampler")
                       : std::string("weighted_loss"));
  const UncertaintyLoss ukind =
      parse_uncertainty_loss(config.uncertainty_kind, config.alpha);
  const bool target_loss = config.enable_uncertainty || config.enable_nrc;
  const int tgt_batch = std::max(2, std::min(config.batch_size, n));
  const bool target_labeled =
      std::any_of(target.labels.begin(), target.labels.end(),
                  [](int y) { return y >= 0; });

  TrainResult result{model, disc, {}};
  RecognitionModel checkpoint = model;
  TrainLog& log = result.log;
  int round = 0;

  for (long step = 0; step < config.total_steps; ++step) {
    const double p =
        static_cast<double>(step) / static_cast<double>(config.total_steps);

    Batch sb = sample_batch(source, w, sampler, config.batch_size, rng);
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

    double l_pow = 0.0, l_nrc = 0.0;
    if (target_loss) {
      std::vector<int> ti = sample_without_replacement(n, tgt_batch, rng);
      Matrix xt(ti.size(), target.features.cols());
      for (std::size_t i = 0; i < ti.size(); ++i)
        xt.row(i) = target.features.row(ti[i]);
      ForwardCache cache_t;
      forward_recognition(model, xt, Mode::Train, &cache_t);

      Matrix grad_probs = Matrix::Zero(cache_t.probs.rows(), n_classes);
      if (config.enable_uncertainty) {
        LossGrad ug = uncertainty_loss(cache_t.probs, ukind);
        l_pow = ug.loss;
        grad_probs += config.lambda * ug.grad;
      }
      if (config.enable_nrc) {
        update_banks(banks, ti, cache_t.features, cache_t.probs);
        LossGrad ng = nrc_loss(banks, ti, cache_t.probs, config.K, config.M);
        l_nrc = ng.loss;
        grad_probs += ng.grad;
      }
      Matrix grad_logits_t = softmax_backward(cache_t.probs, grad_probs);
      // Target-side losses update the feature extractor only.
      ModelGrads tgrads =
          backward_recognition(model, cache_t, grad_logits_t, {false, true});
      grads.add_scaled(tgrads, 1.0);
    }

    const double total_loss =
        cls.loss + config.lambda * l_pow + l_nrc;
    if (!std::isfinite(total_loss) || !grads.all_finite()) {
      log.aborted = true;
      log.abort_reason = "non-finite loss at step " + std::to_string(step);
      result.model = checkpoint;  // last reweighting-round snapshot
      break;
    }
    optimizer_step(opt, model, grads, p);
    log.steps.push_back({step, cls.loss, l_pow, l_nrc});

    if (step % config.eval_every == 0 && target_labeled)
      log.evals.push_back({step, accuracy(model, target)});

    if (config.enable_reweight && step > 0 && step % config.N == 0) {
      Matrix src_f = eval_forward(model, source.features).features;
      Matrix tgt_f = eval_forward(model, target.features).features;
      ReweightOptions ropt;
      ropt.rho = config.rho;
      ropt.discriminator_steps = config.disc_steps;
      ropt.group_threshold = config.group_threshold;
      ropt.subsample_threshold = config.subsample_threshold;
      ropt.n_prime = config.n_prime;
      DualPotentialReport rep;
      WeightVector wv;
      for (int inner = 0; inner < config.inner_rounds; ++inner)
        wv = learn_weights(disc, opt.adam, src_f, tgt_f, ropt, rng, &w, &rep);
      round++;
      const double rel = (wv.w - w).norm() / std::max(w.norm(), 1e-12);
      log.rounds.push_back({step, round, rel, rep.wasserstein_estimate});
      w = wv.w;
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

}  // namespace arpm
