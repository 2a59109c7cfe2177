#pragma once

#include "arpm/losses.hpp"
#include "arpm/reweight.hpp"
#include "arpm/scenario.hpp"

namespace arpm {

struct TrainConfig {
  double kappa = 0.01;        // base learning rate
  double lambda = 0.3;        // uncertainty loss weight
  double rho = 5.0;
  double alpha = 6.0;
  int K = 4;
  int M = 3;
  int N = 500;                // steps between reweighting rounds
  int n_prime = 128000;
  int batch_size = 64;
  long total_steps = 5000;
  double feature_norm = 20.0;
  double smoothing = 0.1;
  std::uint64_t seed = 2019;
  std::string sampler_mode = "auto";  // auto | weighted_loss | weighted_sampler
  bool normalize_classifier = true;

  // Component toggles (SO baseline = reweight/uncertainty/nrc all off).
  bool enable_reweight = true;
  bool enable_uncertainty = true;
  bool enable_nrc = true;
  std::string uncertainty_kind = "alpha_power";

  // Desk-scale architecture knobs.
  std::vector<int> hidden_dims{64, 64};
  int feature_dim = 32;
  std::vector<int> disc_hidden_dims{1024, 1024};
  int disc_steps = 500;
  int group_threshold = 20000;
  int subsample_threshold = 1000000;
  int inner_rounds = 1;
  int eval_every = 100;

  // Open-set / universal extension.
  double tau = 0.25;
  double lambda_prime = 0.05;
  double unknown_threshold = 0.65;

  double tta_lr = 0.001;

  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
  std::string hash() const;
  void validate() const;
};

// Logical timestamps only (step counters), so logs are reproducible
// byte-for-byte per seed.
struct StepEvent {
  long step;
  double l_cls, l_pow, l_nrc;
};
struct RoundEvent {
  long step;
  int round;
  double rel_weight_change;  // |dw| / |w_old|
  double wasserstein;
};
struct EvalEvent {
  long step;
  double target_accuracy;
};

struct TrainLog {
  std::vector<StepEvent> steps;
  std::vector<RoundEvent> rounds;
  std::vector<EvalEvent> evals;
  Vector final_weights;
  bool aborted = false;
  std::string abort_reason;

  void write_ndjson(const std::string& path) const;
  void write_summary_csv(const std::string& path) const;
};

struct Batch {
  std::vector<int> indices;
  Vector loss_weights;  // what reweighted_ce receives
};

// weighted_sampler: indices drawn with probability proportional to w,
// unit loss weights. weighted_loss: uniform indices, w as loss weights.
Batch sample_batch(const Dataset& source, const Vector& weights,
                   const std::string& mode, int batch_size, Rng& rng);

struct TrainResult {
  RecognitionModel model;
  Discriminator discriminator;
  TrainLog log;
};

// Alternating training: N SGD steps on the total loss, then one
// reweighting round (eval-mode feature extraction, critic training,
// weight solve). PCA classifier init and bank warm-up before step 0.
TrainResult train(const TrainConfig& config, const Dataset& source,
                  const Dataset& target);

}  // namespace arpm
