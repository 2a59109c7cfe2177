#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "arpm/core_math.hpp"

namespace arpm {

using Rng = std::mt19937_64;

struct LinearLayer {
  Matrix W;  // out x in
  Vector b;  // out
};

struct BatchNormLayer {
  Vector gamma, beta;
  Vector running_mean, running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};

struct ExtractorConfig {
  int input_dim = 0;
  std::vector<int> hidden_dims{256, 256};
  int feature_dim = 64;
};

enum class Mode { Train, Eval };

// Feature extractor F (MLP with BN+ReLU hidden blocks, L2-normalized
// output) plus linear classifier C applied to the normalized features.
struct RecognitionModel {
  ExtractorConfig cfg;
  std::vector<LinearLayer> hidden;   // one per hidden dim
  std::vector<BatchNormLayer> bns;   // parallel to hidden
  LinearLayer projection;            // last hidden -> feature_dim
  double feature_norm = 20.0;
  Matrix classifier;                 // n_classes x feature_dim
  bool normalize_classifier = true;
  std::uint64_t revision = 0;        // bumped by optimizer steps

  int n_classes() const { return static_cast<int>(classifier.rows()); }

  static RecognitionModel create(const ExtractorConfig& cfg, int n_classes,
                                 double feature_norm, bool normalize_classifier,
                                 Rng& rng);
  void renormalize_classifier_rows();
};

struct ForwardCache {
  Matrix x;
  std::vector<Matrix> lin_out;   // pre-BN activations per hidden layer
  std::vector<Vector> mu, var;   // batch stats used (train) or running (eval)
  std::vector<Matrix> xhat;      // normalized pre-scale activations
  std::vector<Matrix> act;       // post-ReLU activations
  Matrix pre_feature;            // projection output before L2 normalization
  Vector pre_norms;              // per-row norms of pre_feature
  Matrix features;
  Matrix logits;
  Matrix probs;
  Mode mode = Mode::Train;
  std::uint64_t revision = 0;
  bool valid = false;
};

struct ForwardResult {
  Matrix features, logits, probs;
};

// Forward pass. Train mode uses batch BN statistics and updates running
// stats; eval mode reads running stats and mutates nothing. Pass a cache
// to enable backward_recognition on the same batch.
ForwardResult forward_recognition(RecognitionModel& model, const Matrix& x,
                                  Mode mode, ForwardCache* cache = nullptr);

struct ModelGrads {
  std::vector<Matrix> hidden_W;
  std::vector<Vector> hidden_b;
  std::vector<Vector> bn_gamma, bn_beta;
  Matrix projection_W;
  Vector projection_b;
  Matrix classifier;

  static ModelGrads zeros_like(const RecognitionModel& m);
  void add_scaled(const ModelGrads& other, double s);
  bool all_finite() const;
};

struct BackwardRoute {
  bool into_classifier = true;  // accumulate grad for C's weight
  bool into_extractor = true;   // backprop past the classifier into F
};

// Reverse-mode pass from d(loss)/d(logits). The cache must come from a
// train-mode forward on the current model revision.
ModelGrads backward_recognition(const RecognitionModel& model,
                                const ForwardCache& cache,
                                const Matrix& grad_logits,
                                const BackwardRoute& route = {});

// Chain a gradient w.r.t. softmax outputs back to logits, row-wise.
Matrix softmax_backward(const Matrix& probs, const Matrix& grad_probs);

// Scalar-output critic for the Wasserstein dual, spectral-normalized.
struct Discriminator {
  std::vector<LinearLayer> layers;  // affine, ReLU between, linear output
  std::vector<Vector> sn_u;         // persisted power-iteration vectors

  static Discriminator create(int input_dim, const std::vector<int>& hidden_dims,
                              Rng& rng);
};

struct DiscCache {
  Matrix x;
  std::vector<Matrix> pre_act;  // per layer affine output
  bool valid = false;
};

Vector discriminator_forward(const Discriminator& d, const Matrix& z,
                             DiscCache* cache = nullptr);

struct DiscGrads {
  std::vector<Matrix> W;
  std::vector<Vector> b;
  static DiscGrads zeros_like(const Discriminator& d);
};

DiscGrads discriminator_backward(const Discriminator& d, const DiscCache& cache,
                                 const Vector& grad_scores);

// One power-iteration step per layer; divides each weight by its current
// top-singular-value estimate. Biases untouched.
void apply_spectral_norm(Discriminator& d);

// kappa * (1 + 10 p)^{-0.75}; p clamped to [0,1] with a warning.
double lr_schedule(double kappa, double p);

// PCA-based classifier initialization: confusion matrix between source
// labels and their best-matching target principal component, times V^T.
Matrix pca_init_classifier(const Matrix& source_feats,
                           const std::vector<int>& source_labels,
                           const Matrix& target_feats, int n_classes,
                           bool normalize_rows);

struct AdamState {
  std::vector<Matrix> mW, vW;
  std::vector<Vector> mb, vb;
  long t = 0;
  double lr = 0.001;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  static AdamState zeros_like(const Discriminator& d);
};

void adam_step(AdamState& state, Discriminator& d, const DiscGrads& grads);

struct OptimizerState {
  ModelGrads momentum;  // SGD momentum buffers for F and C
  double momentum_coef = 0.9;
  double base_lr = 0.01;                  // kappa
  double classifier_lr_multiplier = 10.0;  // C lr / F lr
  AdamState adam;                          // discriminator

  static OptimizerState create(const RecognitionModel& m, const Discriminator& d,
                               double base_lr);
};

// SGD-momentum update: classifier at lr_schedule(kappa, p), extractor at
// one tenth of it. Renormalizes classifier rows when enabled.
void optimizer_step(OptimizerState& state, RecognitionModel& model,
                    const ModelGrads& grads, double progress);

}  // namespace arpm
