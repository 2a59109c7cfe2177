#pragma once

#include "arpm/trainer.hpp"

namespace arpm {

inline constexpr int kUnknownClass = -1;

// Argmax class when max probability >= threshold, else kUnknownClass.
int classify_with_unknown(const Vector& probs, double threshold);

// Open-set / universal variant: the adversarial reweighting runs on the
// target side; the weighted top-tau slice gets its uncertainty reduced,
// the bottom-tau slice gets it increased. Source loss is unweighted.
TrainResult train_open_universal(const TrainConfig& config,
                                 const Dataset& source, const Dataset& target);

struct TTAState {
  double tta_lr = 0.001;
  double alpha = 6.0;
  long steps_taken = 0;
};

struct TTAResult {
  std::vector<int> predictions;
  Matrix probs;
};

// One gradient-ascent step on mean H_alpha w.r.t. BN scale/shift only
// (batch statistics, TENT-style), then predictions on the same batch
// with the updated parameters. BN state persists to the next call.
TTAResult tta_step(TTAState& state, RecognitionModel& model, const Matrix& batch);

struct TTAStreamReport {
  std::vector<double> batch_accuracy;
  double overall_accuracy = 0.0;
};

// Run TPM over a label-carrying stream in arrival order.
TTAStreamReport run_tta_stream(TTAState& state, RecognitionModel& model,
                               const Dataset& stream, int batch_size);

}  // namespace arpm
