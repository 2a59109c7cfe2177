#pragma once

#include <optional>
#include <string>

#include "arpm/nets.hpp"

namespace arpm {

enum class ClassRole { Common, SourcePrivate, TargetPrivate, Na };

std::string role_name(ClassRole r);
ClassRole role_from_name(const std::string& s);

struct Dataset {
  Matrix features;              // n x input_dim
  std::vector<int> labels;      // -1 where unlabeled
  std::vector<ClassRole> roles; // per sample, evaluation ground truth only
  std::string domain_tag;       // "source" or "target"

  Eigen::Index size() const { return features.rows(); }
};

struct DomainShift {
  double scale = 1.0;
  double magnitude = 0.0;  // translation along a seed-fixed direction
};

struct ScenarioSpec {
  std::uint64_t seed = 2019;
  int input_dim = 16;
  int n_common = 6;
  int n_source_private = 6;
  int n_target_private = 0;  // 0 for PDA
  int samples_per_class = 80;
  double cluster_spread = 1.25;
  DomainShift domain_shift{1.0, 8.0};

  std::string to_json() const;
  static ScenarioSpec from_json(const std::string& text);
};

struct Scenario {
  Dataset source;
  Dataset target;
  int n_source_classes = 0;  // |Y| = n_common + n_source_private
};

// Gaussian cluster per class; target clusters only for common and
// target-private classes, shifted by the affine domain shift. Private
// clusters sit at >= 2x the common<->target centroid distance.
Scenario generate_scenario(const ScenarioSpec& spec);

// Eval-mode forward on a const model (eval mutates nothing).
ForwardResult eval_forward(const RecognitionModel& model, const Matrix& x);

double accuracy(const RecognitionModel& model, const Dataset& data);

// Harmonic mean of common-class accuracy (UNKNOWN counts as wrong) and
// UNKNOWN recall on target-private samples.
double h_score(const RecognitionModel& model, const Dataset& data,
               double threshold);

double empirical_margin(const RecognitionModel& model, const Dataset& data);

// Monte-Carlo fraction of samples whose argmax flips under some uniform
// L2 perturbation of radius xi.
double empirical_robustness(const RecognitionModel& model, const Dataset& data,
                            double xi, int probes, Rng& rng);

// CSV schema: id,domain,label,role,f0..f{d-1}; label -1 when unlabeled.
void write_dataset_csv(const Dataset& data, const std::string& path);
Dataset read_dataset_csv(const std::string& path);

}  // namespace arpm
