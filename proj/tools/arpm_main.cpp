#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "arpm/adapt_ext.hpp"
#include "arpm/checkpoint.hpp"
#include "arpm/trainer.hpp"

namespace fs = std::filesystem;
using namespace arpm;

namespace {

// Tracks files written during one command; removes them if the command
// fails so no partial artifacts survive.
class ArtifactGuard {
 public:
  ~ArtifactGuard() {
    if (!armed_) return;
    for (const auto& p : paths_) {
      std::error_code ec;
      fs::remove(p, ec);
    }
  }
  std::string track(const std::string& path) {
    paths_.push_back(path);
    return path;
  }
  void dismiss() { armed_ = false; }

 private:
  std::vector<std::string> paths_;
  bool armed_ = true;
};

std::string slurp(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

struct CommonFlags {
  std::string config_path;
  std::string out_dir = ".";
  std::uint64_t seed = 0;
  bool seed_set = false;
};

void add_common(CLI::App* cmd, CommonFlags& cf) {
  cmd->add_option("--config", cf.config_path, "JSON config file");
  cmd->add_option("--out", cf.out_dir, "output directory");
  cmd->add_option("--seed", cf.seed, "RNG seed override")
      ->each([&cf](const std::string&) { cf.seed_set = true; });
}

struct Overrides {
  double kappa = -1, lambda = -1, rho = -1, alpha = -1;
  int K = -1, M = -1, N = -1;
  double tau = -1, lambda_prime = -1, threshold = -1;
  long total_steps = -1;
  int batch_size = -1, disc_steps = -1, eval_every = -1;
  std::string uncertainty;
};

void add_overrides(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--kappa", o.kappa, "base learning rate");
  cmd->add_option("--lambda", o.lambda, "uncertainty loss weight");
  cmd->add_option("--rho", o.rho, "weight ball radius factor");
  cmd->add_option("--alpha", o.alpha, "uncertainty exponent");
  cmd->add_option("--K", o.K, "clustering neighbors");
  cmd->add_option("--M", o.M, "reciprocity neighbors");
  cmd->add_option("--N", o.N, "steps between reweighting rounds");
  cmd->add_option("--tau", o.tau, "open-set slice fraction");
  cmd->add_option("--lambda-prime", o.lambda_prime, "open-set loss weight");
  cmd->add_option("--threshold", o.threshold, "unknown-class threshold");
  cmd->add_option("--total-steps", o.total_steps, "training steps");
  cmd->add_option("--batch-size", o.batch_size, "batch size");
  cmd->add_option("--disc-steps", o.disc_steps, "critic steps per round");
  cmd->add_option("--eval-every", o.eval_every, "evaluation interval");
  cmd->add_option("--uncertainty", o.uncertainty,
                  "alpha_power | entropy | tsallis | square");
}

TrainConfig load_train_config(const CommonFlags& cf, const Overrides& o) {
  TrainConfig c = cf.config_path.empty()
                      ? TrainConfig{}
                      : TrainConfig::from_json(slurp(cf.config_path));
  if (cf.seed_set) c.seed = cf.seed;
  if (o.kappa >= 0) c.kappa = o.kappa;
  if (o.lambda >= 0) c.lambda = o.lambda;
  if (o.rho >= 0) c.rho = o.rho;
  if (o.alpha >= 0) c.alpha = o.alpha;
  if (o.K >= 0) c.K = o.K;
  if (o.M >= 0) c.M = o.M;
  if (o.N >= 0) c.N = o.N;
  if (o.tau >= 0) c.tau = o.tau;
  if (o.lambda_prime >= 0) c.lambda_prime = o.lambda_prime;
  if (o.threshold >= 0) c.unknown_threshold = o.threshold;
  if (o.total_steps >= 0) c.total_steps = o.total_steps;
  if (o.batch_size >= 0) c.batch_size = o.batch_size;
  if (o.disc_steps >= 0) c.disc_steps = o.disc_steps;
  if (o.eval_every >= 0) c.eval_every = o.eval_every;
  if (!o.uncertainty.empty()) c.uncertainty_kind = o.uncertainty;
  c.validate();
  return c;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  f << text;
}

struct TrainIo {
  std::string source_csv, target_csv, scenario_json;
};

void add_train_io(CLI::App* cmd, TrainIo& io) {
  cmd->add_option("--source", io.source_csv, "source dataset CSV");
  cmd->add_option("--target", io.target_csv, "target dataset CSV");
  cmd->add_option("--scenario", io.scenario_json,
                  "scenario spec JSON (used when no CSVs are given)");
}

Scenario resolve_datasets(const TrainIo& io, const CommonFlags& cf) {
  if (!io.source_csv.empty() || !io.target_csv.empty()) {
    if (io.source_csv.empty() || io.target_csv.empty())
      throw CLI::ValidationError("--source and --target must be given together");
    Scenario sc;
    sc.source = read_dataset_csv(io.source_csv);
    sc.target = read_dataset_csv(io.target_csv);
    for (int y : sc.source.labels)
      sc.n_source_classes = std::max(sc.n_source_classes, y + 1);
    return sc;
  }
  ScenarioSpec spec = io.scenario_json.empty()
                          ? ScenarioSpec{}
                          : ScenarioSpec::from_json(slurp(io.scenario_json));
  if (cf.seed_set) spec.seed = cf.seed;
  return generate_scenario(spec);
}

void write_train_artifacts(const TrainConfig& cfg, const TrainResult& r,
                           const std::string& out, ArtifactGuard& guard) {
  Checkpoint ck;
  ck.config_hash = cfg.hash();
  ck.step = cfg.total_steps;
  ck.model = r.model;
  ck.discriminator = r.discriminator;
  ck.weights = r.log.final_weights;
  save_checkpoint(ck, guard.track(out + "/checkpoint.json"));
  r.log.write_ndjson(guard.track(out + "/log.ndjson"));
  r.log.write_summary_csv(guard.track(out + "/summary.csv"));
  write_text(guard.track(out + "/config.json"), cfg.to_json());
}

int cmd_gen_scenario(const CommonFlags& cf, const std::string& spec_path) {
  ScenarioSpec spec = spec_path.empty()
                          ? ScenarioSpec{}
                          : ScenarioSpec::from_json(slurp(spec_path));
  if (cf.seed_set) spec.seed = cf.seed;
  Scenario sc = generate_scenario(spec);
  fs::create_directories(cf.out_dir);
  ArtifactGuard guard;
  write_dataset_csv(sc.source, guard.track(cf.out_dir + "/source.csv"));
  write_dataset_csv(sc.target, guard.track(cf.out_dir + "/target.csv"));
  write_text(guard.track(cf.out_dir + "/scenario.json"), spec.to_json());
  guard.dismiss();
  std::cout << "wrote " << sc.source.size() << " source and "
            << sc.target.size() << " target samples to " << cf.out_dir << "\n";
  return 0;
}

int cmd_train(const CommonFlags& cf, const Overrides& o, const TrainIo& io,
              bool open_set) {
  TrainConfig cfg = load_train_config(cf, o);
  Scenario sc = resolve_datasets(io, cf);
  TrainResult r = open_set ? train_open_universal(cfg, sc.source, sc.target)
                           : train(cfg, sc.source, sc.target);
  fs::create_directories(cf.out_dir);
  ArtifactGuard guard;
  write_train_artifacts(cfg, r, cf.out_dir, guard);
  guard.dismiss();
  if (!r.log.evals.empty())
    std::cout << "final target accuracy "
              << r.log.evals.back().target_accuracy << "\n";
  if (r.log.aborted)
    std::cout << "training aborted: " << r.log.abort_reason << "\n";
  return 0;
}

int cmd_tta(const CommonFlags& cf, const std::string& checkpoint_path,
            const std::string& stream_csv, int batch_size, double tta_lr,
            double alpha) {
  Checkpoint ck = load_checkpoint(checkpoint_path);
  Dataset stream = read_dataset_csv(stream_csv);

  RecognitionModel baseline = ck.model;
  const double before = accuracy(baseline, stream);

  TTAState state;
  state.tta_lr = tta_lr;
  state.alpha = alpha;
  TTAStreamReport rep = run_tta_stream(state, ck.model, stream, batch_size);

  fs::create_directories(cf.out_dir);
  ArtifactGuard guard;
  std::ofstream f(guard.track(cf.out_dir + "/tta.csv"));
  if (!f) throw std::runtime_error("cannot open " + cf.out_dir + "/tta.csv");
  f.precision(17);
  f << "schema_version,batch,accuracy\n";
  for (std::size_t i = 0; i < rep.batch_accuracy.size(); ++i)
    f << "1," << i << "," << rep.batch_accuracy[i] << "\n";
  f << "1,overall," << rep.overall_accuracy << "\n";
  f.close();
  guard.dismiss();
  std::cout << "no-adaptation accuracy " << before << "\n";
  std::cout << "tta accuracy " << rep.overall_accuracy << " over "
            << rep.batch_accuracy.size() << " batches\n";
  return 0;
}

int cmd_weights_report(const CommonFlags& cf, const std::string& checkpoint_path,
                       const std::string& source_csv) {
  Checkpoint ck = load_checkpoint(checkpoint_path);
  Dataset source = read_dataset_csv(source_csv);
  if (ck.weights.size() != source.size())
    throw std::runtime_error("checkpoint weights do not match the dataset");

  Matrix feats = eval_forward(ck.model, source.features).features;
  Vector scores = discriminator_forward(ck.discriminator, feats);

  fs::create_directories(cf.out_dir);
  ArtifactGuard guard;
  {
    std::ofstream f(guard.track(cf.out_dir + "/weights.csv"));
    if (!f)
      throw std::runtime_error("cannot open " + cf.out_dir + "/weights.csv");
    f.precision(17);
    f << "sample_id,class_label,discriminator_score,weight\n";
    for (Eigen::Index i = 0; i < source.size(); ++i)
      f << i << "," << source.labels[i] << "," << scores(i) << ","
        << ck.weights(i) << "\n";
  }
  {
    int n_classes = 0;
    for (int y : source.labels) n_classes = std::max(n_classes, y + 1);
    std::ofstream f(guard.track(cf.out_dir + "/class_weights.csv"));
    if (!f)
      throw std::runtime_error("cannot open " + cf.out_dir +
                               "/class_weights.csv");
    f.precision(17);
    f << "class_label,role,mean_weight\n";
    for (int c = 0; c < n_classes; ++c) {
      double sum = 0.0;
      long count = 0;
      ClassRole role = ClassRole::Na;
      for (Eigen::Index i = 0; i < source.size(); ++i) {
        if (source.labels[i] != c) continue;
        sum += ck.weights(i);
        count++;
        role = source.roles[i];
      }
      if (count == 0) continue;
      f << c << "," << role_name(role) << "," << sum / count << "\n";
    }
  }
  guard.dismiss();
  std::cout << "wrote weight report to " << cf.out_dir << "\n";
  return 0;
}

int cmd_loss_contours(const CommonFlags& cf, int grid_steps) {
  if (grid_steps < 2) throw CLI::ValidationError("--grid-steps must be >= 2");
  const std::vector<double> alphas{2.0, 4.0, 6.0, 8.0};
  fs::create_directories(cf.out_dir);
  ArtifactGuard guard;
  {
    std::ofstream f(guard.track(cf.out_dir + "/simplex.csv"));
    if (!f)
      throw std::runtime_error("cannot open " + cf.out_dir + "/simplex.csv");
    f.precision(17);
    f << "p0,p1,p2";
    for (double a : alphas) f << ",h" << a << ",gradnorm" << a;
    f << "\n";
    for (int i = 0; i <= grid_steps; ++i) {
      for (int j = 0; j <= grid_steps - i; ++j) {
        Vector p(3);
        p << static_cast<double>(i) / grid_steps,
            static_cast<double>(j) / grid_steps,
            static_cast<double>(grid_steps - i - j) / grid_steps;
        f << p(0) << "," << p(1) << "," << p(2);
        for (double a : alphas) {
          Vector g(3);
          for (int k = 0; k < 3; ++k)
            g(k) = a * std::pow(p(k), a - 1.0);
          f << "," << alpha_power_value(p, a) << "," << g.norm();
        }
        f << "\n";
      }
    }
  }
  {
    // Two-class curves, gradients scaled by their value at a one-hot row.
    std::ofstream f(guard.track(cf.out_dir + "/two_class.csv"));
    if (!f)
      throw std::runtime_error("cannot open " + cf.out_dir + "/two_class.csv");
    f.precision(17);
    f << "p";
    for (double a : alphas) f << ",grad" << a << ",grad" << a << "_scaled";
    f << "\n";
    for (int i = 0; i <= grid_steps; ++i) {
      const double p = 0.5 + 0.5 * static_cast<double>(i) / grid_steps;
      f << p;
      for (double a : alphas) {
        const double g =
            a * (std::pow(p, a - 1.0) - std::pow(1.0 - p, a - 1.0));
        f << "," << g << "," << g / a;
      }
      f << "\n";
    }
  }
  guard.dismiss();
  std::cout << "wrote loss contours to " << cf.out_dir << "\n";
  return 0;
}

int cmd_eval(const CommonFlags& cf, const std::string& checkpoint_path,
             const std::string& data_csv, double threshold, double xi,
             int probes) {
  Checkpoint ck = load_checkpoint(checkpoint_path);
  Dataset data = read_dataset_csv(data_csv);
  std::cout.precision(17);
  std::cout << "accuracy " << accuracy(ck.model, data) << "\n";
  const bool has_private =
      std::any_of(data.roles.begin(), data.roles.end(), [](ClassRole r) {
        return r == ClassRole::TargetPrivate;
      });
  const bool has_common =
      std::any_of(data.roles.begin(), data.roles.end(),
                  [](ClassRole r) { return r == ClassRole::Common; });
  if (has_private && has_common)
    std::cout << "h_score " << h_score(ck.model, data, threshold) << "\n";
  std::cout << "margin " << empirical_margin(ck.model, data) << "\n";
  Rng rng(cf.seed_set ? cf.seed : 2019);
  std::cout << "robustness " << empirical_robustness(ck.model, data, xi, probes, rng)
            << "\n";
  return 0;
}

struct AblationCell {
  std::string name;
  bool R, P, N;
  std::string uncertainty = "alpha_power";
};

int cmd_ablate(const CommonFlags& cf, const Overrides& o, const TrainIo& io,
               bool with_entropy) {
  TrainConfig base = load_train_config(cf, o);
  Scenario sc = resolve_datasets(io, cf);

  std::vector<AblationCell> cells{
      {"SO", false, false, false},      {"SO+P", false, true, false},
      {"SO+N", false, false, true},     {"SO+R", true, false, false},
      {"SO+R+P", true, true, false},    {"SO+R+N", true, false, true},
      {"SO+N+P", false, true, true},    {"SO+R+N+P", true, true, true}};
  if (with_entropy) cells.push_back({"SO+R+N+E", true, true, true, "entropy"});

  fs::create_directories(cf.out_dir);
  ArtifactGuard guard;
  std::ofstream f(guard.track(cf.out_dir + "/ablation.csv"));
  if (!f)
    throw std::runtime_error("cannot open " + cf.out_dir + "/ablation.csv");
  f.precision(17);
  f << "schema_version,cell,target_accuracy\n";
  for (const auto& cell : cells) {
    TrainConfig cfg = base;
    cfg.enable_reweight = cell.R;
    cfg.enable_uncertainty = cell.P;
    cfg.enable_nrc = cell.N;
    cfg.uncertainty_kind = cell.uncertainty;
    TrainResult r = train(cfg, sc.source, sc.target);
    const double acc =
        r.log.evals.empty() ? 0.0 : r.log.evals.back().target_accuracy;
    f << "1," << cell.name << "," << acc << "\n";
    std::cout << cell.name << " " << acc << "\n";
  }
  f.close();
  guard.dismiss();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"adversarial reweighting with alpha-power maximization"};
  app.require_subcommand(1);

  CommonFlags cf;
  Overrides ov;
  TrainIo io;
  std::string spec_path, checkpoint_path, data_csv;
  int batch_size = 64, probes = 8, grid_steps = 50;
  double tta_lr = 0.001, alpha = 6.0, threshold = 0.65, xi = 0.5;
  bool with_entropy = false;

  auto* gen = app.add_subcommand("gen-scenario", "write synthetic dataset CSVs");
  add_common(gen, cf);
  gen->add_option("--spec", spec_path, "scenario spec JSON");

  auto* pda = app.add_subcommand("train-pda", "partial-domain training run");
  add_common(pda, cf);
  add_overrides(pda, ov);
  add_train_io(pda, io);

  auto* open = app.add_subcommand("train-openset", "open-set training run");
  add_common(open, cf);
  add_overrides(open, ov);
  add_train_io(open, io);

  auto* tta = app.add_subcommand("tta", "test-time adaptation over a stream");
  add_common(tta, cf);
  tta->add_option("--checkpoint", checkpoint_path, "trained checkpoint")
      ->required();
  tta->add_option("--data", data_csv, "stream dataset CSV")->required();
  tta->add_option("--batch-size", batch_size, "stream batch size");
  tta->add_option("--tta-lr", tta_lr, "BN update step size");
  tta->add_option("--alpha", alpha, "uncertainty exponent");

  auto* wr = app.add_subcommand("weights-report", "per-sample weight report");
  add_common(wr, cf);
  wr->add_option("--checkpoint", checkpoint_path, "trained checkpoint")
      ->required();
  wr->add_option("--source", data_csv, "source dataset CSV")->required();

  auto* lc = app.add_subcommand("loss-contours", "uncertainty loss grids");
  add_common(lc, cf);
  lc->add_option("--grid-steps", grid_steps, "grid resolution");

  auto* ev = app.add_subcommand("eval", "print evaluation metrics");
  add_common(ev, cf);
  ev->add_option("--checkpoint", checkpoint_path, "trained checkpoint")
      ->required();
  ev->add_option("--data", data_csv, "dataset CSV")->required();
  ev->add_option("--threshold", threshold, "unknown-class threshold");
  ev->add_option("--xi", xi, "robustness probe radius");
  ev->add_option("--probes", probes, "robustness probes per sample");

  auto* ab = app.add_subcommand("ablate", "component toggle matrix");
  add_common(ab, cf);
  add_overrides(ab, ov);
  add_train_io(ab, io);
  ab->add_flag("--with-entropy", with_entropy,
               "add an entropy-substitution cell");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_scenario(cf, spec_path);
    if (pda->parsed()) return cmd_train(cf, ov, io, false);
    if (open->parsed()) return cmd_train(cf, ov, io, true);
    if (tta->parsed())
      return cmd_tta(cf, checkpoint_path, data_csv, batch_size, tta_lr, alpha);
    if (wr->parsed()) return cmd_weights_report(cf, checkpoint_path, data_csv);
    if (lc->parsed()) return cmd_loss_contours(cf, grid_steps);
    if (ev->parsed())
      return cmd_eval(cf, checkpoint_path, data_csv, threshold, xi, probes);
    if (ab->parsed()) return cmd_ablate(cf, ov, io, with_entropy);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
