#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "arpm/trainer.hpp"

using namespace arpm;

namespace {

TrainConfig tiny_config() {
  TrainConfig c;
  c.hidden_dims = {16};
  c.feature_dim = 8;
  c.feature_norm = 8.0;
  c.disc_hidden_dims = {16};
  c.disc_steps = 20;
  c.total_steps = 60;
  c.N = 25;
  c.eval_every = 20;
  c.batch_size = 16;
  c.kappa = 0.02;
  return c;
}

Scenario tiny_scenario(std::uint64_t seed = 2019) {
  ScenarioSpec s;
  s.seed = seed;
  s.input_dim = 8;
  s.n_common = 3;
  s.n_source_private = 2;
  s.samples_per_class = 10;
  return generate_scenario(s);
}

std::string slurp(const std::string& path) {
  std::ifstream f(path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("config json round trip and hash") {
  TrainConfig c = tiny_config();
  c.lambda = 0.42;
  c.sampler_mode = "weighted_sampler";
  TrainConfig r = TrainConfig::from_json(c.to_json());
  CHECK(r.lambda == 0.42);
  CHECK(r.sampler_mode == "weighted_sampler");
  CHECK(r.hidden_dims == c.hidden_dims);
  CHECK(r.hash() == c.hash());

  r.alpha = 8.0;
  CHECK(r.hash() != c.hash());

  CHECK(TrainConfig::from_json("{}").batch_size == 64);
}

TEST_CASE("config validation rejects bad settings") {
  TrainConfig c = tiny_config();
  c.validate();
  auto bad = [&](auto mutate) {
    TrainConfig b = c;
    mutate(b);
    CHECK_THROWS_AS(b.validate(), std::invalid_argument);
  };
  bad([](TrainConfig& b) { b.kappa = 0.0; });
  bad([](TrainConfig& b) { b.alpha = 1.0; });
  bad([](TrainConfig& b) { b.smoothing = 1.0; });
  bad([](TrainConfig& b) { b.sampler_mode = "bogus"; });
  bad([](TrainConfig& b) { b.uncertainty_kind = "bogus"; });
  bad([](TrainConfig& b) { b.tau = 1.0; });
  bad([](TrainConfig& b) { b.batch_size = 1; });
}

TEST_CASE("sample_batch weighted_loss passes weights through") {
  Dataset d;
  d.features = Matrix::Random(10, 3);
  d.labels.assign(10, 0);
  d.roles.assign(10, ClassRole::Na);
  Vector w(10);
  for (int i = 0; i < 10; ++i) w(i) = 0.1 * i;
  Rng rng(1);
  Batch b = sample_batch(d, w, "weighted_loss", 32, rng);
  CHECK(b.indices.size() == 32);
  for (int i = 0; i < 32; ++i)
    CHECK(b.loss_weights(i) == w(b.indices[i]));
}

TEST_CASE("sample_batch weighted_sampler draws in proportion to the weights") {
  Dataset d;
  d.features = Matrix::Random(2, 3);
  d.labels.assign(2, 0);
  d.roles.assign(2, ClassRole::Na);
  Vector w(2);
  w << 3.0, 1.0;
  Rng rng(2);
  const int draws = 20000;
  Batch b = sample_batch(d, w, "weighted_sampler", draws, rng);
  CHECK((b.loss_weights.array() == 1.0).all());
  long first = 0;
  for (int idx : b.indices)
    if (idx == 0) first++;
  const double frac = static_cast<double>(first) / draws;
  // 4-sigma band around 0.75 for a binomial with p = 0.75
  CHECK(std::abs(frac - 0.75) < 4.0 * std::sqrt(0.75 * 0.25 / draws));

  CHECK_THROWS_AS(sample_batch(d, Vector::Zero(2), "weighted_sampler", 4, rng),
                  std::invalid_argument);
  CHECK_THROWS_AS(sample_batch(d, w, "bogus", 4, rng), std::invalid_argument);
}

TEST_CASE("training is reproducible per seed, byte for byte") {
  Scenario sc = tiny_scenario();
  TrainConfig c = tiny_config();

  TrainResult a = train(c, sc.source, sc.target);
  TrainResult b = train(c, sc.source, sc.target);
  CHECK((a.log.final_weights - b.log.final_weights).cwiseAbs().maxCoeff() ==
        0.0);
  CHECK((a.model.classifier - b.model.classifier).cwiseAbs().maxCoeff() == 0.0);

  a.log.write_summary_csv("trainer_sum_a.csv");
  b.log.write_summary_csv("trainer_sum_b.csv");
  a.log.write_ndjson("trainer_log_a.ndjson");
  b.log.write_ndjson("trainer_log_b.ndjson");
  CHECK(slurp("trainer_sum_a.csv") == slurp("trainer_sum_b.csv"));
  CHECK(slurp("trainer_log_a.ndjson") == slurp("trainer_log_b.ndjson"));
  CHECK(!slurp("trainer_sum_a.csv").empty());

  TrainConfig c2 = c;
  c2.seed = 2021;
  TrainResult d = train(c2, sc.source, sc.target);
  d.log.write_summary_csv("trainer_sum_d.csv");
  CHECK(slurp("trainer_sum_a.csv") != slurp("trainer_sum_d.csv"));

  for (const char* p : {"trainer_sum_a.csv", "trainer_sum_b.csv",
                        "trainer_sum_d.csv", "trainer_log_a.ndjson",
                        "trainer_log_b.ndjson"})
    std::remove(p);
}

TEST_CASE("log files parse and follow the published shapes") {
  Scenario sc = tiny_scenario();
  TrainConfig c = tiny_config();
  TrainResult r = train(c, sc.source, sc.target);

  r.log.write_ndjson("trainer_shape.ndjson");
  std::ifstream f("trainer_shape.ndjson");
  std::string line;
  int events = 0;
  while (std::getline(f, line)) {
    nlohmann::json j = nlohmann::json::parse(line);
    CHECK(j.contains("event"));
    events++;
  }
  f.close();
  std::remove("trainer_shape.ndjson");
  CHECK(events ==
        static_cast<int>(r.log.steps.size() + r.log.rounds.size() +
                         r.log.evals.size()));

  r.log.write_summary_csv("trainer_shape.csv");
  std::ifstream g("trainer_shape.csv");
  std::getline(g, line);
  CHECK(line == "schema_version,kind,step,value");
  g.close();
  std::remove("trainer_shape.csv");
}

TEST_CASE("a short run produces sane logs and feasible weights") {
  Scenario sc = tiny_scenario();
  TrainConfig c = tiny_config();
  TrainResult r = train(c, sc.source, sc.target);

  CHECK(!r.log.aborted);
  CHECK(r.log.steps.size() == 60);
  CHECK(r.log.rounds.size() == 2);  // steps 25 and 50
  CHECK(r.log.rounds[0].step == 25);
  CHECK(r.log.rounds[1].step == 50);
  CHECK(!r.log.evals.empty());
  CHECK(r.log.evals.back().step == 59);

  WeightVector wv{r.log.final_weights, c.rho};
  CHECK(wv.feasible());
  CHECK(r.log.final_weights.size() == sc.source.size());
  for (const auto& e : r.log.rounds) {
    CHECK(std::isfinite(e.rel_weight_change));
    CHECK(std::isfinite(e.wasserstein));
  }
  for (const auto& e : r.log.evals) {
    CHECK(e.target_accuracy >= 0.0);
    CHECK(e.target_accuracy <= 1.0);
  }
}

TEST_CASE("with every component disabled the weights stay at one") {
  Scenario sc = tiny_scenario();
  TrainConfig c = tiny_config();
  c.enable_reweight = false;
  c.enable_uncertainty = false;
  c.enable_nrc = false;
  TrainResult r = train(c, sc.source, sc.target);
  CHECK(r.log.rounds.empty());
  CHECK((r.log.final_weights.array() == 1.0).all());
  for (const auto& e : r.log.steps) {
    CHECK(e.l_pow == 0.0);
    CHECK(e.l_nrc == 0.0);
  }
}

TEST_CASE("degenerate inputs are rejected") {
  Scenario sc = tiny_scenario();
  TrainConfig c = tiny_config();
  Dataset empty;
  empty.features = Matrix::Zero(1, 8);
  empty.labels = {0};
  empty.roles = {ClassRole::Na};
  CHECK_THROWS_AS(train(c, empty, sc.target), std::invalid_argument);

  Dataset unlabeled = sc.source;
  unlabeled.labels.assign(unlabeled.labels.size(), 0);
  CHECK_THROWS_AS(train(c, unlabeled, sc.target), std::invalid_argument);
}
