#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "cadapter/conformal.hpp"
#include "cadapter/error.hpp"
#include "cadapter/rng.hpp"
#include "cadapter/train.hpp"
#include "testutil.hpp"

using namespace cadapter;

namespace {

double sigmoid_t(double z, double t) { return 1.0 / (1.0 + std::exp(-z / t)); }

// Scalar re-implementation of the batched objective: every true pair against
// every (instance, label) pair, summed term by term.
double brute_pairwise(const AdapterParams& params, const LogitDataset& data,
                      const std::vector<std::size_t>& batch, ScoreKind kind, double t) {
  std::vector<std::vector<double>> scores;
  for (std::size_t row : batch) {
    const auto probs = softmax(adapter_forward(params, data.row(row)));
    scores.push_back(score_all_labels(ScoreSpec{kind}, probs, 1.0));
  }
  double total = 0.0;
  std::size_t terms = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double ts = scores[i][static_cast<std::size_t>(data.labels[batch[i]])];
    for (std::size_t j = 0; j < batch.size(); ++j) {
      for (int y = 0; y < data.class_count; ++y) {
        total += sigmoid_t(ts - scores[j][static_cast<std::size_t>(y)], t);
        ++terms;
      }
    }
  }
  return total / static_cast<double>(terms);
}

}  // namespace

TEST_CASE("pairwise loss is one half when every score ties") {
  LogitDataset data;
  data.class_count = 4;
  data.logits = {1.5, 1.5, 1.5, 1.5};
  data.labels = {2};
  data.ids = {0};
  auto params = AdapterParams::zeros(4);
  const std::vector<std::size_t> batch{0};
  const auto result = pairwise_loss(params, data, batch, ScoreKind::Thr, 0.1);
  CHECK(result.loss == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("pairwise loss stays strictly inside (0,1)") {
  Rng rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    const auto data = testutil::random_dataset(6, 5, rng.next());
    auto params = testutil::random_params(5, rng.next());
    std::vector<std::size_t> batch(data.size());
    std::iota(batch.begin(), batch.end(), std::size_t{0});
    for (double t : {1e-4, 0.1}) {
      const auto result = pairwise_loss(params, data, batch, ScoreKind::Thr, t);
      CHECK(result.loss > 0.0);
      CHECK(result.loss < 1.0);
    }
  }
}

TEST_CASE("pairwise loss matches the brute-force double sum") {
  const auto data = testutil::random_dataset(2, 3, 55);
  auto params = testutil::random_params(3, 56, 0.6);
  const std::vector<std::size_t> batch{0, 1};
  for (ScoreKind kind : {ScoreKind::Thr, ScoreKind::Aps}) {
    for (double t : {0.1, 1e-4}) {
      const auto result = pairwise_loss(params, data, batch, kind, t);
      const double want = brute_pairwise(params, data, batch, kind, t);
      CHECK(std::abs(result.loss - want) <= 1e-12);
    }
  }
}

TEST_CASE("pairwise loss validates its inputs") {
  const auto data = testutil::random_dataset(2, 3, 57);
  auto params = AdapterParams::zeros(3);
  const std::vector<std::size_t> batch{0, 1};
  CHECK_THROWS_AS(pairwise_loss(params, data, batch, ScoreKind::Raps, 0.1), ValidationError);
  CHECK_THROWS_AS(pairwise_loss(params, data, batch, ScoreKind::Thr, 0.0), ValidationError);
  CHECK_THROWS_AS(pairwise_loss(params, data, {}, ScoreKind::Thr, 0.1), ValidationError);
}

TEST_CASE("size loss approaches the mean hard set size as T shrinks") {
  const auto data = testutil::random_dataset(30, 4, 58);
  auto params = testutil::random_params(4, 59, 0.4);
  std::vector<std::size_t> cal_half, test_half;
  for (std::size_t i = 0; i < data.size(); ++i) (i < 15 ? cal_half : test_half).push_back(i);

  const double alpha = 0.2;
  const auto result =
      size_loss(params, data, cal_half, test_half, alpha, 1e-7, ScoreKind::Thr);

  std::vector<double> cal_scores;
  for (std::size_t row : cal_half) {
    const auto probs = softmax(adapter_forward(params, data.row(row)));
    cal_scores.push_back(score(ScoreSpec{ScoreKind::Thr}, probs, data.labels[row], 1.0));
  }
  const double tau = calibrate(cal_scores, alpha).tau;
  double hard = 0.0;
  for (std::size_t row : test_half) {
    const auto probs = softmax(adapter_forward(params, data.row(row)));
    hard += predict_set(ScoreSpec{ScoreKind::Thr}, probs, tau, 1.0).size;
  }
  hard /= static_cast<double>(test_half.size());
  CHECK(std::abs(result.loss - hard) <= 1e-4);
}

TEST_CASE("size loss saturates near K when the threshold towers over test scores") {
  LogitDataset data;
  data.class_count = 3;
  // calibration rows are confidently wrong (true-label THR score near 1),
  // test rows are flat (every THR score well below that)
  data.logits = {8.0, 0.0, 0.0, 8.0, 0.0, 0.0, 0.1, 0.0, 0.05, 0.0, 0.1, 0.05};
  data.labels = {1, 1, 1, 0};
  data.ids = {0, 1, 2, 3};
  auto params = AdapterParams::zeros(3, false, false);
  const std::vector<std::size_t> cal_half{0, 1};
  const std::vector<std::size_t> test_half{2, 3};
  const auto result = size_loss(params, data, cal_half, test_half, 0.5, 0.05, ScoreKind::Thr);
  CHECK(result.loss > 2.9);
  CHECK(result.loss <= 3.0);
}

TEST_CASE("size loss matches a brute-force re-implementation") {
  const auto data = testutil::random_dataset(4, 3, 60);
  auto params = testutil::random_params(3, 61, 0.5);
  const std::vector<std::size_t> cal_half{0, 1};
  const std::vector<std::size_t> test_half{2, 3};
  const double alpha = 0.5;  // rank 2 of 2 calibration scores stays finite
  const double t_soft = 0.07;
  const auto result = size_loss(params, data, cal_half, test_half, alpha, t_soft, ScoreKind::Thr);

  std::vector<double> cal_scores;
  for (std::size_t row : cal_half) {
    const auto probs = softmax(adapter_forward(params, data.row(row)));
    cal_scores.push_back(1.0 - probs[static_cast<std::size_t>(data.labels[row])]);
  }
  std::sort(cal_scores.begin(), cal_scores.end());
  const double rank = std::ceil((cal_scores.size() + 1.0) * (1.0 - alpha));
  const double tau = cal_scores[static_cast<std::size_t>(rank) - 1];
  double want = 0.0;
  for (std::size_t row : test_half) {
    const auto probs = softmax(adapter_forward(params, data.row(row)));
    for (int y = 0; y < 3; ++y)
      want += sigmoid_t(tau - (1.0 - probs[static_cast<std::size_t>(y)]), t_soft);
  }
  want /= static_cast<double>(test_half.size());
  CHECK(std::abs(result.loss - want) <= 1e-12);
}

TEST_CASE("adam first step moves by about the learning rate") {
  auto params = AdapterParams::zeros(2);
  auto state = AdamState::zeros(2);
  std::vector<double> gw(4, 0.0), gb(2, 0.0);
  gw[0] = 0.37;
  gb[1] = -2.0;
  adam_step(params, state, gw, gb, 0.05);
  CHECK(std::abs(params.weight[0] + 0.05) <= 1e-6);
  CHECK(std::abs(params.bias[1] - 0.05) <= 1e-6);
}

TEST_CASE("adam leaves parameters alone under a zero gradient") {
  auto params = AdapterParams::zeros(3);
  auto state = AdamState::zeros(3);
  const std::vector<double> gw(9, 0.0), gb(3, 0.0);
  adam_step(params, state, gw, gb, 0.1);
  for (double v : params.weight) CHECK(v == 0.0);
  for (double v : params.bias) CHECK(v == 0.0);
}

TEST_CASE("adam is deterministic given identical state") {
  auto run = [] {
    auto params = AdapterParams::zeros(2);
    auto state = AdamState::zeros(2);
    const std::vector<double> gw{0.1, -0.2, 0.3, -0.4};
    const std::vector<double> gb{0.5, -0.6};
    adam_step(params, state, gw, gb, 0.1);
    adam_step(params, state, gw, gb, 0.1);
    return params;
  };
  const auto a = run();
  const auto b = run();
  CHECK(a.weight == b.weight);
  CHECK(a.bias == b.bias);
}

TEST_CASE("tune validates the configuration before any compute") {
  const auto data = testutil::random_dataset(16, 3, 70);
  TrainConfig cfg;
  cfg.iterations = 0;
  CHECK_THROWS_AS(tune(data, nullptr, cfg), ValidationError);
  cfg.iterations = 1;
  cfg.early_stop = EarlyStopMetric::Size;
  CHECK_THROWS_AS(tune(data, nullptr, cfg), ValidationError);  // no validation split
}

TEST_CASE("one iteration performs exactly one optimizer step") {
  const auto data = testutil::random_dataset(16, 3, 71);
  TrainConfig cfg;
  cfg.iterations = 1;
  cfg.batch_size = 8;
  cfg.early_stop = EarlyStopMetric::None;
  cfg.surrogate_t = 0.1;  // wide sigmoid so this sparse toy batch has gradient
  cfg.seed = 4;
  const auto result = tune(data, nullptr, cfg);
  CHECK(result.trace.iteration_losses.size() == 1);
  bool moved = false;
  for (double v : result.params.bias) moved = moved || v != 0.0;
  CHECK(moved);
}

TEST_CASE("tune is deterministic given data, config, and seed") {
  const auto data = testutil::random_dataset(60, 4, 72);
  const auto val = testutil::random_dataset(40, 4, 73);
  TrainConfig cfg;
  cfg.iterations = 12;
  cfg.batch_size = 16;
  cfg.eval_every = 4;
  cfg.seed = 99;
  const auto a = tune(data, &val, cfg);
  const auto b = tune(data, &val, cfg);
  CHECK(a.params.weight == b.params.weight);
  CHECK(a.params.bias == b.params.bias);
  CHECK(a.trace.iteration_losses == b.trace.iteration_losses);
  CHECK(a.trace.best_iteration == b.trace.best_iteration);
  REQUIRE(a.trace.rows.size() == b.trace.rows.size());
  for (std::size_t i = 0; i < a.trace.rows.size(); ++i) {
    CHECK(a.trace.rows[i].iteration == b.trace.rows[i].iteration);
    CHECK(a.trace.rows[i].loss == b.trace.rows[i].loss);
    CHECK(a.trace.rows[i].val_size == b.trace.rows[i].val_size);
  }
  CHECK(a.trace.to_csv() == b.trace.to_csv());
}

TEST_CASE("the trace holds a baseline row plus one row per eval interval") {
  const auto data = testutil::random_dataset(64, 3, 74);
  const auto val = testutil::random_dataset(32, 3, 75);
  TrainConfig cfg;
  cfg.iterations = 40;
  cfg.batch_size = 16;
  cfg.eval_every = 10;
  cfg.seed = 1;
  const auto result = tune(data, &val, cfg);
  CHECK(result.trace.rows.size() == 1 + 40 / 10);
  CHECK(result.trace.rows.front().iteration == 0);
  CHECK(result.trace.rows.back().iteration == 40);
  CHECK(result.trace.iteration_losses.size() == 40);
  for (std::size_t i = 1; i < result.trace.rows.size(); ++i)
    CHECK(result.trace.rows[i].iteration > result.trace.rows[i - 1].iteration);
}

TEST_CASE("training shrinks the pairwise loss on a miscalibrated generator") {
  SynthConfig synth;
  synth.class_count = 6;
  synth.sizes = {{"tune", 600}, {"val", 200}};
  synth.signal = 2.0;
  synth.temperature = 0.25;
  synth.seed = 11;
  const auto splits = synthesize(synth);

  TrainConfig cfg;
  cfg.iterations = 60;
  cfg.batch_size = 128;
  cfg.eval_every = 20;
  cfg.surrogate_t = 0.1;
  cfg.seed = 12;
  const auto result = tune(splits.at("tune"), &splits.at("val"), cfg);

  const auto& losses = result.trace.iteration_losses;
  const double head = std::accumulate(losses.begin(), losses.begin() + 5, 0.0) / 5.0;
  const double tail = std::accumulate(losses.end() - 5, losses.end(), 0.0) / 5.0;
  CHECK(tail < head);

  // order preservation survives training
  Rng rng(13);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> f(6);
    for (auto& v : f) v = rng.normal() * 3.0;
    const auto out = adapter_forward(result.params, f);
    for (std::size_t i = 0; i < f.size(); ++i) {
      for (std::size_t j = 0; j < f.size(); ++j) {
        const int want = f[i] > f[j] ? 1 : (f[i] < f[j] ? -1 : 0);
        const int got = out[i] > out[j] ? 1 : (out[i] < out[j] ? -1 : 0);
        CHECK(want == got);
      }
    }
  }
}

TEST_CASE("the pairwise loss gradient survives a full-pipeline FD check at T=0.1") {
  const auto data = testutil::random_dataset(4, 5, 80);
  auto params = testutil::random_params(5, 81, 0.3);
  const std::vector<std::size_t> batch{0, 1, 2, 3};
  const auto analytic = pairwise_loss(params, data, batch, ScoreKind::Thr, 0.1);
  const double h = 1e-6;
  double max_rel = 0.0;
  for (std::size_t i = 0; i < params.weight.size(); ++i) {
    auto up = params, down = params;
    up.weight[i] += h;
    down.weight[i] -= h;
    const double fd = (pairwise_loss(up, data, batch, ScoreKind::Thr, 0.1).loss -
                       pairwise_loss(down, data, batch, ScoreKind::Thr, 0.1).loss) /
                      (2 * h);
    const double denom = std::max({std::abs(analytic.grad_weight[i]), std::abs(fd), 1e-8});
    max_rel = std::max(max_rel, std::abs(analytic.grad_weight[i] - fd) / denom);
  }
  CHECK(max_rel < 1e-4);
}
