#include <cmath>
#include <stdexcept>

#include "doctest.h"
#include "test_support.hpp"
#include "ziqe/distributions.hpp"
#include "ziqe/finetune.hpp"
#include "ziqe/qe_model.hpp"

using namespace ziqe;
using namespace ziqe::qe;
using nn::Tensor;

namespace {

double logit(double p) { return std::log(p / (1.0 - p)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

HeadSpec spec(HeadKind kind, std::size_t hidden = 3) {
  HeadSpec s;
  s.kind = kind;
  s.lstm_hidden = hidden;
  return s;
}

Tensor<double> fused(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor<double>({1, n}, std::move(v));
}

bert::ModelConfig tiny() {
  bert::ModelConfig c;
  c.vocab_size = 12;
  c.d_model = 8;
  c.heads = 2;
  c.encoder_layers = 1;
  c.memory_layers = 1;
  c.feedforward_dim = 16;
  c.max_seq_len = 32;
  c.feature_dim = 6;
  return c;
}

Tensor<double> random_matrix(std::size_t r, std::size_t c, SplitMix64& rng) {
  auto t = Tensor<double>::matrix(r, c);
  for (double& v : t.flat()) v = rng.uniform(-1.0, 1.0);
  return t;
}

}  // namespace

TEST_CASE("zero output layers predict 0.5 / 0.5 / 0.25") {
  QeHead<double> head(spec(HeadKind::ZiBeta), 4, 1);
  for (const char* n : {"mean/w", "mean/b", "gate/w", "gate/b"}) head.params().at(n).value.fill(0.0);
  const auto p = head.predict_fused(fused({0.3, -1.0, 2.0, 0.1, 0.0, 0.7})).prediction;
  CHECK(p.lambda_zero == 0.5);
  CHECK(p.mu == 0.5);
  CHECK(p.expected_wer == 0.25);
  head.params().at("gate/b").value[0] = 30.0;
  const auto q = head.predict_fused(fused({0.3, -1.0, 2.0, 0.1, 0.0, 0.7})).prediction;
  CHECK(q.lambda_zero >= 1.0 - 1e-12);
  CHECK(q.expected_wer < 1e-12);
}

TEST_CASE("hand-set two-dimensional output weights") {
  QeHead<double> head(spec(HeadKind::ZiBeta, 1), 4, 2);
  auto& ps = head.params();
  ps.at("gate/w").value[0] = 0.3;
  ps.at("gate/w").value[1] = -0.2;
  ps.at("gate/b").value[0] = 0.1;
  ps.at("mean/w").value[0] = 0.5;
  ps.at("mean/w").value[1] = 0.4;
  ps.at("mean/b").value[0] = -0.2;
  const auto p = head.predict_fused(fused({0.7, -0.1})).prediction;
  const double lambda = sigmoid(0.3 * 0.7 - 0.2 * -0.1 + 0.1);
  const double mu = sigmoid(0.5 * 0.7 + 0.4 * -0.1 - 0.2);
  CHECK(p.lambda_zero == doctest::Approx(lambda).epsilon(1e-15));
  CHECK(p.mu == doctest::Approx(mu).epsilon(1e-15));
  CHECK(p.expected_wer == doctest::Approx((1 - lambda) * mu).epsilon(1e-15));
  CHECK_THROWS_AS(head.predict_fused(fused({0.7, -0.1, 0.2})), ShapeError);
}

TEST_CASE("ungated heads predict raw mu; the prediction flag switches Zi heads to raw mu") {
  SplitMix64 rng(3);
  const auto h = random_matrix(1, 6, rng);
  QeHead<double> lin(spec(HeadKind::Linear), 4, 3);
  CHECK_FALSE(lin.params().contains("gate/w"));
  const auto p = lin.predict_fused(h).prediction;
  CHECK(p.expected_wer == p.mu);
  CHECK(p.lambda_zero == 0.0);
  auto s = spec(HeadKind::ZiLinear);
  s.expected_prediction = false;
  QeHead<double> raw(s, 4, 3);
  const auto r = raw.predict_fused(h).prediction;
  CHECK(r.expected_wer == r.mu);
}

TEST_CASE("expected prediction contract") {
  SplitMix64 rng(4);
  for (int i = 0; i < 1000; ++i) {
    const double l = rng.uniform(0.001, 0.999), m = rng.uniform(0.001, 0.999);
    const auto p = make_prediction(l, m);
    CHECK(std::abs(p.expected_wer - (1 - l) * m) <= 1e-12);
    CHECK(make_prediction(std::min(l + 1e-3, 0.9999), m).expected_wer < p.expected_wer);
    CHECK(make_prediction(l, std::min(m + 1e-3, 0.9999)).expected_wer > p.expected_wer);
  }
}

TEST_CASE("zi_beta loss: gradient equals the Beta score") {
  for (double mu = 0.1; mu < 0.95; mu += 0.1) {
    for (double phi : {0.5, 2.0, 10.0, 50.0}) {
      for (double y = 0.05; y < 0.96; y += 0.05) {
        const double h = 1e-6 * std::min(mu, 1.0 - mu);
        const double fd = (dist::beta_log_pdf(y, {mu + h, phi}) -
                           dist::beta_log_pdf(y, {mu - h, phi})) / (2 * h);
        const double analytic = surrogate_objective(mu, y, phi).gradient;
        CAPTURE(mu);
        CAPTURE(phi);
        CAPTURE(y);
        CHECK(std::abs(analytic - fd) <= 1e-4 * std::max(std::abs(fd), 1e-3));
        const auto g = zi_beta_loss_and_grad(mu, 0.3, y, phi);
        CHECK(g.d_mu == -analytic);
        CHECK(g.loss == doctest::Approx(-std::log(0.7) - dist::beta_log_pdf(y, {mu, phi})));
      }
    }
  }
}

TEST_CASE("zi_beta loss special cases") {
  CHECK(std::abs(surrogate_objective(0.5, 0.5, 3.0).gradient) < 1e-12);
  CHECK(std::abs(zi_beta_loss_and_grad(0.5, 0.2, 0.5, 17.0).d_mu) < 1e-12);
  const auto z = zi_beta_loss_and_grad(0.4, 0.3, 0.0, 5.0);
  CHECK(z.loss == doctest::Approx(-std::log(0.3)));
  CHECK(z.d_mu == 0.0);
  // d(-ln lambda)/d logit = lambda - 1
  CHECK(z.d_lambda * 0.3 * 0.7 == doctest::Approx(0.3 - 1.0));
  // the surrogate value is not the log likelihood
  CHECK(surrogate_objective(0.3, 0.6, 4.0).value != doctest::Approx(dist::beta_log_pdf(0.6, {0.3, 4.0})));
  CHECK_THROWS_AS(zi_beta_loss_and_grad(0.5, 0.3, 1.0, 2.0), std::domain_error);
  CHECK_THROWS_AS(zi_beta_loss_and_grad(0.0, 0.3, 0.4, 2.0), std::domain_error);
  CHECK_THROWS_AS(zi_beta_loss_and_grad(1.0, 0.3, 0.4, 2.0), std::domain_error);
  CHECK_THROWS_AS(zi_beta_loss_and_grad(0.5, 0.3, 0.4, 0.0), std::domain_error);
  CHECK(cap_wer(2.0) == kMaxTarget);
  CHECK(cap_wer(0.25) == 0.25);
  CHECK(y_star(0.5) == 0.0);
  CHECK(mu_star(0.5, 7.0) == 0.0);
}

TEST_CASE("baseline losses") {
  CHECK(baseline_loss(HeadKind::Linear, make_prediction(0.0, 0.37), 0.37).loss == 0.0);
  CHECK(baseline_loss(HeadKind::Logistic, make_prediction(0.0, 0.5), 0.5).loss ==
        doctest::Approx(std::log(2.0)).epsilon(1e-15));
  const auto zl = baseline_loss(HeadKind::ZiLinear, make_prediction(0.4, 0.3), 0.0);
  CHECK(zl.loss == doctest::Approx(-std::log(0.4)));
  CHECK(zl.d_mu == 0.0);
  const auto zl2 = baseline_loss(HeadKind::ZiLinear, make_prediction(0.4, 0.3), 0.5);
  CHECK(zl2.loss == doctest::Approx(-std::log(0.6) + 0.04));
  const auto zg = baseline_loss(HeadKind::ZiLogistic, make_prediction(0.4, 0.3), 0.5);
  CHECK(zg.loss == doctest::Approx(-std::log(0.6) - 0.5 * std::log(0.3) - 0.5 * std::log(0.7)));
  CHECK_THROWS_AS(baseline_loss(HeadKind::Linear, make_prediction(0.0, 0.3), 1.0),
                  std::domain_error);
}

TEST_CASE("inflated categorical head") {
  const std::vector<double> uniform{0.0, 0.0, 0.0};
  for (double p : categorical_probabilities(uniform)) CHECK(p == doctest::Approx(1.0 / 3.0));
  const std::vector<double> fixed{1.0, 0.0, 0.0};
  const auto p = categorical_probabilities(fixed);
  CHECK(p[0] == doctest::Approx(0.57611688476582910986).epsilon(1e-15));
  CHECK(p[1] == doctest::Approx(0.21194155761708544507).epsilon(1e-15));

  // K = 1, masses {0}: same loss as the zero-inflated Beta head
  const std::vector<double> zero{0.0};
  for (double lambda : {0.1, 0.5, 0.83}) {
    for (double y : {0.0, 0.2, 0.7}) {
      const std::vector<double> logits{0.0, logit(lambda)};
      const auto c = inflated_categorical_loss(logits, 0.4, zero, y, 6.0);
      const auto z = zi_beta_loss_and_grad(0.4, lambda, y, 6.0);
      CHECK(std::abs(c.loss - z.loss) <= 1e-6);
      CHECK(std::abs(c.d_mu - z.d_mu) <= 1e-9);
    }
  }
  const std::vector<double> masses{0.0, 0.5};
  const std::vector<double> logits{0.2, -0.4, 0.9};
  const auto probs = categorical_probabilities(logits);
  CHECK(inflated_categorical_loss(logits, 0.3, masses, 0.5, 4.0).loss ==
        doctest::Approx(-std::log(probs[2])));
  CHECK(inflated_categorical_loss(logits, 0.3, masses, 0.5, 4.0).d_mu == 0.0);
  CHECK_THROWS_AS(inflated_categorical_loss(logits, 0.3, masses, 1.5, 4.0), std::domain_error);
  const auto pred = categorical_prediction(logits, 0.3, masses);
  CHECK(pred.expected_wer == doctest::Approx(probs[0] * 0.3 + probs[2] * 0.5));
}

TEST_CASE("zero-WER samples send no gradient to the mean layer") {
  SplitMix64 rng(5);
  QeHead<double> head(spec(HeadKind::ZiBeta), 4, 6);
  const auto states = random_matrix(5, 4, rng);
  QeHead<double>::Cache cache;
  const auto out = head.forward(states, &cache);
  head.params().zero_grad();
  head.backward(cache, head.loss(out, 0.0, 3.0), 1.0);
  for (double g : head.params().grad("mean/w").flat()) CHECK(g == 0.0);
  CHECK(head.params().grad("mean/b")[0] == 0.0);
  CHECK(head.params().grad("gate/b")[0] != 0.0);
}

TEST_CASE("fine-tuning steps") {
  SplitMix64 rng(7);
  QeModel<double> model(bert::SpeechBert<double>(tiny(), 3), spec(HeadKind::ZiBeta), 4.0, 9);
  std::vector<Tensor<double>> feats;
  for (int i = 0; i < 4; ++i) feats.push_back(random_matrix(5, 6, rng));
  const std::vector<std::vector<TokenId>> hyps{{4, 5}, {6, 7, 8}, {9}, {10, 11, 4}};

  SUBCASE("all-zero batch loss is the mean Bernoulli NLL") {
    std::vector<QeExample<double>> batch;
    double expect = 0.0;
    for (int i = 0; i < 4; ++i) {
      batch.push_back({&feats[i], hyps[i], 0.0});
      expect -= std::log(model.predict(feats[i], hyps[i]).lambda_zero);
    }
    QeTrainer<double> trainer(model, {});
    CHECK(trainer.compute_gradients(batch) == doctest::Approx(expect / 4).epsilon(1e-12));
  }

  SUBCASE("frozen backbone stays bit-identical") {
    FinetuneOptions opt;
    opt.freeze_backbone = true;
    QeTrainer<double> trainer(model, opt);
    const auto before = model.backbone().params();
    const auto head_before = model.head().params().value("mean/w");
    std::vector<QeExample<double>> batch{{&feats[0], hyps[0], 0.4}, {&feats[1], hyps[1], 0.0}};
    finetune_step(trainer, std::span<const QeExample<double>>(batch));
    for (const auto& [name, p] : before) CHECK(model.backbone().params().value(name) == p.value);
    CHECK_FALSE(model.head().params().value("mean/w") == head_before);
  }

  SUBCASE("unfrozen step moves the backbone") {
    QeTrainer<double> trainer(model, {});
    const auto before = model.backbone().params().value("txt/0/ff/up/w");
    std::vector<QeExample<double>> batch{{&feats[0], hyps[0], 0.4}};
    trainer.step(batch);
    CHECK_FALSE(model.backbone().params().value("txt/0/ff/up/w") == before);
  }

  SUBCASE("batch gradient equals the mean of per-sample gradients") {
    const std::vector<double> wers{0.0, 0.5, 1.2, 0.25};
    std::vector<QeExample<double>> batch;
    for (int i = 0; i < 4; ++i) batch.push_back({&feats[i], hyps[i], wers[i]});
    QeTrainer<double> trainer(model, {});
    trainer.compute_gradients(batch);
    const auto bert_total = model.backbone().params();
    const auto head_total = model.head().params();
    nn::ParamStore<double> bert_sum = bert_total, head_sum = head_total;
    bert_sum.zero_grad();
    head_sum.zero_grad();
    for (int i = 0; i < 4; ++i) {
      model.zero_grad();
      model.accumulate(feats[i], hyps[i], wers[i], 1.0, true);
      for (auto& [name, p] : bert_sum) nn::add_inplace(p.grad, model.backbone().params().grad(name));
      for (auto& [name, p] : head_sum) nn::add_inplace(p.grad, model.head().params().grad(name));
    }
    auto compare = [](const nn::ParamStore<double>& total, const nn::ParamStore<double>& sum) {
      for (const auto& [name, p] : total) {
        const auto& s = sum.at(name).grad;
        for (std::size_t k = 0; k < s.size(); ++k) {
          CHECK(std::abs(p.grad[k] - s[k] / 4.0) <= 1e-12 * std::max(1.0, std::abs(s[k])));
        }
      }
    };
    compare(bert_total, bert_sum);
    compare(head_total, head_sum);
  }

  SUBCASE("empty batch") {
    QeTrainer<double> trainer(model, {});
    CHECK_THROWS_AS(trainer.compute_gradients({}), std::invalid_argument);
  }
}

TEST_CASE("QE checkpoint round trip") {
  SplitMix64 rng(8);
  auto s = spec(HeadKind::InflatedCategorical);
  s.masses = {0.0, 0.5};
  QeModel<float> model(bert::SpeechBert<float>(tiny(), 4), s, 7.5, 10);
  const auto back = qe_from_records<float>(to_records(model));
  CHECK(back.phi() == 7.5);
  CHECK(back.head().spec().kind == HeadKind::InflatedCategorical);
  CHECK(back.head().spec().masses == s.masses);
  Tensor<float> f = random_matrix(4, 6, rng).cast<float>();
  const std::vector<TokenId> hyp{4, 6, 8};
  const auto a = model.predict(f, hyp), b = back.predict(f, hyp);
  CHECK(a.expected_wer == b.expected_wer);
  CHECK(a.lambda_zero == b.lambda_zero);
}

TEST_CASE("head kind names") {
  for (auto k : {HeadKind::ZiBeta, HeadKind::Linear, HeadKind::ZiLinear, HeadKind::Logistic,
                 HeadKind::ZiLogistic, HeadKind::InflatedCategorical}) {
    CHECK(parse_head_kind(to_string(k)) == k);
  }
  CHECK_THROWS_AS(parse_head_kind("beta"), std::invalid_argument);
}
