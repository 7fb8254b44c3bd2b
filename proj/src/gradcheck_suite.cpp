#include "ziqe/gradcheck_suite.hpp"

#include <cstdio>
#include <functional>

#include "ziqe/nn/attention.hpp"
#include "ziqe/nn/gradcheck.hpp"
#include "ziqe/nn/lstm.hpp"
#include "ziqe/qe_model.hpp"
#include "ziqe/speech_bert.hpp"

namespace ziqe {

namespace {

using nn::MaskMode;
using nn::ParamStore;
using Tensor = nn::Tensor<double>;

Tensor random_tensor(std::vector<std::size_t> shape, SplitMix64& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.flat()) v = scale * rng.uniform(-1.0, 1.0);
  return t;
}

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

class Suite {
 public:
  Suite(std::uint64_t seed, double threshold) : rng_(seed), threshold_(threshold) {}

  SplitMix64& rng() { return rng_; }

  /// Scalar loss with analytic gradients already in `store` and `inputs`.
  void check(const std::string& name, ParamStore<double>& store,
             const std::function<double()>& loss, std::vector<Tensor*> inputs,
             std::vector<Tensor> input_grads) {
    nn::GradCheckReport report =
        nn::check_param_gradients(store, loss, kGradCheckEpsilon);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      auto r = nn::finite_difference_check(loss, inputs[i]->flat(), input_grads[i].flat(),
                                           kGradCheckEpsilon);
      r.worst_name = "input" + std::to_string(i);
      report.merge(r);
    }
    GradCheckRow row;
    row.name = name;
    row.max_relative_error = report.max_relative_error;
    row.threshold = threshold_;
    row.coordinates = report.coordinates;
    row.worst = report.worst_name + "[" + std::to_string(report.worst_index) + "]";
    row.pass = report.max_relative_error < threshold_;
    rows_.push_back(row);
  }

  /// Loss = <forward(), w> for a fixed random w. `backward(w)` must zero
  /// nothing, accumulate parameter gradients and return input gradients.
  void check_linear(const std::string& name, ParamStore<double>& store,
                    const std::function<Tensor()>& forward,
                    const std::function<std::vector<Tensor>(const Tensor&)>& backward,
                    std::vector<Tensor*> inputs) {
    const Tensor y = forward();
    const Tensor w = random_tensor(y.shape(), rng_);
    store.zero_grad();
    auto grads = backward(w);
    check(name, store, [&] { return dot(forward(), w); }, std::move(inputs), std::move(grads));
  }

  std::vector<GradCheckRow> rows() && { return std::move(rows_); }

 private:
  SplitMix64 rng_;
  double threshold_;
  std::vector<GradCheckRow> rows_;
};

void perturb(ParamStore<double>& store, SplitMix64& rng, double scale) {
  for (auto& [name, p] : store) {
    for (double& v : p.value.flat()) v += scale * rng.uniform(-1.0, 1.0);
  }
}

void check_layers(Suite& s) {
  auto& rng = s.rng();
  {
    ParamStore<double> store;
    nn::Dense<double> layer(store, "dense", 4, 3, rng);
    perturb(store, rng, 0.1);
    Tensor x = random_tensor({5, 4}, rng);
    s.check_linear("dense", store, [&] { return layer.forward(store, x); },
                   [&](const Tensor& dy) { return std::vector{layer.backward(store, x, dy)}; },
                   {&x});
  }
  {
    ParamStore<double> store;
    nn::LayerNorm<double> layer(store, "ln", 6);
    perturb(store, rng, 0.3);
    Tensor x = random_tensor({4, 6}, rng);
    s.check_linear("layer_norm", store, [&] { return layer.forward(store, x, nullptr); },
                   [&](const Tensor& dy) {
                     typename nn::LayerNorm<double>::Cache c;
                     layer.forward(store, x, &c);
                     return std::vector{layer.backward(store, c, dy)};
                   },
                   {&x});
  }
  {
    ParamStore<double> store;
    nn::Embedding<double> layer(store, "embed", 7, 5, rng);
    const std::vector<TokenId> ids{3, 0, 6, 3, 2};
    s.check_linear("embedding", store, [&] { return layer.forward(store, ids); },
                   [&](const Tensor& dy) {
                     layer.backward(store, ids, dy);
                     return std::vector<Tensor>{};
                   },
                   {});
  }
  {
    ParamStore<double> store;
    nn::FeedForward<double> layer(store, "ff", 5, 7, rng);
    perturb(store, rng, 0.1);
    Tensor x = random_tensor({4, 5}, rng);
    s.check_linear("feed_forward", store, [&] { return layer.forward(store, x, nullptr); },
                   [&](const Tensor& dy) {
                     typename nn::FeedForward<double>::Cache c;
                     layer.forward(store, x, &c);
                     return std::vector{layer.backward(store, c, dy)};
                   },
                   {&x});
  }
  for (MaskMode mode : {MaskMode::Full, MaskMode::Causal}) {
    ParamStore<double> store;
    nn::MultiHeadAttention<double> layer(store, "attn", 8, 2, rng);
    Tensor x = random_tensor({5, 8}, rng);
    const std::string name =
        mode == MaskMode::Full ? "self_attention_full" : "self_attention_causal";
    s.check_linear(name, store, [&] { return layer.forward(store, x, x, x, mode); },
                   [&](const Tensor& dy) {
                     typename nn::MultiHeadAttention<double>::Cache c;
                     layer.forward(store, x, x, x, mode, {}, &c);
                     auto g = layer.backward(store, c, dy);
                     nn::add_inplace(g.dq, g.dk);
                     nn::add_inplace(g.dq, g.dv);
                     return std::vector{g.dq};
                   },
                   {&x});
  }
  {
    ParamStore<double> store;
    nn::MultiHeadAttention<double> layer(store, "cross", 8, 4, rng);
    Tensor q = random_tensor({3, 8}, rng);
    Tensor mem = random_tensor({6, 8}, rng);
    const std::vector<std::uint8_t> valid{1, 1, 0, 1, 1, 0};
    s.check_linear("cross_attention_padded", store,
                   [&] { return layer.forward(store, q, mem, mem, MaskMode::Full, valid); },
                   [&](const Tensor& dy) {
                     typename nn::MultiHeadAttention<double>::Cache c;
                     layer.forward(store, q, mem, mem, MaskMode::Full, valid, &c);
                     auto g = layer.backward(store, c, dy);
                     nn::add_inplace(g.dk, g.dv);
                     return std::vector{g.dq, g.dk};
                   },
                   {&q, &mem});
  }
  for (bool reverse : {false, true}) {
    ParamStore<double> store;
    nn::Lstm<double> layer(store, "lstm", 3, 4, rng);
    Tensor x = random_tensor({5, 3}, rng);
    s.check_linear(reverse ? "lstm_reverse" : "lstm", store,
                   [&] { return layer.forward(store, x, reverse, nullptr); },
                   [&](const Tensor& dy) {
                     typename nn::Lstm<double>::Cache c;
                     layer.forward(store, x, reverse, &c);
                     return std::vector{layer.backward(store, c, dy)};
                   },
                   {&x});
  }
  for (bool tied : {false, true}) {
    ParamStore<double> store;
    nn::BiLstm<double> layer(store, "bilstm", 3, 4, rng, tied);
    Tensor x = random_tensor({6, 3}, rng);
    s.check_linear(tied ? "bilstm_tied" : "bilstm", store,
                   [&] { return layer.forward(store, x, nullptr); },
                   [&](const Tensor& dy) {
                     typename nn::BiLstm<double>::Cache c;
                     layer.forward(store, x, &c);
                     return std::vector{layer.backward(store, c, dy)};
                   },
                   {&x});
  }
  {
    ParamStore<double> store;
    Tensor logits = random_tensor({4, 6}, rng, 2.0);
    const std::vector<std::size_t> rows{0, 2, 3};
    const std::vector<TokenId> targets{5, 0, 2};
    Tensor d(logits.shape());
    nn::softmax_cross_entropy(logits, rows, targets, &d, 1.0);
    s.check("softmax_cross_entropy", store,
            [&] { return nn::softmax_cross_entropy<double>(logits, rows, targets, nullptr); },
            {&logits}, {d});
  }
}

bert::ModelConfig tiny_config() {
  bert::ModelConfig c;
  c.vocab_size = 10;
  c.d_model = 8;
  c.heads = 2;
  c.encoder_layers = 1;
  c.memory_layers = 2;
  c.feedforward_dim = 12;
  c.max_seq_len = 16;
  c.feature_dim = 6;
  c.lambda_st = 0.15;
  return c;
}

void check_speech_bert(Suite& s) {
  auto& rng = s.rng();
  bert::SpeechBert<double> model(tiny_config(), rng.next());
  auto& store = model.params();
  const Tensor features = random_tensor({5, 6}, rng);
  const std::vector<TokenId> tokens{4, 7, 9, 5};
  const auto masking = bert::apply_masking(tokens, rng.next(), 10);
  {
    store.zero_grad();
    model.joint_loss(features, tokens, masking, 1.0);
    s.check("speech_bert_joint_loss", store,
            [&] { return model.joint_loss(features, tokens, masking, 0.0).total; }, {}, {});
  }
  {
    store.zero_grad();
    model.asr_loss(features, tokens, 1.0);
    s.check("speech_bert_asr_loss", store, [&] { return model.asr_loss(features, tokens, 0.0); },
            {}, {});
  }
  {
    Tensor feats = features;
    s.check_linear("speech_bert_features", store,
                   [&] { return model.extract_features(feats, tokens); },
                   [&](const Tensor& dy) {
                     typename bert::SpeechBert<double>::FeatureCache c;
                     model.extract_features(feats, tokens, &c);
                     model.extract_features_backward(c, dy);
                     return std::vector<Tensor>{};
                   },
                   {});
  }
}

void check_heads(Suite& s) {
  auto& rng = s.rng();
  struct Case {
    qe::HeadKind kind;
    std::vector<double> masses;
    std::vector<double> wers;
  };
  const std::vector<Case> cases = {
      {qe::HeadKind::ZiBeta, {0.0}, {0.0, 0.35, 1.4}},
      {qe::HeadKind::Linear, {0.0}, {0.0, 0.35}},
      {qe::HeadKind::ZiLinear, {0.0}, {0.0, 0.35}},
      {qe::HeadKind::Logistic, {0.0}, {0.0, 0.35}},
      {qe::HeadKind::ZiLogistic, {0.0}, {0.0, 0.35}},
      {qe::HeadKind::InflatedCategorical, {0.0, 0.5}, {0.0, 0.5, 0.35}},
  };
  const double phi = 4.0;
  for (const auto& c : cases) {
    qe::HeadSpec spec;
    spec.kind = c.kind;
    spec.masses = c.masses;
    spec.lstm_hidden = 3;
    qe::QeHead<double> head(spec, 5, rng.next());
    perturb(head.params(), rng, 0.3);
    Tensor states = random_tensor({4, 5}, rng);
    for (double wer : c.wers) {
      head.params().zero_grad();
      typename qe::QeHead<double>::Cache cache;
      const auto l = head.loss(head.forward(states, &cache), wer, phi);
      Tensor d_states = head.backward(cache, l, 1.0);
      char name[96];
      std::snprintf(name, sizeof name, "qe_head_%s_wer%.2f", qe::to_string(c.kind).c_str(), wer);
      s.check(name, head.params(), [&] { return head.loss(head.forward(states), wer, phi).value; },
              {&states}, {d_states});
    }
  }
  {
    // End to end: backbone + Bi-LSTM + zero-inflated Beta head.
    qe::HeadSpec spec;
    spec.lstm_hidden = 3;
    qe::QeModel<double> model(bert::SpeechBert<double>(tiny_config(), rng.next()), spec, 3.0,
                              rng.next());
    const Tensor features = random_tensor({5, 6}, rng);
    const std::vector<TokenId> hyp{4, 8, 6};
    model.zero_grad();
    model.accumulate(features, hyp, 0.4, 1.0, true);
    auto loss = [&] { return model.accumulate(features, hyp, 0.4, 0.0, false); };
    s.check("qe_model_end_to_end_head", model.head().params(), loss, {}, {});
    s.check("qe_model_end_to_end_backbone", model.backbone().params(), loss, {}, {});
  }
}

}  // namespace

std::vector<GradCheckRow> run_gradcheck_suite(std::uint64_t seed, double threshold) {
  Suite suite(seed, threshold);
  check_layers(suite);
  check_speech_bert(suite);
  check_heads(suite);
  return std::move(suite).rows();
}

std::string format_gradcheck_table(const std::vector<GradCheckRow>& rows) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-36s %12s %10s %6s  %s\n", "check", "max_rel_err",
                "threshold", "result", "worst");
  out += line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-36s %12.3e %10.1e %6s  %s\n", r.name.c_str(),
                  r.max_relative_error, r.threshold, r.pass ? "pass" : "FAIL", r.worst.c_str());
    out += line;
  }
  return out;
}

}  // namespace ziqe
