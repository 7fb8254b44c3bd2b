#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "doctest.h"
#include "test_support.hpp"
#include "ziqe/nn/adam.hpp"
#include "ziqe/nn/attention.hpp"
#include "ziqe/nn/checkpoint.hpp"
#include "ziqe/nn/gradcheck.hpp"
#include "ziqe/nn/lstm.hpp"

using namespace ziqe;
using namespace ziqe::nn;

namespace {

Tensor<double> random_matrix(std::size_t r, std::size_t c, SplitMix64& rng) {
  Tensor<double> t = Tensor<double>::matrix(r, c);
  for (double& v : t.flat()) v = rng.uniform(-1.0, 1.0);
  return t;
}

void set_identity(ParamStore<double>& store, const std::string& dense, std::size_t d) {
  auto& w = store.at(dense + "/w").value;
  w.fill(0.0);
  for (std::size_t i = 0; i < d; ++i) w(i, i) = 1.0;
  store.at(dense + "/b").value.fill(0.0);
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("tensor shape checks") {
  CHECK_THROWS_AS(Tensor<float>({2, 3}, std::vector<float>(5)), ShapeError);
  auto a = Tensor<double>::matrix(2, 3, 1.0);
  auto b = Tensor<double>::matrix(2, 3, 1.0);
  CHECK_THROWS_AS(matmul(a, b), ShapeError);
  const auto c = matmul(a, transpose(b));
  CHECK(c.rows() == 2);
  CHECK(c(1, 1) == 3.0);
}

TEST_CASE("param store") {
  ParamStore<float> s;
  s.add("x", Tensor<float>({3}));
  CHECK_THROWS_AS(s.add("x", Tensor<float>({3})), std::invalid_argument);
  CHECK_THROWS_AS(s.at("y"), std::out_of_range);
  CHECK(s.grad("x").shape() == s.value("x").shape());
}

TEST_CASE("dense with zero weights gives zero output") {
  SplitMix64 rng(1);
  ParamStore<double> store;
  Dense<double> d(store, "d", 3, 2, rng);
  store.at("d/w").value.fill(0.0);
  const auto y = d.forward(store, random_matrix(4, 3, rng));
  for (double v : y.flat()) CHECK(v == 0.0);
  CHECK_THROWS_AS(d.forward(store, random_matrix(4, 2, rng)), ShapeError);
}

TEST_CASE("layer norm of a constant row is zero before the affine part") {
  ParamStore<double> store;
  LayerNorm<double> ln(store, "ln", 5);
  const auto y = ln.forward(store, Tensor<double>::matrix(2, 5, 3.5), nullptr);
  for (double v : y.flat()) CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("positional encoding first row") {
  const auto pe = positional_encoding<double>(1, 4);
  CHECK(pe(0, 0) == 0.0);
  CHECK(pe(0, 1) == 1.0);
  CHECK(pe(0, 2) == 0.0);
  CHECK(pe(0, 3) == 1.0);
}

TEST_CASE("embedding rejects out-of-range ids") {
  SplitMix64 rng(2);
  ParamStore<float> store;
  Embedding<float> e(store, "e", 5, 3, rng);
  const std::vector<TokenId> bad{1, 5};
  CHECK_THROWS_AS(e.forward(store, bad), std::out_of_range);
}

TEST_CASE("attention over a single position returns the value projection") {
  SplitMix64 rng(3);
  ParamStore<double> store;
  MultiHeadAttention<double> att(store, "a", 4, 2, rng);
  const auto x = random_matrix(1, 4, rng);
  for (MaskMode mode : {MaskMode::Full, MaskMode::Causal}) {
    const auto y = att.forward(store, x, x, x, mode);
    // softmax over one logit is 1: output = (x Wv + bv) Wo + bo
    auto vx = matmul(x, store.value("a/v/w"));
    for (std::size_t j = 0; j < 4; ++j) vx(0, j) += store.value("a/v/b")[j];
    auto expect = matmul(vx, store.value("a/o/w"));
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(std::abs(y(0, j) - expect(0, j) - store.value("a/o/b")[j]) < 1e-12);
    }
  }
}

TEST_CASE("attention weights by hand on a 2x2 case") {
  SplitMix64 rng(4);
  ParamStore<double> store;
  MultiHeadAttention<double> att(store, "a", 2, 1, rng);
  for (const char* n : {"a/q", "a/k", "a/v", "a/o"}) set_identity(store, n, 2);
  Tensor<double> x({2, 2}, std::vector<double>{1.0, 0.5, -0.3, 2.0});
  MultiHeadAttention<double>::Cache cache;
  const auto y = att.forward(store, x, x, x, MaskMode::Full, {}, &cache);
  const double s = 1.0 / std::sqrt(2.0);
  const double l00 = (1.0 * 1.0 + 0.5 * 0.5) * s, l01 = (1.0 * -0.3 + 0.5 * 2.0) * s;
  const double p00 = std::exp(l00) / (std::exp(l00) + std::exp(l01));
  CHECK(std::abs(cache.probs[0](0, 0) - p00) < 1e-14);
  CHECK(std::abs(y(0, 0) - (p00 * 1.0 + (1 - p00) * -0.3)) < 1e-14);
  CHECK(std::abs(y(0, 1) - (p00 * 0.5 + (1 - p00) * 2.0)) < 1e-14);
  // causal: row 0 sees only itself
  att.forward(store, x, x, x, MaskMode::Causal, {}, &cache);
  CHECK(cache.probs[0](0, 0) == 1.0);
  CHECK(cache.probs[0](0, 1) == 0.0);
}

TEST_CASE("causal outputs ignore future inputs; full outputs do not") {
  SplitMix64 rng(5);
  ParamStore<double> store;
  MultiHeadAttention<double> att(store, "a", 8, 2, rng);
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = random_matrix(6, 8, rng);
    auto x2 = x;
    const std::size_t t = rng.below(5);
    for (std::size_t r = t + 1; r < 6; ++r) {
      for (std::size_t c = 0; c < 8; ++c) x2(r, c) += rng.uniform(-3.0, 3.0);
    }
    const auto a = att.forward(store, x, x, x, MaskMode::Causal);
    const auto b = att.forward(store, x2, x2, x2, MaskMode::Causal);
    for (std::size_t r = 0; r <= t; ++r) {
      for (std::size_t c = 0; c < 8; ++c) CHECK(a(r, c) == b(r, c));
    }
    const auto fa = att.forward(store, x, x, x, MaskMode::Full);
    const auto fb = att.forward(store, x2, x2, x2, MaskMode::Full);
    for (std::size_t r = 0; r < 6; ++r) CHECK(fa(r, 0) != fb(r, 0));
  }
}

TEST_CASE("full attention rows sum to one") {
  SplitMix64 rng(6);
  ParamStore<double> store;
  MultiHeadAttention<double> att(store, "a", 8, 4, rng);
  MultiHeadAttention<double>::Cache cache;
  const auto q = random_matrix(3, 8, rng);
  const auto m = random_matrix(5, 8, rng);
  att.forward(store, q, m, m, MaskMode::Full, {}, &cache);
  for (const auto& p : cache.probs) {
    for (std::size_t r = 0; r < p.rows(); ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < p.cols(); ++c) s += p(r, c);
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("attention shape errors") {
  SplitMix64 rng(7);
  ParamStore<double> store;
  CHECK_THROWS_AS(MultiHeadAttention<double>(store, "bad", 6, 4, rng), ShapeError);
  MultiHeadAttention<double> att(store, "a", 8, 2, rng);
  const auto q = random_matrix(3, 8, rng);
  const auto m = random_matrix(5, 8, rng);
  CHECK_THROWS_AS(att.forward(store, q, m, m, MaskMode::Causal), ShapeError);
  CHECK_THROWS_AS(att.forward(store, q, random_matrix(5, 4, rng), m, MaskMode::Full), ShapeError);
}

TEST_CASE("padded keys receive no attention") {
  SplitMix64 rng(8);
  ParamStore<double> store;
  MultiHeadAttention<double> att(store, "a", 4, 1, rng);
  MultiHeadAttention<double>::Cache cache;
  const auto x = random_matrix(3, 4, rng);
  const std::vector<std::uint8_t> valid{1, 0, 1};
  att.forward(store, x, x, x, MaskMode::Full, valid, &cache);
  for (std::size_t r = 0; r < 3; ++r) CHECK(cache.probs[0](r, 1) == 0.0);
}

TEST_CASE("lstm matches an unrolled recurrence") {
  SplitMix64 rng(9);
  ParamStore<double> store;
  Lstm<double> lstm(store, "l", 2, 1, rng);
  // gates (i, f, g, o), one hidden unit
  const double wx[2][4] = {{0.1, -0.2, 0.3, 0.05}, {0.2, 0.1, -0.1, 0.4}};
  const double wh[4] = {0.5, -0.3, 0.2, 0.1};
  const double b[4] = {0.0, 1.0, 0.1, -0.1};
  for (int r = 0; r < 2; ++r) {
    for (int j = 0; j < 4; ++j) store.at("l/w_x").value(r, j) = wx[r][j];
  }
  for (int j = 0; j < 4; ++j) {
    store.at("l/w_h").value(0, j) = wh[j];
    store.at("l/b").value[j] = b[j];
  }
  const double xs[3][2] = {{1.0, -1.0}, {0.5, 2.0}, {-0.7, 0.3}};
  double h = 0.0, c = 0.0;
  for (const auto& x : xs) {
    double z[4];
    for (int j = 0; j < 4; ++j) z[j] = x[0] * wx[0][j] + x[1] * wx[1][j] + h * wh[j] + b[j];
    c = sigmoid(z[1]) * c + sigmoid(z[0]) * std::tanh(z[2]);
    h = sigmoid(z[3]) * std::tanh(c);
  }
  Tensor<double> x({3, 2}, std::vector<double>{1.0, -1.0, 0.5, 2.0, -0.7, 0.3});
  CHECK(std::abs(lstm.forward(store, x, false, nullptr)[0] - h) < 1e-15);
}

TEST_CASE("bilstm") {
  SplitMix64 rng(10);
  ParamStore<double> store;
  BiLstm<double> tied(store, "t", 3, 4, rng, true);
  const auto x = random_matrix(5, 3, rng);
  Tensor<double> rev = Tensor<double>::matrix(5, 3);
  for (std::size_t r = 0; r < 5; ++r) {
    for (std::size_t c = 0; c < 3; ++c) rev(r, c) = x(4 - r, c);
  }
  const auto a = bilstm_fuse(tied, store, x);
  const auto b = bilstm_fuse(tied, store, rev);
  CHECK(a.size() == 8);
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(a[k] == b[4 + k]);
    CHECK(a[4 + k] == b[k]);
  }
  const auto one = random_matrix(1, 3, rng);
  CHECK(bilstm_fuse(tied, store, one) == bilstm_fuse(tied, store, one));
  CHECK_THROWS_AS(bilstm_fuse(tied, store, Tensor<double>::matrix(0, 3)), ShapeError);
}

TEST_CASE("finite-difference checker on dense and softmax cross-entropy") {
  SplitMix64 rng(11);
  ParamStore<double> store;
  Dense<double> d(store, "d", 4, 3, rng);
  auto x = random_matrix(5, 4, rng);
  const auto w = random_matrix(5, 3, rng);
  auto loss = [&] {
    const auto y = d.forward(store, x);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
    return s;
  };
  store.zero_grad();
  const auto dx = d.backward(store, x, w);
  CHECK(check_param_gradients(store, loss, 1e-5).max_relative_error < 1e-6);
  CHECK(finite_difference_check(loss, x.flat(), dx.flat(), 1e-5).max_relative_error < 1e-6);

  auto logits = random_matrix(3, 5, rng);
  const std::vector<std::size_t> rows{0, 1, 2};
  const std::vector<TokenId> targets{1, 4, 0};
  Tensor<double> dl(logits.shape());
  softmax_cross_entropy(logits, rows, targets, &dl);
  auto ce = [&] { return softmax_cross_entropy<double>(logits, rows, targets, nullptr); };
  CHECK(finite_difference_check(ce, logits.flat(), dl.flat(), 1e-5).max_relative_error < 1e-6);
  CHECK_THROWS_AS(finite_difference_check(ce, logits.flat(), dl.flat(), 1e-2),
                  std::invalid_argument);
}

TEST_CASE("single-precision attention gradient within 1e-3") {
  SplitMix64 rng(12);
  ParamStore<double> store64;
  MultiHeadAttention<double> att(store64, "a", 8, 2, rng);
  ParamStore<float> store32 = store64.cast<float>();
  const auto x64 = random_matrix(4, 8, rng);
  const auto x32 = x64.cast<float>();
  const auto w = random_matrix(4, 8, rng);
  MultiHeadAttention<float>::Cache cache;
  SplitMix64 rng2(12);
  ParamStore<float> scratch;
  MultiHeadAttention<float> att32(scratch, "a", 8, 2, rng2);
  att32.forward(store32, x32, x32, x32, MaskMode::Full, {}, &cache);
  store32.zero_grad();
  att32.backward(store32, cache, w.cast<float>());
  // compare float analytic gradients to double-precision finite differences
  auto loss = [&] {
    const auto y = att.forward(store64, x64, x64, x64, MaskMode::Full);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
    return s;
  };
  for (const auto& [name, p] : store32) {
    std::vector<double> analytic(p.grad.flat().begin(), p.grad.flat().end());
    auto r = finite_difference_check(loss, store64.at(name).value.flat(), analytic, 1e-5, 1e-2);
    CAPTURE(name);
    CHECK(r.max_relative_error < 1e-3);
  }
}

TEST_CASE("adam") {
  ParamStore<double> store;
  store.add("theta", Tensor<double>({1}, std::vector<double>{0.5}));
  Adam<double> opt(AdamConfig{0.1, 0.9, 0.999, 1e-8});
  opt.step(store);
  CHECK(store.value("theta")[0] == 0.5);

  store.grad("theta")[0] = 2.0;
  Adam<double> first(AdamConfig{0.1, 0.9, 0.999, 1e-8});
  first.step(store);
  // m = 0.2, v = 0.004; corrected m = 2, v = 4 -> step = 0.1 * 2 / (2 + 1e-8)
  CHECK(std::abs(store.value("theta")[0] - (0.5 - 0.1 * 2.0 / (2.0 + 1e-8))) < 1e-15);

  store.grad("theta")[0] = NAN;
  try {
    first.step(store);
    FAIL("expected an error");
  } catch (const std::domain_error& e) {
    CHECK(std::string(e.what()).find("theta") != std::string::npos);
  }
}

TEST_CASE("training is deterministic") {
  auto run = [] {
    SplitMix64 rng(13);
    ParamStore<float> store;
    Dense<float> d(store, "d", 3, 2, rng);
    Adam<float> opt;
    Tensor<float> x({4, 3});
    for (float& v : x.flat()) v = static_cast<float>(rng.uniform());
    for (int step = 0; step < 5; ++step) {
      store.zero_grad();
      d.backward(store, x, d.forward(store, x));
      opt.step(store);
    }
    return store.value("d/w");
  };
  CHECK(run() == run());
}

TEST_CASE("clip_grad_norm") {
  ParamStore<double> s;
  s.add("a", Tensor<double>({2}));
  s.grad("a")[0] = 3.0;
  s.grad("a")[1] = 4.0;
  CHECK(clip_grad_norm(s, 1.0) == doctest::Approx(5.0));
  CHECK(s.grad_norm() == doctest::Approx(1.0));
}

TEST_CASE("checkpoint round trip is bit exact") {
  SplitMix64 rng(14);
  ParamStore<float> store;
  Dense<float> d(store, "layer/d", 3, 4, rng);
  LayerNorm<float> ln(store, "layer/ln", 4);
  auto records = to_records(store, "m/");
  records.push_back(scalar_record("meta/x", 0.25));
  const auto dir = testing::temp_dir("ckpt");
  write_records(dir / "a.ckpt", records);
  const auto back = read_records(dir / "a.ckpt");
  REQUIRE(back.size() == records.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].name == records[i].name);
    CHECK(back[i].tensor.shape() == records[i].tensor.shape());
    CHECK(std::memcmp(back[i].tensor.data(), records[i].tensor.data(),
                      back[i].tensor.size() * sizeof(float)) == 0);
  }
  CHECK(find_scalar(back, "meta/x") == 0.25);
  const auto restored = from_records<float>(back, "m/");
  CHECK(restored.value("layer/d/w") == store.value("layer/d/w"));

  const auto bytes = encode_records(records);
  CHECK(std::memcmp(bytes.data(), "ZIQE", 4) == 0);
  CHECK(bytes[4] == 1);
}

TEST_CASE("truncated or corrupt checkpoints report the byte offset") {
  std::vector<NamedTensor> records{{"w", Tensor<float>({2, 3}, 1.5f)}};
  auto bytes = encode_records(records);
  auto cut = bytes;
  cut.resize(bytes.size() - 3);
  try {
    decode_records(cut);
    FAIL("expected an error");
  } catch (const FormatError& e) {
    CHECK(e.offset() > 8);
    CHECK(e.offset() < bytes.size());
    CHECK(std::string(e.what()).find(std::to_string(e.offset())) != std::string::npos);
  }
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_records(bad), FormatError);
}
