#include <cmath>

#include "cadtext/encoder.hpp"
#include "cadtext/errors.hpp"
#include "cadtext/training.hpp"
#include "doctest.h"
#include "gradcheck.hpp"

using namespace cadtext;
using cadtext::testing::make_sequence;
using cadtext::testing::tiny_batch;
using cadtext::testing::tiny_encoder;

namespace {

EncoderConfig small_config() {
  EncoderConfig c;
  c.vocab_size = 40;
  c.d_model = 16;
  c.n_layers = 2;
  c.n_heads = 4;
  c.d_ff = 32;
  c.max_len = 16;
  c.dropout_p = 0.1;
  c.output_attention_heads = 4;
  c.seed = 5;
  return c;
}

TokenSequence random_sequence(Rng& rng, const EncoderConfig& c) {
  std::vector<std::int32_t> body(1 + rng.below(c.max_len - 3));
  for (auto& t : body) t = static_cast<std::int32_t>(special::kCount + rng.below(c.vocab_size - special::kCount));
  return make_sequence(body, rng.below(body.size() + 1), c.max_len);
}

}  // namespace

TEST_CASE("initialization") {
  auto c = small_config();
  auto a = init_parameters<float>(c);
  auto b = init_parameters<float>(c);
  bool same = true;
  for_each_tensor<float>(a, c, [&](const std::string&, const Matrix<float>&, bool) {});
  std::vector<const Matrix<float>*> ta, tb;
  for_each_tensor<float>(a, c, [&](const std::string&, const Matrix<float>& m, bool) { ta.push_back(&m); });
  for_each_tensor<float>(b, c, [&](const std::string&, const Matrix<float>& m, bool) { tb.push_back(&m); });
  for (std::size_t i = 0; i < ta.size(); ++i) same = same && (*ta[i] == *tb[i]);
  CHECK(same);

  for (const auto& l : a.layers) {
    for (float g : l.ln1_gamma.values()) CHECK(g == 1.0f);
    for (float g : l.ln2_gamma.values()) CHECK(g == 1.0f);
    for (float g : l.ln1_beta.values()) CHECK(g == 0.0f);
    for (float g : l.ff_b1.values()) CHECK(g == 0.0f);
  }
  c.seed = 6;
  CHECK_FALSE(init_parameters<float>(c).token_embedding == a.token_embedding);

  const float bound = 1.0f / std::sqrt(16.0f);
  for (float w : a.layers[0].attn.wq.values()) CHECK(std::abs(w) <= bound);
}

TEST_CASE("parameter count matches the shape arithmetic") {
  EncoderConfig c;
  c.vocab_size = 100;
  c.d_model = 32;
  c.n_layers = 2;
  c.n_heads = 4;
  c.d_ff = 64;
  const std::size_t d = 32, ff = 64;
  const std::size_t embeddings = 100 * d + 2 * d;
  const std::size_t attention = 4 * (d * d + d);
  const std::size_t layer = attention + 2 * 2 * d + (d * ff + ff) + (ff * d + d);
  CHECK(init_parameters<double>(c).parameter_count() == embeddings + 2 * layer);
  c.output_attention_heads = 4;
  CHECK(init_parameters<double>(c).parameter_count() == embeddings + 2 * layer + attention);
}

TEST_CASE("config validation") {
  auto c = small_config();
  c.n_heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  c.dropout_p = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  c.frozen_layers = 4;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.frozen_layers = 3;
  CHECK_NOTHROW(c.validate());
  CHECK(EncoderConfig::from_json(small_config().to_json()) == small_config());
}

TEST_CASE("attention examples") {
  SUBCASE("equal scores give uniform rows") {
    Matrix<double> q(2, 4, 1.0), k(4, 4, 1.0), v(4, 3);
    for (std::size_t i = 0; i < v.size(); ++i) v.values()[i] = static_cast<double>(i);
    std::vector<std::uint8_t> mask(4, 1);
    auto r = attention(q, k, v, mask);
    for (double p : r.probabilities.values()) CHECK(p == doctest::Approx(0.25));
  }
  SUBCASE("a single unmasked key returns its value row") {
    Rng rng(1);
    Matrix<double> q(3, 4), k(5, 4), v(5, 2);
    for (auto* m : {&q, &k, &v})
      for (auto& x : m->values()) x = rng.uniform(-2, 2);
    std::vector<std::uint8_t> mask = {0, 0, 1, 0, 0};
    auto r = attention(q, k, v, mask);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 2; ++j) CHECK(r.output(i, j) == doctest::Approx(v(2, j)).epsilon(1e-12));
  }
  SUBCASE("random 3x3 matches a scalar reference") {
    Rng rng(2);
    Matrix<double> q(3, 3), k(3, 3), v(3, 3);
    for (auto* m : {&q, &k, &v})
      for (auto& x : m->values()) x = rng.uniform(-1, 1);
    std::vector<std::uint8_t> mask(3, 1);
    auto r = attention(q, k, v, mask);
    for (std::size_t i = 0; i < 3; ++i) {
      double s[3], mx = -1e300, z = 0;
      for (std::size_t j = 0; j < 3; ++j) {
        s[j] = 0;
        for (std::size_t t = 0; t < 3; ++t) s[j] += q(i, t) * k(j, t);
        s[j] /= std::sqrt(3.0);
        mx = std::max(mx, s[j]);
      }
      for (double& x : s) z += (x = std::exp(x - mx));
      for (std::size_t c = 0; c < 3; ++c) {
        double o = 0;
        for (std::size_t j = 0; j < 3; ++j) o += s[j] / z * v(j, c);
        CHECK(std::abs(r.output(i, c) - o) < 1e-6);
      }
    }
  }
}

TEST_CASE("positional encoding") {
  auto pe = positional_encoding<double>(4, 6);
  CHECK(pe(0, 0) == 0.0);
  CHECK(pe(0, 1) == 1.0);
  CHECK(pe(1, 0) == doctest::Approx(std::sin(1.0)));
  CHECK(pe(1, 2) == doctest::Approx(std::sin(1.0 / std::pow(10000.0, 2.0 / 6))));
}

TEST_CASE("forward determinism and dropout") {
  auto c = small_config();
  auto p = init_parameters<float>(c);
  Rng rng(3);
  const auto seq = random_sequence(rng, c);
  auto a = forward(seq, p, c, Mode::Eval, nullptr);
  auto b = forward(seq, p, c, Mode::Eval, nullptr);
  CHECK(a.cls_state == b.cls_state);
  CHECK(a.cls_state.size() == c.d_model);
  for (std::size_t r = seq.true_length; r < c.max_len; ++r)
    for (float x : a.sequence_states.row(r)) CHECK(x == 0.0f);

  auto c0 = c;
  c0.dropout_p = 0;
  Rng drop(1);
  CHECK(forward(seq, p, c0, Mode::Train, &drop).cls_state == forward(seq, p, c0, Mode::Eval, nullptr).cls_state);

  Rng d1(9), d2(9);
  auto t1 = forward(seq, p, c, Mode::Train, &d1);
  auto t2 = forward(seq, p, c, Mode::Train, &d2);
  CHECK(t1.cls_state == t2.cls_state);
  CHECK(t1.cls_state != a.cls_state);
  CHECK_THROWS(forward(seq, p, c, Mode::Train, nullptr));
}

TEST_CASE("padding content does not reach the CLS state") {
  auto c = small_config();
  auto p = init_parameters<double>(c);
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    auto seq = random_sequence(rng, c);
    auto noisy = seq;
    for (std::size_t i = seq.true_length; i < c.max_len; ++i) {
      noisy.ids[i] = static_cast<std::int32_t>(special::kCount + rng.below(10));
      noisy.segment_ids[i] = 1;
    }
    auto a = forward(seq, p, c, Mode::Eval, nullptr);
    auto b = forward(noisy, p, c, Mode::Eval, nullptr);
    for (std::size_t j = 0; j < c.d_model; ++j) CHECK(std::abs(a.cls_state[j] - b.cls_state[j]) < 1e-6);
  }
}

TEST_CASE("bad inputs") {
  auto c = small_config();
  auto p = init_parameters<float>(c);
  auto seq = make_sequence({7, 8}, 1, c.max_len);
  seq.ids[1] = 1000;
  CHECK_THROWS_AS(forward(seq, p, c, Mode::Eval, nullptr), DataError);

  ForwardCache<float> empty;
  auto grads = zeros_like(p);
  std::vector<float> d_cls(c.d_model, 1.0f);
  CHECK_THROWS_AS(backward<float>(empty, p, c, d_cls, nullptr, grads), std::logic_error);
}

TEST_CASE("forward stays finite over random inputs") {
  auto c = small_config();
  c.n_layers = 1;
  c.d_model = 8;
  c.n_heads = 2;
  c.output_attention_heads = 2;
  auto p = init_parameters<float>(c);
  Rng rng(10);
  std::size_t bad = 0;
  for (int i = 0; i < 10000; ++i) {
    auto out = forward(random_sequence(rng, c), p, c, Mode::Train, &rng);
    for (float x : out.cls_state) bad += !std::isfinite(x);
  }
  CHECK(bad == 0);
}

TEST_CASE("zero upstream gradient gives zero parameter gradients") {
  auto c = tiny_encoder(3);
  auto p = init_parameters<double>(c);
  ForwardCache<double> cache;
  auto seq = make_sequence({6, 7, 8, 9}, 2, c.max_len);
  forward(seq, p, c, Mode::Eval, nullptr, &cache);
  auto g = zeros_like(p);
  std::vector<double> d_cls(c.d_model, 0.0);
  backward<double>(cache, p, c, d_cls, nullptr, g);
  for_each_tensor<double>(g, c, [&](const std::string& name, const Matrix<double>& m, bool) {
    for (double x : m.values()) {
      CAPTURE(name);
      CHECK(x == 0.0);
    }
  });
}

TEST_CASE("frozen tensors receive no gradient") {
  HeadConfig head;
  auto enc = tiny_encoder(4);
  enc.frozen_layers = enc.n_layers + 1;  // everything except the heads
  auto model = init_model<double>(enc, head);
  auto batch = tiny_batch(Objective::Pair, enc, 5);
  auto grads = zeros_like(model);
  Rng rng(1);
  batch_loss<double>(model, Objective::Pair, batch, Mode::Train, &rng, &grads);
  double head_norm = 0;
  for_each_tensor<double>(grads, [&](const std::string& name, const Matrix<double>& m, bool trainable) {
    if (name.rfind("encoder.", 0) == 0) {
      CHECK_FALSE(trainable);
      for (double x : m.values()) CHECK(x == 0.0);
    } else if (name.rfind("head.pair", 0) == 0) {
      for (double x : m.values()) head_norm += x * x;
    }
  });
  CHECK(head_norm > 0);
}

TEST_CASE("gradients with frozen lower layers") {
  for (std::size_t frozen : {std::size_t{1}, std::size_t{2}}) {
    CAPTURE(frozen);
    auto r = cadtext::testing::gradient_check(Objective::Pair, 21, 4, 1e-4, 1e-3, frozen);
    INFO("worst " << r.worst_name << " err " << r.worst_error);
    CHECK(r.failed == 0);
    CHECK(r.checked > 20);
  }
}
