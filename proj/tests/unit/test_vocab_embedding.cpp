// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "detrack/vocab_embedding.hpp"
#include "test_support.hpp"

using namespace detrack;
using Catch::Approx;

TEST_CASE("quantize hits the boundaries", "[vocab]") {
  CHECK(quantize(0.0, 800) == 0);
  CHECK(quantize(1.0, 800) == 799);
  CHECK(quantize(-3.0, 800) == 0);
  CHECK(quantize(7.5, 800) == 799);
}

TEST_CASE("quantize rounds halves up", "[vocab]") {
  CHECK(quantize(0.5, 800) == 400);  // 399.5
  CHECK(quantize(0.5, 3) == 1);
}

TEST_CASE("dequantize inverts the grid", "[vocab]") {
  CHECK(dequantize(0, 800) == 0.0);
  CHECK(dequantize(799, 800) == 1.0);
  CHECK_THROWS_AS(dequantize(800, 800), std::out_of_range);
  CHECK_THROWS_AS(dequantize(-1, 800), std::out_of_range);
}

TEST_CASE("quantize round-trip error is within half a bin", "[vocab][property]") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-0.5, 1.5);
  for (std::int64_t bins : {2, 10, 100, 800}) {
    double last_x = -1.0;
    std::int64_t last_q = 0;
    for (int i = 0; i < 2000; ++i) {
      const double x = u(rng);
      const double clamped = std::clamp(x, 0.0, 1.0);
      CHECK(std::abs(dequantize(quantize(x, bins), bins) - clamped) <= 0.5 / double(bins - 1) + 1e-12);
      (void)last_x;
      (void)last_q;
    }
    // monotone
    std::int64_t prev = 0;
    for (double x = -0.1; x <= 1.1; x += 0.001) {
      const auto q = quantize(x, bins);
      CHECK(q >= prev);
      prev = q;
    }
  }
}

TEST_CASE("embed returns table rows", "[vocab]") {
  torch::manual_seed(0);
  Vocabulary vocab(VocabConfig{8, 8, true});
  {
    torch::NoGradGuard g;
    vocab->table.copy_(torch::eye(8));
  }
  auto e = vocab->embed(torch::tensor({3, 3, 0, 7}, torch::kLong));
  CHECK(e.sizes() == torch::IntArrayRef({4, 8}));
  CHECK(torch::equal(e[0], torch::eye(8)[3]));
  CHECK(torch::equal(e[0], e[1]));
  CHECK(torch::equal(e[3], torch::eye(8)[7]));
}

TEST_CASE("embed rejects invalid tokens", "[vocab]") {
  Vocabulary vocab(VocabConfig{10, 4, true});
  CHECK_THROWS(vocab->embed(torch::tensor({0, 1, 2, 10}, torch::kLong)));
  CHECK_THROWS(vocab->embed(torch::tensor({0, -1, 2, 3}, torch::kLong)));
}

TEST_CASE("embed gradient matches finite differences", "[vocab][gradcheck]") {
  torch::manual_seed(1);
  Vocabulary vocab(VocabConfig{10, 6, true});
  vocab->to(torch::kDouble);
  auto tokens = torch::tensor({2, 5, 5, 9}, torch::kLong);
  auto target = torch::randn({4, 6}, torch::kDouble);
  auto loss = [&] { return (vocab->embed(tokens) - target).pow(2).sum() + vocab->embed(tokens).sin().sum(); };
  CHECK(testing::gradient_error(vocab->table, loss, 60) < 1e-4);
}

TEST_CASE("readout finds the matching row", "[vocab]") {
  torch::manual_seed(2);
  Vocabulary vocab(VocabConfig{50, 64, true});
  torch::NoGradGuard g;
  auto latent = vocab->table.index({torch::tensor({4, 17, 33, 49})}) * 100.0;
  auto logits = vocab->readout(latent);
  auto d = decode_box(CoordLogits::from_logits(logits));
  CHECK(d.tokens == BoxTokens{4, 17, 33, 49});
}

TEST_CASE("zero latent reads out uniform", "[vocab]") {
  Vocabulary vocab(VocabConfig{20, 16, true});
  torch::NoGradGuard g;
  auto c = CoordLogits::from_logits(vocab->readout(torch::zeros({4, 16})));
  CHECK(torch::allclose(c.probs, torch::full({4, 20}, 1.0 / 20)));
  CHECK(decode_box(c).confidence == Approx(1.0 / 20));
}

TEST_CASE("readout argmax is scale invariant", "[vocab][property]") {
  torch::manual_seed(3);
  Vocabulary vocab(VocabConfig{30, 16, true});
  torch::NoGradGuard g;
  for (int i = 0; i < 20; ++i) {
    auto latent = torch::randn({4, 16});
    auto a = vocab->readout(latent).argmax(-1);
    for (double c : {0.01, 3.0, 250.0}) CHECK(torch::equal(a, vocab->readout(latent * c).argmax(-1)));
  }
}

TEST_CASE("readout of embeddings recovers the tokens", "[vocab][property]") {
  torch::manual_seed(4);
  // 100 random rows in 512 dimensions are nearly orthogonal
  Vocabulary vocab(VocabConfig{100, 512, true});
  torch::NoGradGuard g;
  std::mt19937_64 rng(4);
  for (int i = 0; i < 50; ++i) {
    std::vector<std::int64_t> t(4);
    for (auto& x : t) x = std::int64_t(rng() % 100);
    auto logits = vocab->readout(vocab->embed(torch::tensor(t, torch::kLong)));
    CHECK(decode_box(CoordLogits::from_logits(logits)).tokens == BoxTokens{t[0], t[1], t[2], t[3]});
  }
}

TEST_CASE("untied vocabulary keeps a separate output table", "[vocab]") {
  Vocabulary tied(VocabConfig{10, 4, true});
  Vocabulary untied(VocabConfig{10, 4, false});
  CHECK(tied->parameters().size() == 1);
  CHECK(untied->parameters().size() == 2);
}

TEST_CASE("decode of one-hot rows", "[vocab]") {
  const std::int64_t B = 16;
  auto logits = torch::full({4, B}, -1e4);
  logits.index_put_({0, 0}, 0.0);
  logits.index_put_({1, 0}, 0.0);
  logits.index_put_({2, B - 1}, 0.0);
  logits.index_put_({3, B - 1}, 0.0);
  auto d = decode_box(CoordLogits::from_logits(logits));
  CHECK(d.box == BoundingBox{0, 0, 1, 1});
  CHECK(d.confidence == Approx(1.0));
}

TEST_CASE("decode breaks ties toward the lowest bin", "[vocab]") {
  auto logits = torch::zeros({4, 5});
  logits.index_put_({0, 1}, 2.0);
  logits.index_put_({0, 3}, 2.0);
  auto d = decode_box(CoordLogits::from_logits(logits));
  CHECK(d.tokens[0] == 1);
  CHECK(d.tokens[1] == 0);
}

TEST_CASE("decode canonicalizes swapped corners", "[vocab]") {
  auto logits = torch::zeros({4, 11});
  logits.index_put_({0, 8}, 5.0);
  logits.index_put_({1, 1}, 5.0);
  logits.index_put_({2, 2}, 5.0);
  logits.index_put_({3, 9}, 5.0);
  auto d = decode_box(CoordLogits::from_logits(logits));
  CHECK(d.box.x1 == Approx(0.2));
  CHECK(d.box.x2 == Approx(0.8));
}

TEST_CASE("decode agrees with a brute-force scan", "[vocab][property]") {
  torch::manual_seed(5);
  for (int i = 0; i < 100; ++i) {
    auto logits = torch::randn({4, 37}, torch::kDouble) * 3.0;
    auto c = CoordLogits::from_logits(logits);
    CHECK(torch::allclose(c.probs.sum(-1), torch::ones({4}, torch::kDouble), 0, 1e-6));
    CHECK((c.probs >= 0).all().item<bool>());
    auto d = decode_box(c);
    double conf = 0.0;
    for (int r = 0; r < 4; ++r) {
      std::int64_t best = 0;
      for (std::int64_t b = 1; b < 37; ++b)
        if (logits[r][b].item<double>() > logits[r][best].item<double>()) best = b;
      CHECK(d.tokens[r] == best);
      conf += c.probs[r][best].item<double>();
    }
    CHECK(d.confidence == Approx(conf / 4));
  }
}

TEST_CASE("batched decode matches single decode", "[vocab]") {
  torch::manual_seed(6);
  auto logits = torch::randn({3, 4, 12});
  auto all = decode_boxes(logits);
  REQUIRE(all.size() == 3);
  for (int i = 0; i < 3; ++i) CHECK(all[i].tokens == decode_box(CoordLogits::from_logits(logits[i])).tokens);
}
