// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include "detrack/denoising_vit.hpp"
#include "test_support.hpp"

using namespace detrack;

namespace {

VitConfig toy_config(std::int64_t depth = 2) {
  VitConfig c;
  c.depth = depth;
  c.dim = 32;
  c.heads = 4;
  c.patch = 16;
  c.template_size = 32;
  c.search_size = 64;
  return c;
}

DenoisingVit make_vit(const VitConfig& c, std::uint64_t seed = 0) {
  torch::manual_seed(seed);
  return DenoisingVit(c, Vocabulary(VocabConfig{50, c.dim, true}));
}

}  // namespace

TEST_CASE("image attention with zeroed projections is the identity", "[vit]") {
  torch::manual_seed(1);
  ImageAttentionBlock block(32, 4, 128);
  block->zero_output_projections();
  auto z = torch::zeros({1, 8, 32}), s = torch::zeros({1, 16, 32});
  auto [z2, s2] = block->forward(z, s);
  CHECK(torch::equal(z2, z));
  CHECK(torch::equal(s2, s));
  auto zr = torch::randn({2, 8, 32}), sr = torch::randn({2, 16, 32});
  auto [z3, s3] = block->forward(zr, sr);
  CHECK(torch::equal(z3, zr));
  CHECK(torch::equal(s3, sr));
}

TEST_CASE("attention rows sum to one", "[vit]") {
  torch::manual_seed(2);
  ImageAttentionBlock block(32, 4, 128);
  torch::Tensor w;
  block->forward(torch::randn({2, 8, 32}), torch::randn({2, 16, 32}), &w);
  CHECK(w.sizes() == torch::IntArrayRef({2, 4, 24, 24}));
  CHECK((w.sum(-1) - 1).abs().max().item<double>() < 1e-6);
}

TEST_CASE("image attention rejects width mismatch", "[vit]") {
  ImageAttentionBlock block(32, 4, 128);
  CHECK_THROWS(block->forward(torch::randn({1, 8, 16}), torch::randn({1, 16, 32})));
}

TEST_CASE("template token permutation is equivariant", "[vit][property]") {
  auto c = toy_config(2);
  c.template_pos = false;
  auto vit = make_vit(c);
  torch::NoGradGuard g;
  auto z = torch::randn({1, 8, 32}), s = torch::randn({1, 16, 32}), box = torch::randn({1, 4, 32});
  auto perm = torch::randperm(8);
  auto a = vit->forward_tokens(z, s, box);
  auto b = vit->forward_tokens(z.index_select(1, perm), s, box);
  CHECK(torch::allclose(a.z.index_select(1, perm), b.z, 1e-5, 1e-5));
  CHECK(torch::allclose(a.s, b.s, 1e-5, 1e-5));
  CHECK(torch::allclose(a.trace.states.back(), b.trace.states.back(), 1e-5, 1e-5));
}

TEST_CASE("zero noise head passes the refined latent through", "[vit]") {
  torch::manual_seed(3);
  DenoisingBlock block(32, 4, 128, DenoiseBlockMode::kFull, true);
  block->zero_noise_pred();
  auto step = block->forward(torch::randn({1, 16, 32}), torch::randn({1, 4, 32}));
  CHECK(torch::equal(step.eps, torch::zeros_like(step.eps)));
  CHECK(torch::equal(step.next, step.refined));
}

TEST_CASE("every block output equals refined minus eps", "[vit][property]") {
  auto vit = make_vit(toy_config(3));
  torch::NoGradGuard g;
  for (int i = 0; i < 20; ++i) {
    auto out = vit->forward(torch::randn({2, 1, 3, 32, 32}), torch::randn({2, 3, 64, 64}),
                            torch::randint(0, 50, {2, 4}, torch::kLong));
    const auto& tr = out.trace;
    REQUIRE(tr.states.size() == 4);
    torch::Tensor sum_eps = torch::zeros_like(tr.eps[0]), sum_gap = torch::zeros_like(tr.eps[0]);
    for (std::size_t j = 0; j < tr.eps.size(); ++j) {
      CHECK((tr.refined[j] - tr.eps[j] - tr.states[j + 1]).abs().max().item<double>() <= 1e-6);
      sum_eps += tr.eps[j];
      sum_gap += tr.refined[j] - tr.states[j + 1];
    }
    CHECK(torch::allclose(sum_eps, sum_gap, 1e-5, 1e-5));
  }
}

TEST_CASE("zeroed residual branches reduce the chain to noise subtraction", "[vit]") {
  auto vit = make_vit(toy_config(4));
  vit->zero_residual_branches();
  torch::NoGradGuard g;
  auto out = vit->forward(torch::randn({1, 2, 3, 32, 32}), torch::randn({1, 3, 64, 64}),
                          torch::tensor({{3, 7, 20, 41}}, torch::kLong));
  auto expected = out.trace.states.front().clone();
  for (const auto& e : out.trace.eps) expected -= e;
  CHECK((out.trace.states.back() - expected).abs().max().item<double>() < 1e-5);
}

TEST_CASE("total mode has a single noise head", "[vit]") {
  auto c = toy_config(3);
  c.noise_pred_mode = NoisePredMode::kTotal;
  auto vit = make_vit(c);
  int heads = 0;
  for (auto& m : *vit->denoise_blocks) heads += m->as<DenoisingBlockImpl>()->has_noise_pred();
  CHECK(heads == 1);
  CHECK(vit->denoise_blocks[2]->as<DenoisingBlockImpl>()->has_noise_pred());
  torch::NoGradGuard g;
  auto out = vit->forward(torch::randn({1, 1, 3, 32, 32}), torch::randn({1, 3, 64, 64}),
                          torch::tensor({{1, 2, 3, 4}}, torch::kLong));
  CHECK(torch::equal(out.trace.eps[0], torch::zeros_like(out.trace.eps[0])));
  CHECK(out.trace.states.size() == 4);
}

TEST_CASE("shapes for two templates", "[vit]") {
  auto c = toy_config(2);
  c.dim = 128;
  auto vit = make_vit(c);
  torch::NoGradGuard g;
  auto out = vit->forward(torch::randn({1, 2, 3, 32, 32}), torch::randn({1, 3, 64, 64}),
                          torch::tensor({{1, 2, 3, 4}}, torch::kLong));
  CHECK(out.z.sizes() == torch::IntArrayRef({1, 8, 128}));
  CHECK(out.s.sizes() == torch::IntArrayRef({1, 16, 128}));
  REQUIRE(out.trace.states.size() == 3);
  for (const auto& st : out.trace.states) CHECK(st.sizes() == torch::IntArrayRef({1, 4, 128}));
}

TEST_CASE("configuration errors", "[vit]") {
  auto c = toy_config();
  c.depth = 0;
  CHECK_THROWS(make_vit(c));
  c = toy_config();
  c.patch = 12;
  CHECK_THROWS(make_vit(c));
  auto vit = make_vit(toy_config());
  torch::NoGradGuard g;
  CHECK_THROWS(vit->forward(torch::randn({1, 1, 3, 16, 16}), torch::randn({1, 3, 64, 64}),
                            torch::tensor({{1, 2, 3, 4}}, torch::kLong)));
  CHECK_THROWS(vit->forward(torch::randn({2, 1, 3, 32, 32}), torch::randn({1, 3, 64, 64}),
                            torch::tensor({{1, 2, 3, 4}}, torch::kLong)));
}

TEST_CASE("forward is deterministic and finite across seeds", "[vit][property]") {
  torch::NoGradGuard g;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto vit = make_vit(toy_config(2), seed);
    auto t = torch::randn({1, 1, 3, 32, 32}), s = torch::randn({1, 3, 64, 64});
    auto tok = torch::randint(0, 50, {1, 4}, torch::kLong);
    auto a = vit->forward(t, s, tok), b = vit->forward(t, s, tok);
    for (std::size_t j = 0; j < a.trace.states.size(); ++j) {
      CHECK(torch::equal(a.trace.states[j], b.trace.states[j]));
      CHECK(torch::isfinite(a.trace.states[j]).all().item<bool>());
    }
  }
}

TEST_CASE("final decode equals the last block's readout", "[vit]") {
  auto vit = make_vit(toy_config(2));
  torch::NoGradGuard g;
  auto out = vit->forward(torch::randn({1, 1, 3, 32, 32}), torch::randn({1, 3, 64, 64}),
                          torch::tensor({{5, 6, 30, 31}}, torch::kLong));
  auto direct = decode_boxes(vit->vocab()->readout(out.trace.states.back())).front();
  auto via = intermediate_decode(out.trace, 2, vit->vocab()).front();
  CHECK(direct.tokens == via.tokens);
  CHECK_THROWS(intermediate_decode(out.trace, 3, vit->vocab()));
}

TEST_CASE("noise head gradient matches finite differences", "[vit][gradcheck]") {
  auto vit = make_vit(toy_config(2));
  vit->to(torch::kFloat64);
  auto t = torch::randn({1, 1, 3, 32, 32}, torch::kFloat64);
  auto s = torch::randn({1, 3, 64, 64}, torch::kFloat64);
  auto tok = torch::tensor({{2, 9, 33, 40}}, torch::kLong);
  auto loss = [&] { return vit->forward(t, s, tok).trace.states.back().sum(); };
  auto* block = vit->denoise_blocks[0]->as<DenoisingBlockImpl>();
  CHECK(testing::gradient_error(block->noise_fc1->weight, loss, 20) < 1e-3);
  CHECK(testing::gradient_error(block->noise_fc2->weight, loss, 20) < 1e-3);
  CHECK(testing::gradient_error(vit->patch_embed->weight, loss, 20) < 1e-3);
}
