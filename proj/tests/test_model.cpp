// tests/test_model.cpp

#include <cmath>

#include "doctest.h"
#include "jt/losses.hpp"
#include "jt/model.hpp"
#include "oracles.hpp"

using namespace jt;

namespace {

std::vector<double> random_audio(int n, Rng& rng) {
  std::vector<double> a(static_cast<size_t>(n));
  for (auto& v : a) v = rng.normal();
  return a;
}

}  // namespace

TEST_CASE("frame counts follow composed conv length arithmetic") {
  CHECK(ModelConfig::paper_base().frame_count(16000) == 49);  // 1 s at 16 kHz
  CHECK(ModelConfig::toy().frame_count(20) == 4);

  // property: closed-form composition holds for random lengths
  ModelConfig toy = ModelConfig::toy();
  Rng rng(1);
  Model model(toy, rng);
  for (int trial = 0; trial < 10; ++trial) {
    int n = toy.receptive_field() + static_cast<int>(rng.uniform_int(200));
    Tensor z = model.encode(random_audio(n, rng));
    CHECK(z.dim(0) == toy.frame_count(n));
    CHECK(z.dim(1) == toy.ctx_hidden);
  }
}

TEST_CASE("paper preset constructs with the documented shape") {
  ModelConfig base = ModelConfig::paper_base();
  base.validate();
  CHECK(base.total_stride() == 320);       // 20 ms at 16 kHz
  CHECK(base.receptive_field() == 400);    // 25 ms at 16 kHz
}

TEST_CASE("encode rejects audio shorter than the receptive field") {
  Rng rng(2);
  Model model(ModelConfig::tiny(), rng);
  std::vector<double> tooshort(static_cast<size_t>(model.config().receptive_field() - 1), 0.1);
  CHECK_THROWS_AS(model.encode(tooshort), Error);
}

TEST_CASE("apply_mask semantics") {
  Rng rng(3);
  Model model(ModelConfig::tiny(), rng);
  Tensor z = Tensor::randn({6, 8}, 1.0, rng);

  SUBCASE("empty index list is the identity") {
    MaskPlan plan;
    Tensor out = model.apply_mask(z, plan);
    CHECK(out.value() == z.value());
  }

  SUBCASE("all indices masked: every row equals the embedding") {
    MaskPlan plan;
    plan.indices = {0, 1, 2, 3, 4, 5};
    Tensor out = model.apply_mask(z, plan);
    const Tensor& emb = model.params().get("mask_emb");
    for (int r = 0; r < 6; ++r)
      CHECK(out.mat().row(r).transpose().isApprox(emb.value()));
  }

  SUBCASE("unmasked rows pass through bitwise; z is not mutated") {
    Vec z_before = z.value();
    MaskPlan plan;
    plan.indices = {1, 4};
    Tensor out = model.apply_mask(z, plan);
    for (int r : {0, 2, 3, 5})
      CHECK(out.mat().row(r) == CMapMat(z_before.data(), 6, 8).row(r));
    CHECK(z.value() == z_before);
  }

  SUBCASE("out-of-range index is a contract error") {
    MaskPlan plan;
    plan.indices = {6};
    CHECK_THROWS_AS(model.apply_mask(z, plan), Error);
  }
}

TEST_CASE("contextualize: eval mode is deterministic") {
  Rng rng(5);
  Model model(ModelConfig::toy(), rng);
  Tensor z = Tensor::randn({10, 64}, 1.0, rng);
  Rng ld1(1), do1(1), ld2(2), do2(2);
  Tensor a = model.contextualize(z, false, ld1, do1);
  Tensor b = model.contextualize(z, false, ld2, do2);
  CHECK(a.value() == b.value());
  CHECK(ld1.draw_count() == 0);  // eval consumes no layer-drop draws
}

TEST_CASE("layer_drop_p = 1 reduces g to the positional + final-norm path") {
  ModelConfig cfg = ModelConfig::toy();
  cfg.layer_drop_p = 1.0;
  cfg.dropout_p = 0.0;
  Rng rng(6);
  Model model(cfg, rng);
  Tensor z = Tensor::randn({8, 64}, 1.0, rng);
  Rng ld(1), dr(1);
  Tensor dropped = model.contextualize(z, true, ld, dr);
  CHECK(ld.draw_count() == static_cast<std::uint64_t>(cfg.ctx_layers));

  // reproduce the degenerate path by hand through the same params
  Tensor pos = conv1d(transpose(z), model.params().get("pos_conv.w"),
                      model.params().get("pos_conv.b"), 1, cfg.pos_conv_groups,
                      ConvPad::Symmetric);
  Tensor expect = layer_norm(add(z, transpose(gelu(pos))),
                             model.params().get("final_ln_g"),
                             model.params().get("final_ln_b"));
  CHECK(dropped.value().isApprox(expect.value()));
}

TEST_CASE("attention rows sum to 1 at every layer") {
  Rng rng(7);
  Model model(ModelConfig::toy(), rng);
  Tensor z = Tensor::randn({9, 64}, 1.0, rng);
  Rng ld(1), dr(1);
  std::vector<Tensor> attn;
  model.contextualize(z, false, ld, dr, &attn);
  CHECK(attn.size() ==
        static_cast<size_t>(model.config().ctx_layers * model.config().ctx_heads));
  for (const Tensor& w : attn)
    for (int r = 0; r < w.dim(0); ++r)
      CHECK(w.mat().row(r).sum() == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("classify rows are normalized log-probabilities") {
  Rng rng(8);
  Model model(ModelConfig::tiny(), rng);
  Tensor zt = Tensor::randn({7, 8}, 1.0, rng);
  Tensor lp = model.classify(zt);
  CHECK(lp.dim(1) == model.config().vocab_size);
  for (int r = 0; r < lp.dim(0); ++r) {
    double lse = std::log(lp.mat().row(r).array().exp().sum());
    CHECK(std::fabs(lse) < 1e-9);
  }
}

TEST_CASE("zero classifier weights give uniform rows") {
  Rng rng(9);
  Model model(ModelConfig::tiny(), rng);
  model.params().get("cls.w").value().setZero();
  model.params().get("cls.b").value().setZero();
  Tensor lp = model.classify(Tensor::randn({3, 8}, 1.0, rng));
  const double uniform = std::log(1.0 / model.config().vocab_size);
  for (long i = 0; i < lp.numel(); ++i)
    CHECK(lp.value()[i] == doctest::Approx(uniform).epsilon(1e-12));
}

TEST_CASE("classifier weight gradient vs finite differences") {
  Rng rng(10);
  Model model(ModelConfig::tiny(), rng);
  Tensor zt = Tensor::randn({4, 8}, 1.0, rng);
  Tensor& w = model.params().get("cls.w");
  CtcTarget target{{0, 2}, "u"};
  auto fwd = [&] { return ctc_loss(model.classify(zt), target, 4); };
  backward(fwd());
  std::vector<double> g(w.grad().data(), w.grad().data() + w.numel());
  CHECK(oracle::grad_check(w, [&] { return fwd().scalar(); }, g) < 1e-5);
}

TEST_CASE("positional conv breaks permutation equivariance") {
  ModelConfig cfg = ModelConfig::tiny();
  Rng rng(11);
  Model model(cfg, rng);
  Tensor z = Tensor::randn({6, 8}, 1.0, rng);
  // reverse the frame order
  std::vector<int> rev = {5, 4, 3, 2, 1, 0};
  Tensor zrev = select_rows(z, rev);
  Rng ld(1), dr(1), ld2(1), dr2(1);
  Tensor out = model.contextualize(z, false, ld, dr);
  Tensor out_rev = model.contextualize(zrev, false, ld2, dr2);
  Tensor out_rev_undone = select_rows(out_rev, rev);
  CHECK(!out.value().isApprox(out_rev_undone.value(), 1e-6));
}

TEST_CASE("mask embedding receives gradient from the unsupervised loss") {
  Rng rng(12);
  ModelConfig cfg = ModelConfig::tiny();
  Model model(cfg, rng);
  std::vector<double> audio = random_audio(40, rng);
  Tensor z = model.encode(audio);
  Rng mask_rng(3);
  MaskPlan plan = model.sample_mask_plan(z.dim(0), mask_rng);
  REQUIRE(!plan.empty());
  Tensor zhat = model.apply_mask(z, plan);
  Rng ld(1), dr(1), neg(2);
  Tensor zt = model.contextualize(zhat, true, ld, dr);
  ContrastiveConfig ccfg;
  ccfg.num_negatives = 2;
  backward(contrastive_loss(z, zt, plan, ccfg, neg));
  const Tensor& emb = model.params().get("mask_emb");
  REQUIRE(emb.has_grad());
  CHECK(emb.grad().norm() > 0.0);
}

TEST_CASE("tiny model stays under 5k parameters for gradient suites") {
  Rng rng(13);
  Model model(ModelConfig::tiny(), rng);
  CHECK(model.params().total_scalars() < 5000);
}

TEST_CASE("end-to-end loss gradients match finite differences on tiny model") {
  Rng rng(14);
  ModelConfig cfg = ModelConfig::tiny();
  cfg.layer_drop_p = 0.0;
  cfg.dropout_p = 0.0;
  Model model(cfg, rng);
  std::vector<double> audio = random_audio(32, rng);  // 8 frames

  Rng mask_rng(5);
  MaskPlan plan = model.sample_mask_plan(cfg.frame_count(32), mask_rng);
  ContrastiveConfig ccfg;
  ccfg.num_negatives = 2;

  auto unsup = [&] {
    Tensor z = model.encode(audio);
    Tensor zt;
    {
      Rng ld(1), dr(1);
      zt = model.contextualize(model.apply_mask(z, plan), false, ld, dr);
    }
    Rng neg(9);
    return contrastive_loss(z, zt, plan, ccfg, neg);
  };
  CtcTarget target{{1, 0, 2}, "u"};
  auto sup = [&] {
    Rng ld(1), dr(1);
    Tensor zt = model.contextualize(model.encode(audio), false, ld, dr);
    return ctc_loss(model.classify(zt), target, 4);
  };

  // check a representative subset of parameters end to end
  for (const char* name : {"enc.conv0.w", "enc.conv1.w", "mask_emb",
                           "pos_conv.w", "ctx0.attn_q.w", "ctx0.ff1.w",
                           "final_ln_g"}) {
    INFO("unsupervised loss wrt " << name);
    Tensor& p = model.params().get(name);
    model.params().zero_grad();
    backward(unsup());
    std::vector<double> g(p.grad().data(), p.grad().data() + p.numel());
    CHECK(oracle::grad_check(p, [&] { return unsup().scalar(); }, g) < 1e-3);
  }
  for (const char* name : {"enc.conv0.w", "pos_conv.w", "ctx0.attn_v.w",
                           "ctx0.ff2.w", "cls.w", "cls.b"}) {
    INFO("supervised loss wrt " << name);
    Tensor& p = model.params().get(name);
    model.params().zero_grad();
    backward(sup());
    std::vector<double> g(p.grad().data(), p.grad().data() + p.numel());
    CHECK(oracle::grad_check(p, [&] { return sup().scalar(); }, g) < 1e-3);
  }
}
