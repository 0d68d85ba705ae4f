#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "rnmt/checkpoint.hpp"
#include "rnmt/model.hpp"
#include "rnmt/training.hpp"

using namespace rnmt;

namespace {

ModelConfig tiny_config(int src_vocab = 20, int tgt_vocab = 20) {
  ModelConfig cfg;
  cfg.num_layers = 2;
  cfg.d_model = 16;
  cfg.ffn_size = 32;
  cfg.num_heads = 4;
  cfg.dropout = 0.0;
  cfg.max_positions = 32;
  cfg.src_vocab = src_vocab;
  cfg.tgt_vocab = tgt_vocab;
  return cfg;
}

}  // namespace

TEST_CASE("config validation") {
  ModelConfig cfg = tiny_config();
  cfg.d_model = 15;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = tiny_config();
  cfg.dropout = 1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("encode shape contract and determinism") {
  TransformerModel model(tiny_config(), 1);
  std::vector<int> ids{4, 5, 6, 7, 8, 9, 10};
  EncoderOutput h1 = model.encode(ids);
  CHECK(h1.states->value.rows() == 7);
  CHECK(h1.states->value.cols() == 16);
  EncoderOutput h2 = model.encode(ids);
  CHECK(h1.states->value == h2.states->value);  // bitwise

  std::vector<int> overlong(40, 4);
  CHECK_THROWS_AS(model.encode(overlong), std::invalid_argument);
}

TEST_CASE("positional encoding distinguishes permuted inputs") {
  TransformerModel model(tiny_config(), 2);
  std::vector<int> a{4, 5, 6, 7, 8};
  std::vector<int> b{8, 5, 6, 7, 4};  // swap two non-adjacent tokens
  CHECK(model.encode(a).states->value != model.encode(b).states->value);
}

TEST_CASE("decoder logits are causal and normalizable") {
  TransformerModel model(tiny_config(), 3);
  EncoderOutput h = model.encode({4, 5, 6});

  std::vector<int> prefix{Vocabulary::kBos, 5, 7};
  ag::Var logits = model.decoder_logits(h, prefix);
  CHECK(logits->value.rows() == 3);
  CHECK(logits->value.cols() == 20);

  // prefix extension leaves earlier rows unchanged
  std::vector<int> longer{Vocabulary::kBos, 5, 7, 9, 11};
  ag::Var logits2 = model.decoder_logits(h, longer);
  CHECK((logits2->value.topRows(3) - logits->value).norm() ==
        doctest::Approx(0.0).epsilon(1e-12));

  // rows are finite and softmax-normalized
  for (Eigen::Index i = 0; i < logits->value.rows(); ++i) {
    CHECK(logits->value.row(i).allFinite());
    Eigen::RowVectorXd p =
        (logits->value.row(i).array() - logits->value.row(i).maxCoeff()).exp();
    p /= p.sum();
    CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-5));
    Eigen::Index best;
    p.maxCoeff(&best);
    CHECK(best >= 0);
    CHECK(best < 20);
  }

  CHECK_THROWS_AS(model.decoder_logits(h, {5, 6}), std::invalid_argument);
}

TEST_CASE("discriminator range, masking and sensitivity") {
  TransformerModel model(tiny_config(), 4);
  EncoderOutput h = model.encode({4, 5, 6, 7});
  ag::Var score = model.discriminate(h);
  double s = score->value(0, 0);
  CHECK(s >= TransformerModel::kScoreClamp);
  CHECK(s <= 1.0 - TransformerModel::kScoreClamp);

  // padded vs unpadded: same sentence with trailing PAD gives the same score
  EncoderOutput hp = model.encode({4, 5, 6, 7, Vocabulary::kPad,
                                   Vocabulary::kPad});
  double sp = model.discriminate(hp)->value(0, 0);
  CHECK(sp == doctest::Approx(s).epsilon(1e-5));

  // distinct sentences generally score differently on a random init
  double s2 = model.discriminate(model.encode({9, 10, 11}))->value(0, 0);
  CHECK(s != s2);

  EncoderOutput all_pad{ag::constant(ag::Mat::Zero(2, 16)), {0, 0}};
  CHECK_THROWS_AS(model.discriminate(all_pad), std::invalid_argument);
}

TEST_CASE("greedy decode is deterministic and length-bounded") {
  TransformerModel model(tiny_config(), 5);
  EncoderOutput h = model.encode({4, 5, 6});
  auto out1 = model.greedy_decode(h, 10);
  auto out2 = model.greedy_decode(h, 10);
  CHECK(out1 == out2);
  CHECK(out1.size() <= 10);
}

TEST_CASE("gradient reversal end to end: encoder grads are negated") {
  ModelConfig cfg = tiny_config();
  TransformerModel model(cfg, 6);
  std::vector<int> manual{4, 5, 6, 7};
  std::vector<int> autos{4, 9, 6, 7};

  auto loss_of = [&](bool reversed) {
    EncoderOutput hm = model.encode(manual);
    EncoderOutput ha = model.encode(autos);
    if (reversed) {
      hm = {ag::grad_reverse(hm.states), hm.valid};
      ha = {ag::grad_reverse(ha.states), ha.valid};
    }
    return adversarial_loss(model.discriminate(hm), model.discriminate(ha));
  };

  // analytic gradient with reversal
  model.params().zero_grads();
  model.dis_params().zero_grads();
  ag::backward(loss_of(true));
  ag::Mat rev_grad = model.params().get("enc.0.attn.wq")->grad_ref();
  ag::Mat dis_grad_rev = model.dis_params().get("dis.ffn.w2")->grad_ref();

  // analytic gradient without reversal
  model.params().zero_grads();
  model.dis_params().zero_grads();
  ag::backward(loss_of(false));
  ag::Mat fwd_grad = model.params().get("enc.0.attn.wq")->grad_ref();
  ag::Mat dis_grad_fwd = model.dis_params().get("dis.ffn.w2")->grad_ref();

  CHECK((rev_grad + fwd_grad).norm() ==
        doctest::Approx(0.0).epsilon(1e-10).scale(1.0));
  // discriminator gradients are unaffected by the reversal layer below them
  CHECK((dis_grad_rev - dis_grad_fwd).norm() ==
        doctest::Approx(0.0).epsilon(1e-10).scale(1.0));

  // finite-difference oracle on sampled encoder parameters, non-reversed
  ag::Var wq = model.params().get("enc.0.attn.wq");
  std::mt19937_64 rng(12);
  for (int probe = 0; probe < 3; ++probe) {
    Eigen::Index i = rng() % wq->value.rows();
    Eigen::Index j = rng() % wq->value.cols();
    double h = 1e-5;
    double orig = wq->value(i, j);
    ag::NoGradGuard ng;
    wq->value(i, j) = orig + h;
    double fp = loss_of(false)->value(0, 0);
    wq->value(i, j) = orig - h;
    double fm = loss_of(false)->value(0, 0);
    wq->value(i, j) = orig;
    double numeric = (fp - fm) / (2 * h);
    // reversed analytic gradient = negation of the numeric non-reversed one
    CHECK(rev_grad(i, j) ==
          doctest::Approx(-numeric).epsilon(1e-3).scale(1e-6));
  }
}

TEST_CASE("checkpoint round trip preserves parameters bitwise") {
  ModelConfig cfg = tiny_config();
  TransformerModel model(cfg, 8);
  Checkpoint c = make_checkpoint(model, 42);
  c.save("ckpt_test.tmp");
  Checkpoint loaded = Checkpoint::load("ckpt_test.tmp");
  CHECK(loaded.step == 42);
  CHECK(loaded.config == cfg);

  TransformerModel other(cfg, 999);
  init_from_baseline(other, loaded);
  for (std::size_t i = 0; i < model.params().items().size(); ++i)
    CHECK(other.params().items()[i].second->value ==
          model.params().items()[i].second->value);

  // translation of a fixed input is unchanged after initialization
  std::vector<int> src{4, 5, 6};
  CHECK(other.translate_ids(src, 8) == model.translate_ids(src, 8));

  // stripped discriminator section is accepted; dis params stay seed-fresh
  loaded.strip_discriminator();
  loaded.save("ckpt_test.tmp");
  Checkpoint stripped = Checkpoint::load("ckpt_test.tmp");
  TransformerModel third(cfg, 1234);
  ag::Mat dis_before = third.dis_params().items()[0].second->value;
  init_from_baseline(third, stripped);
  CHECK(third.dis_params().items()[0].second->value == dis_before);
  CHECK(third.translate_ids(src, 8) == model.translate_ids(src, 8));

  // config mismatch is rejected
  ModelConfig cfg2 = cfg;
  cfg2.d_model = 32;
  cfg2.num_heads = 4;
  TransformerModel mismatched(cfg2, 8);
  CHECK_THROWS_AS(init_from_baseline(mismatched, stripped),
                  std::runtime_error);
  std::remove("ckpt_test.tmp");
}
