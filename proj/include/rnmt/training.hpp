#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "rnmt/align.hpp"
#include "rnmt/checkpoint.hpp"
#include "rnmt/model.hpp"
#include "rnmt/text.hpp"

namespace rnmt {

struct LossWeights {
  double alpha = 0.0;
  double beta = 0.0;
};

struct LossBreakdown {
  double l_normal = 0.0;
  double l_enc = 0.0;
  double l_dec = 0.0;
  double total = 0.0;
  std::uint64_t step = 0;
};

struct TrainingConfig {
  std::uint64_t steps = 100;
  int batch_parallel = 16;
  int batch_transcript = 16;
  std::uint64_t seed = 1;
  double lr_scale = 2.0;
  int warmup_steps = 400;
  std::uint64_t checkpoint_every = 0;  // 0 = final checkpoint only
  LossWeights weights;
  double gaussian_sigma = 0.0;  // >0 enables the embedding-noise comparison
  int max_decode_len = 64;
};

// Adam with the inverse-square-root warmup schedule; iterates parameters in
// registration order so updates are reproducible.
class AdamOptimizer {
 public:
  AdamOptimizer(double lr_scale, int d_model, int warmup,
                double beta1 = 0.9, double beta2 = 0.98, double eps = 1e-9)
      : lr_scale_(lr_scale), d_model_(d_model), warmup_(warmup),
        beta1_(beta1), beta2_(beta2), eps_(eps) {}

  double learning_rate(std::uint64_t step) const {
    double s = static_cast<double>(step);
    double w = static_cast<double>(warmup_);
    return lr_scale_ / std::sqrt(static_cast<double>(d_model_)) *
           std::min(1.0 / std::sqrt(s), s / (w * std::sqrt(w)));
  }

  // step is 1-based.
  void update(std::vector<ParamStore*> stores, std::uint64_t step) {
    double lr = learning_rate(step);
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step));
    std::size_t slot = 0;
    for (ParamStore* store : stores) {
      for (auto& [name, var] : store->items()) {
        if (slot >= m_.size()) {
          m_.push_back(ag::Mat::Zero(var->value.rows(), var->value.cols()));
          v_.push_back(ag::Mat::Zero(var->value.rows(), var->value.cols()));
        }
        const ag::Mat& g = var->grad_ref();
        ag::Mat& m = m_[slot];
        ag::Mat& v = v_[slot];
        m = beta1_ * m + (1.0 - beta1_) * g;
        v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
        ag::Mat mhat = m / bc1;
        ag::Mat vhat = v / bc2;
        var->value.array() -=
            lr * mhat.array() / (vhat.array().sqrt() + eps_);
        ++slot;
      }
    }
  }

  void zero_grads(std::vector<ParamStore*> stores) {
    for (ParamStore* s : stores) s->zero_grads();
  }

  OptimizerState state(std::vector<ParamStore*> stores) const {
    OptimizerState st;
    std::size_t slot = 0;
    for (ParamStore* store : stores)
      for (const auto& [name, var] : store->items()) {
        if (slot < m_.size()) {
          st.first_moment.emplace_back(name, m_[slot]);
          st.second_moment.emplace_back(name, v_[slot]);
        }
        ++slot;
      }
    return st;
  }

  void load_state(std::vector<ParamStore*> stores, const OptimizerState& st) {
    m_.clear();
    v_.clear();
    std::map<std::string, const ag::Mat*> m_by, v_by;
    for (const auto& [n, mat] : st.first_moment) m_by[n] = &mat;
    for (const auto& [n, mat] : st.second_moment) v_by[n] = &mat;
    for (ParamStore* store : stores)
      for (const auto& [name, var] : store->items()) {
        auto mi = m_by.find(name), vi = v_by.find(name);
        if (mi == m_by.end() || vi == v_by.end())
          throw std::runtime_error("optimizer state missing: " + name);
        m_.push_back(*mi->second);
        v_.push_back(*vi->second);
      }
  }

 private:
  double lr_scale_;
  int d_model_;
  int warmup_;
  double beta1_, beta2_, eps_;
  std::vector<ag::Mat> m_, v_;
};

// ---- losses -----------------------------------------------------------------

// Mean over positions of the label-smoothed negative log-likelihood; targets
// must end with EOS and match the number of logit rows.
inline ag::Var nll_loss(const ag::Var& logits, const std::vector<int>& targets,
                        double epsilon) {
  if (targets.empty() || targets.back() != Vocabulary::kEos)
    throw std::invalid_argument("nll_loss: target must end with EOS");
  if (logits->value.rows() != static_cast<Eigen::Index>(targets.size()))
    throw std::invalid_argument("nll_loss: length mismatch");
  return ag::nll_rows(ag::log_softmax_rows(logits), targets, epsilon);
}

// Adversarial objective for one (manual, auto) pair of clamped
// discriminator scores: -log D(H_manual) - log(1 - D(H_auto)).
inline ag::Var adversarial_loss(const ag::Var& score_manual,
                                const ag::Var& score_auto) {
  ag::Var one = ag::constant(ag::Mat::Ones(1, 1));
  ag::Var term_m = ag::scale(ag::log_elem(score_manual), -1.0);
  ag::Var term_a = ag::scale(ag::log_elem(ag::sub(one, score_auto)), -1.0);
  return ag::add(term_m, term_a);
}

inline double total_loss(double l_normal, double l_enc, double l_dec,
                         const LossWeights& w) {
  return w.alpha * l_enc + w.beta * l_dec + l_normal;
}

inline ag::Var mean_of(const std::vector<ag::Var>& terms) {
  if (terms.empty()) throw std::invalid_argument("mean_of: no terms");
  ag::Var acc = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) acc = ag::add(acc, terms[i]);
  return ag::scale(acc, 1.0 / static_cast<double>(terms.size()));
}

// Greedy translation of the manual transcript under inference mode; the
// result is treated as a constant target. Empty decodes are reported via
// nullopt so the caller can skip the pair.
inline std::optional<std::vector<int>> pseudo_reference(
    const TransformerModel& model, const std::vector<int>& manual_ids,
    int max_decode_len) {
  ag::NoGradGuard ng;
  std::vector<int> out = model.translate_ids(manual_ids, max_decode_len);
  if (out.empty()) return std::nullopt;
  return out;
}

// ---- batches ----------------------------------------------------------------

struct EncodedParallel {
  std::vector<int> src;         // source ids, no BOS/EOS
  std::vector<int> tgt_prefix;  // BOS + target ids
  std::vector<int> tgt_out;     // target ids + EOS
};

struct EncodedTranscription {
  std::vector<int> auto_ids;
  std::vector<int> manual_ids;
};

inline EncodedParallel encode_parallel(const ParallelPair& p,
                                       const Vocabulary& src_vocab,
                                       const Vocabulary& tgt_vocab) {
  EncodedParallel e;
  e.src = encode_ids(p.source, src_vocab);
  std::vector<int> tgt = encode_ids(p.target, tgt_vocab);
  e.tgt_prefix.push_back(Vocabulary::kBos);
  e.tgt_prefix.insert(e.tgt_prefix.end(), tgt.begin(), tgt.end());
  e.tgt_out = tgt;
  e.tgt_out.push_back(Vocabulary::kEos);
  return e;
}

// ---- train step -------------------------------------------------------------

struct StepStats {
  LossBreakdown losses;
  std::size_t skipped_pseudo = 0;  // transcription pairs with empty decode
};

// One optimizer update on the combined objective. When alpha (resp. beta) is
// zero the corresponding pass is skipped entirely, so an alpha=beta=0 step
// consumes exactly the RNG stream of a plain NMT step and produces bitwise
// identical updates. Dropout streams are derived per (seed, step, stream) so
// the parallel pass never depends on the transcription passes.
inline StepStats train_step(TransformerModel& model, AdamOptimizer& opt,
                            const std::vector<EncodedParallel>& parallel_batch,
                            const std::vector<EncodedTranscription>& trans_batch,
                            const LossWeights& w, std::uint64_t seed,
                            std::uint64_t step, double gaussian_sigma = 0.0,
                            int max_decode_len = 64) {
  const double eps = model.config().label_smoothing;
  std::vector<ParamStore*> stores{&model.params(), &model.dis_params()};
  opt.zero_grads(stores);

  std::mt19937_64 rng_normal(mix64(seed, step, 0));
  std::mt19937_64 rng_enc(mix64(seed, step, 1));
  std::mt19937_64 rng_dec(mix64(seed, step, 2));
  std::mt19937_64 rng_gauss(mix64(seed, step, 3));

  std::vector<ag::Var> normal_terms;
  for (const auto& ex : parallel_batch) {
    EncoderOutput h = model.encode(ex.src, &rng_normal);
    ag::Var logits = model.decoder_logits(h, ex.tgt_prefix, &rng_normal);
    normal_terms.push_back(nll_loss(logits, ex.tgt_out, eps));
  }
  ag::Var l_normal = mean_of(normal_terms);
  ag::Var total = l_normal;

  double l_enc_val = 0.0, l_dec_val = 0.0;
  StepStats stats;

  if (w.alpha != 0.0 && !trans_batch.empty()) {
    std::vector<ag::Var> enc_terms;
    for (const auto& tp : trans_batch) {
      EncoderOutput h_manual = model.encode(tp.manual_ids, &rng_enc);
      EncoderOutput h_auto =
          model.encode(tp.auto_ids, &rng_enc, gaussian_sigma, &rng_gauss);
      EncoderOutput r_manual{ag::grad_reverse(h_manual.states), h_manual.valid};
      EncoderOutput r_auto{ag::grad_reverse(h_auto.states), h_auto.valid};
      ag::Var d_manual = model.discriminate(r_manual, &rng_enc);
      ag::Var d_auto = model.discriminate(r_auto, &rng_enc);
      enc_terms.push_back(adversarial_loss(d_manual, d_auto));
    }
    ag::Var l_enc = mean_of(enc_terms);
    l_enc_val = l_enc->value(0, 0);
    total = ag::add(total, ag::scale(l_enc, w.alpha));
  }

  if (w.beta != 0.0 && !trans_batch.empty()) {
    std::vector<ag::Var> dec_terms;
    for (const auto& tp : trans_batch) {
      auto y_hat = pseudo_reference(model, tp.manual_ids, max_decode_len);
      if (!y_hat) {
        ++stats.skipped_pseudo;
        continue;
      }
      std::vector<int> prefix{Vocabulary::kBos};
      prefix.insert(prefix.end(), y_hat->begin(), y_hat->end());
      std::vector<int> out = *y_hat;
      out.push_back(Vocabulary::kEos);
      EncoderOutput h =
          model.encode(tp.auto_ids, &rng_dec, gaussian_sigma, &rng_gauss);
      ag::Var logits = model.decoder_logits(h, prefix, &rng_dec);
      dec_terms.push_back(nll_loss(logits, out, eps));
    }
    if (!dec_terms.empty()) {
      ag::Var l_dec = mean_of(dec_terms);
      l_dec_val = l_dec->value(0, 0);
      total = ag::add(total, ag::scale(l_dec, w.beta));
    }
  }

  stats.losses.l_normal = l_normal->value(0, 0);
  stats.losses.l_enc = l_enc_val;
  stats.losses.l_dec = l_dec_val;
  stats.losses.total = total->value(0, 0);
  stats.losses.step = step;

  auto check_finite = [](double v, const char* name) {
    if (!std::isfinite(v))
      throw std::runtime_error(std::string("non-finite loss component: ") +
                               name);
  };
  check_finite(stats.losses.l_normal, "l_normal");
  check_finite(stats.losses.l_enc, "l_enc");
  check_finite(stats.losses.l_dec, "l_dec");
  check_finite(stats.losses.total, "total");

  ag::backward(total);
  opt.update(stores, step);
  return stats;
}

// ---- baseline initialization ------------------------------------------------

inline void init_from_baseline(TransformerModel& model, const Checkpoint& ckpt) {
  if (!(ckpt.config == model.config()))
    throw std::runtime_error("checkpoint config does not match model config");
  restore(model.params(), ckpt.model_tensors);
  if (!ckpt.dis_tensors.empty()) restore(model.dis_params(), ckpt.dis_tensors);
  // absent discriminator tensors: keep the seed initialization
}

inline Checkpoint make_checkpoint(const TransformerModel& model,
                                  std::uint64_t step,
                                  const AdamOptimizer* opt = nullptr) {
  Checkpoint c;
  c.config = model.config();
  c.step = step;
  c.model_tensors = snapshot(model.params());
  c.dis_tensors = snapshot(model.dis_params());
  if (opt) {
    c.has_optimizer = true;
    TransformerModel& m = const_cast<TransformerModel&>(model);
    c.optimizer = opt->state({&m.params(), &m.dis_params()});
  }
  return c;
}

// ---- training loop ----------------------------------------------------------

struct Corpora {
  std::vector<EncodedParallel> parallel;
  std::vector<EncodedTranscription> transcriptions;
};

// Batch composition is a pure function of (seed, step).
inline std::vector<std::size_t> sample_indices(std::uint64_t seed,
                                               std::uint64_t step,
                                               std::uint64_t stream,
                                               std::size_t batch,
                                               std::size_t corpus_size) {
  std::mt19937_64 rng(mix64(seed, step, 0x100 + stream));
  std::vector<std::size_t> idx(batch);
  for (auto& i : idx) i = uniform_index(rng, corpus_size);
  return idx;
}

inline std::vector<LossBreakdown> train(
    TransformerModel& model, AdamOptimizer& opt, const Corpora& corpora,
    const TrainingConfig& cfg, const std::string& run_dir = "",
    std::ostream* progress = nullptr) {
  if (corpora.parallel.empty())
    throw std::invalid_argument("train: empty parallel corpus");
  bool needs_trans = cfg.weights.alpha != 0.0 || cfg.weights.beta != 0.0;
  if (needs_trans && corpora.transcriptions.empty())
    throw std::invalid_argument(
        "train: adversarial weights set but transcription corpus empty");

  std::ofstream log;
  if (!run_dir.empty()) {
    std::filesystem::create_directories(run_dir);
    log.open(run_dir + "/loss.log");
    log << "step\tl_normal\tl_enc\tl_dec\ttotal\n";
  }

  std::vector<LossBreakdown> history;
  std::size_t skipped_total = 0;
  for (std::uint64_t step = 1; step <= cfg.steps; ++step) {
    std::vector<EncodedParallel> pb;
    for (std::size_t i : sample_indices(cfg.seed, step, 0,
                                        static_cast<std::size_t>(cfg.batch_parallel),
                                        corpora.parallel.size()))
      pb.push_back(corpora.parallel[i]);

    std::vector<EncodedTranscription> tb;
    if (needs_trans)
      for (std::size_t i : sample_indices(
               cfg.seed, step, 1, static_cast<std::size_t>(cfg.batch_transcript),
               corpora.transcriptions.size()))
        tb.push_back(corpora.transcriptions[i]);

    StepStats st = train_step(model, opt, pb, tb, cfg.weights, cfg.seed, step,
                              cfg.gaussian_sigma, cfg.max_decode_len);
    skipped_total += st.skipped_pseudo;
    history.push_back(st.losses);
    if (log)
      log << st.losses.step << '\t' << st.losses.l_normal << '\t'
          << st.losses.l_enc << '\t' << st.losses.l_dec << '\t'
          << st.losses.total << '\n';
    if (progress && step % 50 == 0)
      *progress << "step " << step << " total " << st.losses.total << '\n';
    if (!run_dir.empty() && cfg.checkpoint_every != 0 &&
        step % cfg.checkpoint_every == 0)
      make_checkpoint(model, step, &opt)
          .save(run_dir + "/ckpt-" + std::to_string(step));
  }
  if (!run_dir.empty()) {
    make_checkpoint(model, cfg.steps, &opt)
        .save(run_dir + "/ckpt-" + std::to_string(cfg.steps));
    if (skipped_total && progress)
      *progress << "pseudo-reference skips: " << skipped_total << '\n';
  }
  return history;
}

}  // namespace rnmt
