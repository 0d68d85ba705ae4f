#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "rnmt/autograd.hpp"
#include "rnmt/text.hpp"

namespace rnmt {

struct ModelConfig {
  int num_layers = 2;
  int d_model = 128;
  int ffn_size = 256;
  int num_heads = 4;
  double dropout = 0.1;
  int max_positions = 256;
  int src_vocab = 0;
  int tgt_vocab = 0;
  double label_smoothing = 0.1;

  void validate() const {
    if (d_model % num_heads != 0)
      throw std::invalid_argument("d_model must be divisible by num_heads");
    if (dropout < 0.0 || dropout >= 1.0)
      throw std::invalid_argument("dropout must lie in [0,1)");
    if (label_smoothing < 0.0 || label_smoothing >= 1.0)
      throw std::invalid_argument("label_smoothing must lie in [0,1)");
    if (src_vocab < 4 || tgt_vocab < 4)
      throw std::invalid_argument("vocab sizes must cover the reserved ids");
  }

  bool operator==(const ModelConfig&) const = default;
};

struct EncoderOutput {
  ag::Var states;           // src_len x d_model
  std::vector<char> valid;  // per-position validity (PAD positions are 0)
};

// Named parameter tensors in a fixed registration order (the optimizer and
// checkpoint code iterate in this order).
class ParamStore {
 public:
  ag::Var add(const std::string& name, ag::Mat init) {
    auto v = ag::make_var(std::move(init), true);
    items_.emplace_back(name, v);
    index_[name] = items_.size() - 1;
    return v;
  }
  const std::vector<std::pair<std::string, ag::Var>>& items() const {
    return items_;
  }
  ag::Var get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end())
      throw std::runtime_error("unknown parameter: " + name);
    return items_[it->second].second;
  }
  bool has(const std::string& name) const { return index_.count(name) != 0; }
  void zero_grads() {
    for (auto& [n, v] : items_) v->zero_grad();
  }

 private:
  std::vector<std::pair<std::string, ag::Var>> items_;
  std::map<std::string, std::size_t> index_;
};

namespace detail {

inline ag::Mat glorot(Eigen::Index rows, Eigen::Index cols,
                      std::mt19937_64& rng) {
  double s = std::sqrt(2.0 / static_cast<double>(rows + cols));
  ag::Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = s * normal01(rng);
  return m;
}

inline ag::Mat sinusoidal_positions(int max_positions, int d_model) {
  ag::Mat pe(max_positions, d_model);
  for (int pos = 0; pos < max_positions; ++pos) {
    for (int i = 0; i < d_model / 2; ++i) {
      double freq = std::pow(10000.0, -2.0 * i / static_cast<double>(d_model));
      pe(pos, 2 * i) = std::sin(pos * freq);
      pe(pos, 2 * i + 1) = std::cos(pos * freq);
    }
  }
  return pe;
}

struct AttentionParams {
  ag::Var wq, bq, wk, bk, wv, bv, wo, bo;
};

struct LayerNormParams {
  ag::Var gain, bias;
};

struct FfnParams {
  ag::Var w1, b1, w2, b2;
};

}  // namespace detail

// Small pre-norm transformer encoder-decoder plus a discriminator head over
// the encoder states. Batches are processed one sentence at a time; a
// "batch" loss is the mean of per-sentence losses.
class TransformerModel {
 public:
  static constexpr double kScoreClamp = 1e-7;

  TransformerModel(ModelConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(mix64(seed, 0x6d6f64656cULL));
    build_params(rng);
    positions_ = ag::constant(
        detail::sinusoidal_positions(cfg_.max_positions, cfg_.d_model));
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  ParamStore& dis_params() { return dis_params_; }
  const ParamStore& params() const { return params_; }
  const ParamStore& dis_params() const { return dis_params_; }

  // rng == nullptr means inference mode (no dropout). embed_noise_sigma adds
  // Gaussian noise to the scaled input embeddings (training-time baseline
  // comparison); noise_rng must be non-null for it to apply.
  EncoderOutput encode(const std::vector<int>& ids, std::mt19937_64* rng = nullptr,
                       double embed_noise_sigma = 0.0,
                       std::mt19937_64* noise_rng = nullptr) const {
    check_len(ids.size());
    std::vector<char> valid(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i)
      valid[i] = ids[i] != Vocabulary::kPad;

    ag::Var x = embed_tokens(src_embed_, ids);
    x = ag::gaussian_noise(x, embed_noise_sigma, noise_rng);
    x = add_positions(x);
    x = ag::dropout(x, cfg_.dropout, rng);
    for (int l = 0; l < cfg_.num_layers; ++l) {
      const auto& L = enc_layers_[l];
      x = residual_attention(x, L.ln1, L.attn, x, valid, valid, false, rng);
      x = residual_ffn(x, L.ln2, L.ffn, rng);
    }
    x = ag::layer_norm_rows(x, enc_final_ln_.gain, enc_final_ln_.bias);
    return {x, valid};
  }

  // Per-position logits over the target vocabulary for a BOS-led prefix.
  ag::Var decoder_logits(const EncoderOutput& h, const std::vector<int>& prefix,
                         std::mt19937_64* rng = nullptr) const {
    check_len(prefix.size());
    if (prefix.empty() || prefix.front() != Vocabulary::kBos)
      throw std::invalid_argument("decoder prefix must begin with BOS");
    std::vector<char> tgt_valid(prefix.size(), 1);

    ag::Var y = embed_tokens(tgt_embed_, prefix);
    y = add_positions(y);
    y = ag::dropout(y, cfg_.dropout, rng);
    for (int l = 0; l < cfg_.num_layers; ++l) {
      const auto& L = dec_layers_[l];
      y = residual_attention(y, L.ln1, L.self_attn, y, tgt_valid, tgt_valid,
                             true, rng);
      y = residual_attention(y, L.ln2, L.cross_attn, h.states, tgt_valid,
                             h.valid, false, rng);
      y = residual_ffn(y, L.ln3, L.ffn, rng);
    }
    y = ag::layer_norm_rows(y, dec_final_ln_.gain, dec_final_ln_.bias);
    return ag::add_rowvec(ag::matmul(y, out_proj_), out_bias_);
  }

  // Discriminator: self-attention sub-layer over the encoder states, masked
  // mean-pool to a sentence embedding, feed-forward, sigmoid. The score is
  // clamped into [delta, 1-delta].
  ag::Var discriminate(const EncoderOutput& h,
                       std::mt19937_64* rng = nullptr) const {
    bool any = false;
    for (char v : h.valid) any |= (v != 0);
    if (!any) throw std::invalid_argument("discriminate: all-masked input");

    ag::Var x = residual_attention(h.states, dis_ln1_, dis_attn_, h.states,
                                   h.valid, h.valid, false, rng);
    ag::Var pooled = ag::mean_rows_masked(
        ag::layer_norm_rows(x, dis_ln2_.gain, dis_ln2_.bias), h.valid);
    ag::Var hlayer = ag::relu(
        ag::add_rowvec(ag::matmul(pooled, dis_ffn_.w1), dis_ffn_.b1));
    hlayer = ag::dropout(hlayer, cfg_.dropout, rng);
    ag::Var logit =
        ag::add_rowvec(ag::matmul(hlayer, dis_ffn_.w2), dis_ffn_.b2);
    return ag::clamp(ag::sigmoid(logit), kScoreClamp, 1.0 - kScoreClamp);
  }

  // Deterministic argmax decoding; stops at EOS or max_len. Returns target
  // ids without BOS/EOS. No gradients are recorded.
  std::vector<int> greedy_decode(const EncoderOutput& h, int max_len) const {
    ag::NoGradGuard ng;
    std::vector<int> prefix{Vocabulary::kBos};
    std::vector<int> out;
    for (int step = 0; step < max_len; ++step) {
      ag::Var logits = decoder_logits(h, prefix);
      Eigen::Index best;
      logits->value.row(logits->value.rows() - 1).maxCoeff(&best);
      int tok = static_cast<int>(best);
      if (tok == Vocabulary::kEos) break;
      out.push_back(tok);
      prefix.push_back(tok);
      if (static_cast<int>(prefix.size()) >= cfg_.max_positions) break;
    }
    return out;
  }

  std::vector<int> translate_ids(const std::vector<int>& src_ids,
                                 int max_len) const {
    ag::NoGradGuard ng;
    return greedy_decode(encode(src_ids), max_len);
  }

 private:
  struct EncLayer {
    detail::LayerNormParams ln1, ln2;
    detail::AttentionParams attn;
    detail::FfnParams ffn;
  };
  struct DecLayer {
    detail::LayerNormParams ln1, ln2, ln3;
    detail::AttentionParams self_attn, cross_attn;
    detail::FfnParams ffn;
  };

  void check_len(std::size_t n) const {
    if (static_cast<int>(n) > cfg_.max_positions)
      throw std::invalid_argument("sequence exceeds max_positions");
  }

  ag::Var embed_tokens(const ag::Var& table, const std::vector<int>& ids) const {
    return ag::scale(ag::embed(table, ids),
                     std::sqrt(static_cast<double>(cfg_.d_model)));
  }

  ag::Var add_positions(const ag::Var& x) const {
    ag::Mat pe = positions_->value.topRows(x->value.rows());
    return ag::add(x, ag::constant(std::move(pe)));
  }

  // Pre-norm residual attention block: x + Dropout(Attn(LN(x), kv)).
  // When kv aliases x (self-attention), keys/queries both come from the
  // normalized input.
  ag::Var residual_attention(const ag::Var& x,
                             const detail::LayerNormParams& ln,
                             const detail::AttentionParams& p,
                             const ag::Var& kv_raw,
                             const std::vector<char>& q_valid,
                             const std::vector<char>& kv_valid, bool causal,
                             std::mt19937_64* rng) const {
    ag::Var q_in = ag::layer_norm_rows(x, ln.gain, ln.bias);
    ag::Var kv_in = kv_raw.get() == x.get()
                        ? q_in
                        : kv_raw;  // cross-attention keys are already normed
    ag::Var attn = multi_head_attention(q_in, kv_in, p, q_valid, kv_valid,
                                        causal);
    return ag::add(x, ag::dropout(attn, cfg_.dropout, rng));
  }

  ag::Var residual_ffn(const ag::Var& x, const detail::LayerNormParams& ln,
                       const detail::FfnParams& p, std::mt19937_64* rng) const {
    ag::Var h = ag::layer_norm_rows(x, ln.gain, ln.bias);
    h = ag::relu(ag::add_rowvec(ag::matmul(h, p.w1), p.b1));
    h = ag::dropout(h, cfg_.dropout, rng);
    h = ag::add_rowvec(ag::matmul(h, p.w2), p.b2);
    return ag::add(x, ag::dropout(h, cfg_.dropout, rng));
  }

  ag::Var multi_head_attention(const ag::Var& q_in, const ag::Var& kv_in,
                               const detail::AttentionParams& p,
                               const std::vector<char>& q_valid,
                               const std::vector<char>& kv_valid,
                               bool causal) const {
    const int heads = cfg_.num_heads;
    const int dk = cfg_.d_model / heads;
    ag::Var q = ag::add_rowvec(ag::matmul(q_in, p.wq), p.bq);
    ag::Var k = ag::add_rowvec(ag::matmul(kv_in, p.wk), p.bk);
    ag::Var v = ag::add_rowvec(ag::matmul(kv_in, p.wv), p.bv);

    const Eigen::Index q_len = q->value.rows();
    const Eigen::Index k_len = k->value.rows();
    ag::Mat mask = ag::Mat::Zero(q_len, k_len);
    for (Eigen::Index j = 0; j < k_len; ++j)
      if (!kv_valid[static_cast<std::size_t>(j)]) mask.col(j).setConstant(-1e9);
    if (causal)
      for (Eigen::Index i = 0; i < q_len; ++i)
        for (Eigen::Index j = i + 1; j < k_len; ++j) mask(i, j) = -1e9;
    ag::Var mask_v = ag::constant(std::move(mask));

    std::vector<ag::Var> head_outs;
    head_outs.reserve(heads);
    for (int hIdx = 0; hIdx < heads; ++hIdx) {
      ag::Var qh = ag::cols(q, hIdx * dk, dk);
      ag::Var kh = ag::cols(k, hIdx * dk, dk);
      ag::Var vh = ag::cols(v, hIdx * dk, dk);
      ag::Var scores = ag::scale(ag::matmul(qh, ag::transpose(kh)),
                                 1.0 / std::sqrt(static_cast<double>(dk)));
      scores = ag::add(scores, mask_v);
      ag::Var weights = ag::softmax_rows(scores);
      head_outs.push_back(ag::matmul(weights, vh));
    }
    (void)q_valid;
    return ag::add_rowvec(ag::matmul(ag::hcat(head_outs), p.wo), p.bo);
  }

  detail::AttentionParams make_attention(const std::string& prefix,
                                         ParamStore& store,
                                         std::mt19937_64& rng) {
    const int d = cfg_.d_model;
    detail::AttentionParams p;
    p.wq = store.add(prefix + ".wq", detail::glorot(d, d, rng));
    p.bq = store.add(prefix + ".bq", ag::Mat::Zero(1, d));
    p.wk = store.add(prefix + ".wk", detail::glorot(d, d, rng));
    p.bk = store.add(prefix + ".bk", ag::Mat::Zero(1, d));
    p.wv = store.add(prefix + ".wv", detail::glorot(d, d, rng));
    p.bv = store.add(prefix + ".bv", ag::Mat::Zero(1, d));
    p.wo = store.add(prefix + ".wo", detail::glorot(d, d, rng));
    p.bo = store.add(prefix + ".bo", ag::Mat::Zero(1, d));
    return p;
  }

  detail::LayerNormParams make_ln(const std::string& prefix, ParamStore& store) {
    detail::LayerNormParams p;
    p.gain = store.add(prefix + ".gain", ag::Mat::Ones(1, cfg_.d_model));
    p.bias = store.add(prefix + ".bias", ag::Mat::Zero(1, cfg_.d_model));
    return p;
  }

  detail::FfnParams make_ffn(const std::string& prefix, ParamStore& store,
                             std::mt19937_64& rng, int out_dim) {
    const int d = cfg_.d_model;
    detail::FfnParams p;
    p.w1 = store.add(prefix + ".w1", detail::glorot(d, cfg_.ffn_size, rng));
    p.b1 = store.add(prefix + ".b1", ag::Mat::Zero(1, cfg_.ffn_size));
    p.w2 = store.add(prefix + ".w2",
                     detail::glorot(cfg_.ffn_size, out_dim, rng));
    p.b2 = store.add(prefix + ".b2", ag::Mat::Zero(1, out_dim));
    return p;
  }

  void build_params(std::mt19937_64& rng) {
    const int d = cfg_.d_model;
    src_embed_ = params_.add("src_embed",
                             detail::glorot(cfg_.src_vocab, d, rng) /
                                 std::sqrt(static_cast<double>(d)));
    tgt_embed_ = params_.add("tgt_embed",
                             detail::glorot(cfg_.tgt_vocab, d, rng) /
                                 std::sqrt(static_cast<double>(d)));
    for (int l = 0; l < cfg_.num_layers; ++l) {
      std::string pre = "enc." + std::to_string(l);
      EncLayer layer;
      layer.ln1 = make_ln(pre + ".ln1", params_);
      layer.attn = make_attention(pre + ".attn", params_, rng);
      layer.ln2 = make_ln(pre + ".ln2", params_);
      layer.ffn = make_ffn(pre + ".ffn", params_, rng, d);
      enc_layers_.push_back(layer);
    }
    enc_final_ln_ = make_ln("enc.final_ln", params_);
    for (int l = 0; l < cfg_.num_layers; ++l) {
      std::string pre = "dec." + std::to_string(l);
      DecLayer layer;
      layer.ln1 = make_ln(pre + ".ln1", params_);
      layer.self_attn = make_attention(pre + ".self_attn", params_, rng);
      layer.ln2 = make_ln(pre + ".ln2", params_);
      layer.cross_attn = make_attention(pre + ".cross_attn", params_, rng);
      layer.ln3 = make_ln(pre + ".ln3", params_);
      layer.ffn = make_ffn(pre + ".ffn", params_, rng, d);
      dec_layers_.push_back(layer);
    }
    dec_final_ln_ = make_ln("dec.final_ln", params_);
    out_proj_ = params_.add("out_proj", detail::glorot(d, cfg_.tgt_vocab, rng));
    out_bias_ = params_.add("out_bias", ag::Mat::Zero(1, cfg_.tgt_vocab));

    // Discriminator mirrors one encoder layer's geometry, then pools and
    // projects to a single logit.
    std::mt19937_64 dis_rng(mix64(rng(), 0x646973ULL));
    dis_ln1_ = make_ln("dis.ln1", dis_params_);
    dis_attn_ = make_attention("dis.attn", dis_params_, dis_rng);
    dis_ln2_ = make_ln("dis.ln2", dis_params_);
    dis_ffn_ = make_ffn("dis.ffn", dis_params_, dis_rng, 1);
  }

  ModelConfig cfg_;
  ParamStore params_;
  ParamStore dis_params_;
  ag::Var src_embed_, tgt_embed_, out_proj_, out_bias_;
  std::vector<EncLayer> enc_layers_;
  std::vector<DecLayer> dec_layers_;
  detail::LayerNormParams enc_final_ln_, dec_final_ln_;
  detail::LayerNormParams dis_ln1_, dis_ln2_;
  detail::AttentionParams dis_attn_;
  detail::FfnParams dis_ffn_;
  ag::Var positions_;
};

}  // namespace rnmt
