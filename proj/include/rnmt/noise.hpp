#pragma once

#include <Eigen/Dense>

#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "rnmt/text.hpp"
#include "rnmt/util.hpp"

namespace rnmt {

// Synthetic ASR-noise channel: per-token deletion (omission), duplication
// (repetition) and substitution (homophone proxy), plus independent
// insertions after each position.
struct NoiseConfig {
  double p_delete = 0.0;
  double p_repeat = 0.0;
  double p_substitute = 0.0;
  double p_insert = 0.0;
  std::map<std::string, std::vector<std::string>> confusion_table;
  std::vector<std::string> substitute_pool;  // fallback uniform draw
  std::uint64_t seed = 0;

  void validate() const {
    for (double p : {p_delete, p_repeat, p_substitute, p_insert})
      if (p < 0.0 || p > 1.0)
        throw std::invalid_argument("noise probability outside [0,1]");
    if (p_delete + p_repeat + p_substitute > 1.0)
      throw std::invalid_argument(
          "p_delete + p_repeat + p_substitute must not exceed 1");
  }
};

namespace noise_detail {

inline std::string pick_substitute(const std::string& tok,
                                   const NoiseConfig& cfg,
                                   std::mt19937_64& rng) {
  auto it = cfg.confusion_table.find(tok);
  if (it != cfg.confusion_table.end() && !it->second.empty())
    return it->second[uniform_index(rng, it->second.size())];
  if (!cfg.substitute_pool.empty())
    return cfg.substitute_pool[uniform_index(rng, cfg.substitute_pool.size())];
  return tok;
}

inline std::string pick_insert(const NoiseConfig& cfg, std::mt19937_64& rng) {
  if (!cfg.substitute_pool.empty())
    return cfg.substitute_pool[uniform_index(rng, cfg.substitute_pool.size())];
  return "<unk>";
}

inline Sentence corrupt_once(const Sentence& s, const NoiseConfig& cfg,
                             std::mt19937_64& rng) {
  Sentence out;
  for (const auto& tok : s) {
    double u = uniform01(rng);
    if (u < cfg.p_delete) {
      // omission
    } else if (u < cfg.p_delete + cfg.p_repeat) {
      out.push_back(tok);
      out.push_back(tok);
    } else if (u < cfg.p_delete + cfg.p_repeat + cfg.p_substitute) {
      out.push_back(pick_substitute(tok, cfg, rng));
    } else {
      out.push_back(tok);
    }
    if (cfg.p_insert > 0.0 && uniform01(rng) < cfg.p_insert)
      out.push_back(pick_insert(cfg, rng));
  }
  return tokenize(join_tokens(out), TokenizeMode::AsrLike);
}

}  // namespace noise_detail

// Deterministic given (config seed, sentence_index). An empty result is
// resampled once; if still empty a single UNK token is returned.
inline Sentence corrupt(const Sentence& s, const NoiseConfig& cfg,
                        std::uint64_t sentence_index = 0) {
  if (s.empty()) throw std::invalid_argument("corrupt: empty sentence");
  cfg.validate();
  std::mt19937_64 rng(mix64(cfg.seed, sentence_index, 0x6e6f697365ULL));
  Sentence out = noise_detail::corrupt_once(s, cfg, rng);
  if (out.empty()) out = noise_detail::corrupt_once(s, cfg, rng);
  if (out.empty()) out = {"<unk>"};
  return out;
}

// All vocabulary tokens at character edit distance exactly 1, used as a
// homophone proxy when no pronunciation resource is configured.
inline std::map<std::string, std::vector<std::string>> build_confusion_table(
    const std::vector<std::string>& tokens) {
  auto char_dist_leq1 = [](const std::string& a, const std::string& b) {
    if (a.size() > b.size()) return false;  // call with a shorter or equal
    if (b.size() - a.size() > 1) return false;
    if (a.size() == b.size()) {
      int diff = 0;
      for (std::size_t i = 0; i < a.size(); ++i) diff += a[i] != b[i];
      return diff == 1;
    }
    // one insertion into a
    std::size_t i = 0, j = 0;
    bool used = false;
    while (i < a.size() && j < b.size()) {
      if (a[i] == b[j]) { ++i; ++j; continue; }
      if (used) return false;
      used = true;
      ++j;
    }
    return true;
  };
  std::map<std::string, std::vector<std::string>> table;
  for (std::size_t i = 0; i < tokens.size(); ++i)
    for (std::size_t j = 0; j < tokens.size(); ++j) {
      if (i == j) continue;
      const std::string &a = tokens[i], &b = tokens[j];
      bool close = a.size() <= b.size() ? char_dist_leq1(a, b)
                                        : char_dist_leq1(b, a);
      if (close) table[a].push_back(b);
    }
  return table;
}

// Plain-matrix variant of the Gaussian embedding perturbation (the autograd
// op lives in autograd.hpp); sigma is the per-component standard deviation.
inline Eigen::MatrixXd gaussian_embedding_noise(const Eigen::MatrixXd& e,
                                                double sigma,
                                                std::mt19937_64& rng) {
  if (sigma < 0.0)
    throw std::invalid_argument("gaussian_embedding_noise: negative sigma");
  if (sigma == 0.0) return e;
  Eigen::MatrixXd out = e;
  for (Eigen::Index i = 0; i < out.rows(); ++i)
    for (Eigen::Index j = 0; j < out.cols(); ++j)
      out(i, j) += sigma * normal01(rng);
  return out;
}

}  // namespace rnmt
