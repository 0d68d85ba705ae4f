#pragma once

#include <array>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "rnmt/text.hpp"

namespace rnmt {

struct BleuScore {
  double score = 0.0;  // in [0, 100]
  std::array<double, 4> precisions{};
  double brevity_penalty = 1.0;
  long candidate_len = 0;
  long reference_len = 0;
};

namespace bleu_detail {

inline std::map<std::vector<std::string>, long> ngram_counts(const Sentence& s,
                                                             int n) {
  std::map<std::vector<std::string>, long> counts;
  if (static_cast<int>(s.size()) < n) return counts;
  for (std::size_t i = 0; i + n <= s.size(); ++i)
    ++counts[std::vector<std::string>(s.begin() + i, s.begin() + i + n)];
  return counts;
}

}  // namespace bleu_detail

// Corpus-level 4-gram BLEU with clipped modified precision and the standard
// brevity penalty. Single reference per candidate. With smoothing off the
// score is 0 whenever any n-gram precision is 0; add-one smoothing applies
// to orders n >= 2 only.
inline BleuScore bleu(const std::vector<Sentence>& candidates,
                      const std::vector<Sentence>& references,
                      int max_n = 4, bool smooth = false) {
  if (candidates.empty())
    throw std::invalid_argument("bleu: empty corpus");
  if (candidates.size() != references.size())
    throw std::invalid_argument("bleu: candidate/reference count mismatch");
  if (max_n < 1 || max_n > 4)
    throw std::invalid_argument("bleu: max_n must lie in [1,4]");

  std::array<long, 4> matched{}, total{};
  long cand_len = 0, ref_len = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const Sentence& c = candidates[i];
    const Sentence& r = references[i];
    cand_len += static_cast<long>(c.size());
    ref_len += static_cast<long>(r.size());
    for (int n = 1; n <= max_n; ++n) {
      auto cc = bleu_detail::ngram_counts(c, n);
      auto rc = bleu_detail::ngram_counts(r, n);
      for (const auto& [gram, count] : cc) {
        total[n - 1] += count;
        auto it = rc.find(gram);
        if (it != rc.end()) matched[n - 1] += std::min(count, it->second);
      }
    }
  }

  BleuScore out;
  out.candidate_len = cand_len;
  out.reference_len = ref_len;
  double log_sum = 0.0;
  int effective_n = 0;
  bool zero = false;
  for (int n = 1; n <= max_n; ++n) {
    double num = static_cast<double>(matched[n - 1]);
    double den = static_cast<double>(total[n - 1]);
    if (smooth && n >= 2) {
      num += 1.0;
      den += 1.0;
    }
    if (den == 0.0) {
      // no candidate n-grams of this order anywhere in the corpus: the
      // order is excluded from the geometric mean
      out.precisions[n - 1] = 0.0;
      continue;
    }
    double p = num / den;
    out.precisions[n - 1] = p;
    ++effective_n;
    if (p <= 0.0)
      zero = true;
    else
      log_sum += std::log(p);
  }
  out.brevity_penalty =
      cand_len < ref_len && cand_len > 0
          ? std::exp(1.0 - static_cast<double>(ref_len) /
                               static_cast<double>(cand_len))
          : (cand_len == 0 ? 0.0 : 1.0);
  out.score = (zero || effective_n == 0)
                  ? 0.0
                  : out.brevity_penalty *
                        std::exp(log_sum / static_cast<double>(effective_n)) *
                        100.0;
  return out;
}

}  // namespace rnmt
