#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "rnmt/text.hpp"

namespace rnmt {

// Convention: "delete" consumes a reference token missing from the
// hypothesis; "insert" consumes a hypothesis token absent from the reference.
enum class EditKind { Match, Substitute, Delete, Insert };

struct EditOp {
  EditKind kind;
  int hyp_index = -1;  // -1 when the op consumes no hypothesis token
  int ref_index = -1;  // -1 when the op consumes no reference token
};

struct AlignmentPath {
  std::vector<EditOp> ops;
  int cost = 0;
};

// Unit-cost Levenshtein with backtracking. Tie-break when costs are equal:
// match > substitute > delete > insert.
inline AlignmentPath edit_distance_align(const Sentence& hyp,
                                         const Sentence& ref) {
  const int n = static_cast<int>(hyp.size());
  const int m = static_cast<int>(ref.size());
  std::vector<int> dist((n + 1) * (m + 1));
  std::vector<unsigned char> choice((n + 1) * (m + 1));
  auto at = [m](int i, int j) { return i * (m + 1) + j; };
  enum : unsigned char { kDiag = 0, kDel = 1, kIns = 2 };

  dist[at(0, 0)] = 0;
  for (int j = 1; j <= m; ++j) {
    dist[at(0, j)] = j;
    choice[at(0, j)] = kDel;
  }
  for (int i = 1; i <= n; ++i) {
    dist[at(i, 0)] = i;
    choice[at(i, 0)] = kIns;
  }
  for (int i = 1; i <= n; ++i) {
    for (int j = 1; j <= m; ++j) {
      bool eq = hyp[i - 1] == ref[j - 1];
      int diag = dist[at(i - 1, j - 1)] + (eq ? 0 : 1);
      int del = dist[at(i, j - 1)] + 1;
      int ins = dist[at(i - 1, j)] + 1;
      int best = diag;
      unsigned char c = kDiag;
      if (del < best) { best = del; c = kDel; }
      if (ins < best) { best = ins; c = kIns; }
      dist[at(i, j)] = best;
      choice[at(i, j)] = c;
    }
  }

  AlignmentPath path;
  path.cost = dist[at(n, m)];
  int i = n, j = m;
  while (i > 0 || j > 0) {
    unsigned char c = choice[at(i, j)];
    if (i > 0 && j > 0 && c == kDiag) {
      bool eq = hyp[i - 1] == ref[j - 1];
      path.ops.push_back({eq ? EditKind::Match : EditKind::Substitute,
                          i - 1, j - 1});
      --i; --j;
    } else if (j > 0 && (c == kDel || i == 0)) {
      path.ops.push_back({EditKind::Delete, -1, j - 1});
      --j;
    } else {
      path.ops.push_back({EditKind::Insert, i - 1, -1});
      --i;
    }
  }
  std::reverse(path.ops.begin(), path.ops.end());
  return path;
}

struct SegmentedTranscript {
  std::vector<Sentence> segments;  // one per reference sentence, may be empty
  int total_cost = 0;
};

// Re-segmentation by aligning the token stream against the concatenated
// references and cutting the optimal path at reference sentence boundaries.
// A segment closes as soon as its reference sentence is fully consumed, so
// boundaries land as early as possible among cost-equal placements.
inline SegmentedTranscript resegment(const Sentence& auto_stream,
                                     const std::vector<Sentence>& refs) {
  if (refs.empty()) throw std::invalid_argument("resegment: no references");
  Sentence concat;
  std::vector<std::size_t> ref_end;  // cumulative token count per reference
  for (const auto& r : refs) {
    concat.insert(concat.end(), r.begin(), r.end());
    ref_end.push_back(concat.size());
  }

  AlignmentPath path = edit_distance_align(auto_stream, concat);

  SegmentedTranscript out;
  out.total_cost = path.cost;
  out.segments.assign(refs.size(), {});
  std::size_t seg = 0;
  std::size_t ref_consumed = 0;
  auto close_finished = [&] {
    while (seg + 1 < refs.size() && ref_consumed >= ref_end[seg]) ++seg;
  };
  close_finished();  // leading empty references
  for (const auto& op : path.ops) {
    if (op.hyp_index >= 0)
      out.segments[seg].push_back(auto_stream[op.hyp_index]);
    if (op.ref_index >= 0) {
      ++ref_consumed;
      close_finished();
    }
  }
  return out;
}

// WER = edit distance / reference length.
inline double wer(const Sentence& hyp, const Sentence& ref) {
  if (ref.empty()) throw std::invalid_argument("wer: empty reference");
  return static_cast<double>(edit_distance_align(hyp, ref).cost) /
         static_cast<double>(ref.size());
}

// Drops the ceil(drop_fraction * N) pairs with the highest WER. Among equal
// WER the later-indexed pairs are dropped first, so earlier pairs survive.
// Input order of survivors is preserved.
inline std::vector<TranscriptionPair> filter_by_wer(
    const std::vector<TranscriptionPair>& pairs,
    double drop_fraction = 0.001) {
  if (drop_fraction < 0.0 || drop_fraction >= 1.0)
    throw std::invalid_argument("filter_by_wer: drop_fraction outside [0,1)");
  const std::size_t n = pairs.size();
  const std::size_t drop = static_cast<std::size_t>(
      std::ceil(drop_fraction * static_cast<double>(n)));
  if (drop == 0) return pairs;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (pairs[a].wer != pairs[b].wer) return pairs[a].wer > pairs[b].wer;
    return a > b;
  });
  std::vector<char> dropped(n, 0);
  for (std::size_t k = 0; k < drop && k < n; ++k) dropped[order[k]] = 1;

  std::vector<TranscriptionPair> out;
  out.reserve(n - drop);
  for (std::size_t i = 0; i < n; ++i)
    if (!dropped[i]) out.push_back(pairs[i]);
  return out;
}

}  // namespace rnmt
