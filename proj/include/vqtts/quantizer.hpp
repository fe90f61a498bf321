#pragma once

// The learnable codebook and its surroundings: phonetic clustering
// (nearest-codeword substitution with straight-through gradients),
// temporal segmentation, the distance-softmax posteriorgram, CTC training
// and greedy decoding, and text-to-code retrieval.

#include <algorithm>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "vqtts/ops.hpp"
#include "vqtts/rng.hpp"
#include "vqtts/tensor.hpp"

namespace vqtts {

// Ordered phoneme symbols with the reserved blank appended last.
class PhonemeInventory {
 public:
  static constexpr const char* kBlank = "<blk>";

  static PhonemeInventory from_phonemes(std::vector<std::string> phonemes) {
    PhonemeInventory inv;
    for (const auto& s : phonemes) {
      if (s == kBlank)
        throw std::invalid_argument("PhonemeInventory: the blank symbol " + std::string(kBlank) +
                                    " is reserved and appended automatically");
      if (s.empty()) throw std::invalid_argument("PhonemeInventory: empty symbol");
      for (const auto& prev : inv.symbols_)
        if (prev == s) throw std::invalid_argument("PhonemeInventory: duplicate symbol '" + s + "'");
      inv.symbols_.push_back(s);
    }
    inv.symbols_.push_back(kBlank);
    return inv;
  }

  // Plain text, one symbol per line, UTF-8.
  static PhonemeInventory load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("PhonemeInventory: cannot open " + path);
    std::vector<std::string> phonemes;
    std::string line;
    while (std::getline(is, line)) {
      while (!line.empty() && (line.back() == '\r' || line.back() == '\n' || line.back() == ' '))
        line.pop_back();
      if (!line.empty()) phonemes.push_back(line);
    }
    return from_phonemes(std::move(phonemes));
  }

  void save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("PhonemeInventory: cannot write " + path);
    for (size_t i = 0; i + 1 < symbols_.size(); ++i) os << symbols_[i] << "\n";
  }

  int64_t size() const { return static_cast<int64_t>(symbols_.size()); }  // phonemes + blank
  int64_t phoneme_count() const { return size() - 1; }
  int64_t blank_index() const { return size() - 1; }
  const std::string& symbol(int64_t i) const { return symbols_.at(static_cast<size_t>(i)); }
  const std::vector<std::string>& symbols() const { return symbols_; }

  int64_t index_of(const std::string& symbol) const {
    for (size_t i = 0; i < symbols_.size(); ++i)
      if (symbols_[i] == symbol) return static_cast<int64_t>(i);
    return -1;
  }

 private:
  std::vector<std::string> symbols_;
};

// Codeword rows drawn uniformly on the sphere of the given radius.
inline Tensor init_codebook(int64_t V, int64_t D, double radius, Rng& rng) {
  std::vector<double> data(static_cast<size_t>(V * D));
  for (int64_t v = 0; v < V; ++v) {
    double norm2 = 0.0;
    for (int64_t d = 0; d < D; ++d) {
      const double g = rng.normal();
      data[static_cast<size_t>(v * D + d)] = g;
      norm2 += g * g;
    }
    const double scale = radius / std::max(std::sqrt(norm2), 1e-12);
    for (int64_t d = 0; d < D; ++d) data[static_cast<size_t>(v * D + d)] *= scale;
  }
  return Tensor::from({V, D}, std::move(data), true);
}

// argmin_v ||h_t - e_v||_2 per frame, ties broken by lowest index.
inline std::vector<int> nearest_codewords(const Tensor& h, const Tensor& codebook) {
  if (h.shape().size() != 2 || codebook.shape().size() != 2 || h.shape()[1] != codebook.shape()[1])
    throw std::invalid_argument("nearest_codewords: dimension mismatch " + shape_str(h.shape()) +
                                " vs " + shape_str(codebook.shape()));
  const int64_t T = h.shape()[0], D = h.shape()[1], V = codebook.shape()[0];
  std::vector<int> idx(static_cast<size_t>(T));
  for (int64_t t = 0; t < T; ++t) {
    const double* ht = h.value().data() + t * D;
    double best = std::numeric_limits<double>::infinity();
    int best_v = 0;
    for (int64_t v = 0; v < V; ++v) {
      const double* ev = codebook.value().data() + v * D;
      double s = 0.0;
      for (int64_t d = 0; d < D; ++d) {
        const double diff = ht[d] - ev[d];
        s += diff * diff;
      }
      if (s < best) {
        best = s;
        best_v = static_cast<int>(v);
      }
    }
    idx[static_cast<size_t>(t)] = best_v;
  }
  return idx;
}

struct ClusterResult {
  Tensor substituted;        // T' x D, forward rows are codebook rows bitwise
  std::vector<int> indices;  // length T'
};

// Substitutes each frame with its nearest codeword. With the straight-
// through estimator enabled, gradients pass to h unchanged and the
// codebook receives none through the substitution; disabled (the
// speech-chain ablation), the result is a constant.
inline ClusterResult phonetic_clustering(const Tensor& h, const Tensor& codebook,
                                         bool st_enabled = true) {
  ClusterResult res;
  res.indices = nearest_codewords(h, codebook);
  Tensor picked = embedding_lookup(codebook, res.indices);
  if (st_enabled) {
    res.substituted = straight_through(h, picked);
  } else {
    res.substituted = Tensor::from(picked.shape(), picked.value());
  }
  return res;
}

// Sequences produced by temporal segmentation carry no adjacent repeats;
// sequences retrieved from text may (repeated phonemes stay distinct).
struct CodeSequence {
  std::vector<int> indices;  // length S
  Tensor vectors;            // S x D, row i equals codebook row indices[i] bitwise

  int64_t size() const { return static_cast<int64_t>(indices.size()); }
};

inline std::vector<std::pair<int64_t, int64_t>> collapse_runs(const std::vector<int>& indices) {
  std::vector<std::pair<int64_t, int64_t>> runs;  // (start, length)
  for (size_t i = 0; i < indices.size();) {
    size_t j = i;
    while (j < indices.size() && indices[j] == indices[i]) ++j;
    runs.push_back({static_cast<int64_t>(i), static_cast<int64_t>(j - i)});
    i = j;
  }
  return runs;
}

// Run-length collapse of repeated consecutive codewords. Idempotent.
inline CodeSequence temporal_segmentation(const std::vector<int>& indices, const Tensor& codebook) {
  const int64_t V = codebook.shape()[0];
  for (int idx : indices)
    if (idx < 0 || idx >= V)
      throw std::invalid_argument("temporal_segmentation: index " + std::to_string(idx) +
                                  " outside codebook of size " + std::to_string(V));
  CodeSequence q;
  for (const auto& [start, len] : collapse_runs(indices)) {
    (void)len;
    q.indices.push_back(indices[static_cast<size_t>(start)]);
  }
  q.vectors = q.indices.empty() ? Tensor::zeros({0, codebook.shape()[1]})
                                : embedding_lookup(codebook, q.indices);
  return q;
}

// Training-path segmentation: code vectors are straight-through
// substitutions whose backward spreads the gradient uniformly over each
// collapsed run of encoder frames. Forward rows equal codebook rows
// bitwise. With st_enabled=false the vectors are constants.
inline CodeSequence segment_for_training(const Tensor& h, const Tensor& codebook,
                                         const std::vector<int>& indices, bool st_enabled) {
  CodeSequence q;
  auto runs = collapse_runs(indices);
  for (const auto& [start, len] : runs) {
    (void)len;
    q.indices.push_back(indices[static_cast<size_t>(start)]);
  }
  if (q.indices.empty()) {
    q.vectors = Tensor::zeros({0, codebook.shape()[1]});
    return q;
  }
  Tensor picked = embedding_lookup(codebook, q.indices);
  if (st_enabled) {
    q.vectors = straight_through(segment_mean(h, runs), picked);
  } else {
    q.vectors = Tensor::from(picked.shape(), picked.value());
  }
  return q;
}

// P(v | h_t) = softmax_v( -||h_t - e_v||_2 ): rows are distributions and
// the row argmax agrees with nearest_codewords under the lowest-index
// tie-break.
inline Tensor posterior(const Tensor& h, const Tensor& codebook) {
  return softmax_rows(neg_l2_distance(h, codebook));
}

// Number of frames CTC needs for a target: |target| plus one separating
// blank per adjacent equal pair.
inline int64_t ctc_min_frames(const std::vector<int>& target) {
  int64_t need = static_cast<int64_t>(target.size());
  for (size_t i = 1; i < target.size(); ++i)
    if (target[i] == target[i - 1]) ++need;
  return need;
}

// -log P(target | posteriorgram) marginalised over all blank-augmented
// alignments, computed by the standard forward dynamic program in log
// space. Differentiable with respect to the posteriorgram (and anything
// upstream of it).
inline Tensor ctc_loss(const Tensor& posteriorgram, const std::vector<int>& target,
                       int64_t blank_index) {
  if (posteriorgram.shape().size() != 2)
    throw std::invalid_argument("ctc_loss: posteriorgram must be 2-D, got " +
                                shape_str(posteriorgram.shape()));
  const int64_t T = posteriorgram.shape()[0], V = posteriorgram.shape()[1];
  for (int y : target) {
    if (y < 0 || y >= V)
      throw std::invalid_argument("ctc_loss: target label " + std::to_string(y) +
                                  " outside vocabulary of size " + std::to_string(V));
    if (y == blank_index)
      throw std::invalid_argument("ctc_loss: target contains the blank label");
  }
  const int64_t need = ctc_min_frames(target);
  if (T < need)
    throw std::invalid_argument("ctc_loss: infeasible target: T'=" + std::to_string(T) +
                                " frames but the target needs at least " + std::to_string(need));

  Tensor logp = log_t(posteriorgram);
  const int64_t S = static_cast<int64_t>(target.size());
  const int64_t L = 2 * S + 1;
  auto ext_label = [&](int64_t s) -> int64_t {
    return s % 2 == 0 ? blank_index : target[static_cast<size_t>(s / 2)];
  };

  const Tensor neg_inf = Tensor::scalar(-1e300);
  auto logp_at = [&](int64_t t, int64_t label) { return select(logp, t * V + label); };

  std::vector<Tensor> alpha(static_cast<size_t>(L), neg_inf);
  alpha[0] = logp_at(0, ext_label(0));
  if (L > 1) alpha[1] = logp_at(0, ext_label(1));

  for (int64_t t = 1; t < T; ++t) {
    std::vector<Tensor> next(static_cast<size_t>(L), neg_inf);
    for (int64_t s = 0; s < L; ++s) {
      // Unreachable states stay at -inf; skip to keep the graph small.
      if (s > 2 * t + 1) break;
      if (s < L - 2 * (T - t)) continue;
      Tensor acc = alpha[static_cast<size_t>(s)];
      if (s >= 1) acc = logaddexp(acc, alpha[static_cast<size_t>(s - 1)]);
      if (s >= 2 && ext_label(s) != blank_index && ext_label(s) != ext_label(s - 2))
        acc = logaddexp(acc, alpha[static_cast<size_t>(s - 2)]);
      next[static_cast<size_t>(s)] = add(acc, logp_at(t, ext_label(s)));
    }
    alpha = std::move(next);
  }

  Tensor total = alpha[static_cast<size_t>(L - 1)];
  if (L > 1) total = logaddexp(total, alpha[static_cast<size_t>(L - 2)]);
  return axpb(total, -1.0, 0.0);
}

// Per-frame argmax (lowest index on ties), collapse adjacent repeats,
// drop blanks.
inline std::vector<int> greedy_decode(const Tensor& posteriorgram, int64_t blank_index) {
  if (posteriorgram.shape().size() != 2)
    throw std::invalid_argument("greedy_decode: posteriorgram must be 2-D");
  const int64_t T = posteriorgram.shape()[0], V = posteriorgram.shape()[1];
  std::vector<int> out;
  int prev = -1;
  for (int64_t t = 0; t < T; ++t) {
    const double* row = posteriorgram.value().data() + t * V;
    int arg = 0;
    for (int64_t v = 1; v < V; ++v)
      if (row[v] > row[arg]) arg = static_cast<int>(v);
    if (arg != prev && arg != blank_index) out.push_back(arg);
    prev = arg;
  }
  return out;
}

// Q_pair: codeword rows retrieved for a ground-truth phoneme sequence.
// Adjacent repeated phonemes stay distinct entries; blank is not allowed.
inline CodeSequence text_to_codes(const std::vector<std::string>& phonemes,
                                  const PhonemeInventory& inventory, const Tensor& codebook) {
  CodeSequence q;
  for (const auto& s : phonemes) {
    const int64_t idx = inventory.index_of(s);
    if (idx < 0) throw std::invalid_argument("text_to_codes: unknown symbol '" + s + "'");
    if (idx == inventory.blank_index())
      throw std::invalid_argument("text_to_codes: blank symbol not allowed in input");
    q.indices.push_back(static_cast<int>(idx));
  }
  q.vectors = q.indices.empty() ? Tensor::zeros({0, codebook.shape()[1]})
                                : embedding_lookup(codebook, q.indices);
  return q;
}

}  // namespace vqtts
