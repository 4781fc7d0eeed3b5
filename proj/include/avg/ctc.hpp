#pragma once

#include <cstdint>
#include <vector>

#include "avg/autograd.hpp"
#include "avg/tensor.hpp"

namespace avg::ctc {

// Negative log-likelihood of `target` under the standard collapse rule
// (merge repeats, then drop blanks) marginalized over all alignments of
// length T. `logits` are raw scores [T, K]; rows are soft-maxed internally.
// Throws CtcInfeasibleError when no alignment of length T can emit the
// target (T < len + repeated-pair count); NumericError on non-finite math.
ag::Var ctc_loss(const ag::Var& logits, const std::vector<int64_t>& target, int64_t blank);

// Smoothed per-row cross entropy, averaged over rows: the label keeps
// probability 1 - smoothing, the rest spreads evenly over other classes.
// `labels[i]` scores row i; rows may be dropped with `row_mask` (0 = skip).
ag::Var attention_ce_loss(const ag::Var& logits, const std::vector<int64_t>& labels,
                          double smoothing, const std::vector<uint8_t>& row_mask = {});

// Perceptual speech loss: ctc_share * ctc + ce_share * ce.
ag::Var av_loss(const ag::Var& ctc_term, const ag::Var& ce_term, double ctc_share,
                double ce_share);

}  // namespace avg::ctc
