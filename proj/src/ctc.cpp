#include "avg/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "avg/error.hpp"

namespace avg::ctc {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double lse2(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}
double lse3(double a, double b, double c) { return lse2(lse2(a, b), c); }

// Row-wise log softmax into a fresh tensor.
Tensor log_softmax(const Tensor& x) {
  Tensor out(x.shape());
  int64_t T = x.dim(0), K = x.dim(1);
  for (int64_t t = 0; t < T; ++t) {
    double m = x.at(t, 0);
    for (int64_t k = 1; k < K; ++k) m = std::max(m, x.at(t, k));
    double z = 0.0;
    for (int64_t k = 0; k < K; ++k) z += std::exp(x.at(t, k) - m);
    double lz = m + std::log(z);
    for (int64_t k = 0; k < K; ++k) out.at(t, k) = x.at(t, k) - lz;
  }
  return out;
}

}  // namespace

ag::Var ctc_loss(const ag::Var& logits, const std::vector<int64_t>& target, int64_t blank) {
  const Tensor& X = logits.value();
  AVG_CHECK(X.ndim() == 2, ContractError, "ctc_loss expects [T, K] logits");
  int64_t T = X.dim(0), K = X.dim(1);
  AVG_CHECK(T >= 1 && K >= 2, ContractError, "ctc_loss needs at least one frame, two classes");
  AVG_CHECK(blank >= 0 && blank < K, ContractError, "blank id out of range");
  int64_t U = int64_t(target.size());
  int64_t repeats = 0;
  for (int64_t i = 0; i < U; ++i) {
    AVG_CHECK(target[size_t(i)] >= 0 && target[size_t(i)] < K && target[size_t(i)] != blank,
              ContractError, "ctc target symbol out of range");
    if (i > 0 && target[size_t(i)] == target[size_t(i - 1)]) ++repeats;
  }
  AVG_CHECK(T >= U + repeats, CtcInfeasibleError,
            "no length-" + std::to_string(T) + " alignment can emit " + std::to_string(U) +
                " symbols with " + std::to_string(repeats) + " repeats");

  // Extended label row: blank, t0, blank, t1, ..., blank.
  int64_t S = 2 * U + 1;
  std::vector<int64_t> lab(size_t(S), blank);
  for (int64_t i = 0; i < U; ++i) lab[size_t(2 * i + 1)] = target[size_t(i)];
  auto skip_ok = [&](int64_t s) {
    return lab[size_t(s)] != blank && s >= 2 && lab[size_t(s)] != lab[size_t(s - 2)];
  };

  Tensor lp = log_softmax(X);
  Tensor alpha({T, S});
  for (int64_t i = 0; i < alpha.numel(); ++i) alpha[i] = kNegInf;
  alpha.at(0, 0) = lp.at(0, blank);
  if (S > 1) alpha.at(0, 1) = lp.at(0, lab[1]);
  for (int64_t t = 1; t < T; ++t) {
    // States reachable now and still able to finish on time.
    int64_t s_lo = std::max<int64_t>(0, S - 2 * (T - t));
    int64_t s_hi = std::min(S, 2 * (t + 1));
    for (int64_t s = s_lo; s < s_hi; ++s) {
      double acc = alpha.at(t - 1, s);
      if (s >= 1) acc = lse2(acc, alpha.at(t - 1, s - 1));
      if (skip_ok(s)) acc = lse2(acc, alpha.at(t - 1, s - 2));
      alpha.at(t, s) = acc + lp.at(t, lab[size_t(s)]);
    }
  }
  double log_p = alpha.at(T - 1, S - 1);
  if (S > 1) log_p = lse2(log_p, alpha.at(T - 1, S - 2));
  AVG_CHECK(std::isfinite(log_p), NumericError, "ctc forward produced a non-finite value");

  Tensor value = Tensor::scalar(-log_p);
  if (!ag::grad_enabled() || !logits.requires_grad()) return ag::Var::constant(std::move(value));

  auto lab_c = std::make_shared<std::vector<int64_t>>(lab);
  auto alpha_c = std::make_shared<Tensor>(std::move(alpha));
  auto lp_c = std::make_shared<Tensor>(std::move(lp));
  return ag::make_custom(
      {logits}, std::move(value),
      [lab_c, alpha_c, lp_c, T, S, K, log_p, blank](const Tensor& gout,
                                                    const std::vector<ag::NodeRef>&,
                                                    const std::vector<Tensor*>& grads) {
        if (!grads[0]) return;
        const std::vector<int64_t>& lab = *lab_c;
        const Tensor& alpha = *alpha_c;
        const Tensor& lp = *lp_c;
        auto skip_ok = [&](int64_t s) {
          return lab[size_t(s)] != blank && s >= 2 && lab[size_t(s)] != lab[size_t(s - 2)];
        };
        Tensor beta({T, S});
        for (int64_t i = 0; i < beta.numel(); ++i) beta[i] = kNegInf;
        beta.at(T - 1, S - 1) = lp.at(T - 1, lab[size_t(S - 1)]);
        if (S > 1) beta.at(T - 1, S - 2) = lp.at(T - 1, lab[size_t(S - 2)]);
        for (int64_t t = T - 2; t >= 0; --t) {
          for (int64_t s = 0; s < S; ++s) {
            double acc = beta.at(t + 1, s);
            if (s + 1 < S) acc = lse2(acc, beta.at(t + 1, s + 1));
            if (s + 2 < S && skip_ok(s + 2)) acc = lse2(acc, beta.at(t + 1, s + 2));
            beta.at(t, s) = acc + lp.at(t, lab[size_t(s)]);
          }
        }
        double g = gout[0];
        Tensor& gl = *grads[0];
        for (int64_t t = 0; t < T; ++t) {
          std::vector<double> post(size_t(K), 0.0);
          for (int64_t s = 0; s < S; ++s) {
            double a = alpha.at(t, s), b = beta.at(t, s);
            if (a == kNegInf || b == kNegInf) continue;
            post[size_t(lab[size_t(s)])] +=
                std::exp(a + b - lp.at(t, lab[size_t(s)]) - log_p);
          }
          for (int64_t k = 0; k < K; ++k)
            gl.at(t, k) += g * (std::exp(lp.at(t, k)) - post[size_t(k)]);
        }
      });
}

ag::Var attention_ce_loss(const ag::Var& logits, const std::vector<int64_t>& labels,
                          double smoothing, const std::vector<uint8_t>& row_mask) {
  const Tensor& X = logits.value();
  AVG_CHECK(X.ndim() == 2, ContractError, "attention_ce_loss expects [N, K] logits");
  int64_t N = X.dim(0), K = X.dim(1);
  AVG_CHECK(int64_t(labels.size()) == N, ContractError, "one label per logit row required");
  AVG_CHECK(smoothing >= 0.0 && smoothing < 1.0, ContractError,
            "label smoothing must lie in [0, 1)");
  AVG_CHECK(row_mask.empty() || int64_t(row_mask.size()) == N, ContractError,
            "row mask length mismatch");

  std::vector<int64_t> rows;
  for (int64_t i = 0; i < N; ++i) {
    AVG_CHECK(labels[size_t(i)] >= 0 && labels[size_t(i)] < K, ContractError,
              "label id out of range");
    if (row_mask.empty() || row_mask[size_t(i)]) rows.push_back(i);
  }
  AVG_CHECK(!rows.empty(), ContractError, "attention_ce_loss: every row is masked out");

  // Smoothed target distribution as a constant weight matrix; the loss is
  // -mean_rows sum_k q[k] logp[k] = sum((-q/N_rows) * logp).
  Tensor w({N, K});
  double off = K > 1 ? smoothing / double(K - 1) : 0.0;
  double scale = -1.0 / double(rows.size());
  for (int64_t i : rows) {
    for (int64_t k = 0; k < K; ++k) w.at(i, k) = off * scale;
    w.at(i, labels[size_t(i)]) = (1.0 - smoothing) * scale;
  }
  return ag::sum(ag::mul_const(ag::log_softmax_rows(logits), w));
}

ag::Var av_loss(const ag::Var& ctc_term, const ag::Var& ce_term, double ctc_share,
                double ce_share) {
  AVG_CHECK(ctc_share >= 0.0 && ce_share >= 0.0, ContractError,
            "loss shares must be nonnegative");
  return ag::add(ag::mul_scalar(ctc_term, ctc_share), ag::mul_scalar(ce_term, ce_share));
}

}  // namespace avg::ctc
