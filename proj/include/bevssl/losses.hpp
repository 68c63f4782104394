#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bevssl/error.hpp"
#include "bevssl/tensor.hpp"

namespace bevssl {

// Two ways to extend focal loss to soft targets; they agree for y in {0, 1}.
// modulated: a_t (1 - p_t)^g BCE(p, y) with p_t = p y + (1-p)(1-y) and
//            a_t = a y + (1-a)(1-y). Its minimiser lies further from 0.5 than y.
// symmetric: -[a y (1-p)^g log p + (1-a) (1-y) p^g log(1-p)]. Its minimiser
//            lies closer to 0.5 than y, so repeated self-training decays.
enum class FocalForm { modulated, symmetric };

inline FocalForm parse_focal_form(const std::string& s) {
  if (s == "modulated") return FocalForm::modulated;
  if (s == "symmetric") return FocalForm::symmetric;
  throw ConfigError("unknown focal form '" + s + "' (expected modulated or symmetric)");
}

inline const char* focal_form_name(FocalForm f) { return f == FocalForm::modulated ? "modulated" : "symmetric"; }

struct LossWeights {
  double w_cls = 1.0;
  double w_feat = 0.25;
  double rampup_fraction = 1.0 / 3.0;
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
  FocalForm focal_form = FocalForm::modulated;

  void validate() const {
    if (w_cls < 0.0 || w_feat < 0.0 || focal_gamma < 0.0 || focal_alpha < 0.0 || focal_alpha > 1.0) {
      throw ConfigError("loss weights: weights and focal parameters must be non-negative (alpha <= 1)");
    }
    if (!(rampup_fraction > 0.0 && rampup_fraction <= 1.0)) throw ConfigError("loss weights: rampup_fraction must be in (0, 1]");
  }
};

// Per element inclusion flags (non-zero = included), same layout as the
// prediction tensor.
using LossMask = std::vector<std::uint8_t>;

// Elementwise AND; an empty `b` means no restriction.
inline LossMask combine_masks(LossMask a, const LossMask& b) {
  if (b.empty()) return a;
  if (a.size() != b.size()) throw ContractError("combine_masks: size mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = a[i] && b[i];
  return a;
}

struct FocalResult {
  Tensor loss;
  std::size_t included = 0;
  bool empty = false;
};

// Mean over included elements of the focal term (see FocalForm), with the
// log argument clamped at 1e-12. Excluded elements are replaced by zero after
// the elementwise terms, so their values never reach the sum.
inline FocalResult focal_loss(const Tensor& p, const Tensor& y, const LossMask* include, double gamma, double alpha,
                              FocalForm form = FocalForm::modulated) {
  if (p.shape() != y.shape()) {
    throw ConfigError("focal_loss: prediction " + shape_str(p.shape()) + " vs target " + shape_str(y.shape()));
  }
  if (include && include->size() != p.size()) throw ConfigError("focal_loss: mask size does not match prediction");
  FocalResult r;
  r.included = p.size();
  std::vector<std::uint8_t> exclude;
  if (include) {
    exclude.resize(include->size());
    r.included = 0;
    for (std::size_t i = 0; i < include->size(); ++i) {
      exclude[i] = (*include)[i] ? 0 : 1;
      r.included += (*include)[i] ? 1 : 0;
    }
  }
  if (r.included == 0) {
    r.empty = true;
    r.loss = Tensor::scalar(0.0);
    return r;
  }
  const Tensor ones = Tensor::full(p.shape(), 1.0);
  const Tensor yd = y.detach();
  const Tensor q = op::sub(ones, p);
  const Tensor y_neg = op::sub(ones, yd);
  Tensor term;
  if (form == FocalForm::symmetric) {
    const Tensor pos = op::mul(op::mul(yd, op::pow(q, gamma)), op::log(p));
    const Tensor neg = op::mul(op::mul(y_neg, op::pow(p, gamma)), op::log(q));
    term = op::add(op::scale(pos, alpha), op::scale(neg, 1.0 - alpha));
  } else {
    // 1 - p_t = y (1 - p) + (1 - y) p, both terms non-negative
    const Tensor miss = op::add(op::mul(yd, q), op::mul(y_neg, p));
    const Tensor ll = op::add(op::mul(yd, op::log(p)), op::mul(y_neg, op::log(q)));
    const Tensor a_t = op::add(op::scale(yd, alpha), op::scale(y_neg, 1.0 - alpha));
    term = op::mul(op::mul(a_t, op::pow(miss, gamma)), ll);
  }
  if (r.included != p.size()) term = op::masked_fill(term, std::move(exclude));
  r.loss = op::scale(op::sum(term), -1.0 / static_cast<double>(r.included));
  return r;
}

enum class FeatureLoss { mse, cosine };

inline FeatureLoss parse_feature_loss(const std::string& s) {
  if (s == "mse") return FeatureLoss::mse;
  if (s == "cos" || s == "cosine") return FeatureLoss::cosine;
  throw ConfigError("unknown feature loss '" + s + "' (expected mse or cosine)");
}

// Consistency between student and teacher features [N, C, H, W]. The teacher
// side is detached. Cosine: mean over cells of (1 - cos), where cells with a
// zero vector on either side contribute 0.
inline Tensor feature_similarity_loss(const Tensor& z_s, const Tensor& z_t, FeatureLoss mode) {
  if (z_s.shape() != z_t.shape()) {
    throw ConfigError("feature_similarity_loss: " + shape_str(z_s.shape()) + " vs " + shape_str(z_t.shape()));
  }
  const Tensor t = z_t.detach();
  if (mode == FeatureLoss::mse) {
    const Tensor d = op::sub(z_s, t);
    return op::mean(op::mul(d, d));
  }
  if (z_s.rank() != 4) throw ConfigError("feature_similarity_loss: cosine mode needs [N, C, H, W]");
  const Tensor cos = op::cosine_similarity(z_s, t);
  const std::size_t n = z_s.dim(0), c = z_s.dim(1), hw = z_s.dim(2) * z_s.dim(3);
  std::vector<std::uint8_t> zero(n * hw, 0);
  bool any = false;
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < hw; ++i) {
      bool s_zero = true, t_zero = true;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t k = (b * c + ch) * hw + i;
        s_zero = s_zero && z_s[k] == 0.0;
        t_zero = t_zero && t[k] == 0.0;
      }
      zero[b * hw + i] = s_zero || t_zero;
      any = any || zero[b * hw + i];
    }
  }
  Tensor term = op::sub(Tensor::full(cos.shape(), 1.0), cos);
  if (any) term = op::masked_fill(term, std::move(zero));
  return op::mean(term);
}

// base * min(1, step / (fraction * total)).
inline double rampup_weight(long step, long total_steps, double base, double fraction = 1.0 / 3.0) {
  if (total_steps <= 0) throw ContractError("rampup_weight: total_steps must be positive");
  if (step < 0 || step > total_steps) {
    throw ContractError("rampup_weight: step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) + "]");
  }
  const double r = static_cast<double>(step) / (fraction * static_cast<double>(total_steps));
  return base * (r < 1.0 ? r : 1.0);
}

struct LossBreakdown {
  Tensor total;
  double sup = 0.0;   // sum of supervised terms
  double cls = 0.0;   // sum of unlabelled classification terms (unweighted)
  double feat = 0.0;  // sum of feature terms (unweighted)
  double w_cls = 0.0; // ramped weights used
  double w_feat = 0.0;
};

// l = sum l_sup + sum (w_cls~ l_cls + w_feat~ l_feat). Terms whose ramped
// weight is zero are left out of the graph entirely.
inline LossBreakdown total_loss(const std::vector<Tensor>& sup, const std::vector<Tensor>& cls,
                                const std::vector<Tensor>& feat, const LossWeights& w, long step, long total_steps) {
  if (sup.empty()) throw ContractError("total_loss: at least one supervised term is required");
  LossBreakdown b;
  b.w_cls = rampup_weight(step, total_steps, w.w_cls, w.rampup_fraction);
  b.w_feat = rampup_weight(step, total_steps, w.w_feat, w.rampup_fraction);
  Tensor total;
  auto accumulate = [&total](const Tensor& t) { total = total.defined() ? op::add(total, t) : t; };
  for (const Tensor& t : sup) {
    b.sup += t.item();
    accumulate(t);
  }
  for (const Tensor& t : cls) {
    b.cls += t.item();
    if (b.w_cls > 0.0) accumulate(op::scale(t, b.w_cls));
  }
  for (const Tensor& t : feat) {
    b.feat += t.item();
    if (b.w_feat > 0.0) accumulate(op::scale(t, b.w_feat));
  }
  b.total = total;
  return b;
}

}  // namespace bevssl
