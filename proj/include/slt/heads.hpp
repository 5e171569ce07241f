#pragma once
// Reasoning heads on top of the video model: a self-supervised object
// prediction loss (mask some slots' latents late in the sequence and demand
// the temporal transform restore them), a classification task head (gated
// transformer over a CLS token + per-slot context rows + auxiliary embeds,
// CLS output into an MLP), cross-entropy, and the weighted total loss.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "model.hpp"

namespace slt {

struct HeadsConfig {
  int64_t embed = 0;              // 0 -> c_context
  int64_t tf_layers = 2;
  int64_t tf_heads = 2;
  int64_t pos_fourier_order = 3;  // absolute position encodings
  std::vector<int64_t> mlp_hidden{256, 256};
  int64_t label_size = 36;
  bool use_mask_embed = true;
  bool use_frame_embeds = true;
  int64_t object_mask_steps = 0;  // 0 -> T/2 (T must then be even)
  int64_t object_targets = 0;     // 0 -> every masked step is a target

  int64_t embed_size(int64_t c_context) const {
    return embed > 0 ? embed : c_context;
  }
};

struct LossWeights {
  double gen = 1.0;
  double object = 1.0;
  double qa = 1.0;
  double question = 0.0;  // question prediction is out of scope
};

// Draw `s` distinct values from {0..k-1} (partial Fisher-Yates).
inline std::vector<int64_t> draw_slots(int64_t k, int64_t s, Rng& rng) {
  check(s >= 1 && s < k, "draw_slots: need 1 <= s < k, got s=", s, " k=", k);
  std::vector<int64_t> idx(static_cast<size_t>(k));
  std::iota(idx.begin(), idx.end(), 0);
  for (int64_t i = 0; i < s; ++i) {
    int64_t j = i + rng.next_below(k - i);
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
  }
  idx.resize(static_cast<size_t>(s));
  return idx;
}

// Self-supervision: for s in {1,2,3} (capped at K-1), zero s randomly drawn
// slots over the last `mask_steps` steps, run the masked latents once through
// the shared temporal transform, and sum per-step L2 norms between its
// output and the true latents (targets held constant) over the masked slots
// at every target step.  The three runs are summed.  K=1 has nothing to
// mask, so the loss is an empty sum.
//
// `frozen_targets`, when given, replaces the (stopped-gradient) copy of z_k
// as the prediction target.  Training never needs it; finite-difference
// verification does: re-evaluating the loss under perturbed parameters moves
// the stopped branch too, so the difference quotient measures a total
// derivative while backprop reports the partial one that optimization
// actually follows.  Freezing the target values at the base point makes the
// two agree by construction.
template <typename S>
Tensor<S> object_prediction_loss(const SlotTransformer<S>& model,
                                 const Tensor<S>& z_k, Rng& rng,
                                 const HeadsConfig& cfg = {},
                                 const Tensor<S>* frozen_targets = nullptr) {
  check(z_k.rank() == 3, "object loss: latents must be [T,K,C], got ",
        shape_str(z_k.shape()));
  const int64_t t = z_k.dim(0), k = z_k.dim(1);
  int64_t m = cfg.object_mask_steps;
  if (m == 0) {
    check(t % 2 == 0, "object loss: T=", t,
          " is odd; default masking covers the last T/2 steps");
    m = t / 2;
  }
  check(m >= 1 && m < t, "object loss: mask_steps=", m,
        " out of range for T=", t);

  Tensor<S> target = frozen_targets ? *frozen_targets : detach(z_k);
  check(target.shape() == z_k.shape(), "object loss: target shape ",
        shape_str(target.shape()), " vs latents ", shape_str(z_k.shape()));
  Tensor<S> loss = Tensor<S>::zeros({1});
  for (int64_t s = 1; s <= std::min<int64_t>(3, k - 1); ++s) {
    auto slots = draw_slots(k, s, rng);

    std::vector<S> keep(static_cast<size_t>(t * k), S(1));
    std::vector<S> sel(static_cast<size_t>(k), S(0));
    for (int64_t slot : slots) {
      sel[static_cast<size_t>(slot)] = S(1);
      for (int64_t step = t - m; step < t; ++step)
        keep[static_cast<size_t>(step * k + slot)] = S(0);
    }
    auto keep_t = Tensor<S>::from_data({t, k, 1}, std::move(keep));
    auto sel_t = Tensor<S>::from_data({1, k, 1}, std::move(sel));

    auto z_pred = model.temporal(mul(z_k, keep_t));
    auto diff = sub(z_pred, target);
    // Squared norm per step, restricted to the masked slots.
    auto per_step = sum(mul(mul(diff, diff), sel_t), {1, 2});  // [T]

    std::vector<int64_t> targets(static_cast<size_t>(m));
    std::iota(targets.begin(), targets.end(), t - m);
    if (cfg.object_targets > 0 &&
        cfg.object_targets < static_cast<int64_t>(targets.size())) {
      for (int64_t i = 0; i < cfg.object_targets; ++i) {
        int64_t j = i + rng.next_below(m - i);
        std::swap(targets[static_cast<size_t>(i)],
                  targets[static_cast<size_t>(j)]);
      }
      targets.resize(static_cast<size_t>(cfg.object_targets));
    }
    for (int64_t step : targets)
      loss = add(loss, sqrt_t(slice(per_step, 0, step, 1)));
  }
  return sum_all(loss);
}

// Classification head.  The input sequence is
//   [CLS token, context rows (T*K), mask embeds (T*K, optional),
//    first-frame embed, last-frame embed]
// run through a gated transformer with absolute position encodings; the CLS
// row's output feeds an MLP that emits the logits.
template <typename S>
struct TaskHead {
  HeadsConfig cfg;
  Tensor<S> token_bias;    // [1,embed]; the token is ones + bias
  Linear<S> ctx_proj;      // c_context -> embed
  Linear<S> mask_proj;     // 1 -> embed
  Linear<S> frame_proj;    // flattened encoder frame -> embed (shared)
  ContextTransformer<S> tf;
  Mlp<S> mlp;

  TaskHead() = default;
  TaskHead(ParamStore<S>& ps, const std::string& prefix, int64_t c_context,
           int64_t frame_flat_dim, const HeadsConfig& config, Rng& rng)
      : cfg(config) {
    int64_t e = cfg.embed_size(c_context);
    token_bias = ps.create_zeros(prefix + ".token_bias", {1, e});
    ctx_proj = Linear<S>(ps, prefix + ".ctx_proj", c_context, e, rng);
    if (cfg.use_mask_embed)
      mask_proj = Linear<S>(ps, prefix + ".mask_proj", 1, e, rng);
    if (cfg.use_frame_embeds)
      frame_proj = Linear<S>(ps, prefix + ".frame_proj", frame_flat_dim, e, rng);
    SlotCoreConfig tcfg;
    tcfg.c_context = e;
    tcfg.tf_layers = cfg.tf_layers;
    tcfg.tf_heads = cfg.tf_heads;
    tcfg.time_fourier_order = cfg.pos_fourier_order;
    tf = ContextTransformer<S>(ps, prefix + ".tf", tcfg, rng);
    std::vector<int64_t> sizes = cfg.mlp_hidden;
    sizes.push_back(cfg.label_size);
    mlp = Mlp<S>(ps, prefix + ".mlp", e, sizes, rng);
  }

  // c_k: [T,K,C] final context; masks: [T,K,H,W,1]; e_raw: [T,H',W',E].
  Tensor<S> build_input(const Tensor<S>& c_k, const Tensor<S>& masks,
                        const Tensor<S>& e_raw) const {
    const int64_t t = c_k.dim(0), k = c_k.dim(1);
    int64_t e = token_bias.dim(1);
    std::vector<Tensor<S>> rows;
    rows.push_back(add(Tensor<S>::filled({1, e}, S(1)), token_bias));
    rows.push_back(ctx_proj(reshape(c_k, {t * k, c_k.dim(2)})));
    if (cfg.use_mask_embed) {
      check(masks.rank() == 5, "task head: masks must be [T,K,H,W,1], got ",
            shape_str(masks.shape()));
      auto pooled = scale(sum(masks, {2, 3}),
                          S(1) / static_cast<S>(masks.dim(2) * masks.dim(3)));
      rows.push_back(mask_proj(reshape(pooled, {t * k, 1})));
    }
    if (cfg.use_frame_embeds) {
      check(e_raw.rank() == 4 && e_raw.dim(0) == t,
            "task head: frame features must be [T,H',W',E], got ",
            shape_str(e_raw.shape()));
      int64_t f = e_raw.numel() / t;
      rows.push_back(frame_proj(reshape(slice(e_raw, 0, 0, 1), {1, f})));
      rows.push_back(frame_proj(reshape(slice(e_raw, 0, t - 1, 1), {1, f})));
    }
    return concat<S>(rows, 0);  // [L,embed]
  }

  // Logits for one sequence: [label_size].
  Tensor<S> operator()(const Tensor<S>& c_k, const Tensor<S>& masks,
                       const Tensor<S>& e_raw) const {
    auto input = build_input(c_k, masks, e_raw);
    int64_t l = input.dim(0), e = input.dim(1);
    auto y = tf(reshape(input, {l, 1, e}));     // position basis rides axis 0
    auto cls = reshape(slice(y, 0, 0, 1), {1, e});
    return reshape(mlp(cls), {cfg.label_size});
  }
};

// Softmax cross-entropy against an integer label.
template <typename S>
Tensor<S> qa_loss(const Tensor<S>& logits, int64_t label) {
  check(logits.rank() == 1, "qa_loss: logits must be rank 1, got ",
        shape_str(logits.shape()));
  check(label >= 0 && label < logits.dim(0), "qa_loss: label ", label,
        " out of range [0,", logits.dim(0), ")");
  return sum_all(neg(slice(log_softmax(logits, 0), 0, label, 1)));
}

// Eq-style weighted combination; the question loss is out of scope, so its
// weight must stay zero.
template <typename S>
Tensor<S> total_loss(const Tensor<S>& loss_gen, const Tensor<S>& loss_object,
                     const Tensor<S>& loss_qa, const LossWeights& w) {
  check(w.gen >= 0 && w.object >= 0 && w.qa >= 0,
        "total_loss: weights must be non-negative");
  check(w.question == 0, "total_loss: question loss is not implemented; "
        "its weight must be 0");
  return add(add(scale(loss_gen, static_cast<S>(w.gen)),
                 scale(loss_object, static_cast<S>(w.object))),
             scale(loss_qa, static_cast<S>(w.qa)));
}

}  // namespace slt
