#pragma once

// Slot-context lifecycle: tiled Gaussian initialization, the shared query
// MLP, slot attention (softmax across slots, then a per-slot weighted-mean
// renormalization over pixels), a GRU-style gated update, and the per-slot
// temporal transformer that mixes information across time.  A deep-LSTM
// variant of the temporal stage is provided as an ablation.

#include <cmath>
#include <string>
#include <vector>

#include "encoder.hpp"
#include "module.hpp"
#include "ops.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace slt {

struct SlotCoreConfig {
  int64_t k_slots = 4;
  int64_t c_context = 32;
  // Query MLP layer widths; empty means {2*c_context, 2*c_context}.
  std::vector<int64_t> query_hidden = {};
  int64_t tf_layers = 2;
  int64_t tf_heads = 2;
  int64_t tf_mlp_hidden = 0;  // 0 -> 2*(transformer width)
  // Internal transformer width; 0 ties it to c_context.  Decoupling it keeps
  // the attention/MLP stacks at a fixed size when the slot width changes
  // (e.g. capacity-matched single-slot ablations).
  int64_t tf_width = 0;
  int64_t time_fourier_order = 3;
  double attn_dropout = 0.0;  // applied to attention weights when an Rng is passed
  // The temporal transformer is bidirectional.  This flag exists only so
  // tests can prove that masking would change the answer.
  bool causal_mask = false;
  // The candidate state h = tanh(W_hc c + W_ha a + b_h) does not consume the
  // reset gate by default; setting this applies h = tanh(W_hc (r*c) + ...).
  bool use_reset_gate = false;
  int64_t lstm_layers = 4;
  int64_t lstm_hidden = 0;  // 0 -> 2*c_context

  std::vector<int64_t> query_sizes() const {
    if (!query_hidden.empty()) return query_hidden;
    return {2 * c_context, 2 * c_context};
  }
  int64_t tf_dim() const { return tf_width > 0 ? tf_width : c_context; }
  int64_t mlp_hidden() const {
    return tf_mlp_hidden > 0 ? tf_mlp_hidden : 2 * tf_dim();
  }
  int64_t lstm_width() const {
    return lstm_hidden > 0 ? lstm_hidden : 2 * c_context;
  }
};

// Tile a [K,C] noise draw over T steps -> [T,K,C].  The draw is provided by
// the caller so that all randomness flows through explicit streams.
template <typename S>
Tensor<S> init_context(const Tensor<S>& noise, int64_t t) {
  check(noise.rank() == 2, "init_context: noise must be [K,C], got ",
        shape_str(noise.shape()));
  check(t > 0, "init_context: nonpositive T ", t);
  int64_t k = noise.dim(0), c = noise.dim(1);
  return broadcast_to(reshape(noise, {1, k, c}), {t, k, c});
}

// Flatten [T,H,W,D] features to [T,H*W,D] pixel rows for attention.
template <typename S>
Tensor<S> flatten_pixels(const Tensor<S>& e) {
  check(e.rank() == 4, "flatten_pixels: want [T,H,W,D], got ",
        shape_str(e.shape()));
  return reshape(e, {e.dim(0), e.dim(1) * e.dim(2), e.dim(3)});
}

template <typename S>
struct SlotAttentionOut {
  Tensor<S> a;            // [T,K,C] readout
  Tensor<S> weights_pre;  // [T,P,K], sums to 1 across slots per pixel
  Tensor<S> weights;      // [T,P,K], sums to 1 across pixels per slot
};

// Queries attend over pixel keys/values independently at every time step.
// The softmax runs across the slot axis so slots compete per pixel; the
// weights are then renormalized per slot before the value sum.
template <typename S>
struct SlotAttention {
  Tensor<S> wq, bq, wk, bk, wv, bv;
  int64_t c = 0;

  SlotAttention() = default;
  SlotAttention(ParamStore<S>& ps, const std::string& prefix, int64_t q_dim,
                int64_t e_dim, int64_t c_context, Rng& rng)
      : wq(ps.create_gaussian(prefix + ".wq", {q_dim, c_context}, rng)),
        bq(ps.create_zeros(prefix + ".bq", {c_context})),
        wk(ps.create_gaussian(prefix + ".wk", {e_dim, c_context}, rng)),
        bk(ps.create_zeros(prefix + ".bk", {c_context})),
        wv(ps.create_gaussian(prefix + ".wv", {e_dim, c_context}, rng)),
        bv(ps.create_zeros(prefix + ".bv", {c_context})),
        c(c_context) {}

  // q: [T,K,Dq] queries, e: [T,P,De] pixel features (basis already appended).
  SlotAttentionOut<S> operator()(const Tensor<S>& q, const Tensor<S>& e) const {
    check(q.rank() == 3 && e.rank() == 3, "slot_attention: ranks ",
          shape_str(q.shape()), " / ", shape_str(e.shape()));
    check(q.dim(0) == e.dim(0), "slot_attention: time mismatch ", q.dim(0),
          " vs ", e.dim(0));
    auto qp = add(matmul(q, wq), bq);  // [T,K,C]
    auto kp = add(matmul(e, wk), bk);  // [T,P,C]
    auto vp = add(matmul(e, wv), bv);  // [T,P,C]
    S inv_scale = S(1) / static_cast<S>(std::sqrt(static_cast<double>(c)));
    auto logits = scale(bmm(kp, qp, false, true), inv_scale);  // [T,P,K]
    auto pre = softmax(logits, 2);
    auto denom = sum(pre, {1}, /*keepdims=*/true);  // [T,1,K]
    auto w = div(pre, denom);
    auto a = bmm(w, vp, true, false);  // [T,K,C]
    return {a, pre, w};
  }
};

// GRU-style gated merge of a context row with an update row, with an
// optional trailing layer norm.  The reset gate r is always computed so the
// parameter set is stable, but by default the candidate state ignores it.
template <typename S>
struct GateCell {
  Tensor<S> w_zc, w_za, b_z, w_rc, w_ra, b_r, w_hc, w_ha, b_h;
  bool use_reset = false;
  bool final_ln = true;

  GateCell() = default;
  GateCell(ParamStore<S>& ps, const std::string& prefix, int64_t dim, Rng& rng,
           bool use_reset_gate = false, bool with_final_ln = true)
      : w_zc(ps.create_gaussian(prefix + ".w_zc", {dim, dim}, rng)),
        w_za(ps.create_gaussian(prefix + ".w_za", {dim, dim}, rng)),
        b_z(ps.create_zeros(prefix + ".b_z", {dim})),
        w_rc(ps.create_gaussian(prefix + ".w_rc", {dim, dim}, rng)),
        w_ra(ps.create_gaussian(prefix + ".w_ra", {dim, dim}, rng)),
        b_r(ps.create_zeros(prefix + ".b_r", {dim})),
        w_hc(ps.create_gaussian(prefix + ".w_hc", {dim, dim}, rng)),
        w_ha(ps.create_gaussian(prefix + ".w_ha", {dim, dim}, rng)),
        b_h(ps.create_zeros(prefix + ".b_h", {dim})),
        use_reset(use_reset_gate),
        final_ln(with_final_ln) {}

  Tensor<S> operator()(const Tensor<S>& ctx, const Tensor<S>& a) const {
    auto z = sigmoid(add(add(matmul(ctx, w_zc), matmul(a, w_za)), b_z));
    auto r = sigmoid(add(add(matmul(ctx, w_rc), matmul(a, w_ra)), b_r));
    auto h_in = use_reset ? mul(r, ctx) : ctx;
    auto h = tanh_t(add(add(matmul(h_in, w_hc), matmul(a, w_ha)), b_h));
    auto out = add(mul(add_scalar(neg(z), S(1)), ctx), mul(z, h));
    return final_ln ? layer_norm(out) : out;
  }
};

// Per-slot temporal transformer.  Every slot's T-step sequence runs through
// the same weights with Fourier time encodings concatenated to the input;
// sublayers are layernorm-first and merged through GRU-style gates.  There
// is no attention mask: each step sees the whole sequence.
template <typename S>
struct ContextTransformer {
  struct Layer {
    Tensor<S> wq, bq, wk, bk, wv, bv, wo, bo;
    GateCell<S> att_gate, mlp_gate;
    Mlp<S> mlp;
  };

  SlotCoreConfig cfg;
  Linear<S> in_proj;
  std::vector<Layer> layers;
  Linear<S> out_proj;  // only when the internal width differs from c_context
  mutable int64_t call_count = 0;

  ContextTransformer() = default;
  ContextTransformer(ParamStore<S>& ps, const std::string& prefix,
                     const SlotCoreConfig& config, Rng& rng)
      : cfg(config) {
    int64_t c = cfg.tf_dim();
    check(c % cfg.tf_heads == 0, "context transformer: width ", c,
          " not divisible by ", cfg.tf_heads, " heads");
    int64_t tb = 1 + 2 * cfg.time_fourier_order;
    in_proj = Linear<S>(ps, prefix + ".in_proj", cfg.c_context + tb, c, rng);
    for (int64_t l = 0; l < cfg.tf_layers; ++l) {
      std::string lp = prefix + ".l" + std::to_string(l);
      Layer layer;
      layer.wq = ps.create_gaussian(lp + ".wq", {c, c}, rng);
      layer.bq = ps.create_zeros(lp + ".bq", {c});
      layer.wk = ps.create_gaussian(lp + ".wk", {c, c}, rng);
      layer.bk = ps.create_zeros(lp + ".bk", {c});
      layer.wv = ps.create_gaussian(lp + ".wv", {c, c}, rng);
      layer.bv = ps.create_zeros(lp + ".bv", {c});
      layer.wo = ps.create_gaussian(lp + ".wo", {c, c}, rng);
      layer.bo = ps.create_zeros(lp + ".bo", {c});
      layer.att_gate = GateCell<S>(ps, lp + ".att_gate", c, rng,
                                   /*use_reset_gate=*/false,
                                   /*with_final_ln=*/false);
      layer.mlp = Mlp<S>(ps, lp + ".mlp", c, {cfg.mlp_hidden(), c}, rng);
      layer.mlp_gate = GateCell<S>(ps, lp + ".mlp_gate", c, rng,
                                   /*use_reset_gate=*/false,
                                   /*with_final_ln=*/false);
      layers.push_back(std::move(layer));
    }
    if (c != cfg.c_context)
      out_proj = Linear<S>(ps, prefix + ".out_proj", c, cfg.c_context, rng);
  }

  // cp: [T,K,C] -> [T,K,C].  Slots ride the batch axis, so no information
  // crosses slots here.  Pass an Rng to enable attention-weight dropout.
  Tensor<S> operator()(const Tensor<S>& cp, Rng* dropout_rng = nullptr) const {
    check(cp.rank() == 3 && cp.dim(2) == cfg.c_context,
          "context transformer: want [T,K,", cfg.c_context, "], got ",
          shape_str(cp.shape()));
    ++call_count;
    int64_t t = cp.dim(0), k = cp.dim(1), c = cfg.tf_dim();
    int64_t heads = cfg.tf_heads, dh = c / heads;
    auto x = permute(cp, {1, 0, 2});  // [K,T,C]
    auto tb = fourier_basis_1d<S>(t, cfg.time_fourier_order);
    int64_t p = tb.dim(1);
    auto tbb = broadcast_to(reshape(tb, {1, t, p}), {k, t, p});
    x = in_proj(concat<S>({x, tbb}, 2));  // [K,T,C]

    Tensor<S> mask;
    if (cfg.causal_mask) {
      std::vector<S> mv(static_cast<size_t>(t * t), S(0));
      for (int64_t i = 0; i < t; ++i)
        for (int64_t j = i + 1; j < t; ++j)
          mv[static_cast<size_t>(i * t + j)] = S(-1e9);
      mask = Tensor<S>::from_data({t, t}, std::move(mv));
    }

    for (const auto& layer : layers) {
      auto y = layer_norm(x);
      auto qh = split_heads(add(matmul(y, layer.wq), layer.bq), k, t, heads, dh);
      auto kh = split_heads(add(matmul(y, layer.wk), layer.bk), k, t, heads, dh);
      auto vh = split_heads(add(matmul(y, layer.wv), layer.bv), k, t, heads, dh);
      S inv_scale = S(1) / static_cast<S>(std::sqrt(static_cast<double>(dh)));
      auto logits = scale(bmm(qh, kh, false, true), inv_scale);  // [K*h,T,T]
      if (cfg.causal_mask) logits = add(logits, mask);
      auto w = softmax(logits, 2);
      if (dropout_rng != nullptr && cfg.attn_dropout > 0.0) {
        double keep = 1.0 - cfg.attn_dropout;
        std::vector<S> mv(static_cast<size_t>(w.numel()));
        for (auto& m : mv)
          m = dropout_rng->next_double() < keep ? static_cast<S>(1.0 / keep)
                                                : S(0);
        w = mul(w, Tensor<S>::from_data(w.shape(), std::move(mv)));
      }
      auto o = merge_heads(bmm(w, vh), k, t, heads, dh);  // [K,T,C]
      auto att = add(matmul(o, layer.wo), layer.bo);
      x = layer.att_gate(x, att);
      auto y2 = layer.mlp(layer_norm(x));
      x = layer.mlp_gate(x, y2);
    }
    if (c != cfg.c_context) x = out_proj(x);
    return permute(x, {1, 0, 2});  // [T,K,C]
  }

 private:
  static Tensor<S> split_heads(const Tensor<S>& m, int64_t k, int64_t t,
                               int64_t heads, int64_t dh) {
    return reshape(permute(reshape(m, {k, t, heads, dh}), {0, 2, 1, 3}),
                   {k * heads, t, dh});
  }
  static Tensor<S> merge_heads(const Tensor<S>& m, int64_t k, int64_t t,
                               int64_t heads, int64_t dh) {
    return reshape(permute(reshape(m, {k, heads, t, dh}), {0, 2, 1, 3}),
                   {k, t, heads * dh});
  }
};

// Ablation for the temporal stage: a deep unidirectional LSTM rolled
// forward over time separately for each slot, then projected back to the
// context width.
template <typename S>
struct LstmContext {
  struct Cell {
    Tensor<S> w_x, w_h, b;  // gates packed as [i | f | g | o]
  };

  std::vector<Cell> cells;
  Linear<S> out_proj;
  int64_t hidden = 0;
  int64_t c = 0;

  LstmContext() = default;
  LstmContext(ParamStore<S>& ps, const std::string& prefix,
              const SlotCoreConfig& config, Rng& rng)
      : hidden(config.lstm_width()), c(config.c_context) {
    int64_t in = c;
    for (int64_t l = 0; l < config.lstm_layers; ++l) {
      std::string lp = prefix + ".l" + std::to_string(l);
      Cell cell;
      cell.w_x = ps.create_gaussian(lp + ".w_x", {in, 4 * hidden}, rng);
      cell.w_h = ps.create_gaussian(lp + ".w_h", {hidden, 4 * hidden}, rng);
      cell.b = ps.create_zeros(lp + ".b", {4 * hidden});
      cells.push_back(std::move(cell));
      in = hidden;
    }
    out_proj = Linear<S>(ps, prefix + ".out", hidden, c, rng);
  }

  // cp: [T,K,C] -> [T,K,C]
  Tensor<S> operator()(const Tensor<S>& cp) const {
    check(cp.rank() == 3 && cp.dim(2) == c, "lstm context: want [T,K,", c,
          "], got ", shape_str(cp.shape()));
    int64_t t = cp.dim(0), k = cp.dim(1);
    auto x = permute(cp, {1, 0, 2});  // [K,T,C]
    for (const auto& cell : cells) {
      int64_t in = cell.w_x.dim(0);
      auto h = Tensor<S>::zeros({k, hidden});
      auto s = Tensor<S>::zeros({k, hidden});
      std::vector<Tensor<S>> outs;
      outs.reserve(static_cast<size_t>(t));
      for (int64_t step = 0; step < t; ++step) {
        auto xt = reshape(slice(x, 1, step, 1), {k, in});
        auto gates =
            add(add(matmul(xt, cell.w_x), matmul(h, cell.w_h)), cell.b);
        auto ig = sigmoid(slice(gates, 1, 0, hidden));
        auto fg = sigmoid(slice(gates, 1, hidden, hidden));
        auto gg = tanh_t(slice(gates, 1, 2 * hidden, hidden));
        auto og = sigmoid(slice(gates, 1, 3 * hidden, hidden));
        s = add(mul(fg, s), mul(ig, gg));
        h = mul(og, tanh_t(s));
        outs.push_back(reshape(h, {k, 1, hidden}));
      }
      x = concat(outs, 1);  // [K,T,hidden]
    }
    return permute(out_proj(x), {1, 0, 2});
  }
};

// One slot-update stage: shared query MLP, slot attention over pixel
// features, and the gated merge back into the context.
template <typename S>
struct SlotCore {
  Mlp<S> query_mlp;
  SlotAttention<S> attn;
  GateCell<S> gate;

  SlotCore() = default;
  SlotCore(ParamStore<S>& ps, const std::string& prefix,
           const SlotCoreConfig& cfg, int64_t e_dim, Rng& rng) {
    auto sizes = cfg.query_sizes();
    query_mlp = Mlp<S>(ps, prefix + ".query", cfg.c_context, sizes, rng);
    attn = SlotAttention<S>(ps, prefix + ".attn", sizes.back(), e_dim,
                            cfg.c_context, rng);
    gate = GateCell<S>(ps, prefix + ".gate", cfg.c_context, rng,
                       cfg.use_reset_gate, /*with_final_ln=*/true);
  }

  // ctx: [T,K,C], e: [T,P,De] -> gated context plus the attention outputs.
  std::pair<Tensor<S>, SlotAttentionOut<S>> update(const Tensor<S>& ctx,
                                                   const Tensor<S>& e) const {
    auto q = query_mlp(ctx);
    auto out = attn(q, e);
    return {gate(ctx, out.a), out};
  }
};

}  // namespace slt
