#pragma once

// Variational core: posterior projection with clamped log-sigma,
// reparameterized sampling, a conditional autoregressive prior over a frame
// prefix, spatial broadcast decoding into per-slot masks and means, the
// Gaussian-mixture image likelihood, diagonal-Gaussian KL, and the additive
// posterior-estimate update that drives the model iterations.

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "module.hpp"
#include "ops.hpp"
#include "rng.hpp"
#include "slotcore.hpp"
#include "tensor.hpp"

namespace slt {

struct GenerativeConfig {
  int64_t c_latent = 32;
  double sigma_out = 0.1;  // mixture component scale
  double log_sigma_lo = -6.0;
  double log_sigma_hi = 4.0;
  int64_t n_iter = 2;
  // Prefix fraction: the prior conditions on p = T - ceil(mask_rate*T) steps.
  double mask_rate = 0.5;
  bool unit_prior = false;     // KL against N(0,1) instead of the prior model
  bool deterministic = false;  // z = mu and the KL term is dropped
  int64_t dec_channels = 64;   // scaled by width_factor, minimum 1
  int64_t dec_layers = 4;
  double width_factor = 1.0;
  int64_t spatial_fourier_order = 3;
  int64_t iter_mlp_hidden = 0;  // 0 -> 2*c_context

  int64_t dec_width() const {
    return std::max<int64_t>(
        1, std::llround(static_cast<double>(dec_channels) * width_factor));
  }
  int64_t prefix_len(int64_t t) const {
    auto masked = static_cast<int64_t>(
        std::ceil(mask_rate * static_cast<double>(t) - 1e-12));
    return t - masked;
  }
};

template <typename S>
struct PosteriorParams {
  Tensor<S> lambda;     // [T,K,2*C_latent], raw projection
  Tensor<S> mu;         // [T,K,C_latent]
  Tensor<S> log_sigma;  // [T,K,C_latent], clamped
};

template <typename S>
struct PriorParams {
  Tensor<S> mu, log_sigma;  // [T,K,C_latent]
  int64_t p = 0;            // conditioning prefix length
};

// Shared linear map from context rows to posterior parameters.
template <typename S>
struct PosteriorHead {
  Linear<S> w_lambda;
  int64_t c_latent = 0;
  S lo = S(-6), hi = S(4);

  PosteriorHead() = default;
  PosteriorHead(ParamStore<S>& ps, const std::string& prefix,
                const GenerativeConfig& cfg, int64_t c_context, Rng& rng)
      : w_lambda(ps, prefix + ".w_lambda", c_context, 2 * cfg.c_latent, rng),
        c_latent(cfg.c_latent),
        lo(static_cast<S>(cfg.log_sigma_lo)),
        hi(static_cast<S>(cfg.log_sigma_hi)) {}

  PosteriorParams<S> split(const Tensor<S>& lambda) const {
    int64_t axis = lambda.rank() - 1;
    return {lambda, slice(lambda, axis, 0, c_latent),
            clamp(slice(lambda, axis, c_latent, c_latent), lo, hi)};
  }

  PosteriorParams<S> project(const Tensor<S>& ctx) const {
    return split(w_lambda(ctx));
  }
};

// z = mu + sigma * noise.  The noise tensor carries no gradient.
template <typename S>
Tensor<S> sample_latent(const PosteriorParams<S>& post,
                        const Tensor<S>& noise) {
  check(noise.shape() == post.mu.shape(), "sample_latent: noise shape ",
        shape_str(noise.shape()), " vs ", shape_str(post.mu.shape()));
  return add(post.mu, mul(exp_t(post.log_sigma), noise));
}

template <typename S>
Tensor<S> normal_tensor(const Shape& shape, Rng& rng) {
  std::vector<S> v(static_cast<size_t>(numel(shape)));
  for (auto& x : v) x = static_cast<S>(rng.normal());
  return Tensor<S>::from_data(shape, std::move(v));
}

// Prior over latents conditioned on a frame prefix.  The prefix context runs
// through this module's own temporal transformer; prefix steps emit through
// the shared posterior projection, and the remaining steps come from a
// gated recurrent cell seeded by a learnable-token attention readout and
// emitting through a separate linear head.
template <typename S>
struct ConditionalPrior {
  ContextTransformer<S> transform;
  Tensor<S> token;                       // [1,C]
  Tensor<S> wq, bq, wk, bk, wv, bv;      // token attention
  GateCell<S> cell;                      // AR state recurrence
  Linear<S> embed;                       // previous mean -> cell input
  Linear<S> head;                        // state -> [mu | log_sigma]
  int64_t c_context = 0, c_latent = 0;
  S lo = S(-6), hi = S(4);

  ConditionalPrior() = default;
  ConditionalPrior(ParamStore<S>& ps, const std::string& prefix,
                   const SlotCoreConfig& score, const GenerativeConfig& cfg,
                   Rng& rng)
      : transform(ps, prefix + ".tctx", score, rng),
        token(ps.create_gaussian(prefix + ".token", {1, score.c_context}, rng)),
        wq(ps.create_gaussian(prefix + ".wq",
                              {score.c_context, score.c_context}, rng)),
        bq(ps.create_zeros(prefix + ".bq", {score.c_context})),
        wk(ps.create_gaussian(prefix + ".wk",
                              {score.c_context, score.c_context}, rng)),
        bk(ps.create_zeros(prefix + ".bk", {score.c_context})),
        wv(ps.create_gaussian(prefix + ".wv",
                              {score.c_context, score.c_context}, rng)),
        bv(ps.create_zeros(prefix + ".bv", {score.c_context})),
        cell(ps, prefix + ".cell", score.c_context, rng,
             /*use_reset_gate=*/false, /*with_final_ln=*/true),
        embed(ps, prefix + ".embed", cfg.c_latent, score.c_context, rng),
        head(ps, prefix + ".head", score.c_context, 2 * cfg.c_latent, rng),
        c_context(score.c_context),
        c_latent(cfg.c_latent),
        lo(static_cast<S>(cfg.log_sigma_lo)),
        hi(static_cast<S>(cfg.log_sigma_hi)) {}

  // c_prefix: [p,K,C] gated context rows for the conditioned steps (each row
  // is a function of its own frame only, so the prior never sees frames > p).
  PriorParams<S> operator()(const Tensor<S>& c_prefix, int64_t t,
                            const PosteriorHead<S>& shared_head) const {
    int64_t p = c_prefix.dim(0), k = c_prefix.dim(1);
    check(p >= 1 && p < t, "conditional prior: prefix ", p,
          " out of range for T=", t);
    auto prior_ctx = transform(c_prefix);  // [p,K,C]
    auto prefix_params = shared_head.project(prior_ctx);

    // Token attention: the learnable token queries [prior context || token]
    // per slot; its readout is the initial recurrent state.
    auto ctx_kpc = permute(prior_ctx, {1, 0, 2});  // [K,p,C]
    auto tok = broadcast_to(reshape(token, {1, 1, c_context}),
                            {k, 1, c_context});
    auto seq = concat<S>({ctx_kpc, tok}, 1);  // [K,p+1,C]
    auto q = add(matmul(tok, wq), bq);        // [K,1,C]
    auto keys = add(matmul(seq, wk), bk);
    auto vals = add(matmul(seq, wv), bv);
    S inv_scale =
        S(1) / static_cast<S>(std::sqrt(static_cast<double>(c_context)));
    auto logits = scale(bmm(q, keys, false, true), inv_scale);  // [K,1,p+1]
    auto attn = softmax(logits, 2);
    auto state = reshape(bmm(attn, vals), {k, c_context});  // [K,C]

    // Roll the recurrence forward, emitting one step at a time and feeding
    // each emitted mean back in.
    auto prev_mu = reshape(slice(prefix_params.mu, 0, p - 1, 1),
                           {k, c_latent});
    std::vector<Tensor<S>> mus = {prefix_params.mu};
    std::vector<Tensor<S>> lss = {prefix_params.log_sigma};
    for (int64_t step = p; step < t; ++step) {
      state = cell(state, embed(prev_mu));
      auto lam = head(state);  // [K,2*Cl]
      auto mu = slice(lam, 1, 0, c_latent);
      auto ls = clamp(slice(lam, 1, c_latent, c_latent), lo, hi);
      mus.push_back(reshape(mu, {1, k, c_latent}));
      lss.push_back(reshape(ls, {1, k, c_latent}));
      prev_mu = mu;
    }
    return {concat(mus, 0), concat(lss, 0), p};
  }
};

template <typename S>
struct SlotDecode {
  Tensor<S> mask_logits;  // [T,K,H,W,1]
  Tensor<S> masks;        // [T,K,H,W,1], softmax over K
  Tensor<S> means;        // [T,K,H,W,3], sigmoid RGB
};

// Tile each slot latent over the image plane, append the spatial Fourier
// basis, and run stride-1 convolutions into one mask logit + RGB means.
template <typename S>
struct BroadcastDecoder {
  GenerativeConfig cfg;
  std::vector<Tensor<S>> conv_w, conv_b;
  Linear<S> head;  // 1x1 projection to [mask_logit | r | g | b]

  BroadcastDecoder() = default;
  BroadcastDecoder(ParamStore<S>& ps, const std::string& prefix,
                   const GenerativeConfig& config, Rng& rng)
      : cfg(config) {
    int64_t ch = cfg.dec_width();
    int64_t in = cfg.c_latent + 2 + 4 * cfg.spatial_fourier_order;
    for (int64_t i = 0; i < cfg.dec_layers; ++i) {
      std::string cp = prefix + ".c" + std::to_string(i);
      conv_w.push_back(ps.create_gaussian(cp + ".w", {3, 3, in, ch}, rng));
      conv_b.push_back(ps.create_zeros(cp + ".b", {ch}));
      in = ch;
    }
    head = Linear<S>(ps, prefix + ".head", ch, 4, rng);
  }

  // Conv stack on an already-assembled [N,H,W,C_latent+basis] grid.
  Tensor<S> decode_grid(const Tensor<S>& grid) const {
    Tensor<S> x = grid;
    for (size_t i = 0; i < conv_w.size(); ++i)
      x = relu(add(conv2d(x, conv_w[i], 1, Pad::Replicate), conv_b[i]));
    return head(x);  // [N,H,W,4]
  }

  SlotDecode<S> operator()(const Tensor<S>& z, int64_t h, int64_t w) const {
    check(z.rank() == 3 && z.dim(2) == cfg.c_latent, "decode: want [T,K,",
          cfg.c_latent, "], got ", shape_str(z.shape()));
    int64_t t = z.dim(0), k = z.dim(1), n = t * k;
    auto zb = broadcast_to(reshape(z, {n, 1, 1, cfg.c_latent}),
                           {n, h, w, cfg.c_latent});
    auto basis = fourier_basis_2d<S>(h, w, cfg.spatial_fourier_order);
    auto bb = broadcast_to(
        reshape(basis, {1, h, w, basis.dim(2)}), {n, h, w, basis.dim(2)});
    auto o = decode_grid(concat<S>({zb, bb}, 3));
    auto logits = reshape(slice(o, 3, 0, 1), {t, k, h, w, 1});
    auto means = reshape(sigmoid(slice(o, 3, 1, 3)), {t, k, h, w, 3});
    return {logits, softmax(logits, 1), means};
  }
};

// x' = sum_k m_k * r_k, a per-pixel convex combination.
template <typename S>
Tensor<S> compose_reconstruction(const SlotDecode<S>& d) {
  return sum(mul(d.masks, d.means), {1});  // [T,H,W,3]
}

// log L(x) = sum over pixels of log sum_k m_k * N(x; r_k, sigma^2 I), the
// three channels independent within a component; stabilized via the log-mask
// from the logits plus log-sum-exp over slots.
template <typename S>
Tensor<S> mixture_log_likelihood(const Tensor<S>& x, const SlotDecode<S>& d,
                                 S sigma_out) {
  check(sigma_out > S(0), "mixture likelihood: sigma_out must be positive");
  int64_t t = x.dim(0), h = x.dim(1), w = x.dim(2);
  int64_t k = d.means.dim(1);
  auto log_m = log_softmax(reshape(d.mask_logits, {t, k, h, w}), 1);
  auto diff = sub(reshape(x, {t, 1, h, w, 3}), d.means);  // [T,K,H,W,3]
  S inv = S(-0.5) / (sigma_out * sigma_out);
  auto q = sum(scale(mul(diff, diff), inv), {4});  // [T,K,H,W]
  S log_norm = S(-0.5) *
               static_cast<S>(std::log(2.0 * 3.14159265358979323846 *
                                       static_cast<double>(sigma_out) *
                                       static_cast<double>(sigma_out)));
  auto comp = add(log_m, add_scalar(q, S(3) * log_norm));
  return sum_all(logsumexp(comp, 1));
}

// Closed-form KL between diagonal Gaussians given means and log-sigmas,
// summed over every element.
template <typename S>
Tensor<S> kl_diag_gaussian(const Tensor<S>& mu1, const Tensor<S>& ls1,
                           const Tensor<S>& mu2, const Tensor<S>& ls2) {
  auto dls = sub(ls2, ls1);
  auto var_ratio = exp_t(scale(dls, S(-2)));  // sigma1^2 / sigma2^2
  auto dmu = sub(mu1, mu2);
  auto mahal = mul(mul(dmu, dmu), exp_t(scale(ls2, S(-2))));
  return sum_all(
      add(scale(add(var_ratio, mahal), S(0.5)), add_scalar(dls, S(-0.5))));
}

template <typename S>
Tensor<S> kl_vs_unit(const Tensor<S>& mu, const Tensor<S>& ls) {
  auto zero = Tensor<S>::zeros(mu.shape());
  return kl_diag_gaussian(mu, ls, zero, zero);
}

template <typename S>
struct IterativeUpdateOut {
  Tensor<S> lambda_next;   // lambda + f(features)
  Tensor<S> context_next;  // LayerNorm(MLP(lambda_next))
  Tensor<S> features;      // the concatenated f input, for auditing
  Tensor<S> eps_z;         // (z - mu)/sigma^2
  Tensor<S> pooled_eps_x;  // mask-weighted spatial mean of (x - x')/sigma^2
};

// Additive refinement of the posterior estimate from the decode residuals.
// Image-shaped signals reach the per-slot update through mask-weighted
// spatial pooling; all parameters are shared across iterations.
template <typename S>
struct IterativeUpdater {
  Linear<S> f;          // per-(t,k) update from concatenated features
  Mlp<S> to_context;    // lambda -> new context rows
  S sigma_out = S(0.1);

  IterativeUpdater() = default;
  IterativeUpdater(ParamStore<S>& ps, const std::string& prefix,
                   const GenerativeConfig& cfg, int64_t c_context, Rng& rng)
      : sigma_out(static_cast<S>(cfg.sigma_out)) {
    int64_t cl = cfg.c_latent;
    int64_t hidden =
        cfg.iter_mlp_hidden > 0 ? cfg.iter_mlp_hidden : 2 * c_context;
    f = Linear<S>(ps, prefix + ".f", 2 * cl + 6, 2 * cl, rng);
    to_context = Mlp<S>(ps, prefix + ".ctx", 2 * cl, {hidden, c_context}, rng);
  }

  IterativeUpdateOut<S> operator()(const PosteriorParams<S>& post,
                                   const Tensor<S>& z, const Tensor<S>& x,
                                   const Tensor<S>& x_prime,
                                   const SlotDecode<S>& d) const {
    int64_t t = x.dim(0), h = x.dim(1), w = x.dim(2);
    int64_t k = z.dim(1);
    auto xres = sub(x, x_prime);  // [T,H,W,3]
    auto num = sum(mul(d.masks, reshape(xres, {t, 1, h, w, 3})), {2, 3});
    auto den = sum(d.masks, {2, 3});        // [T,K,1]
    auto pooled_res = div(num, den);        // [T,K,3]
    S inv_var = S(1) / (sigma_out * sigma_out);
    auto pooled_eps_x = scale(pooled_res, inv_var);
    auto eps_z =
        mul(sub(z, post.mu), exp_t(scale(post.log_sigma, S(-2))));
    auto features = concat<S>({z, pooled_res, eps_z, pooled_eps_x}, 2);
    auto lambda_next = add(post.lambda, f(features));
    auto context_next = layer_norm(to_context(lambda_next));
    return {lambda_next, context_next, features, eps_z, pooled_eps_x};
  }
};

}  // namespace slt
