#pragma once
// Full video model: convolutional encoder, iterative slot refinement over a
// shared temporal transform, a per-slot Gaussian latent with conditional
// prior, spatial-broadcast mixture decoder, and the evidence-driven update
// that closes the refinement loop.

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "encoder.hpp"
#include "generative.hpp"
#include "slotcore.hpp"

namespace slt {

struct ModelConfig {
  EncoderConfig enc;
  SlotCoreConfig slots;
  GenerativeConfig gen;
  // Fourier order for the 2-D position basis appended to encoder features.
  int64_t enc_fourier_order = 3;
  // Replace the temporal transformer with a deep per-slot LSTM (ablation).
  bool lstm_context = false;

  int64_t e_dim() const {
    return enc.channels().back() + 2 + 4 * enc_fourier_order;
  }
};

// Externally supplied randomness for one forward pass.  Keeping the draws in
// a bundle makes runs replayable and lets tests permute noise alongside slots.
template <typename S>
struct NoiseBundle {
  Tensor<S> c0;               // [K,C] initial context noise
  std::vector<Tensor<S>> z;   // per refinement iteration, [T,K,Cl]
};

template <typename S>
NoiseBundle<S> make_noise(const ModelConfig& cfg, int64_t t, Rng& rng) {
  NoiseBundle<S> nb;
  nb.c0 = normal_tensor<S>({cfg.slots.k_slots, cfg.slots.c_context}, rng);
  for (int64_t i = 0; i < cfg.gen.n_iter; ++i) {
    if (cfg.gen.deterministic) {
      nb.z.push_back(
          Tensor<S>::zeros({t, cfg.slots.k_slots, cfg.gen.c_latent}));
    } else {
      nb.z.push_back(
          normal_tensor<S>({t, cfg.slots.k_slots, cfg.gen.c_latent}, rng));
    }
  }
  return nb;
}

// Everything one refinement iteration produced.
template <typename S>
struct IterationStep {
  PosteriorParams<S> post;
  Tensor<S> z;          // [T,K,Cl] sampled latent
  SlotDecode<S> decode;
  Tensor<S> x_prime;    // [T,H,W,3] mixture reconstruction
  Tensor<S> kl;         // rank-0
  Tensor<S> log_lik;    // rank-0
};

template <typename S>
struct IterationTrace {
  std::vector<IterationStep<S>> steps;
  Tensor<S> e_raw;           // [T,H',W',Ce] encoder output
  Tensor<S> e;               // [T,P,De] flattened features with position basis
  Tensor<S> gated_context0;  // [T,K,C] first-iteration context before the
                             // temporal transform (the prior's causal input)
  Tensor<S> final_context;   // [T,K,C] context after the last update
  PriorParams<S> prior;
  bool prior_valid = false;
  Tensor<S> loss_gen;        // rank-0: mean over iterations of (KL - logL)
};

template <typename S>
struct SlotTransformer {
  ModelConfig cfg;
  ResNetEncoder<S> encoder;
  SlotCore<S> core;
  ContextTransformer<S> ctx_tf;
  LstmContext<S> ctx_lstm;
  PosteriorHead<S> posterior;
  ConditionalPrior<S> prior;
  BroadcastDecoder<S> decoder;
  IterativeUpdater<S> updater;

  SlotTransformer(ParamStore<S>& ps, const ModelConfig& config, Rng& rng)
      : cfg(config) {
    check(cfg.gen.c_latent == cfg.slots.c_context,
          "model: c_latent (", cfg.gen.c_latent, ") must equal c_context (",
          cfg.slots.c_context,
          ") so latents can re-enter the temporal transform");
    encoder = ResNetEncoder<S>(ps, "enc", cfg.enc, rng);
    core = SlotCore<S>(ps, "core", cfg.slots, cfg.e_dim(), rng);
    if (cfg.lstm_context) {
      ctx_lstm = LstmContext<S>(ps, "tctx", cfg.slots, rng);
    } else {
      ctx_tf = ContextTransformer<S>(ps, "tctx", cfg.slots, rng);
    }
    posterior = PosteriorHead<S>(ps, "post", cfg.gen, cfg.slots.c_context, rng);
    if (!cfg.gen.unit_prior) {
      prior = ConditionalPrior<S>(ps, "prior", cfg.slots, cfg.gen, rng);
    }
    decoder = BroadcastDecoder<S>(ps, "dec", cfg.gen, rng);
    updater = IterativeUpdater<S>(ps, "iter", cfg.gen, cfg.slots.c_context, rng);
  }

  // The shared temporal stage (transformer, or LSTM under the ablation).
  Tensor<S> temporal(const Tensor<S>& c) const {
    return cfg.lstm_context ? ctx_lstm(c) : ctx_tf(c);
  }

  // Encode frames and append the fixed 2-D position basis, flattened to
  // [T, H'*W', De].
  std::pair<Tensor<S>, Tensor<S>> encode(const Tensor<S>& x) const {
    Tensor<S> e_raw = encoder(x);
    Tensor<S> basis =
        fourier_basis_2d<S>(e_raw.dim(1), e_raw.dim(2), cfg.enc_fourier_order);
    Tensor<S> tiled = broadcast_to(
        reshape(basis, {1, basis.dim(0), basis.dim(1), basis.dim(2)}),
        {e_raw.dim(0), basis.dim(0), basis.dim(1), basis.dim(2)});
    return {e_raw, flatten_pixels(concat<S>({e_raw, tiled}, 3))};
  }

  IterationTrace<S> run_model(const Tensor<S>& x,
                              const NoiseBundle<S>& noise) const {
    check(x.rank() == 4 && x.dim(3) == 3,
          "run_model: expected video [T,H,W,3], got ", shape_str(x.shape()));
    const int64_t t = x.dim(0), h = x.dim(1), w = x.dim(2);
    check(static_cast<int64_t>(noise.z.size()) == cfg.gen.n_iter,
          "run_model: noise bundle has ", noise.z.size(), " latent draws, ",
          "config wants ", cfg.gen.n_iter);

    IterationTrace<S> trace;
    auto enc = encode(x);
    trace.e_raw = enc.first;
    trace.e = enc.second;

    const bool conditional = !cfg.gen.deterministic && !cfg.gen.unit_prior;
    Tensor<S> ctx = init_context(noise.c0, t);
    Tensor<S> loss_acc;

    for (int64_t it = 0; it < cfg.gen.n_iter; ++it) {
      auto updated = core.update(ctx, trace.e);
      const Tensor<S>& gated = updated.first;
      Tensor<S> cc;
      if (it == 0) {
        trace.gated_context0 = gated;
        if (conditional) {
          const int64_t p = cfg.gen.prefix_len(t);
          trace.prior = prior(slice(gated, 0, 0, p), t, posterior);
          trace.prior_valid = true;
        }
        cc = temporal(gated);
      } else {
        cc = gated;
      }

      IterationStep<S> step;
      step.post = posterior.project(cc);
      step.z = sample_latent(step.post, noise.z[static_cast<size_t>(it)]);
      step.decode = decoder(step.z, h, w);
      step.x_prime = compose_reconstruction(step.decode);
      step.log_lik =
          mixture_log_likelihood(x, step.decode, static_cast<S>(cfg.gen.sigma_out));
      if (cfg.gen.deterministic) {
        step.kl = Tensor<S>::zeros({});
      } else if (cfg.gen.unit_prior) {
        step.kl = kl_vs_unit(step.post.mu, step.post.log_sigma);
      } else {
        step.kl = kl_diag_gaussian(step.post.mu, step.post.log_sigma,
                                   trace.prior.mu, trace.prior.log_sigma);
      }

      Tensor<S> term = sub(step.kl, step.log_lik);
      loss_acc = (it == 0) ? term : add(loss_acc, term);

      auto upd = updater(step.post, step.z, x, step.x_prime, step.decode);
      ctx = upd.context_next;
      trace.steps.push_back(std::move(step));
    }

    trace.final_context = ctx;
    trace.loss_gen = scale(loss_acc, S(1) / static_cast<S>(cfg.gen.n_iter));
    return trace;
  }

  // Prior parameters for a sequence of length t_total given only its first
  // p frames: encode the visible prefix, run one slot update, and let the
  // conditional prior extrapolate the remaining steps.  Used for rollouts.
  PriorParams<S> prior_from_prefix(const Tensor<S>& x_prefix, int64_t t_total,
                                   const Tensor<S>& c0_noise) const {
    check(!cfg.gen.unit_prior, "prior_from_prefix: model has no learned prior");
    const int64_t p = x_prefix.dim(0);
    check(p >= 1 && p < t_total, "prior_from_prefix: prefix length ", p,
          " must be in [1, ", t_total, ")");
    auto enc = encode(x_prefix);
    Tensor<S> ctx = init_context(c0_noise, p);
    auto updated = core.update(ctx, enc.second);
    return prior(updated.first, t_total, posterior);
  }
};

}  // namespace slt
