#pragma once
// Training and evaluation driver: the model+head bundle built from one
// TrainConfig, per-sequence loss assembly, gradient-accumulated training
// steps, zero-noise evaluation with top-k accuracy and PSNR, prior rollouts
// with a copy-last baseline, the metrics.csv format, the training loop with
// checkpoints, and the whole-loss finite-difference check.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "config.hpp"
#include "gradcheck.hpp"
#include "heads.hpp"
#include "image_io.hpp"
#include "optim.hpp"
#include "spriteworld.hpp"

namespace slt {

// Evaluation noise: zero context init and zero latent draws, so the sampled
// latent equals the posterior mean.  (make_noise always randomizes the
// context init; evaluation wants the all-deterministic path.)
template <typename S>
NoiseBundle<S> zero_noise(const ModelConfig& cfg, int64_t t) {
  NoiseBundle<S> nb;
  nb.c0 = Tensor<S>::zeros({cfg.slots.k_slots, cfg.slots.c_context});
  for (int64_t i = 0; i < cfg.gen.n_iter; ++i)
    nb.z.push_back(Tensor<S>::zeros({t, cfg.slots.k_slots, cfg.gen.c_latent}));
  return nb;
}

inline OptimConfig optim_config(const TrainConfig& c) {
  OptimConfig o;
  o.lr = c.lr;
  o.beta1 = c.beta1;
  o.beta2 = c.beta2;
  o.eps = c.adam_eps;
  o.weight_decay = c.weight_decay;
  o.clip_norm = c.clip_norm;
  return o;
}

// Spatial size of one encoder axis (stride-s stages, "same" padding).
inline int64_t encoder_out_dim(const EncoderConfig& enc, int64_t x) {
  for (int64_t s : enc.strides) x = (x + s - 1) / s;
  return x;
}

inline int64_t task_label_count(const TrainConfig& cfg) {
  if (cfg.task == "grid") return cfg.world.grid * cfg.world.grid;
  if (cfg.task == "action") return kActionClasses;
  fail("unknown task '", cfg.task, "' (want grid or action)");
  return 0;
}

inline int64_t sequence_label(const Dataset& ds, size_t i,
                              const std::string& task) {
  check(i < ds.seqs.size(), "sequence index ", i, " out of range");
  if (task == "grid") return static_cast<int64_t>(ds.seqs[i].grid_cell);
  if (task == "action") return static_cast<int64_t>(ds.seqs[i].action);
  fail("unknown task '", task, "' (want grid or action)");
  return 0;
}

// The trainable system: parameter store, video model, and task head, all
// initialized from one config and seed.
template <typename S>
struct Pipeline {
  TrainConfig cfg;
  Rng init_rng;
  ParamStore<S> ps;
  SlotTransformer<S> model;
  TaskHead<S> head;

  explicit Pipeline(const TrainConfig& c)
      : cfg(validated(c)),
        init_rng(Rng(cfg.seed).split(0)),
        ps(),
        model(ps, cfg.model, init_rng),
        head(ps, "task", cfg.model.slots.c_context, frame_flat_dim(cfg),
             cfg.head, init_rng) {}

  static int64_t frame_flat_dim(const TrainConfig& c) {
    return encoder_out_dim(c.model.enc, c.world.h) *
           encoder_out_dim(c.model.enc, c.world.w) *
           c.model.enc.channels().back();
  }

  static TrainConfig validated(TrainConfig c) {
    check(c.head.label_size == task_label_count(c), "config: head.label_size (",
          c.head.label_size, ") must match the '", c.task, "' task (",
          task_label_count(c), " classes)");
    return c;
  }
};

// Everything one forward pass produces that the loop cares about.
template <typename S>
struct SequenceLoss {
  Tensor<S> total;          // weighted, in-graph
  double gen = 0, object = 0, qa = 0;  // unweighted part values
  double recon = 0, kl = 0;            // mean over iterations
  double psnr = 0;
  bool top1 = false, top5 = false;
};

template <typename S>
double psnr_value(const Tensor<S>& x, const Tensor<S>& x_prime, double cap) {
  const auto& a = x.data();
  const auto& b = x_prime.data();
  check(a.size() == b.size(), "psnr: size mismatch");
  double mse = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    mse += d * d;
  }
  mse /= static_cast<double>(a.size());
  if (mse <= 0) return cap;
  return std::min(cap, 10.0 * std::log10(1.0 / mse));
}

// Rank of `label` under descending value with ties broken toward lower
// index; rank < k means "in the top k".
template <typename S>
bool in_top_k(const Tensor<S>& logits, int64_t label, int64_t k) {
  const auto& v = logits.data();
  auto lv = static_cast<double>(v[static_cast<size_t>(label)]);
  int64_t rank = 0;
  for (size_t i = 0; i < v.size(); ++i) {
    auto x = static_cast<double>(v[i]);
    if (x > lv || (x == lv && static_cast<int64_t>(i) < label)) ++rank;
  }
  return rank < k;
}

// One sequence through the model and both heads, with the weighted total.
// `rng` drives the object-loss slot draws only.
template <typename S>
SequenceLoss<S> sequence_forward(const Pipeline<S>& pl, const Tensor<S>& x,
                                 int64_t label, const NoiseBundle<S>& noise,
                                 Rng& rng) {
  auto trace = pl.model.run_model(x, noise);
  const auto& last = trace.steps.back();

  Tensor<S> loss_obj =
      object_prediction_loss(pl.model, last.z, rng, pl.cfg.head);
  Tensor<S> logits = pl.head(trace.final_context, last.decode.masks,
                             trace.e_raw);
  Tensor<S> loss_qa_t = qa_loss(logits, label);

  SequenceLoss<S> out;
  out.total = total_loss(trace.loss_gen, loss_obj, loss_qa_t, pl.cfg.loss);
  out.gen = static_cast<double>(trace.loss_gen.item());
  out.object = static_cast<double>(loss_obj.item());
  out.qa = static_cast<double>(loss_qa_t.item());
  for (const auto& step : trace.steps) {
    out.recon -= static_cast<double>(step.log_lik.item());
    out.kl += static_cast<double>(step.kl.item());
  }
  out.recon /= static_cast<double>(trace.steps.size());
  out.kl /= static_cast<double>(trace.steps.size());
  out.psnr = psnr_value(x, last.x_prime, pl.cfg.psnr_cap);
  out.top1 = in_top_k(logits, label, 1);
  out.top5 = in_top_k(logits, label, 5);
  return out;
}

struct MetricsRow {
  int64_t step = 0;
  std::string split;
  double loss_total = 0, loss_recon = 0, loss_kl = 0;
  double loss_object = 0, loss_qa = 0;
  double acc_top1 = 0, acc_top5 = 0, psnr = 0;
};

inline const char* metrics_header() {
  return "step,split,loss_total,loss_recon,loss_kl,loss_object,loss_qa,"
         "acc_top1,acc_top5,psnr";
}

inline std::string format_metrics_row(const MetricsRow& r) {
  char buf[320];
  std::snprintf(buf, sizeof buf,
                "%lld,%s,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g",
                static_cast<long long>(r.step), r.split.c_str(), r.loss_total,
                r.loss_recon, r.loss_kl, r.loss_object, r.loss_qa, r.acc_top1,
                r.acc_top5, r.psnr);
  return buf;
}

inline void append_metrics(const std::string& path, const MetricsRow& row) {
  bool fresh = !std::filesystem::exists(path);
  std::ofstream out(path, std::ios::app);
  check(out.good(), "cannot open metrics file '", path, "'");
  if (fresh) out << metrics_header() << "\n";
  out << format_metrics_row(row) << "\n";
}

// One optimizer step over a batch of sequence indices: gradients accumulate
// across sequences (each loss scaled by 1/batch), then global-norm clip and
// an Adam update at `lr_now`.  A non-finite value anywhere in the forward
// pass aborts, tagged with the step, the sequence, and the loss parts that
// were computed before the blow-up (the op layer rejects non-finite outputs
// at their source, so the abort usually carries the offending op too).
template <typename S>
MetricsRow train_step(Pipeline<S>& pl, Adam<S>& opt, const Dataset& ds,
                      const std::vector<size_t>& batch, Rng& rng, int64_t step,
                      double lr_now) {
  check(!batch.empty(), "train_step: empty batch");
  pl.ps.zero_grads();
  MetricsRow row;
  row.step = step;
  row.split = "train";
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (size_t idx : batch) {
    Tensor<S> x = sequence_to_tensor<S>(ds, idx);
    int64_t label = sequence_label(ds, idx, pl.cfg.task);
    auto noise = make_noise<S>(pl.cfg.model, x.dim(0), rng);
    SequenceLoss<S> parts;
    try {
      parts = sequence_forward(pl, x, label, noise, rng);
    } catch (const Error& e) {
      fail("train_step: forward failed at step ", step, " on sequence ", idx,
           ": ", e.what());
    }
    double total = static_cast<double>(parts.total.item());
    check(std::isfinite(total), "train_step: non-finite loss at step ", step,
          " on sequence ", idx, " (gen=", parts.gen, ", object=", parts.object,
          ", qa=", parts.qa, ")");
    auto scaled = scale(parts.total, static_cast<S>(inv));
    scaled.backward();
    row.loss_total += total * inv;
    row.loss_recon += parts.recon * inv;
    row.loss_kl += parts.kl * inv;
    row.loss_object += parts.object * inv;
    row.loss_qa += parts.qa * inv;
    row.acc_top1 += (parts.top1 ? 1.0 : 0.0) * inv;
    row.acc_top5 += (parts.top5 ? 1.0 : 0.0) * inv;
    row.psnr += parts.psnr * inv;
  }
  clip_gradients(pl.ps, pl.cfg.clip_norm);
  opt.step(pl.ps, lr_now);
  return row;
}

// Averaged metrics over a fixed index set, with zero noise (latents = means).
// The object-loss slot draws replay identically on every call so evaluation
// is a pure function of the parameters.
template <typename S>
MetricsRow evaluate(const Pipeline<S>& pl, const Dataset& ds,
                    const std::vector<size_t>& indices,
                    const std::string& split, int64_t step) {
  check(!indices.empty(), "evaluate: empty split '", split, "'");
  NoGradGuard ng;
  Rng obj_rng = Rng(pl.cfg.seed).split(2);
  MetricsRow row;
  row.step = step;
  row.split = split;
  const double inv = 1.0 / static_cast<double>(indices.size());
  for (size_t idx : indices) {
    Tensor<S> x = sequence_to_tensor<S>(ds, idx);
    int64_t label = sequence_label(ds, idx, pl.cfg.task);
    auto noise = zero_noise<S>(pl.cfg.model, x.dim(0));
    auto parts = sequence_forward(pl, x, label, noise, obj_rng);
    double total = static_cast<double>(parts.total.item());
    row.loss_total += total * inv;
    row.loss_recon += parts.recon * inv;
    row.loss_kl += parts.kl * inv;
    row.loss_object += parts.object * inv;
    row.loss_qa += parts.qa * inv;
    row.acc_top1 += (parts.top1 ? 1.0 : 0.0) * inv;
    row.acc_top5 += (parts.top5 ? 1.0 : 0.0) * inv;
    row.psnr += parts.psnr * inv;
  }
  return row;
}

// Frames decoded from the learned prior conditioned on the first p frames.
// For p < T, `predicted` holds the T-p frames after the prefix (sliced from
// `full`, the prior decode of all T steps).  p == T degenerates to the plain
// zero-noise posterior reconstruction in both fields.
template <typename S>
struct Rollout {
  Tensor<S> full;       // [T,H,W,3]
  Tensor<S> predicted;  // [T-p,H,W,3], or the reconstruction when p == T
};

template <typename S>
Rollout<S> prior_rollout(const SlotTransformer<S>& model, const Tensor<S>& x,
                         int64_t p, Rng& rng, bool sample = true) {
  check(x.rank() == 4 && x.dim(3) == 3,
        "prior_rollout: want video [T,H,W,3], got ", shape_str(x.shape()));
  const int64_t t = x.dim(0), h = x.dim(1), w = x.dim(2);
  check(p >= 1 && p <= t, "prior_rollout: prefix length ", p,
        " out of range [1,", t, "]");
  NoGradGuard ng;
  Rollout<S> out;
  if (p == t) {
    auto noise = zero_noise<S>(model.cfg, t);
    auto trace = model.run_model(x, noise);
    out.full = trace.steps.back().x_prime;
    out.predicted = out.full;
    return out;
  }
  Tensor<S> c0 = normal_tensor<S>(
      {model.cfg.slots.k_slots, model.cfg.slots.c_context}, rng);
  PriorParams<S> prior = model.prior_from_prefix(slice(x, 0, 0, p), t, c0);
  Tensor<S> z = prior.mu;
  if (sample) {
    Tensor<S> eps = normal_tensor<S>(prior.mu.shape(), rng);
    z = add(prior.mu, mul(exp_t(prior.log_sigma), eps));
  }
  auto dec = model.decoder(z, h, w);
  out.full = compose_reconstruction(dec);
  out.predicted = slice(out.full, 0, p, t - p);
  return out;
}

// Trivial competitor for rollouts: repeat the last conditioned frame.
template <typename S>
Tensor<S> copy_last_baseline(const Tensor<S>& x, int64_t p) {
  const int64_t t = x.dim(0);
  check(p >= 1 && p < t, "copy_last_baseline: prefix length ", p,
        " out of range [1,", t, ")");
  return broadcast_to(slice(x, 0, p - 1, 1),
                      {t - p, x.dim(1), x.dim(2), x.dim(3)});
}

// Mean over frames and pixels of the RGB L2 distance.
template <typename S>
double mean_pixel_l2(const Tensor<S>& a, const Tensor<S>& b) {
  check(a.shape() == b.shape() && a.rank() == 4 && a.dim(3) == 3,
        "mean_pixel_l2: want matching [N,H,W,3]");
  const auto& va = a.data();
  const auto& vb = b.data();
  double acc = 0;
  for (size_t i = 0; i < va.size(); i += 3) {
    double s = 0;
    for (size_t c = 0; c < 3; ++c) {
      double d = static_cast<double>(va[i + c]) - static_cast<double>(vb[i + c]);
      s += d * d;
    }
    acc += std::sqrt(s);
  }
  return acc / (static_cast<double>(va.size()) / 3.0);
}

// ---------------------------------------------------------------------------
// Training loop.

struct TrainResult {
  MetricsRow last_train;
  MetricsRow last_val;
  bool has_val = false;
  std::string final_ckpt;
};

// Runs cfg.steps optimizer steps (or the remainder after a resume), logging
// to <out_dir>/metrics.csv, echoing the config to <out_dir>/config.resolved,
// and checkpointing every ckpt_every steps plus a final ckpt.  Training
// randomness (batch sampling, forward noise, object-loss draws) comes from
// one stream whose state rides in the checkpoint, so a resumed run replays
// the uninterrupted one bit-for-bit.  `on_log`, if set, sees every row that
// is appended to metrics.csv (train and val alike).
template <typename S>
TrainResult train(Pipeline<S>& pl, const Dataset& ds,
                  const std::string& out_dir,
                  const std::string& resume_path = "",
                  const std::function<void(const MetricsRow&)>& on_log = {}) {
  const TrainConfig& cfg = pl.cfg;
  check(ds.size() > 0, "train: empty dataset");
  check(cfg.val_count >= 0 && cfg.val_count < static_cast<int64_t>(ds.size()),
        "train: val_count ", cfg.val_count, " leaves no training data (",
        ds.size(), " sequences)");
  check(ds.grid == cfg.world.grid, "train: dataset grid ", ds.grid,
        " != config grid ", cfg.world.grid);

  std::filesystem::create_directories(out_dir);
  {
    std::ofstream out(out_dir + "/config.resolved");
    check(out.good(), "cannot write ", out_dir, "/config.resolved");
    out << serialize_config(cfg);
  }
  const std::string metrics_path = out_dir + "/metrics.csv";

  const auto n_train = ds.size() - static_cast<size_t>(cfg.val_count);
  std::vector<size_t> val_idx;
  for (size_t i = n_train; i < ds.size(); ++i) val_idx.push_back(i);

  Adam<S> opt(pl.ps, optim_config(cfg));
  Rng rng = Rng(cfg.seed).split(1);
  int64_t start_step = 0;
  if (!resume_path.empty())
    start_step = checkpoint_load(resume_path, pl.ps, opt, rng);

  TrainResult res;
  for (int64_t s = start_step + 1; s <= cfg.steps; ++s) {
    std::vector<size_t> batch;
    for (int64_t b = 0; b < cfg.batch; ++b)
      batch.push_back(static_cast<size_t>(
          rng.next_below(static_cast<int64_t>(n_train))));
    double lr_now =
        lr_at(cfg.schedule, cfg.lr, s - 1, cfg.warmup_steps, cfg.steps);
    MetricsRow row = train_step(pl, opt, ds, batch, rng, s, lr_now);
    res.last_train = row;
    if (cfg.log_every > 0 && (s % cfg.log_every == 0 || s == cfg.steps)) {
      append_metrics(metrics_path, row);
      if (on_log) on_log(row);
    }
    if (cfg.eval_every > 0 && !val_idx.empty() &&
        (s % cfg.eval_every == 0 || s == cfg.steps)) {
      res.last_val = evaluate(pl, ds, val_idx, "val", s);
      res.has_val = true;
      append_metrics(metrics_path, res.last_val);
      if (on_log) on_log(res.last_val);
    }
    if (cfg.ckpt_every > 0 && s % cfg.ckpt_every == 0 && s != cfg.steps)
      checkpoint_save(out_dir + "/ckpt_" + std::to_string(s) + ".sltc", pl.ps,
                      opt, rng, s);
  }
  res.final_ckpt = out_dir + "/ckpt_final.sltc";
  checkpoint_save(res.final_ckpt, pl.ps, opt, rng, cfg.steps);
  return res;
}

// ---------------------------------------------------------------------------
// Whole-loss finite differences.

struct FullGradCheckResult {
  double max_rel = 0;
  std::string worst_param;
  int64_t elements = 0;
  double seconds = 0;
};

// Finite-difference check of the full weighted loss (generative + object +
// task) against backprop, over every parameter tensor of the given config.
// One synthetic sequence is generated from the world config; the noise
// bundle and the object-loss slot draws are frozen so the loss is a
// deterministic function of the parameters.  The object-loss prediction
// targets are frozen at their base-point values: the training objective
// stops their gradient, so the difference quotient must hold them constant
// to measure the same (partial) derivative backprop reports.  `h` defaults
// small because the two chained 1/sigma_out^2 gains make the loss curvature
// stiff; `budget` caps the sampled element count (stride-spread across each
// tensor).
template <typename S = double>
FullGradCheckResult full_grad_check(const TrainConfig& cfg_in,
                                    int64_t budget = 3000, double h = 3e-7) {
  auto t0 = std::chrono::steady_clock::now();
  TrainConfig cfg = cfg_in;
  Pipeline<S> pl(cfg);

  // Step off ReLU corners and zero plateaus: exact-zero pre-activations
  // otherwise put the central difference astride the kink.
  Rng nudge_rng(0x5eed);
  for (size_t i = 0; i < pl.ps.size(); ++i)
    for (auto& v : pl.ps.param(i).data())
      v += static_cast<S>(nudge_rng.uniform(-0.05, 0.05));

  Dataset ds = generate_dataset(cfg.world, 1, cfg.seed + 17);
  Tensor<S> x = sequence_to_tensor<S>(ds, 0);
  int64_t label = sequence_label(ds, 0, cfg.task);
  Rng noise_rng = Rng(cfg.seed).split(3);
  auto noise = make_noise<S>(cfg.model, x.dim(0), noise_rng);

  Tensor<S> frozen;
  {
    NoGradGuard ng;
    auto base = pl.model.run_model(x, noise);
    const auto& z = base.steps.back().z;
    frozen = Tensor<S>::from_data(z.shape(), z.data());
  }

  auto loss = [&]() -> Tensor<S> {
    Rng obj_rng(0xab1e);
    auto trace = pl.model.run_model(x, noise);
    const auto& last = trace.steps.back();
    Tensor<S> obj = object_prediction_loss(pl.model, last.z, obj_rng,
                                           pl.cfg.head, &frozen);
    Tensor<S> logits =
        pl.head(trace.final_context, last.decode.masks, trace.e_raw);
    return total_loss(trace.loss_gen, obj, qa_loss(logits, label),
                      pl.cfg.loss);
  };

  int64_t stride = std::max<int64_t>(
      1, pl.ps.total_elements() / std::max<int64_t>(1, budget));
  auto report = grad_check<S>(loss, pl.ps, h, stride);

  FullGradCheckResult out;
  out.max_rel = report.worst;
  out.worst_param = report.worst_name;
  out.elements = report.elements_checked;
  out.seconds = std::chrono::duration<double>(
                    std::chrono::steady_clock::now() - t0)
                    .count();
  return out;
}

}  // namespace slt
