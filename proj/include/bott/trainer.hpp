#pragma once

// Training loop: stride-1 window enumeration, seeded shuffling and
// augmentation, zero-padded batches, the masked loss with hard-negative
// mining, gradient clipping, Adam and a one-cycle learning-rate schedule.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "bott/autodiff.hpp"
#include "bott/config_json.hpp"
#include "bott/featurizer.hpp"
#include "bott/gating.hpp"
#include "bott/loss.hpp"
#include "bott/network.hpp"
#include "bott/trackdb.hpp"
#include "bott/types.hpp"

namespace bott {

struct TrainConfig {
  int epochs = 50;
  int batch_size = 4;
  double lr_max = 1e-3;
  double warmup_frac = 0.3;
  double start_div = 25.0;
  double final_div = 1e4;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  int K = 16;
  int stride = 1;
  std::uint64_t seed = 0;
  double grad_clip = 5.0;  // global norm; 0 disables
  // Windows drawn per epoch after shuffling; 0 uses all of them.
  int windows_per_epoch = 0;
  bool augment = true;
  AugmentConfig augmentation;
  LossConfig loss;

  void validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (!(warmup_frac > 0 && warmup_frac < 1)) throw ConfigError("train: warmup_frac must lie in (0, 1)");
    if (!(lr_max > 0 && start_div >= 1 && final_div >= 1)) throw ConfigError("train: bad learning-rate schedule");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && adam_eps > 0)) throw ConfigError("train: bad Adam");
    if (K < 1 || stride < 1) throw ConfigError("train: K and stride must be >= 1");
    if (grad_clip < 0) throw ConfigError("train: grad_clip must be >= 0");
    if (windows_per_epoch < 0) throw ConfigError("train: windows_per_epoch must be >= 0");
    augmentation.validate();
    loss.validate();
  }
};

inline void to_json(nlohmann::json& j, const AugmentConfig& a) {
  j = {{"max_boxes", a.max_boxes},     {"flip_x_prob", a.flip_x_prob},        {"flip_y_prob", a.flip_y_prob},
       {"yaw_range", a.yaw_range},     {"drop_track_prob", a.drop_track_prob}};
}

inline void from_json(const nlohmann::json& j, AugmentConfig& a) {
  check_keys(j, {"max_boxes", "flip_x_prob", "flip_y_prob", "yaw_range", "drop_track_prob"}, "augmentation");
  read_opt(j, "max_boxes", a.max_boxes);
  read_opt(j, "flip_x_prob", a.flip_x_prob);
  read_opt(j, "flip_y_prob", a.flip_y_prob);
  read_opt(j, "yaw_range", a.yaw_range);
  read_opt(j, "drop_track_prob", a.drop_track_prob);
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"lr_max", c.lr_max},
       {"warmup_frac", c.warmup_frac},
       {"start_div", c.start_div},
       {"final_div", c.final_div},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"adam_eps", c.adam_eps},
       {"K", c.K},
       {"stride", c.stride},
       {"seed", c.seed},
       {"grad_clip", c.grad_clip},
       {"windows_per_epoch", c.windows_per_epoch},
       {"augment", c.augment},
       {"augmentation", c.augmentation},
       {"loss", c.loss}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  check_keys(j,
             {"epochs", "batch_size", "lr_max", "warmup_frac", "start_div", "final_div", "beta1", "beta2", "adam_eps",
              "K", "stride", "seed", "grad_clip", "windows_per_epoch", "augment", "augmentation", "loss"},
             "train");
  read_opt(j, "epochs", c.epochs);
  read_opt(j, "batch_size", c.batch_size);
  read_opt(j, "lr_max", c.lr_max);
  read_opt(j, "warmup_frac", c.warmup_frac);
  read_opt(j, "start_div", c.start_div);
  read_opt(j, "final_div", c.final_div);
  read_opt(j, "beta1", c.beta1);
  read_opt(j, "beta2", c.beta2);
  read_opt(j, "adam_eps", c.adam_eps);
  read_opt(j, "K", c.K);
  read_opt(j, "stride", c.stride);
  read_opt(j, "seed", c.seed);
  read_opt(j, "grad_clip", c.grad_clip);
  read_opt(j, "windows_per_epoch", c.windows_per_epoch);
  read_opt(j, "augment", c.augment);
  read_opt(j, "augmentation", c.augmentation);
  read_opt(j, "loss", c.loss);
}

/// Cosine warm-up from lr_max / start_div to lr_max at step
/// warmup_frac * (total - 1), then cosine decay to lr_max / final_div at
/// the last step.
inline double one_cycle_lr(long step, long total_steps, const TrainConfig& cfg) {
  if (total_steps < 1 || step < 0 || step >= total_steps)
    throw std::domain_error("one_cycle_lr: step " + std::to_string(step) + " outside [0, " +
                            std::to_string(total_steps) + ")");
  if (total_steps == 1) return cfg.lr_max;
  const double last = static_cast<double>(total_steps - 1);
  const double peak = cfg.warmup_frac * last;
  const double s = static_cast<double>(step);
  auto cosine = [](double from, double to, double frac) {
    return to + (from - to) * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
  };
  if (s <= peak) return cosine(cfg.lr_max / cfg.start_div, cfg.lr_max, peak > 0 ? s / peak : 1.0);
  return cosine(cfg.lr_max, cfg.lr_max / cfg.final_div, (s - peak) / (last - peak));
}

struct AdamState {
  Params<float> m, v;
  long t = 0;
};

inline AdamState make_adam_state(const Params<float>& params) {
  AdamState s;
  for (const auto& [k, p] : params) {
    s.m[k] = ad::Tensor<float>::Zero(p.rows(), p.cols());
    s.v[k] = ad::Tensor<float>::Zero(p.rows(), p.cols());
  }
  return s;
}

/// Bias-corrected Adam update. A non-finite gradient rejects the whole
/// update and leaves parameters and state untouched (returns false).
inline bool adam_step(Params<float>& params, const Params<float>& grads, AdamState& state, double lr,
                      const TrainConfig& cfg) {
  for (const auto& [k, g] : grads) {
    auto it = params.find(k);
    if (it == params.end() || it->second.rows() != g.rows() || it->second.cols() != g.cols())
      throw std::domain_error("adam_step: gradient " + k + " does not match the parameters");
    if (!g.allFinite()) return false;
  }
  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  const auto b1 = static_cast<float>(cfg.beta1), b2 = static_cast<float>(cfg.beta2);
  const auto step = static_cast<float>(lr / bc1);
  const auto inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
  const auto eps = static_cast<float>(cfg.adam_eps);
  for (const auto& [k, g] : grads) {
    auto& m = state.m.at(k);
    auto& v = state.v.at(k);
    m = b1 * m + (1.0f - b1) * g;
    v = b2 * v + (1.0f - b2) * g.cwiseProduct(g);
    params.at(k).array() -= step * m.array() / ((v.array().sqrt() * inv_sqrt_bc2) + eps);
  }
  return true;
}

/// A window identified by scene index and first frame.
struct WindowRef {
  std::size_t scene = 0;
  std::size_t start = 0;

  bool operator==(const WindowRef&) const = default;
};

/// Every stride-spaced K-frame window. Scenes shorter than K are skipped and
/// reported through `warn`.
inline std::vector<WindowRef> enumerate_windows(const std::vector<SceneDB>& scenes, const TrainConfig& cfg,
                                                const std::function<void(const std::string&)>& warn = {}) {
  std::vector<WindowRef> out;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    if (scenes[s].frames.size() < static_cast<std::size_t>(cfg.K)) {
      if (warn) warn("scene " + scenes[s].scene_id + " shorter than K; skipped");
      continue;
    }
    for (std::size_t st : window_starts(scenes[s].frames.size(), static_cast<std::size_t>(cfg.K),
                                        static_cast<std::size_t>(cfg.stride)))
      out.push_back({s, st});
  }
  return out;
}

inline std::mt19937_64 seeded_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a),    static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b),    static_cast<std::uint32_t>(b >> 32)};
  return std::mt19937_64(seq);
}

/// Batches of one epoch: windows shuffled by (seed, epoch), optionally
/// truncated to windows_per_epoch, then cut into batch_size groups.
inline std::vector<std::vector<WindowRef>> make_batches(const std::vector<WindowRef>& windows, const TrainConfig& cfg,
                                                        int epoch) {
  std::vector<WindowRef> order = windows;
  auto rng = seeded_rng(cfg.seed, 0x5348554646ull, static_cast<std::uint64_t>(epoch));
  std::shuffle(order.begin(), order.end(), rng);
  if (cfg.windows_per_epoch > 0 && order.size() > static_cast<std::size_t>(cfg.windows_per_epoch))
    order.resize(static_cast<std::size_t>(cfg.windows_per_epoch));
  std::vector<std::vector<WindowRef>> out;
  for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(cfg.batch_size))
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(
                                         std::min(order.size(), i + static_cast<std::size_t>(cfg.batch_size))));
  return out;
}

inline std::size_t batches_per_epoch(std::size_t num_windows, const TrainConfig& cfg) {
  std::size_t n = num_windows;
  if (cfg.windows_per_epoch > 0) n = std::min(n, static_cast<std::size_t>(cfg.windows_per_epoch));
  return (n + static_cast<std::size_t>(cfg.batch_size) - 1) / static_cast<std::size_t>(cfg.batch_size);
}

/// A window prepared for the loss: features plus targets and the mined mask.
struct TrainingSample {
  SlidingWindow window;
  RawFeatureMatrix features;
  LinkTargets targets;
};

struct StepRecord {
  long step = 0;
  int epoch = 0;
  double lr = 0;
  double loss = 0;
  std::size_t n_pos = 0;
  std::size_t n_neg_active = 0;
  std::size_t windows = 0;
  std::size_t skipped_windows = 0;
  bool applied = false;
};

inline nlohmann::json to_json(const StepRecord& r) {
  return {{"step", r.step},       {"epoch", r.epoch},     {"lr", r.lr},
          {"loss", r.loss},       {"n_pos", r.n_pos},     {"n_neg_active", r.n_neg_active},
          {"windows", r.windows}, {"skipped", r.skipped_windows}, {"applied", r.applied}};
}

struct StepResult {
  double loss = 0;
  std::size_t n_pos = 0;
  std::size_t n_neg_active = 0;
  std::size_t used = 0;
  Params<float> grads;
};

/// Loss and parameter gradients of one zero-padded batch. Windows whose
/// mined mask is empty are dropped before the forward pass.
inline std::optional<StepResult> batch_gradients(const std::vector<TrainingSample>& samples, const Params<float>& params,
                                                 const NetworkConfig& net, const LossConfig& loss_cfg) {
  std::vector<RawFeatureMatrix> feats;
  std::vector<const LinkTargets*> targets;
  for (const auto& s : samples) {
    if (s.features.rows() == 0 || !s.targets.M.any()) continue;
    feats.push_back(s.features);
    targets.push_back(&s.targets);
  }
  if (feats.empty()) return std::nullopt;
  const PaddedBatch batch = pad_batch(feats);

  ad::Tape<float> tape;
  const ParamVars pv = bind_params(tape, params, true);
  const ad::Var x = tape.constant(network_input<float>(batch.features, net));
  const ad::Var e = encode_on_tape(tape, net, pv, x, batch.block_rows, batch.pad_mask);

  // First pass: mine negatives on current scores to size the normalizer.
  std::vector<ad::Var> scores;
  std::vector<BoolMatrix> active;
  std::size_t total_active = 0;
  StepResult r;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const ad::Var rows = ad::slice_rows(tape, e, static_cast<Eigen::Index>(k) * batch.block_rows, batch.n_real[k]);
    const ad::Var ls = ad::pairwise_scores(tape, ad::l2_normalize_rows(tape, rows));
    const LinkTargets& t = *targets[k];
    BoolMatrix mined = hard_negative_mine(tape.value(ls), t.y, t.M, loss_cfg.kappa);
    const LinkCounts c = count_links(t.y, mined);
    r.n_pos += c.positives;
    r.n_neg_active += c.negatives;
    total_active += static_cast<std::size_t>(mined.count());
    scores.push_back(ls);
    active.push_back(std::move(mined));
  }
  if (total_active == 0) return std::nullopt;

  std::vector<ad::Var> terms;
  for (std::size_t k = 0; k < scores.size(); ++k) {
    if (!active[k].any()) continue;
    const auto bce = masked_bce(tape.value(scores[k]), targets[k]->y, active[k], loss_cfg.beta, loss_cfg.clamp_eps,
                                static_cast<double>(total_active));
    r.loss += bce.loss;
    terms.push_back(ad::custom_scalar(tape, scores[k], static_cast<float>(bce.loss), bce.grad));
    ++r.used;
  }
  ad::Var root = terms.front();
  for (std::size_t k = 1; k < terms.size(); ++k) root = ad::add(tape, root, terms[k]);
  tape.backward(root);
  for (const auto& [name, v] : pv) r.grads[name] = tape.grad(v);
  return r;
}

/// Scales gradients so their global L2 norm is at most `max_norm`.
inline double clip_global_norm(Params<float>& grads, double max_norm) {
  double sq = 0;
  for (const auto& [k, g] : grads) sq += g.cast<double>().squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const auto f = static_cast<float>(max_norm / norm);
    for (auto& [k, g] : grads) g *= f;
  }
  return norm;
}

/// Builds the training sample of a window under the epoch's augmentation.
inline TrainingSample prepare_sample(const SceneDB& scene, const WindowRef& ref, const TrainConfig& cfg, int epoch,
                                     std::size_t ordinal) {
  TrainingSample s;
  s.window = window_at(scene, ref.start, static_cast<std::size_t>(cfg.K));
  if (cfg.augment) {
    auto rng = seeded_rng(cfg.seed ^ 0xA5A5A5A5ull, static_cast<std::uint64_t>(epoch), ordinal);
    s.window = augment(std::move(s.window), cfg.augmentation, rng);
  }
  if (s.window.N() == 0) return s;
  s.features = featurize(s.window);
  s.targets = build_link_targets(s.window, cfg.loss);
  return s;
}

struct TrainState {
  Model model;
  AdamState adam;
  int next_epoch = 0;
  long step = 0;
};

struct TrainOptions {
  std::filesystem::path out_dir;  // empty: no files written
  std::function<void(const StepRecord&)> on_step;
  std::function<void(const std::string&)> warn;
  bool quiet = true;
  // Stop after this many epochs in this call (for resumption tests); 0 = all.
  int max_epochs_this_run = 0;
};

inline void save_train_state(const std::filesystem::path& path, const TrainState& st, const TrainConfig& cfg) {
  Params<float> extra;
  for (const auto& [k, v] : st.adam.m) extra["adam.m." + k] = v;
  for (const auto& [k, v] : st.adam.v) extra["adam.v." + k] = v;
  nlohmann::json meta;
  meta["train"] = cfg;
  meta["next_epoch"] = st.next_epoch;
  meta["step"] = st.step;
  meta["adam_t"] = st.adam.t;
  save_checkpoint(path, st.model, extra, meta);
}

inline TrainState load_train_state(const std::filesystem::path& path) {
  auto ck = load_checkpoint(path);
  TrainState st;
  st.model = std::move(ck.model);
  st.adam = make_adam_state(st.model.params);
  for (auto& [k, v] : ck.extra_tensors) {
    if (k.rfind("adam.m.", 0) == 0) st.adam.m.at(k.substr(7)) = std::move(v);
    if (k.rfind("adam.v.", 0) == 0) st.adam.v.at(k.substr(7)) = std::move(v);
  }
  st.adam.t = ck.meta.value("adam_t", 0L);
  st.next_epoch = ck.meta.value("next_epoch", 0);
  st.step = ck.meta.value("step", 0L);
  return st;
}

inline TrainState init_train_state(const NetworkConfig& net, const TrainConfig& cfg) {
  auto rng = seeded_rng(cfg.seed, 0x494E4954ull);
  TrainState st;
  st.model = make_model(net, rng);
  st.adam = make_adam_state(st.model.params);
  return st;
}

/// Runs (or continues) training. Writes `train_log.jsonl` and
/// `checkpoint.bott` after every epoch when out_dir is set.
inline TrainState train(const std::vector<SceneDB>& scenes, TrainState st, const TrainConfig& cfg,
                        const TrainOptions& opt = {}) {
  cfg.validate();
  st.model.config.validate();
  if (cfg.loss.class_max_speed.size() < static_cast<std::size_t>(st.model.config.num_classes()))
    throw ConfigError("train: loss.class_max_speed must cover every class");
  const auto windows = enumerate_windows(scenes, cfg, opt.warn);
  if (windows.empty()) throw std::domain_error("train: no training windows");
  const long per_epoch = static_cast<long>(batches_per_epoch(windows.size(), cfg));
  const long total = per_epoch * cfg.epochs;

  std::ofstream log;
  if (!opt.out_dir.empty()) {
    std::filesystem::create_directories(opt.out_dir);
    log.open(opt.out_dir / "train_log.jsonl", st.step > 0 ? std::ios::app : std::ios::trunc);
  }
  int epochs_run = 0;
  for (int epoch = st.next_epoch; epoch < cfg.epochs; ++epoch) {
    if (opt.max_epochs_this_run > 0 && epochs_run == opt.max_epochs_this_run) break;
    const auto batches = make_batches(windows, cfg, epoch);
    std::size_t ordinal = 0;
    for (const auto& batch : batches) {
      StepRecord rec;
      rec.step = st.step;
      rec.epoch = epoch;
      rec.lr = one_cycle_lr(st.step, total, cfg);
      std::vector<TrainingSample> samples;
      for (const auto& ref : batch) {
        samples.push_back(prepare_sample(scenes[ref.scene], ref, cfg, epoch, ordinal++));
        if (samples.back().features.rows() == 0 || !samples.back().targets.M.any()) ++rec.skipped_windows;
      }
      std::optional<StepResult> res;
      try {
        res = batch_gradients(samples, st.model.params, st.model.config, cfg.loss);
      } catch (const std::domain_error& e) {
        if (opt.warn) opt.warn(std::string("step ") + std::to_string(st.step) + " skipped: " + e.what());
      }
      if (res) {
        rec.loss = res->loss;
        rec.n_pos = res->n_pos;
        rec.n_neg_active = res->n_neg_active;
        rec.windows = res->used;
        clip_global_norm(res->grads, cfg.grad_clip);
        rec.applied = adam_step(st.model.params, res->grads, st.adam, rec.lr, cfg);
      }
      if (log.is_open()) log << to_json(rec).dump() << '\n';
      if (opt.on_step) opt.on_step(rec);
      if (!opt.quiet && st.step % 50 == 0)
        std::cerr << "epoch " << epoch << " step " << st.step << "/" << total << " lr " << rec.lr << " loss "
                  << rec.loss << '\n';
      ++st.step;
    }
    st.next_epoch = epoch + 1;
    ++epochs_run;
    if (!opt.out_dir.empty()) save_train_state(opt.out_dir / "checkpoint.bott", st, cfg);
  }
  return st;
}

/// Loss settings whose speed limits come from per-class gate limits.
inline LossConfig loss_config_for(const std::vector<std::string>& class_names, LossConfig base = {}) {
  if (base.class_max_speed.empty())
    for (const auto& n : class_names) base.class_max_speed.push_back(default_class_limits(n).max_speed);
  return base;
}

}  // namespace bott
