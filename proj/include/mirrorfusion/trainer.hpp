#pragma once

// Training of the conditioning branch (and optionally the generation branch)
// with the noise-prediction MSE objective.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mirrorfusion/checkpoint.hpp"
#include "mirrorfusion/depth_conditioning.hpp"
#include "mirrorfusion/diffusion.hpp"
#include "mirrorfusion/dual_branch.hpp"
#include "mirrorfusion/io/dataset.hpp"
#include "mirrorfusion/optim.hpp"

namespace mf {

struct TrainConfig {
  double learning_rate = 1e-5;
  int batch_size = 16;
  int max_steps = 20000;
  double prompt_drop_prob = 0.2;
  bool freeze_generation = true;
  double weight_decay = 1e-2;
  std::uint64_t seed = 0;
  int checkpoint_every = 1000;
  /// Linear learning-rate ramp over the first steps; 0 disables it.
  int warmup_steps = 0;
  /// Micro-batches per optimizer step; the effective batch is
  /// batch_size * accumulation_steps.
  int accumulation_steps = 1;
  /// Samples held out for validation loss (taken from the end of the sorted
  /// sample list); 0 evaluates on the first training samples instead.
  int validation_samples = 0;
  int validation_draws = 4;
  ScheduleKind schedule = ScheduleKind::linear;
  UNetConfig model;
  std::string output_dir = "train_out";

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
      throw InvalidArgument("TrainConfig: learning_rate must be finite and >= 0");
    }
    if (batch_size < 1 || max_steps < 1 || accumulation_steps < 1) {
      throw InvalidArgument("TrainConfig: batch_size, max_steps and accumulation_steps must be positive");
    }
    if (!(prompt_drop_prob >= 0.0 && prompt_drop_prob <= 1.0)) {
      throw InvalidArgument("TrainConfig: prompt_drop_prob must lie in [0,1]");
    }
    if (!(weight_decay >= 0.0)) throw InvalidArgument("TrainConfig: weight_decay must be >= 0");
    if (checkpoint_every < 0 || warmup_steps < 0 || validation_samples < 0 || validation_draws < 1) {
      throw InvalidArgument("TrainConfig: negative checkpoint/validation setting");
    }
    model.validate();
  }
};


inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"learning_rate", c.learning_rate},
       {"batch_size", c.batch_size},
       {"max_steps", c.max_steps},
       {"prompt_drop_prob", c.prompt_drop_prob},
       {"freeze_generation", c.freeze_generation},
       {"weight_decay", c.weight_decay},
       {"seed", c.seed},
       {"checkpoint_every", c.checkpoint_every},
       {"warmup_steps", c.warmup_steps},
       {"accumulation_steps", c.accumulation_steps},
       {"validation_samples", c.validation_samples},
       {"validation_draws", c.validation_draws},
       {"schedule", c.schedule},
       {"model", c.model},
       {"output_dir", c.output_dir}};
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  static const std::vector<std::string> known{
      "learning_rate", "batch_size",         "max_steps",          "prompt_drop_prob", "freeze_generation",
      "weight_decay",  "seed",               "checkpoint_every",   "warmup_steps",   "accumulation_steps", "validation_samples",
      "validation_draws", "schedule",        "model",              "output_dir",       "dataset_dir"};
  for (const auto& [k, v] : j.items()) {
    if (std::find(known.begin(), known.end(), k) == known.end()) {
      throw InvalidArgument("TrainConfig: unknown key '" + k + "'");
    }
  }
  const TrainConfig d;
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.max_steps = j.value("max_steps", d.max_steps);
  c.prompt_drop_prob = j.value("prompt_drop_prob", d.prompt_drop_prob);
  c.freeze_generation = j.value("freeze_generation", d.freeze_generation);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.seed = j.value("seed", d.seed);
  c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
  c.warmup_steps = j.value("warmup_steps", d.warmup_steps);
  c.accumulation_steps = j.value("accumulation_steps", d.accumulation_steps);
  c.validation_samples = j.value("validation_samples", d.validation_samples);
  c.validation_draws = j.value("validation_draws", d.validation_draws);
  c.schedule = j.value("schedule", d.schedule);
  c.model = j.value("model", d.model);
  c.output_dir = j.value("output_dir", d.output_dir);
}

/// One training example at latent resolution.
struct TrainSample {
  std::string key;
  LatentTensor z0;
  ConditionBundle cond;
  std::string prompt;
};

inline TrainSample make_train_sample(const RenderSample& s, const std::string& key,
                                     const ConditionOptions& opt = {}) {
  TrainSample t;
  t.key = key;
  t.z0 = encode(s.rgb, opt.patch_factor);
  try {
    t.cond = build_condition(s.rgb, s.mirror_mask, s.depth, opt);
  } catch (const Error& e) {
    throw InvalidArgument(key + ": " + e.what());
  }
  t.prompt = s.meta.value("prompt", std::string());
  return t;
}

/// Loads every sample under `dataset_dir`; errors name the offending path.
inline std::vector<TrainSample> load_train_samples(const std::filesystem::path& dataset_dir,
                                                   const ConditionOptions& opt = {}) {
  std::vector<TrainSample> out;
  for (const auto& dir : io::list_samples(dataset_dir)) {
    try {
      out.push_back(make_train_sample(io::read_sample(dir), io::sample_key(dir), opt));
    } catch (const IoError&) {
      throw;
    } catch (const Error& e) {
      throw IoError(dir.string() + ": " + e.what());
    }
  }
  if (out.empty()) throw IoError(dataset_dir.string() + ": dataset contains no samples");
  return out;
}

/// Observes each drawn example: (step, sample index, timestep, prompt dropped).
using SampleHook = std::function<void(int, std::size_t, int, bool)>;

/// Owns the model, optimizer and sampling stream for one training run.
class Trainer {
 public:
  Trainer(TrainConfig cfg, std::vector<TrainSample> data)
      : cfg_(std::move(cfg)), data_(std::move(data)), rng_(cfg_.seed) {
    cfg_.validate();
    if (data_.empty()) throw InvalidArgument("Trainer: no training samples");
    cfg_.model.freeze_generation = cfg_.freeze_generation;
    cfg_.model.schedule = cfg_.schedule;
    model_ = DualBranchModel<float>::build(cfg_.model, cfg_.seed);
    sched_ = make_schedule(kTrainTimesteps, cfg_.schedule);
    AdamWOptions o;
    o.lr = cfg_.learning_rate;
    o.weight_decay = cfg_.weight_decay;
    opt_ = AdamW<float>(o);
    model_.visit([&](nn::Param<float>& p) { params_.push_back(&p); });
    split_validation();
  }

  DualBranchModel<float>& model() { return model_; }
  const TrainConfig& config() const { return cfg_; }
  const NoiseSchedule& schedule() const { return sched_; }
  int step_count() const { return step_; }
  std::size_t train_size() const { return train_idx_.size(); }
  void set_hook(SampleHook h) { hook_ = std::move(h); }

  /// Loss of one example and, when `accumulate_scale` > 0, its gradient scaled
  /// by that factor added to the parameter gradients.
  double example_loss(const TrainSample& s, int t, const LatentTensor& eps, bool drop, float accumulate_scale) {
    const LatentTensor z_t = q_sample(s.z0, eps, t, sched_);
    const TextEmbedding text = model_.embed_prompt(s.prompt, drop);
    const LatentTensor out = model_.forward_joint(z_t, s.cond, t, text);
    const double loss = denoise_loss(out, eps);
    if (!std::isfinite(loss)) {
      throw NonFiniteError("training loss is " + std::to_string(loss) + " at step " + std::to_string(step_ + 1) +
                           " (sample " + s.key + ", t=" + std::to_string(t) + ")");
    }
    if (accumulate_scale > 0.0f) {
      nn::Feature<float> g = nn::to_feature<float>(out);
      const float k = 2.0f * accumulate_scale / static_cast<float>(out.size());
      for (std::size_t i = 0; i < out.size(); ++i) g.x.data()[i] = k * (out.values()[i] - eps.values()[i]);
      model_.backward_joint(g);
    }
    return loss;
  }

  /// One training draw: which sample, timestep, whether the prompt is
  /// dropped, and the target noise.
  struct Draw {
    std::size_t index = 0;
    int t = 0;
    bool dropped = false;
    LatentTensor eps;
  };

  /// Advances the training random stream by one example.
  Draw draw() {
    Draw d;
    d.index = next_index();
    const TrainSample& s = data_[d.index];
    d.t = std::uniform_int_distribution<int>(0, sched_.T - 1)(rng_);
    d.dropped = std::bernoulli_distribution(cfg_.prompt_drop_prob)(rng_);
    d.eps = gaussian_like<float>(s.z0.height(), s.z0.width(), s.z0.channels(), rng_);
    return d;
  }

  /// One optimizer step over batch_size * accumulation_steps examples; returns
  /// the mean loss.
  double train_step() {
    const int n = cfg_.batch_size * cfg_.accumulation_steps;
    model_.zero_grad();
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      const Draw d = draw();
      if (hook_) hook_(step_ + 1, d.index, d.t, d.dropped);
      total += example_loss(data_[d.index], d.t, d.eps, d.dropped, 1.0f / static_cast<float>(n));
    }
    if (cfg_.warmup_steps > 0) {
      opt_.set_lr(cfg_.learning_rate * std::min(1.0, static_cast<double>(step_ + 1) / cfg_.warmup_steps));
    }
    opt_.step(params_);
    ++step_;
    return total / n;
  }

  /// Mean loss over fixed (sample, t, noise) draws; independent of training
  /// randomness.
  double validation_loss() {
    std::mt19937_64 rng(cfg_.seed ^ 0x5eedULL);
    std::uniform_int_distribution<int> tdist(0, sched_.T - 1);
    double total = 0.0;
    int count = 0;
    for (std::size_t idx : val_idx_) {
      const TrainSample& s = data_[idx];
      for (int k = 0; k < cfg_.validation_draws; ++k) {
        const int t = tdist(rng);
        const LatentTensor eps = gaussian_like<float>(s.z0.height(), s.z0.width(), s.z0.channels(), rng);
        total += example_loss(s, t, eps, false, 0.0f);
        ++count;
      }
    }
    return total / std::max(count, 1);
  }

 private:
  void split_validation() {
    const std::size_t n = data_.size();
    const std::size_t v = std::min<std::size_t>(cfg_.validation_samples, n > 1 ? n - 1 : 0);
    for (std::size_t i = 0; i < n - v; ++i) train_idx_.push_back(i);
    for (std::size_t i = n - v; i < n; ++i) val_idx_.push_back(i);
    if (val_idx_.empty()) {
      for (std::size_t i = 0; i < std::min<std::size_t>(n, 8); ++i) val_idx_.push_back(i);
    }
  }

  /// Epoch-wise shuffled order over the training indices.
  std::size_t next_index() {
    if (cursor_ >= order_.size()) {
      order_ = train_idx_;
      for (std::size_t i = order_.size(); i > 1; --i) {
        std::swap(order_[i - 1], order_[std::uniform_int_distribution<std::size_t>(0, i - 1)(rng_)]);
      }
      cursor_ = 0;
    }
    return order_[cursor_++];
  }

  TrainConfig cfg_;
  std::vector<TrainSample> data_;
  std::mt19937_64 rng_;
  DualBranchModel<float> model_;
  NoiseSchedule sched_;
  AdamW<float> opt_;
  std::vector<nn::Param<float>*> params_;
  std::vector<std::size_t> train_idx_, val_idx_, order_;
  std::size_t cursor_ = 0;
  int step_ = 0;
  SampleHook hook_;
};

/// Fixed-precision loss formatting shared by the log and the reports.
inline std::string format_loss(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.8e", v);
  return buf;
}

struct TrainResult {
  std::vector<double> losses;  // one per step
  std::filesystem::path log_path;
  std::filesystem::path last_checkpoint;
  std::filesystem::path best_checkpoint;
  int best_step = 0;
  double best_validation_loss = std::numeric_limits<double>::infinity();
};

/// Trains on the dataset under `dataset_dir`, writing into cfg.output_dir:
///   loss.tsv                 one "step<TAB>loss" line per step
///   checkpoints/step_<n>.mfc every checkpoint_every steps
///   checkpoints/last.mfc, checkpoints/best.mfc (lowest validation loss)
///   config.json, validation.tsv
inline TrainResult run_training(const std::filesystem::path& dataset_dir, const TrainConfig& cfg,
                                SampleHook hook = {}) {
  namespace fs = std::filesystem;
  cfg.validate();
  Trainer trainer(cfg, load_train_samples(dataset_dir));
  if (hook) trainer.set_hook(std::move(hook));
  const fs::path out = cfg.output_dir;
  fs::create_directories(out / "checkpoints");
  io::write_json(out / "config.json", cfg);

  TrainResult res;
  res.log_path = out / "loss.tsv";
  std::ofstream log(res.log_path, std::ios::binary | std::ios::trunc);
  std::ofstream vlog(out / "validation.tsv", std::ios::binary | std::ios::trunc);
  if (!log || !vlog) throw IoError(out.string() + ": cannot create log files");

  auto checkpoint = [&](int step) {
    const double v = trainer.validation_loss();
    vlog << step << "\t" << format_loss(v) << "\n";
    const nlohmann::json meta{{"step", step}, {"validation_loss", v}, {"dataset", dataset_dir.string()}};
    if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) {
      save_checkpoint(out / "checkpoints" / ("step_" + std::to_string(step) + ".mfc"), trainer.model(), meta);
    }
    if (v < res.best_validation_loss) {
      res.best_validation_loss = v;
      res.best_step = step;
      res.best_checkpoint = out / "checkpoints" / "best.mfc";
      save_checkpoint(res.best_checkpoint, trainer.model(), meta);
    }
  };

  for (int step = 1; step <= cfg.max_steps; ++step) {
    const double loss = trainer.train_step();
    res.losses.push_back(loss);
    log << step << "\t" << format_loss(loss) << "\n";
    if ((cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) || step == cfg.max_steps) checkpoint(step);
  }
  log.flush();
  res.last_checkpoint = out / "checkpoints" / "last.mfc";
  save_checkpoint(res.last_checkpoint, trainer.model(),
                  {{"step", cfg.max_steps}, {"dataset", dataset_dir.string()}});
  return res;
}

}  // namespace mf
