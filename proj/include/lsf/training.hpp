#pragma once
// Variational training loop: batch assembly over a scene dataset, the
// annealed single-sample objective with optional depth guidance, Adam
// updates under a global gradient-norm cap, and checkpoint serialization.

#include <cstdint>
#include <string>
#include <vector>

#include "lsf/data.hpp"
#include "lsf/model.hpp"

namespace lsf {

struct TrainConfig {
  ModelConfig model;
  double lr = 3e-4;
  int batch_scenes = 2;
  int image_rays = 48;        // per scene per step
  int depth_rays = 0;         // 0 disables the depth-guided term
  double depth_weight = 0.5;  // share of the depth-guided likelihood when on
  int context_views = 2;
  int target_views = 4;
  int posterior_ctx_views = 4;  // views conditioning q: context + early targets
  double like_std = 0.1;        // per-channel color likelihood std
  double density_l1 = 0.0;
  double grad_clip = 10.0;
  int64_t total_steps = 2000;
  double anneal_frac = 0.1;  // fraction of steps ramping beta 0 -> 1
  uint64_t seed = 0;
};

void validate_train(const TrainConfig& cfg);

// Linear warmup: 0 at step 0, 1 from anneal_frac * total_steps onward.
double kl_beta(const TrainConfig& cfg, int64_t step);

// One scene's role assignment for a step. post_extra lists the target views
// that additionally condition the posterior (the posterior always sees the
// context views too).
struct SceneViews {
  const SceneRecord* scene = nullptr;
  std::vector<int> context, targets, post_extra;
};

std::vector<SceneViews> assemble_batch(const SceneDataset& ds,
                                       const TrainConfig& cfg, Rng& rng);

// Per-batch means; reconstruction terms are unbiased estimates of the
// full-image sums, so magnitudes scale with pixel count.
struct ElboStats {
  double image_ll = 0;   // fine-pass color likelihood
  double coarse_ll = 0;  // auxiliary coarse-pass color likelihood
  double depth_ll = 0;   // depth-guided likelihood (0 when disabled)
  double recon_ll = 0;   // mixed reconstruction term entering the bound
  double kl = 0;
  double elbo = 0;  // recon_ll - beta * kl
  double density_reg = 0;
};

// Summed depth-guided ray log-likelihood from two fine-head evaluations per
// ray: density at the observed depth, density at one uniform free-space
// point (scaled by the traversed span), and the color match at the surface.
ad::Var<double> depth_ray_loglik(ad::Var<double> sig_hit,
                                 ad::Var<double> sig_free,
                                 ad::Var<double> col_hit,
                                 const ad::Mat<double>& gt,
                                 const ad::Mat<double>& span, double like_std);

// Negative objective over the batch: -(recon + coarse aux - beta*KL) + reg,
// averaged over scenes. Differentiable w.r.t. every bound parameter.
ad::Var<double> elbo_loss(ParamBinder<double>& b, const TrainConfig& cfg,
                          const std::vector<SceneViews>& batch, double beta,
                          RngKey key, ElboStats* stats);

struct StepMetrics {
  int64_t step = 0;
  double loss = 0;
  double beta = 0;
  double grad_norm = 0;
  ElboStats stats;
  bool applied = false;  // false: step aborted, parameters untouched
  std::string note;
};

// One optimizer step, deterministic in (params, cfg, ds, step). Non-finite
// losses or gradients abort the update and report why.
StepMetrics train_step(ParamTree<double>& params, const TrainConfig& cfg,
                       const SceneDataset& ds, int64_t step);

// ---------------------------------------------------------------------------
// Checkpoints and configuration files
// ---------------------------------------------------------------------------

struct Checkpoint {
  TrainConfig config;
  uint64_t step = 0;
  ParamTree<double> params;
};

void save_checkpoint(const std::string& path, const TrainConfig& cfg,
                     uint64_t step, const ParamTree<double>& params);
Checkpoint load_checkpoint(const std::string& path);

std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);

// Named starting points ("city-analog", "shapenet-analog"): desk-scale
// analogs of the two reference setups, preserving structure and loss mix.
TrainConfig preset_config(const std::string& name);

}  // namespace lsf
