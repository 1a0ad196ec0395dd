#pragma once
// Assembles the generative model out of the encoder, scene function, and
// latent modules, and dispatches latent sampling and density per variant.
//
// Variants share one parameter tree layout: "enc" (image encoder), "sf"
// (scene function), and the latent heads "prior" / "post" where present.
// The structural flags on the scene function are derived from the variant,
// never set by hand; scene_cfg() is the single source of truth.

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lsf/encoder.hpp"
#include "lsf/flow.hpp"
#include "lsf/geometry.hpp"
#include "lsf/params.hpp"
#include "lsf/renderer.hpp"
#include "lsf/rng.hpp"
#include "lsf/scenefn.hpp"

namespace lsf {

enum class Variant { LaserNv, LaserNoGeom, Mvcn, CondNerfVae, NerfVae };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::LaserNv: return "laser-nv";
    case Variant::LaserNoGeom: return "laser-no-geom";
    case Variant::Mvcn: return "mvcn";
    case Variant::CondNerfVae: return "cond-nerf-vae";
    case Variant::NerfVae: return "nerf-vae";
  }
  throw InputError("unknown variant");
}

inline Variant variant_from_string(const std::string& name) {
  for (Variant v : {Variant::LaserNv, Variant::LaserNoGeom, Variant::Mvcn,
                    Variant::CondNerfVae, Variant::NerfVae})
    if (name == variant_name(v)) return v;
  throw InputError("unknown model variant: " + name);
}

struct ModelConfig {
  Variant variant = Variant::LaserNv;
  int latent_k = 8;    // set size K (forced to 1 for single-vector baselines)
  int latent_d = 32;   // element width D
  int prior_layers = 8;
  int posterior_layers = 4;
  int flow_hidden = 64;
  int flow_heads = 4;
  int gauss_hidden = 256;  // width of the Gaussian heads of the VAE baselines
  EncoderConfig enc;
  SceneFnConfig scene;
  RenderConfig render;

  bool has_latents() const { return variant != Variant::Mvcn; }
  bool uses_flows() const {
    return variant == Variant::LaserNv || variant == Variant::LaserNoGeom;
  }
  int token_dim() const { return enc.base << enc.levels; }
  int stack_channels() const { return enc.base * ((2 << enc.levels) - 2); }

  FlowConfig prior_flow() const {
    return {prior_layers,     flow_hidden, flow_heads,
            latent_d,         token_dim(), FlowDirection::Inverted};
  }
  FlowConfig posterior_flow() const {
    return {posterior_layers, flow_hidden, flow_heads,
            latent_d,         token_dim(), FlowDirection::Forward};
  }
};

// Scene-function configuration with the variant's structural choices applied.
// The stored scene config only contributes sizes and encoding ranges.
inline SceneFnConfig scene_cfg(const ModelConfig& cfg) {
  SceneFnConfig sc = cfg.scene;
  switch (cfg.variant) {
    case Variant::LaserNv:
      sc.use_latents = true;
      sc.use_geom = true;
      break;
    case Variant::LaserNoGeom:
      sc.use_latents = true;
      sc.use_geom = false;
      break;
    case Variant::Mvcn:
      sc.use_latents = false;
      sc.use_geom = true;
      sc.bg = BgVariant::ConstantWhite;  // attentive domes need latents
      break;
    case Variant::CondNerfVae:
    case Variant::NerfVae:
      sc.use_latents = true;
      sc.use_geom = false;
      break;
  }
  return sc;
}

inline void validate_model(const ModelConfig& cfg) {
  if (cfg.latent_k < 1) throw InputError("latent_k must be >= 1");
  if (cfg.latent_d < 1) throw InputError("latent_d must be >= 1");
  if (cfg.uses_flows() && cfg.latent_d % 2 != 0)
    throw InputError("flow variants need an even latent_d");
  if ((cfg.variant == Variant::CondNerfVae || cfg.variant == Variant::NerfVae) &&
      cfg.latent_k != 1)
    throw InputError("single-vector baselines require latent_k == 1");
}

namespace model_detail {

// Two ReLU layers over mean-pooled tokens, then mean and soft-clamped
// log-std heads. The heads start at zero so the initial density is N(0, I).
inline void declare_gauss(ParamTree<double>& tree, const std::string& prefix,
                          int token_dim, int hidden, int latent_d, Rng& rng) {
  auto lin = [&](const std::string& name, int in, int out, bool zero) {
    auto& w = tree.declare(name + ".w", in, out);
    if (!zero) init_normal(w, rng, 1.0 / std::sqrt(static_cast<double>(in)));
    tree.declare(name + ".b", 1, out);
  };
  lin(prefix + ".g1", token_dim, hidden, false);
  lin(prefix + ".g2", hidden, hidden, false);
  lin(prefix + ".mu", hidden, latent_d, true);
  lin(prefix + ".ls", hidden, latent_d, true);
}

struct GaussHead {
  ad::Var<double> mu, ls;  // 1 x D
};

inline GaussHead gauss_head(ParamBinder<double>& b, const std::string& prefix,
                            ad::Var<double> tokens) {
  auto lin = [&](ad::Var<double> x, const std::string& name) {
    return ad::add_rowvec(ad::matmul(x, b(name + ".w")), b(name + ".b"));
  };
  auto h = ad::relu(lin(ad::colmean(tokens), prefix + ".g1"));
  h = ad::relu(lin(h, prefix + ".g2"));
  auto ls = ad::scale(ad::tanh(ad::scale(lin(h, prefix + ".ls"), 0.2)), 5.0);
  return {lin(h, prefix + ".mu"), ls};
}

inline ad::Var<double> gauss_logprob(const GaussHead& g, ad::Var<double> z) {
  if (z.rows() != 1 || z.cols() != g.mu.cols())
    throw InputError("gaussian latent must be 1 x D");
  auto r = ad::mul(ad::sub(z, g.mu), ad::exp(ad::neg(g.ls)));
  auto quad = ad::scale(ad::sum_all(ad::square(r)), -0.5);
  double c = -0.5 * static_cast<double>(z.cols()) * flow_detail::kLogTwoPi;
  return ad::add_const(ad::sub(quad, ad::sum_all(g.ls)), c);
}

}  // namespace model_detail

inline void declare_model(ParamTree<double>& tree, const ModelConfig& cfg,
                          Rng& rng) {
  validate_model(cfg);
  declare_encoder(tree, "enc", cfg.enc, rng);
  declare_scenefn(tree, "sf", scene_cfg(cfg), cfg.stack_channels(),
                  cfg.token_dim(), cfg.latent_d, rng);
  if (cfg.uses_flows()) {
    declare_flow(tree, "prior", cfg.prior_flow(), rng);
    declare_flow(tree, "post", cfg.posterior_flow(), rng);
  } else if (cfg.variant == Variant::CondNerfVae) {
    model_detail::declare_gauss(tree, "prior", cfg.token_dim(),
                                cfg.gauss_hidden, cfg.latent_d, rng);
    model_detail::declare_gauss(tree, "post", cfg.token_dim(),
                                cfg.gauss_hidden, cfg.latent_d, rng);
  } else if (cfg.variant == Variant::NerfVae) {
    model_detail::declare_gauss(tree, "post", cfg.token_dim(),
                                cfg.gauss_hidden, cfg.latent_d, rng);
  }
}

// A context or conditioning view: row-major (H*W) x 3 pixels in [0, 1] plus
// the camera that produced them.
struct PosedImage {
  ad::Mat<double> rgb;
  Camera cam;
};

// Everything downstream consumers need from a set of encoded views: feature
// stacks for geometric projection, pooled tokens for the prior and the
// background, and the enlarged token set for the posterior.
struct SceneEncoding {
  std::vector<ViewContext<double>> geom;
  std::optional<ad::Var<double>> tokens;
  std::optional<ad::Var<double>> tokens_post;
};

inline SceneEncoding encode_scene(ParamBinder<double>& b,
                                  const ModelConfig& cfg,
                                  const std::vector<PosedImage>& ctx,
                                  const std::vector<PosedImage>& extra) {
  if (ctx.empty()) throw InputError("encode_scene needs >= 1 context view");
  SceneFnConfig sc = scene_cfg(cfg);
  SceneEncoding out;
  std::vector<FeaturePyramid<double>> pyrs;
  for (const auto& v : ctx) {
    auto x = b.tape().input(make_encoder_input(v.rgb, v.cam));
    auto pyr = encode_view(b, "enc", cfg.enc, x, v.cam.width, v.cam.height);
    if (sc.use_geom)
      out.geom.push_back(
          {build_feature_stack(pyr), pyr.width[0], pyr.height[0], v.cam});
    pyrs.push_back(std::move(pyr));
  }
  if (!cfg.has_latents()) return out;
  out.tokens = context_tokens(pyrs);
  if (extra.empty()) {
    out.tokens_post = out.tokens;
    return out;
  }
  for (const auto& v : extra) {
    auto x = b.tape().input(make_encoder_input(v.rgb, v.cam));
    pyrs.push_back(encode_view(b, "enc", cfg.enc, x, v.cam.width, v.cam.height));
  }
  out.tokens_post = context_tokens(pyrs);
  return out;
}

struct LatentSample {
  ad::Var<double> z;        // K x D
  ad::Var<double> logprob;  // scalar, exact density of the draw
};

namespace model_detail {
// Reparameterized draw from a Gaussian head, density in flow_sample's form.
inline LatentSample gauss_sample(ParamBinder<double>& b, const GaussHead& g,
                                 Rng& rng) {
  ad::Mat<double> e(1, g.mu.cols());
  for (Eigen::Index j = 0; j < e.cols(); ++j) e(0, j) = rng.normal();
  auto ev = b.tape().input(e, false);
  auto z = ad::add(g.mu, ad::mul(ad::exp(g.ls), ev));
  auto lp = ad::sub(flow_detail::base_logprob(ev), ad::sum_all(g.ls));
  return {z, lp};
}
}  // namespace model_detail

inline LatentSample posterior_sample(ParamBinder<double>& b,
                                     const ModelConfig& cfg,
                                     const SceneEncoding& enc, Rng& rng) {
  if (!cfg.has_latents())
    throw InputError("this variant is deterministic: no latent variables");
  if (!enc.tokens_post)
    throw InputError("posterior needs encoded conditioning views");
  if (cfg.uses_flows()) {
    auto s = flow_sample(b, "post", cfg.posterior_flow(), *enc.tokens_post,
                         cfg.latent_k, rng);
    return {s.z, s.logprob};
  }
  return model_detail::gauss_sample(
      b, model_detail::gauss_head(b, "post", *enc.tokens_post), rng);
}

inline ad::Var<double> prior_logprob(ParamBinder<double>& b,
                                     const ModelConfig& cfg,
                                     const SceneEncoding& enc,
                                     ad::Var<double> z) {
  if (!cfg.has_latents())
    throw InputError("this variant is deterministic: no latent variables");
  if (cfg.variant == Variant::NerfVae) return flow_detail::base_logprob(z);
  if (!enc.tokens) throw InputError("conditional prior needs context tokens");
  if (cfg.uses_flows())
    return flow_logprob(b, "prior", cfg.prior_flow(), z, *enc.tokens);
  return model_detail::gauss_logprob(model_detail::gauss_head(b, "prior",
                                                              *enc.tokens),
                                     z);
}

inline LatentSample prior_sample(ParamBinder<double>& b, const ModelConfig& cfg,
                                 const SceneEncoding& enc, Rng& rng) {
  if (!cfg.has_latents())
    throw InputError("this variant is deterministic: no latent variables");
  if (cfg.variant == Variant::NerfVae) {
    ad::Mat<double> z0(cfg.latent_k, cfg.latent_d);
    for (Eigen::Index i = 0; i < z0.rows(); ++i)
      for (Eigen::Index j = 0; j < z0.cols(); ++j) z0(i, j) = rng.normal();
    auto zv = b.tape().input(z0, false);
    return {zv, flow_detail::base_logprob(zv)};
  }
  if (!enc.tokens) throw InputError("conditional prior needs context tokens");
  if (cfg.uses_flows()) {
    auto s = flow_sample(b, "prior", cfg.prior_flow(), *enc.tokens,
                         cfg.latent_k, rng);
    return {s.z, s.logprob};
  }
  return model_detail::gauss_sample(
      b, model_detail::gauss_head(b, "prior", *enc.tokens), rng);
}

// ---------------------------------------------------------------------------
// Whole-image rendering (evaluation path, no gradients)
// ---------------------------------------------------------------------------

struct EvalRender {
  ad::Mat<double> image;  // (H*W) x 3
  ad::Mat<double> depth;  // (H*W) x 1, expected depth from the fine pass
};

// Renders every pixel of cam in chunks, re-encoding the context per chunk on
// a fresh tape so memory stays bounded. Z is the value of one latent draw
// (required for latent variants); results are deterministic in (params, key).
inline EvalRender render_image(ParamTree<double>& params,
                               const ModelConfig& cfg,
                               const std::vector<PosedImage>& ctx,
                               const std::optional<ad::Mat<double>>& Zval,
                               const Camera& cam, RngKey key, int chunk = 256) {
  if (cfg.has_latents() && !Zval)
    throw InputError("render_image: this variant renders from a latent draw");
  if (chunk < 1) throw InputError("render_image: chunk must be >= 1");
  SceneFnConfig sc = scene_cfg(cfg);
  auto rays = all_pixel_rays(cam);
  Eigen::Index n = static_cast<Eigen::Index>(rays.size());
  EvalRender out{ad::Mat<double>(n, 3), ad::Mat<double>(n, 1)};
  for (Eigen::Index s = 0; s < n; s += chunk) {
    Eigen::Index e = std::min<Eigen::Index>(n, s + chunk);
    ad::Tape<double> t;
    ParamBinder<double> b(t, params);
    auto enc = encode_scene(b, cfg, ctx, {});
    std::optional<ad::Var<double>> Z;
    if (Zval) Z = t.input(*Zval, false);
    std::vector<Ray> rs(rays.begin() + s, rays.begin() + e);
    auto rr = render_rays(b, "sf", sc, cfg.render, rs, Z, enc.geom, enc.tokens,
                          key.fold("chunk").fold(static_cast<uint64_t>(s)));
    out.image.middleRows(s, e - s) = rr.fine.color.val();
    out.depth.middleRows(s, e - s) = rr.fine.depth.val();
  }
  return out;
}

enum class LatentSource { Prior, Posterior };

// One latent draw as a plain value, for evaluation renders.
inline ad::Mat<double> sample_latents(ParamTree<double>& params,
                                      const ModelConfig& cfg,
                                      const std::vector<PosedImage>& ctx,
                                      const std::vector<PosedImage>& extra,
                                      LatentSource src, Rng& rng) {
  ad::Tape<double> t;
  ParamBinder<double> b(t, params);
  auto enc = encode_scene(b, cfg, ctx, extra);
  auto s = src == LatentSource::Prior ? prior_sample(b, cfg, enc, rng)
                                      : posterior_sample(b, cfg, enc, rng);
  return s.z.val();
}

}  // namespace lsf
