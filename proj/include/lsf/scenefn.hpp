#pragma once
#include <type_traits>

// The conditional radiance field. A query point attends over the latent set
// to pull out what it needs (z-tilde), gathers bilinearly sampled local
// features from every context view that can see it, fuses both sets with a
// masked integration transformer, and decodes color and density through a
// residual MLP head. Coarse and fine passes share everything but that head.

#include <optional>
#include <string>
#include <vector>

#include "lsf/ad.hpp"
#include "lsf/attention.hpp"
#include "lsf/errors.hpp"
#include "lsf/geometry.hpp"
#include "lsf/params.hpp"

namespace lsf {

enum class Pass { Coarse, Fine };
enum class BgVariant { ConstantWhite, LatentAttn, ContextAttn };

struct SceneFnConfig {
  int model_dim = 512;
  int latent_layers = 3;
  int integ_layers = 3;
  int heads = 4;
  int local_blocks = 3;
  int out_hidden = 256;
  int out_layers = 4;
  int bg_hidden = 512;
  int x_lmin = -8, x_lmax = 8;
  int d_lmin = 0, d_lmax = 4;
  bool use_latents = true;
  bool use_geom = true;
  BgVariant bg = BgVariant::LatentAttn;

  int gx_dim() const { return 6 * (x_lmax - x_lmin + 1); }
  int gd_dim() const { return 6 * (d_lmax - d_lmin + 1); }
};

// One context view as the scene function sees it: the stacked feature map at
// its own resolution plus the full-resolution camera used for projection.
template <typename S>
struct ViewContext {
  ad::Var<S> stack;
  int sw = 0, sh = 0;
  Camera cam;
};

template <typename S>
struct SceneBatch {
  ad::Var<S> sigma;  // P x 1, in [0, 10]
  ad::Var<S> color;  // P x 3, in [0, 1]
};

namespace scenefn_detail {

inline std::string pass_prefix(const std::string& prefix, Pass pass) {
  return prefix + (pass == Pass::Coarse ? ".out.c" : ".out.f");
}

inline void declare_linear(ParamTree<double>& tree, const std::string& name,
                           int in, int out, Rng& rng, bool zero = false) {
  auto& w = tree.declare(name + ".w", in, out);
  if (!zero) init_normal(w, rng, 1.0 / std::sqrt(static_cast<double>(in)));
  tree.declare(name + ".b", 1, out);
}

// View-space position, direction, and continuous pixel coordinates for a
// batch of points, all differentiable in x and d. Depth is clamped away from
// zero so points behind a camera stay finite; visibility masking removes
// their influence downstream.
template <typename S>
struct ViewProjection {
  ad::Var<S> x_cam, d_cam, uv;
};

template <typename S>
ViewProjection<S> project_batch(ad::Var<S> x, ad::Var<S> d,
                                const Camera& cam) {
  auto& t = *x.tape;
  ad::Mat<S> Rt = cam.R.transpose().template cast<S>();
  ad::Mat<S> tr = cam.t.transpose().template cast<S>();
  auto xc = ad::add_rowvec(ad::matmul(x, t.input(Rt)), t.input(tr));
  auto dc = ad::matmul(d, t.input(Rt));
  auto depth = ad::clamp_min(ad::slice_cols(xc, 2, 1), 1e-4);
  auto px = ad::div(ad::slice_cols(xc, 0, 1), depth);
  auto py = ad::div(ad::slice_cols(xc, 1, 1), depth);
  auto u = ad::add_const(ad::scale(px, cam.K(0, 0)), cam.K(0, 2));
  auto v = ad::add_const(ad::scale(py, cam.K(1, 1)), cam.K(1, 2));
  return {xc, dc, ad::concat_cols<S>({u, v})};
}

}  // namespace scenefn_detail

inline void declare_scenefn(ParamTree<double>& tree, const std::string& prefix,
                            const SceneFnConfig& cfg, int stack_channels,
                            int token_dim, int latent_dim, Rng& rng) {
  using scenefn_detail::declare_linear;
  int md = cfg.model_dim;
  if (!cfg.use_latents && cfg.bg != BgVariant::ConstantWhite)
    throw InputError("attentive backgrounds need latents");

  if (cfg.use_latents) {
    declare_linear(tree, prefix + ".qz.x", cfg.gx_dim(), md, rng);
    declare_linear(tree, prefix + ".qz.z", latent_dim, md, rng);
    declare_attn_stack(tree, prefix + ".qz.attn", cfg.latent_layers, md, rng);
  } else {
    declare_linear(tree, prefix + ".mvq.x", cfg.gx_dim(), md, rng);
    tree.declare(prefix + ".null", 1, md);
  }
  if (cfg.use_geom) {
    declare_linear(tree, prefix + ".loc.in", stack_channels + 6, md, rng);
    for (int i = 0; i < cfg.local_blocks; ++i) {
      std::string rp = prefix + ".loc.rb" + std::to_string(i);
      declare_linear(tree, rp + ".l1", md, md, rng);
      declare_linear(tree, rp + ".l2", md, md, rng, true);
    }
  }
  declare_attn_stack(tree, prefix + ".intg", cfg.integ_layers, md, rng);

  for (Pass pass : {Pass::Coarse, Pass::Fine}) {
    std::string hp = scenefn_detail::pass_prefix(prefix, pass);
    declare_linear(tree, hp + ".xin", cfg.gx_dim(), cfg.out_hidden, rng);
    auto& fw = tree.declare(hp + ".fin.w", md, cfg.out_hidden);
    init_normal(fw, rng, 1.0 / std::sqrt(static_cast<double>(md)));
    for (int i = 0; i < cfg.out_layers; ++i)
      declare_linear(tree, hp + ".lay" + std::to_string(i), cfg.out_hidden,
                     cfg.out_hidden, rng);
    declare_linear(tree, hp + ".sig", cfg.out_hidden, 1, rng);
    tree.at(hp + ".sig.b").value.setConstant(-2.0);
    auto& dw = tree.declare(hp + ".din.w", cfg.gd_dim(), cfg.out_hidden);
    init_normal(dw, rng, 1.0 / std::sqrt(static_cast<double>(cfg.gd_dim())));
    for (int i = 0; i < cfg.out_layers; ++i)
      declare_linear(tree, hp + ".clay" + std::to_string(i), cfg.out_hidden,
                     cfg.out_hidden, rng);
    declare_linear(tree, hp + ".rgb", cfg.out_hidden, 3, rng);
  }

  if (cfg.bg != BgVariant::ConstantWhite) {
    declare_linear(tree, prefix + ".bg.q", cfg.gd_dim(), md, rng);
    declare_linear(tree, prefix + ".bg.z", latent_dim, md, rng);
    declare_attn_stack(tree, prefix + ".bg.attn", 2, md, rng);
    if (cfg.bg == BgVariant::ContextAttn) {
      declare_linear(tree, prefix + ".bg.h", token_dim, md, rng);
      declare_attn_stack(tree, prefix + ".bg.hattn", 1, md, rng);
      for (int i = 0; i < 2; ++i) {
        std::string mp = prefix + ".bg.mlp" + std::to_string(i);
        declare_linear(tree, mp, i == 0 ? md : cfg.bg_hidden, cfg.bg_hidden,
                       rng);
        auto& u = tree.declare(mp + ".u", cfg.gd_dim(), cfg.bg_hidden);
        init_normal(u, rng, 1.0 / std::sqrt(static_cast<double>(cfg.gd_dim())));
      }
    }
    declare_linear(tree, prefix + ".bg.rgb",
                   cfg.bg == BgVariant::ContextAttn ? cfg.bg_hidden : md, 3,
                   rng);
  }
}

// Latent readout for a batch of encoded positions: cross-attention of the
// projected query over the projected latent set, or a plain projection when
// latents are off.
template <typename S>
ad::Var<S> query_latent(ParamBinder<S>& p, const std::string& prefix,
                        const SceneFnConfig& cfg, ad::Var<S> gx,
                        const std::type_identity_t<std::optional<ad::Var<S>>>& Z) {
  if (!cfg.use_latents)
    return ad::matmul(gx, p(prefix + ".mvq.x.w"));
  if (!Z || Z->rows() == 0) throw InputError("latent set must be nonempty");
  auto q = ad::add_rowvec(ad::matmul(gx, p(prefix + ".qz.x.w")),
                          p(prefix + ".qz.x.b"));
  auto zc = ad::add_rowvec(ad::matmul(*Z, p(prefix + ".qz.z.w")),
                           p(prefix + ".qz.z.b"));
  return cross_attn(p, prefix + ".qz.attn", q, zc, cfg.latent_layers,
                    cfg.heads);
}

// Residual MLP over the bilinearly gathered stack features of one view,
// conditioned on view-space position and direction.
template <typename S>
ad::Var<S> local_feature(ParamBinder<S>& p, const std::string& prefix,
                         const SceneFnConfig& cfg, ad::Var<S> feat,
                         ad::Var<S> x_cam, ad::Var<S> d_cam) {
  auto h = ad::add_rowvec(
      ad::matmul(ad::concat_cols<S>({feat, x_cam, d_cam}),
                 p(prefix + ".loc.in.w")),
      p(prefix + ".loc.in.b"));
  for (int i = 0; i < cfg.local_blocks; ++i) {
    std::string rp = prefix + ".loc.rb" + std::to_string(i);
    auto a = ad::relu(
        ad::add_rowvec(ad::matmul(h, p(rp + ".l1.w")), p(rp + ".l1.b")));
    h = ad::add(h, ad::add_rowvec(ad::matmul(a, p(rp + ".l2.w")),
                                  p(rp + ".l2.b")));
  }
  return h;
}

// Fuses the latent readout with the per-view local features. Context rows are
// laid out point-major as {z-tilde (or null token), h-hat per view}; views
// that cannot see a point are masked out of the attention.
template <typename S>
ad::Var<S> integrate(ParamBinder<S>& p, const std::string& prefix,
                     const SceneFnConfig& cfg, ad::Var<S> zt,
                     const std::vector<ad::Var<S>>& local_feats,
                     const ad::Mat<S>* mask) {
  std::vector<ad::Var<S>> parts;
  if (cfg.use_latents)
    parts.push_back(zt);
  else
    parts.push_back(ad::broadcast_rows(p(prefix + ".null"), zt.rows()));
  for (const auto& h : local_feats) parts.push_back(h);
  auto ctx = parts.size() == 1 ? parts[0] : ad::interleave_rows(parts);
  bool grouped = parts.size() > 1;
  return cross_attn(p, prefix + ".intg", zt, ctx, cfg.integ_layers, cfg.heads,
                    grouped, grouped ? mask : nullptr);
}

// Everything the coarse and fine output heads share: encodings plus the
// integrated feature per point.
template <typename S>
struct SceneTrunk {
  ad::Var<S> f, gx, gd;
};

template <typename S>
SceneTrunk<S> scene_trunk(ParamBinder<S>& p, const std::string& prefix,
                          const SceneFnConfig& cfg, ad::Var<S> x, ad::Var<S> d,
                          const std::type_identity_t<std::optional<ad::Var<S>>>& Z,
                          const std::vector<ViewContext<S>>& views) {
  using scenefn_detail::project_batch;
  if (x.cols() != 3 || d.cols() != 3 || x.rows() != d.rows())
    throw InputError("scene function wants matching P x 3 points and dirs");
  Eigen::Index P = x.rows();

  auto gx = ad::circular_encode(x, cfg.x_lmin, cfg.x_lmax);
  auto gd = ad::circular_encode(d, cfg.d_lmin, cfg.d_lmax);
  auto zt = query_latent(p, prefix, cfg, gx, Z);

  std::vector<ad::Var<S>> local_feats;
  ad::Mat<S> mask;
  if (cfg.use_geom && !views.empty()) {
    Eigen::Index G = static_cast<Eigen::Index>(views.size()) + 1;
    mask = ad::Mat<S>::Zero(P, G);
    // Copy: node storage moves as the loop pushes ops onto the tape.
    ad::Mat<S> xv = x.val();
    for (size_t n = 0; n < views.size(); ++n) {
      const auto& view = views[n];
      auto pr = project_batch(x, d, view.cam);
      double su = static_cast<double>(view.sw) / view.cam.width;
      double sv = static_cast<double>(view.sh) / view.cam.height;
      auto uv = ad::concat_cols<S>(
          {ad::scale(ad::slice_cols(pr.uv, 0, 1), su),
           ad::scale(ad::slice_cols(pr.uv, 1, 1), sv)});
      auto feat = ad::bilinear_gather(view.stack, view.sh, view.sw, uv);
      local_feats.push_back(
          local_feature(p, prefix, cfg, feat, pr.x_cam, pr.d_cam));
      for (Eigen::Index i = 0; i < P; ++i) {
        Eigen::Vector3d pt(xv(i, 0), xv(i, 1), xv(i, 2));
        if (!is_visible(view.cam, pt)) mask(i, n + 1) = S(1);
      }
    }
  }
  auto f = integrate(p, prefix, cfg, zt, local_feats,
                     local_feats.empty() ? nullptr : &mask);
  return {f, gx, gd};
}

template <typename S>
SceneBatch<S> scene_head(ParamBinder<S>& p, const std::string& prefix,
                         const SceneFnConfig& cfg, const SceneTrunk<S>& trunk,
                         Pass pass) {
  std::string hp = scenefn_detail::pass_prefix(prefix, pass);
  auto h = ad::add(ad::add_rowvec(ad::matmul(trunk.gx, p(hp + ".xin.w")),
                                  p(hp + ".xin.b")),
                   ad::matmul(trunk.f, p(hp + ".fin.w")));
  for (int i = 0; i < cfg.out_layers; ++i) {
    std::string lp = hp + ".lay" + std::to_string(i);
    h = ad::add(h, ad::swish(ad::add_rowvec(ad::matmul(h, p(lp + ".w")),
                                            p(lp + ".b"))));
  }
  auto sigma = ad::scale(
      ad::sigmoid(ad::add_rowvec(ad::matmul(h, p(hp + ".sig.w")),
                                 p(hp + ".sig.b"))),
      10.0);

  auto hc = ad::add(h, ad::matmul(trunk.gd, p(hp + ".din.w")));
  for (int i = 0; i < cfg.out_layers; ++i) {
    std::string lp = hp + ".clay" + std::to_string(i);
    hc = ad::add(hc, ad::swish(ad::add_rowvec(ad::matmul(hc, p(lp + ".w")),
                                              p(lp + ".b"))));
  }
  auto color = ad::sigmoid(
      ad::add_rowvec(ad::matmul(hc, p(hp + ".rgb.w")), p(hp + ".rgb.b")));

  if (!sigma.val().allFinite() || !color.val().allFinite())
    throw NumericError("scene function produced non-finite outputs");
  return {sigma, color};
}

template <typename S>
SceneBatch<S> scene_function(ParamBinder<S>& p, const std::string& prefix,
                             const SceneFnConfig& cfg, ad::Var<S> x,
                             ad::Var<S> d, const std::type_identity_t<std::optional<ad::Var<S>>>& Z,
                             const std::vector<ViewContext<S>>& views,
                             Pass pass) {
  return scene_head(p, prefix, cfg, scene_trunk(p, prefix, cfg, x, d, Z, views),
                    pass);
}

// Color of the infinite dome along a batch of unit directions.
template <typename S>
ad::Var<S> background(ParamBinder<S>& p, const std::string& prefix,
                      const SceneFnConfig& cfg, ad::Var<S> d,
                      const std::type_identity_t<std::optional<ad::Var<S>>>& Z,
                      const std::type_identity_t<std::optional<ad::Var<S>>>& ctx_tokens) {
  auto& t = *d.tape;
  if (cfg.bg == BgVariant::ConstantWhite)
    return t.input(ad::Mat<S>::Constant(d.rows(), 3, S(1)));
  if (!Z || Z->rows() == 0) throw InputError("latent set must be nonempty");

  auto gd = ad::circular_encode(d, cfg.d_lmin, cfg.d_lmax);
  auto q = ad::add_rowvec(ad::matmul(gd, p(prefix + ".bg.q.w")),
                          p(prefix + ".bg.q.b"));
  auto zc = ad::add_rowvec(ad::matmul(*Z, p(prefix + ".bg.z.w")),
                           p(prefix + ".bg.z.b"));
  auto h = cross_attn(p, prefix + ".bg.attn", q, zc, 2, cfg.heads);
  if (cfg.bg == BgVariant::ContextAttn) {
    if (!ctx_tokens) throw InputError("context background needs view tokens");
    auto hc = ad::add_rowvec(ad::matmul(*ctx_tokens, p(prefix + ".bg.h.w")),
                             p(prefix + ".bg.h.b"));
    h = cross_attn(p, prefix + ".bg.hattn", h, hc, 1, cfg.heads);
    for (int i = 0; i < 2; ++i) {
      std::string mp = prefix + ".bg.mlp" + std::to_string(i);
      h = ad::relu(ad::add(
          ad::add_rowvec(ad::matmul(h, p(mp + ".w")), p(mp + ".b")),
          ad::matmul(gd, p(mp + ".u"))));
    }
  }
  return ad::sigmoid(ad::add_rowvec(ad::matmul(h, p(prefix + ".bg.rgb.w")),
                                    p(prefix + ".bg.rgb.b")));
}

}  // namespace lsf
