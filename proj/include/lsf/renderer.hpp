#pragma once

// Differentiable volumetric rendering over batches of rays. Coarse depths
// come from stratified bins, fine depths from the inverse CDF of the coarse
// weights (stop-gradient placement); the trunk of the scene function runs
// once per distinct point and both output heads composite against the same
// background color.

#include <string>
#include <utility>
#include <vector>

#include "lsf/ad.hpp"
#include "lsf/errors.hpp"
#include "lsf/geometry.hpp"
#include "lsf/rng.hpp"
#include "lsf/scenefn.hpp"

namespace lsf {

struct RenderConfig {
  int n_coarse = 32;
  int n_fine = 64;
  double eps = 1e-5;
};

// One uniform draw per equal-width bin of [t_near, t_far].
template <class F>
std::vector<double> stratified_samples_with(const Ray& ray, int n, F&& u01) {
  if (n < 1) throw InputError("stratified sampling needs n >= 1");
  std::vector<double> t(n);
  double w = (ray.t_far - ray.t_near) / n;
  for (int i = 0; i < n; ++i) t[i] = ray.t_near + w * (i + u01());
  return t;
}

std::vector<double> stratified_samples(const Ray& ray, int n, Rng& rng);

// Inverse-CDF draws from the piecewise-constant distribution whose bin
// [t_i, t_{i+1}) (last bin capped at t_far) carries mass weight_i + eps,
// merged and sorted with the input depths.
std::vector<double> fine_samples(const std::vector<double>& weights,
                                 const std::vector<double>& depths,
                                 double t_far, int n_fine, Rng& rng,
                                 double eps = 1e-5);

namespace renderer_detail {
std::vector<double> inverse_cdf(const std::vector<double>& weights,
                                const std::vector<double>& depths,
                                double t_far, int n_fine, Rng& rng,
                                double eps);
}

template <typename S>
struct RenderOut {
  ad::Var<S> color;    // R x 3
  ad::Var<S> depth;    // R x 1
  ad::Var<S> weights;  // R x n
  ad::Var<S> tf;       // R x 1
};

// Transmittance compositing of per-point densities and colors laid out
// point-major over R rays with n samples each. Depth and interval widths are
// plain data; bg is the per-ray background color.
template <typename S>
RenderOut<S> composite(ad::Var<S> sigma, ad::Var<S> color,
                       const ad::Mat<S>& t, const ad::Mat<S>& delta,
                       const ad::Mat<S>& t_far, ad::Var<S> bg) {
  Eigen::Index R = t.rows(), n = t.cols();
  if (sigma.rows() != R * n || sigma.cols() != 1)
    throw InputError("composite: sigma must be (R*n) x 1");
  if (color.rows() != R * n || color.cols() != 3)
    throw InputError("composite: color must be (R*n) x 3");
  if (delta.rows() != R || delta.cols() != n || t_far.rows() != R ||
      t_far.cols() != 1 || bg.rows() != R || bg.cols() != 3)
    throw InputError("composite: shape mismatch");
  for (Eigen::Index r = 0; r < R; ++r)
    for (Eigen::Index i = 0; i + 1 < n; ++i)
      if (!(t(r, i) < t(r, i + 1)))
        throw InputError("composite: depths must be strictly increasing");

  auto& tp = *sigma.tape;
  auto sd = ad::mul(ad::reshape(sigma, R, n), tp.input(delta));
  auto neg_sd = ad::neg(sd);
  auto T = ad::exp(ad::cumsum_exclusive_rows(neg_sd));
  auto alpha = ad::add_const(ad::neg(ad::exp(neg_sd)), 1.0);
  auto w = ad::mul(T, alpha);
  auto tf = ad::exp(ad::rowsum(neg_sd));

  std::vector<ad::Var<S>> chans;
  for (int ch = 0; ch < 3; ++ch) {
    auto c = ad::reshape(ad::slice_cols(color, ch, 1), R, n);
    chans.push_back(ad::add(ad::rowsum(ad::mul(w, c)),
                            ad::mul(tf, ad::slice_cols(bg, ch, 1))));
  }
  auto out_color = ad::concat_cols(chans);

  // Expected termination depth, counting residual transmittance at t_far.
  // The denominator is 1 up to rounding; keeping it explicit makes the
  // empty-ray limit return t_far exactly.
  auto wsum = ad::rowsum(w);
  auto num = ad::add(ad::rowsum(ad::mul(w, tp.input(t))),
                     ad::mul(tf, tp.input(t_far)));
  auto depth = ad::div(num, ad::add(wsum, tf));
  return {out_color, depth, w, tf};
}

template <typename S>
struct RayRender {
  RenderOut<S> coarse, fine;
  ad::Mat<S> t_coarse, t_fine;          // R x n depth grids actually used
  ad::Var<S> sigma_coarse, sigma_fine;  // raw densities, for regularizers
};

// Renders a batch of rays against one scene: coarse stratified pass, then a
// fine pass over the union of coarse and inverse-CDF depths. Trunk features
// for coarse points are computed once and gathered into the fine pass.
template <typename S>
RayRender<S> render_rays(ParamBinder<S>& p, const std::string& prefix,
                         const SceneFnConfig& sf, const RenderConfig& rc,
                         const std::vector<Ray>& rays,
                         const std::type_identity_t<std::optional<ad::Var<S>>>& Z,
                         const std::vector<ViewContext<S>>& views,
                         const std::type_identity_t<std::optional<ad::Var<S>>>& ctx_tokens,
                         RngKey key) {
  if (rays.empty()) throw InputError("render_rays: no rays");
  if (rc.n_coarse < 1) throw InputError("render_rays: n_coarse >= 1");
  Eigen::Index R = static_cast<Eigen::Index>(rays.size());
  int nc = rc.n_coarse;
  auto& tp = p.tape();

  ad::Mat<S> tc(R, nc), dc(R, nc), tfar(R, 1), dirs(R, 3);
  ad::Mat<S> xc(R * nc, 3), dpts(R * nc, 3);
  for (Eigen::Index r = 0; r < R; ++r) {
    Rng rng(key.fold("strat").fold(static_cast<uint64_t>(r)));
    auto ts = stratified_samples(rays[r], nc, rng);
    tfar(r, 0) = S(rays[r].t_far);
    dirs.row(r) = rays[r].dir.transpose().template cast<S>();
    for (int i = 0; i < nc; ++i) {
      tc(r, i) = S(ts[i]);
      dc(r, i) = S((i + 1 < nc ? ts[i + 1] : rays[r].t_far) - ts[i]);
      Eigen::Vector3d x = rays[r].at(ts[i]);
      xc.row(r * nc + i) = x.transpose().template cast<S>();
      dpts.row(r * nc + i) = dirs.row(r);
    }
  }

  auto bg = background(p, prefix, sf, tp.input(dirs), Z, ctx_tokens);
  auto trunk_c = scene_trunk(p, prefix, sf, tp.input(xc), tp.input(dpts), Z,
                             views);
  auto out_c = scene_head(p, prefix, sf, trunk_c, Pass::Coarse);
  auto comp_c = composite(out_c.sigma, out_c.color, tc, dc, tfar, bg);

  // Fine depths from the coarse weight values; placement is not part of the
  // gradient graph.
  int nf = rc.n_fine;
  int nm = nc + nf;
  ad::Mat<S> wc = comp_c.weights.val();
  ad::Mat<S> tm(R, nm), dm(R, nm);
  ad::Mat<S> xn(static_cast<Eigen::Index>(R) * nf, 3),
      dn(static_cast<Eigen::Index>(R) * nf, 3);
  std::vector<int> perm(static_cast<size_t>(R) * nm);
  for (Eigen::Index r = 0; r < R; ++r) {
    std::vector<double> wv(nc), tv(nc);
    for (int i = 0; i < nc; ++i) {
      wv[i] = static_cast<double>(wc(r, i));
      tv[i] = static_cast<double>(tc(r, i));
    }
    Rng rng(key.fold("fine").fold(static_cast<uint64_t>(r)));
    auto tn = renderer_detail::inverse_cdf(wv, tv, rays[r].t_far, nf, rng,
                                           rc.eps);
    for (int j = 0; j < nf; ++j) {
      Eigen::Vector3d x = rays[r].at(tn[j]);
      xn.row(r * nf + j) = x.transpose().template cast<S>();
      dn.row(r * nf + j) = dirs.row(r);
    }
    // Merge the two sorted lists, tracking where each feature row lives.
    int i = 0, j = 0, m = 0;
    while (m < nm) {
      bool take_coarse = j >= nf || (i < nc && tv[i] <= tn[j]);
      if (take_coarse) {
        tm(r, m) = S(tv[i]);
        perm[r * nm + m] = static_cast<int>(r * nc + i);
        ++i;
      } else {
        tm(r, m) = S(tn[j]);
        perm[r * nm + m] = static_cast<int>(R * nc + r * nf + j);
        ++j;
      }
      ++m;
    }
    for (int k = 0; k < nm; ++k)
      dm(r, k) =
          S((k + 1 < nm ? static_cast<double>(tm(r, k + 1)) : rays[r].t_far) -
            static_cast<double>(tm(r, k)));
  }

  ad::Var<S> f_all = trunk_c.f;
  if (nf > 0) {
    auto trunk_n = scene_trunk(p, prefix, sf, tp.input(xn), tp.input(dn), Z,
                               views);
    f_all = ad::concat_rows<S>({trunk_c.f, trunk_n.f});
  }
  auto f_m = ad::gather_rows(f_all, perm);

  // Re-encode merged positions and directions; both are plain data.
  ad::Mat<S> xm(static_cast<Eigen::Index>(R) * nm, 3),
      ddm(static_cast<Eigen::Index>(R) * nm, 3);
  for (Eigen::Index r = 0; r < R; ++r)
    for (int k = 0; k < nm; ++k) {
      Eigen::Vector3d x = rays[r].at(static_cast<double>(tm(r, k)));
      xm.row(r * nm + k) = x.transpose().template cast<S>();
      ddm.row(r * nm + k) = dirs.row(r);
    }
  SceneTrunk<S> trunk_m{
      f_m, ad::circular_encode(tp.input(xm), sf.x_lmin, sf.x_lmax),
      ad::circular_encode(tp.input(ddm), sf.d_lmin, sf.d_lmax)};
  auto out_f = scene_head(p, prefix, sf, trunk_m, Pass::Fine);
  auto comp_f = composite(out_f.sigma, out_f.color, tm, dm, tfar, bg);
  return {comp_c, comp_f, tc, tm, out_c.sigma, out_f.sigma};
}

}  // namespace lsf
