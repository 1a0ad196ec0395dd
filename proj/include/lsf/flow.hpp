#pragma once

// Permutation-invariant conditional normalizing flow over latent sets.
//
// A flow is M layer pairs, each pair = split coupling then a linear
// permutation-equivariant (LPE) map. The coupling conditioner is one
// self-attention block over the untouched channel half followed by one
// cross-attention block over the context tokens; both halves are updated in
// turn, the second conditioned on the already-updated first. The LPE map is
// z'_k = A z_k + B mean(z) with logdet (K-1) log|det A| + log|det(A+B)|.
//
// Direction semantics: a Forward flow samples by running the chain out of the
// base distribution; an Inverted flow (used for the prior, which is sampled
// rarely but evaluated often) samples through the inverse chain, so its
// density evaluation is the cheap forward pass. Either way logprob is exact.

#include <string>
#include <vector>

#include "lsf/ad.hpp"
#include "lsf/attention.hpp"
#include "lsf/params.hpp"
#include "lsf/rng.hpp"

namespace lsf {

enum class FlowDirection { Forward, Inverted };

struct FlowConfig {
  int layers = 4;        // M coupling+LPE pairs
  int hidden = 256;      // conditioner width
  int heads = 4;
  int latent_dim = 128;  // D, must be even
  int ctx_dim = 256;     // context token width
  FlowDirection direction = FlowDirection::Forward;
};

namespace flow_detail {
constexpr double kLogTwoPi = 1.8378770664093454836;

template <class S>
struct HalfVars {
  ad::Var<S> w_in, w_ctx;       // D/2 -> H, ctx_dim -> H
  BlockVars<S> sa, ca;
  ad::Var<S> w_scale, w_bias;   // H -> D/2
};

// psi = cross_attn_block(self_attn_block(other W_in), ctx W_ctx).
template <class S>
ad::Var<S> conditioner(const HalfVars<S>& p, ad::Var<S> other, ad::Var<S> ctx,
                       int heads) {
  auto h = ad::matmul(other, p.w_in);
  h = self_attn_block(h, p.sa, heads);
  auto c = ad::matmul(ctx, p.w_ctx);
  return attn_block(h, c, p.ca, heads);
}

// Affine terms from psi; scale exponent soft-clamped to [-5, 5].
template <class S>
void affine_terms(const HalfVars<S>& p, ad::Var<S> psi, ad::Var<S>* s,
                  ad::Var<S>* b) {
  *s = ad::scale(ad::tanh(ad::scale(ad::matmul(psi, p.w_scale), 0.2)), 5.0);
  *b = ad::matmul(psi, p.w_bias);
}
}  // namespace flow_detail

template <class S>
struct CouplingVars {
  flow_detail::HalfVars<S> h1;  // updates channels [0, D/2) from [D/2, D)
  flow_detail::HalfVars<S> h2;  // updates channels [D/2, D) from updated first
};

template <class S>
struct LpeVars {
  ad::Var<S> A, B;  // D x D
};

// (Z', logdet) with Z rows = set elements.
template <class S>
std::pair<ad::Var<S>, ad::Var<S>> coupling_forward(ad::Var<S> z, ad::Var<S> ctx,
                                                   const CouplingVars<S>& p,
                                                   int heads) {
  Eigen::Index d = z.cols();
  LSF_CHECK(d % 2 == 0, "coupling needs even latent dim");
  auto z1 = ad::slice_cols(z, 0, d / 2);
  auto z2 = ad::slice_cols(z, d / 2, d / 2);

  ad::Var<S> s1, b1;
  auto psi1 = flow_detail::conditioner(p.h1, z2, ctx, heads);
  flow_detail::affine_terms(p.h1, psi1, &s1, &b1);
  if (!s1.val().allFinite())
    throw NumericError("coupling: non-finite scale exponent");
  auto z1p = ad::add(ad::mul(z1, ad::exp(s1)), b1);

  ad::Var<S> s2, b2;
  auto psi2 = flow_detail::conditioner(p.h2, z1p, ctx, heads);
  flow_detail::affine_terms(p.h2, psi2, &s2, &b2);
  if (!s2.val().allFinite())
    throw NumericError("coupling: non-finite scale exponent");
  auto z2p = ad::add(ad::mul(z2, ad::exp(s2)), b2);

  auto out = ad::concat_cols<S>({z1p, z2p});
  auto logdet = ad::add(ad::sum_all(s1), ad::sum_all(s2));
  return {out, logdet};
}

// Inverse of coupling_forward; returns the forward logdet at the pre-image.
template <class S>
std::pair<ad::Var<S>, ad::Var<S>> coupling_inverse(ad::Var<S> zp,
                                                   ad::Var<S> ctx,
                                                   const CouplingVars<S>& p,
                                                   int heads) {
  Eigen::Index d = zp.cols();
  LSF_CHECK(d % 2 == 0, "coupling needs even latent dim");
  auto z1p = ad::slice_cols(zp, 0, d / 2);
  auto z2p = ad::slice_cols(zp, d / 2, d / 2);

  ad::Var<S> s2, b2;
  auto psi2 = flow_detail::conditioner(p.h2, z1p, ctx, heads);
  flow_detail::affine_terms(p.h2, psi2, &s2, &b2);
  auto z2 = ad::mul(ad::sub(z2p, b2), ad::exp(ad::neg(s2)));

  ad::Var<S> s1, b1;
  auto psi1 = flow_detail::conditioner(p.h1, z2, ctx, heads);
  flow_detail::affine_terms(p.h1, psi1, &s1, &b1);
  auto z1 = ad::mul(ad::sub(z1p, b1), ad::exp(ad::neg(s1)));

  auto out = ad::concat_cols<S>({z1, z2});
  auto logdet = ad::add(ad::sum_all(s1), ad::sum_all(s2));
  return {out, logdet};
}

template <class S>
std::pair<ad::Var<S>, ad::Var<S>> lpe_forward(ad::Var<S> z,
                                              const LpeVars<S>& p) {
  Eigen::Index K = z.rows();
  auto mean = ad::colmean(z);
  auto zp = ad::add(ad::matmul(z, p.A, false, true),
                    ad::broadcast_rows(ad::matmul(mean, p.B, false, true), K));
  auto logdet = ad::add(
      ad::scale(ad::logabsdet(p.A), static_cast<double>(K - 1)),
      ad::logabsdet(ad::add(p.A, p.B)));
  return {zp, logdet};
}

template <class S>
std::pair<ad::Var<S>, ad::Var<S>> lpe_inverse(ad::Var<S> zp,
                                              const LpeVars<S>& p) {
  Eigen::Index K = zp.rows();
  auto ab = ad::add(p.A, p.B);
  auto mean_out = ad::colmean(zp);
  auto mean_in = ad::solve_right(mean_out, ad::transpose(ab));
  auto centered = ad::sub(
      zp, ad::broadcast_rows(ad::matmul(mean_in, p.B, false, true), K));
  auto z = ad::solve_right(centered, ad::transpose(p.A));
  auto logdet = ad::add(
      ad::scale(ad::logabsdet(p.A), static_cast<double>(K - 1)),
      ad::logabsdet(ab));
  return {z, logdet};
}

// ---------------------------------------------------------------------------
// Parameter declaration / loading
// ---------------------------------------------------------------------------

namespace flow_detail {
template <class S>
void declare_half(ParamTree<S>& tree, const std::string& prefix,
                  const FlowConfig& cfg, Rng& rng) {
  int h = cfg.hidden, dh = cfg.latent_dim / 2;
  init_fanin(tree.declare(prefix + ".w_in", dh, h), rng);
  init_fanin(tree.declare(prefix + ".w_ctx", cfg.ctx_dim, h), rng);
  declare_block(tree, prefix + ".sa", h, rng);
  declare_block(tree, prefix + ".ca", h, rng);
  tree.declare(prefix + ".w_scale", h, dh);  // zero: layer starts as identity
  tree.declare(prefix + ".w_bias", h, dh);
}

template <class S>
HalfVars<S> load_half(ParamBinder<S>& b, const std::string& prefix) {
  HalfVars<S> v;
  v.w_in = b(prefix + ".w_in");
  v.w_ctx = b(prefix + ".w_ctx");
  v.sa = load_block(b, prefix + ".sa");
  v.ca = load_block(b, prefix + ".ca");
  v.w_scale = b(prefix + ".w_scale");
  v.w_bias = b(prefix + ".w_bias");
  return v;
}
}  // namespace flow_detail

template <class S>
void declare_flow(ParamTree<S>& tree, const std::string& prefix,
                  const FlowConfig& cfg, Rng& rng) {
  if (cfg.latent_dim % 2 != 0)
    throw InputError("flow latent dim must be even");
  for (int m = 0; m < cfg.layers; ++m) {
    std::string lp = prefix + "." + std::to_string(m);
    flow_detail::declare_half(tree, lp + ".cpl.h1", cfg, rng);
    flow_detail::declare_half(tree, lp + ".cpl.h2", cfg, rng);
    tree.declare(lp + ".lpe.A", cfg.latent_dim, cfg.latent_dim)
        .setIdentity();
    tree.declare(lp + ".lpe.B", cfg.latent_dim, cfg.latent_dim);
  }
}

template <class S>
CouplingVars<S> load_coupling(ParamBinder<S>& b, const std::string& prefix) {
  return CouplingVars<S>{flow_detail::load_half(b, prefix + ".h1"),
                         flow_detail::load_half(b, prefix + ".h2")};
}

template <class S>
LpeVars<S> load_lpe(ParamBinder<S>& b, const std::string& prefix) {
  return LpeVars<S>{b(prefix + ".A"), b(prefix + ".B")};
}

// ---------------------------------------------------------------------------
// Chains, sampling, density
// ---------------------------------------------------------------------------

namespace flow_detail {
// Forward chain: for m = 0..M-1, coupling then LPE. Returns sum of logdets.
template <class S>
std::pair<ad::Var<S>, ad::Var<S>> chain_forward(ParamBinder<S>& b,
                                                const std::string& prefix,
                                                const FlowConfig& cfg,
                                                ad::Var<S> z, ad::Var<S> ctx) {
  ad::Var<S> total = b.tape().constant(S(0));
  for (int m = 0; m < cfg.layers; ++m) {
    std::string lp = prefix + "." + std::to_string(m);
    auto [zc, ld1] = coupling_forward(z, ctx, load_coupling(b, lp + ".cpl"),
                                      cfg.heads);
    auto [zl, ld2] = lpe_forward(zc, load_lpe(b, lp + ".lpe"));
    z = zl;
    total = ad::add(total, ad::add(ld1, ld2));
  }
  return {z, total};
}

// Inverse chain: undoes chain_forward (LPE then coupling, layers reversed).
// The returned logdet is the forward logdet at the pre-image.
template <class S>
std::pair<ad::Var<S>, ad::Var<S>> chain_inverse(ParamBinder<S>& b,
                                                const std::string& prefix,
                                                const FlowConfig& cfg,
                                                ad::Var<S> z, ad::Var<S> ctx) {
  ad::Var<S> total = b.tape().constant(S(0));
  for (int m = cfg.layers - 1; m >= 0; --m) {
    std::string lp = prefix + "." + std::to_string(m);
    auto [zl, ld2] = lpe_inverse(z, load_lpe(b, lp + ".lpe"));
    auto [zc, ld1] = coupling_inverse(zl, ctx, load_coupling(b, lp + ".cpl"),
                                      cfg.heads);
    z = zc;
    total = ad::add(total, ad::add(ld1, ld2));
  }
  return {z, total};
}

// Standard-normal set density.
template <class S>
ad::Var<S> base_logprob(ad::Var<S> z) {
  double n = static_cast<double>(z.rows() * z.cols());
  auto ss = ad::sum_all(ad::square(z));
  return ad::add_const(ad::scale(ss, -0.5), -0.5 * n * kLogTwoPi);
}
}  // namespace flow_detail

template <class S>
struct FlowSample {
  ad::Var<S> z;
  ad::Var<S> logprob;
};

// Draws K elements and returns the exact density of the draw. The base draw
// comes from rng; gradients flow through the chain (reparameterization).
template <class S>
FlowSample<S> flow_sample(ParamBinder<S>& b, const std::string& prefix,
                          const FlowConfig& cfg, ad::Var<S> ctx, int K,
                          Rng& rng) {
  if (K < 1) throw InputError("flow_sample: K must be >= 1");
  ad::Mat<S> z0(K, cfg.latent_dim);
  for (Eigen::Index i = 0; i < z0.rows(); ++i)
    for (Eigen::Index j = 0; j < z0.cols(); ++j)
      z0(i, j) = S(rng.normal());
  auto zv = b.tape().input(z0, false);
  auto base_lp = flow_detail::base_logprob(zv);
  if (cfg.direction == FlowDirection::Forward) {
    auto [z, ld] = flow_detail::chain_forward(b, prefix, cfg, zv, ctx);
    return {z, ad::sub(base_lp, ld)};
  }
  auto [z, ld] = flow_detail::chain_inverse(b, prefix, cfg, zv, ctx);
  return {z, ad::add(base_lp, ld)};
}

template <class S>
ad::Var<S> flow_logprob(ParamBinder<S>& b, const std::string& prefix,
                        const FlowConfig& cfg, ad::Var<S> z, ad::Var<S> ctx) {
  if (!z.val().allFinite()) throw NumericError("flow_logprob: non-finite Z");
  if (cfg.direction == FlowDirection::Forward) {
    auto [z0, ld] = flow_detail::chain_inverse(b, prefix, cfg, z, ctx);
    return ad::sub(flow_detail::base_logprob(z0), ld);
  }
  auto [z0, ld] = flow_detail::chain_forward(b, prefix, cfg, z, ctx);
  return ad::add(flow_detail::base_logprob(z0), ld);
}

// Deterministic map from base noise to a latent set (the sampling path of
// flow_sample with the draw supplied by the caller).
template <class S>
ad::Var<S> flow_push(ParamBinder<S>& b, const std::string& prefix,
                     const FlowConfig& cfg, ad::Var<S> z0, ad::Var<S> ctx) {
  if (cfg.direction == FlowDirection::Forward)
    return flow_detail::chain_forward(b, prefix, cfg, z0, ctx).first;
  return flow_detail::chain_inverse(b, prefix, cfg, z0, ctx).first;
}

}  // namespace lsf
