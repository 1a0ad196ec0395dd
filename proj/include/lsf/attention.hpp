#pragma once

// Transformer-style attention blocks on top of the tape ops: multi-head
// attention with projections, and stacked self-/cross-attention blocks.
// Sets are rows of a matrix; there is no positional encoding anywhere, so
// self-attention is permutation equivariant and cross-attention is invariant
// to permutations of its context.
//
// Block layout (pre-normalization residual):
//   x + mha(norm(x), norm(ctx))  ->  + ff(norm(.))
// with a 2-layer gelu feedforward of width 2*model_dim. Output projections
// (mha out, ff second layer) are zero-initialized so a fresh stack is the
// identity map.

#include <optional>
#include <string>
#include <vector>

#include "lsf/ad.hpp"
#include "lsf/params.hpp"
#include "lsf/rng.hpp"

namespace lsf {

template <class S>
struct MhaVars {
  ad::Var<S> wq, wk, wv, wo;  // model_dim x model_dim
};

template <class S>
struct BlockVars {
  ad::Var<S> ln1_g, ln1_b;    // query-side pre-norm
  ad::Var<S> lnc_g, lnc_b;    // context-side pre-norm
  MhaVars<S> mha;
  ad::Var<S> ln2_g, ln2_b;
  ad::Var<S> w1, b1, w2, b2;  // feedforward
};

// Multi-head attention with projections. kv rows are shared keys unless
// grouped (see ad::attention for the two layouts). mask: 1 = blocked.
template <class S>
ad::Var<S> mha(ad::Var<S> q_in, ad::Var<S> kv_in, const MhaVars<S>& p,
               int heads, bool grouped = false,
               const ad::Mat<S>* mask = nullptr) {
  auto q = ad::matmul(q_in, p.wq);
  auto k = ad::matmul(kv_in, p.wk);
  auto v = ad::matmul(kv_in, p.wv);
  auto o = ad::attention(q, k, v, heads, grouped, mask);
  return ad::matmul(o, p.wo);
}

template <class S>
ad::Var<S> attn_block(ad::Var<S> x, ad::Var<S> ctx, const BlockVars<S>& p,
                      int heads, bool grouped = false,
                      const ad::Mat<S>* mask = nullptr) {
  auto xq = ad::add_rowvec(ad::mul_rowvec(ad::layernorm_rows(x), p.ln1_g),
                           p.ln1_b);
  auto xc = ad::add_rowvec(ad::mul_rowvec(ad::layernorm_rows(ctx), p.lnc_g),
                           p.lnc_b);
  auto h = ad::add(x, mha(xq, xc, p.mha, heads, grouped, mask));
  auto hn = ad::add_rowvec(ad::mul_rowvec(ad::layernorm_rows(h), p.ln2_g),
                           p.ln2_b);
  auto ff = ad::matmul(
      ad::gelu(ad::add_rowvec(ad::matmul(hn, p.w1), p.b1)), p.w2);
  ff = ad::add_rowvec(ff, p.b2);
  return ad::add(h, ff);
}

// Self-attention block: context is the input set itself (re-normalized by
// the block's own context norm, sharing the query-side parameters).
template <class S>
ad::Var<S> self_attn_block(ad::Var<S> x, const BlockVars<S>& p, int heads) {
  return attn_block(x, x, p, heads);
}

// ---------------------------------------------------------------------------
// Named-parameter layer: declaration and loading
// ---------------------------------------------------------------------------

template <class S>
void declare_mha(ParamTree<S>& tree, const std::string& prefix, int dim,
                 Rng& rng) {
  init_fanin(tree.declare(prefix + ".wq", dim, dim), rng);
  init_fanin(tree.declare(prefix + ".wk", dim, dim), rng);
  init_fanin(tree.declare(prefix + ".wv", dim, dim), rng);
  tree.declare(prefix + ".wo", dim, dim);  // zero: block starts as identity
}

template <class S>
void declare_block(ParamTree<S>& tree, const std::string& prefix, int dim,
                   Rng& rng) {
  tree.declare(prefix + ".ln1.g", 1, dim).setOnes();
  tree.declare(prefix + ".ln1.b", 1, dim);
  tree.declare(prefix + ".lnc.g", 1, dim).setOnes();
  tree.declare(prefix + ".lnc.b", 1, dim);
  declare_mha(tree, prefix + ".mha", dim, rng);
  tree.declare(prefix + ".ln2.g", 1, dim).setOnes();
  tree.declare(prefix + ".ln2.b", 1, dim);
  init_fanin(tree.declare(prefix + ".ff.w1", dim, 2 * dim), rng);
  tree.declare(prefix + ".ff.b1", 1, 2 * dim);
  tree.declare(prefix + ".ff.w2", 2 * dim, dim);  // zero
  tree.declare(prefix + ".ff.b2", 1, dim);
}

// A stack of L blocks under "<prefix>.0" .. "<prefix>.L-1".
template <class S>
void declare_attn_stack(ParamTree<S>& tree, const std::string& prefix, int L,
                        int dim, Rng& rng) {
  for (int l = 0; l < L; ++l)
    declare_block(tree, prefix + "." + std::to_string(l), dim, rng);
}

template <class S>
MhaVars<S> load_mha(ParamBinder<S>& b, const std::string& prefix) {
  return MhaVars<S>{b(prefix + ".wq"), b(prefix + ".wk"), b(prefix + ".wv"),
                    b(prefix + ".wo")};
}

template <class S>
BlockVars<S> load_block(ParamBinder<S>& b, const std::string& prefix) {
  BlockVars<S> v;
  v.ln1_g = b(prefix + ".ln1.g");
  v.ln1_b = b(prefix + ".ln1.b");
  v.lnc_g = b(prefix + ".lnc.g");
  v.lnc_b = b(prefix + ".lnc.b");
  v.mha = load_mha(b, prefix + ".mha");
  v.ln2_g = b(prefix + ".ln2.g");
  v.ln2_b = b(prefix + ".ln2.b");
  v.w1 = b(prefix + ".ff.w1");
  v.b1 = b(prefix + ".ff.b1");
  v.w2 = b(prefix + ".ff.w2");
  v.b2 = b(prefix + ".ff.b2");
  return v;
}

// L self-attention blocks over x.
template <class S>
ad::Var<S> self_attn(ParamBinder<S>& b, const std::string& prefix, ad::Var<S> x,
                     int L, int heads) {
  for (int l = 0; l < L; ++l)
    x = self_attn_block(x, load_block(b, prefix + "." + std::to_string(l)),
                        heads);
  return x;
}

// L cross-attention blocks: queries x over fixed context.
template <class S>
ad::Var<S> cross_attn(ParamBinder<S>& b, const std::string& prefix,
                      ad::Var<S> x, ad::Var<S> ctx, int L, int heads,
                      bool grouped = false, const ad::Mat<S>* mask = nullptr) {
  if (ctx.rows() == 0) throw InputError("cross_attn: empty context");
  for (int l = 0; l < L; ++l)
    x = attn_block(x, ctx, load_block(b, prefix + "." + std::to_string(l)),
                   heads, grouped, mask);
  return x;
}

}  // namespace lsf
