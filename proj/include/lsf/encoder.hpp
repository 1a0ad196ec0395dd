#pragma once

// Convolutional residual encoder. Each view's RGB image is augmented with
// per-pixel ray directions and the broadcast camera origin, passed through a
// conv stem, then L levels of [2 residual blocks, stride-2 downsample conv
// doubling channels]. Level l of the pyramid holds the post-downsample map at
// (W/2^l, H/2^l) with base*2^l channels. The per-view stack bilinearly
// upsamples levels 2..L to level-1 resolution and concatenates channels; the
// context tokens flatten each view's final level and pool across views.

#include <string>
#include <vector>

#include "lsf/ad.hpp"
#include "lsf/errors.hpp"
#include "lsf/geometry.hpp"
#include "lsf/params.hpp"

namespace lsf {

struct EncoderConfig {
  int levels = 4;
  int base = 16;
  int groups = 8;
};

template <typename S>
struct FeaturePyramid {
  std::vector<ad::Var<S>> maps;  // level l-1: (H/2^l * W/2^l) x base*2^l
  std::vector<int> width, height, channels;
};

namespace encoder_detail {

template <typename S>
struct ResBlockVars {
  ad::Var<S> w1, b1, gn_g, gn_b, w2, b2;
};

template <typename S>
ad::Var<S> res_block(ad::Var<S> x, int H, int W, const ResBlockVars<S>& p,
                     int groups) {
  auto h = ad::add_rowvec(ad::conv3x3(x, H, W, p.w1), p.b1);
  h = ad::add_rowvec(ad::mul_rowvec(ad::groupnorm(h, groups), p.gn_g), p.gn_b);
  h = ad::swish(h);
  h = ad::add_rowvec(ad::conv3x3(h, H, W, p.w2), p.b2);
  return ad::add(x, h);
}

inline void declare_conv(ParamTree<double>& tree, const std::string& name,
                         int cin, int cout, Rng& rng, bool zero = false) {
  auto& w = tree.declare(name + ".w", 9 * cin, cout);
  if (!zero) init_normal(w, rng, 1.0 / std::sqrt(9.0 * cin));
  tree.declare(name + ".b", 1, cout);
}

}  // namespace encoder_detail

inline void declare_encoder(ParamTree<double>& tree, const std::string& prefix,
                            const EncoderConfig& cfg, Rng& rng) {
  using encoder_detail::declare_conv;
  if (cfg.base % cfg.groups != 0)
    throw InputError("encoder base channels must divide into groups");
  declare_conv(tree, prefix + ".stem", 9, cfg.base, rng);
  int c = cfg.base;
  for (int l = 0; l < cfg.levels; ++l) {
    std::string lp = prefix + "." + std::to_string(l);
    for (int r = 0; r < 2; ++r) {
      std::string rp = lp + ".rb" + std::to_string(r);
      declare_conv(tree, rp + ".c1", c, c, rng);
      tree.declare(rp + ".gn_g", 1, c).setOnes();
      tree.declare(rp + ".gn_b", 1, c);
      declare_conv(tree, rp + ".c2", c, c, rng, true);
    }
    declare_conv(tree, lp + ".down", c, 2 * c, rng);
    c *= 2;
  }
}

// (H*W) x 9 input map: RGB, unit ray direction, camera origin.
inline ad::Mat<double> make_encoder_input(const ad::Mat<double>& image,
                                          const Camera& cam) {
  if (image.rows() != static_cast<Eigen::Index>(cam.width) * cam.height ||
      image.cols() != 3)
    throw InputError("encoder image must be (H*W) x 3 for its camera");
  if (image.minCoeff() < 0.0 || image.maxCoeff() > 1.0)
    throw InputError("encoder image values must lie in [0, 1]");
  ad::Mat<double> x(image.rows(), 9);
  x.leftCols(3) = image;
  auto rays = all_pixel_rays(cam);
  Eigen::Vector3d o = cam.origin();
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    x.block(i, 3, 1, 3) = rays[i].dir.transpose();
    x.block(i, 6, 1, 3) = o.transpose();
  }
  return x;
}

template <typename S>
FeaturePyramid<S> encode_view(ParamBinder<S>& p, const std::string& prefix,
                              const EncoderConfig& cfg, ad::Var<S> x, int W,
                              int H) {
  using encoder_detail::ResBlockVars;
  int div = 1 << cfg.levels;
  if (W % div != 0 || H % div != 0)
    throw InputError("encoder input size must be divisible by 2^levels");
  if (x.rows() != static_cast<Eigen::Index>(W) * H || x.cols() != 9)
    throw InputError("encoder input must be (H*W) x 9");

  auto h = ad::add_rowvec(ad::conv3x3(x, H, W, p(prefix + ".stem.w")),
                          p(prefix + ".stem.b"));
  FeaturePyramid<S> pyr;
  int w = W, hh = H;
  for (int l = 0; l < cfg.levels; ++l) {
    std::string lp = prefix + "." + std::to_string(l);
    for (int r = 0; r < 2; ++r) {
      std::string rp = lp + ".rb" + std::to_string(r);
      ResBlockVars<S> rb{p(rp + ".c1.w"),  p(rp + ".c1.b"), p(rp + ".gn_g"),
                         p(rp + ".gn_b"), p(rp + ".c2.w"), p(rp + ".c2.b")};
      h = encoder_detail::res_block(h, hh, w, rb, cfg.groups);
    }
    h = ad::add_rowvec(ad::conv3x3(h, hh, w, p(lp + ".down.w"), 2),
                       p(lp + ".down.b"));
    w /= 2;
    hh /= 2;
    pyr.maps.push_back(h);
    pyr.width.push_back(w);
    pyr.height.push_back(hh);
    pyr.channels.push_back(static_cast<int>(h.cols()));
  }
  return pyr;
}

// Upsample every level to level-1 resolution and concatenate channels.
template <typename S>
ad::Var<S> build_feature_stack(const FeaturePyramid<S>& pyr) {
  if (pyr.maps.empty()) throw InputError("feature stack needs >= 1 level");
  std::vector<ad::Var<S>> parts;
  parts.push_back(pyr.maps[0]);
  for (size_t l = 1; l < pyr.maps.size(); ++l)
    parts.push_back(ad::bilinear_resize(pyr.maps[l], pyr.height[l],
                                        pyr.width[l], pyr.height[0],
                                        pyr.width[0]));
  return parts.size() == 1 ? parts[0] : ad::concat_cols(parts);
}

// Flatten each view's final level and pool rows across views.
template <typename S>
ad::Var<S> context_tokens(const std::vector<FeaturePyramid<S>>& views) {
  if (views.empty()) throw InputError("context tokens need >= 1 view");
  std::vector<ad::Var<S>> parts;
  for (const auto& v : views) parts.push_back(v.maps.back());
  return parts.size() == 1 ? parts[0] : ad::concat_rows(parts);
}

}  // namespace lsf
