#include "lsf/training.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "lsf/errors.hpp"
#include "lsf/wire.hpp"

using nlohmann::json;

namespace lsf {

namespace {

constexpr uint32_t kCheckpointVersion = 1;

const char* bg_name(BgVariant v) {
  switch (v) {
    case BgVariant::ConstantWhite: return "constant-white";
    case BgVariant::LatentAttn: return "latent-attn";
    case BgVariant::ContextAttn: return "context-attn";
  }
  throw InputError("unknown background variant");
}

BgVariant bg_from_string(const std::string& name) {
  for (BgVariant v : {BgVariant::ConstantWhite, BgVariant::LatentAttn,
                      BgVariant::ContextAttn})
    if (name == bg_name(v)) return v;
  throw InputError("unknown background variant: " + name);
}

// Sum of per-ray Gaussian color log-densities against plain targets.
ad::Var<double> color_loglik(ad::Var<double> color, const ad::Mat<double>& gt,
                             double std) {
  auto& t = *color.tape;
  auto diff = ad::sub(color, t.input(gt));
  auto sse = ad::sum_all(ad::square(diff));
  double norm = static_cast<double>(gt.rows()) *
                (3.0 * std::log(std) + 1.5 * flow_detail::kLogTwoPi);
  return ad::add_const(ad::scale(sse, -0.5 / (std * std)), -norm);
}

double scalar(const ad::Var<double>& v) { return v.val()(0, 0); }

}  // namespace

void validate_train(const TrainConfig& cfg) {
  validate_model(cfg.model);
  if (cfg.lr <= 0.0) throw InputError("lr must be positive");
  if (cfg.batch_scenes < 1) throw InputError("batch_scenes must be >= 1");
  if (cfg.image_rays < 1) throw InputError("image_rays must be >= 1");
  if (cfg.depth_rays < 0) throw InputError("depth_rays must be >= 0");
  if (cfg.depth_weight < 0.0 || cfg.depth_weight > 1.0)
    throw InputError("depth_weight must lie in [0, 1]");
  if (cfg.context_views < 1) throw InputError("context_views must be >= 1");
  if (cfg.target_views < 1) throw InputError("target_views must be >= 1");
  if (cfg.posterior_ctx_views < cfg.context_views)
    throw InputError("posterior_ctx_views must cover the context views");
  if (cfg.posterior_ctx_views > cfg.context_views + cfg.target_views)
    throw InputError("posterior_ctx_views exceeds available views");
  if (cfg.like_std <= 0.0) throw InputError("like_std must be positive");
  if (cfg.density_l1 < 0.0) throw InputError("density_l1 must be >= 0");
  if (cfg.grad_clip <= 0.0) throw InputError("grad_clip must be positive");
  if (cfg.total_steps < 1) throw InputError("total_steps must be >= 1");
  if (cfg.anneal_frac < 0.0 || cfg.anneal_frac > 1.0)
    throw InputError("anneal_frac must lie in [0, 1]");
}

double kl_beta(const TrainConfig& cfg, int64_t step) {
  double warm = cfg.anneal_frac * static_cast<double>(cfg.total_steps);
  if (warm <= 0.0) return 1.0;
  double b = static_cast<double>(step) / warm;
  return b < 0.0 ? 0.0 : (b > 1.0 ? 1.0 : b);
}

std::vector<SceneViews> assemble_batch(const SceneDataset& ds,
                                       const TrainConfig& cfg, Rng& rng) {
  if (ds.scenes.empty()) throw DataError("dataset has no scenes");
  size_t n = ds.scenes.size();
  if (static_cast<size_t>(cfg.batch_scenes) > n)
    throw DataError("batch wants more distinct scenes than the dataset has");
  size_t need =
      static_cast<size_t>(cfg.context_views) + cfg.target_views;

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  for (int i = 0; i < cfg.batch_scenes; ++i) {
    size_t j = i + rng.uniform_index(n - i);
    std::swap(order[i], order[j]);
  }

  std::vector<SceneViews> batch;
  for (int i = 0; i < cfg.batch_scenes; ++i) {
    const SceneRecord& s = ds.scenes[order[i]];
    if (s.views.size() < need)
      throw DataError("scene " + s.id + " has too few views for this config");
    std::vector<int> vs(s.views.size());
    std::iota(vs.begin(), vs.end(), 0);
    for (size_t k = 0; k + 1 < vs.size(); ++k) {
      size_t j = k + rng.uniform_index(vs.size() - k);
      std::swap(vs[k], vs[j]);
    }
    SceneViews sv;
    sv.scene = &s;
    sv.context.assign(vs.begin(), vs.begin() + cfg.context_views);
    sv.targets.assign(vs.begin() + cfg.context_views,
                      vs.begin() + static_cast<long>(need));
    int extra = cfg.posterior_ctx_views - cfg.context_views;
    if (extra < 0 || extra > static_cast<int>(sv.targets.size()))
      throw InputError("posterior_ctx_views inconsistent with view counts");
    sv.post_extra.assign(sv.targets.begin(), sv.targets.begin() + extra);
    batch.push_back(std::move(sv));
  }
  return batch;
}

ad::Var<double> elbo_loss(ParamBinder<double>& b, const TrainConfig& cfg,
                          const std::vector<SceneViews>& batch, double beta,
                          RngKey key, ElboStats* stats) {
  if (batch.empty()) throw InputError("elbo_loss: empty batch");
  auto& t = b.tape();
  const ModelConfig& mc = cfg.model;
  SceneFnConfig sc = scene_cfg(mc);
  ElboStats acc;
  auto loss = t.constant(0.0);

  for (size_t si = 0; si < batch.size(); ++si) {
    const SceneViews& sv = batch[si];
    RngKey skey = key.fold("scene").fold(static_cast<uint64_t>(si));

    std::vector<PosedImage> ctx, extra;
    for (int v : sv.context)
      ctx.push_back({sv.scene->views[v].image, sv.scene->views[v].cam});
    for (int v : sv.post_extra)
      extra.push_back({sv.scene->views[v].image, sv.scene->views[v].cam});
    auto enc = encode_scene(b, mc, ctx, extra);

    std::optional<ad::Var<double>> Z;
    auto kl = t.constant(0.0);
    if (mc.has_latents()) {
      Rng zr(skey.fold("zq"));
      auto q = posterior_sample(b, mc, enc, zr);
      kl = ad::sub(q.logprob, prior_logprob(b, mc, enc, q.z));
      Z = q.z;
    }

    // Color likelihood on a random subset of target rays; the estimate is
    // rescaled to the full pixel sum so it balances the KL term.
    Rng ir(skey.fold("rays"));
    int T = static_cast<int>(sv.targets.size());
    std::vector<Ray> rays;
    rays.reserve(cfg.image_rays);
    ad::Mat<double> gt(cfg.image_rays, 3);
    int64_t pixels = 0;
    for (int v : sv.targets) {
      const Camera& cam = sv.scene->views[v].cam;
      pixels += static_cast<int64_t>(cam.width) * cam.height;
    }
    for (int j = 0; j < cfg.image_rays; ++j) {
      const ViewRecord& rec =
          sv.scene->views[sv.targets[ir.uniform_index(T)]];
      int p = static_cast<int>(
          ir.uniform_index(static_cast<size_t>(rec.cam.width) *
                           rec.cam.height));
      int ix = p % rec.cam.width, iy = p / rec.cam.width;
      rays.push_back(pixel_to_ray(rec.cam, ix + 0.5, iy + 0.5));
      gt.row(j) = rec.image.row(p);
    }
    auto rnd = render_rays(b, "sf", sc, mc.render, rays, Z, enc.geom,
                           enc.tokens, skey.fold("render"));
    double img_scale = static_cast<double>(pixels) / cfg.image_rays;
    auto image_ll =
        ad::scale(color_loglik(rnd.fine.color, gt, cfg.like_std), img_scale);
    auto coarse_ll =
        ad::scale(color_loglik(rnd.coarse.color, gt, cfg.like_std), img_scale);

    // Depth-guided likelihood: two fine-head evaluations per ray, one at the
    // observed depth and one at a uniform free-space point before it. Rays
    // whose depth does not fall strictly inside the camera range are skipped
    // but still counted in the estimator's denominator.
    auto depth_ll = t.constant(0.0);
    bool depth_on = cfg.depth_rays > 0;
    if (depth_on) {
      Rng dr(skey.fold("depth"));
      std::vector<Eigen::Vector3d> hit, mid, dir;
      std::vector<double> span;
      ad::Mat<double> dgt(cfg.depth_rays, 3);
      for (int j = 0; j < cfg.depth_rays; ++j) {
        const ViewRecord& rec =
            sv.scene->views[sv.targets[dr.uniform_index(T)]];
        int p = static_cast<int>(
            dr.uniform_index(static_cast<size_t>(rec.cam.width) *
                             rec.cam.height));
        double gd = rec.depth(p);
        if (!(gd > rec.cam.t_near && gd < rec.cam.t_far)) continue;
        int ix = p % rec.cam.width, iy = p / rec.cam.width;
        Ray ray = pixel_to_ray(rec.cam, ix + 0.5, iy + 0.5);
        double u = dr.uniform(rec.cam.t_near, gd);
        hit.push_back(ray.at(gd));
        mid.push_back(ray.at(u));
        dir.push_back(ray.dir);
        span.push_back(gd - rec.cam.t_near);
        dgt.row(static_cast<Eigen::Index>(hit.size()) - 1) = rec.image.row(p);
      }
      Eigen::Index nd = static_cast<Eigen::Index>(hit.size());
      if (nd > 0) {
        ad::Mat<double> X(2 * nd, 3), D(2 * nd, 3), sp(nd, 1);
        for (Eigen::Index j = 0; j < nd; ++j) {
          X.row(j) = hit[j].transpose();
          X.row(nd + j) = mid[j].transpose();
          D.row(j) = dir[j].transpose();
          D.row(nd + j) = dir[j].transpose();
          sp(j, 0) = span[j];
        }
        auto out = scene_function(b, "sf", sc, t.input(X), t.input(D), Z,
                                  enc.geom, Pass::Fine);
        auto sig_hit = ad::slice_rows(out.sigma, 0, nd);
        auto sig_mid = ad::slice_rows(out.sigma, nd, nd);
        auto col_hit = ad::slice_rows(out.color, 0, nd);
        auto hit_term = ad::sum_all(ad::log(ad::clamp_min(sig_hit, 1e-12)));
        auto free_term = ad::sum_all(ad::mul(sig_mid, t.input(sp)));
        auto col_term =
            color_loglik(col_hit, dgt.topRows(nd), cfg.like_std);
        double dscale = static_cast<double>(pixels) / cfg.depth_rays;
        depth_ll = ad::scale(
            ad::add(ad::sub(hit_term, free_term), col_term), dscale);
      }
    }

    auto recon = depth_on
                     ? ad::add(ad::scale(image_ll, 1.0 - cfg.depth_weight),
                               ad::scale(depth_ll, cfg.depth_weight))
                     : image_ll;

    auto reg = t.constant(0.0);
    if (cfg.density_l1 > 0.0) {
      auto sig = ad::concat_rows<double>({rnd.sigma_coarse, rnd.sigma_fine});
      reg = ad::scale(ad::mean_all(sig), cfg.density_l1);
    }

    auto obj = ad::sub(ad::add(recon, coarse_ll), ad::scale(kl, beta));
    loss = ad::add(loss, ad::sub(reg, obj));

    acc.image_ll += scalar(image_ll);
    acc.coarse_ll += scalar(coarse_ll);
    acc.depth_ll += scalar(depth_ll);
    acc.recon_ll += scalar(recon);
    acc.kl += scalar(kl);
    acc.elbo += scalar(recon) - beta * scalar(kl);
    acc.density_reg += scalar(reg);
  }

  double inv = 1.0 / static_cast<double>(batch.size());
  loss = ad::scale(loss, inv);
  if (stats) {
    acc.image_ll *= inv;
    acc.coarse_ll *= inv;
    acc.depth_ll *= inv;
    acc.recon_ll *= inv;
    acc.kl *= inv;
    acc.elbo *= inv;
    acc.density_reg *= inv;
    *stats = acc;
  }
  return loss;
}

StepMetrics train_step(ParamTree<double>& params, const TrainConfig& cfg,
                       const SceneDataset& ds, int64_t step) {
  validate_train(cfg);
  StepMetrics m;
  m.step = step;
  m.beta = kl_beta(cfg, step);
  RngKey key =
      RngKey{}.fold(cfg.seed).fold("step").fold(static_cast<uint64_t>(step));
  Rng brng(key.fold("batch"));
  auto batch = assemble_batch(ds, cfg, brng);

  ad::Tape<double> t;
  ParamBinder<double> b(t, params);
  try {
    auto loss = elbo_loss(b, cfg, batch, m.beta, key.fold("elbo"), &m.stats);
    m.loss = scalar(loss);
    if (!std::isfinite(m.loss)) {
      m.note = "non-finite loss, step skipped";
      return m;
    }
    params.zero_grad();
    t.backward(loss);
    b.harvest();
    m.grad_norm = params.grad_norm();
    if (!std::isfinite(m.grad_norm)) {
      params.zero_grad();
      m.note = "non-finite gradient, step skipped";
      return m;
    }
    params.clip_grad_norm(cfg.grad_clip);
    params.adam_step(cfg.lr, step + 1);
    m.applied = true;
  } catch (const NumericError& e) {
    params.zero_grad();
    m.note = e.what();
  }
  return m;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

void put_mat(std::ostream& os, const ad::Mat<double>& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      wire::put_f32(os, static_cast<float>(m(r, c)));
}

ad::Mat<double> get_mat(std::istream& is, Eigen::Index rows,
                        Eigen::Index cols, const std::string& path) {
  ad::Mat<double> m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) {
      float f = 0;
      if (!wire::get_f32(is, f))
        throw DataError("truncated checkpoint: " + path);
      m(r, c) = static_cast<double>(f);
    }
  return m;
}

}  // namespace

void save_checkpoint(const std::string& path, const TrainConfig& cfg,
                     uint64_t step, const ParamTree<double>& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write checkpoint: " + path);
  wire::put_u32(os, kCheckpointVersion);
  std::string js = train_config_to_json(cfg);
  wire::put_u32(os, static_cast<uint32_t>(js.size()));
  os.write(js.data(), static_cast<std::streamsize>(js.size()));
  wire::put_u64(os, step);
  wire::put_u32(os, static_cast<uint32_t>(params.count()));
  for (const auto& [name, e] : params.entries()) {
    wire::put_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    wire::put_u32(os, static_cast<uint32_t>(e.value.rows()));
    wire::put_u32(os, static_cast<uint32_t>(e.value.cols()));
    put_mat(os, e.value);
    put_mat(os, e.m);
    put_mat(os, e.v);
  }
  if (!os) throw DataError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path);
  uint32_t ver = 0;
  if (!wire::get_u32(is, ver))
    throw DataError("truncated checkpoint: " + path);
  if (ver != kCheckpointVersion)
    throw DataError("unsupported checkpoint version in " + path);
  uint32_t jlen = 0;
  if (!wire::get_u32(is, jlen) || jlen > (64u << 20))
    throw DataError("corrupt checkpoint header: " + path);
  std::string js(jlen, '\0');
  if (!is.read(js.data(), jlen))
    throw DataError("truncated checkpoint: " + path);

  Checkpoint ck;
  try {
    ck.config = train_config_from_json(js);
  } catch (const InputError& e) {
    throw DataError("checkpoint config in " + path + ": " + e.what());
  }
  if (!wire::get_u64(is, ck.step))
    throw DataError("truncated checkpoint: " + path);
  uint32_t n = 0;
  if (!wire::get_u32(is, n))
    throw DataError("truncated checkpoint: " + path);
  for (uint32_t i = 0; i < n; ++i) {
    uint32_t nl = 0, rows = 0, cols = 0;
    if (!wire::get_u32(is, nl) || nl == 0 || nl > 4096)
      throw DataError("corrupt checkpoint entry in " + path);
    std::string name(nl, '\0');
    if (!is.read(name.data(), nl))
      throw DataError("truncated checkpoint: " + path);
    if (!wire::get_u32(is, rows) || !wire::get_u32(is, cols) || rows == 0 ||
        cols == 0 ||
        static_cast<uint64_t>(rows) * cols > (1ull << 30))
      throw DataError("corrupt checkpoint entry in " + path);
    ck.params.declare(name, rows, cols) = get_mat(is, rows, cols, path);
    auto& e = ck.params.at(name);
    e.m = get_mat(is, rows, cols, path);
    e.v = get_mat(is, rows, cols, path);
  }

  // The arrays must line up with what the stored config declares.
  ParamTree<double> expect;
  Rng rng(RngKey{});
  declare_model(expect, ck.config.model, rng);
  if (expect.count() != ck.params.count())
    throw DataError("checkpoint does not match its own config: " + path);
  for (const auto& [k, e] : expect.entries()) {
    if (!ck.params.has(k))
      throw DataError("checkpoint is missing parameter " + k + ": " + path);
    const auto& l = ck.params.at(k);
    if (l.value.rows() != e.value.rows() || l.value.cols() != e.value.cols())
      throw DataError("checkpoint shape mismatch for " + k + ": " + path);
  }
  return ck;
}

// ---------------------------------------------------------------------------
// Configuration files
// ---------------------------------------------------------------------------

namespace {

template <class T>
void take(json& j, const char* key, T& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  out = it->template get<T>();
  j.erase(it);
}

void reject_unknown(const json& j, const char* where) {
  if (!j.empty())
    throw InputError(std::string("unknown config key in ") + where + ": " +
                     j.begin().key());
}

void read_model(json j, ModelConfig& m) {
  std::string variant = variant_name(m.variant), bg = bg_name(m.scene.bg);
  take(j, "variant", variant);
  m.variant = variant_from_string(variant);
  take(j, "latent_k", m.latent_k);
  take(j, "latent_d", m.latent_d);
  take(j, "prior_layers", m.prior_layers);
  take(j, "posterior_layers", m.posterior_layers);
  take(j, "flow_hidden", m.flow_hidden);
  take(j, "flow_heads", m.flow_heads);
  take(j, "gauss_hidden", m.gauss_hidden);
  if (auto it = j.find("encoder"); it != j.end()) {
    json e = *it;
    j.erase(it);
    take(e, "levels", m.enc.levels);
    take(e, "base", m.enc.base);
    take(e, "groups", m.enc.groups);
    reject_unknown(e, "encoder");
  }
  if (auto it = j.find("scene"); it != j.end()) {
    json s = *it;
    j.erase(it);
    take(s, "model_dim", m.scene.model_dim);
    take(s, "latent_layers", m.scene.latent_layers);
    take(s, "integ_layers", m.scene.integ_layers);
    take(s, "heads", m.scene.heads);
    take(s, "local_blocks", m.scene.local_blocks);
    take(s, "out_hidden", m.scene.out_hidden);
    take(s, "out_layers", m.scene.out_layers);
    take(s, "bg_hidden", m.scene.bg_hidden);
    take(s, "x_lmin", m.scene.x_lmin);
    take(s, "x_lmax", m.scene.x_lmax);
    take(s, "d_lmin", m.scene.d_lmin);
    take(s, "d_lmax", m.scene.d_lmax);
    take(s, "background", bg);
    m.scene.bg = bg_from_string(bg);
    reject_unknown(s, "scene");
  }
  if (auto it = j.find("render"); it != j.end()) {
    json r = *it;
    j.erase(it);
    take(r, "n_coarse", m.render.n_coarse);
    take(r, "n_fine", m.render.n_fine);
    take(r, "eps", m.render.eps);
    reject_unknown(r, "render");
  }
  reject_unknown(j, "model");
}

}  // namespace

std::string train_config_to_json(const TrainConfig& cfg) {
  json j{
      {"model",
       {{"variant", variant_name(cfg.model.variant)},
        {"latent_k", cfg.model.latent_k},
        {"latent_d", cfg.model.latent_d},
        {"prior_layers", cfg.model.prior_layers},
        {"posterior_layers", cfg.model.posterior_layers},
        {"flow_hidden", cfg.model.flow_hidden},
        {"flow_heads", cfg.model.flow_heads},
        {"gauss_hidden", cfg.model.gauss_hidden},
        {"encoder",
         {{"levels", cfg.model.enc.levels},
          {"base", cfg.model.enc.base},
          {"groups", cfg.model.enc.groups}}},
        {"scene",
         {{"model_dim", cfg.model.scene.model_dim},
          {"latent_layers", cfg.model.scene.latent_layers},
          {"integ_layers", cfg.model.scene.integ_layers},
          {"heads", cfg.model.scene.heads},
          {"local_blocks", cfg.model.scene.local_blocks},
          {"out_hidden", cfg.model.scene.out_hidden},
          {"out_layers", cfg.model.scene.out_layers},
          {"bg_hidden", cfg.model.scene.bg_hidden},
          {"x_lmin", cfg.model.scene.x_lmin},
          {"x_lmax", cfg.model.scene.x_lmax},
          {"d_lmin", cfg.model.scene.d_lmin},
          {"d_lmax", cfg.model.scene.d_lmax},
          {"background", bg_name(cfg.model.scene.bg)}}},
        {"render",
         {{"n_coarse", cfg.model.render.n_coarse},
          {"n_fine", cfg.model.render.n_fine},
          {"eps", cfg.model.render.eps}}}}},
      {"lr", cfg.lr},
      {"batch_scenes", cfg.batch_scenes},
      {"image_rays", cfg.image_rays},
      {"depth_rays", cfg.depth_rays},
      {"depth_weight", cfg.depth_weight},
      {"context_views", cfg.context_views},
      {"target_views", cfg.target_views},
      {"posterior_ctx_views", cfg.posterior_ctx_views},
      {"like_std", cfg.like_std},
      {"density_l1", cfg.density_l1},
      {"grad_clip", cfg.grad_clip},
      {"total_steps", cfg.total_steps},
      {"anneal_frac", cfg.anneal_frac},
      {"seed", cfg.seed},
  };
  return j.dump(2) + "\n";
}

TrainConfig train_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw InputError(std::string("config is not valid JSON: ") + e.what());
  }
  TrainConfig cfg;
  try {
    if (auto it = j.find("model"); it != j.end()) {
      read_model(*it, cfg.model);
      j.erase(it);
    }
    take(j, "lr", cfg.lr);
    take(j, "batch_scenes", cfg.batch_scenes);
    take(j, "image_rays", cfg.image_rays);
    take(j, "depth_rays", cfg.depth_rays);
    take(j, "depth_weight", cfg.depth_weight);
    take(j, "context_views", cfg.context_views);
    take(j, "target_views", cfg.target_views);
    take(j, "posterior_ctx_views", cfg.posterior_ctx_views);
    take(j, "like_std", cfg.like_std);
    take(j, "density_l1", cfg.density_l1);
    take(j, "grad_clip", cfg.grad_clip);
    take(j, "total_steps", cfg.total_steps);
    take(j, "anneal_frac", cfg.anneal_frac);
    take(j, "seed", cfg.seed);
    reject_unknown(j, "config");
  } catch (const json::exception& e) {
    throw InputError(std::string("bad config field: ") + e.what());
  }
  validate_train(cfg);
  return cfg;
}

TrainConfig preset_config(const std::string& name) {
  TrainConfig c;
  if (name == "city-analog") {
    c.model.variant = Variant::LaserNv;
    c.model.latent_k = 24;
    c.model.latent_d = 64;
    c.model.flow_hidden = 128;
    c.model.enc = {3, 16, 8};
    c.model.scene.model_dim = 128;
    c.model.scene.out_hidden = 128;
    c.model.scene.bg_hidden = 128;
    c.model.scene.bg = BgVariant::LatentAttn;
    c.model.render.n_coarse = 64;
    c.model.render.n_fine = 32;
    c.lr = 3e-4;
    c.image_rays = 64;
    c.depth_rays = 512;
    c.context_views = 2;
    c.target_views = 8;
    c.posterior_ctx_views = 10;
    c.total_steps = 5000;
  } else if (name == "shapenet-analog") {
    c.model.variant = Variant::LaserNv;
    c.model.latent_k = 8;
    c.model.latent_d = 64;
    c.model.flow_hidden = 128;
    c.model.enc = {3, 16, 8};
    c.model.scene.model_dim = 128;
    c.model.scene.out_hidden = 128;
    c.model.scene.bg_hidden = 128;
    c.model.scene.x_lmin = -2;
    c.model.scene.bg = BgVariant::ConstantWhite;
    c.model.render.n_coarse = 32;
    c.model.render.n_fine = 32;
    c.lr = 2e-4;
    c.image_rays = 128;
    c.depth_rays = 0;
    c.context_views = 1;
    c.target_views = 8;
    c.posterior_ctx_views = 4;
    c.density_l1 = 0.01;
    c.total_steps = 5000;
  } else {
    throw InputError("unknown preset: " + name);
  }
  return c;
}

}  // namespace lsf
