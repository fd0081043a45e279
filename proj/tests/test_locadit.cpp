#include <catch2/catch_amalgamated.hpp>

#include "locadit/armodel.hpp"
#include "locadit/diffusion.hpp"
#include "locadit/vae.hpp"

using namespace locadit;

namespace {

VaeLevelConfig tiny_coarse() {
  VaeLevelConfig cfg;
  cfg.input_resolution = 8;
  cfg.dense_bottleneck = true;
  cfg.latent_channels = 4;
  cfg.width = 6;
  return cfg;
}

VaeLevelConfig tiny_fine() {
  VaeLevelConfig cfg;
  cfg.input_resolution = 16;
  cfg.dense_bottleneck = false;
  cfg.latent_channels = 4;
  cfg.width = 6;
  return cfg;
}

SparseVoxelGrid toy_grid(uint32_t R, uint64_t seed, size_t n_points = 200) {
  Rng rng(seed);
  PointCloud c;
  for (size_t i = 0; i < n_points; ++i) {
    // points on a box shell for plausible surface structure
    Vec3 p{rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8)};
    int axis = int(rng.index(3));
    p[axis] = rng.uniform() < 0.5 ? -0.8 : 0.8;
    c.positions.push_back(p);
    Vec3 n{0, 0, 0};
    n[axis] = 1;
    c.normals.push_back(n);
  }
  return splat_normals(c, voxelize(c, R));
}

ParamStore vae_store(const VaeLevelConfig& cfg, const std::string& prefix, uint64_t seed) {
  ParamStore p;
  p.init_seed = seed;
  register_vae(p, prefix, cfg, Rng(seed));
  return p;
}

double finite_difference(ParamStore& store, size_t coord, const std::function<double()>& f,
                         double h = 1e-6) {
  double keep = store.values()[coord];
  store.values()[coord] = keep + h;
  double lp = f();
  store.values()[coord] = keep - h;
  double lm = f();
  store.values()[coord] = keep;
  return (lp - lm) / (2 * h);
}

}  // namespace

// ---------------------------------------------------------------------------
// VAE
// ---------------------------------------------------------------------------

TEST_CASE("coarse encode of an empty grid yields a finite dense posterior") {
  VaeLevelConfig cfg = tiny_coarse();
  ParamStore p = vae_store(cfg, "vae", 1);
  SparseVoxelGrid empty;
  empty.resolution = cfg.input_resolution;
  empty.channels = 3;
  LatentGrid post = vae_encode(empty, cfg, p, "vae");
  CHECK(post.kind == LatentKind::dense);
  CHECK(post.sites() == 8);  // 2^3 dense bottleneck
  CHECK(post.mean.size() == post.sites() * post.channels);
  post.check_finite();
}

TEST_CASE("fine encode yields a sparse posterior on the latent support") {
  VaeLevelConfig cfg = tiny_fine();
  ParamStore p = vae_store(cfg, "vae", 2);
  SparseVoxelGrid g = toy_grid(cfg.input_resolution, 3);
  LatentGrid post = vae_encode(g, cfg, p, "vae");
  CHECK(post.kind == LatentKind::sparse);
  CHECK(post.resolution == cfg.latent_resolution());
  GridHierarchy h = GridHierarchy::of(g);
  CHECK(post.sites() == h.lat.count());
}

TEST_CASE("encode is deterministic across runs") {
  VaeLevelConfig cfg = tiny_coarse();
  ParamStore p = vae_store(cfg, "vae", 4);
  SparseVoxelGrid g = toy_grid(cfg.input_resolution, 5);
  LatentGrid a = vae_encode(g, cfg, p, "vae");
  LatentGrid b = vae_encode(g, cfg, p, "vae");
  CHECK(a.mean == b.mean);
  CHECK(a.logvar == b.logvar);
}

TEST_CASE("encode rejects a resolution mismatch") {
  VaeLevelConfig cfg = tiny_coarse();
  ParamStore p = vae_store(cfg, "vae", 6);
  SparseVoxelGrid g = toy_grid(32, 7);
  CHECK_THROWS_AS(vae_encode(g, cfg, p, "vae"), error);
}

TEST_CASE("decode rejects a latent kind mismatch") {
  VaeLevelConfig cfg = tiny_coarse();
  ParamStore p = vae_store(cfg, "vae", 8);
  LatentGrid z;
  z.kind = LatentKind::sparse;  // coarse level expects dense
  z.resolution = cfg.latent_resolution();
  z.channels = uint32_t(cfg.latent_channels);
  CHECK_THROWS_AS(vae_decode(z, cfg, p, "vae"), error);
}

TEST_CASE("forced keep logits occupy the full child set, forced prune empties") {
  VaeLevelConfig cfg = tiny_coarse();
  ParamStore p = vae_store(cfg, "vae", 9);
  SparseVoxelGrid g = toy_grid(cfg.input_resolution, 10);
  LatentGrid z = mean_latent(vae_encode(g, cfg, p, "vae"));

  for (double& v : p.view("vae.keep1.b")) v = 50.0;
  for (double& v : p.view("vae.keep2.b")) v = 50.0;
  for (double& v : p.view("vae.keep1.W")) v = 0.0;
  for (double& v : p.view("vae.keep2.W")) v = 0.0;
  SparseVoxelGrid all = vae_decode(z, cfg, p, "vae");
  size_t full_children = size_t(cfg.input_resolution) * cfg.input_resolution * cfg.input_resolution;
  CHECK(all.count() == full_children);  // dense latent: every voxel kept

  for (double& v : p.view("vae.keep1.b")) v = -50.0;
  SparseVoxelGrid none = vae_decode(z, cfg, p, "vae");
  CHECK(none.count() == 0);
}

TEST_CASE("vae loss floors: perfect logits, exact normals, unit posterior") {
  GridHierarchy hier = GridHierarchy::of(*[] {
    static SparseVoxelGrid g = toy_grid(8, 11);
    return &g;
  }());

  DecodedGrid pred;
  pred.cand1 = children_of(hier.lat);
  pred.cand2 = children_of(hier.mid);
  pred.logits1.resize(pred.cand1.count());
  for (size_t i = 0; i < pred.cand1.count(); ++i)
    pred.logits1[i] = hier.mid.row_of(pred.cand1.sites[i]) >= 0 ? 30.0 : -30.0;
  pred.logits2.resize(pred.cand2.count());
  pred.normals.assign(pred.cand2.count() * 3, 0.0);
  for (size_t i = 0; i < pred.cand2.count(); ++i) {
    int64_t row = hier.full.row_of(pred.cand2.sites[i]);
    pred.logits2[i] = row >= 0 ? 30.0 : -30.0;
    if (row >= 0)
      for (int c = 0; c < 3; ++c) pred.normals[i * 3 + c] = hier.grid->feature(size_t(row))[c];
  }

  LatentGrid post;
  post.mean.assign(16, 0.0);
  post.logvar.assign(16, 0.0);

  LossBreakdown lb = vae_loss(pred, hier, post);
  CHECK(lb.components["bce"] < 1e-9);
  CHECK(lb.components["l1_normals"] == 0.0);
  CHECK(lb.components["kl"] == 0.0);
  CHECK(lb.total < 1e-7);
}

TEST_CASE("vae loss matches an independent recomputation on a random instance") {
  VaeLevelConfig cfg = tiny_coarse();
  ParamStore p = vae_store(cfg, "vae", 12);
  SparseVoxelGrid g = toy_grid(cfg.input_resolution, 13);
  GridHierarchy hier = GridHierarchy::of(g);

  Tape t;
  VaeEncodeOut enc = vae_encode_t(t, p, "vae", cfg, g);
  Rng rng(14);
  std::vector<double> eps(enc.mu.size());
  for (double& e : eps) e = rng.normal();
  Var z = t.add(enc.mu, t.mul(t.exp_(t.scale(enc.logvar, 0.5)), t.input(eps, enc.mu.rows, enc.mu.cols)));
  VaeDecodeOut dec = vae_decode_t(t, p, "vae", cfg, z, enc.lat, &hier.mid);

  LatentGrid post;
  post.mean.assign(t.val(enc.mu).begin(), t.val(enc.mu).end());
  post.logvar.assign(t.val(enc.logvar).begin(), t.val(enc.logvar).end());
  LossBreakdown lb = vae_loss(materialize(t, dec), hier, post);

  // independent route: raw formulas over the materialized arrays
  auto sigmoid_bce = [](double logit, double target) {
    double l = std::clamp(logit, -30.0, 30.0);
    double p1 = 1.0 / (1.0 + std::exp(-l));
    return -(target * std::log(p1) + (1 - target) * std::log(1 - p1));
  };
  DecodedGrid m = materialize(t, dec);
  double bce = 0;
  for (size_t i = 0; i < m.cand1.count(); ++i)
    bce += sigmoid_bce(m.logits1[i], hier.mid.row_of(m.cand1.sites[i]) >= 0 ? 1 : 0);
  for (size_t i = 0; i < m.cand2.count(); ++i)
    bce += sigmoid_bce(m.logits2[i], hier.full.row_of(m.cand2.sites[i]) >= 0 ? 1 : 0);
  bce /= double(m.cand1.count() + m.cand2.count());
  double l1 = 0;
  size_t tp = 0;
  for (size_t i = 0; i < m.cand2.count(); ++i) {
    int64_t row = hier.full.row_of(m.cand2.sites[i]);
    if (row < 0) continue;
    ++tp;
    for (int c = 0; c < 3; ++c)
      l1 += std::abs(m.normals[i * 3 + c] - hier.grid->feature(size_t(row))[c]);
  }
  l1 /= double(tp * 3);
  double kl = 0;
  for (size_t i = 0; i < post.mean.size(); ++i)
    kl += 0.5 * (post.mean[i] * post.mean[i] + std::exp(post.logvar[i]) - 1 - post.logvar[i]);
  kl /= double(post.mean.size());

  CHECK(lb.components["bce"] == Catch::Approx(bce).margin(1e-9));
  CHECK(lb.components["l1_normals"] == Catch::Approx(l1).margin(1e-9));
  CHECK(lb.components["kl"] == Catch::Approx(kl).margin(1e-9));
  CHECK(lb.total == Catch::Approx(20 * bce + 50 * l1 + 0.03 * kl).margin(1e-9));
  // weighted-sum invariant
  double recomposed = 0;
  for (const auto& [name, value] : lb.components) recomposed += lb.weights[name] * value;
  CHECK(lb.total == Catch::Approx(recomposed).margin(1e-9));
}

TEST_CASE("vae composite loss gradient matches finite differences") {
  VaeLevelConfig cfg = tiny_coarse();
  cfg.input_resolution = 8;
  cfg.width = 4;
  cfg.latent_channels = 2;
  Rng seeds(100);
  for (int trial = 0; trial < 3; ++trial) {
    ParamStore p = vae_store(cfg, "vae", seeds.u64());
    SparseVoxelGrid g = toy_grid(cfg.input_resolution, seeds.u64(), 60);
    GridHierarchy hier = GridHierarchy::of(g);
    Rng rng(seeds.u64());
    std::vector<double> eps;

    auto run = [&](bool backward) {
      Tape t;
      VaeEncodeOut enc = vae_encode_t(t, p, "vae", cfg, g);
      if (eps.empty()) {
        eps.resize(enc.mu.size());
        for (double& e : eps) e = rng.normal();
      }
      Var z = t.add(enc.mu,
                    t.mul(t.exp_(t.scale(enc.logvar, 0.5)), t.input(eps, enc.mu.rows, enc.mu.cols)));
      VaeDecodeOut dec = vae_decode_t(t, p, "vae", cfg, z, enc.lat, &hier.mid);

      std::vector<double> occ = occupancy_targets(dec.cand1, hier.mid);
      std::vector<double> occ2 = occupancy_targets(dec.cand2, hier.full);
      occ.insert(occ.end(), occ2.begin(), occ2.end());
      Var bce = t.bce_logits_mean(t.concat_rows(dec.logits1, dec.logits2), occ, cfg.logit_cap);

      std::vector<int64_t> tp_rows;
      std::vector<double> tp_normals;
      for (size_t i = 0; i < dec.cand2.count(); ++i) {
        int64_t row = hier.full.row_of(dec.cand2.sites[i]);
        if (row < 0) continue;
        tp_rows.push_back(int64_t(i));
        for (int c = 0; c < 3; ++c) tp_normals.push_back(hier.grid->feature(size_t(row))[c]);
      }
      Var l1 = t.l1_mean(t.gather_rows(dec.normals, tp_rows), tp_normals);
      Var kl = t.kl_gauss_mean(enc.mu, enc.logvar);
      Var total = t.add(t.add(t.scale(bce, cfg.lambda_bce), t.scale(l1, cfg.lambda_l1)),
                        t.scale(kl, cfg.lambda_kl));
      if (backward) t.backward(total);
      return t.scalar(total);
    };

    p.zero_grad();
    run(true);
    std::vector<double> analytic = p.grads();
    Rng pick(seeds.u64());
    for (int k = 0; k < 25; ++k) {
      size_t coord = size_t(pick.index(p.total()));
      double fd = finite_difference(p, coord, [&] { return run(false); }, 1e-5);
      double denom = std::max({1e-6, std::abs(fd), std::abs(analytic[coord])});
      INFO("trial " << trial << " coord " << coord);
      CHECK(std::abs(fd - analytic[coord]) / denom <= 1e-4);
    }
  }
}

// ---------------------------------------------------------------------------
// diffusion
// ---------------------------------------------------------------------------

TEST_CASE("diffuse_forward endpoints") {
  DiffusionSchedule sched = DiffusionSchedule::linear(100);
  sched.check_valid();
  LatentGrid z0;
  z0.resolution = 2;
  z0.channels = 2;
  z0.support = SiteSet::dense(2).sites;
  Rng rng(15);
  z0.values.resize(16);
  for (double& v : z0.values) v = rng.normal();
  std::vector<double> eps(16);
  for (double& e : eps) e = rng.normal();

  LatentGrid zt0 = diffuse_forward(z0, 0, eps, sched);
  CHECK(zt0.values == z0.values);  // alpha_bar_0 = 1 exactly

  // alpha_bar -> 0 limit: z_T is nearly pure noise
  double ab_T = sched.alphabar(sched.steps);
  CHECK(ab_T < 0.05);
  LatentGrid ztT = diffuse_forward(z0, sched.steps, eps, sched);
  for (size_t i = 0; i < eps.size(); ++i)
    CHECK(ztT.values[i] == Catch::Approx(std::sqrt(ab_T) * z0.values[i] +
                                         std::sqrt(1 - ab_T) * eps[i]).margin(1e-12));

  CHECK_THROWS_AS(diffuse_forward(z0, 101, eps, sched), error);
}

TEST_CASE("diffuse_forward Monte Carlo moments match the closed form") {
  DiffusionSchedule sched = DiffusionSchedule::linear(100);
  size_t n = 512;
  LatentGrid z0;
  z0.resolution = 8;  // site bookkeeping is irrelevant to the moments
  z0.channels = 1;
  z0.support.assign(n, VoxelIdx{0, 0, 0});
  Rng init(16);
  z0.values.resize(n);
  for (double& v : z0.values) v = init.normal(0.0, 2.0);

  for (int t : {1, 50, 100}) {
    Rng rng(37 + uint64_t(t));
    size_t draws = 100000;
    std::vector<double> mean(n, 0.0), m2(n, 0.0);
    std::vector<double> eps(n);
    for (size_t d = 0; d < draws; ++d) {
      for (double& e : eps) e = rng.normal();
      LatentGrid zt = diffuse_forward(z0, t, eps, sched);
      for (size_t i = 0; i < n; ++i) {
        mean[i] += zt.values[i];
        m2[i] += zt.values[i] * zt.values[i];
      }
    }
    double ab = sched.alphabar(t);
    // mean error is measured against the latent scale: at large t the mean
    // sqrt(ab)*z0 itself vanishes while the estimator noise stays O(1/sqrt(N))
    double err_mean = 0, norm_scale = 0, err_var = 0, norm_var = 0;
    for (size_t i = 0; i < n; ++i) {
      double mu = mean[i] / double(draws);
      double var = m2[i] / double(draws) - mu * mu;
      double mu_ref = std::sqrt(ab) * z0.values[i], var_ref = 1.0 - ab;
      err_mean += (mu - mu_ref) * (mu - mu_ref);
      norm_scale += z0.values[i] * z0.values[i];
      err_var += (var - var_ref) * (var - var_ref);
      norm_var += var_ref * var_ref;
    }
    INFO("t = " << t);
    CHECK(std::sqrt(err_mean / norm_scale) < 0.01);
    CHECK(std::sqrt(err_var / norm_var) < 0.02);
  }
}

TEST_CASE("zero model on unit gaussian noise gives mse near 1") {
  DiffusionSchedule sched = DiffusionSchedule::linear(100);
  DenoiserConfig dcfg;
  dcfg.in_channels = 8;
  dcfg.latent_channels = 4;
  dcfg.width = 8;
  ParamStore p;
  register_denoiser(p, "dn", dcfg, Rng(17));
  register_condition(p, "cond", 4, Rng(18));
  for (double& v : p.values()) v = 0.0;  // zero model everywhere

  SiteSet sites = SiteSet::dense(8);  // 512 sites * 4 channels > 1e5 elements... use moments
  LatentGrid z0;
  z0.kind = LatentKind::dense;
  z0.resolution = 8;
  z0.channels = 4;
  z0.support = sites.sites;
  z0.values.assign(sites.count() * 4, 0.0);

  Rng rng(19);
  double total = 0;
  size_t rounds = 49;  // ~1e5 elements in total
  PointCloud p_in;
  p_in.positions = {{0, 0, 0}};
  for (size_t r = 0; r < rounds; ++r) {
    std::vector<double> eps(z0.values.size());
    for (double& e : eps) e = rng.normal();
    LossBreakdown lb = diffusion_loss(p, "dn", dcfg, z0, 50, eps, p_in, "cond", sched);
    total += lb.components["mse"] * double(eps.size());
  }
  double mse = total / double(rounds * z0.values.size());
  CHECK(mse == Catch::Approx(1.0).epsilon(0.02));
}

TEST_CASE("oracle model that returns eps zeroes the loss") {
  // with alpha_bar known, eps can be solved back from z_t; emulate by feeding
  // eps = 0 so z_t = sqrt(ab) z0 and a zero-output model predicts exactly it
  DiffusionSchedule sched = DiffusionSchedule::linear(100);
  DenoiserConfig dcfg;
  dcfg.in_channels = 6;
  dcfg.latent_channels = 2;
  dcfg.width = 6;
  ParamStore p;
  register_denoiser(p, "dn", dcfg, Rng(20));
  register_condition(p, "cond", 4, Rng(21));
  for (double& v : p.values()) v = 0.0;

  LatentGrid z0;
  z0.kind = LatentKind::dense;
  z0.resolution = 2;
  z0.channels = 2;
  z0.support = SiteSet::dense(2).sites;
  Rng rng(22);
  z0.values.resize(16);
  for (double& v : z0.values) v = rng.normal();
  std::vector<double> eps(16, 0.0);
  PointCloud p_in;
  p_in.positions = {{0, 0, 0}};
  LossBreakdown lb = diffusion_loss(p, "dn", dcfg, z0, 30, eps, p_in, "cond", sched);
  CHECK(lb.total == 0.0);
}

TEST_CASE("diffusion loss gradient matches finite differences") {
  DiffusionSchedule sched = DiffusionSchedule::linear(100);
  DenoiserConfig dcfg;
  dcfg.in_channels = 5;
  dcfg.latent_channels = 2;
  dcfg.width = 4;
  Rng seeds(23);
  for (int trial = 0; trial < 3; ++trial) {
    ParamStore p;
    register_denoiser(p, "dn", dcfg, Rng(seeds.u64()));
    register_condition(p, "cond", 3, Rng(seeds.u64()));
    // perturb the zero-initialized output conv so its gradient path is live
    {
      Rng jostle(seeds.u64());
      for (double& v : p.view("dn.c3.W")) v = jostle.normal(0, 0.05);
    }

    SiteSet sites = SiteSet::dense(2);
    LatentGrid z0;
    z0.kind = LatentKind::dense;
    z0.resolution = 2;
    z0.channels = 2;
    z0.support = sites.sites;
    Rng rng(seeds.u64());
    z0.values.resize(16);
    for (double& v : z0.values) v = rng.normal();
    std::vector<double> eps(16);
    for (double& e : eps) e = rng.normal();
    PointCloud p_in;
    p_in.positions = {{0.2, 0.2, 0.2}, {-0.5, 0.1, 0.7}};
    auto table = conv_table(sites, sites);

    auto run = [&](bool backward) {
      Tape t;
      Var cond = condition_rows_t(t, p, "cond", p_in, sites);
      Var loss = diffusion_loss_t(t, p, "dn", dcfg, z0, 40, eps, cond, sched, table);
      if (backward) t.backward(loss);
      return t.scalar(loss);
    };

    p.zero_grad();
    run(true);
    std::vector<double> analytic = p.grads();
    Rng pick(seeds.u64());
    for (int k = 0; k < 25; ++k) {
      size_t coord = size_t(pick.index(p.total()));
      double fd = finite_difference(p, coord, [&] { return run(false); }, 1e-5);
      double denom = std::max({1e-6, std::abs(fd), std::abs(analytic[coord])});
      INFO("trial " << trial << " coord " << coord);
      CHECK(std::abs(fd - analytic[coord]) / denom <= 1e-4);
    }
  }
}

TEST_CASE("condition encoding is deterministic, permutation invariant, zero off-support") {
  ParamStore p;
  register_condition(p, "cond", 4, Rng(24));
  Rng rng(25);
  PointCloud c;
  for (int i = 0; i < 50; ++i)
    c.positions.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});

  DenseGrid a = encode_condition(c, 4, p, "cond");
  DenseGrid b = encode_condition(c, 4, p, "cond");
  CHECK(a.features == b.features);

  PointCloud shuffled = c;
  Rng perm(26);
  perm.shuffle(shuffled.positions);
  DenseGrid s = encode_condition(shuffled, 4, p, "cond");
  CHECK(s.features == a.features);

  SparseVoxelGrid occ = voxelize(c, 4);
  SiteSet occ_sites = SiteSet::of(4, occ.indices);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      for (int k = 0; k < 4; ++k) {
        size_t cell = a.cell(i, j, k);
        bool occupied = occ_sites.row_of({i, j, k}) >= 0;
        for (uint32_t ch = 0; ch < a.channels; ++ch)
          CHECK((a.features[cell * a.channels + ch] != 0.0) == occupied);
      }

  PointCloud empty;
  CHECK_THROWS_AS(encode_condition(empty, 4, p, "cond"), error);
}

TEST_CASE("ancestral sampling with a zero oracle reproduces the analytic recursion") {
  DiffusionSchedule sched = DiffusionSchedule::linear(100);
  size_t n = 24;
  auto zero_model = [&](const std::vector<double>& z, int) { return std::vector<double>(z.size(), 0.0); };

  Rng rng_a = Rng(42).fork("x");
  std::vector<double> got = ancestral_sample(n, sched, rng_a, zero_model);

  // independent recursion with the same noise stream
  Rng rng_b = Rng(42).fork("x");
  std::vector<double> z(n);
  for (double& v : z) v = rng_b.normal();
  for (int t = sched.steps; t >= 1; --t) {
    double beta = sched.beta[t - 1];
    double sigma = t > 1 ? std::sqrt((1 - sched.alphabar(t - 1)) / (1 - sched.alphabar(t)) * beta) : 0;
    for (size_t i = 0; i < n; ++i) {
      z[i] = z[i] / std::sqrt(1 - beta);
      if (t > 1) z[i] += sigma * rng_b.normal();
    }
  }
  for (size_t i = 0; i < n; ++i) CHECK(got[i] == Catch::Approx(z[i]).margin(1e-9));
}

TEST_CASE("diffusion_sample is deterministic per seed") {
  DiffusionSchedule sched = DiffusionSchedule::linear(20);
  DenoiserConfig dcfg;
  dcfg.in_channels = 6;
  dcfg.latent_channels = 2;
  dcfg.width = 4;
  ParamStore p;
  register_denoiser(p, "dn", dcfg, Rng(27));
  register_condition(p, "cond", 4, Rng(28));
  SiteSet sites = SiteSet::dense(2);
  std::vector<double> cond(sites.count() * 4, 0.3);

  LatentGrid a = diffusion_sample(p, "dn", dcfg, sites, LatentKind::dense, cond, 4, sched, 7);
  LatentGrid b = diffusion_sample(p, "dn", dcfg, sites, LatentKind::dense, cond, 4, sched, 7);
  CHECK(a.values == b.values);
  LatentGrid c = diffusion_sample(p, "dn", dcfg, sites, LatentKind::dense, cond, 4, sched, 8);
  CHECK(a.values != c.values);
}

// ---------------------------------------------------------------------------
// prompt encoder + AR model
// ---------------------------------------------------------------------------

namespace {

ArConfig tiny_ar() {
  ArConfig cfg;
  cfg.vocab.coord_bins = 16;
  cfg.width = 16;
  cfg.blocks = 2;
  cfg.heads = 2;
  cfg.mlp_hidden = 24;
  cfg.prompt_len = 3;
  cfg.prompt_dim = 8;
  cfg.max_positions = 96;
  return cfg;
}

ParamStore ar_store(const ArConfig& cfg, uint64_t seed) {
  ParamStore p;
  p.init_seed = seed;
  register_prompt_encoder(p, "ep", cfg, Rng(seed).fork("ep"));
  register_ar_model(p, "ar", cfg, Rng(seed).fork("ar"));
  return p;
}

PointCloud prompt_cloud(size_t n, uint64_t seed) {
  Rng rng(seed);
  PointCloud c;
  for (size_t i = 0; i < n; ++i) {
    c.positions.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
    c.normals.push_back(normalized(rng.normal3()));
  }
  return c;
}

}  // namespace

TEST_CASE("prompt encoder emits exactly M embeddings for any input size") {
  ArConfig cfg = tiny_ar();
  ParamStore p = ar_store(cfg, 30);
  for (size_t n : {size_t(10), size_t(10000)}) {
    std::vector<double> e = encode_prompt(prompt_cloud(n, n), p, "ep", cfg);
    CHECK(e.size() == size_t(cfg.prompt_len) * size_t(cfg.width));
  }
}

TEST_CASE("prompt encoder is permutation invariant") {
  ArConfig cfg = tiny_ar();
  ParamStore p = ar_store(cfg, 31);
  PointCloud c = prompt_cloud(300, 32);
  PointCloud shuffled = c;
  Rng perm(33);
  std::vector<size_t> order(c.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  perm.shuffle(order);
  for (size_t i = 0; i < order.size(); ++i) {
    shuffled.positions[i] = c.positions[order[i]];
    shuffled.normals[i] = c.normals[order[i]];
  }
  std::vector<double> a = encode_prompt(c, p, "ep", cfg);
  std::vector<double> b = encode_prompt(shuffled, p, "ep", cfg);
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == Catch::Approx(b[i]).margin(1e-9));
}

TEST_CASE("prompt encoder requires normals") {
  ArConfig cfg = tiny_ar();
  ParamStore p = ar_store(cfg, 34);
  PointCloud c = prompt_cloud(10, 35);
  c.normals.clear();
  CHECK_THROWS_AS(encode_prompt(c, p, "ep", cfg), error);
}

TEST_CASE("uniform logits give ln V loss; oracle logits give near zero") {
  ArConfig cfg = tiny_ar();
  ParamStore p = ar_store(cfg, 36);  // zero head: logits uniform
  TokenSequence target;
  target.tokens = {cfg.vocab.bos(), 1, 2, 3, cfg.vocab.eos_stop()};
  std::vector<double> prompt(size_t(cfg.prompt_len) * size_t(cfg.width), 0.1);
  LossBreakdown uniform = ar_loss(p, "ar", cfg, prompt, target);
  CHECK(uniform.components["xent"] == Catch::Approx(std::log(double(cfg.vocab.size()))).margin(1e-9));

  // an oracle: logits one-hot on the target with a 30 gap
  Tape t;
  size_t L = target.tokens.size(), V = cfg.vocab.size();
  std::vector<double> logits(L * V, 0.0);
  for (size_t i = 0; i < L; ++i) logits[i * V + target.tokens[i]] = 30.0;
  Var lv = t.input(logits, L, V);
  Var loss = t.xent_rows_mean(lv, target.tokens);
  CHECK(t.scalar(loss) < 1e-9);
}

TEST_CASE("ar loss equals the sum of incremental per-step losses") {
  ArConfig cfg = tiny_ar();
  ParamStore p = ar_store(cfg, 37);
  Rng jostle(38);
  for (double& v : p.view("ar.head.W")) v = jostle.normal(0, 0.3);
  TokenSequence target;
  target.tokens = {cfg.vocab.bos(), 4, 9, 2, 7, cfg.vocab.face_sep(), 3, cfg.vocab.eos_stop()};
  PointCloud c = prompt_cloud(40, 39);
  std::vector<double> prompt = encode_prompt(c, p, "ep", cfg);

  double full = ar_loss(p, "ar", cfg, prompt, target).total * double(target.tokens.size());

  // prefix-by-prefix: logits at the last position only, summed over steps
  double incremental = 0;
  for (size_t i = 0; i < target.tokens.size(); ++i) {
    Tape t;
    Var pv = t.input(prompt, size_t(cfg.prompt_len), size_t(cfg.width));
    std::span<const uint32_t> ids(target.tokens.data(), i);
    Var hidden = ar_hidden_t(t, p, "ar", cfg, pv, ids);
    std::vector<int64_t> last = {int64_t(size_t(cfg.prompt_len) + i - 1)};
    Var logits = linear(t, p, "ar.head", t.gather_rows(hidden, last));
    std::vector<uint32_t> tgt = {target.tokens[i]};
    incremental += t.scalar(t.xent_rows_mean(logits, tgt));
  }
  CHECK(full == Catch::Approx(incremental).margin(1e-9));
}

TEST_CASE("ar loss gradient matches finite differences") {
  ArConfig cfg = tiny_ar();
  cfg.width = 8;
  cfg.heads = 2;
  cfg.mlp_hidden = 12;
  cfg.blocks = 1;
  Rng seeds(40);
  for (int trial = 0; trial < 3; ++trial) {
    ParamStore p = ar_store(cfg, seeds.u64());
    Rng jostle(seeds.u64());
    for (double& v : p.view("ar.head.W")) v = jostle.normal(0, 0.2);
    PointCloud c = prompt_cloud(12, seeds.u64());
    TokenSequence target;
    target.tokens = {cfg.vocab.bos(), 3, 1, 4, cfg.vocab.eos_stop()};

    auto run = [&](bool backward) {
      Tape t;
      Var prompt = encode_prompt_t(t, p, "ep", cfg, c);
      Var loss = ar_loss_t(t, p, "ar", cfg, prompt, target);
      if (backward) t.backward(loss);
      return t.scalar(loss);
    };

    p.zero_grad();
    run(true);
    std::vector<double> analytic = p.grads();
    Rng pick(seeds.u64());
    for (int k = 0; k < 25; ++k) {
      size_t coord = size_t(pick.index(p.total()));
      double fd = finite_difference(p, coord, [&] { return run(false); }, 1e-5);
      double denom = std::max({1e-6, std::abs(fd), std::abs(analytic[coord])});
      INFO("trial " << trial << " coord " << coord);
      CHECK(std::abs(fd - analytic[coord]) / denom <= 1e-4);
    }
  }
}

TEST_CASE("ar loss rejects out-of-vocabulary targets") {
  ArConfig cfg = tiny_ar();
  ParamStore p = ar_store(cfg, 41);
  TokenSequence target;
  target.tokens = {cfg.vocab.bos(), cfg.vocab.size() + 5, cfg.vocab.eos_stop()};
  std::vector<double> prompt(size_t(cfg.prompt_len) * size_t(cfg.width), 0.0);
  CHECK_THROWS_AS(ar_loss(p, "ar", cfg, prompt, target), error);
}

TEST_CASE("generation stops at max_len without a stop token and is seed stable") {
  ArConfig cfg = tiny_ar();
  ParamStore p = ar_store(cfg, 42);
  std::vector<double> prompt(size_t(cfg.prompt_len) * size_t(cfg.width), 0.05);

  TokenSequence one = ar_generate(p, "ar", cfg, prompt, 1);
  CHECK(one.tokens.size() == 1);
  DetokenizeResult r{};  // truncated output fails validation
  ValidationReport rep = validate_generated(one, r.mesh, cfg.vocab);
  CHECK_FALSE(rep.success);

  TokenSequence a = ar_generate(p, "ar", cfg, prompt, 24, DecodeStrategy::temperature, 1.0, 5);
  TokenSequence b = ar_generate(p, "ar", cfg, prompt, 24, DecodeStrategy::temperature, 1.0, 5);
  CHECK(a.tokens == b.tokens);

  TokenSequence g1 = ar_generate(p, "ar", cfg, prompt, 24);
  TokenSequence g2 = ar_generate(p, "ar", cfg, prompt, 24);
  CHECK(g1.tokens == g2.tokens);
}

// ---------------------------------------------------------------------------
// optimization sanity
// ---------------------------------------------------------------------------

TEST_CASE("one small sgd step decreases each loss on its own batch") {
  Rng seeds(43);
  int decreased = 0, total_trials = 100;
  for (int trial = 0; trial < total_trials; ++trial) {
    ParamStore p;
    Rng init(seeds.u64());
    p.add_uniform("W", {6, 6}, 0.8, init.fork("w"));
    p.add_uniform("b", {1, 6}, 0.5, init.fork("b"));
    std::vector<double> x(4 * 6), target(4 * 6);
    Rng data(seeds.u64());
    for (double& v : x) v = data.normal();
    for (double& v : target) v = data.normal();

    auto loss_value = [&] {
      Tape t;
      Var y = t.add_bias(t.matmul(t.input(x, 4, 6), t.param(p, "W", 6, 6)), t.param(p, "b", 1, 6));
      return t.scalar(t.mse_mean(t.relu(y), target));
    };
    double before;
    {
      Tape t;
      Var y = t.add_bias(t.matmul(t.input(x, 4, 6), t.param(p, "W", 6, 6)), t.param(p, "b", 1, 6));
      Var l = t.mse_mean(t.relu(y), target);
      before = t.scalar(l);
      p.zero_grad();
      t.backward(l);
    }
    p.sgd_step(1e-3, 0.9);
    if (loss_value() < before) ++decreased;
  }
  CHECK(decreased >= 99);
}
