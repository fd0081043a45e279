//
// Conditional autoregressive mesh model: a fixed-length prompt encoder (M
// learned queries cross-attending over per-point position+normal features)
// and a decoder-only transformer over the token vocabulary. Mesh positions
// are causally masked; prompt positions are attendable from everywhere.
//

#pragma once

#include "locadit/nets.hpp"
#include "locadit/pointcloud.hpp"
#include "locadit/tokenizer.hpp"

namespace locadit {

struct ArConfig {
  Vocabulary vocab;
  int width = 128;  // D
  int blocks = 2;
  int heads = 4;
  int mlp_hidden = 256;
  int prompt_len = 16;  // M
  int prompt_dim = 64;  // prompt encoder internal width
  int max_positions = 512;

  int head_dim() const { return width / heads; }
};

// ---------------------------------------------------------------------------
// prompt encoder
// ---------------------------------------------------------------------------

inline void register_prompt_encoder(ParamStore& p, const std::string& prefix, const ArConfig& cfg,
                                    const Rng& root) {
  p.add_uniform(prefix + ".queries", {cfg.prompt_len, cfg.prompt_dim}, 0.5, root);
  register_linear(p, prefix + ".key", 6, cfg.prompt_dim, root);
  register_linear(p, prefix + ".value", 6, cfg.prompt_dim, root);
  register_linear(p, prefix + ".out", cfg.prompt_dim, cfg.width, root);
}

/// [M x width] prompt embeddings; output length is M for any input size.
inline Var encode_prompt_t(Tape& t, ParamStore& p, const std::string& prefix, const ArConfig& cfg,
                           const PointCloud& cloud) {
  if (cloud.empty()) fail(errc::empty_cloud, "encode_prompt on empty cloud");
  if (!cloud.has_normals()) fail(errc::missing_normals, "encode_prompt needs normals");

  std::vector<double> feats(cloud.size() * 6);
  for (size_t i = 0; i < cloud.size(); ++i) {
    const Vec3 &pos = cloud.positions[i], &n = cloud.normals[i];
    double* row = feats.data() + i * 6;
    row[0] = pos.x; row[1] = pos.y; row[2] = pos.z;
    row[3] = n.x;   row[4] = n.y;   row[5] = n.z;
  }
  Var F = t.input(std::move(feats), cloud.size(), 6);
  Var K = linear(t, p, prefix + ".key", F);
  Var V = linear(t, p, prefix + ".value", F);
  Var Q = t.param(p, prefix + ".queries", size_t(cfg.prompt_len), size_t(cfg.prompt_dim));
  Var attn = t.softmax_rows(t.scale(t.matmul_nt(Q, K), 1.0 / std::sqrt(double(cfg.prompt_dim))));
  Var ctx = t.matmul(attn, V);  // [M x prompt_dim]
  return linear(t, p, prefix + ".out", ctx);
}

inline std::vector<double> encode_prompt(const PointCloud& cloud, ParamStore& params,
                                         const std::string& prefix, const ArConfig& cfg) {
  Tape t;
  Var e = encode_prompt_t(t, params, prefix, cfg, cloud);
  return {t.val(e).begin(), t.val(e).end()};
}

// ---------------------------------------------------------------------------
// transformer
// ---------------------------------------------------------------------------

inline void register_ar_model(ParamStore& p, const std::string& prefix, const ArConfig& cfg,
                              const Rng& root) {
  int D = cfg.width, V = int(cfg.vocab.size());
  p.add_uniform(prefix + ".tok", {V, D}, 0.05, root);
  p.add_uniform(prefix + ".pos", {cfg.max_positions, D}, 0.05, root);
  for (int b = 0; b < cfg.blocks; ++b) {
    std::string bp = prefix + ".blk" + std::to_string(b);
    p.add(bp + ".ln1.g", {1, D});
    p.add(bp + ".ln1.b", {1, D});
    for (double& v : p.view(bp + ".ln1.g")) v = 1.0;
    register_linear(p, bp + ".qkv", D, 3 * D, root);
    register_linear(p, bp + ".proj", D, D, root);
    p.add(bp + ".ln2.g", {1, D});
    p.add(bp + ".ln2.b", {1, D});
    for (double& v : p.view(bp + ".ln2.g")) v = 1.0;
    register_linear(p, bp + ".mlp1", D, cfg.mlp_hidden, root);
    register_linear(p, bp + ".mlp2", cfg.mlp_hidden, D, root);
  }
  p.add(prefix + ".lnf.g", {1, D});
  p.add(prefix + ".lnf.b", {1, D});
  for (double& v : p.view(prefix + ".lnf.g")) v = 1.0;
  // zero head: the untrained model emits uniform logits
  register_linear(p, prefix + ".head", D, V, root, /*zero=*/true);
}

namespace detail {

// prefix mask: key j is visible from query i iff j < M (prompt) or j <= i
inline std::vector<double> prefix_mask(size_t S, size_t M) {
  std::vector<double> mask(S * S, 0.0);
  for (size_t i = 0; i < S; ++i)
    for (size_t j = 0; j < S; ++j)
      if (j >= M && j > i) mask[i * S + j] = -1e30;
  return mask;
}

}  // namespace detail

/// Final hidden states [S x D] for prompt rows followed by token embeddings.
inline Var ar_hidden_t(Tape& t, ParamStore& p, const std::string& prefix, const ArConfig& cfg,
                       Var prompt, std::span<const uint32_t> ids) {
  size_t M = size_t(cfg.prompt_len), D = size_t(cfg.width);
  size_t S = M + ids.size();
  if (S > size_t(cfg.max_positions)) fail(errc::shape_mismatch, "sequence exceeds max positions");
  if (prompt.rows != M || prompt.cols != D) fail(errc::shape_mismatch, "prompt shape");
  for (uint32_t id : ids)
    if (id >= cfg.vocab.size()) fail(errc::vocabulary_overflow, "token id outside vocabulary");

  Var x = prompt;
  if (!ids.empty()) {
    std::vector<int64_t> tok_idx(ids.begin(), ids.end());
    Var tok = t.param(p, prefix + ".tok", cfg.vocab.size(), D);
    x = t.concat_rows(prompt, t.gather_rows(tok, tok_idx));
  }
  std::vector<int64_t> pos_idx(S);
  for (size_t i = 0; i < S; ++i) pos_idx[i] = int64_t(i);
  Var pos = t.param(p, prefix + ".pos", size_t(cfg.max_positions), D);
  x = t.add(x, t.gather_rows(pos, pos_idx));

  std::vector<double> mask = detail::prefix_mask(S, M);
  size_t H = size_t(cfg.heads), dh = size_t(cfg.head_dim());
  for (int b = 0; b < cfg.blocks; ++b) {
    std::string bp = prefix + ".blk" + std::to_string(b);
    Var ln1 = t.layernorm_rows(x, t.param(p, bp + ".ln1.g", 1, D), t.param(p, bp + ".ln1.b", 1, D));
    Var qkv = linear(t, p, bp + ".qkv", ln1);  // [S x 3D]
    Var heads_out;
    for (size_t h = 0; h < H; ++h) {
      Var Q = t.slice_cols(qkv, h * dh, (h + 1) * dh);
      Var K = t.slice_cols(qkv, D + h * dh, D + (h + 1) * dh);
      Var Vh = t.slice_cols(qkv, 2 * D + h * dh, 2 * D + (h + 1) * dh);
      Var scores = t.add_const(t.scale(t.matmul_nt(Q, K), 1.0 / std::sqrt(double(dh))), mask);
      Var ctx = t.matmul(t.softmax_rows(scores), Vh);
      heads_out = h == 0 ? ctx : t.concat_cols(heads_out, ctx);
    }
    x = t.add(x, linear(t, p, bp + ".proj", heads_out));
    Var ln2 = t.layernorm_rows(x, t.param(p, bp + ".ln2.g", 1, D), t.param(p, bp + ".ln2.b", 1, D));
    Var mlp = linear(t, p, bp + ".mlp2", t.relu(linear(t, p, bp + ".mlp1", ln2)));
    x = t.add(x, mlp);
  }
  return t.layernorm_rows(x, t.param(p, prefix + ".lnf.g", 1, D),
                          t.param(p, prefix + ".lnf.b", 1, D));
}

// Teacher-forced mean negative log-likelihood of the full mesh sequence.
// Position M-1 predicts token 0; position M+i predicts token i+1.
inline Var ar_loss_t(Tape& t, ParamStore& p, const std::string& prefix, const ArConfig& cfg,
                     Var prompt, const TokenSequence& target) {
  if (target.tokens.empty()) fail(errc::shape_mismatch, "empty target sequence");
  size_t L = target.tokens.size(), M = size_t(cfg.prompt_len);
  std::span<const uint32_t> inputs(target.tokens.data(), L - 1);
  Var hidden = ar_hidden_t(t, p, prefix, cfg, prompt, inputs);
  std::vector<int64_t> predict_rows(L);
  for (size_t i = 0; i < L; ++i) predict_rows[i] = int64_t(M - 1 + i);
  Var picked = t.gather_rows(hidden, predict_rows);
  Var logits = linear(t, p, prefix + ".head", picked);  // [L x V]
  return t.xent_rows_mean(logits, target.tokens);
}

inline LossBreakdown ar_loss(ParamStore& params, const std::string& prefix, const ArConfig& cfg,
                             const std::vector<double>& prompt, const TokenSequence& target) {
  Tape t;
  Var pv = t.input(prompt, size_t(cfg.prompt_len), size_t(cfg.width));
  Var loss = ar_loss_t(t, params, prefix, cfg, pv, target);
  LossBreakdown lb;
  lb.components = {{"xent", t.scalar(loss)}};
  lb.weights = {{"xent", 1.0}};
  lb.total = t.scalar(loss);
  return lb;
}

enum class DecodeStrategy { greedy, temperature };

// Emits tokens until EOS_STOP or max_len. Greedy is deterministic; the
// temperature path is deterministic per seed. Each step re-runs the forward
// pass on the grown sequence.
inline TokenSequence ar_generate(ParamStore& params, const std::string& prefix,
                                 const ArConfig& cfg, const std::vector<double>& prompt,
                                 size_t max_len, DecodeStrategy strategy = DecodeStrategy::greedy,
                                 double temperature = 1.0, uint64_t seed = 0) {
  TokenSequence seq;
  seq.kind = TokenKind::mesh;
  Rng rng = Rng(seed).fork("ar.generate");
  size_t budget = std::min(max_len, size_t(cfg.max_positions) - size_t(cfg.prompt_len));
  while (seq.tokens.size() < budget) {
    Tape t;
    Var pv = t.input(prompt, size_t(cfg.prompt_len), size_t(cfg.width));
    Var hidden = ar_hidden_t(t, params, prefix, cfg, pv, seq.tokens);
    std::vector<int64_t> last = {int64_t(cfg.prompt_len + seq.tokens.size() - 1)};
    Var logits = linear(t, params, prefix + ".head", t.gather_rows(hidden, last));
    auto lv = t.val(logits);

    uint32_t next = 0;
    if (strategy == DecodeStrategy::greedy) {
      for (uint32_t j = 1; j < cfg.vocab.size(); ++j)
        if (lv[j] > lv[next]) next = j;
    } else {
      double tau = std::max(temperature, 1e-6);
      double mx = lv[0];
      for (size_t j = 1; j < lv.size(); ++j) mx = std::max(mx, lv[j]);
      std::vector<double> cdf(lv.size());
      double run = 0;
      for (size_t j = 0; j < lv.size(); ++j) cdf[j] = (run += std::exp((lv[j] - mx) / tau));
      double u = rng.uniform() * run;
      next = uint32_t(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
      if (next >= lv.size()) next = uint32_t(lv.size() - 1);
    }
    seq.tokens.push_back(next);
    if (next == cfg.vocab.eos_stop()) break;
  }
  return seq;
}

}  // namespace locadit
