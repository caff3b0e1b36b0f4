#include "mtpfn/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "mtpfn/error.hpp"
#include "mtpfn/kernels.hpp"

namespace mtpfn {

namespace kn = kernels;

void ModelConfig::validate() const {
  if (embed_dim == 0 || n_blocks == 0 || n_heads == 0 || ff_dim == 0 || k_bins == 0 ||
      max_features == 0) {
    throw Error(ErrorCode::InvalidConfig, "model config counts must be >= 1");
  }
  if (embed_dim % n_heads != 0) {
    throw Error(ErrorCode::InvalidConfig, "embed_dim must be divisible by n_heads");
  }
  if (k_bins < 2) throw Error(ErrorCode::InvalidConfig, "k_bins must be >= 2");
}

ParamLayout::ParamLayout(const ModelConfig& config) {
  config.validate();
  const std::size_t e = config.embed_dim;
  const std::size_t f = config.ff_dim;
  x_w = add("embed.x_w", 1, e);
  x_b = add("embed.x_b", 1, e);
  y_w = add("embed.y_w", 1, e);
  y_b = add("embed.y_b", 1, e);
  query_token = add("embed.query_token", 1, e);
  auto add_attention = [&](const std::string& prefix) {
    AttentionOffsets o{};
    o.ln_g = add(prefix + ".ln_g", 1, e);
    o.ln_b = add(prefix + ".ln_b", 1, e);
    o.wq = add(prefix + ".wq", e, e);
    o.bq = add(prefix + ".bq", 1, e);
    o.wk = add(prefix + ".wk", e, e);
    o.bk = add(prefix + ".bk", 1, e);
    o.wv = add(prefix + ".wv", e, e);
    o.bv = add(prefix + ".bv", 1, e);
    o.wo = add(prefix + ".wo", e, e);
    o.bo = add(prefix + ".bo", 1, e);
    return o;
  };
  for (std::size_t b = 0; b < config.n_blocks; ++b) {
    const std::string p = "blocks." + std::to_string(b);
    BlockOffsets bo{};
    bo.col = add_attention(p + ".col");
    bo.row = add_attention(p + ".row");
    bo.ff_ln_g = add(p + ".ff.ln_g", 1, e);
    bo.ff_ln_b = add(p + ".ff.ln_b", 1, e);
    bo.w1 = add(p + ".ff.w1", e, f);
    bo.b1 = add(p + ".ff.b1", 1, f);
    bo.w2 = add(p + ".ff.w2", f, e);
    bo.b2 = add(p + ".ff.b2", 1, e);
    blocks.push_back(bo);
  }
  out_ln_g = add("out.ln_g", 1, e);
  out_ln_b = add("out.ln_b", 1, e);
  head_w = add("head.w", e, config.k_bins);
  head_b = add("head.b", 1, config.k_bins);
}

std::size_t ParamLayout::add(std::string name, std::size_t rows, std::size_t cols) {
  const std::size_t off = total_;
  entries_.push_back({std::move(name), off, rows, cols});
  total_ += rows * cols;
  return off;
}

const ParamEntry& ParamLayout::entry(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e;
  }
  throw Error(ErrorCode::InvalidConfig, "unknown parameter '" + std::string(name) + "'");
}

std::span<double> ModelParams::tensor(std::string_view name) {
  const auto& e = layout.entry(name);
  return {values.data() + e.offset, e.size()};
}

std::span<const double> ModelParams::tensor(std::string_view name) const {
  const auto& e = layout.entry(name);
  return {values.data() + e.offset, e.size()};
}

void ContextBatch::validate(const ModelConfig& config) const {
  if (x_train.rows == 0) throw Error(ErrorCode::ShapeMismatch, "context needs at least one row");
  if (y_train.size() != x_train.rows) {
    throw Error(ErrorCode::ShapeMismatch, "y_train length differs from x_train rows");
  }
  if (x_query.rows > 0 && x_query.cols != x_train.cols) {
    throw Error(ErrorCode::ShapeMismatch, "x_query has a different feature count");
  }
  if (x_train.cols == 0) throw Error(ErrorCode::ShapeMismatch, "batch has no features");
  if (x_train.cols > config.max_features) {
    throw Error(ErrorCode::FeatureCountExceedsMax,
                std::to_string(x_train.cols) + " features > max_features " +
                    std::to_string(config.max_features));
  }
  auto finite = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double z) { return std::isfinite(z); });
  };
  if (!finite(x_train.data) || !finite(y_train) || !finite(x_query.data)) {
    throw Error(ErrorCode::NonFiniteInput, "batch contains non-finite values");
  }
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  ModelParams params(config);
  std::mt19937_64 rng(seed);
  for (const auto& e : params.layout.entries()) {
    double* w = params.values.data() + e.offset;
    const std::string& n = e.name;
    const bool is_ln_gain = n.ends_with(".ln_g");
    const bool is_ln_bias = n.ends_with(".ln_b");
    const bool is_bias = n.ends_with(".bq") || n.ends_with(".bk") || n.ends_with(".bv") ||
                         n.ends_with(".bo") || n.ends_with(".b1") || n.ends_with(".b2") ||
                         n == "embed.x_b" || n == "embed.y_b" || n == "head.b";
    if (is_ln_gain) {
      std::fill(w, w + e.size(), 1.0);
    } else if (is_ln_bias || is_bias || n == "head.w") {
      std::fill(w, w + e.size(), 0.0);
    } else {
      // Vectors (embedders, query token) have fan-in 1.
      const double bound = 1.0 / std::sqrt(static_cast<double>(e.rows));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (std::size_t i = 0; i < e.size(); ++i) w[i] = dist(rng);
    }
  }
  return params;
}

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

double gelu_grad(double x) {
  const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

void layer_norm_forward(const Matrix& x, const double* gain, const double* bias, Matrix& xhat,
                        std::vector<double>& rstd, Matrix& u) {
  const std::size_t n = x.rows;
  const std::size_t e = x.cols;
  xhat = Matrix(n, e);
  u = Matrix(n, e);
  rstd.assign(n, 0.0);
  const double inv_e = 1.0 / static_cast<double>(e);
  for (std::size_t t = 0; t < n; ++t) {
    const double* xr = x.data.data() + t * e;
    double mean = 0.0;
    for (std::size_t i = 0; i < e; ++i) mean += xr[i];
    mean *= inv_e;
    double var = 0.0;
    for (std::size_t i = 0; i < e; ++i) {
      const double d = xr[i] - mean;
      var += d * d;
    }
    var *= inv_e;
    const double rs = 1.0 / std::sqrt(var + kLnEps);
    rstd[t] = rs;
    double* xh = xhat.data.data() + t * e;
    double* ur = u.data.data() + t * e;
    for (std::size_t i = 0; i < e; ++i) {
      xh[i] = (xr[i] - mean) * rs;
      ur[i] = gain[i] * xh[i] + bias[i];
    }
  }
}

// dx += d LN / dx given du; accumulates gain/bias gradients.
void layer_norm_backward(const Matrix& du, const Matrix& xhat, const std::vector<double>& rstd,
                         const double* gain, double* dgain, double* dbias, Matrix& dx) {
  const std::size_t n = du.rows;
  const std::size_t e = du.cols;
  const double inv_e = 1.0 / static_cast<double>(e);
  std::vector<double> dxhat(e);
  for (std::size_t t = 0; t < n; ++t) {
    const double* dur = du.data.data() + t * e;
    const double* xh = xhat.data.data() + t * e;
    double m1 = 0.0;
    double m2 = 0.0;
    for (std::size_t i = 0; i < e; ++i) {
      dgain[i] += dur[i] * xh[i];
      dbias[i] += dur[i];
      dxhat[i] = dur[i] * gain[i];
      m1 += dxhat[i];
      m2 += dxhat[i] * xh[i];
    }
    m1 *= inv_e;
    m2 *= inv_e;
    double* dxr = dx.data.data() + t * e;
    const double rs = rstd[t];
    for (std::size_t i = 0; i < e; ++i) dxr[i] += rs * (dxhat[i] - m1 - xh[i] * m2);
  }
}

// y = x * W + b, W stored in x out.
void linear_forward(const Matrix& x, const double* w, const double* b, std::size_t out, Matrix& y) {
  y = Matrix(x.rows, out);
  for (std::size_t t = 0; t < x.rows; ++t) std::copy(b, b + out, y.data.data() + t * out);
  kn::gemm_nn(x.rows, out, x.cols, x.data.data(), x.cols, w, out, y.data.data(), out, true);
}

// Accumulates dW, db and (optionally) dx for y = x * W + b.
void linear_backward(const Matrix& x, const double* w, const Matrix& dy, double* dw, double* db,
                     Matrix* dx, bool accumulate_dx) {
  const std::size_t in = x.cols;
  const std::size_t out = dy.cols;
  kn::gemm_tn(in, out, x.rows, x.data.data(), in, dy.data.data(), out, dw, out, true);
  for (std::size_t t = 0; t < dy.rows; ++t) {
    const double* r = dy.data.data() + t * out;
    for (std::size_t j = 0; j < out; ++j) db[j] += r[j];
  }
  if (dx != nullptr) {
    if (!accumulate_dx) *dx = Matrix(x.rows, in);
    kn::gemm_nt(x.rows, in, out, dy.data.data(), out, w, out, dx->data.data(), in, true);
  }
}

// Which tokens attend to which. Group g has members at token indices
// g * group_stride + i * member_stride for i < n_members. Members i < n_keys
// attend to keys 0..n_keys-1; members i >= n_keys attend to those keys and to
// themselves.
struct AttentionGeometry {
  std::size_t n_groups;
  std::size_t group_stride;
  std::size_t member_stride;
  std::size_t n_members;
  std::size_t n_keys;

  std::size_t probs_block() const { return n_members * (n_keys + 1); }
};

struct Dims {
  std::size_t e, h, dh, f, k;
  std::size_t ntr, nq, rows, cols, tokens;
};

AttentionGeometry column_geometry(const Dims& d) {
  return {d.rows, d.cols, 1, d.cols, d.cols};
}

AttentionGeometry row_geometry(const Dims& d) {
  return {d.cols, 1, d.cols, d.rows, d.ntr};
}

void attention_core_forward(const AttentionGeometry& geo, const Dims& d, const Matrix& q,
                            const Matrix& k, const Matrix& v, Matrix& mixed,
                            std::vector<double>* probs_out) {
  const std::size_t nk = geo.n_keys;
  const std::size_t ldp = nk + 1;
  const std::size_t ld = geo.member_stride * d.e;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d.dh));
  std::vector<double> scratch;
  if (probs_out != nullptr) {
    probs_out->assign(geo.n_groups * d.h * geo.probs_block(), 0.0);
  } else {
    scratch.assign(geo.probs_block(), 0.0);
  }
  mixed = Matrix(q.rows, q.cols);
  for (std::size_t g = 0; g < geo.n_groups; ++g) {
    const std::size_t base = g * geo.group_stride * d.e;
    for (std::size_t hh = 0; hh < d.h; ++hh) {
      const std::size_t off = base + hh * d.dh;
      const double* qg = q.data.data() + off;
      const double* kg = k.data.data() + off;
      const double* vg = v.data.data() + off;
      double* og = mixed.data.data() + off;
      double* p = probs_out != nullptr ? probs_out->data() + (g * d.h + hh) * geo.probs_block()
                                       : scratch.data();
      kn::gemm_nt(geo.n_members, nk, d.dh, qg, ld, kg, ld, p, ldp, false);
      for (std::size_t i = 0; i < geo.n_members; ++i) {
        double* pr = p + i * ldp;
        const bool self = i >= nk;
        pr[nk] = self ? kn::dot(d.dh, qg + i * ld, kg + i * ld) : 0.0;
        kn::softmax(self ? nk + 1 : nk, scale, pr);
      }
      kn::gemm_nn(geo.n_members, d.dh, nk, p, ldp, vg, ld, og, ld, false);
      for (std::size_t i = nk; i < geo.n_members; ++i) {
        kn::axpy(d.dh, p[i * ldp + nk], vg + i * ld, og + i * ld);
      }
    }
  }
}

// Accumulates into dq, dk, dv (pre-sized, zeroed by the caller).
void attention_core_backward(const AttentionGeometry& geo, const Dims& d, const Matrix& q,
                             const Matrix& k, const Matrix& v, const std::vector<double>& probs,
                             const Matrix& dmixed, Matrix& dq, Matrix& dk, Matrix& dv) {
  const std::size_t nk = geo.n_keys;
  const std::size_t ldp = nk + 1;
  const std::size_t ld = geo.member_stride * d.e;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d.dh));
  std::vector<double> ds(geo.probs_block());
  for (std::size_t g = 0; g < geo.n_groups; ++g) {
    const std::size_t base = g * geo.group_stride * d.e;
    for (std::size_t hh = 0; hh < d.h; ++hh) {
      const std::size_t off = base + hh * d.dh;
      const double* qg = q.data.data() + off;
      const double* kg = k.data.data() + off;
      const double* vg = v.data.data() + off;
      const double* dog = dmixed.data.data() + off;
      double* dqg = dq.data.data() + off;
      double* dkg = dk.data.data() + off;
      double* dvg = dv.data.data() + off;
      const double* p = probs.data() + (g * d.h + hh) * geo.probs_block();

      // dP = dOut * V^T
      kn::gemm_nt(geo.n_members, nk, d.dh, dog, ld, vg, ld, ds.data(), ldp, false);
      // dV += P^T * dOut
      kn::gemm_tn(nk, d.dh, geo.n_members, p, ldp, dog, ld, dvg, ld, true);
      for (std::size_t i = 0; i < geo.n_members; ++i) {
        const double* pr = p + i * ldp;
        double* dr = ds.data() + i * ldp;
        const bool self = i >= nk;
        if (self) {
          dr[nk] = kn::dot(d.dh, dog + i * ld, vg + i * ld);
          kn::axpy(d.dh, pr[nk], dog + i * ld, dvg + i * ld);
        } else {
          dr[nk] = 0.0;
        }
        const std::size_t width = self ? nk + 1 : nk;
        double s = 0.0;
        for (std::size_t j = 0; j < width; ++j) s += pr[j] * dr[j];
        for (std::size_t j = 0; j < width; ++j) dr[j] = pr[j] * (dr[j] - s) * scale;
      }
      // dQ += dS * K,  dK += dS^T * Q
      kn::gemm_nn(geo.n_members, d.dh, nk, ds.data(), ldp, kg, ld, dqg, ld, true);
      kn::gemm_tn(nk, d.dh, geo.n_members, ds.data(), ldp, qg, ld, dkg, ld, true);
      for (std::size_t i = nk; i < geo.n_members; ++i) {
        const double dself = ds[i * ldp + nk];
        kn::axpy(d.dh, dself, kg + i * ld, dqg + i * ld);
        kn::axpy(d.dh, dself, qg + i * ld, dkg + i * ld);
      }
    }
  }
}

// h += W_o * attention(LN(h)) + b_o
void attention_forward(const double* params, const AttentionOffsets& o,
                       const AttentionGeometry& geo, const Dims& d, Matrix& h,
                       ForwardCache::Attention& c, bool keep_probs) {
  layer_norm_forward(h, params + o.ln_g, params + o.ln_b, c.xhat, c.rstd, c.u);
  linear_forward(c.u, params + o.wq, params + o.bq, d.e, c.q);
  linear_forward(c.u, params + o.wk, params + o.bk, d.e, c.k);
  linear_forward(c.u, params + o.wv, params + o.bv, d.e, c.v);
  attention_core_forward(geo, d, c.q, c.k, c.v, c.mixed, keep_probs ? &c.probs : nullptr);
  // Residual: h += mixed * Wo + bo
  const double* bo = params + o.bo;
  for (std::size_t t = 0; t < h.rows; ++t) {
    double* hr = h.data.data() + t * d.e;
    for (std::size_t i = 0; i < d.e; ++i) hr[i] += bo[i];
  }
  kn::gemm_nn(h.rows, d.e, d.e, c.mixed.data.data(), d.e, params + o.wo, d.e, h.data.data(), d.e,
              true);
}

void attention_backward(const double* params, double* grads, const AttentionOffsets& o,
                        const AttentionGeometry& geo, const Dims& d,
                        const ForwardCache::Attention& c, Matrix& dh) {
  // dh is the gradient of the residual output; it passes through unchanged
  // and additionally through the attention branch.
  Matrix dmixed;
  linear_backward(c.mixed, params + o.wo, dh, grads + o.wo, grads + o.bo, &dmixed, false);
  Matrix dq(dh.rows, d.e), dk(dh.rows, d.e), dv(dh.rows, d.e);
  attention_core_backward(geo, d, c.q, c.k, c.v, c.probs, dmixed, dq, dk, dv);
  Matrix du(dh.rows, d.e);
  linear_backward(c.u, params + o.wq, dq, grads + o.wq, grads + o.bq, &du, true);
  linear_backward(c.u, params + o.wk, dk, grads + o.wk, grads + o.bk, &du, true);
  linear_backward(c.u, params + o.wv, dv, grads + o.wv, grads + o.bv, &du, true);
  layer_norm_backward(du, c.xhat, c.rstd, params + o.ln_g, grads + o.ln_g, grads + o.ln_b, dh);
}

void feed_forward(const double* params, const BlockOffsets& o, const Dims& d, Matrix& h,
                  ForwardCache::Block& c) {
  layer_norm_forward(h, params + o.ff_ln_g, params + o.ff_ln_b, c.ff_xhat, c.ff_rstd, c.ff_u);
  linear_forward(c.ff_u, params + o.w1, params + o.b1, d.f, c.ff_pre);
  c.ff_act = Matrix(c.ff_pre.rows, d.f);
  for (std::size_t i = 0; i < c.ff_pre.data.size(); ++i) c.ff_act.data[i] = gelu(c.ff_pre.data[i]);
  const double* b2 = params + o.b2;
  for (std::size_t t = 0; t < h.rows; ++t) {
    double* hr = h.data.data() + t * d.e;
    for (std::size_t i = 0; i < d.e; ++i) hr[i] += b2[i];
  }
  kn::gemm_nn(h.rows, d.e, d.f, c.ff_act.data.data(), d.f, params + o.w2, d.e, h.data.data(), d.e,
              true);
}

void feed_forward_backward(const double* params, double* grads, const BlockOffsets& o,
                           const ForwardCache::Block& c, Matrix& dh) {
  Matrix dact;
  linear_backward(c.ff_act, params + o.w2, dh, grads + o.w2, grads + o.b2, &dact, false);
  for (std::size_t i = 0; i < dact.data.size(); ++i) dact.data[i] *= gelu_grad(c.ff_pre.data[i]);
  Matrix du;
  linear_backward(c.ff_u, params + o.w1, dact, grads + o.w1, grads + o.b1, &du, false);
  layer_norm_backward(du, c.ff_xhat, c.ff_rstd, params + o.ff_ln_g, grads + o.ff_ln_g,
                      grads + o.ff_ln_b, dh);
}

Dims make_dims(const ModelConfig& cfg, const ContextBatch& batch) {
  Dims d{};
  d.e = cfg.embed_dim;
  d.h = cfg.n_heads;
  d.dh = cfg.head_dim();
  d.f = cfg.ff_dim;
  d.k = cfg.k_bins;
  d.ntr = batch.n_train();
  d.nq = batch.n_query();
  d.rows = d.ntr + d.nq;
  d.cols = batch.n_features() + 1;
  d.tokens = d.rows * d.cols;
  return d;
}

const double* row_features(const ContextBatch& batch, std::size_t r) {
  const std::size_t ntr = batch.n_train();
  return r < ntr ? batch.x_train.data.data() + r * batch.x_train.cols
                 : batch.x_query.data.data() + (r - ntr) * batch.x_query.cols;
}

Matrix embed(const double* params, const ParamLayout& lay, const Dims& d,
             const ContextBatch& batch) {
  Matrix h(d.tokens, d.e);
  const std::size_t nf = d.cols - 1;
  const double* xw = params + lay.x_w;
  const double* xb = params + lay.x_b;
  const double* yw = params + lay.y_w;
  const double* yb = params + lay.y_b;
  const double* qt = params + lay.query_token;
  for (std::size_t r = 0; r < d.rows; ++r) {
    const double* xr = row_features(batch, r);
    for (std::size_t j = 0; j < nf; ++j) {
      double* ht = h.data.data() + (r * d.cols + j) * d.e;
      for (std::size_t i = 0; i < d.e; ++i) ht[i] = xr[j] * xw[i] + xb[i];
    }
    double* ht = h.data.data() + (r * d.cols + nf) * d.e;
    if (r < d.ntr) {
      const double y = batch.y_train[r];
      for (std::size_t i = 0; i < d.e; ++i) ht[i] = y * yw[i] + yb[i];
    } else {
      std::copy(qt, qt + d.e, ht);
    }
  }
  return h;
}

}  // namespace

Matrix forward(const ModelParams& params, const ContextBatch& batch, ForwardCache* cache) {
  const ModelConfig& cfg = params.config;
  batch.validate(cfg);
  const Dims d = make_dims(cfg, batch);
  const double* p = params.values.data();
  const ParamLayout& lay = params.layout;

  Matrix h = embed(p, lay, d, batch);
  const AttentionGeometry col = column_geometry(d);
  const AttentionGeometry row = row_geometry(d);

  ForwardCache local;
  ForwardCache& c = cache != nullptr ? *cache : local;
  c.n_train = d.ntr;
  c.n_query = d.nq;
  c.n_cols = d.cols;
  c.blocks.assign(cfg.n_blocks, {});
  const bool keep = cache != nullptr;
  for (std::size_t b = 0; b < cfg.n_blocks; ++b) {
    ForwardCache::Block& bc = c.blocks[b];
    if (keep) bc.input = h;
    attention_forward(p, lay.blocks[b].col, col, d, h, bc.col, keep);
    attention_forward(p, lay.blocks[b].row, row, d, h, bc.row, keep);
    feed_forward(p, lay.blocks[b], d, h, bc);
    if (!keep) bc = {};
  }

  Matrix targets(d.nq, d.e);
  for (std::size_t i = 0; i < d.nq; ++i) {
    const std::size_t t = (d.ntr + i) * d.cols + (d.cols - 1);
    std::copy_n(h.data.data() + t * d.e, d.e, targets.data.data() + i * d.e);
  }
  layer_norm_forward(targets, p + lay.out_ln_g, p + lay.out_ln_b, c.out_xhat, c.out_rstd, c.out_u);
  Matrix logits;
  linear_forward(c.out_u, p + lay.head_w, p + lay.head_b, d.k, logits);
  if (keep) c.final_states = std::move(h);
  return logits;
}

ParamGrads backward(const ModelParams& params, const ContextBatch& batch,
                    const ForwardCache& cache, const Matrix& dlogits) {
  const ModelConfig& cfg = params.config;
  const Dims d = make_dims(cfg, batch);
  if (dlogits.rows != d.nq || dlogits.cols != d.k) {
    throw Error(ErrorCode::ShapeMismatch, "dlogits must be n_query x k_bins");
  }
  if (cache.blocks.size() != cfg.n_blocks || cache.n_train != d.ntr || cache.n_query != d.nq) {
    throw Error(ErrorCode::ShapeMismatch, "forward cache does not match the batch");
  }
  const double* p = params.values.data();
  const ParamLayout& lay = params.layout;
  ParamGrads grads(params.values.size(), 0.0);
  double* g = grads.data();

  Matrix dtargets;
  linear_backward(cache.out_u, p + lay.head_w, dlogits, g + lay.head_w, g + lay.head_b, &dtargets,
                  false);
  Matrix dtoken(d.nq, d.e);
  layer_norm_backward(dtargets, cache.out_xhat, cache.out_rstd, p + lay.out_ln_g, g + lay.out_ln_g,
                      g + lay.out_ln_b, dtoken);
  Matrix dh(d.tokens, d.e);
  for (std::size_t i = 0; i < d.nq; ++i) {
    const std::size_t t = (d.ntr + i) * d.cols + (d.cols - 1);
    std::copy_n(dtoken.data.data() + i * d.e, d.e, dh.data.data() + t * d.e);
  }

  const AttentionGeometry col = column_geometry(d);
  const AttentionGeometry row = row_geometry(d);
  for (std::size_t b = cfg.n_blocks; b-- > 0;) {
    const ForwardCache::Block& bc = cache.blocks[b];
    feed_forward_backward(p, g, lay.blocks[b], bc, dh);
    attention_backward(p, g, lay.blocks[b].row, row, d, bc.row, dh);
    attention_backward(p, g, lay.blocks[b].col, col, d, bc.col, dh);
  }

  const std::size_t nf = d.cols - 1;
  double* gxw = g + lay.x_w;
  double* gxb = g + lay.x_b;
  double* gyw = g + lay.y_w;
  double* gyb = g + lay.y_b;
  double* gqt = g + lay.query_token;
  for (std::size_t r = 0; r < d.rows; ++r) {
    const double* xr = row_features(batch, r);
    for (std::size_t j = 0; j < nf; ++j) {
      const double* dt = dh.data.data() + (r * d.cols + j) * d.e;
      for (std::size_t i = 0; i < d.e; ++i) {
        gxw[i] += xr[j] * dt[i];
        gxb[i] += dt[i];
      }
    }
    const double* dt = dh.data.data() + (r * d.cols + nf) * d.e;
    if (r < d.ntr) {
      const double y = batch.y_train[r];
      for (std::size_t i = 0; i < d.e; ++i) {
        gyw[i] += y * dt[i];
        gyb[i] += dt[i];
      }
    } else {
      for (std::size_t i = 0; i < d.e; ++i) gqt[i] += dt[i];
    }
  }
  return grads;
}

ParamGrads backward(const ModelParams& params, const ContextBatch& batch, const Matrix& dlogits) {
  ForwardCache cache;
  forward(params, batch, &cache);
  return backward(params, batch, cache, dlogits);
}

}  // namespace mtpfn
