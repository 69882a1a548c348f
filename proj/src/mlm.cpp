#include "csc/mlm.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "csc/error.hpp"
#include "csc/rng.hpp"

namespace csc {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_prime(double x) {
  return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) +
         x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

// C[m x n] = (or +=) A[m x k] * B[k x n], all row-major. The k-major inner
// loop keeps every stream unit-stride so the compiler can vectorize it
// without reassociating reductions; summation order is fixed, which keeps
// results bitwise reproducible.
void matmul(const double* __restrict a, const double* __restrict b,
            double* __restrict c, std::size_t m, std::size_t k, std::size_t n,
            bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[m x n] += A^T * B with A[t x m], B[t x n].
void matmul_atb(const double* __restrict a, const double* __restrict b,
                double* __restrict c, std::size_t t, std::size_t m,
                std::size_t n) {
  for (std::size_t r = 0; r < t; ++r) {
    const double* ar = a + r * m;
    const double* br = b + r * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = ar[i];
      double* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * br[j];
    }
  }
}

void colsum_acc(const double* __restrict a, double* __restrict out,
                std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* ar = a + r * cols;
    for (std::size_t j = 0; j < cols; ++j) out[j] += ar[j];
  }
}

void transpose(const double* __restrict a, double* __restrict out,
               std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < cols; ++j) out[j * rows + r] = a[r * cols + j];
}

// y = gamma * (x - mu) / sqrt(var + eps) + beta, per row; caches the
// normalized rows and inverse std-devs for the backward pass.
void layer_norm_forward(const double* __restrict x, const double* gamma,
                        const double* beta, double* __restrict y,
                        double* __restrict normed, double* __restrict inv_std,
                        std::size_t rows, std::size_t d) {
  for (std::size_t t = 0; t < rows; ++t) {
    const double* xt = x + t * d;
    double mu = 0.0;
    for (std::size_t k = 0; k < d; ++k) mu += xt[k];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      const double c = xt[k] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + kLnEps);
    inv_std[t] = is;
    double* nt = normed + t * d;
    double* yt = y + t * d;
    for (std::size_t k = 0; k < d; ++k) {
      nt[k] = (xt[k] - mu) * is;
      yt[k] = gamma[k] * nt[k] + beta[k];
    }
  }
}

// Accumulates dx, dgamma, dbeta given upstream dy and the cached forward.
void layer_norm_backward(const double* __restrict dy,
                         const double* __restrict normed,
                         const double* __restrict inv_std, const double* gamma,
                         double* __restrict dx, double* __restrict dgamma,
                         double* __restrict dbeta, std::size_t rows,
                         std::size_t d, std::vector<double>& scratch) {
  scratch.resize(d);
  double* g = scratch.data();
  for (std::size_t t = 0; t < rows; ++t) {
    const double* dyt = dy + t * d;
    const double* nt = normed + t * d;
    double* dxt = dx + t * d;
    double m1 = 0.0, m2 = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      g[k] = dyt[k] * gamma[k];
      m1 += g[k];
      m2 += g[k] * nt[k];
      dgamma[k] += dyt[k] * nt[k];
      dbeta[k] += dyt[k];
    }
    m1 /= static_cast<double>(d);
    m2 /= static_cast<double>(d);
    const double is = inv_std[t];
    for (std::size_t k = 0; k < d; ++k)
      dxt[k] += is * (g[k] - m1 - nt[k] * m2);
  }
}

struct LayerParams {
  const double *ln1_gamma, *ln1_beta;
  const double *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
  const double *ln2_gamma, *ln2_beta;
  const double *w1, *b1, *w2, *b2;
};

struct LayerGrads {
  double *ln1_gamma, *ln1_beta;
  double *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
  double *ln2_gamma, *ln2_beta;
  double *w1, *b1, *w2, *b2;
};

std::string layer_prefix(int i) { return "layer" + std::to_string(i) + "."; }

struct LayerCache {
  std::vector<double> normed1, ln1_out;  // [T x d]
  std::vector<double> inv_std1;          // [T]
  std::vector<double> q, k, v, ctx;      // [T x d]
  std::vector<double> attn;              // packed softmax rows per example/head
  std::vector<double> r1;                // [T x d] after attention residual
  std::vector<double> normed2, ln2_out;  // [T x d]
  std::vector<double> inv_std2;          // [T]
  std::vector<double> f1, act;           // [T x ff]
  std::vector<double> out;               // [T x d] layer output
};

struct Workspace {
  std::vector<double> h0;  // [T x d]
  std::vector<LayerCache> layers;
  std::vector<double> normed_f, hf;  // [T x d]
  std::vector<double> inv_std_f;     // [T]
  std::vector<double> probs;         // [T x V]
  std::vector<std::size_t> attn_offsets;  // per example, into LayerCache.attn
  std::size_t attn_total = 0;
};

}  // namespace

void MlmConfig::validate() const {
  if (vocab_size < 1) throw CscError("vocab_size must be positive");
  if (dim < 1 || layers < 1 || heads < 1 || ff_dim < 1 || max_len < 1)
    throw CscError("model dimensions must be positive");
  if (dim % heads != 0)
    throw CscError("model_dim must be divisible by num_heads");
}

ParamLayout ParamLayout::make(const MlmConfig& c) {
  ParamLayout layout;
  const auto d = static_cast<std::size_t>(c.dim);
  const auto f = static_cast<std::size_t>(c.ff_dim);
  auto add = [&layout](const std::string& name, std::size_t size) {
    layout.spans.emplace(name, std::make_pair(layout.total, size));
    layout.segments.emplace_back(name, size);
    layout.total += size;
  };
  add("tok_emb", static_cast<std::size_t>(c.vocab_size) * d);
  add("pos_emb", static_cast<std::size_t>(c.max_len) * d);
  for (int i = 0; i < c.layers; ++i) {
    const std::string p = layer_prefix(i);
    add(p + "ln1.gamma", d);
    add(p + "ln1.beta", d);
    add(p + "attn.wq", d * d);
    add(p + "attn.bq", d);
    add(p + "attn.wk", d * d);
    add(p + "attn.bk", d);
    add(p + "attn.wv", d * d);
    add(p + "attn.bv", d);
    add(p + "attn.wo", d * d);
    add(p + "attn.bo", d);
    add(p + "ln2.gamma", d);
    add(p + "ln2.beta", d);
    add(p + "ff.w1", d * f);
    add(p + "ff.b1", f);
    add(p + "ff.w2", f * d);
    add(p + "ff.b2", d);
  }
  add("final_ln.gamma", d);
  add("final_ln.beta", d);
  add("out_bias", static_cast<std::size_t>(c.vocab_size));
  return layout;
}

std::pair<std::size_t, std::size_t> ParamLayout::span(
    const std::string& name) const {
  auto it = spans.find(name);
  if (it == spans.end()) throw CscError("unknown parameter segment: " + name);
  return it->second;
}

void PackedBatch::add(const Sentence& x, const Sentence& y,
                      const std::vector<std::uint8_t>& supervised_mask) {
  if (x.size() == 0) throw CscError("empty sentence");
  if (x.size() != y.size())
    throw CscError("misaligned example: source and target lengths differ");
  if (supervised_mask.size() != static_cast<std::size_t>(x.size()))
    throw CscError("supervised mask length differs from sentence length");
  tokens.insert(tokens.end(), x.ids.begin(), x.ids.end());
  targets.insert(targets.end(), y.ids.begin(), y.ids.end());
  supervised.insert(supervised.end(), supervised_mask.begin(),
                    supervised_mask.end());
  offsets.push_back(tokens.size());
}

void PackedBatch::add_all_positions(const Sentence& x, const Sentence& y) {
  add(x, y, std::vector<std::uint8_t>(x.size(), 1));
}

MlmModel::MlmModel(const MlmConfig& config)
    : config_(config), layout_(ParamLayout::make(config)) {
  config_.validate();
  params_.assign(layout_.total, 0.0);
  Rng rng(config_.seed);
  for (const auto& [name, size] : layout_.segments) {
    double* p = params_.data() + layout_.span(name).first;
    const bool is_gain = name.size() >= 5 &&
                         name.compare(name.size() - 5, 5, "gamma") == 0;
    const bool is_bias =
        name == "out_bias" ||
        (name.size() >= 4 && name.compare(name.size() - 4, 4, "beta") == 0) ||
        name.find(".b") != std::string::npos;
    if (is_gain) {
      std::fill(p, p + size, 1.0);
    } else if (is_bias) {
      // already zero
    } else {
      for (std::size_t i = 0; i < size; ++i) p[i] = rng.normal(0.0, 0.02);
    }
  }
}

double* MlmModel::segment(const std::string& name) {
  return params_.data() + layout_.span(name).first;
}

const double* MlmModel::segment(const std::string& name) const {
  return params_.data() + layout_.span(name).first;
}

namespace {

LayerParams layer_params(const MlmModel& m, int i) {
  const std::string p = layer_prefix(i);
  return {m.segment(p + "ln1.gamma"), m.segment(p + "ln1.beta"),
          m.segment(p + "attn.wq"),  m.segment(p + "attn.bq"),
          m.segment(p + "attn.wk"),  m.segment(p + "attn.bk"),
          m.segment(p + "attn.wv"),  m.segment(p + "attn.bv"),
          m.segment(p + "attn.wo"),  m.segment(p + "attn.bo"),
          m.segment(p + "ln2.gamma"), m.segment(p + "ln2.beta"),
          m.segment(p + "ff.w1"),    m.segment(p + "ff.b1"),
          m.segment(p + "ff.w2"),    m.segment(p + "ff.b2")};
}

LayerGrads layer_grads(const ParamLayout& layout, std::vector<double>& g,
                       int i) {
  const std::string p = layer_prefix(i);
  auto at = [&](const std::string& n) {
    return g.data() + layout.span(n).first;
  };
  return {at(p + "ln1.gamma"), at(p + "ln1.beta"), at(p + "attn.wq"),
          at(p + "attn.bq"),   at(p + "attn.wk"),  at(p + "attn.bk"),
          at(p + "attn.wv"),   at(p + "attn.bv"),  at(p + "attn.wo"),
          at(p + "attn.bo"),   at(p + "ln2.gamma"), at(p + "ln2.beta"),
          at(p + "ff.w1"),     at(p + "ff.b1"),    at(p + "ff.w2"),
          at(p + "ff.b2")};
}

void add_bias_rows(double* x, const double* bias, std::size_t rows,
                   std::size_t cols) {
  for (std::size_t t = 0; t < rows; ++t) {
    double* xt = x + t * cols;
    for (std::size_t j = 0; j < cols; ++j) xt[j] += bias[j];
  }
}

void run_forward(const MlmModel& model, const std::vector<int>& tokens,
                 const std::vector<std::size_t>& offsets, Workspace& ws) {
  const MlmConfig& c = model.config();
  const std::size_t T = tokens.size();
  const auto d = static_cast<std::size_t>(c.dim);
  const auto f = static_cast<std::size_t>(c.ff_dim);
  const auto V = static_cast<std::size_t>(c.vocab_size);
  const std::size_t H = static_cast<std::size_t>(c.heads);
  const std::size_t dh = d / H;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::size_t B = offsets.size() - 1;

  ws.attn_offsets.assign(B, 0);
  ws.attn_total = 0;
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t len = offsets[b + 1] - offsets[b];
    if (len > static_cast<std::size_t>(c.max_len))
      throw CscError("sequence too long");
    ws.attn_offsets[b] = ws.attn_total;
    ws.attn_total += H * len * len;
  }

  const double* tok_emb = model.segment("tok_emb");
  const double* pos_emb = model.segment("pos_emb");

  ws.h0.resize(T * d);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = offsets[b]; t < offsets[b + 1]; ++t) {
      const int id = tokens[t];
      if (id < 0 || id >= c.vocab_size)
        throw CscError("token id out of range");
      const double* e = tok_emb + static_cast<std::size_t>(id) * d;
      const double* p = pos_emb + (t - offsets[b]) * d;
      double* h = ws.h0.data() + t * d;
      for (std::size_t k = 0; k < d; ++k) h[k] = e[k] + p[k];
    }

  ws.layers.resize(static_cast<std::size_t>(c.layers));
  const double* cur = ws.h0.data();
  for (int li = 0; li < c.layers; ++li) {
    LayerCache& lc = ws.layers[static_cast<std::size_t>(li)];
    const LayerParams lp = layer_params(model, li);
    lc.normed1.resize(T * d);
    lc.ln1_out.resize(T * d);
    lc.inv_std1.resize(T);
    layer_norm_forward(cur, lp.ln1_gamma, lp.ln1_beta, lc.ln1_out.data(),
                       lc.normed1.data(), lc.inv_std1.data(), T, d);

    lc.q.resize(T * d);
    lc.k.resize(T * d);
    lc.v.resize(T * d);
    matmul(lc.ln1_out.data(), lp.wq, lc.q.data(), T, d, d, false);
    matmul(lc.ln1_out.data(), lp.wk, lc.k.data(), T, d, d, false);
    matmul(lc.ln1_out.data(), lp.wv, lc.v.data(), T, d, d, false);
    add_bias_rows(lc.q.data(), lp.bq, T, d);
    add_bias_rows(lc.k.data(), lp.bk, T, d);
    add_bias_rows(lc.v.data(), lp.bv, T, d);

    lc.attn.assign(ws.attn_total, 0.0);
    lc.ctx.assign(T * d, 0.0);
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t base = offsets[b];
      const std::size_t len = offsets[b + 1] - base;
      for (std::size_t h = 0; h < H; ++h) {
        double* probs = lc.attn.data() + ws.attn_offsets[b] + h * len * len;
        for (std::size_t i = 0; i < len; ++i) {
          const double* qi = lc.q.data() + (base + i) * d + h * dh;
          double* row = probs + i * len;
          double mx = -1e300;
          for (std::size_t j = 0; j < len; ++j) {
            const double* kj = lc.k.data() + (base + j) * d + h * dh;
            double s = 0.0;
            for (std::size_t u = 0; u < dh; ++u) s += qi[u] * kj[u];
            row[j] = s * scale;
            if (row[j] > mx) mx = row[j];
          }
          double sum = 0.0;
          for (std::size_t j = 0; j < len; ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
          }
          const double inv = 1.0 / sum;
          double* ci = lc.ctx.data() + (base + i) * d + h * dh;
          for (std::size_t j = 0; j < len; ++j) {
            row[j] *= inv;
            const double* vj = lc.v.data() + (base + j) * d + h * dh;
            for (std::size_t u = 0; u < dh; ++u) ci[u] += row[j] * vj[u];
          }
        }
      }
    }

    lc.r1.resize(T * d);
    matmul(lc.ctx.data(), lp.wo, lc.r1.data(), T, d, d, false);
    add_bias_rows(lc.r1.data(), lp.bo, T, d);
    for (std::size_t i = 0; i < T * d; ++i) lc.r1[i] += cur[i];

    lc.normed2.resize(T * d);
    lc.ln2_out.resize(T * d);
    lc.inv_std2.resize(T);
    layer_norm_forward(lc.r1.data(), lp.ln2_gamma, lp.ln2_beta,
                       lc.ln2_out.data(), lc.normed2.data(),
                       lc.inv_std2.data(), T, d);

    lc.f1.resize(T * f);
    matmul(lc.ln2_out.data(), lp.w1, lc.f1.data(), T, d, f, false);
    add_bias_rows(lc.f1.data(), lp.b1, T, f);
    lc.act.resize(T * f);
    for (std::size_t i = 0; i < T * f; ++i) lc.act[i] = gelu(lc.f1[i]);

    lc.out.resize(T * d);
    matmul(lc.act.data(), lp.w2, lc.out.data(), T, f, d, false);
    add_bias_rows(lc.out.data(), lp.b2, T, d);
    for (std::size_t i = 0; i < T * d; ++i) lc.out[i] += lc.r1[i];
    cur = lc.out.data();
  }

  ws.normed_f.resize(T * d);
  ws.hf.resize(T * d);
  ws.inv_std_f.resize(T);
  layer_norm_forward(cur, model.segment("final_ln.gamma"),
                     model.segment("final_ln.beta"), ws.hf.data(),
                     ws.normed_f.data(), ws.inv_std_f.data(), T, d);

  // Tied output projection: logits = hf * E^T + out_bias.
  std::vector<double> emb_t(d * V);
  transpose(tok_emb, emb_t.data(), V, d);
  ws.probs.resize(T * V);
  matmul(ws.hf.data(), emb_t.data(), ws.probs.data(), T, d, V, false);
  add_bias_rows(ws.probs.data(), model.segment("out_bias"), T, V);
  for (std::size_t t = 0; t < T; ++t) {
    double* row = ws.probs.data() + t * V;
    double mx = row[0];
    for (std::size_t v = 1; v < V; ++v) mx = std::max(mx, row[v]);
    double sum = 0.0;
    for (std::size_t v = 0; v < V; ++v) {
      row[v] = std::exp(row[v] - mx);
      sum += row[v];
    }
    const double inv = 1.0 / sum;
    for (std::size_t v = 0; v < V; ++v) row[v] *= inv;
  }
}

// Per-position loss weights: examples average over their supervised
// positions, the batch averages over contributing examples.
std::vector<double> loss_weights(const PackedBatch& batch, double* out_batch_n) {
  const std::size_t B = batch.num_examples();
  std::vector<double> w(batch.num_tokens(), 0.0);
  std::size_t contributing = 0;
  for (std::size_t b = 0; b < B; ++b) {
    std::size_t n = 0;
    for (std::size_t t = batch.offsets[b]; t < batch.offsets[b + 1]; ++t)
      if (batch.supervised[t]) ++n;
    if (n > 0) ++contributing;
  }
  if (contributing == 0) throw CscError("no supervised positions");
  for (std::size_t b = 0; b < B; ++b) {
    std::size_t n = 0;
    for (std::size_t t = batch.offsets[b]; t < batch.offsets[b + 1]; ++t)
      if (batch.supervised[t]) ++n;
    if (n == 0) continue;
    const double weight = 1.0 / (static_cast<double>(contributing) *
                                 static_cast<double>(n));
    for (std::size_t t = batch.offsets[b]; t < batch.offsets[b + 1]; ++t)
      if (batch.supervised[t]) w[t] = weight;
  }
  *out_batch_n = static_cast<double>(contributing);
  return w;
}

double loss_from_probs(const Workspace& ws, const PackedBatch& batch,
                       const std::vector<double>& weights, std::size_t V) {
  double total = 0.0;
  for (std::size_t b = 0; b < batch.num_examples(); ++b) {
    double ex = 0.0;
    bool any = false;
    for (std::size_t t = batch.offsets[b]; t < batch.offsets[b + 1]; ++t) {
      if (weights[t] == 0.0) continue;
      any = true;
      const double p =
          ws.probs[t * V + static_cast<std::size_t>(batch.targets[t])];
      ex += weights[t] * -std::log(p);
    }
    if (any) total += ex;
  }
  return total;
}

PackedBatch single(const Sentence& x, const Sentence& y,
                   const std::vector<int>& position_mask) {
  if (x.size() != y.size())
    throw CscError("misaligned example: source and target lengths differ");
  std::vector<std::uint8_t> flags;
  if (position_mask.empty()) {
    flags.assign(static_cast<std::size_t>(x.size()), 1);
  } else {
    flags.assign(static_cast<std::size_t>(x.size()), 0);
    for (int i : position_mask) {
      if (i < 0 || i >= x.size())
        throw CscError("position mask index out of range");
      flags[static_cast<std::size_t>(i)] = 1;
    }
  }
  PackedBatch batch;
  batch.add(x, y, flags);
  return batch;
}

}  // namespace

std::vector<std::vector<double>> MlmModel::forward(const Sentence& x) const {
  if (x.size() == 0) throw CscError("empty sentence");
  Workspace ws;
  run_forward(*this, x.ids, {0, x.ids.size()}, ws);
  const auto V = static_cast<std::size_t>(config_.vocab_size);
  std::vector<std::vector<double>> rows(static_cast<std::size_t>(x.size()));
  for (std::size_t t = 0; t < rows.size(); ++t)
    rows[t].assign(ws.probs.begin() + static_cast<std::ptrdiff_t>(t * V),
                   ws.probs.begin() + static_cast<std::ptrdiff_t>((t + 1) * V));
  return rows;
}

double MlmModel::loss(const Sentence& x, const Sentence& y,
                      const std::vector<int>& position_mask) const {
  return loss(single(x, y, position_mask));
}

double MlmModel::loss(const PackedBatch& batch) const {
  Workspace ws;
  double batch_n = 0.0;
  const auto weights = loss_weights(batch, &batch_n);
  run_forward(*this, batch.tokens, batch.offsets, ws);
  return loss_from_probs(ws, batch, weights,
                         static_cast<std::size_t>(config_.vocab_size));
}

GradientRecord MlmModel::backward(const Sentence& x, const Sentence& y,
                                  const std::vector<int>& position_mask) const {
  return backward(single(x, y, position_mask));
}

GradientRecord MlmModel::backward(const PackedBatch& batch) const {
  const MlmConfig& c = config_;
  const std::size_t T = batch.num_tokens();
  const std::size_t B = batch.num_examples();
  const auto d = static_cast<std::size_t>(c.dim);
  const auto f = static_cast<std::size_t>(c.ff_dim);
  const auto V = static_cast<std::size_t>(c.vocab_size);
  const std::size_t H = static_cast<std::size_t>(c.heads);
  const std::size_t dh = d / H;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  double batch_n = 0.0;
  const auto weights = loss_weights(batch, &batch_n);
  Workspace ws;
  run_forward(*this, batch.tokens, batch.offsets, ws);

  GradientRecord rec;
  rec.grads.assign(layout_.total, 0.0);
  rec.loss = loss_from_probs(ws, batch, weights, V);

  // dlogits = weight * (probs - onehot(target)), reusing the probs buffer.
  std::vector<double>& dlogits = ws.probs;
  for (std::size_t t = 0; t < T; ++t) {
    double* row = dlogits.data() + t * V;
    const double w = weights[t];
    if (w == 0.0) {
      std::fill(row, row + V, 0.0);
      continue;
    }
    for (std::size_t v = 0; v < V; ++v) row[v] *= w;
    row[static_cast<std::size_t>(batch.targets[t])] -= w;
  }

  const double* tok_emb = segment("tok_emb");
  double* d_tok_emb = rec.grads.data() + layout_.span("tok_emb").first;
  double* d_pos_emb = rec.grads.data() + layout_.span("pos_emb").first;
  double* d_out_bias = rec.grads.data() + layout_.span("out_bias").first;

  colsum_acc(dlogits.data(), d_out_bias, T, V);
  // Tied embedding, output side: dE += dlogits^T * hf.
  matmul_atb(dlogits.data(), ws.hf.data(), d_tok_emb, T, V, d);
  std::vector<double> dhf(T * d);
  matmul(dlogits.data(), tok_emb, dhf.data(), T, V, d, false);

  std::vector<double> scratch;
  std::vector<double> dcur(T * d, 0.0);
  {
    double* dgf = rec.grads.data() + layout_.span("final_ln.gamma").first;
    double* dbf = rec.grads.data() + layout_.span("final_ln.beta").first;
    layer_norm_backward(dhf.data(), ws.normed_f.data(), ws.inv_std_f.data(),
                        segment("final_ln.gamma"), dcur.data(), dgf, dbf, T, d,
                        scratch);
  }

  std::vector<double> dr1(T * d), dtmp_f(T * f), dtmp_f2(T * f);
  std::vector<double> dln_in(T * d), dq(T * d), dk(T * d), dv(T * d);
  std::vector<double> dctx(T * d), dprev(T * d);
  std::vector<double> wt(std::max(d * d, std::max(d * f, f * d)));
  std::vector<double> attn_scratch;

  for (int li = c.layers - 1; li >= 0; --li) {
    const LayerCache& lc = ws.layers[static_cast<std::size_t>(li)];
    const LayerParams lp = layer_params(*this, li);
    LayerGrads lg = layer_grads(layout_, rec.grads, li);

    // Feedforward block: out = r1 + W2 gelu(W1 ln2(r1) + b1) + b2.
    std::copy(dcur.begin(), dcur.end(), dr1.begin());
    matmul_atb(lc.act.data(), dcur.data(), lg.w2, T, f, d);
    colsum_acc(dcur.data(), lg.b2, T, d);
    transpose(lp.w2, wt.data(), f, d);
    matmul(dcur.data(), wt.data(), dtmp_f.data(), T, d, f, false);
    for (std::size_t i = 0; i < T * f; ++i)
      dtmp_f2[i] = dtmp_f[i] * gelu_prime(lc.f1[i]);
    matmul_atb(lc.ln2_out.data(), dtmp_f2.data(), lg.w1, T, d, f);
    colsum_acc(dtmp_f2.data(), lg.b1, T, f);
    transpose(lp.w1, wt.data(), d, f);
    std::fill(dln_in.begin(), dln_in.end(), 0.0);
    matmul(dtmp_f2.data(), wt.data(), dln_in.data(), T, f, d, false);
    layer_norm_backward(dln_in.data(), lc.normed2.data(), lc.inv_std2.data(),
                        lp.ln2_gamma, dr1.data(), lg.ln2_gamma, lg.ln2_beta, T,
                        d, scratch);

    // Attention block: r1 = in + Wo ctx + bo.
    std::copy(dr1.begin(), dr1.end(), dprev.begin());
    matmul_atb(lc.ctx.data(), dr1.data(), lg.wo, T, d, d);
    colsum_acc(dr1.data(), lg.bo, T, d);
    transpose(lp.wo, wt.data(), d, d);
    matmul(dr1.data(), wt.data(), dctx.data(), T, d, d, false);

    std::fill(dq.begin(), dq.end(), 0.0);
    std::fill(dk.begin(), dk.end(), 0.0);
    std::fill(dv.begin(), dv.end(), 0.0);
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t base = batch.offsets[b];
      const std::size_t len = batch.offsets[b + 1] - base;
      attn_scratch.resize(2 * len * len);
      double* dp = attn_scratch.data();
      double* dsc = attn_scratch.data() + len * len;
      for (std::size_t h = 0; h < H; ++h) {
        const double* probs =
            lc.attn.data() + ws.attn_offsets[b] + h * len * len;
        // dprobs[i][j] = dctx_h[i] . v_h[j]; dv accumulates probs-weighted dctx.
        for (std::size_t i = 0; i < len; ++i) {
          const double* dci = dctx.data() + (base + i) * d + h * dh;
          double* dpi = dp + i * len;
          for (std::size_t j = 0; j < len; ++j) {
            const double* vj = lc.v.data() + (base + j) * d + h * dh;
            double s = 0.0;
            for (std::size_t u = 0; u < dh; ++u) s += dci[u] * vj[u];
            dpi[j] = s;
          }
        }
        for (std::size_t j = 0; j < len; ++j) {
          double* dvj = dv.data() + (base + j) * d + h * dh;
          for (std::size_t i = 0; i < len; ++i) {
            const double p = probs[i * len + j];
            const double* dci = dctx.data() + (base + i) * d + h * dh;
            for (std::size_t u = 0; u < dh; ++u) dvj[u] += p * dci[u];
          }
        }
        // Softmax backward per query row.
        for (std::size_t i = 0; i < len; ++i) {
          const double* pi = probs + i * len;
          const double* dpi = dp + i * len;
          double dot = 0.0;
          for (std::size_t j = 0; j < len; ++j) dot += dpi[j] * pi[j];
          double* dsi = dsc + i * len;
          for (std::size_t j = 0; j < len; ++j)
            dsi[j] = pi[j] * (dpi[j] - dot);
        }
        for (std::size_t i = 0; i < len; ++i) {
          double* dqi = dq.data() + (base + i) * d + h * dh;
          const double* dsi = dsc + i * len;
          for (std::size_t j = 0; j < len; ++j) {
            const double g = dsi[j] * scale;
            const double* kj = lc.k.data() + (base + j) * d + h * dh;
            double* dkj = dk.data() + (base + j) * d + h * dh;
            const double* qi = lc.q.data() + (base + i) * d + h * dh;
            for (std::size_t u = 0; u < dh; ++u) {
              dqi[u] += g * kj[u];
              dkj[u] += g * qi[u];
            }
          }
        }
      }
    }

    matmul_atb(lc.ln1_out.data(), dq.data(), lg.wq, T, d, d);
    matmul_atb(lc.ln1_out.data(), dk.data(), lg.wk, T, d, d);
    matmul_atb(lc.ln1_out.data(), dv.data(), lg.wv, T, d, d);
    colsum_acc(dq.data(), lg.bq, T, d);
    colsum_acc(dk.data(), lg.bk, T, d);
    colsum_acc(dv.data(), lg.bv, T, d);
    transpose(lp.wq, wt.data(), d, d);
    matmul(dq.data(), wt.data(), dln_in.data(), T, d, d, false);
    transpose(lp.wk, wt.data(), d, d);
    matmul(dk.data(), wt.data(), dln_in.data(), T, d, d, true);
    transpose(lp.wv, wt.data(), d, d);
    matmul(dv.data(), wt.data(), dln_in.data(), T, d, d, true);
    layer_norm_backward(dln_in.data(), lc.normed1.data(), lc.inv_std1.data(),
                        lp.ln1_gamma, dprev.data(), lg.ln1_gamma, lg.ln1_beta,
                        T, d, scratch);
    std::swap(dcur, dprev);
  }

  // dcur now holds the gradient w.r.t. the summed input embeddings.
  rec.per_token_embedding_norm.resize(T);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = batch.offsets[b]; t < batch.offsets[b + 1]; ++t) {
      const double* g = dcur.data() + t * d;
      double sq = 0.0;
      for (std::size_t k = 0; k < d; ++k) sq += g[k] * g[k];
      rec.per_token_embedding_norm[t] = std::sqrt(sq);
      double* de =
          d_tok_emb + static_cast<std::size_t>(batch.tokens[t]) * d;
      double* dp = d_pos_emb + (t - batch.offsets[b]) * d;
      for (std::size_t k = 0; k < d; ++k) {
        de[k] += g[k];
        dp[k] += g[k];
      }
    }

  double sq = 0.0;
  for (double g : rec.grads) sq += g * g;
  rec.global_norm = std::sqrt(sq);
  return rec;
}

std::vector<std::pair<int, double>> MlmModel::predict_topk(const Sentence& x,
                                                           int position,
                                                           int k) const {
  if (position < 0 || position >= x.size())
    throw CscError("prediction position out of range");
  if (k < 1 || k > config_.vocab_size)
    throw CscError("top-k count out of range");
  const auto rows = forward(x);
  const auto& row = rows[static_cast<std::size_t>(position)];
  std::vector<int> ids(row.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
  std::sort(ids.begin(), ids.end(), [&row](int a, int b) {
    if (row[static_cast<std::size_t>(a)] != row[static_cast<std::size_t>(b)])
      return row[static_cast<std::size_t>(a)] >
             row[static_cast<std::size_t>(b)];
    return a < b;
  });
  std::vector<std::pair<int, double>> out;
  out.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i)
    out.emplace_back(ids[static_cast<std::size_t>(i)],
                     row[static_cast<std::size_t>(ids[static_cast<std::size_t>(i)])]);
  return out;
}

int MlmModel::predict(const Sentence& x, int position) const {
  return predict_topk(x, position, 1)[0].first;
}

namespace {

class MaskedLmView final : public LanguageModel {
 public:
  MaskedLmView(const MlmModel& model, int mask_id)
      : model_(model), mask_id_(mask_id) {}
  std::vector<double> distribution(const Sentence& x,
                                   int position) const override {
    if (position < 0 || position >= x.size())
      throw CscError("language-model position out of range");
    Sentence masked = x;
    masked.ids[static_cast<std::size_t>(position)] = mask_id_;
    auto rows = model_.forward(masked);
    return std::move(rows[static_cast<std::size_t>(position)]);
  }

 private:
  const MlmModel& model_;
  int mask_id_;
};

}  // namespace

std::unique_ptr<LanguageModel> MlmModel::as_language_model(int mask_id) const {
  if (mask_id < 0 || mask_id >= config_.vocab_size)
    throw CscError("mask id out of range");
  return std::make_unique<MaskedLmView>(*this, mask_id);
}

Sentence repair_with_mask_oracle(const MlmModel& model, const Sentence& x,
                                 const std::vector<int>& error_positions,
                                 int mask_id) {
  if (error_positions.empty()) return x;
  Sentence masked = x;
  for (int i : error_positions) {
    if (i < 0 || i >= x.size())
      throw CscError("error position out of range");
    masked.ids[static_cast<std::size_t>(i)] = mask_id;
  }
  const auto rows = model.forward(masked);
  Sentence out = x;
  for (int i : error_positions) {
    const auto& row = rows[static_cast<std::size_t>(i)];
    std::size_t best = 0;
    for (std::size_t v = 1; v < row.size(); ++v)
      if (row[v] > row[best]) best = v;
    out.ids[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

namespace {

constexpr char kMagic[8] = {'C', 'S', 'C', 'M', 'L', 'M', '0', '1'};

template <typename T>
void write_pod(std::ofstream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const char* what) {
  T value;
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw CscError(std::string("truncated checkpoint reading ") + what);
  return value;
}

}  // namespace

void MlmModel::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CscError("cannot write checkpoint: " + path);
  out.write(kMagic, sizeof(kMagic));
  write_pod(out, static_cast<std::int32_t>(config_.vocab_size));
  write_pod(out, static_cast<std::int32_t>(config_.dim));
  write_pod(out, static_cast<std::int32_t>(config_.layers));
  write_pod(out, static_cast<std::int32_t>(config_.heads));
  write_pod(out, static_cast<std::int32_t>(config_.ff_dim));
  write_pod(out, static_cast<std::int32_t>(config_.max_len));
  write_pod(out, static_cast<std::uint64_t>(config_.seed));
  write_pod(out, static_cast<std::uint64_t>(layout_.segments.size()));
  for (const auto& [name, size] : layout_.segments) {
    write_pod(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod(out, static_cast<std::uint64_t>(size));
    const double* p = params_.data() + layout_.span(name).first;
    out.write(reinterpret_cast<const char*>(p),
              static_cast<std::streamsize>(size * sizeof(double)));
  }
  if (!out) throw CscError("write failed: " + path);
}

MlmModel MlmModel::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CscError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw CscError("not a model checkpoint: " + path);
  MlmConfig config;
  config.vocab_size = read_pod<std::int32_t>(in, "vocab_size");
  config.dim = read_pod<std::int32_t>(in, "dim");
  config.layers = read_pod<std::int32_t>(in, "layers");
  config.heads = read_pod<std::int32_t>(in, "heads");
  config.ff_dim = read_pod<std::int32_t>(in, "ff_dim");
  config.max_len = read_pod<std::int32_t>(in, "max_len");
  config.seed = read_pod<std::uint64_t>(in, "seed");
  MlmModel model(config);
  const auto n_segments = read_pod<std::uint64_t>(in, "segment count");
  if (n_segments != model.layout_.segments.size())
    throw CscError("checkpoint segment count does not match config");
  for (const auto& [name, size] : model.layout_.segments) {
    const auto name_len = read_pod<std::uint32_t>(in, "segment name length");
    std::string stored(name_len, '\0');
    in.read(stored.data(), name_len);
    if (!in || stored != name)
      throw CscError("checkpoint segment mismatch: expected " + name);
    const auto count = read_pod<std::uint64_t>(in, "segment size");
    if (count != size)
      throw CscError("checkpoint segment " + name + " has wrong size");
    double* p = model.params_.data() + model.layout_.span(name).first;
    in.read(reinterpret_cast<char*>(p),
            static_cast<std::streamsize>(size * sizeof(double)));
    if (!in) throw CscError("truncated checkpoint reading " + name);
  }
  if (in.get() != std::ifstream::traits_type::eof())
    throw CscError("trailing bytes after checkpoint payload: " + path);
  return model;
}

}  // namespace csc
