#include "compinfer/posterior.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "compinfer/errors.hpp"
#include "compinfer/optim.hpp"

namespace compinfer {

namespace {

constexpr double kLogTwoPi = 1.8378770664093454836;
// softplus(0.5413) = 1, so a zero-initialized output layer emits unit scales.
constexpr double kDiagShift = 0.54132485461292323;
constexpr double kDiagFloor = 1e-6;

long checked_pow2(long n) {
  if (n > 20) throw config_error("model enumeration supports at most 20 components");
  return 1L << n;
}

struct Mlp {
  std::vector<long> w, b;
};

struct Layout {
  std::vector<std::pair<long, long>> conv;
  Mlp trial;
  Mlp fc;
  Mlp mpn_trunk;
  long mpn_w = -1, mpn_b = -1;
  Mlp ppn_trunk;
  long ppn_w = -1, ppn_b = -1;
};

long mpn_out_dim(const NetConfig& c) {
  if (c.model_head == ModelHead::Categorical) return checked_pow2(c.n_components);
  return c.mogr_components * 2 * c.n_components * c.n_components + c.mogr_components;
}

long ppn_out_dim(const NetConfig& c) {
  long d = c.full_dim();
  return c.mdn_components * (2 * d + d * (d - 1) / 2) + c.mdn_components;
}

Layout layout_of(const PosteriorBundle& b) {
  Layout l;
  const NetConfig& c = b.config;
  auto mlp = [&](const std::string& stem, long n) {
    Mlp m;
    for (long i = 0; i < n; ++i) {
      m.w.push_back(b.param_index(stem + std::to_string(i) + ".w"));
      m.b.push_back(b.param_index(stem + std::to_string(i) + ".b"));
    }
    return m;
  };
  if (c.embed.kind == EmbedKind::ConvSeq) {
    for (size_t i = 0; i < c.embed.conv_channels.size(); ++i)
      l.conv.emplace_back(b.param_index("embed.conv" + std::to_string(i) + ".w"),
                          b.param_index("embed.conv" + std::to_string(i) + ".b"));
    l.fc = mlp("embed.fc", static_cast<long>(c.embed.fc_dims.size()));
  } else if (c.embed.kind == EmbedKind::TrialSet) {
    l.trial = mlp("embed.trial", static_cast<long>(c.embed.trial_dims.size()));
    l.fc = mlp("embed.fc", static_cast<long>(c.embed.fc_dims.size()));
  }
  l.mpn_trunk = mlp("mpn.trunk", c.mogr_layers);
  l.mpn_w = b.param_index("mpn.out.w");
  l.mpn_b = b.param_index("mpn.out.b");
  l.ppn_trunk = mlp("ppn.trunk", c.mdn_layers);
  l.ppn_w = b.param_index("ppn.out.w");
  l.ppn_b = b.param_index("ppn.out.b");
  return l;
}

// Parameter leaves for one tape pass, in bundle order.
struct Leaves {
  std::vector<Var> vars;
  Var operator[](long i) const { return vars[i]; }
};

Leaves make_leaves(Tape& t, const PosteriorBundle& b, bool requires_grad) {
  Leaves lv;
  lv.vars.reserve(b.params.size());
  for (const Tensor& p : b.params) lv.vars.push_back(t.leaf(p, requires_grad));
  return lv;
}

Var mlp_forward(Tape& t, const Leaves& lv, const Mlp& m, Var x, bool relu_last) {
  for (size_t i = 0; i < m.w.size(); ++i) {
    x = t.linear(x, lv[m.w[i]], lv[m.b[i]]);
    if (relu_last || i + 1 < m.w.size()) x = t.relu(x);
  }
  return x;
}

std::vector<double> standardized_x(const PosteriorBundle& b, const std::vector<double>& x) {
  std::vector<double> out = x;
  if (b.x_mean.empty()) return out;
  long period = b.config.embed.feature_period();
  for (size_t i = 0; i < out.size(); ++i) {
    long f = static_cast<long>(i) % period;
    out[i] = (out[i] - b.x_mean[f]) / b.x_std[f];
  }
  return out;
}

// Standardized observations for a batch, shaped for the embedding kind.
Tensor batch_x_tensor(const PosteriorBundle& b, const std::vector<const Record*>& rows) {
  const EmbedConfig& e = b.config.embed;
  long nb = static_cast<long>(rows.size());
  long xd = e.x_dim();
  Tensor out;
  if (e.kind == EmbedKind::TrialSet)
    out.resize({nb * e.set_size, e.trial_features});
  else
    out.resize({nb, xd});
  for (long i = 0; i < nb; ++i) {
    if (static_cast<long>(rows[i]->x.size()) != xd)
      throw shape_error("record x length " + std::to_string(rows[i]->x.size()) +
                        ", embedding expects " + std::to_string(xd));
    std::vector<double> z = standardized_x(b, rows[i]->x);
    std::copy(z.begin(), z.end(), out.data() + i * xd);
  }
  return out;
}

Var embed_forward(Tape& t, const PosteriorBundle& b, const Layout& l, const Leaves& lv,
                  Tensor x) {
  const EmbedConfig& e = b.config.embed;
  long nb = e.kind == EmbedKind::TrialSet ? x.dim(0) / e.set_size : x.dim(0);
  Var h = t.constant(std::move(x));
  switch (e.kind) {
    case EmbedKind::Identity:
      return h;
    case EmbedKind::ConvSeq: {
      h = t.reshape(h, {nb, 1, e.seq_len});
      long len = e.seq_len;
      for (size_t i = 0; i < l.conv.size(); ++i) {
        h = t.relu(t.conv1d(h, lv[l.conv[i].first], lv[l.conv[i].second]));
        len -= e.kernel - 1;
      }
      h = t.reshape(h, {nb, e.conv_channels.back() * len});
      return mlp_forward(t, lv, l.fc, h, false);
    }
    case EmbedKind::TrialSet: {
      h = mlp_forward(t, lv, l.trial, h, true);
      h = t.mean_pool_sets(h, e.set_size);
      return mlp_forward(t, lv, l.fc, h, false);
    }
  }
  throw config_error("unknown embedding kind");
}

// Model-head log pmf for each row's model vector.
Var model_head_log_pmf(Tape& t, const PosteriorBundle& b, const Layout& l, const Leaves& lv,
                       Var e, const std::vector<const Record*>& rows) {
  const NetConfig& c = b.config;
  Var h = mlp_forward(t, lv, l.mpn_trunk, e, true);
  Var out = t.linear(h, lv[l.mpn_w], lv[l.mpn_b]);
  long nb = static_cast<long>(rows.size());
  if (c.model_head == ModelHead::Categorical) {
    Var logp = t.log_softmax_rows(out);
    std::vector<long> idx(nb);
    for (long i = 0; i < nb; ++i) idx[i] = model_index(rows[i]->m);
    return t.pick_per_row(logp, idx);
  }
  long n = c.n_components, k = c.mogr_components;
  std::vector<std::vector<int>> ys(nb);
  for (long i = 0; i < nb; ++i) ys[i].assign(rows[i]->m.begin(), rows[i]->m.end());
  std::vector<Var> comps;
  for (long ci = 0; ci < k; ++ci) {
    Var braw = t.reshape(t.slice_cols(out, ci * 2 * n * n, n * n), {nb, n, n});
    Var craw = t.reshape(t.slice_cols(out, ci * 2 * n * n + n * n, n * n), {nb, n, n});
    Var sigma = build_sigma_tape(t, braw, craw);
    comps.push_back(grassmann_log_pmf_tape(t, sigma, ys));
  }
  Var logits = t.slice_cols(out, k * 2 * n * n, k);
  return mixture_log_pmf_tape(t, comps, logits);
}

// Gaussian-mixture marginal log density of each row's standardized active
// parameters; rows must share one model vector.
Var ppn_group_log_pdf(Tape& t, const PosteriorBundle& b, const Layout& l, const Leaves& lv,
                      Var e_group, const ModelVector& m,
                      const std::vector<const Record*>& rows) {
  const NetConfig& c = b.config;
  long nb = static_cast<long>(rows.size());
  long d = c.full_dim(), k = c.mdn_components;
  std::vector<long> act = c.active_indices(m);
  long na = static_cast<long>(act.size());

  Tensor mbits({nb, c.n_components});
  for (long i = 0; i < nb; ++i)
    for (long j = 0; j < c.n_components; ++j) mbits(i, j) = static_cast<double>(m[j]);
  Var h = t.concat_cols(e_group, t.constant(std::move(mbits)));
  h = mlp_forward(t, lv, l.ppn_trunk, h, true);
  Var out = t.linear(h, lv[l.ppn_w], lv[l.ppn_b]);

  Tensor target({nb, na});
  for (long i = 0; i < nb; ++i) {
    if (static_cast<long>(rows[i]->theta.size()) != na)
      throw shape_error("record theta length does not match its model vector");
    for (long j = 0; j < na; ++j) {
      double mu = b.theta_mean.empty() ? 0.0 : b.theta_mean[act[j]];
      double sd = b.theta_mean.empty() ? 1.0 : b.theta_std[act[j]];
      target(i, j) = (rows[i]->theta[j] - mu) / sd;
    }
  }
  Var tv = t.constant(std::move(target));

  long strict = d * (d - 1) / 2;
  long per = 2 * d + strict;
  std::vector<Var> comps;
  for (long ci = 0; ci < k; ++ci) {
    Var mean = t.slice_cols(out, ci * per, d);
    Var lstrict = t.slice_cols(out, ci * per + d, strict);
    Var ldiag = t.add_scalar(
        t.softplus(t.add_scalar(t.slice_cols(out, ci * per + d + strict, d), kDiagShift)),
        kDiagFloor);
    Var chol = t.tril_embed(lstrict, ldiag);
    Var cov = t.bmm(chol, t.transpose_last(chol));
    Var sub = t.gather_submatrix(cov, act);
    Var r = t.sub(tv, t.gather_cols(mean, act));
    Var x = t.cholesky_solve(sub, t.reshape(r, {nb, na, 1}));
    Var quad = t.dot_rows(r, t.reshape(x, {nb, na}));
    Var lp = t.add_scalar(t.scale(t.add(t.logdet(sub), quad), -0.5),
                          -0.5 * static_cast<double>(na) * kLogTwoPi);
    comps.push_back(lp);
  }
  Var logits = t.slice_cols(out, k * per, k);
  return mixture_log_pmf_tape(t, comps, logits);
}

// Raw head-output rows for one observation (tape forward, values only).
Tensor forward_head_row(const PosteriorBundle& b, const std::vector<double>& x, bool ppn,
                        const ModelVector* m) {
  Layout l = layout_of(b);
  Tape t;
  Leaves lv = make_leaves(t, b, false);
  Record rec;
  rec.x = x;
  std::vector<const Record*> rows{&rec};
  Var e = embed_forward(t, b, l, lv, batch_x_tensor(b, rows));
  Var h;
  if (ppn) {
    Tensor mbits({1, b.config.n_components});
    for (long j = 0; j < b.config.n_components; ++j) mbits(0, j) = static_cast<double>((*m)[j]);
    h = t.concat_cols(e, t.constant(std::move(mbits)));
    h = mlp_forward(t, lv, l.ppn_trunk, h, true);
    h = t.linear(h, lv[l.ppn_w], lv[l.ppn_b]);
  } else {
    h = mlp_forward(t, lv, l.mpn_trunk, e, true);
    h = t.linear(h, lv[l.mpn_w], lv[l.mpn_b]);
  }
  return t.val(h);
}

double softplus_eager(double x) {
  return x > 30.0 ? x : std::log1p(std::exp(x));
}

std::vector<double> softmax_eager(const double* v, long k) {
  double mx = v[0];
  for (long i = 1; i < k; ++i) mx = std::max(mx, v[i]);
  std::vector<double> w(k);
  double s = 0.0;
  for (long i = 0; i < k; ++i) s += w[i] = std::exp(v[i] - mx);
  for (long i = 0; i < k; ++i) w[i] /= s;
  return w;
}

// PPN mixture in standardized units.
struct RawMixture {
  std::vector<double> weights;
  std::vector<Eigen::VectorXd> means;
  std::vector<RowMat> chols;
};

RawMixture raw_ppn_mixture(const PosteriorBundle& b, const std::vector<double>& x,
                           const ModelVector& m) {
  const NetConfig& c = b.config;
  long d = c.full_dim(), k = c.mdn_components;
  Tensor out = forward_head_row(b, x, true, &m);
  long strict = d * (d - 1) / 2;
  long per = 2 * d + strict;
  RawMixture mix;
  mix.weights = softmax_eager(out.data() + k * per, k);
  for (long ci = 0; ci < k; ++ci) {
    const double* row = out.data() + ci * per;
    Eigen::VectorXd mu(d);
    for (long j = 0; j < d; ++j) mu[j] = row[j];
    RowMat chol = RowMat::Zero(d, d);
    long p = d;
    for (long r = 1; r < d; ++r)
      for (long cc = 0; cc < r; ++cc) chol(r, cc) = row[p++];
    for (long j = 0; j < d; ++j)
      chol(j, j) = softplus_eager(row[d + strict + j] + kDiagShift) + kDiagFloor;
    mix.means.push_back(std::move(mu));
    mix.chols.push_back(std::move(chol));
  }
  return mix;
}

void check_m(const NetConfig& c, const ModelVector& m) {
  if (static_cast<long>(m.size()) != c.n_components)
    throw shape_error("model vector length " + std::to_string(m.size()) + ", expected " +
                      std::to_string(c.n_components));
  for (int v : m)
    if (v != 0 && v != 1) throw data_error("model vector entries must be 0/1");
}

// Rough count of tape-resident doubles one record contributes through the
// embedding, used to size gradient-accumulation chunks.
long tape_cost_per_record(const EmbedConfig& e) {
  switch (e.kind) {
    case EmbedKind::Identity:
      return 2 * e.features;
    case EmbedKind::ConvSeq: {
      long cost = 2 * e.seq_len;
      long len = e.seq_len, ch = 1;
      for (size_t i = 0; i < e.conv_channels.size(); ++i) {
        ch = e.conv_channels[i];
        len -= e.kernel - 1;
        cost += 2 * ch * len;
      }
      cost += ch * len;
      for (long f : e.fc_dims) cost += 2 * f;
      return cost;
    }
    case EmbedKind::TrialSet: {
      long per_trial = e.trial_features;
      for (long f : e.trial_dims) per_trial += 2 * f;
      long cost = e.set_size * per_trial;
      for (long f : e.fc_dims) cost += 2 * f;
      return cost;
    }
  }
  return 1;
}

}  // namespace

long EmbedConfig::out_dim() const {
  switch (kind) {
    case EmbedKind::Identity:
      return features;
    default:
      return fc_dims.back();
  }
}

long EmbedConfig::x_dim() const {
  switch (kind) {
    case EmbedKind::Identity:
      return features;
    case EmbedKind::ConvSeq:
      return seq_len;
    case EmbedKind::TrialSet:
      return set_size * trial_features;
  }
  return 0;
}

long EmbedConfig::feature_period() const {
  return kind == EmbedKind::TrialSet ? trial_features : x_dim();
}

long NetConfig::full_dim() const {
  long d = 0;
  for (long v : component_dims) d += v;
  return d;
}

std::vector<long> NetConfig::active_indices(const ModelVector& m) const {
  std::vector<long> idx;
  long off = 0;
  for (size_t i = 0; i < component_dims.size(); ++i) {
    if (m[i])
      for (long j = 0; j < component_dims[i]; ++j) idx.push_back(off + j);
    off += component_dims[i];
  }
  return idx;
}

void NetConfig::validate() const {
  if (n_components <= 0) throw config_error("net config: n_components must be positive");
  if (static_cast<long>(component_dims.size()) != n_components)
    throw config_error("net config: component_dims size mismatch");
  for (long v : component_dims)
    if (v < 0) throw config_error("net config: negative component dimension");
  if (mogr_layers <= 0 || mogr_width <= 0 || mogr_components <= 0 || mdn_layers <= 0 ||
      mdn_width <= 0 || mdn_components <= 0)
    throw config_error("net config: head sizes must be positive");
  const EmbedConfig& e = embed;
  switch (e.kind) {
    case EmbedKind::Identity:
      if (e.features <= 0) throw config_error("identity embedding needs features > 0");
      break;
    case EmbedKind::ConvSeq: {
      if (e.conv_channels.empty() || e.fc_dims.empty() || e.kernel <= 0)
        throw config_error("conv embedding needs channels, fc dims, and a kernel");
      long len = e.seq_len;
      for (size_t i = 0; i < e.conv_channels.size(); ++i) len -= e.kernel - 1;
      if (len <= 0) throw config_error("conv embedding: sequence shorter than kernels");
      break;
    }
    case EmbedKind::TrialSet:
      if (e.set_size <= 0 || e.trial_features <= 0 || e.trial_dims.empty() || e.fc_dims.empty())
        throw config_error("trial-set embedding needs set size, features, and dims");
      break;
  }
  if (model_head == ModelHead::Categorical && n_components >= 20)
    throw config_error("categorical model head supports at most 19 components (2^N table)");
}

long PosteriorBundle::param_index(const std::string& name) const {
  for (size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<long>(i);
  throw data_error("bundle has no parameter named " + name);
}

PosteriorBundle make_bundle(const NetConfig& config, Rng& rng,
                            const std::string& prior_fp) {
  config.validate();
  if (config.model_head == ModelHead::Categorical && config.n_components > 14)
    std::fprintf(stderr,
                 "warning: categorical model head over %ld components enumerates %ld models\n",
                 config.n_components, checked_pow2(config.n_components));
  PosteriorBundle b;
  b.config = config;
  b.prior_fingerprint = prior_fp;

  auto add = [&](const std::string& name, std::vector<long> shape, double std_dev) {
    Tensor t(shape);
    if (std_dev > 0.0)
      for (long i = 0; i < t.numel(); ++i) t.v[i] = rng.normal(0.0, std_dev);
    b.names.push_back(name);
    b.params.push_back(std::move(t));
  };
  auto add_mlp = [&](const std::string& stem, long in, const std::vector<long>& dims,
                     bool out_small) {
    for (size_t i = 0; i < dims.size(); ++i) {
      bool last = i + 1 == dims.size();
      double sd = (last && out_small) ? 1e-3 : std::sqrt(2.0 / static_cast<double>(in));
      add(stem + std::to_string(i) + ".w", {dims[i], in}, sd);
      add(stem + std::to_string(i) + ".b", {dims[i]}, 0.0);
      in = dims[i];
    }
  };

  const EmbedConfig& e = config.embed;
  long emb_in = 0;
  if (e.kind == EmbedKind::ConvSeq) {
    long in_ch = 1, len = e.seq_len;
    for (size_t i = 0; i < e.conv_channels.size(); ++i) {
      double sd = std::sqrt(2.0 / static_cast<double>(in_ch * e.kernel));
      add("embed.conv" + std::to_string(i) + ".w", {e.conv_channels[i], in_ch, e.kernel}, sd);
      add("embed.conv" + std::to_string(i) + ".b", {e.conv_channels[i]}, 0.0);
      in_ch = e.conv_channels[i];
      len -= e.kernel - 1;
    }
    add_mlp("embed.fc", in_ch * len, e.fc_dims, false);
    emb_in = e.fc_dims.back();
  } else if (e.kind == EmbedKind::TrialSet) {
    add_mlp("embed.trial", e.trial_features, e.trial_dims, false);
    add_mlp("embed.fc", e.trial_dims.back(), e.fc_dims, false);
    emb_in = e.fc_dims.back();
  } else {
    emb_in = e.features;
  }

  std::vector<long> mpn_dims(config.mogr_layers, config.mogr_width);
  mpn_dims.push_back(mpn_out_dim(config));
  add_mlp("mpn.trunk", emb_in, std::vector<long>(mpn_dims.begin(), mpn_dims.end() - 1), false);
  add("mpn.out.w", {mpn_dims.back(), config.mogr_width}, 1e-3);
  add("mpn.out.b", {mpn_dims.back()}, 0.0);

  std::vector<long> ppn_hidden(config.mdn_layers, config.mdn_width);
  add_mlp("ppn.trunk", emb_in + config.n_components, ppn_hidden, false);
  add("ppn.out.w", {ppn_out_dim(config), config.mdn_width}, 1e-3);
  add("ppn.out.b", {ppn_out_dim(config)}, 0.0);
  return b;
}

Var batch_loss_tape(Tape& tape, const PosteriorBundle& bundle,
                    const std::vector<const Record*>& rows, std::vector<Var>* param_vars) {
  if (rows.empty()) throw data_error("batch_loss_tape: empty batch");
  Layout l = layout_of(bundle);
  Leaves lv = make_leaves(tape, bundle, true);
  if (param_vars) *param_vars = lv.vars;

  Var e = embed_forward(tape, bundle, l, lv, batch_x_tensor(bundle, rows));
  Var model_lp = model_head_log_pmf(tape, bundle, l, lv, e, rows);
  Var total = tape.neg(tape.sum_all(model_lp));

  std::map<ModelVector, std::vector<long>> groups;
  for (size_t i = 0; i < rows.size(); ++i) {
    check_m(bundle.config, rows[i]->m);
    groups[rows[i]->m].push_back(static_cast<long>(i));
  }
  for (const auto& [m, idx] : groups) {
    if (bundle.config.active_indices(m).empty()) continue;
    std::vector<const Record*> sub;
    for (long i : idx) sub.push_back(rows[i]);
    Var eg = tape.take_rows(e, idx);
    Var lp = ppn_group_log_pdf(tape, bundle, l, lv, eg, m, sub);
    total = tape.sub(total, tape.sum_all(lp));
  }
  return total;
}

MoGrParams model_posterior_mogr(const PosteriorBundle& bundle, const std::vector<double>& x) {
  const NetConfig& c = bundle.config;
  if (c.model_head != ModelHead::MoGr)
    throw config_error("bundle uses the categorical model head");
  long n = c.n_components, k = c.mogr_components;
  Tensor out = forward_head_row(bundle, x, false, nullptr);
  MoGrParams mp;
  mp.alpha = softmax_eager(out.data() + k * 2 * n * n, k);
  for (long ci = 0; ci < k; ++ci) {
    UnconstrainedPair pair;
    pair.b_raw = ConstMatMap(out.data() + ci * 2 * n * n, n, n);
    pair.c_raw = ConstMatMap(out.data() + ci * 2 * n * n + n * n, n, n);
    mp.components.push_back(build_sigma(pair));
  }
  return mp;
}

double model_log_posterior(const PosteriorBundle& bundle, const std::vector<double>& x,
                           const ModelVector& m) {
  check_m(bundle.config, m);
  if (bundle.config.model_head == ModelHead::Categorical) {
    Tensor out = forward_head_row(bundle, x, false, nullptr);
    long k = out.numel();
    double mx = *std::max_element(out.v.begin(), out.v.end());
    double s = 0.0;
    for (long i = 0; i < k; ++i) s += std::exp(out.v[i] - mx);
    return out.v[model_index(m)] - mx - std::log(s);
  }
  std::vector<int> y(m.begin(), m.end());
  return mogr_log_pmf(model_posterior_mogr(bundle, x), y);
}

std::vector<double> model_log_posterior_all(const PosteriorBundle& bundle,
                                            const std::vector<double>& x) {
  long n = bundle.config.n_components;
  long count = checked_pow2(n);
  std::vector<double> out(count);
  if (bundle.config.model_head == ModelHead::Categorical) {
    Tensor row = forward_head_row(bundle, x, false, nullptr);
    double mx = *std::max_element(row.v.begin(), row.v.end());
    double s = 0.0;
    for (long i = 0; i < count; ++i) s += std::exp(row.v[i] - mx);
    double lz = mx + std::log(s);
    for (long i = 0; i < count; ++i) out[i] = row.v[i] - lz;
    return out;
  }
  MoGrParams mp = model_posterior_mogr(bundle, x);
  for (long i = 0; i < count; ++i) {
    ModelVector m = model_from_index(i, n);
    std::vector<int> y(m.begin(), m.end());
    out[i] = mogr_log_pmf(mp, y);
  }
  return out;
}

GaussianMixture ppn_mixture(const PosteriorBundle& bundle, const std::vector<double>& x,
                            const ModelVector& m) {
  check_m(bundle.config, m);
  long d = bundle.config.full_dim();
  RawMixture raw = raw_ppn_mixture(bundle, x, m);
  GaussianMixture mix;
  mix.weights = raw.weights;
  Eigen::VectorXd mu_shift = Eigen::VectorXd::Zero(d), scale = Eigen::VectorXd::Ones(d);
  if (!bundle.theta_mean.empty()) {
    mu_shift = ConstVecMap(bundle.theta_mean.data(), d);
    scale = ConstVecMap(bundle.theta_std.data(), d);
  }
  for (size_t c = 0; c < raw.means.size(); ++c) {
    Eigen::VectorXd mu = raw.means[c].cwiseProduct(scale) + mu_shift;
    RowMat cov = raw.chols[c] * raw.chols[c].transpose();
    cov = scale.asDiagonal() * cov * scale.asDiagonal();
    mix.means.push_back(std::move(mu));
    mix.covs.push_back(std::move(cov));
  }
  return mix;
}

double param_log_posterior(const PosteriorBundle& bundle, const std::vector<double>& x,
                           const ModelVector& m, const std::vector<double>& theta) {
  check_m(bundle.config, m);
  std::vector<long> act = bundle.config.active_indices(m);
  long na = static_cast<long>(act.size());
  if (static_cast<long>(theta.size()) != na)
    throw shape_error("theta length " + std::to_string(theta.size()) + ", model selects " +
                      std::to_string(na));
  if (na == 0) return 0.0;

  GaussianMixture mix = ppn_mixture(bundle, x, m);
  Eigen::VectorXd th = ConstVecMap(theta.data(), na);
  double best = -1e300;
  std::vector<double> terms(mix.weights.size());
  for (size_t c = 0; c < mix.weights.size(); ++c) {
    Eigen::VectorXd mu(na);
    RowMat cov(na, na);
    for (long i = 0; i < na; ++i) {
      mu[i] = mix.means[c][act[i]];
      for (long j = 0; j < na; ++j) cov(i, j) = mix.covs[c](act[i], act[j]);
    }
    Eigen::LLT<RowMat> llt(cov);
    if (llt.info() != Eigen::Success)
      throw numeric_error("parameter posterior covariance not positive definite");
    Eigen::VectorXd r = th - mu;
    double quad = r.dot(llt.solve(r));
    double ld = 0.0;
    for (long i = 0; i < na; ++i) ld += 2.0 * std::log(llt.matrixL()(i, i));
    terms[c] = std::log(mix.weights[c]) - 0.5 * (na * kLogTwoPi + ld + quad);
    best = std::max(best, terms[c]);
  }
  double s = 0.0;
  for (double v : terms) s += std::exp(v - best);
  return best + std::log(s);
}

std::vector<std::pair<ModelVector, std::vector<double>>> sample_joint(
    const PosteriorBundle& bundle, const std::vector<double>& x, long count, Rng& rng) {
  const NetConfig& c = bundle.config;
  std::vector<std::pair<ModelVector, std::vector<double>>> out;
  out.reserve(count);

  MoGrParams mp;
  std::vector<double> cat_probs;
  if (c.model_head == ModelHead::MoGr) {
    mp = model_posterior_mogr(bundle, x);
  } else {
    std::vector<double> lp = model_log_posterior_all(bundle, x);
    cat_probs.resize(lp.size());
    for (size_t i = 0; i < lp.size(); ++i) cat_probs[i] = std::exp(lp[i]);
  }

  struct CompDraw {
    std::vector<double> weights;
    std::vector<Eigen::VectorXd> mu;
    std::vector<RowMat> chol;
  };
  std::map<ModelVector, CompDraw> cache;

  for (long i = 0; i < count; ++i) {
    ModelVector m;
    if (c.model_head == ModelHead::MoGr) {
      std::vector<int> y = mogr_sample(mp, rng);
      m.assign(y.begin(), y.end());
    } else {
      m = model_from_index(rng.categorical(cat_probs), c.n_components);
    }
    std::vector<long> act = c.active_indices(m);
    long na = static_cast<long>(act.size());
    if (na == 0) {
      out.emplace_back(std::move(m), std::vector<double>{});
      continue;
    }
    auto it = cache.find(m);
    if (it == cache.end()) {
      GaussianMixture mix = ppn_mixture(bundle, x, m);
      CompDraw cd;
      cd.weights = mix.weights;
      for (size_t cc = 0; cc < mix.weights.size(); ++cc) {
        Eigen::VectorXd mu(na);
        RowMat cov(na, na);
        for (long a = 0; a < na; ++a) {
          mu[a] = mix.means[cc][act[a]];
          for (long bb = 0; bb < na; ++bb) cov(a, bb) = mix.covs[cc](act[a], act[bb]);
        }
        Eigen::LLT<RowMat> llt(cov);
        if (llt.info() != Eigen::Success)
          throw numeric_error("parameter posterior covariance not positive definite");
        cd.mu.push_back(std::move(mu));
        cd.chol.emplace_back(llt.matrixL());
      }
      it = cache.emplace(m, std::move(cd)).first;
    }
    const CompDraw& cd = it->second;
    int comp = rng.categorical(cd.weights);
    Eigen::VectorXd z(na);
    for (long a = 0; a < na; ++a) z[a] = rng.normal();
    Eigen::VectorXd th = cd.mu[comp] + cd.chol[comp] * z;
    out.emplace_back(std::move(m), std::vector<double>(th.data(), th.data() + na));
  }
  return out;
}

long model_index(const ModelVector& m) {
  long idx = 0;
  for (size_t i = 0; i < m.size(); ++i)
    if (m[i]) idx |= 1L << i;
  return idx;
}

ModelVector model_from_index(long index, long n) {
  ModelVector m(n, 0);
  for (long i = 0; i < n; ++i) m[i] = (index >> i) & 1 ? 1 : 0;
  return m;
}

TrainReport train(PosteriorBundle& bundle, const Dataset& data, const TrainConfig& config) {
  const NetConfig& nc = bundle.config;
  long n = static_cast<long>(data.records.size());
  if (n < 2) throw data_error("training needs at least two records");
  if (config.batch_size <= 0 || config.patience <= 0 || config.val_fraction <= 0.0 ||
      config.val_fraction >= 1.0)
    throw config_error("invalid training configuration");
  if (data.x_dim != nc.embed.x_dim())
    throw shape_error("dataset x dimension " + std::to_string(data.x_dim) +
                      " does not match the embedding");

  std::vector<long> order(n);
  for (long i = 0; i < n; ++i) order[i] = i;
  Rng split_rng(derive_seed(config.seed, 1));
  split_rng.shuffle(order);
  long n_val = std::max<long>(1, std::lround(config.val_fraction * n));
  if (n_val >= n) n_val = n - 1;
  std::vector<long> val_idx(order.begin(), order.begin() + n_val);
  std::vector<long> train_idx(order.begin() + n_val, order.end());

  // z-scoring constants from the training split.
  long period = nc.embed.feature_period();
  long d = nc.full_dim();
  std::vector<double> xm(period, 0.0), xs(period, 0.0);
  std::vector<double> tm(d, 0.0), ts(d, 0.0);
  std::vector<long> xn(period, 0), tn(d, 0);
  for (long i : train_idx) {
    const Record& r = data.records[i];
    for (size_t j = 0; j < r.x.size(); ++j) {
      long f = static_cast<long>(j) % period;
      xm[f] += r.x[j];
      ++xn[f];
    }
    std::vector<long> act = nc.active_indices(r.m);
    for (size_t j = 0; j < act.size(); ++j) {
      tm[act[j]] += r.theta[j];
      ++tn[act[j]];
    }
  }
  for (long f = 0; f < period; ++f) xm[f] = xn[f] ? xm[f] / xn[f] : 0.0;
  for (long j = 0; j < d; ++j) tm[j] = tn[j] ? tm[j] / tn[j] : 0.0;
  for (long i : train_idx) {
    const Record& r = data.records[i];
    for (size_t j = 0; j < r.x.size(); ++j) {
      long f = static_cast<long>(j) % period;
      xs[f] += (r.x[j] - xm[f]) * (r.x[j] - xm[f]);
    }
    std::vector<long> act = nc.active_indices(r.m);
    for (size_t j = 0; j < act.size(); ++j)
      ts[act[j]] += (r.theta[j] - tm[act[j]]) * (r.theta[j] - tm[act[j]]);
  }
  for (long f = 0; f < period; ++f) {
    xs[f] = xn[f] > 1 ? std::sqrt(xs[f] / (xn[f] - 1)) : 0.0;
    if (xs[f] < 1e-8) xs[f] = 1.0;
  }
  for (long j = 0; j < d; ++j) {
    ts[j] = tn[j] > 1 ? std::sqrt(ts[j] / (tn[j] - 1)) : 0.0;
    if (ts[j] < 1e-8) ts[j] = 1.0;
  }
  bundle.x_mean = xm;
  bundle.x_std = xs;
  bundle.theta_mean = tm;
  bundle.theta_std = ts;

  // Chunk so values plus gradients stay near half a gigabyte per tape.
  long chunk_cap = std::max<long>(1, 30000000 / tape_cost_per_record(nc.embed));

  auto eval_loss = [&](const std::vector<long>& idx) {
    double total = 0.0;
    for (size_t at = 0; at < idx.size(); at += chunk_cap) {
      size_t hi = std::min(idx.size(), at + chunk_cap);
      std::vector<const Record*> rows;
      rows.reserve(hi - at);
      for (size_t i = at; i < hi; ++i) rows.push_back(&data.records[idx[i]]);
      Tape t;
      total += t.val(batch_loss_tape(t, bundle, rows, nullptr))(0);
    }
    return total / static_cast<double>(idx.size());
  };

  std::vector<Tensor*> param_ptrs;
  for (Tensor& p : bundle.params) param_ptrs.push_back(&p);
  Adam adam(param_ptrs, AdamConfig{config.lr, 0.9, 0.999, 1e-8});

  std::vector<Tensor> best = bundle.params;
  double best_val = 1e300;
  long no_improve = 0;
  TrainReport report;
  Rng epoch_rng(derive_seed(config.seed, 2));
  bool budget_hit = false;

  auto diverged = [&](const char* where) {
    bundle.params = best;
    throw numeric_error(std::string("training diverged (non-finite ") + where +
                        " loss); best checkpoint retained");
  };

  for (long epoch = 0; epoch < config.max_epochs && !budget_hit; ++epoch) {
    epoch_rng.shuffle(train_idx);
    for (size_t at = 0; at < train_idx.size(); at += config.batch_size) {
      size_t hi = std::min(train_idx.size(), at + config.batch_size);
      long bsize = static_cast<long>(hi - at);

      std::vector<Tensor> acc(bundle.params.size());
      for (size_t i = 0; i < acc.size(); ++i) acc[i].resize(bundle.params[i].shape(), 0.0);
      double batch_loss = 0.0;
      for (size_t cat = at; cat < hi; cat += chunk_cap) {
        size_t chi = std::min(hi, cat + chunk_cap);
        std::vector<const Record*> rows;
        rows.reserve(chi - cat);
        for (size_t i = cat; i < chi; ++i) rows.push_back(&data.records[train_idx[i]]);
        Tape t;
        std::vector<Var> pv;
        Var loss = batch_loss_tape(t, bundle, rows, &pv);
        double lv = t.val(loss)(0);
        if (!std::isfinite(lv)) diverged("training");
        batch_loss += lv;
        t.backward(loss);
        for (size_t i = 0; i < pv.size(); ++i)
          if (t.has_grad(pv[i])) acc[i].vec() += t.grad(pv[i]).vec();
      }
      double inv = 1.0 / static_cast<double>(bsize);
      std::vector<Tensor*> gptr(acc.size());
      for (size_t i = 0; i < acc.size(); ++i) {
        acc[i].vec() *= inv;
        gptr[i] = &acc[i];
      }
      clip_grad_norm(gptr, config.grad_clip);
      std::vector<const Tensor*> cg(gptr.begin(), gptr.end());
      adam.step(cg);
      ++report.steps;
      if (config.max_steps > 0 && report.steps >= config.max_steps) {
        budget_hit = true;
        break;
      }
    }

    double val = eval_loss(val_idx);
    if (!std::isfinite(val)) diverged("validation");
    ++report.epochs;
    report.val_history.push_back(val);
    if (val < best_val) {
      best_val = val;
      best = bundle.params;
      no_improve = 0;
    } else {
      ++no_improve;
    }
    report.best_val_history.push_back(best_val);
    if (config.verbose)
      std::fprintf(stderr, "epoch %ld val %.6f best %.6f\n", epoch, val, best_val);
    if (no_improve >= config.patience) {
      report.stopped_early = true;
      break;
    }
  }

  bundle.params = best;
  return report;
}

}  // namespace compinfer
