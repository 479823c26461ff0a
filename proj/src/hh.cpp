#include <algorithm>
#include <cmath>

#include "compinfer/errors.hpp"
#include "compinfer/simulators.hpp"

namespace compinfer {

namespace {

// x / (exp(x) - 1) with its removable singularity at 0 filled in.
double expm1_ratio(double x) {
  if (std::abs(x) < 1e-7) return 1.0 - 0.5 * x;
  return x / std::expm1(x);
}

struct Gate {
  double inf;
  double tau;
};

// Kinetics of the transient sodium and delayed-rectifier potassium gates,
// shifted by the threshold parameter vt.
Gate gate_m(double v, double vt) {
  double a = 1.28 * expm1_ratio(-(v - vt - 13.0) / 4.0);
  double b = 1.4 * expm1_ratio((v - vt - 40.0) / 5.0);
  return {a / (a + b), 1.0 / (a + b)};
}
Gate gate_h(double v, double vt) {
  double a = 0.128 * std::exp(-(v - vt - 17.0) / 18.0);
  double b = 4.0 / (1.0 + std::exp(-(v - vt - 40.0) / 5.0));
  return {a / (a + b), 1.0 / (a + b)};
}
Gate gate_n(double v, double vt) {
  double a = 0.16 * expm1_ratio(-(v - vt - 15.0) / 5.0);
  double b = 0.5 * std::exp(-(v - vt - 10.0) / 40.0);
  return {a / (a + b), 1.0 / (a + b)};
}

// Slow non-inactivating potassium gate; tau_max is a free parameter.
Gate gate_p(double v, double tau_max) {
  double inf = 1.0 / (1.0 + std::exp(-(v + 35.0) / 10.0));
  double tau = tau_max / (3.3 * std::exp((v + 35.0) / 20.0) + std::exp(-(v + 35.0) / 20.0));
  return {inf, tau};
}

// High-threshold calcium activation/inactivation.
Gate gate_q(double v) {
  double a = 0.209 * expm1_ratio((-27.0 - v) / 3.8);
  double b = 0.94 * std::exp((-75.0 - v) / 17.0);
  return {a / (a + b), 1.0 / (a + b)};
}
Gate gate_r(double v) {
  double a = 0.000457 * std::exp((-13.0 - v) / 50.0);
  double b = 0.0065 / (std::exp((-15.0 - v) / 28.0) + 1.0);
  return {a / (a + b), 1.0 / (a + b)};
}

double step_gate(double s, const Gate& g, double dt) {
  return g.inf + (s - g.inf) * std::exp(-dt / g.tau);
}

}  // namespace

HhTrace run_hh(const ModelVector& m, const std::vector<double>& theta, Rng& rng,
               const HhConfig& cfg) {
  if (m.size() != 6) throw shape_error("hh: model vector length mismatch");
  if (!m[1] || !m[3]) throw data_error("hh: K and Na channels are mandatory");
  long want = 2 * m[0] + 2 * m[1] + 2 * m[2] + m[3] + m[4] + m[5];
  if (static_cast<long>(theta.size()) != want)
    throw shape_error("hh: parameter vector length mismatch");
  if (cfg.dt <= 0.0 || cfg.t_total <= cfg.dt) throw config_error("hh: invalid configuration");

  // Conductance priors are in S/cm^2; the dynamics run in mS/cm^2, mV, ms.
  long pos = 0;
  double g_l = 0.0, e_l = -70.0;
  if (m[0]) {
    g_l = 1e3 * theta[pos++];
    e_l = theta[pos++];
  }
  double g_k = 1e3 * theta[pos++];
  double vt = theta[pos++];
  double g_m = 0.0, tau_max = 1000.0;
  if (m[2]) {
    g_m = 1e3 * theta[pos++];
    tau_max = theta[pos++];
  }
  double g_na = 1e3 * theta[pos++];
  double g_ca = m[4] ? 1e3 * theta[pos++] : 0.0;
  double sigma = m[5] ? theta[pos++] : 0.0;

  const double e_na = 50.0, e_k = -90.0, e_ca = 120.0;

  double v = e_l;
  double gm_ = gate_m(v, vt).inf, gh = gate_h(v, vt).inf, gn = gate_n(v, vt).inf;
  double gp = gate_p(v, tau_max).inf, gq = gate_q(v).inf, gr = gate_r(v).inf;

  long steps = static_cast<long>(std::llround(cfg.t_total / cfg.dt));
  HhTrace tr;
  tr.dt = cfg.dt;
  tr.stim_on = cfg.stim_on;
  tr.stim_off = cfg.stim_off;
  tr.v.reserve(steps + 1);
  tr.v.push_back(v);

  auto track = [&tr](double s) {
    tr.gate_min = std::min(tr.gate_min, s);
    tr.gate_max = std::max(tr.gate_max, s);
  };
  track(gm_);
  track(gh);
  track(gn);
  if (m[2]) track(gp);
  if (m[4]) {
    track(gq);
    track(gr);
  }

  for (long k = 1; k <= steps; ++k) {
    double t_prev = static_cast<double>(k - 1) * cfg.dt;
    double inj = (t_prev >= cfg.stim_on && t_prev < cfg.stim_off) ? cfg.stim_amp : 0.0;

    gm_ = step_gate(gm_, gate_m(v, vt), cfg.dt);
    gh = step_gate(gh, gate_h(v, vt), cfg.dt);
    gn = step_gate(gn, gate_n(v, vt), cfg.dt);
    track(gm_);
    track(gh);
    track(gn);
    if (m[2]) {
      gp = step_gate(gp, gate_p(v, tau_max), cfg.dt);
      track(gp);
    }
    if (m[4]) {
      gq = step_gate(gq, gate_q(v), cfg.dt);
      gr = step_gate(gr, gate_r(v), cfg.dt);
      track(gq);
      track(gr);
    }

    double current = g_l * (e_l - v) + g_na * gm_ * gm_ * gm_ * gh * (e_na - v) +
                     g_k * gn * gn * gn * gn * (e_k - v) + g_m * gp * (e_k - v) +
                     g_ca * gq * gq * gr * (e_ca - v);
    double noise = sigma > 0.0 ? sigma * rng.normal() : 0.0;
    v += cfg.dt * (current + inj + noise);
    if (!std::isfinite(v)) throw numeric_error("hh: voltage diverged");
    tr.v.push_back(v);
  }
  return tr;
}

namespace {

struct Spike {
  long peak_idx;
  double peak_v;
  double width_ms;  // time spent above the detection level
};

// Upward crossings of the detection level; the spike time is the voltage peak
// before the trace falls back below the level.
std::vector<Spike> find_spikes(const std::vector<double>& v, double dt, double level = -20.0) {
  std::vector<Spike> out;
  size_t i = 1;
  while (i < v.size()) {
    if (v[i - 1] < level && v[i] >= level) {
      size_t j = i;
      long peak = static_cast<long>(i);
      while (j < v.size() && v[j] >= level) {
        if (v[j] > v[peak]) peak = static_cast<long>(j);
        ++j;
      }
      out.push_back({peak, v[peak], static_cast<double>(j - i) * dt});
      i = j;
    } else {
      ++i;
    }
  }
  return out;
}

double mean_of(const std::vector<double>& x, long lo, long hi) {  // [lo, hi)
  double s = 0.0;
  for (long i = lo; i < hi; ++i) s += x[i];
  return s / static_cast<double>(hi - lo);
}

double std_of(const std::vector<double>& x, long lo, long hi) {
  double mu = mean_of(x, lo, hi);
  double s = 0.0;
  for (long i = lo; i < hi; ++i) s += (x[i] - mu) * (x[i] - mu);
  return std::sqrt(s / static_cast<double>(hi - lo));
}

}  // namespace

std::vector<double> hh_summary(const HhTrace& tr) {
  const std::vector<double>& v = tr.v;
  double dt = tr.dt;
  long n = static_cast<long>(v.size());
  long on = static_cast<long>(std::llround(tr.stim_on / dt));
  long off = static_cast<long>(std::llround(tr.stim_off / dt));
  on = std::clamp(on, 1L, n - 2);
  off = std::clamp(off, on + 1, n - 1);
  double stim_len = static_cast<double>(off - on) * dt;

  std::vector<Spike> spikes = find_spikes(v, dt);
  std::vector<Spike> stim_spikes;
  for (const Spike& s : spikes)
    if (s.peak_idx >= on && s.peak_idx < off) stim_spikes.push_back(s);

  std::vector<double> isi;
  for (size_t i = 1; i < stim_spikes.size(); ++i)
    isi.push_back(static_cast<double>(stim_spikes[i].peak_idx - stim_spikes[i - 1].peak_idx) *
                  dt);

  double rest_mean = mean_of(v, 0, on);
  double rest_std = std_of(v, 0, on);
  double stim_mean = mean_of(v, on, off);
  double stim_std = std_of(v, on, off);
  double post_mean = mean_of(v, off, n);
  double post_std = std_of(v, off, n);

  std::vector<double> s(kHhSummaryDim);
  s[0] = static_cast<double>(stim_spikes.size());
  s[1] = stim_spikes.empty()
             ? stim_len
             : static_cast<double>(stim_spikes.front().peak_idx - on) * dt;
  s[2] = stim_spikes.empty()
             ? stim_len
             : static_cast<double>(off - stim_spikes.back().peak_idx) * dt;

  if (isi.empty()) {
    s[3] = stim_len;
    s[4] = 0.0;
    s[5] = 1.0;
  } else {
    double mu = 0.0;
    for (double x : isi) mu += x;
    mu /= static_cast<double>(isi.size());
    double var = 0.0;
    for (double x : isi) var += (x - mu) * (x - mu);
    var /= static_cast<double>(isi.size());
    s[3] = mu;
    s[4] = mu > 0.0 ? std::sqrt(var) / mu : 0.0;
    s[5] = isi.front() > 0.0 ? isi.back() / isi.front() : 1.0;
  }

  if (stim_spikes.empty()) {
    double vmax = *std::max_element(v.begin() + on, v.begin() + off);
    s[6] = vmax;
    s[7] = 0.0;
    s[8] = 0.0;
    s[9] = stim_mean;
  } else {
    double mu = 0.0, w = 0.0;
    for (const Spike& sp : stim_spikes) {
      mu += sp.peak_v;
      w += sp.width_ms;
    }
    mu /= static_cast<double>(stim_spikes.size());
    w /= static_cast<double>(stim_spikes.size());
    double var = 0.0;
    for (const Spike& sp : stim_spikes) var += (sp.peak_v - mu) * (sp.peak_v - mu);
    s[6] = mu;
    s[7] = std::sqrt(var / static_cast<double>(stim_spikes.size()));
    s[8] = w;
    double ahp = 0.0;
    if (stim_spikes.size() < 2) {
      ahp = stim_mean;
    } else {
      for (size_t i = 1; i < stim_spikes.size(); ++i)
        ahp += *std::min_element(v.begin() + stim_spikes[i - 1].peak_idx,
                                 v.begin() + stim_spikes[i].peak_idx);
      ahp /= static_cast<double>(stim_spikes.size() - 1);
    }
    s[9] = ahp;
  }

  s[10] = rest_mean;
  s[11] = rest_std;
  s[12] = stim_mean;
  s[13] = stim_std;
  s[14] = post_mean;
  s[15] = post_std;
  s[16] = *std::min_element(v.begin() + off, v.end()) - rest_mean;
  s[17] = *std::max_element(v.begin(), v.end());
  s[18] = *std::min_element(v.begin(), v.end());
  long tail = std::max(on, off - static_cast<long>(std::llround(100.0 / dt)));
  s[19] = mean_of(v, tail, off) - rest_mean;

  double dsum = 0.0, dsq = 0.0;
  for (long i = on + 1; i < off; ++i) {
    double d = std::abs(v[i] - v[i - 1]) / dt;
    dsum += d;
    dsq += d * d;
  }
  double dcount = static_cast<double>(off - on - 1);
  s[20] = dsum / dcount;
  s[21] = std::sqrt(std::max(dsq / dcount - s[20] * s[20], 0.0));

  long mid = on + (off - on) / 2;
  double early = 0.0, late = 0.0;
  for (const Spike& sp : stim_spikes) (sp.peak_idx < mid ? early : late) += 1.0;
  double half_s = stim_len / 2000.0;  // ms -> s
  s[22] = late / half_s;
  s[23] = (late - early) / half_s;

  for (double x : s)
    if (!std::isfinite(x)) throw numeric_error("hh_summary: non-finite statistic");
  return s;
}

}  // namespace compinfer
