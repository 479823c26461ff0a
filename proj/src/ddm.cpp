#include <cmath>

#include "compinfer/errors.hpp"
#include "compinfer/simulators.hpp"

namespace compinfer {

RowMat run_ddm(const ModelVector& m, const std::vector<double>& theta, Rng& rng,
               const DdmConfig& cfg) {
  if (m.size() != 5) throw shape_error("ddm: model vector length mismatch");
  if (m[0] + m[1] != 1) throw data_error("ddm: need exactly one drift component");
  if (m[2] + m[3] != 1) throw data_error("ddm: need exactly one boundary component");
  if (!m[4]) throw data_error("ddm: non-decision time is mandatory");
  long want = (m[0] ? 1 : 2) + (m[2] ? 1 : 2) + 1;
  if (static_cast<long>(theta.size()) != want)
    throw shape_error("ddm: parameter vector length mismatch");
  if (cfg.trials < 1 || cfg.dt <= 0.0 || cfg.t_max <= cfg.dt)
    throw config_error("ddm: invalid simulation configuration");

  long pos = 0;
  double d1 = theta[pos++];
  double d2 = m[1] ? theta[pos++] : 0.0;
  double b1 = theta[pos++];
  double b2 = m[3] ? theta[pos++] : 0.0;
  double ndt = theta[pos];
  bool leaky = m[1] == 1;
  bool collapsing = m[3] == 1;

  double sq = std::sqrt(cfg.dt);
  long steps = static_cast<long>(std::floor(cfg.t_max / cfg.dt + 1e-9));
  RowMat out(cfg.trials, 2);
  for (long i = 0; i < cfg.trials; ++i) {
    double z = 0.0;
    out(i, 0) = cfg.t_max;
    out(i, 1) = 0.0;
    for (long k = 1; k <= steps; ++k) {
      double drift = leaky ? d1 + d2 * z : d1;
      z += drift * cfg.dt + sq * rng.normal();
      double t = static_cast<double>(k) * cfg.dt;
      double bound = collapsing ? b1 - std::exp(-t / b2) : b1;
      if (std::abs(z) >= bound) {
        out(i, 0) = t + ndt;
        out(i, 1) = z >= 0.0 ? 1.0 : -1.0;
        break;
      }
    }
  }
  return out;
}

long ddm_undecided_count(const RowMat& trials) {
  long c = 0;
  for (long i = 0; i < trials.rows(); ++i)
    if (trials(i, 1) == 0.0) ++c;
  return c;
}

}  // namespace compinfer
