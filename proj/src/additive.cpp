#include <cmath>

#include "compinfer/errors.hpp"
#include "compinfer/simulators.hpp"

namespace compinfer {

namespace {

struct Component {
  const char* name;
  int dim;
  bool noise;
  double (*mean)(const double* th, double t);  // deterministic terms
  double (*scale)(double t);                   // noise factor on a N(0, th[0]) draw
};

constexpr double kNoMean(const double*, double) { return 0.0; }
constexpr double kUnitScale(double) { return 1.0; }

const std::vector<Component>& table(AdditiveFamily f) {
  static const std::vector<Component> six = {
      {"l1", 1, false, [](const double* th, double t) { return th[0] * t; }, nullptr},
      {"l2", 1, false, [](const double* th, double t) { return th[0] * t; }, nullptr},
      {"q", 1, false, [](const double* th, double t) { return th[0] * t * t; }, nullptr},
      {"sin", 2, false,
       [](const double* th, double t) { return th[0] * std::sin(th[1] * t); }, nullptr},
      {"n1", 1, true, kNoMean, kUnitScale},
      {"n2", 1, true, kNoMean, [](double t) { return t + 1.0; }},
  };
  static const std::vector<Component> eleven = {
      six[0],
      six[1],
      {"q1", 1, false, [](const double* th, double t) { return th[0] * t * t; }, nullptr},
      {"q2", 1, false,
       [](const double* th, double t) { return (th[0] + t) * (th[0] + t); }, nullptr},
      {"cub", 1, false, [](const double* th, double t) { return th[0] * t * t * t; }, nullptr},
      six[3],
      {"cos", 2, false,
       [](const double* th, double t) { return th[0] * std::cos(th[1] * t); }, nullptr},
      {"const1", 1, false, [](const double* th, double) { return th[0]; }, nullptr},
      {"const2", 1, false, [](const double* th, double) { return th[0]; }, nullptr},
      six[4],
      six[5],
  };
  static const std::vector<Component> twenty = {
      eleven[0],
      eleven[1],
      eleven[2],
      eleven[3],
      eleven[4],
      eleven[5],
      eleven[6],
      eleven[7],
      eleven[8],
      {"tanh1", 2, false,
       [](const double* th, double t) { return th[0] * std::tanh(t - th[1]); }, nullptr},
      {"tanh2", 2, false,
       [](const double* th, double t) { return th[0] * std::tanh(th[1] - t); }, nullptr},
      {"g1", 2, false,
       [](const double* th, double t) { return th[0] * std::exp(-(t - th[1]) * (t - th[1])); },
       nullptr},
      {"g2", 2, false,
       [](const double* th, double t) {
         return th[0] * std::exp(-(t - th[1]) * (t - th[1]) / 8.0);
       },
       nullptr},
      {"relu1", 2, false,
       [](const double* th, double t) { return th[0] * std::max(t - th[1], 0.0); }, nullptr},
      {"relu2", 2, false,
       [](const double* th, double t) { return th[0] * std::max(th[1] - t, 0.0); }, nullptr},
      eleven[9],
      eleven[10],
      {"n3", 1, true, kNoMean, [](double t) { return 11.0 - t; }},
      {"n4", 1, true, kNoMean, [](double t) { return t * t + 1.0; }},
      {"n5", 1, true, kNoMean, [](double t) { return 11.0 - t * t; }},
  };
  switch (f) {
    case AdditiveFamily::Six: return six;
    case AdditiveFamily::Eleven: return eleven;
    default: return twenty;
  }
}

// Validates (m, theta) shapes and locates the noise component; returns the
// offset of each active component inside theta (-1 when inactive).
std::vector<long> layout(const std::vector<Component>& comps, const ModelVector& m,
                         const std::vector<double>& theta, int& noise_comp) {
  if (m.size() != comps.size()) throw shape_error("additive: model vector length mismatch");
  std::vector<long> off(comps.size(), -1);
  long used = 0;
  noise_comp = -1;
  for (size_t i = 0; i < comps.size(); ++i) {
    if (!m[i]) continue;
    off[i] = used;
    used += comps[i].dim;
    if (comps[i].noise) {
      if (noise_comp >= 0) throw data_error("additive: more than one noise component active");
      noise_comp = static_cast<int>(i);
    }
  }
  if (noise_comp < 0) throw data_error("additive: no noise component active");
  if (used != static_cast<long>(theta.size()))
    throw shape_error("additive: parameter vector length mismatch");
  return off;
}

}  // namespace

long additive_component_count(AdditiveFamily f) {
  return static_cast<long>(table(f).size());
}

long additive_component_dim(AdditiveFamily f, int comp) {
  const auto& comps = table(f);
  if (comp < 0 || comp >= static_cast<int>(comps.size()))
    throw shape_error("additive: component index out of range");
  return comps[comp].dim;
}

std::vector<double> additive_grid(long g) {
  if (g < 2) throw config_error("additive: grid needs at least two points");
  std::vector<double> t(g);
  for (long i = 0; i < g; ++i) t[i] = 10.0 * static_cast<double>(i) / static_cast<double>(g - 1);
  return t;
}

std::vector<double> additive_mean(AdditiveFamily f, const ModelVector& m,
                                  const std::vector<double>& theta, long grid) {
  const auto& comps = table(f);
  int noise_comp;
  std::vector<long> off = layout(comps, m, theta, noise_comp);
  std::vector<double> t = additive_grid(grid);
  std::vector<double> out(grid, 0.0);
  for (size_t i = 0; i < comps.size(); ++i) {
    if (off[i] < 0 || comps[i].noise) continue;
    const double* th = theta.data() + off[i];
    for (long g = 0; g < grid; ++g) out[g] += comps[i].mean(th, t[g]);
  }
  return out;
}

std::vector<double> additive_noise_std(AdditiveFamily f, const ModelVector& m,
                                       const std::vector<double>& theta, long grid) {
  const auto& comps = table(f);
  int noise_comp;
  std::vector<long> off = layout(comps, m, theta, noise_comp);
  double sd = theta[off[noise_comp]];
  if (!(sd > 0.0)) throw data_error("additive: noise std must be positive");
  std::vector<double> t = additive_grid(grid);
  std::vector<double> out(grid);
  for (long g = 0; g < grid; ++g) {
    out[g] = std::abs(comps[noise_comp].scale(t[g])) * sd;
    if (!(out[g] > 0.0)) throw data_error("additive: noise scale vanished on the grid");
  }
  return out;
}

std::vector<double> run_additive(AdditiveFamily f, const ModelVector& m,
                                 const std::vector<double>& theta, Rng& rng, long grid) {
  const auto& comps = table(f);
  int noise_comp;
  std::vector<long> off = layout(comps, m, theta, noise_comp);
  std::vector<double> x = additive_mean(f, m, theta, grid);
  std::vector<double> t = additive_grid(grid);
  double sd = theta[off[noise_comp]];
  if (!(sd > 0.0)) throw data_error("additive: noise std must be positive");
  for (long g = 0; g < grid; ++g) x[g] += comps[noise_comp].scale(t[g]) * rng.normal(0.0, sd);
  return x;
}

double additive_log_likelihood(AdditiveFamily f, const ModelVector& m,
                               const std::vector<double>& theta, const std::vector<double>& x,
                               long grid) {
  if (static_cast<long>(x.size()) != grid)
    throw shape_error("additive: observation length mismatch");
  std::vector<double> mean = additive_mean(f, m, theta, grid);
  std::vector<double> sd = additive_noise_std(f, m, theta, grid);
  constexpr double kLogTwoPi = 1.8378770664093454836;
  double ll = 0.0;
  for (long g = 0; g < grid; ++g) {
    double z = (x[g] - mean[g]) / sd[g];
    ll += -0.5 * z * z - std::log(sd[g]) - 0.5 * kLogTwoPi;
  }
  return ll;
}

}  // namespace compinfer
