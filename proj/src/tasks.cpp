#include "compinfer/tasks.hpp"

namespace compinfer {

namespace {

// Shared shape of the additive-family graphs: the walk picks exactly one
// noise term first, then moves through the fully connected deterministic
// block until it exits to end. Deterministic components come first in the
// component order, noise terms last, matching the documentation tables.
PriorGraph make_additive_graph(std::vector<std::string> det, std::vector<std::string> noise) {
  PriorGraph g;
  int nd = static_cast<int>(det.size());
  int nn = static_cast<int>(noise.size());
  g.n = nd + nn;
  g.names = std::move(det);
  for (auto& s : noise) g.names.push_back(std::move(s));
  g.weights = RowMat::Zero(g.n + 2, g.n + 2);
  int start = 0, end = g.n + 1;
  for (int k = 0; k < nn; ++k) g.weights(start, 1 + nd + k) = 1.0;
  for (int k = 0; k < nn; ++k)
    for (int i = 0; i < nd; ++i) g.weights(1 + nd + k, 1 + i) = 1.0;
  for (int i = 0; i < nd; ++i) {
    for (int j = 0; j < nd; ++j)
      if (i != j) g.weights(1 + i, 1 + j) = 1.0;
    g.weights(1 + i, end) = 1.0;
  }
  for (int i = 1; i <= g.n; ++i) g.rules.push_back({RewriteRule::KillIngoing, i, -1, 1.0});
  for (int a = 0; a < nn; ++a)
    for (int b = 0; b < nn; ++b)
      if (a != b)
        g.rules.push_back({RewriteRule::ExcludePair, 1 + nd + a, 1 + nd + b, 1.0});
  // The two interchangeable linear components discourage each other.
  g.rules.push_back({RewriteRule::ScalePair, 1, 2, 0.5});
  g.rules.push_back({RewriteRule::ScalePair, 2, 1, 0.5});
  for (int i = 1; i <= g.n; ++i) g.rules.push_back({RewriteRule::FavorEnd, i, -1, 2.0});
  g.validate();
  return g;
}

}  // namespace

PriorGraph additive6_graph() {
  return make_additive_graph({"l1", "l2", "q", "sin"}, {"n1", "n2"});
}

PriorGraph additive11_graph() {
  return make_additive_graph({"l1", "l2", "q1", "q2", "cub", "sin", "cos", "const1", "const2"},
                             {"n1", "n2"});
}

PriorGraph additive20_graph() {
  return make_additive_graph({"l1", "l2", "q1", "q2", "cub", "sin", "cos", "const1", "const2",
                              "tanh1", "tanh2", "g1", "g2", "relu1", "relu2"},
                             {"n1", "n2", "n3", "n4", "n5"});
}

ComponentPrior additive6_prior() {
  ComponentPrior p;
  p.intervals = {
      {{-2.0, 2.0}},            // l1: slope
      {{-2.0, 2.0}},            // l2: slope
      {{-0.5, 0.5}},            // q: curvature
      {{0.0, 5.0}, {0.5, 5.0}}, // sin: amplitude, frequency
      {{0.1, 2.0}},             // n1: constant noise std
      {{0.5, 2.0}},             // n2: time-scaled noise std
  };
  return p;
}

ComponentPrior additive11_prior() {
  ComponentPrior p;
  p.intervals = {
      {{-2.0, 2.0}},            // l1
      {{-2.0, 2.0}},            // l2
      {{-0.5, 0.5}},            // q1: theta * t^2
      {{-5.0, 0.0}},            // q2: (theta + t)^2
      {{-0.1, 0.1}},            // cub
      {{0.0, 5.0}, {0.5, 5.0}}, // sin
      {{0.0, 5.0}, {0.5, 5.0}}, // cos
      {{-5.0, 5.0}},            // const1
      {{0.0, 10.0}},            // const2
      {{0.1, 2.0}},             // n1
      {{0.5, 2.0}},             // n2
  };
  return p;
}

ComponentPrior additive20_prior() {
  ComponentPrior p;
  p.intervals = {
      {{-2.0, 2.0}},             // l1
      {{-2.0, 2.0}},             // l2
      {{-0.5, 0.5}},             // q1
      {{-5.0, 0.0}},             // q2
      {{-0.1, 0.1}},             // cub
      {{0.0, 5.0}, {0.5, 5.0}},  // sin
      {{0.0, 5.0}, {0.5, 5.0}},  // cos
      {{-5.0, 5.0}},             // const1
      {{0.0, 10.0}},             // const2
      {{1.0, 10.0}, {2.0, 8.0}}, // tanh1: theta1 * tanh(t - theta2)
      {{1.0, 10.0}, {2.0, 8.0}}, // tanh2: theta1 * tanh(theta2 - t)
      {{1.0, 10.0}, {2.0, 8.0}}, // g1: bump exp(-(t-theta2)^2)
      {{1.0, 10.0}, {2.0, 8.0}}, // g2: wide bump exp(-(t-theta2)^2/8)
      {{1.0, 5.0}, {2.0, 8.0}},  // relu1: hinge up
      {{1.0, 5.0}, {2.0, 8.0}},  // relu2: hinge down
      {{0.1, 2.0}},              // n1
      {{0.5, 2.0}},              // n2
      {{0.5, 2.0}},              // n3: (11 - t) scaled
      {{0.2, 1.0}},              // n4: (t^2 + 1) scaled
      {{0.2, 1.0}},              // n5: (11 - t^2) scaled
  };
  return p;
}

PriorGraph ddm_graph() {
  PriorGraph g;
  g.n = 5;
  g.names = {"d_c", "d_l", "b_c", "b_exp", "ndt"};
  g.weights = RowMat::Zero(7, 7);
  // start -> drift choice -> boundary choice -> ndt -> end
  g.weights(0, 1) = 1.0;
  g.weights(0, 2) = 1.0;
  g.weights(1, 3) = 1.0;
  g.weights(1, 4) = 1.0;
  g.weights(2, 3) = 1.0;
  g.weights(2, 4) = 1.0;
  g.weights(3, 5) = 1.0;
  g.weights(4, 5) = 1.0;
  g.weights(5, 6) = 1.0;
  for (int i = 1; i <= 5; ++i) g.rules.push_back({RewriteRule::KillIngoing, i, -1, 1.0});
  // Leaky drift with a constant boundary is discouraged by a factor of two.
  g.rules.push_back({RewriteRule::ScalePair, 2, 3, 0.5});
  g.validate();
  return g;
}

ComponentPrior ddm_prior() {
  ComponentPrior p;
  p.intervals = {
      {{0.0, 5.0}},                // d_c: constant drift
      {{0.0, 5.0}, {-20.0, -5.0}}, // d_l: drift, leak (negative)
      {{0.3, 2.0}},                // b_c: constant boundary
      {{0.3, 2.0}, {0.5, 1.5}},    // b_exp: level, collapse time constant
      {{0.1, 0.3}},                // ndt: non-decision time
  };
  return p;
}

PriorGraph hh_graph() {
  PriorGraph g;
  g.n = 6;
  g.names = {"I_L", "K", "K_m", "Na", "Ca", "Noise"};
  g.weights = RowMat::Zero(8, 8);
  // start -> leak -> K -> {Na | K_m | Ca} ... -> Na -> noise -> end.
  // All weights one except K -> Na, so that models with extra channels stay
  // likely; Na and K are present in every walk.
  g.weights(0, 1) = 1.0;
  g.weights(1, 2) = 1.0;
  g.weights(2, 4) = 1.0 / 3.0;
  g.weights(2, 3) = 1.0;
  g.weights(2, 5) = 1.0;
  g.weights(3, 4) = 1.0;
  g.weights(3, 5) = 1.0;
  g.weights(5, 4) = 1.0;
  g.weights(5, 3) = 1.0;
  g.weights(4, 6) = 1.0;
  g.weights(6, 7) = 1.0;
  for (int i = 1; i <= 6; ++i) g.rules.push_back({RewriteRule::KillIngoing, i, -1, 1.0});
  g.validate();
  return g;
}

ComponentPrior hh_prior() {
  ComponentPrior p;
  // Conductances in S/cm^2 (converted by the simulator), potentials in mV,
  // time constants in ms.
  p.intervals = {
      {{1e-6, 3e-4}, {-80.0, -60.0}},    // I_L: g_L, E_L
      {{1.5e-3, 1.5e-2}, {-70.0, -50.0}},// K: g_K, V_t
      {{1e-5, 6e-4}, {200.0, 2000.0}},   // K_m: g_M, tau_max
      {{8e-3, 8e-2}},                    // Na: g_Na
      {{5e-5, 1e-3}},                    // Ca: g_Ca
      {{1e-4, 0.15}},                    // Noise: sigma
  };
  return p;
}

}  // namespace compinfer
