#pragma once

// Independent reference implementations shared by the unit tests and the acceptance binary.
// Nothing here calls into the code under test except to obtain the values being checked.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "tpose/agent/ppo.hpp"
#include "tpose/agent/recurrent.hpp"
#include "tpose/belief/filter.hpp"
#include "tpose/numcore.hpp"
#include "tpose/obsmodel/model.hpp"
#include "tpose/rng.hpp"

namespace tpose::oracle {

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

/// Uniform values in [lo, hi] with |v| >= gap, so relu/clamp/min kinks stay out of reach of the difference step.
inline nc::Tensor random_tensor(nc::Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, double gap = 0.0) {
  nc::Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.raw()) {
    do {
      v = u(rng);
    } while (std::abs(v) < gap);
  }
  return t;
}

inline std::vector<double> random_vector(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

/// Rows drawn from a mix of flat, peaked, and near-zero shapes.
inline belief::Likelihood random_likelihood(std::size_t n, std::size_t d, Rng& rng) {
  belief::Likelihood l(n, d);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t kind = uniform_index(rng, 3);
    const std::size_t peak = uniform_index(rng, d);
    for (std::size_t j = 0; j < d; ++j) {
      double v = u(rng);
      if (kind == 1) v = j == peak ? 1.0 : 0.05 * v;
      if (kind == 2) v *= 1e-6;
      l.at(i, j) = v;
    }
  }
  return l;
}

inline belief::DeltaAction random_action(std::size_t n, Rng& rng) {
  std::vector<int> deltas(n);
  for (auto& v : deltas) v = static_cast<int>(uniform_index(rng, belief::kMovesPerDim)) - belief::kMaxDelta;
  return belief::DeltaAction(std::move(deltas));
}

// ---------------------------------------------------------------------------
// Explicit Bayes filters
// ---------------------------------------------------------------------------

/// Dense d x d matrix T[to][from] for one dimension's clamped shift.
inline std::vector<std::vector<double>> shift_matrix(std::size_t d, int delta) {
  std::vector<std::vector<double>> t(d, std::vector<double>(d, 0.0));
  for (std::size_t from = 0; from < d; ++from) {
    const int to = std::clamp(static_cast<int>(from) + delta, 0, static_cast<int>(d) - 1);
    t[static_cast<std::size_t>(to)][from] = 1.0;
  }
  return t;
}

/// One per-dimension step: b' = normalize(l .* (T b)); a row with total mass < 1e-300 becomes uniform.
inline std::vector<double> matrix_filter_step(const std::vector<double>& b, int delta, std::span<const double> l) {
  const std::size_t d = b.size();
  const auto t = shift_matrix(d, delta);
  std::vector<double> out(d, 0.0);
  double z = 0.0;
  for (std::size_t to = 0; to < d; ++to) {
    double prior = 0.0;
    for (std::size_t from = 0; from < d; ++from) prior += t[to][from] * b[from];
    out[to] = prior * l[to];
    z += out[to];
  }
  if (z < 1e-300) return std::vector<double>(d, 1.0 / static_cast<double>(d));
  for (auto& v : out) v /= z;
  return out;
}

/// Filter over the full joint grid (d^n cells) with the product likelihood; returns per-dimension marginals.
/// Only for small grids.
class JointFilter {
 public:
  JointFilter(std::size_t n, std::size_t d) : n_(n), d_(d), cells_(1) {
    for (std::size_t i = 0; i < n; ++i) cells_ *= d;
    p_.assign(cells_, 1.0 / static_cast<double>(cells_));
  }

  void step(const belief::DeltaAction& a, const belief::Likelihood& l) {
    std::vector<double> next(cells_, 0.0);
    for (std::size_t c = 0; c < cells_; ++c) {
      auto s = decode(c);
      for (std::size_t i = 0; i < n_; ++i) s[i] = std::clamp(s[i] + a[i], 0, static_cast<int>(d_) - 1);
      next[encode(s)] += p_[c];
    }
    update(next, l);
  }

  void update(std::vector<double> prior, const belief::Likelihood& l) {
    double z = 0.0;
    for (std::size_t c = 0; c < cells_; ++c) {
      const auto s = decode(c);
      double lik = 1.0;
      for (std::size_t i = 0; i < n_; ++i) lik *= l.at(i, static_cast<std::size_t>(s[i]));
      prior[c] *= lik;
      z += prior[c];
    }
    for (auto& v : prior) v /= z;
    p_ = std::move(prior);
  }

  void observe(const belief::Likelihood& l) { update(p_, l); }

  double marginal(std::size_t dim, std::size_t bin) const {
    double m = 0.0;
    for (std::size_t c = 0; c < cells_; ++c) {
      if (static_cast<std::size_t>(decode(c)[dim]) == bin) m += p_[c];
    }
    return m;
  }

 private:
  std::vector<int> decode(std::size_t c) const {
    std::vector<int> s(n_);
    for (std::size_t i = n_; i-- > 0;) {
      s[i] = static_cast<int>(c % d_);
      c /= d_;
    }
    return s;
  }
  std::size_t encode(const std::vector<int>& s) const {
    std::size_t c = 0;
    for (int v : s) c = c * d_ + static_cast<std::size_t>(v);
    return c;
  }

  std::size_t n_, d_, cells_;
  std::vector<double> p_;
};

struct FilterAgreement {
  std::size_t episodes = 0;
  std::size_t steps = 0;
  double max_abs_error = 0.0;
};

/// Runs `episodes` random episodes (n in {1,2,4}, d in {3,5,11}, random actions and likelihoods) through
/// belief::step and the per-dimension matrix filter, tracking the worst entry-wise difference.
inline FilterAgreement filter_vs_matrix_oracle(std::size_t episodes, std::size_t horizon, std::uint64_t seed) {
  Rng rng = make_rng(seed, 0xF117);
  const std::size_t ns[] = {1, 2, 4};
  const std::size_t ds[] = {3, 5, 11};
  FilterAgreement out;
  for (std::size_t e = 0; e < episodes; ++e) {
    belief::StateSpaceSpec spec;
    spec.n = ns[uniform_index(rng, 3)];
    spec.d = ds[uniform_index(rng, 3)];
    auto bel = belief::uniform_belief(spec);
    std::vector<std::vector<double>> ref(spec.n, std::vector<double>(spec.d, 1.0 / static_cast<double>(spec.d)));
    for (std::size_t t = 0; t < horizon; ++t) {
      const auto a = t == 0 ? belief::DeltaAction::zero(spec.n) : random_action(spec.n, rng);
      const auto l = random_likelihood(spec.n, spec.d, rng);
      bel = belief::step(bel, a, l);
      for (std::size_t i = 0; i < spec.n; ++i) {
        ref[i] = matrix_filter_step(ref[i], a[i], l.row(i));
        for (std::size_t j = 0; j < spec.d; ++j) {
          out.max_abs_error = std::max(out.max_abs_error, std::abs(bel.at(i, j) - ref[i][j]));
        }
      }
      ++out.steps;
    }
    ++out.episodes;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

inline constexpr double kGradTolerance = 1e-4;
inline constexpr double kGradStep = 1e-5;

struct GradCheck {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t scalars = 0;
  std::string worst;
};

/// Compares backward() against central differences for every parameter scalar.
/// rel = |a - n| / max(|a|, |n|, 1e-6); the floor keeps exact-zero gradients from dividing by zero.
inline GradCheck check_gradients(const std::string& name, nc::ModelParameters& params,
                                 const std::function<nc::Var(nc::Graph&)>& loss_fn, double h = kGradStep) {
  params.zero_grad();
  {
    nc::Graph g(params);
    g.backward(loss_fn(g));
  }
  GradCheck out;
  out.name = name;
  for (auto& e : params.entries()) {
    for (std::size_t k = 0; k < e.value.size(); ++k) {
      const double saved = e.value[k];
      auto eval = [&](double v) {
        e.value[k] = v;
        nc::Graph g(params);
        return g.value(loss_fn(g))[0];
      };
      const double numeric = (eval(saved + h) - eval(saved - h)) / (2.0 * h);
      e.value[k] = saved;
      const double analytic = e.grad[k];
      const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
      ++out.scalars;
      if (rel > out.max_rel_error) {
        out.max_rel_error = rel;
        out.worst = e.name + "[" + std::to_string(k) + "] analytic " + std::to_string(analytic) + " numeric " +
                    std::to_string(numeric);
      }
    }
  }
  params.zero_grad();
  return out;
}

/// The full randomized gradient suite: every differentiable op, the factored cross-entropy through the
/// observation network, the PPO objective through the policy network, and a GRU unrolled over 3 steps.
inline std::vector<GradCheck> gradient_suite(std::uint64_t seed) {
  Rng rng = make_rng(seed, 0x96AD);
  std::vector<GradCheck> out;

  // Each case owns its parameters; the projection weights are drawn once so the loss is a fixed function.
  auto unary_case = [&](const std::string& name, nc::Shape shape, double lo, double hi, double gap,
                        std::function<nc::Var(nc::Var)> f) {
    nc::ModelParameters p;
    p.add("x", random_tensor(shape, rng, lo, hi, gap));
    std::size_t out_size = 0;
    {
      nc::Graph g(p);
      out_size = g.value(f(g.param("x"))).size();
    }
    const auto w = random_vector(out_size, rng);
    out.push_back(check_gradients(name, p, [&](nc::Graph& g) { return nc::weighted_sum(f(g.param("x")), w); }));
  };
  unary_case("relu", {3, 4}, -1.0, 1.0, 0.05, [](nc::Var x) { return nc::relu(x); });
  unary_case("tanh", {3, 4}, -2.0, 2.0, 0.0, [](nc::Var x) { return nc::tanh(x); });
  unary_case("sigmoid", {3, 4}, -3.0, 3.0, 0.0, [](nc::Var x) { return nc::sigmoid(x); });
  unary_case("exp", {3, 4}, -1.0, 1.0, 0.0, [](nc::Var x) { return nc::exp(x); });
  unary_case("square", {3, 4}, -1.0, 1.0, 0.0, [](nc::Var x) { return nc::square(x); });
  unary_case("affine", {3, 4}, -1.0, 1.0, 0.0, [](nc::Var x) { return nc::affine(x, -1.7, 0.3); });
  {
    // Entries on both sides of each bound, none within 0.05 of it.
    nc::ModelParameters p;
    p.add("x", nc::Tensor({8}, {-0.9, -0.55, -0.42, -0.1, 0.05, 0.3, 0.44, 0.8}));
    const auto w = random_vector(8, rng);
    out.push_back(check_gradients("clamp", p, [&](nc::Graph& g) { return nc::weighted_sum(nc::clamp(g.param("x"), -0.5, 0.5), w); }));
  }
  unary_case("reshape", {3, 4}, -1.0, 1.0, 0.0, [](nc::Var x) { return nc::square(nc::reshape(x, {2, 6})); });
  unary_case("sum", {3, 4}, -1.0, 1.0, 0.0, [](nc::Var x) { return nc::square(nc::sum(x)); });
  unary_case("mean", {3, 4}, -1.0, 1.0, 0.0, [](nc::Var x) { return nc::square(nc::mean(x)); });
  unary_case("softmax", {3, 7}, -2.0, 2.0, 0.0, [](nc::Var x) { return nc::softmax(x, {3, 4}); });
  unary_case("log_softmax", {3, 7}, -2.0, 2.0, 0.0, [](nc::Var x) { return nc::log_softmax(x, {3, 4}); });
  unary_case("segment_entropy", {3, 7}, -2.0, 2.0, 0.0,
             [](nc::Var x) { return nc::segment_entropy(nc::log_softmax(x, {3, 4}), {3, 4}); });
  {
    const std::vector<std::size_t> choices = {0, 3, 2, 1, 1, 0};
    unary_case("pick_segments", {3, 7}, -2.0, 2.0, 0.0,
               [&](nc::Var x) { return nc::pick_segments(nc::log_softmax(x, {3, 4}), {3, 4}, choices); });
  }

  auto binary_case = [&](const std::string& name, std::function<nc::Var(nc::Var, nc::Var)> f, bool separated = false) {
    nc::ModelParameters p;
    auto a = random_tensor({3, 4}, rng);
    auto b = random_tensor({3, 4}, rng);
    if (separated) {
      // minimum: keep the operands at least 0.1 apart so no entry sits on the switch.
      for (std::size_t i = 0; i < a.size(); ++i) {
        if (std::abs(a[i] - b[i]) < 0.1) b[i] = a[i] + (i % 2 ? 0.2 : -0.2);
      }
    }
    p.add("a", std::move(a));
    p.add("b", std::move(b));
    std::size_t out_size = 0;
    {
      nc::Graph g(p);
      out_size = g.value(f(g.param("a"), g.param("b"))).size();
    }
    const auto w = random_vector(out_size, rng);
    out.push_back(check_gradients(name, p, [&](nc::Graph& g) { return nc::weighted_sum(f(g.param("a"), g.param("b")), w); }));
  };
  binary_case("add", [](nc::Var a, nc::Var b) { return nc::add(a, b); });
  binary_case("sub", [](nc::Var a, nc::Var b) { return nc::sub(a, b); });
  binary_case("mul", [](nc::Var a, nc::Var b) { return nc::mul(a, b); });
  binary_case("minimum", [](nc::Var a, nc::Var b) { return nc::minimum(a, b); }, true);
  binary_case("concat_cols", [](nc::Var a, nc::Var b) { return nc::square(nc::concat_cols(a, b)); });
  {
    nc::ModelParameters p;
    p.add("m", random_tensor({3, 4}, rng));
    const auto w = random_vector(12, rng);
    out.push_back(check_gradients("mul_add_chain", p, [&](nc::Graph& g) {
      auto m = g.param("m");
      return nc::weighted_sum(nc::mul(nc::add(m, nc::tanh(m)), nc::sub(m, nc::exp(m))), w);
    }));
  }

  {
    nc::ModelParameters p;
    p.add("x", random_tensor({3, 5}, rng));
    p.add("w", random_tensor({5, 4}, rng));
    p.add("b", random_tensor({4}, rng));
    const auto w = random_vector(12, rng);
    out.push_back(check_gradients("linear", p, [&](nc::Graph& g) {
      return nc::weighted_sum(nc::linear(g.param("x"), g.param("w"), g.param("b")), w);
    }));
  }
  {
    nc::ModelParameters p;
    p.add("x", random_tensor({2, 2, 5}, rng));
    p.add("k", random_tensor({3, 2, 3}, rng));
    p.add("b", random_tensor({3}, rng));
    const auto w = random_vector(30, rng);
    out.push_back(check_gradients("conv1d", p, [&](nc::Graph& g) {
      return nc::weighted_sum(nc::conv1d(g.param("x"), g.param("k"), g.param("b")), w);
    }));
  }

  // Factored cross-entropy through a small observation network.
  {
    obs::ObsModelConfig cfg;
    cfg.feature_dim = 4;
    cfg.hidden = {6};
    cfg.n = 2;
    cfg.d = 3;
    auto p = obs::init_obsmodel(cfg, seed);
    const std::size_t batch = 3;
    auto x = random_tensor({batch, cfg.feature_dim}, rng);
    nc::Tensor target({batch, cfg.output_dim()});
    for (std::size_t r = 0; r < batch; ++r) {
      for (std::size_t i = 0; i < cfg.n; ++i) target.at(r, i * cfg.d + uniform_index(rng, cfg.d)) = 1.0;
    }
    out.push_back(check_gradients("factored_cross_entropy", p, [&](nc::Graph& g) {
      return nc::factored_cross_entropy(obs::obsmodel_forward(g, g.constant(x), cfg), target);
    }));
  }

  // PPO objective through the belief-input policy/value network. Ratios are placed either well inside the
  // clip band or well outside it so no sample sits on a kink of min/clamp.
  {
    agent::PolicyNetConfig net;
    net.n = 2;
    net.d = 5;
    net.channels = 2;
    net.head_init_scale = 1.0;
    net.value_init_scale = 1.0;
    auto p = agent::init_policy(net, seed);
    const std::size_t rows = 6;
    std::vector<double> inputs;
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t i = 0; i < net.n; ++i) {
        auto b = random_vector(net.d, rng, 0.0, 1.0);
        double z = 0.0;
        for (double v : b) z += v;
        for (double v : b) inputs.push_back(v / z);
        std::vector<double> goal(net.d, 0.0);
        goal[uniform_index(rng, net.d)] = 1.0;
        inputs.insert(inputs.end(), goal.begin(), goal.end());
      }
    }
    const nc::Tensor x({rows, net.input_dim()}, inputs);
    agent::PPOConfig cfg;
    agent::PPOSamples s;
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t i = 0; i < net.n; ++i) s.choices.push_back(uniform_index(rng, belief::kMovesPerDim));
    }
    const auto logits = agent::policy_value(p, net, inputs, rows).logits;
    const auto lp = nc::log_softmax(logits, net.segments());
    const double offsets[] = {0.05, -0.05, 0.6, -0.6, 0.02, -0.4};
    for (std::size_t r = 0; r < rows; ++r) {
      double cur = 0.0;
      for (std::size_t i = 0; i < net.n; ++i) cur += lp[r * net.action_logits() + i * belief::kMovesPerDim + s.choices[r * net.n + i]];
      s.old_log_probs.push_back(cur - offsets[r]);
      s.advantages.push_back(r % 2 ? -1.0 - 0.3 * static_cast<double>(r) : 0.7 + 0.2 * static_cast<double>(r));
      s.returns.push_back(std::uniform_real_distribution<double>(-1.0, 1.0)(rng));
      s.weights.push_back(1.0 / static_cast<double>(rows));
    }
    out.push_back(check_gradients("ppo_objective", p, [&](nc::Graph& g) {
      const auto pv = agent::policy_value_forward(g, g.constant(x), net);
      return agent::ppo_loss(pv.logits, pv.value, net.segments(), s, cfg).total;
    }));
  }

  // GRU policy unrolled over 3 steps; the loss touches logits and values at every step.
  {
    agent::RecurrentConfig net;
    net.n = 2;
    net.d = 3;
    net.feature_dim = 2;
    net.encoder = 4;
    net.hidden = 3;
    net.head_init_scale = 1.0;
    auto p = agent::init_recurrent(net, seed);
    const std::size_t batch = 2, steps = 3;
    std::vector<nc::Tensor> xs;
    for (std::size_t t = 0; t < steps; ++t) xs.push_back(random_tensor({batch, net.input_dim()}, rng));
    const auto h0 = random_tensor({batch, net.hidden}, rng, -0.5, 0.5);
    std::vector<std::vector<double>> wl, wv;
    for (std::size_t t = 0; t < steps; ++t) {
      wl.push_back(random_vector(batch * net.action_logits(), rng));
      wv.push_back(random_vector(batch, rng));
    }
    out.push_back(check_gradients("gru_bptt_3_steps", p, [&](nc::Graph& g) {
      nc::Var h = g.constant(h0);
      nc::Var total = g.constant(nc::Tensor({1}));
      for (std::size_t t = 0; t < steps; ++t) {
        const auto st = agent::recurrent_forward(g, g.constant(xs[t]), h, net);
        total = nc::add(total, nc::add(nc::weighted_sum(st.logits, wl[t]), nc::weighted_sum(st.value, wv[t])));
        h = st.hidden;
      }
      return total;
    }));
  }
  return out;
}

}  // namespace tpose::oracle
