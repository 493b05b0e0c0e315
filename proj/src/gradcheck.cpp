#include "organocc/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>

#include "organocc/autodiff.hpp"
#include "organocc/model.hpp"
#include "organocc/rng.hpp"

namespace organocc {

namespace {

using Tens = ad::Tensor<double>;
using TapeD = ad::Tape<double>;

// Scalar sum(w * y) with fixed random weights so every output entry matters.
Tens project(TapeD& tape, const Tens& y, const std::vector<double>& w) {
  Tens out = Tens::zeros({}, y.requires_grad() && tape.recording());
  double acc = 0;
  for (std::size_t i = 0; i < y.numel(); ++i) acc += w[i] * y.data()[i];
  out.data()[0] = acc;
  if (tape.wants(out)) {
    tape.push([y, out, w]() mutable {
      if (!out.has_grad() || !y.requires_grad()) return;
      const double g = out.grad_or_empty()[0];
      auto& dy = y.grad();
      for (std::size_t i = 0; i < dy.size(); ++i) dy[i] += g * w[i];
    });
  }
  return out;
}

Tens random_tensor(ad::Shape shape, Rng& rng, bool rg = true, double lo = -1, double hi = 1) {
  Tens t = Tens::zeros(std::move(shape), rg);
  for (auto& v : t.values()) v = uniform(rng, lo, hi);
  return t;
}

std::vector<double> random_weights(std::size_t n, Rng& rng) {
  std::vector<double> w(n);
  for (auto& v : w) v = uniform(rng, -1, 1);
  return w;
}

double rel_error(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), kGradcheckFloor}); }

// `loss` builds a scalar from the current values of `inputs`. Checks up to
// `max_per_input` entries of each input (all when 0).
GradcheckEntry check(const std::string& name, const std::function<Tens(TapeD&)>& loss, std::vector<Tens> inputs,
                     Rng& rng, double tol, std::size_t max_per_input = 0) {
  const auto t0 = std::chrono::steady_clock::now();
  GradcheckEntry e;
  e.op = name;
  for (auto& t : inputs) t.zero_grad();
  TapeD tape;
  Tens l = loss(tape);
  tape.backward(l);
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    auto& t = inputs[ti];
    const std::vector<double> analytic = t.has_grad() ? t.grad_or_empty() : std::vector<double>(t.numel(), 0.0);
    std::vector<std::size_t> idx(t.numel());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (max_per_input && idx.size() > max_per_input) {
      for (std::size_t i = 0; i < max_per_input; ++i) std::swap(idx[i], idx[i + uniform_index(rng, idx.size() - i)]);
      idx.resize(max_per_input);
    }
    for (auto i : idx) {
      const double orig = t.data()[i];
      TapeD off(false);
      t.data()[i] = orig + kGradcheckStep;
      const double fp = loss(off).item();
      t.data()[i] = orig - kGradcheckStep;
      const double fm = loss(off).item();
      t.data()[i] = orig;
      const double f0 = loss(off).item();
      const double numeric = (fp - fm) / (2 * kGradcheckStep);
      const double rel = rel_error(analytic[i], numeric);
      if (rel >= tol) {
        // A probe straddling a relu/max-pool kink: the one-sided slopes
        // disagree and the analytic gradient equals one of them.
        const double dp = (fp - f0) / kGradcheckStep, dm = (f0 - fm) / kGradcheckStep;
        if (rel_error(dp, dm) >= tol && std::min(rel_error(analytic[i], dp), rel_error(analytic[i], dm)) < tol) {
          ++e.kinks;
          continue;
        }
      }
      if (rel >= e.max_rel_error) {
        e.max_rel_error = rel;
        e.worst = std::to_string(ti) + "#" + std::to_string(i) + " analytic " + std::to_string(analytic[i]) +
                  " numeric " + std::to_string(numeric);
      }
      ++e.checked;
    }
  }
  // Kink skips must stay rare or the check would lose its meaning.
  e.passed = e.max_rel_error < tol && e.checked > 0 && e.kinks * 20 <= e.checked;
  e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return e;
}

}  // namespace

std::vector<GradcheckEntry> run_gradcheck_suite(std::uint64_t seed, double tol) {
  Rng rng = make_rng(seed, 0x67726164ULL);
  std::vector<GradcheckEntry> out;

  {
    auto x = random_tensor({1, 1, 4, 4, 4}, rng), w = random_tensor({2, 1, 3, 3, 3}, rng), b = random_tensor({2}, rng);
    auto r = random_weights(2 * 64, rng);
    out.push_back(check("conv3d[1x1x4x4x4]", [&](TapeD& t) { return project(t, ad::conv3d(t, x, w, b), r); }, {x, w, b},
                        rng, tol));
  }
  {
    auto x = random_tensor({2, 2, 3, 4, 5}, rng), w = random_tensor({3, 2, 3, 3, 3}, rng), b = random_tensor({3}, rng);
    auto r = random_weights(2 * 3 * 60, rng);
    out.push_back(check("conv3d[2x2x3x4x5]", [&](TapeD& t) { return project(t, ad::conv3d(t, x, w, b), r); }, {x, w, b},
                        rng, tol));
  }
  {
    auto x = random_tensor({2, 3, 2, 3, 2}, rng), g = random_tensor({3}, rng, true, 0.5, 1.5),
         b = random_tensor({3}, rng);
    auto r = random_weights(x.numel(), rng);
    ad::BatchNormState st(3);
    out.push_back(check("batchnorm3d[train]",
                        [&](TapeD& t) { return project(t, ad::batchnorm3d(t, x, g, b, st, true), r); }, {x, g, b}, rng,
                        tol));
    for (int c = 0; c < 3; ++c) {
      st.running_mean[c] = uniform(rng, -0.5, 0.5);
      st.running_var[c] = uniform(rng, 0.5, 2.0);
    }
    out.push_back(check("batchnorm3d[eval]",
                        [&](TapeD& t) { return project(t, ad::batchnorm3d(t, x, g, b, st, false), r); }, {x, g, b}, rng,
                        tol));
  }
  {
    auto x = random_tensor({1, 2, 4, 4, 6}, rng);
    auto r = random_weights(x.numel() / 8, rng);
    out.push_back(check("maxpool3d", [&](TapeD& t) { return project(t, ad::maxpool3d(t, x), r); }, {x}, rng, tol));
  }
  {
    auto x = random_tensor({1, 5, 4, 3, 2}, rng);
    auto r = random_weights(x.numel(), rng);
    out.push_back(check("relu", [&](TapeD& t) { return project(t, ad::relu(t, x), r); }, {x}, rng, tol));
  }
  for (auto act : {ad::Activation::None, ad::Activation::Relu}) {
    auto x = random_tensor({2, 5, 7}, rng), w = random_tensor({4, 5}, rng), b = random_tensor({4}, rng);
    auto r = random_weights(2 * 4 * 7, rng);
    out.push_back(check(act == ad::Activation::Relu ? "pointwise_layer[relu]" : "pointwise_layer[none]",
                        [&](TapeD& t) { return project(t, ad::pointwise_layer(t, x, w, b, act), r); }, {x, w, b}, rng,
                        tol));
  }
  {
    auto g = random_tensor({2, 3, 4, 5, 3}, rng);
    std::vector<Vec3> pts;
    for (int i = 0; i < 2 * 9; ++i) pts.push_back({uniform(rng, -1.2, 1.2), uniform(rng, -1.2, 1.2), uniform(rng, -1.2, 1.2)});
    auto r = random_weights(2 * 3 * 9, rng);
    out.push_back(
        check("trilinear_sample", [&](TapeD& t) { return project(t, ad::trilinear_sample(t, g, pts), r); }, {g}, rng, tol));
  }
  {
    auto x = random_tensor({4, 8}, rng, true, -4, 4);
    std::vector<double> y(32);
    for (auto& v : y) v = uniform01(rng) < 0.5 ? 0.0 : 1.0;
    out.push_back(check("bce_with_logits", [&](TapeD& t) { return ad::bce_with_logits(t, x, y); }, {x}, rng, tol));
  }
  {
    auto x = random_tensor({2, 3, 5}, rng, true, -3, 3);
    std::vector<int> y(10);
    for (auto& v : y) v = static_cast<int>(uniform_index(rng, 3));
    out.push_back(check("cross_entropy", [&](TapeD& t) { return ad::cross_entropy(t, x, y); }, {x}, rng, tol));
  }
  {
    // conv -> bn(train) -> relu -> pool -> sample -> pointwise -> bce on micro shapes, every entry.
    auto x = random_tensor({2, 1, 4, 4, 4}, rng, false), w = random_tensor({2, 1, 3, 3, 3}, rng),
         b = random_tensor({2}, rng), g = random_tensor({2}, rng, true, 0.5, 1.5), be = random_tensor({2}, rng),
         fw = random_tensor({1, 2}, rng), fb = random_tensor({1}, rng);
    ad::BatchNormState st(2);
    std::vector<Vec3> pts;
    for (int i = 0; i < 12; ++i) pts.push_back({uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1)});
    std::vector<double> y{1, 0, 1, 1, 0, 0, 0, 1, 1, 0, 1, 0};
    out.push_back(check("composite[conv-bn-relu-pool-sample-pointwise-bce]",
                        [&](TapeD& t) {
                          auto h = ad::relu(t, ad::batchnorm3d(t, ad::conv3d(t, x, w, b), g, be, st, true));
                          auto f = ad::trilinear_sample(t, ad::maxpool3d(t, h), pts);
                          return ad::bce_with_logits(t, ad::pointwise_layer(t, f, fw, fb, ad::Activation::None), y);
                        },
                        {w, g, be, fw, fb}, rng, tol));
  }
  for (auto variant : {DecoderVariant::Multi, DecoderVariant::Single}) {
    // Full network: 5-block encoder, raw scale, decoders, loss. Batch norm runs
    // in eval mode on running stats from one train pass: in train mode the
    // thousands of relu/max-pool kinks make +-1e-5 probes cross
    // non-differentiable points, and pre-BN conv biases have zero gradient.
    ModelConfig cfg;
    cfg.base_channels = 1;
    cfg.hidden_dim = 6;
    cfg.organs = 2;
    cfg.variant = variant;
    Network<double> net(cfg, seed);
    auto vol = random_tensor({1, 1, 16, 16, 16}, rng, false);
    std::vector<Vec3> pts;
    std::vector<std::uint8_t> labels;
    for (int i = 0; i < 9; ++i) {
      pts.push_back({uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1)});
      const int cls = i % 3;
      labels.push_back(cls == 1);
      labels.push_back(cls == 2);
    }
    // Zero-initialized biases can put a relu input exactly on its kink.
    const auto names = net.parameter_names();
    auto all = net.parameters();
    for (std::size_t i = 0; i < all.size(); ++i) {
      if (names[i].find("bias") != std::string::npos || names[i].find("beta") != std::string::npos)
        for (auto& v : all[i].values()) v = uniform(rng, -0.5, 0.5);
    }
    {
      TapeD warm(false);
      net.encode(warm, random_tensor({2, 1, 16, 16, 16}, rng, false), true);
    }
    auto params = net.parameters();
    out.push_back(check(std::string("composite[model,") + to_string(variant) + "]",
                        [&](TapeD& t) {
                          auto pyr = net.encode(t, vol, false);
                          return net.loss(t, net.decode(t, net.query_features(t, pyr, pts)), labels);
                        },
                        params, rng, tol, 6));
  }
  return out;
}

}  // namespace organocc
