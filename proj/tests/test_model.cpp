#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "organocc/error.hpp"
#include "organocc/io.hpp"
#include "organocc/model.hpp"
#include "organocc/rng.hpp"

using namespace organocc;
using namespace organocc::ad;

namespace {

Tensor<float> random_volume(int n, Rng& rng) {
  auto t = Tensor<float>::zeros({1, 1, n, n, n});
  for (auto& v : t.values()) v = static_cast<float>(standard_normal(rng));
  return t;
}

std::vector<Vec3> random_points(std::size_t n, Rng& rng) {
  std::vector<Vec3> p;
  for (std::size_t i = 0; i < n; ++i) p.push_back({uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1)});
  return p;
}

ModelConfig small_config(DecoderVariant v = DecoderVariant::Multi, int organs = 1) {
  ModelConfig c;
  c.base_channels = 2;
  c.hidden_dim = 16;
  c.variant = v;
  c.organs = organs;
  return c;
}

}  // namespace

TEST_CASE("encoder schedule") {
  Rng rng(1);
  SUBCASE("32^3, base 8") {
    ModelConfig cfg;
    Network<float> net(cfg, 1);
    Tape<float> tape(false);
    auto pyr = net.encode(tape, random_volume(32, rng), false);
    REQUIRE(pyr.scales.size() == 6);
    CHECK(pyr.scales[0].shape() == Shape{1, 1, 32, 32, 32});
    const int res[] = {32, 16, 8, 4, 2}, ch[] = {8, 16, 32, 64, 128};
    for (int k = 0; k < 5; ++k) CHECK(pyr.scales[k + 1].shape() == Shape{1, ch[k], res[k], res[k], res[k]});
    CHECK(cfg.feature_dim() == 249);
  }
  SUBCASE("128^3 resolutions") {
    ModelConfig cfg;
    cfg.base_channels = 1;
    cfg.raw_input_scale = false;
    Network<float> net(cfg, 1);
    Tape<float> tape(false);
    auto pyr = net.encode(tape, random_volume(128, rng), false);
    REQUIRE(pyr.scales.size() == 5);
    for (int k = 0; k < 5; ++k) CHECK(pyr.scales[k].dim(2) == (128 >> k));
  }
  SUBCASE("non-divisible input") {
    Network<float> net(small_config(), 1);
    Tape<float> tape(false);
    CHECK_THROWS_AS(net.encode(tape, random_volume(24, rng), false), Error);
  }
  SUBCASE("zero conv weights in eval mode give the bias pattern") {
    Network<float> net(small_config(), 1);
    for (auto& u : net.units()) {
      std::fill(u.weight.values().begin(), u.weight.values().end(), 0.0f);
      for (std::size_t c = 0; c < u.bias.numel(); ++c) u.bias.values()[c] = 0.1f * float(c + 1);
    }
    Tape<float> tape(false);
    auto pyr = net.encode(tape, random_volume(16, rng), false);
    const auto& f1 = pyr.scales[1];
    const std::size_t S = 16 * 16 * 16;
    for (int c = 0; c < f1.dim(1); ++c) {
      const float ref = f1.values()[c * S];
      for (std::size_t s = 0; s < S; ++s) CHECK(f1.values()[c * S + s] == ref);
    }
  }
}

TEST_CASE("query_features") {
  Rng rng(2);
  ModelConfig cfg;
  Network<float> net(cfg, 3);
  Tape<float> tape(false);
  auto pyr = net.encode(tape, random_volume(32, rng), false);
  SUBCASE("coarse voxel center returns the stored feature") {
    // Center of voxel (1,0,1) of the 2^3 coarsest grid.
    const Vec3 q{0.5, -0.5, 0.5};
    auto f = net.query_features(tape, pyr, {q});
    CHECK(f.shape() == Shape{1, 249, 1});
    const auto& coarse = pyr.scales[5];
    const int off = 249 - 128;
    for (int c = 0; c < 128; ++c) CHECK(f.values()[off + c] == coarse.values()[c * 8 + (1 * 2 + 0) * 2 + 1]);
  }
  SUBCASE("points in one coarse cell but different fine cells") {
    const Vec3 a{0.49, -0.5, 0.5}, b{0.51, -0.5, 0.5};
    auto f = net.query_features(tape, pyr, {a, b});
    bool fine_differs = false;
    for (int c = 1; c < 9; ++c) fine_differs |= f.values()[c * 2] != f.values()[c * 2 + 1];
    CHECK(fine_differs);
  }
}

TEST_CASE("decode") {
  Rng rng(3);
  SUBCASE("zero weights with output bias beta") {
    Network<float> net(small_config(), 1);
    auto& d = net.decoders()[0];
    for (auto* t : {&d.w1, &d.w2, &d.w3}) std::fill(t->values().begin(), t->values().end(), 0.0f);
    d.b3.values()[0] = 0.7f;
    Tape<float> tape(false);
    auto feats = Tensor<float>::filled({1, net.config().feature_dim(), 5}, 1.0f);
    auto logits = net.decode(tape, feats);
    for (float v : logits.values()) CHECK(v == 0.7f);
    for (float p : net.probabilities(logits)) CHECK(p == doctest::Approx(1.0 / (1.0 + std::exp(-0.7))));
  }
  SUBCASE("multi variant isolates organ decoders") {
    Network<float> net(small_config(DecoderVariant::Multi, 2), 1);
    Tape<float> tape(false);
    Tensor<float> feats = Tensor<float>::zeros({1, net.config().feature_dim(), 7});
    for (auto& v : feats.values()) v = static_cast<float>(uniform(rng, -1, 1));
    auto before = net.decode(tape, feats);
    CHECK(before.shape() == Shape{1, 2, 7});
    for (auto& v : net.decoders()[0].w2.values()) v += 0.5f;
    auto after = net.decode(tape, feats);
    bool organ0_changed = false;
    for (int p = 0; p < 7; ++p) {
      organ0_changed |= before.values()[p] != after.values()[p];
      CHECK(before.values()[7 + p] == after.values()[7 + p]);
    }
    CHECK(organ0_changed);
  }
  SUBCASE("single variant has c+1 outputs") {
    Network<float> net(small_config(DecoderVariant::Single, 2), 1);
    Tape<float> tape(false);
    auto logits = net.decode(tape, Tensor<float>::zeros({1, net.config().feature_dim(), 4}));
    CHECK(logits.shape() == Shape{1, 3, 4});
  }
  SUBCASE("feature width mismatch") {
    Network<float> net(small_config(), 1);
    Tape<float> tape(false);
    CHECK_THROWS_AS(net.decode(tape, Tensor<float>::zeros({1, 3, 4})), Error);
  }
}

TEST_CASE("loss") {
  Tape<float> tape(false);
  SUBCASE("c=1 zero logits, label 1") {
    Network<float> net(small_config(), 1);
    CHECK(net.loss(tape, Tensor<float>::zeros({1, 1, 3}), {1, 1, 1}).item() == doctest::Approx(std::log(2.0)));
  }
  SUBCASE("multi variant sums per-organ BCE and matches the brute-force formula") {
    Network<float> net(small_config(DecoderVariant::Multi, 2), 1);
    Rng rng(4);
    const int N = 2, P = 5;
    auto logits = Tensor<float>::zeros({N, 2, P});
    for (auto& v : logits.values()) v = static_cast<float>(uniform(rng, -4, 4));
    std::vector<std::uint8_t> labels(N * P * 2);
    for (auto& l : labels) l = uniform01(rng) < 0.5;
    std::vector<double> per;
    const double total = net.loss(tape, logits, labels, &per).item();
    double brute[2] = {0, 0};
    for (int n = 0; n < N; ++n)
      for (int k = 0; k < 2; ++k)
        for (int p = 0; p < P; ++p) {
          const double x = logits.values()[(n * 2 + k) * P + p], y = labels[(n * P + p) * 2 + k];
          const double s = 1.0 / (1.0 + std::exp(-x));
          brute[k] -= (y * std::log(s) + (1 - y) * std::log(1 - s)) / (N * P);
        }
    CHECK(per[0] == doctest::Approx(brute[0]).epsilon(1e-6));
    CHECK(per[1] == doctest::Approx(brute[1]).epsilon(1e-6));
    CHECK(std::abs(total - (brute[0] + brute[1])) < 1e-6);
  }
  SUBCASE("single variant rejects overlapping labels; multi accepts them") {
    Network<float> single(small_config(DecoderVariant::Single, 2), 1);
    try {
      single.loss(tape, Tensor<float>::zeros({1, 3, 1}), {1, 1});
      FAIL("expected a label conflict");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::LabelConflict);
    }
    Network<float> multi(small_config(DecoderVariant::Multi, 2), 1);
    CHECK(multi.loss(tape, Tensor<float>::zeros({1, 2, 1}), {1, 1}).item() >= 0);
  }
  SUBCASE("class ids") {
    CHECK(class_ids_from_labels({0, 0, 1, 0, 0, 1}, 2) == std::vector<int>{0, 1, 2});
  }
}

TEST_CASE("forward") {
  Rng rng(5);
  Network<float> net(small_config(DecoderVariant::Multi, 2), 7);
  auto vol = random_volume(16, rng);
  auto pts = random_points(40, rng);
  auto p1 = net.forward(vol, pts);
  CHECK(p1.size() == 80);
  for (float p : p1) {
    CHECK(p > 0.0f);
    CHECK(p < 1.0f);
  }
  CHECK(net.forward(vol, pts) == p1);
  SUBCASE("permuting points permutes outputs") {
    std::vector<Vec3> rev(pts.rbegin(), pts.rend());
    auto pr = net.forward(vol, rev);
    for (int k = 0; k < 2; ++k)
      for (int i = 0; i < 40; ++i) CHECK(pr[k * 40 + i] == p1[k * 40 + 39 - i]);
  }
}

TEST_CASE("checkpoints") {
  const auto dir = std::filesystem::temp_directory_path() / "organocc_ckpt_test";
  std::filesystem::create_directories(dir);
  Rng rng(6);
  Network<float> net(small_config(DecoderVariant::Multi, 2), 11);
  TrainingState st;
  st.seed = 11;
  // One optimizer step so moments and running stats are non-trivial.
  {
    Tape<float> tape;
    auto vol = random_volume(32, rng);
    auto pts = random_points(8, rng);
    auto pyr = net.encode(tape, vol, true);
    auto l = net.loss(tape, net.decode(tape, net.query_features(tape, pyr, pts)), std::vector<std::uint8_t>(16, 1));
    tape.backward(l);
    auto params = net.parameters();
    adam_step(params, st.adam, AdamConfig{});
    st.step = 1;
  }
  const auto a = (dir / "a.json").string(), b = (dir / "b.json").string();
  save_checkpoint(net, st, a);
  Network<float> loaded;
  TrainingState st2;
  load_checkpoint(a, loaded, st2);
  save_checkpoint(loaded, st2, b);
  CHECK(read_bytes(a + ".bin") == read_bytes(b + ".bin"));
  CHECK(read_text(a).size() == read_text(b).size());
  CHECK(st2.step == 1);
  CHECK(st2.adam.m == st.adam.m);
  CHECK(loaded.units()[3].bn.running_var == net.units()[3].bn.running_var);

  ModelConfig other = small_config(DecoderVariant::Multi, 2);
  other.base_channels = 4;
  try {
    load_checkpoint(a, loaded, st2, &other);
    FAIL("expected config error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Config);
  }
  std::filesystem::remove_all(dir);
}
