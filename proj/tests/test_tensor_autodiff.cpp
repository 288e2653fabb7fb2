#include <catch_amalgamated.hpp>

#include "pvqe/autodiff.hpp"
#include "pvqe/gradcheck.hpp"
#include "pvqe/ops.hpp"
#include "pvqe/tensor.hpp"

using namespace pvqe;

TEST_CASE("tensor shape bookkeeping", "[tensor]") {
  Tensor<float> t({2, 3});
  CHECK(t.numel() == 6);
  CHECK_THROWS_AS(Tensor<float>({0, 3}), InvalidInput);
  CHECK_THROWS_AS(t.reshaped({4}), InvalidInput);
  t(1, 2) = 5.f;
  CHECK(t.reshaped({6})(5) == 5.f);
}

TEST_CASE("linear examples", "[ops]") {
  Tape<double> tp;
  const int x = tp.leaf(Tensor<double>({2}, {1, 2}));
  SECTION("identity weight, zero bias") {
    const int w = tp.leaf(Tensor<double>({2, 2}, {1, 0, 0, 1}));
    const int b = tp.leaf(Tensor<double>({2}));
    const auto& y = tp.val(ops::linear(tp, x, w, b));
    CHECK(y.data == std::vector<double>{1, 2});
  }
  SECTION("hand-computed matrix") {
    const int w = tp.leaf(Tensor<double>({2, 2}, {1, 1, 0, 1}));
    const int b = tp.leaf(Tensor<double>({2}));
    const auto& y = tp.val(ops::linear(tp, x, w, b));
    CHECK(y.data == std::vector<double>{3, 2});
  }
  SECTION("shape mismatch") {
    const int w = tp.leaf(Tensor<double>({2, 3}, std::vector<double>(6, 1.0)));
    const int b = tp.leaf(Tensor<double>({2}));
    CHECK_THROWS_AS(ops::linear(tp, x, w, b), InvalidInput);
  }
}

TEST_CASE("elu examples", "[ops]") {
  Tape<double> tp;
  const int x = tp.leaf(Tensor<double>({3}, {0, 1, -1}));
  const auto& y = tp.val(ops::elu(tp, x));
  CHECK(y(0) == 0.0);
  CHECK(y(1) == 1.0);
  CHECK(y(2) == Catch::Approx(std::exp(-1.0) - 1.0).margin(1e-12));  // ~ -0.6321
}

TEST_CASE("layer_norm examples", "[ops]") {
  Tape<double> tp;
  const int g = tp.leaf(Tensor<double>::full({2}, 1.0));
  const int b = tp.leaf(Tensor<double>({2}));
  SECTION("constant vector maps to beta") {
    const int x = tp.leaf(Tensor<double>({2}, {3, 3}));
    const auto& y = tp.val(ops::layer_norm(tp, x, g, b));
    CHECK(y(0) == Catch::Approx(0.0).margin(1e-9));
    CHECK(y(1) == Catch::Approx(0.0).margin(1e-9));
  }
  SECTION("[1,3] normalizes to [-1,1]") {
    const int x = tp.leaf(Tensor<double>({2}, {1, 3}));
    const auto& y = tp.val(ops::layer_norm(tp, x, g, b));
    CHECK(y(0) == Catch::Approx(-1.0).margin(1e-5));
    CHECK(y(1) == Catch::Approx(1.0).margin(1e-5));
  }
  SECTION("shift invariance") {
    const int x1 = tp.leaf(Tensor<double>({3}, {0.5, -1.25, 2.0}));
    const int x2 = tp.leaf(Tensor<double>({3}, {0.5 + 4.0, -1.25 + 4.0, 2.0 + 4.0}));
    const int g3 = tp.leaf(Tensor<double>::full({3}, 1.0));
    const int b3 = tp.leaf(Tensor<double>({3}));
    const auto& y1 = tp.val(ops::layer_norm(tp, x1, g3, b3));
    const auto& y2 = tp.val(ops::layer_norm(tp, x2, g3, b3));
    for (int i = 0; i < 3; ++i) CHECK(y1(i) == Catch::Approx(y2(i)).margin(1e-12));
  }
}

TEST_CASE("softmax examples", "[ops]") {
  Tape<double> tp;
  SECTION("uniform input, uniform output") {
    const int x = tp.leaf(Tensor<double>::full({4}, 0.7));
    const auto& y = tp.val(ops::softmax(tp, x));
    for (int i = 0; i < 4; ++i) CHECK(y(i) == Catch::Approx(0.25).margin(1e-12));
  }
  SECTION("[0, ln 3] -> [0.25, 0.75]") {
    const int x = tp.leaf(Tensor<double>({2}, {0.0, std::log(3.0)}));
    const auto& y = tp.val(ops::softmax(tp, x));
    CHECK(y(0) == Catch::Approx(0.25).margin(1e-12));
    CHECK(y(1) == Catch::Approx(0.75).margin(1e-12));
  }
  SECTION("bitwise shift invariance with exact values") {
    // Exactly representable entries and an exact power-of-two shift: the
    // max-subtracted differences are bit-identical.
    Tensor<float> a({3}, {0.5f, 1.25f, -0.75f});
    Tensor<float> b({3}, {0.5f + 4.0f, 1.25f + 4.0f, -0.75f + 4.0f});
    Tape<float> tf;
    const auto& ya = tf.val(ops::softmax(tf, tf.leaf(a)));
    const auto& yb = tf.val(ops::softmax(tf, tf.leaf(b)));
    for (int i = 0; i < 3; ++i) CHECK(ya(i) == yb(i));
  }
  SECTION("rows sum to one") {
    Rng rng(3);
    Tensor<double> x({5, 9});
    for (auto& v : x.data) v = rng.uniform(-4, 4);
    Tape<double> t2;
    const auto& y = t2.val(ops::softmax(t2, t2.leaf(x)));
    for (int r = 0; r < 5; ++r) {
      double s = 0;
      for (int i = 0; i < 9; ++i) s += y(r, i);
      CHECK(s == Catch::Approx(1.0).margin(1e-6));
    }
  }
}

TEST_CASE("conv2d_causal examples", "[ops]") {
  SECTION("delta kernel is identity") {
    Tape<double> tp;
    Rng rng(1);
    Tensor<double> x({1, 5, 8});
    for (auto& v : x.data) v = rng.uniform(-1, 1);
    Tensor<double> w({1, 1, 2, 3});  // delta at (k_t-1, center)
    w(0, 0, 1, 1) = 1.0;
    const int y = ops::conv2d_causal(tp, tp.leaf(x), tp.leaf(w), tp.leaf(Tensor<double>({1})), 1);
    CHECK(tp.val(y).data == x.data);
  }
  SECTION("stride-2 frequency dimension: 161 -> 81") {
    Tape<float> tp;
    Tensor<float> x({2, 10, 161});
    Tensor<float> w({4, 2, 2, 3});
    const int y = ops::conv2d_causal(tp, tp.leaf(x), tp.leaf(w), tp.leaf(Tensor<float>({4})), 2);
    CHECK(tp.val(y).shape == std::vector<int>{4, 10, 81});
  }
  SECTION("causality: future perturbation leaves past outputs bit-identical") {
    Rng rng(2);
    Tensor<float> x({2, 6, 9});
    for (auto& v : x.data) v = float(rng.uniform(-1, 1));
    Tensor<float> w({3, 2, 2, 3});
    for (auto& v : w.data) v = float(rng.uniform(-1, 1));
    Tensor<float> b({3});
    Tensor<float> x2 = x;
    const int t_cut = 3;
    for (int c = 0; c < 2; ++c)
      for (int t = t_cut + 1; t < 6; ++t)
        for (int f = 0; f < 9; ++f) x2(c, t, f) += float(rng.uniform(0.5, 2.0));
    Tape<float> tp;
    const auto& y1 = tp.val(ops::conv2d_causal(tp, tp.leaf(x), tp.leaf(w), tp.leaf(b), 2));
    const auto& y2 = tp.val(ops::conv2d_causal(tp, tp.leaf(x2), tp.leaf(w), tp.leaf(b), 2));
    for (int c = 0; c < 3; ++c)
      for (int t = 0; t <= t_cut; ++t)
        for (int f = 0; f < 5; ++f) REQUIRE(y1(c, t, f) == y2(c, t, f));
  }
}

TEST_CASE("gru_step examples", "[ops]") {
  const int I = 3, H = 4;
  SECTION("all-zero parameters halve the state") {
    Tape<double> tp;
    Tensor<double> h({H}, {1.0, -0.5, 2.0, 0.25});
    const int y = ops::gru_step(tp, tp.leaf(Tensor<double>({I})), tp.leaf(h),
                                tp.leaf(Tensor<double>({3 * H, I})),
                                tp.leaf(Tensor<double>({3 * H, H})),
                                tp.leaf(Tensor<double>({3 * H})), tp.leaf(Tensor<double>({H})));
    for (int i = 0; i < H; ++i) CHECK(tp.val(y)(i) == Catch::Approx(0.5 * h(i)).margin(1e-12));
  }
  SECTION("zero input, state and biases stay zero") {
    Tape<double> tp;
    Rng rng(4);
    Tensor<double> w({3 * H, I}), u({3 * H, H});
    for (auto& v : w.data) v = rng.uniform(-1, 1);
    for (auto& v : u.data) v = rng.uniform(-1, 1);
    const int y = ops::gru_step(tp, tp.leaf(Tensor<double>({I})), tp.leaf(Tensor<double>({H})),
                                tp.leaf(w), tp.leaf(u), tp.leaf(Tensor<double>({3 * H})),
                                tp.leaf(Tensor<double>({H})));
    for (int i = 0; i < H; ++i) CHECK(tp.val(y)(i) == 0.0);
  }
  SECTION("sequence scan equals repeated steps") {
    Rng rng(6);
    const int L = 5;
    Tensor<double> xs({L, I}), w({3 * H, I}), u({3 * H, H}), b({3 * H}), bhn({H});
    for (auto& v : xs.data) v = rng.uniform(-1, 1);
    for (auto& v : w.data) v = rng.uniform(-1, 1);
    for (auto& v : u.data) v = rng.uniform(-1, 1);
    for (auto& v : b.data) v = rng.uniform(-1, 1);
    for (auto& v : bhn.data) v = rng.uniform(-1, 1);
    Tape<double> tp;
    const int wid = tp.leaf(w), uid = tp.leaf(u), bid = tp.leaf(b), bhid = tp.leaf(bhn);
    const auto& seq = tp.val(ops::gru_seq(tp, tp.leaf(xs), wid, uid, bid, bhid));
    int h = tp.leaf(Tensor<double>({H}));
    for (int t = 0; t < L; ++t) {
      Tensor<double> xt({I});
      for (int i = 0; i < I; ++i) xt(i) = xs(t, i);
      h = ops::gru_step(tp, tp.leaf(xt), h, wid, uid, bid, bhid);
      for (int i = 0; i < H; ++i) REQUIRE(tp.val(h)(i) == seq(t, i));
    }
  }
}

TEST_CASE("pixel shuffle examples", "[ops]") {
  SECTION("definitional permutation") {
    Tape<double> tp;
    // 2 channels, 1 frame, 2 bins: [[a,b],[c,d]] -> [[a,c,b,d]]
    Tensor<double> x({2, 1, 2}, {1, 2, 3, 4});
    const auto& y = tp.val(ops::pixel_shuffle_freq(tp, tp.leaf(x), 2));
    CHECK(y.shape == std::vector<int>{1, 1, 4});
    CHECK(y.data == std::vector<double>{1, 3, 2, 4});
  }
  SECTION("shuffle then inverse-shuffle is the identity") {
    Rng rng(5);
    Tensor<double> x({6, 3, 4});
    for (auto& v : x.data) v = rng.uniform(-1, 1);
    Tape<double> tp;
    const auto& y = tp.val(ops::pixel_shuffle_freq(tp, tp.leaf(x), 2));
    Tensor<double> back({6, 3, 4});
    for (int c = 0; c < 3; ++c)
      for (int j = 0; j < 2; ++j)
        for (int t = 0; t < 3; ++t)
          for (int f = 0; f < 4; ++f) back(c * 2 + j, t, f) = y(c, t, f * 2 + j);
    CHECK(back.data == x.data);
  }
  SECTION("channel count must divide") {
    Tape<double> tp;
    const int x = tp.leaf(Tensor<double>({3, 1, 2}));
    CHECK_THROWS_AS(ops::pixel_shuffle_freq(tp, x, 2), InvalidInput);
  }
}

TEST_CASE("backward basics", "[autodiff]") {
  SECTION("sum gradient is ones") {
    Tape<double> tp;
    const int x = tp.leaf(Tensor<double>({3}, {4, 5, 6}));
    tp.backward(ops::sum(tp, x));
    CHECK(tp.grad(x).data == std::vector<double>{1, 1, 1});
  }
  SECTION("sum of squares at [1,2] gives [2,4]") {
    Tape<double> tp;
    const int x = tp.leaf(Tensor<double>({2}, {1, 2}));
    tp.backward(ops::sum(tp, ops::mul(tp, x, x)));
    CHECK(tp.grad(x).data == std::vector<double>{2, 4});
  }
  SECTION("loss must be scalar") {
    Tape<double> tp;
    const int x = tp.leaf(Tensor<double>({2}, {1, 2}));
    CHECK_THROWS_AS(tp.backward(x), InvalidInput);
  }
  SECTION("gradients accumulate across uses") {
    Tape<double> tp;
    const int x = tp.leaf(Tensor<double>({2}, {3, -1}));
    const int y = ops::add(tp, x, x);  // y = 2x
    tp.backward(ops::sum(tp, y));
    CHECK(tp.grad(x).data == std::vector<double>{2, 2});
  }
}

TEST_CASE("finite_diff_check reference behaviour", "[autodiff]") {
  SECTION("f = sum is exact") {
    // Power-of-two step on exactly representable values: the central
    // difference is exact in floating point.
    Tensor<double> x({4}, {1, 2, 3, 4});
    auto res = finite_diff_check<double>(
        [](Tape<double>& tp, int id) { return ops::sum(tp, id); }, x, 0.0009765625);
    CHECK(res.max_rel_err == 0.0);
  }
  SECTION("f = sum of squares in 64-bit") {
    Tensor<double> x({4}, {0.5, -1.5, 2.0, 0.25});
    auto res = finite_diff_check<double>(
        [](Tape<double>& tp, int id) { return ops::sum(tp, ops::mul(tp, id, id)); }, x, 1e-5);
    CHECK(res.max_rel_err < 1e-6);
  }
}

TEST_CASE("primitive gradient battery, 64-bit", "[autodiff][grad]") {
  for (auto& item : gradient_check_primitives<double>(1e-5, 1e-5)) {
    INFO(item.name << " err=" << item.max_rel_err);
    CHECK(item.pass());
  }
}

TEST_CASE("primitive gradient battery, 32-bit", "[autodiff][grad]") {
  for (auto& item : gradient_check_primitives<float>(1e-3, 1e-2f)) {
    INFO(item.name << " err=" << item.max_rel_err);
    CHECK(item.pass());
  }
}

TEST_CASE("gradients hold across random shapes", "[autodiff][grad]") {
  Rng rng(21);
  int done = 0;
  while (done < 20) {
    const int rows = rng.uniform_int(1, 6), in = rng.uniform_int(1, 7), out = rng.uniform_int(1, 7);
    Tensor<double> x({rows, in}), w({out, in}), b({out}), r({rows, out});
    for (auto& v : x.data) v = rng.uniform(-1, 1);
    for (auto& v : w.data) v = rng.uniform(-1, 1);
    for (auto& v : b.data) v = rng.uniform(-1, 1);
    for (auto& v : r.data) v = rng.uniform(0.5, 1.5) * (rng.bernoulli(0.5) ? 1 : -1);
    // Skip instances whose pre-activations sit near the ELU kink; the
    // central difference straddles the non-differentiable point there.
    bool near_kink = false;
    for (int rr = 0; rr < rows && !near_kink; ++rr)
      for (int o = 0; o < out; ++o) {
        double acc = b(o);
        for (int i = 0; i < in; ++i) acc += w(o, i) * x(rr, i);
        if (std::abs(acc) < 0.05) {
          near_kink = true;
          break;
        }
      }
    if (near_kink) continue;
    ++done;
    const double err = gradcheck_detail::fd_multi<double>(
        {x, w, b},
        [&](Tape<double>& tp, const std::vector<int>& id) {
          return gradcheck_detail::weighted_sum(
              tp, ops::elu(tp, ops::linear(tp, id[0], id[1], id[2])), r);
        },
        1e-5);
    INFO("shapes rows=" << rows << " in=" << in << " out=" << out);
    CHECK(err < 1e-5);
  }
}

TEST_CASE("deterministic rng", "[tensor]") {
  Rng a(123), b(123);
  for (int i = 0; i < 1000; ++i) REQUIRE(a.next_u64() == b.next_u64());
  Rng c(123), d(124);
  CHECK(c.next_u64() != d.next_u64());
}
