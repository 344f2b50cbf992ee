#include <doctest.h>

#include <cmath>
#include <functional>
#include <numeric>
#include <set>

#include "nmsearch/rng.hpp"
#include "nmsearch/vit.hpp"
#include "nmsearch/vit_ops.hpp"

using namespace nmsearch;

namespace {

Matrix<double> randn(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  Matrix<double> m(r, c);
  for (auto& v : m.flat()) v = scale * standard_normal(rng);
  return m;
}

double weighted_sum(const Matrix<double>& y, const Matrix<double>& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
  return s;
}

// Largest relative error between `analytic` and central differences of
// `loss` with respect to every entry of `x`.
double fd_error(Matrix<double>& x, const Matrix<double>& analytic, const std::function<double()>& loss) {
  const double h = 1e-6;
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = loss();
    x[i] = orig - h;
    const double down = loss();
    x[i] = orig;
    const double fd = (up - down) / (2 * h);
    worst = std::max(worst, std::abs(fd - analytic[i]) / std::max({std::abs(fd), std::abs(analytic[i]), 1e-3}));
  }
  return worst;
}

ArchSpec tiny_arch() {
  ArchSpec a;
  a.blocks = 2;
  a.embed_dim = 8;
  a.num_heads = 2;
  a.image_side = 8;
  a.patch_side = 4;
  a.num_classes = 3;
  return a;
}

}  // namespace

TEST_CASE("linear gradients") {
  Rng rng(1);
  auto x = randn(rng, 5, 8);
  auto w = randn(rng, 4, 8);
  auto b = randn(rng, 1, 4);
  const auto r = randn(rng, 5, 4);
  const auto loss = [&] { return weighted_sum(ops::linear_forward(x, w, b), r); };
  Matrix<double> dx(5, 8), dw(4, 8), db(1, 4);
  ops::linear_backward(x, w, r, &dx, dw, db);
  CHECK(fd_error(x, dx, loss) < 1e-6);
  CHECK(fd_error(w, dw, loss) < 1e-6);
  CHECK(fd_error(b, db, loss) < 1e-6);

  SUBCASE("backward accumulates") {
    Matrix<double> dw2 = dw, db2 = db;
    ops::linear_backward<double>(x, w, r, nullptr, dw2, db2);
    for (std::size_t i = 0; i < dw.size(); ++i) CHECK(dw2[i] == doctest::Approx(2 * dw[i]));
  }
}

TEST_CASE("layer norm gradients") {
  Rng rng(2);
  auto x = randn(rng, 3, 8);
  auto gamma = randn(rng, 1, 8);
  auto beta = randn(rng, 1, 8);
  const auto r = randn(rng, 3, 8);
  const auto loss = [&] {
    ops::LayerNormCache<double> c;
    return weighted_sum(ops::layernorm_forward(x, gamma, beta, c), r);
  };
  ops::LayerNormCache<double> cache;
  const auto y = ops::layernorm_forward(x, gamma, beta, cache);
  Matrix<double> dx(3, 8), dg(1, 8), dbeta(1, 8);
  ops::layernorm_backward(cache, gamma, r, dx, dg, dbeta);
  CHECK(fd_error(x, dx, loss) < 1e-5);
  CHECK(fd_error(gamma, dg, loss) < 1e-6);
  CHECK(fd_error(beta, dbeta, loss) < 1e-6);

  SUBCASE("normalized rows have zero mean") {
    for (std::size_t i = 0; i < 3; ++i) {
      const auto xr = cache.xhat.row(i);
      CHECK(std::accumulate(xr.begin(), xr.end(), 0.0) == doctest::Approx(0.0).epsilon(1e-12));
    }
  }
  (void)y;
}

TEST_CASE("gelu gradients") {
  Rng rng(3);
  auto x = randn(rng, 4, 6, 2.0);
  const auto r = randn(rng, 4, 6);
  const auto loss = [&] { return weighted_sum(ops::gelu_forward(x), r); };
  Matrix<double> dx(4, 6);
  ops::gelu_backward(x, r, dx);
  CHECK(fd_error(x, dx, loss) < 1e-6);
  const Matrix<double> zero(1, 1);
  CHECK(ops::gelu_forward(zero)[0] == 0.0);
}

TEST_CASE("attention gradients") {
  Rng rng(4);
  const std::size_t tokens = 5, d = 8, heads = 2;
  auto qkv = randn(rng, tokens, 3 * d);
  const auto r = randn(rng, tokens, d);
  const auto loss = [&] {
    std::vector<double> p;
    return weighted_sum(ops::attention_forward(qkv, heads, p), r);
  };
  std::vector<double> probs;
  ops::attention_forward(qkv, heads, probs);
  REQUIRE(probs.size() == heads * tokens * tokens);
  for (std::size_t row = 0; row < heads * tokens; ++row) {
    double s = 0.0;
    for (std::size_t j = 0; j < tokens; ++j) s += probs[row * tokens + j];
    CHECK(s == doctest::Approx(1.0));
  }
  Matrix<double> dqkv(tokens, 3 * d);
  ops::attention_backward(qkv, heads, probs, r, dqkv);
  CHECK(fd_error(qkv, dqkv, loss) < 1e-5);
}

TEST_CASE("softmax and cross-entropy") {
  const std::vector<double> z{1.0, 2.0, 3.0};
  const auto p = ops::softmax<double>(z);
  CHECK(p[0] + p[1] + p[2] == doctest::Approx(1.0));
  CHECK(p[2] > p[1]);
  const auto hot = ops::softmax<double>(z, 0.01);
  CHECK(hot[2] == doctest::Approx(1.0));

  Rng rng(5);
  auto logits = randn(rng, 1, 4);
  Matrix<double> d(1, 4);
  ops::cross_entropy<double>(logits.flat(), 2, d.flat());
  Matrix<double> scratch(1, 4);
  CHECK(fd_error(logits, d, [&] { return ops::cross_entropy<double>(logits.flat(), 2, scratch.flat()); }) < 1e-6);

  const auto teacher = randn(rng, 1, 4);
  for (const double tau : {1.0, 2.5}) {
    ops::soft_cross_entropy<double>(logits.flat(), teacher.flat(), tau, d.flat());
    CHECK(fd_error(logits, d, [&] {
            return ops::soft_cross_entropy<double>(logits.flat(), teacher.flat(), tau, scratch.flat());
          }) < 1e-6);
  }
}

TEST_CASE("distillation loss is minimal at the teacher") {
  Rng rng(6);
  const auto teacher = randn(rng, 1, 5);
  Matrix<double> same = teacher;
  Matrix<double> d(1, 5);
  const double at_teacher = ops::soft_cross_entropy<double>(same.flat(), teacher.flat(), 1.0, d.flat());
  const auto p = ops::softmax<double>(teacher.flat());
  double entropy = 0.0;
  for (const double v : p) entropy -= v * std::log(v);
  CHECK(at_teacher == doctest::Approx(entropy).epsilon(1e-12));
  for (const double g : d.flat()) CHECK(std::abs(g) < 1e-12);
  for (int t = 0; t < 20; ++t) {
    auto other = teacher;
    for (auto& v : other.flat()) v += 0.3 * standard_normal(rng);
    CHECK(ops::soft_cross_entropy<double>(other.flat(), teacher.flat(), 1.0, d.flat()) > at_teacher);
  }
}

TEST_CASE("patch extraction order") {
  ArchSpec a = tiny_arch();
  std::vector<double> image(64);
  std::iota(image.begin(), image.end(), 0.0);
  const auto patches = extract_patches<double>(a, image);
  REQUIRE(patches.rows() == 4);
  REQUIRE(patches.cols() == 16);
  CHECK(patches(0, 0) == 0);
  CHECK(patches(0, 4) == 8);    // second pixel row of the top-left patch
  CHECK(patches(1, 0) == 4);    // top-right patch
  CHECK(patches(2, 0) == 32);   // bottom-left patch
  CHECK(patches(3, 15) == 63);
}

TEST_CASE("parameters") {
  const ArchSpec a = tiny_arch();
  const auto p = VitParams<float>::init(a, 3);
  const auto q = VitParams<float>::init(a, 3);
  const auto other = VitParams<float>::init(a, 4);
  std::vector<std::string> names;
  p.for_each([&](const std::string& n, const Matrix<float>&) { names.push_back(n); });
  CHECK(std::set<std::string>(names.begin(), names.end()).size() == names.size());
  CHECK(std::find(names.begin(), names.end(), "blocks.1.fc2_w") != names.end());
  bool same = true, differs = false;
  std::size_t count = 0;
  std::vector<const Matrix<float>*> qs, os;
  q.for_each([&](const std::string&, const Matrix<float>& m) { qs.push_back(&m); });
  other.for_each([&](const std::string&, const Matrix<float>& m) { os.push_back(&m); });
  std::size_t i = 0;
  p.for_each([&](const std::string&, const Matrix<float>& m) {
    same = same && m == *qs[i];
    differs = differs || !(m == *os[i]);
    count += m.size();
    ++i;
  });
  CHECK(same);
  CHECK(differs);
  CHECK(count == p.parameter_count());

  // qkv, proj, fc1, fc2 of block 1
  CHECK(&p.prunable(4) == &p.blocks[1].qkv_w);
  CHECK(&p.prunable(7) == &p.blocks[1].fc2_w);
  CHECK(p.prunable(2).rows() == a.hidden_dim());
  CHECK(p.prunable(2).cols() == a.embed_dim);

  const auto z = VitParams<float>::zeros(a);
  CHECK(z.norm_gamma[0] == 1.0f);
  CHECK(z.blocks[0].qkv_w[0] == 0.0f);
}

TEST_CASE("full network gradients") {
  const ArchSpec a = tiny_arch();
  Rng rng(7);
  auto params = params_cast<double>(VitParams<float>::init(a, 8));
  std::vector<double> image(a.input_size());
  for (auto& v : image) v = uniform01(rng);
  const auto r = randn(rng, 1, a.num_classes);
  const auto loss = [&] { return weighted_sum(vit_forward<double>(a, params, image, nullptr), r); };

  ForwardCache<double> cache;
  vit_forward<double>(a, params, image, &cache);
  auto grads = VitParams<double>::zeros(a);
  grads.for_each([](const std::string&, Matrix<double>& m) { m.fill(0.0); });
  vit_backward<double>(a, params, cache, r.flat(), grads);

  std::vector<Matrix<double>*> ps;
  std::vector<const Matrix<double>*> gs;
  params.for_each([&](const std::string&, Matrix<double>& m) { ps.push_back(&m); });
  std::as_const(grads).for_each([&](const std::string&, const Matrix<double>& m) { gs.push_back(&m); });
  REQUIRE(ps.size() == gs.size());
  for (std::size_t t = 0; t < ps.size(); ++t) {
    CAPTURE(t);
    CHECK(fd_error(*ps[t], *gs[t], loss) < 1e-4);
  }
}
