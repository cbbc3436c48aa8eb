#include <cmath>
#include <functional>
#include <vector>

#include <doctest.h>

#include "pushlab/nets.hpp"
#include "pushlab/tape.hpp"
#include "pushlab/tensor.hpp"

using namespace pushlab;
using nets::Activation;

namespace {

// central finite differences against analytic gradients; returns the largest
// corrected relative error over all parameter elements
template <typename LossFn>
double fd_max_rel_error(const std::vector<nets::TensorT<double>*>& params, LossFn loss_fn,
                        double h = 1e-3) {
  // analytic gradients
  std::vector<nets::TensorT<double>> analytic;
  {
    nets::TapeT<double> tape;
    nets::TapeBinding<double> binding(tape);
    const int loss = loss_fn(tape, binding);
    tape.backward(loss);
    for (size_t p = 0; p < binding.params.size(); ++p)
      analytic.push_back(tape.grad(binding.nodes[p]));
  }
  auto loss_value = [&]() {
    nets::TapeT<double> tape;
    nets::TapeBinding<double> binding(tape);
    return tape.val(loss_fn(tape, binding)).at(0, 0);
  };
  double max_err = 0.0;
  for (size_t p = 0; p < params.size(); ++p) {
    for (int i = 0; i < params[p]->size(); ++i) {
      const double saved = params[p]->v[i];
      params[p]->v[i] = saved + h;
      const double up = loss_value();
      params[p]->v[i] = saved - h;
      const double down = loss_value();
      params[p]->v[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[p].v[i];
      // 1e-4 relative with a 1e-6 absolute floor
      const double excess = std::max(0.0, std::abs(a - numeric) - 1e-6);
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
      max_err = std::max(max_err, excess / denom);
    }
  }
  return max_err;
}

}  // namespace

TEST_CASE("backward on a plain parameter sum gives unit gradients") {
  nets::Tape tape;
  nets::Tensor p(2, 3);
  for (int i = 0; i < p.size(); ++i) p.v[i] = 0.3f * i - 1.0f;
  const int leaf = tape.leaf(p);
  tape.backward(tape.sum(leaf));
  for (int i = 0; i < p.size(); ++i) CHECK(tape.grad(leaf).v[i] == doctest::Approx(1.0));
}

TEST_CASE("mlp_forward basics") {
  Rng rng(7);

  SUBCASE("identity-initialized single linear layer returns its input") {
    nets::Mlp net({3, 3}, rng);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) net.weights[0].at(i, j) = i == j ? 1.0f : 0.0f;
    nets::Tensor x = nets::Tensor::row({0.5f, -1.25f, 2.0f});
    const nets::Tensor y = nets::mlp_forward(net, x);
    for (int j = 0; j < 3; ++j) CHECK(y.at(0, j) == x.at(0, j));
  }

  SUBCASE("zero weights reduce to the activated bias") {
    nets::Mlp net({4, 2}, rng, Activation::kRelu, Activation::kTanh);
    for (auto& w : net.weights[0].v) w = 0.0f;
    net.biases[0].at(0, 0) = 0.7f;
    net.biases[0].at(0, 1) = -0.7f;
    nets::Tensor x(1, 4);
    const nets::Tensor y = nets::mlp_forward(net, x);
    CHECK(y.at(0, 0) == doctest::Approx(std::tanh(0.7)));
    CHECK(y.at(0, 1) == doctest::Approx(std::tanh(-0.7)));
  }

  SUBCASE("repeated evaluation is deterministic") {
    nets::Mlp net({5, 8, 2}, rng);
    nets::Tensor x(3, 5);
    for (auto& v : x.v) v = static_cast<float>(rng.normal());
    const nets::Tensor a = nets::mlp_forward(net, x);
    const nets::Tensor b = nets::mlp_forward(net, x);
    for (int i = 0; i < a.size(); ++i) CHECK(a.v[i] == b.v[i]);
  }

  SUBCASE("input size mismatch is rejected") {
    nets::Mlp net({5, 2}, rng);
    CHECK_THROWS_AS(nets::mlp_forward(net, nets::Tensor(1, 4)), NumericalError);
  }
}

TEST_CASE("tape mlp matches the numeric forward") {
  Rng rng(11);
  nets::Mlp net({6, 16, 4}, rng, Activation::kRelu, Activation::kLinear);
  nets::Tensor x(5, 6);
  for (auto& v : x.v) v = static_cast<float>(rng.normal());
  const nets::Tensor direct = nets::mlp_forward(net, x);

  nets::Tape tape;
  nets::TapeBinding<float> binding(tape);
  const nets::MlpNodes<float> ids = nets::bind_mlp(binding, net);
  const int out = nets::mlp_on_tape(tape, net, ids, tape.leaf(x));
  for (int i = 0; i < direct.size(); ++i)
    CHECK(tape.val(out).v[i] == doctest::Approx(direct.v[i]).epsilon(1e-6));
}

TEST_CASE("gru_forward") {
  Rng rng(3);

  SUBCASE("zero parameters and zero initial state give zero hidden states") {
    nets::GruCell cell(4, 3, rng);
    for (auto* t : {&cell.wz, &cell.uz, &cell.bz, &cell.wr, &cell.ur, &cell.br, &cell.wc,
                    &cell.uc, &cell.bc})
      for (auto& v : t->v) v = 0.0f;
    nets::Tensor x(1, 4);
    for (auto& v : x.v) v = 1.0f;
    const auto hs = nets::gru_forward(cell, {x}, nets::Tensor(1, 3));
    REQUIRE(hs.size() == 1);
    for (const float h : hs[0].v) CHECK(h == 0.0f);
  }

  SUBCASE("incremental evaluation equals batch evaluation for T = 1..50") {
    nets::GruCell cell(5, 8, rng);
    std::vector<nets::Tensor> seq;
    for (int t = 0; t < 50; ++t) {
      nets::Tensor x(1, 5);
      for (auto& v : x.v) v = static_cast<float>(rng.normal());
      seq.push_back(x);
    }
    nets::Tensor h_inc(1, 8);
    for (int t = 1; t <= 50; ++t) {
      h_inc = nets::gru_step(cell, seq[t - 1], h_inc);
      const std::vector<nets::Tensor> prefix(seq.begin(), seq.begin() + t);
      const auto hs = nets::gru_forward(cell, prefix, nets::Tensor(1, 8));
      REQUIRE(static_cast<int>(hs.size()) == t);
      for (int j = 0; j < 8; ++j)
        CHECK(std::abs(hs.back().at(0, j) - h_inc.at(0, j)) < 1e-6f);
    }
  }

  SUBCASE("hidden states stay inside (-1, 1)") {
    nets::GruCell cell(3, 6, rng);
    nets::Tensor h(1, 6);
    for (int t = 0; t < 200; ++t) {
      nets::Tensor x(1, 3);
      for (auto& v : x.v) v = static_cast<float>(rng.normal());
      h = nets::gru_step(cell, x, h);
      for (const float v : h.v) {
        CHECK(v > -1.0f);
        CHECK(v < 1.0f);
      }
    }
  }

  SUBCASE("input order changes the final hidden state") {
    nets::GruCell cell(4, 6, rng);
    std::vector<nets::Tensor> seq;
    for (int t = 0; t < 6; ++t) {
      nets::Tensor x(1, 4);
      for (auto& v : x.v) v = static_cast<float>(rng.normal());
      seq.push_back(x);
    }
    std::vector<nets::Tensor> permuted(seq.rbegin(), seq.rend());
    const auto a = nets::gru_forward(cell, seq, nets::Tensor(1, 6));
    const auto b = nets::gru_forward(cell, permuted, nets::Tensor(1, 6));
    double diff = 0.0;
    for (int j = 0; j < 6; ++j) diff += std::abs(a.back().at(0, j) - b.back().at(0, j));
    CHECK(diff > 1e-6);
  }

  SUBCASE("shape mismatch is rejected") {
    nets::GruCell cell(4, 3, rng);
    CHECK_THROWS_AS(nets::gru_step(cell, nets::Tensor(1, 5), nets::Tensor(1, 3)),
                    NumericalError);
  }
}

TEST_CASE("gradient check: tiny MLP (3 layers)") {
  Rng rng(21);
  nets::MlpT<double> net({4, 5, 4, 2}, rng, Activation::kTanh, Activation::kLinear);
  nets::TensorT<double> x(3, 4), target(3, 2);
  for (auto& v : x.v) v = rng.normal();
  for (auto& v : target.v) v = rng.normal();

  std::vector<nets::TensorT<double>*> params;
  for (int l = 0; l < net.layer_count(); ++l) {
    params.push_back(&net.weights[l]);
    params.push_back(&net.biases[l]);
  }
  const double err = fd_max_rel_error(
      params, [&](nets::TapeT<double>& tape, nets::TapeBinding<double>& binding) {
        const nets::MlpNodes<double> ids = nets::bind_mlp(binding, net);
        return tape.mse_loss(nets::mlp_on_tape(tape, net, ids, tape.leaf(x)), target);
      });
  CHECK(err < 1e-4);
}

TEST_CASE("gradient check: tiny GRU (H=3, T=4) through time") {
  Rng rng(22);
  nets::GruCellT<double> cell(2, 3, rng);
  std::vector<nets::TensorT<double>> seq;
  for (int t = 0; t < 4; ++t) {
    nets::TensorT<double> x(2, 2);
    for (auto& v : x.v) v = rng.normal();
    seq.push_back(x);
  }
  nets::TensorT<double> target(2, 3);
  for (auto& v : target.v) v = 0.3 * rng.normal();

  std::vector<nets::TensorT<double>*> params{&cell.wz, &cell.uz, &cell.bz, &cell.wr,
                                             &cell.ur, &cell.br, &cell.wc, &cell.uc,
                                             &cell.bc};
  const double err = fd_max_rel_error(
      params, [&](nets::TapeT<double>& tape, nets::TapeBinding<double>& binding) {
        const nets::GruNodes<double> ids = nets::bind_gru(binding, cell);
        int h = tape.leaf(nets::TensorT<double>(2, 3));
        for (const auto& x : seq) h = nets::gru_step_on_tape(tape, ids, tape.leaf(x), h);
        return tape.mse_loss(h, target);
      });
  CHECK(err < 1e-4);
}

TEST_CASE("gradient check: binary cross entropy with logits") {
  Rng rng(23);
  nets::TensorT<double> logits(3, 4), target(3, 4);
  for (auto& v : logits.v) v = 2.0 * rng.normal();
  for (auto& v : target.v) v = rng.uniform01() < 0.5 ? 0.0 : 1.0;

  const double err = fd_max_rel_error(
      {&logits}, [&](nets::TapeT<double>& tape, nets::TapeBinding<double>& binding) {
        return tape.bce_logits(binding.bind(logits), target);
      });
  CHECK(err < 1e-4);
}

TEST_CASE("gradient check: squashed-gaussian log probability") {
  Rng rng(24);
  nets::TensorT<double> mean(4, 3), logstd(4, 3), eps(4, 3);
  for (auto& v : mean.v) v = rng.normal();
  for (auto& v : logstd.v) v = 0.3 * rng.normal();
  for (auto& v : eps.v) v = rng.normal();

  auto build = [&](nets::TapeT<double>& tape, nets::TapeBinding<double>& binding) {
    const int mu = binding.bind(mean);
    const int ls = binding.bind(logstd);
    const int sigma = tape.exp_(ls);
    const int pre = tape.add(mu, tape.mul(sigma, tape.leaf(eps)));
    nets::TensorT<double> gauss_const(4, 1);
    for (int i = 0; i < 4; ++i) {
      double c = 0.0;
      for (int j = 0; j < 3; ++j)
        c += -0.5 * eps.at(i, j) * eps.at(i, j) - 0.5 * std::log(2.0 * M_PI);
      gauss_const.at(i, 0) = c;
    }
    const int logp = tape.sub(tape.sub(tape.leaf(gauss_const), tape.row_sum(ls)),
                              tape.row_sum(tape.squash_logdet(pre, 1e-6)));
    return tape.mean(logp);
  };
  const double err = fd_max_rel_error({&mean, &logstd}, build);
  CHECK(err < 1e-4);
}

TEST_CASE("non-finite gradients raise diagnostics") {
  nets::Tape tape;
  nets::Tensor p(1, 1);
  p.at(0, 0) = 50.0f;  // exp overflows float range after squaring
  const int leaf = tape.leaf(p);
  const int loss = tape.sum(tape.exp_(tape.exp_(leaf)));
  CHECK_THROWS_AS(tape.backward(loss), NumericalError);
}

TEST_CASE("adam_step") {
  SUBCASE("zero gradients leave parameters unchanged") {
    nets::Tensor p(2, 2);
    for (int i = 0; i < p.size(); ++i) p.v[i] = 1.0f + i;
    const nets::Tensor before = p;
    nets::Tensor g(2, 2);
    nets::Adam opt;
    opt.step({&p}, {&g});
    for (int i = 0; i < p.size(); ++i) CHECK(p.v[i] == before.v[i]);
  }

  SUBCASE("a constant gradient moves parameters against its sign") {
    nets::Tensor p(1, 2);
    nets::Tensor g(1, 2);
    g.at(0, 0) = 0.5f;
    g.at(0, 1) = -2.0f;
    nets::Adam opt;
    opt.lr = 1e-2;
    for (int i = 0; i < 100; ++i) opt.step({&p}, {&g});
    CHECK(p.at(0, 0) < 0.0f);
    CHECK(p.at(0, 1) > 0.0f);
  }

  SUBCASE("first step from zeroed state moves by about lr") {
    nets::Tensor p(1, 1);
    nets::Tensor g(1, 1);
    g.at(0, 0) = 0.37f;
    nets::Adam opt;
    opt.lr = 3e-4;
    opt.step({&p}, {&g});
    CHECK(std::abs(p.at(0, 0)) == doctest::Approx(3e-4).epsilon(1e-3));
    CHECK(p.at(0, 0) < 0.0f);
  }
}
