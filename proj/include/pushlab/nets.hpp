#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "pushlab/tape.hpp"
#include "pushlab/tensor.hpp"
#include "pushlab/util.hpp"

namespace pushlab::nets {

enum class Activation { kLinear, kRelu, kTanh };

template <typename S>
struct ParamRef {
  std::string name;
  TensorT<S>* tensor;
};

// ---------------------------------------------------------------------------
// initializers

template <typename S>
void kaiming_uniform(TensorT<S>& w, int fan_in, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& x : w.v) x = static_cast<S>(rng.uniform(-limit, limit));
}

// square orthogonal matrix via Gram-Schmidt on a gaussian draw
template <typename S>
void orthogonal(TensorT<S>& w, Rng& rng) {
  const int n = w.rows;
  std::vector<std::vector<double>> q(n, std::vector<double>(n));
  for (auto& row : q)
    for (auto& x : row) x = rng.normal();
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < i; ++j) {
      double d = 0;
      for (int k = 0; k < n; ++k) d += q[i][k] * q[j][k];
      for (int k = 0; k < n; ++k) q[i][k] -= d * q[j][k];
    }
    double norm = 0;
    for (int k = 0; k < n; ++k) norm += q[i][k] * q[i][k];
    norm = std::sqrt(std::max(norm, 1e-12));
    for (int k = 0; k < n; ++k) q[i][k] /= norm;
  }
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) w.at(i, j) = static_cast<S>(q[i][j]);
}

// ---------------------------------------------------------------------------
// multi-layer perceptron

template <typename S>
struct MlpT {
  std::vector<int> sizes;  // [in, hidden..., out]
  Activation hidden_act = Activation::kRelu;
  Activation output_act = Activation::kLinear;
  std::vector<TensorT<S>> weights;
  std::vector<TensorT<S>> biases;

  MlpT() = default;
  MlpT(std::vector<int> layer_sizes, Rng& rng, Activation hidden = Activation::kRelu,
       Activation output = Activation::kLinear)
      : sizes(std::move(layer_sizes)), hidden_act(hidden), output_act(output) {
    for (size_t l = 0; l + 1 < sizes.size(); ++l) {
      TensorT<S> w(sizes[l], sizes[l + 1]);
      kaiming_uniform(w, sizes[l], rng);
      weights.push_back(std::move(w));
      biases.emplace_back(1, sizes[l + 1]);
    }
  }

  int in_dim() const { return sizes.front(); }
  int out_dim() const { return sizes.back(); }
  int layer_count() const { return static_cast<int>(weights.size()); }

  void collect_params(const std::string& prefix, std::vector<ParamRef<S>>& out) {
    for (size_t l = 0; l < weights.size(); ++l) {
      out.push_back({prefix + "/w" + std::to_string(l), &weights[l]});
      out.push_back({prefix + "/b" + std::to_string(l), &biases[l]});
    }
  }
};

template <typename S>
void apply_activation(TensorT<S>& t, Activation act) {
  switch (act) {
    case Activation::kLinear:
      break;
    case Activation::kRelu:
      for (auto& x : t.v) x = x > S(0) ? x : S(0);
      break;
    case Activation::kTanh:
      for (auto& x : t.v) x = std::tanh(x);
      break;
  }
}

template <typename S>
TensorT<S> mlp_forward(const MlpT<S>& net, const TensorT<S>& x) {
  if (x.cols != net.in_dim()) throw NumericalError("mlp_forward: input size mismatch");
  TensorT<S> h = x;
  for (int l = 0; l < net.layer_count(); ++l) {
    TensorT<S> z(h.rows, net.weights[l].cols);
    matmul_acc(h, net.weights[l], z);
    for (int i = 0; i < z.rows; ++i)
      for (int j = 0; j < z.cols; ++j) z.at(i, j) += net.biases[l].at(0, j);
    apply_activation(z, l + 1 < net.layer_count() ? net.hidden_act : net.output_act);
    h = std::move(z);
  }
  return h;
}

// ---------------------------------------------------------------------------
// GRU cell
//
// z = sigmoid(x Wz + h Uz + bz), r = sigmoid(x Wr + h Ur + br)
// c = tanh(x Wc + (r*h) Uc + bc)
// h' = (1 - z) * h + z * c

template <typename S>
struct GruCellT {
  int input = 0;
  int hidden = 0;
  TensorT<S> wz, uz, bz;
  TensorT<S> wr, ur, br;
  TensorT<S> wc, uc, bc;

  GruCellT() = default;
  GruCellT(int input_dim, int hidden_dim, Rng& rng) : input(input_dim), hidden(hidden_dim) {
    auto make_w = [&](TensorT<S>& w) {
      w = TensorT<S>(input, hidden);
      kaiming_uniform(w, input, rng);
    };
    auto make_u = [&](TensorT<S>& u) {
      u = TensorT<S>(hidden, hidden);
      orthogonal(u, rng);
    };
    make_w(wz);
    make_w(wr);
    make_w(wc);
    make_u(uz);
    make_u(ur);
    make_u(uc);
    bz = TensorT<S>(1, hidden);
    br = TensorT<S>(1, hidden);
    bc = TensorT<S>(1, hidden);
  }

  void collect_params(const std::string& prefix, std::vector<ParamRef<S>>& out) {
    out.push_back({prefix + "/wz", &wz});
    out.push_back({prefix + "/uz", &uz});
    out.push_back({prefix + "/bz", &bz});
    out.push_back({prefix + "/wr", &wr});
    out.push_back({prefix + "/ur", &ur});
    out.push_back({prefix + "/br", &br});
    out.push_back({prefix + "/wc", &wc});
    out.push_back({prefix + "/uc", &uc});
    out.push_back({prefix + "/bc", &bc});
  }
};

template <typename S>
TensorT<S> gru_step(const GruCellT<S>& cell, const TensorT<S>& x, const TensorT<S>& h) {
  if (x.cols != cell.input || h.cols != cell.hidden || x.rows != h.rows)
    throw NumericalError("gru_step: shape mismatch");
  const int m = x.rows, n = cell.hidden;
  auto gate = [&](const TensorT<S>& w, const TensorT<S>& u, const TensorT<S>& b,
                  const TensorT<S>& hin) {
    TensorT<S> z(m, n);
    matmul_acc(x, w, z);
    matmul_acc(hin, u, z);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) z.at(i, j) += b.at(0, j);
    return z;
  };
  TensorT<S> z = gate(cell.wz, cell.uz, cell.bz, h);
  for (auto& v : z.v) v = S(1) / (S(1) + std::exp(-v));
  TensorT<S> r = gate(cell.wr, cell.ur, cell.br, h);
  for (auto& v : r.v) v = S(1) / (S(1) + std::exp(-v));
  TensorT<S> rh(m, n);
  for (int i = 0; i < rh.size(); ++i) rh.v[i] = r.v[i] * h.v[i];
  TensorT<S> c = gate(cell.wc, cell.uc, cell.bc, rh);
  for (auto& v : c.v) v = std::tanh(v);
  TensorT<S> out(m, n);
  for (int i = 0; i < out.size(); ++i)
    out.v[i] = (S(1) - z.v[i]) * h.v[i] + z.v[i] * c.v[i];
  return out;
}

// All hidden states h_1..h_T for a sequence of inputs, starting from h0.
template <typename S>
std::vector<TensorT<S>> gru_forward(const GruCellT<S>& cell,
                                    const std::vector<TensorT<S>>& sequence,
                                    const TensorT<S>& h0) {
  if (sequence.empty()) throw NumericalError("gru_forward: empty sequence");
  std::vector<TensorT<S>> hs;
  hs.reserve(sequence.size());
  TensorT<S> h = h0;
  for (const auto& x : sequence) {
    h = gru_step(cell, x, h);
    hs.push_back(h);
  }
  return hs;
}

// ---------------------------------------------------------------------------
// tape bindings: mirror the numeric forwards on an autodiff tape

template <typename S>
struct TapeBinding {
  TapeT<S>* tape = nullptr;
  std::vector<TensorT<S>*> params;
  std::vector<int> nodes;

  explicit TapeBinding(TapeT<S>& t) : tape(&t) {}

  int bind(TensorT<S>& p) {
    params.push_back(&p);
    nodes.push_back(tape->leaf(p));
    return nodes.back();
  }

  std::vector<const TensorT<S>*> grads() const {
    std::vector<const TensorT<S>*> out;
    out.reserve(nodes.size());
    for (const int id : nodes) out.push_back(&tape->grad(id));
    return out;
  }
};

template <typename S>
struct MlpNodes {
  std::vector<int> w, b;
};

template <typename S>
MlpNodes<S> bind_mlp(TapeBinding<S>& binding, MlpT<S>& net) {
  MlpNodes<S> ids;
  for (int l = 0; l < net.layer_count(); ++l) {
    ids.w.push_back(binding.bind(net.weights[l]));
    ids.b.push_back(binding.bind(net.biases[l]));
  }
  return ids;
}

template <typename S>
int tape_activation(TapeT<S>& tape, int x, Activation act) {
  switch (act) {
    case Activation::kLinear:
      return x;
    case Activation::kRelu:
      return tape.relu(x);
    case Activation::kTanh:
      return tape.tanh_(x);
  }
  return x;
}

template <typename S>
int mlp_on_tape(TapeT<S>& tape, const MlpT<S>& net, const MlpNodes<S>& ids, int x) {
  int h = x;
  for (int l = 0; l < net.layer_count(); ++l) {
    h = tape.add_row(tape.matmul(h, ids.w[l]), ids.b[l]);
    h = tape_activation(tape, h, l + 1 < net.layer_count() ? net.hidden_act : net.output_act);
  }
  return h;
}

template <typename S>
struct GruNodes {
  int wz, uz, bz, wr, ur, br, wc, uc, bc;
};

template <typename S>
GruNodes<S> bind_gru(TapeBinding<S>& binding, GruCellT<S>& cell) {
  GruNodes<S> ids{};
  ids.wz = binding.bind(cell.wz);
  ids.uz = binding.bind(cell.uz);
  ids.bz = binding.bind(cell.bz);
  ids.wr = binding.bind(cell.wr);
  ids.ur = binding.bind(cell.ur);
  ids.br = binding.bind(cell.br);
  ids.wc = binding.bind(cell.wc);
  ids.uc = binding.bind(cell.uc);
  ids.bc = binding.bind(cell.bc);
  return ids;
}

template <typename S>
int gru_step_on_tape(TapeT<S>& tape, const GruNodes<S>& ids, int x, int h) {
  const int z = tape.sigmoid(
      tape.add_row(tape.add(tape.matmul(x, ids.wz), tape.matmul(h, ids.uz)), ids.bz));
  const int r = tape.sigmoid(
      tape.add_row(tape.add(tape.matmul(x, ids.wr), tape.matmul(h, ids.ur)), ids.br));
  const int c = tape.tanh_(tape.add_row(
      tape.add(tape.matmul(x, ids.wc), tape.matmul(tape.mul(r, h), ids.uc)), ids.bc));
  return tape.add(tape.mul(tape.one_minus(z), h), tape.mul(z, c));
}

// ---------------------------------------------------------------------------
// Adam

template <typename S>
struct AdamT {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step_count = 0;
  std::vector<TensorT<S>> m;
  std::vector<TensorT<S>> v;

  void init(const std::vector<TensorT<S>*>& params) {
    m.clear();
    v.clear();
    for (const auto* p : params) {
      m.emplace_back(p->rows, p->cols);
      v.emplace_back(p->rows, p->cols);
    }
    step_count = 0;
  }

  void step(const std::vector<TensorT<S>*>& params,
            const std::vector<const TensorT<S>*>& grads) {
    if (m.empty()) init(params);
    if (params.size() != grads.size() || params.size() != m.size())
      throw NumericalError("adam: parameter/gradient count mismatch");
    ++step_count;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
    for (size_t p = 0; p < params.size(); ++p) {
      TensorT<S>& theta = *params[p];
      const TensorT<S>& g = *grads[p];
      if (!theta.same_shape(g)) throw NumericalError("adam: shape mismatch");
      for (int i = 0; i < theta.size(); ++i) {
        const double gi = static_cast<double>(g.v[i]);
        const double mi = beta1 * m[p].v[i] + (1.0 - beta1) * gi;
        const double vi = beta2 * v[p].v[i] + (1.0 - beta2) * gi * gi;
        m[p].v[i] = static_cast<S>(mi);
        v[p].v[i] = static_cast<S>(vi);
        theta.v[i] -= static_cast<S>(lr * (mi / bc1) / (std::sqrt(vi / bc2) + eps));
      }
    }
  }
};

using Mlp = MlpT<float>;
using GruCell = GruCellT<float>;
using Adam = AdamT<float>;

}  // namespace pushlab::nets
