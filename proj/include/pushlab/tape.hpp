#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "pushlab/tensor.hpp"
#include "pushlab/util.hpp"

namespace pushlab::nets {

// Reverse-mode autodiff over 2-D tensors. A Tape owns the whole graph of one
// loss evaluation; backward() fills gradients for every node reachable from
// the loss, including leaves bound to model parameters.
template <typename S>
class TapeT {
 public:
  enum class Op {
    kLeaf,
    kMatmul,
    kAddRow,
    kAdd,
    kSub,
    kMul,
    kOneMinus,
    kScale,
    kSigmoid,
    kTanh,
    kRelu,
    kExp,
    kClamp,
    kRowSum,
    kSum,
    kMean,
    kMseLoss,
    kBceLogits,
    kConcatCols,
    kMin2,
    kSquashLogdet,
    kSelectStep,
    kRepeatRows,
  };

  struct Node {
    Op op;
    int a = -1;
    int b = -1;
    S c0 = S(0);
    S c1 = S(0);
    TensorT<S> val;
    TensorT<S> grad;
    TensorT<S> aux;          // constant payload (loss targets)
    std::vector<int> multi;  // inputs of kSelectStep
    std::vector<int> steps;  // 1-based readout step per row
  };

  int leaf(const TensorT<S>& value) {
    Node n;
    n.op = Op::kLeaf;
    n.val = value;
    return push(std::move(n));
  }

  int matmul(int a, int b) {
    require(val(a).cols == val(b).rows, "matmul: inner dims");
    Node n = binary(Op::kMatmul, a, b);
    n.val = TensorT<S>(val(a).rows, val(b).cols);
    matmul_acc(val(a), val(b), n.val);
    return push(std::move(n));
  }

  int add_row(int a, int row) {
    require(val(row).rows == 1 && val(row).cols == val(a).cols, "add_row: shape");
    Node n = binary(Op::kAddRow, a, row);
    n.val = val(a);
    for (int i = 0; i < n.val.rows; ++i)
      for (int j = 0; j < n.val.cols; ++j) n.val.at(i, j) += val(row).at(0, j);
    return push(std::move(n));
  }

  int add(int a, int b) { return elementwise2(Op::kAdd, a, b, [](S x, S y) { return x + y; }); }
  int sub(int a, int b) { return elementwise2(Op::kSub, a, b, [](S x, S y) { return x - y; }); }
  int mul(int a, int b) { return elementwise2(Op::kMul, a, b, [](S x, S y) { return x * y; }); }

  int min2(int a, int b) {
    return elementwise2(Op::kMin2, a, b, [](S x, S y) { return x < y ? x : y; });
  }

  int one_minus(int a) {
    return elementwise1(Op::kOneMinus, a, [](S x) { return S(1) - x; });
  }

  int scale(int a, S c) {
    Node n = unary(Op::kScale, a);
    n.c0 = c;
    n.val = val(a);
    for (auto& x : n.val.v) x *= c;
    return push(std::move(n));
  }

  int sigmoid(int a) {
    return elementwise1(Op::kSigmoid, a, [](S x) { return S(1) / (S(1) + std::exp(-x)); });
  }
  int tanh_(int a) {
    return elementwise1(Op::kTanh, a, [](S x) { return std::tanh(x); });
  }
  int relu(int a) {
    return elementwise1(Op::kRelu, a, [](S x) { return x > S(0) ? x : S(0); });
  }
  int exp_(int a) {
    return elementwise1(Op::kExp, a, [](S x) { return std::exp(x); });
  }

  int clamp(int a, S lo, S hi) {
    Node n = unary(Op::kClamp, a);
    n.c0 = lo;
    n.c1 = hi;
    n.val = val(a);
    for (auto& x : n.val.v) x = x < lo ? lo : (x > hi ? hi : x);
    return push(std::move(n));
  }

  // log(1 - tanh(u)^2 + eps), the tanh-squash correction of a log density
  int squash_logdet(int a, S eps) {
    Node n = unary(Op::kSquashLogdet, a);
    n.c0 = eps;
    n.val = val(a);
    for (auto& x : n.val.v) {
      const S t = std::tanh(x);
      x = std::log(S(1) - t * t + eps);
    }
    return push(std::move(n));
  }

  int row_sum(int a) {
    Node n = unary(Op::kRowSum, a);
    n.val = TensorT<S>(val(a).rows, 1);
    for (int i = 0; i < val(a).rows; ++i) {
      S acc(0);
      for (int j = 0; j < val(a).cols; ++j) acc += val(a).at(i, j);
      n.val.at(i, 0) = acc;
    }
    return push(std::move(n));
  }

  int sum(int a) {
    Node n = unary(Op::kSum, a);
    n.val = TensorT<S>(1, 1);
    S acc(0);
    for (const S x : val(a).v) acc += x;
    n.val.at(0, 0) = acc;
    return push(std::move(n));
  }

  int mean(int a) {
    Node n = unary(Op::kMean, a);
    n.val = TensorT<S>(1, 1);
    S acc(0);
    for (const S x : val(a).v) acc += x;
    n.val.at(0, 0) = acc / static_cast<S>(val(a).size());
    return push(std::move(n));
  }

  int mse_loss(int pred, const TensorT<S>& target) {
    require(val(pred).same_shape(target), "mse_loss: shape");
    Node n = unary(Op::kMseLoss, pred);
    n.aux = target;
    n.val = TensorT<S>(1, 1);
    S acc(0);
    for (int i = 0; i < target.size(); ++i) {
      const S d = val(pred).v[i] - target.v[i];
      acc += d * d;
    }
    n.val.at(0, 0) = acc / static_cast<S>(target.size());
    return push(std::move(n));
  }

  // mean binary cross entropy with logits, numerically stable
  int bce_logits(int logits, const TensorT<S>& target) {
    require(val(logits).same_shape(target), "bce_logits: shape");
    Node n = unary(Op::kBceLogits, logits);
    n.aux = target;
    n.val = TensorT<S>(1, 1);
    S acc(0);
    for (int i = 0; i < target.size(); ++i) {
      const S x = val(logits).v[i];
      const S t = target.v[i];
      acc += std::max(x, S(0)) - x * t + std::log1p(std::exp(-std::abs(x)));
    }
    n.val.at(0, 0) = acc / static_cast<S>(target.size());
    return push(std::move(n));
  }

  int concat_cols(int a, int b) {
    require(val(a).rows == val(b).rows, "concat_cols: rows");
    Node n = binary(Op::kConcatCols, a, b);
    n.val = TensorT<S>(val(a).rows, val(a).cols + val(b).cols);
    for (int i = 0; i < n.val.rows; ++i) {
      for (int j = 0; j < val(a).cols; ++j) n.val.at(i, j) = val(a).at(i, j);
      for (int j = 0; j < val(b).cols; ++j) n.val.at(i, val(a).cols + j) = val(b).at(i, j);
    }
    return push(std::move(n));
  }

  // each input row repeated `times` consecutive times
  int repeat_rows(int a, int times) {
    Node n = unary(Op::kRepeatRows, a);
    n.c0 = static_cast<S>(times);
    n.val = TensorT<S>(val(a).rows * times, val(a).cols);
    for (int i = 0; i < n.val.rows; ++i)
      for (int j = 0; j < n.val.cols; ++j) n.val.at(i, j) = val(a).at(i / times, j);
    return push(std::move(n));
  }

  // Row i of the result is row i of hidden_states[steps[i] - 1]; used to read
  // a recurrent feature at each sample's own sequence length.
  int select_step(const std::vector<int>& hidden_states, const std::vector<int>& steps) {
    require(!hidden_states.empty(), "select_step: empty");
    const int rows = val(hidden_states[0]).rows;
    const int cols = val(hidden_states[0]).cols;
    require(static_cast<int>(steps.size()) == rows, "select_step: steps size");
    Node n;
    n.op = Op::kSelectStep;
    n.multi = hidden_states;
    n.steps = steps;
    n.val = TensorT<S>(rows, cols);
    for (int i = 0; i < rows; ++i) {
      const int t = steps[i];
      require(t >= 1 && t <= static_cast<int>(hidden_states.size()), "select_step: range");
      const TensorT<S>& h = val(hidden_states[t - 1]);
      for (int j = 0; j < cols; ++j) n.val.at(i, j) = h.at(i, j);
    }
    return push(std::move(n));
  }

  const TensorT<S>& val(int id) const { return nodes_[id].val; }
  const TensorT<S>& grad(int id) const { return nodes_[id].grad; }
  int size() const { return static_cast<int>(nodes_.size()); }

  void backward(int loss_id) {
    require(val(loss_id).size() == 1, "backward: loss must be scalar");
    for (auto& n : nodes_) {
      n.grad = TensorT<S>(n.val.rows, n.val.cols);
    }
    nodes_[loss_id].grad.at(0, 0) = S(1);
    for (int id = loss_id; id >= 0; --id) {
      backprop_node(id);
    }
    for (const auto& n : nodes_) {
      if (!n.grad.all_finite())
        throw NumericalError("backward: non-finite gradient encountered");
    }
  }

 private:
  Node unary(Op op, int a) {
    Node n;
    n.op = op;
    n.a = a;
    return n;
  }
  Node binary(Op op, int a, int b) {
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    return n;
  }

  template <typename F>
  int elementwise1(Op op, int a, F f) {
    Node n = unary(op, a);
    n.val = val(a);
    for (auto& x : n.val.v) x = f(x);
    return push(std::move(n));
  }

  template <typename F>
  int elementwise2(Op op, int a, int b, F f) {
    require(val(a).same_shape(val(b)), "elementwise: shape");
    Node n = binary(op, a, b);
    n.val = val(a);
    for (int i = 0; i < n.val.size(); ++i) n.val.v[i] = f(val(a).v[i], val(b).v[i]);
    return push(std::move(n));
  }

  int push(Node&& n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  static void require(bool ok, const char* what) {
    if (!ok) throw NumericalError(std::string("tape: ") + what);
  }

  void backprop_node(int id) {
    Node& n = nodes_[id];
    const TensorT<S>& g = n.grad;
    switch (n.op) {
      case Op::kLeaf:
        break;
      case Op::kMatmul: {
        matmul_a_bt_acc(g, nodes_[n.b].val, nodes_[n.a].grad);
        matmul_at_b_acc(nodes_[n.a].val, g, nodes_[n.b].grad);
        break;
      }
      case Op::kAddRow: {
        TensorT<S>& ga = nodes_[n.a].grad;
        TensorT<S>& gb = nodes_[n.b].grad;
        for (int i = 0; i < g.size(); ++i) ga.v[i] += g.v[i];
        for (int i = 0; i < g.rows; ++i)
          for (int j = 0; j < g.cols; ++j) gb.at(0, j) += g.at(i, j);
        break;
      }
      case Op::kAdd: {
        accumulate(nodes_[n.a].grad, g, S(1));
        accumulate(nodes_[n.b].grad, g, S(1));
        break;
      }
      case Op::kSub: {
        accumulate(nodes_[n.a].grad, g, S(1));
        accumulate(nodes_[n.b].grad, g, S(-1));
        break;
      }
      case Op::kMul: {
        TensorT<S>& ga = nodes_[n.a].grad;
        TensorT<S>& gb = nodes_[n.b].grad;
        for (int i = 0; i < g.size(); ++i) {
          ga.v[i] += g.v[i] * nodes_[n.b].val.v[i];
          gb.v[i] += g.v[i] * nodes_[n.a].val.v[i];
        }
        break;
      }
      case Op::kMin2: {
        TensorT<S>& ga = nodes_[n.a].grad;
        TensorT<S>& gb = nodes_[n.b].grad;
        for (int i = 0; i < g.size(); ++i) {
          if (nodes_[n.a].val.v[i] <= nodes_[n.b].val.v[i])
            ga.v[i] += g.v[i];
          else
            gb.v[i] += g.v[i];
        }
        break;
      }
      case Op::kOneMinus:
        accumulate(nodes_[n.a].grad, g, S(-1));
        break;
      case Op::kScale:
        accumulate(nodes_[n.a].grad, g, n.c0);
        break;
      case Op::kSigmoid: {
        TensorT<S>& ga = nodes_[n.a].grad;
        for (int i = 0; i < g.size(); ++i) {
          const S y = n.val.v[i];
          ga.v[i] += g.v[i] * y * (S(1) - y);
        }
        break;
      }
      case Op::kTanh: {
        TensorT<S>& ga = nodes_[n.a].grad;
        for (int i = 0; i < g.size(); ++i) {
          const S y = n.val.v[i];
          ga.v[i] += g.v[i] * (S(1) - y * y);
        }
        break;
      }
      case Op::kRelu: {
        TensorT<S>& ga = nodes_[n.a].grad;
        for (int i = 0; i < g.size(); ++i) {
          if (nodes_[n.a].val.v[i] > S(0)) ga.v[i] += g.v[i];
        }
        break;
      }
      case Op::kExp: {
        TensorT<S>& ga = nodes_[n.a].grad;
        for (int i = 0; i < g.size(); ++i) ga.v[i] += g.v[i] * n.val.v[i];
        break;
      }
      case Op::kClamp: {
        TensorT<S>& ga = nodes_[n.a].grad;
        for (int i = 0; i < g.size(); ++i) {
          const S x = nodes_[n.a].val.v[i];
          if (x >= n.c0 && x <= n.c1) ga.v[i] += g.v[i];
        }
        break;
      }
      case Op::kSquashLogdet: {
        TensorT<S>& ga = nodes_[n.a].grad;
        for (int i = 0; i < g.size(); ++i) {
          const S t = std::tanh(nodes_[n.a].val.v[i]);
          const S one_m_t2 = S(1) - t * t;
          ga.v[i] += g.v[i] * (S(-2) * t * one_m_t2 / (one_m_t2 + n.c0));
        }
        break;
      }
      case Op::kRowSum: {
        TensorT<S>& ga = nodes_[n.a].grad;
        for (int i = 0; i < ga.rows; ++i)
          for (int j = 0; j < ga.cols; ++j) ga.at(i, j) += g.at(i, 0);
        break;
      }
      case Op::kSum:
        accumulate(nodes_[n.a].grad, g.at(0, 0));
        break;
      case Op::kMean:
        accumulate(nodes_[n.a].grad, g.at(0, 0) / static_cast<S>(nodes_[n.a].val.size()));
        break;
      case Op::kMseLoss: {
        TensorT<S>& ga = nodes_[n.a].grad;
        const S w = g.at(0, 0) * S(2) / static_cast<S>(n.aux.size());
        for (int i = 0; i < ga.size(); ++i)
          ga.v[i] += w * (nodes_[n.a].val.v[i] - n.aux.v[i]);
        break;
      }
      case Op::kBceLogits: {
        TensorT<S>& ga = nodes_[n.a].grad;
        const S w = g.at(0, 0) / static_cast<S>(n.aux.size());
        for (int i = 0; i < ga.size(); ++i) {
          const S x = nodes_[n.a].val.v[i];
          const S sig = S(1) / (S(1) + std::exp(-x));
          ga.v[i] += w * (sig - n.aux.v[i]);
        }
        break;
      }
      case Op::kConcatCols: {
        TensorT<S>& ga = nodes_[n.a].grad;
        TensorT<S>& gb = nodes_[n.b].grad;
        for (int i = 0; i < g.rows; ++i) {
          for (int j = 0; j < ga.cols; ++j) ga.at(i, j) += g.at(i, j);
          for (int j = 0; j < gb.cols; ++j) gb.at(i, j) += g.at(i, ga.cols + j);
        }
        break;
      }
      case Op::kSelectStep: {
        for (int i = 0; i < g.rows; ++i) {
          TensorT<S>& gh = nodes_[n.multi[n.steps[i] - 1]].grad;
          for (int j = 0; j < g.cols; ++j) gh.at(i, j) += g.at(i, j);
        }
        break;
      }
      case Op::kRepeatRows: {
        TensorT<S>& ga = nodes_[n.a].grad;
        const int times = static_cast<int>(n.c0);
        for (int i = 0; i < g.rows; ++i)
          for (int j = 0; j < g.cols; ++j) ga.at(i / times, j) += g.at(i, j);
        break;
      }
    }
  }

  static void accumulate(TensorT<S>& dst, const TensorT<S>& src, S w) {
    for (int i = 0; i < dst.size(); ++i) dst.v[i] += w * src.v[i];
  }
  static void accumulate(TensorT<S>& dst, S w) {
    for (auto& x : dst.v) x += w;
  }

  std::vector<Node> nodes_;
};

using Tape = TapeT<float>;

}  // namespace pushlab::nets
