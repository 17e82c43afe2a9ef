#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "dbsde/error.hpp"
#include "dbsde/nn/param_store.hpp"

namespace dbsde::nn {

using Matrix = Eigen::MatrixXd;

/// max(x, 0) + exp(min(x, 0)) - 1, written without a select so Eigen can
/// vectorise the exponential. Exact identity for x > 0.
inline Matrix elu_values(const Matrix& x) {
  return (x.array().max(0.0) + (x.array().min(0.0).exp() - 1.0)).matrix();
}

/// Handle to a node on a Tape. Values are matrices laid out as
/// (features x batch), so one node carries a whole mini-batch.
struct Var {
  std::size_t id;
};

/// Reverse-mode differentiation of a scalar loss over batched matrix values.
///
/// Nodes are appended in evaluation order, which is therefore a valid
/// topological order; the backward sweep simply walks the tape in reverse.
/// Parameter leaves copy their entry out of a ParamStore and their adjoints
/// are scattered back into a gradient array congruent with that store.
class Tape {
 public:
  Var constant(Matrix value) {
    Node n;
    n.op = Op::Constant;
    n.value = std::move(value);
    return push(std::move(n));
  }

  Var param(const ParamStore& store, std::size_t entry) {
    if (store_ != nullptr && store_ != &store)
      throw InvalidSpec("a tape can only track parameters of one ParamStore");
    store_ = &store;
    Node n;
    n.op = Op::Param;
    n.entry = entry;
    n.value = store.view(entry);
    n.requires_grad = true;
    return push(std::move(n));
  }

  /// weight (out x in) * x (in x batch) + bias (out x 1), bias broadcast over columns.
  Var affine(Var weight, Var bias, Var x) {
    const Matrix& w = value(weight);
    const Matrix& b = value(bias);
    const Matrix& xv = value(x);
    if (w.cols() != xv.rows() || b.rows() != w.rows() || b.cols() != 1)
      throw InvalidSpec("affine: shape mismatch");
    Node n;
    n.op = Op::Affine;
    n.in = {weight.id, bias.id, x.id};
    n.value.noalias() = w * xv;
    n.value.colwise() += b.col(0);
    return push(std::move(n));
  }

  Var elu(Var x) {
    Node n;
    n.op = Op::Elu;
    n.in[0] = x.id;
    n.value = elu_values(value(x));
    return push(std::move(n));
  }

  Var add(Var a, Var b) { return binary(Op::Add, a, b, value(a) + value(b)); }
  Var sub(Var a, Var b) { return binary(Op::Sub, a, b, value(a) - value(b)); }
  Var mul(Var a, Var b) {
    return binary(Op::Mul, a, b, value(a).cwiseProduct(value(b)));
  }

  Var scale(Var a, double s) {
    Node n;
    n.op = Op::Scale;
    n.in[0] = a.id;
    n.scalar = s;
    n.value = value(a) * s;
    return push(std::move(n));
  }

  /// max(a, 0); the derivative at the kink is taken as 0.
  Var relu(Var a) {
    Node n;
    n.op = Op::Relu;
    n.in[0] = a.id;
    n.value = value(a).cwiseMax(0.0);
    return push(std::move(n));
  }

  Var square(Var a) {
    Node n;
    n.op = Op::Square;
    n.in[0] = a.id;
    n.value = value(a).array().square().matrix();
    return push(std::move(n));
  }

  /// Mean over every entry; yields a 1x1 node.
  Var mean(Var a) {
    Node n;
    n.op = Op::Mean;
    n.in[0] = a.id;
    n.value = Matrix::Constant(1, 1, value(a).mean());
    return push(std::move(n));
  }

  /// Column sums: (r x batch) -> (1 x batch).
  Var row_sum(Var a) {
    Node n;
    n.op = Op::RowSum;
    n.in[0] = a.id;
    n.value = value(a).colwise().sum();
    return push(std::move(n));
  }

  /// Repeats an (r x 1) column across `cols` columns.
  Var broadcast(Var a, Eigen::Index cols) {
    if (value(a).cols() != 1) throw InvalidSpec("broadcast: input must be a single column");
    Node n;
    n.op = Op::Broadcast;
    n.in[0] = a.id;
    n.value = value(a).replicate(1, cols);
    return push(std::move(n));
  }

  /// Elementwise primitive with caller-supplied value and local partials.
  /// partials[k] has the shape of inputs[k]; the output is either shaped like
  /// each input or is a single row, in which case d out(0,c) / d in_k(r,c) =
  /// partials[k](r,c).
  Var elementwise(const std::vector<Var>& inputs, Matrix value_out, std::vector<Matrix> partials) {
    if (inputs.size() != partials.size())
      throw InvalidSpec("elementwise: one partial matrix per input is required");
    Node n;
    n.op = Op::Elementwise;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      const Matrix& iv = value(inputs[k]);
      if (partials[k].rows() != iv.rows() || partials[k].cols() != iv.cols())
        throw InvalidSpec("elementwise: partial shape differs from input shape");
      if (iv.cols() != value_out.cols() || (iv.rows() != value_out.rows() && value_out.rows() != 1))
        throw InvalidSpec("elementwise: input shape incompatible with output");
      n.inputs.push_back(inputs[k].id);
    }
    n.partials = std::move(partials);
    n.value = std::move(value_out);
    return push(std::move(n));
  }

  const Matrix& value(Var v) const { return nodes_.at(v.id).value; }
  double scalar(Var v) const {
    const Matrix& m = value(v);
    if (m.size() != 1) throw InvalidSpec("scalar: node is not 1x1");
    return m(0, 0);
  }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient of a scalar loss with respect to every entry of `store`.
  std::vector<double> gradient(Var loss, const ParamStore& store) const {
    if (value(loss).size() != 1) throw InvalidSpec("gradient: loss must be a 1x1 node");
    if (store_ != nullptr && store_ != &store)
      throw InvalidSpec("gradient: store differs from the one the tape tracked");
    std::vector<double> out(store.size(), 0.0);
    if (!nodes_[loss.id].requires_grad) return out;

    std::vector<Matrix> adj(loss.id + 1);
    adj[loss.id] = Matrix::Ones(1, 1);

    for (std::size_t i = loss.id + 1; i-- > 0;) {
      const Node& n = nodes_[i];
      if (adj[i].size() == 0) continue;
      const Matrix& g = adj[i];
      switch (n.op) {
        case Op::Constant:
          break;
        case Op::Param: {
          const auto& e = store.entry(n.entry);
          Eigen::Map<Matrix>(out.data() + e.offset, e.rows, e.cols) += g;
          break;
        }
        case Op::Affine: {
          const Matrix& w = nodes_[n.in[0]].value;
          const Matrix& x = nodes_[n.in[2]].value;
          if (wants(n.in[0])) accumulate(adj, n.in[0], g * x.transpose());
          if (wants(n.in[1])) accumulate(adj, n.in[1], g.rowwise().sum());
          if (wants(n.in[2])) accumulate(adj, n.in[2], w.transpose() * g);
          break;
        }
        case Op::Elu: {
          // ELU'(x) = exp(min(x, 0)) = elu(x) - max(x, 0) + 1
          const Matrix& x = nodes_[n.in[0]].value;
          accumulate(adj, n.in[0], (g.array() * (n.value.array() - x.array().max(0.0) + 1.0)).matrix());
          break;
        }
        case Op::Add:
          if (wants(n.in[0])) accumulate(adj, n.in[0], g);
          if (wants(n.in[1])) accumulate(adj, n.in[1], g);
          break;
        case Op::Sub:
          if (wants(n.in[0])) accumulate(adj, n.in[0], g);
          if (wants(n.in[1])) accumulate(adj, n.in[1], -g);
          break;
        case Op::Mul:
          if (wants(n.in[0])) accumulate(adj, n.in[0], g.cwiseProduct(nodes_[n.in[1]].value));
          if (wants(n.in[1])) accumulate(adj, n.in[1], g.cwiseProduct(nodes_[n.in[0]].value));
          break;
        case Op::Scale:
          accumulate(adj, n.in[0], g * n.scalar);
          break;
        case Op::Relu: {
          const Matrix& x = nodes_[n.in[0]].value;
          accumulate(adj, n.in[0], (x.array() > 0.0).select(g.array(), 0.0).matrix());
          break;
        }
        case Op::Square:
          accumulate(adj, n.in[0], 2.0 * g.cwiseProduct(nodes_[n.in[0]].value));
          break;
        case Op::Mean: {
          const Matrix& x = nodes_[n.in[0]].value;
          accumulate(adj, n.in[0],
                     Matrix::Constant(x.rows(), x.cols(), g(0, 0) / static_cast<double>(x.size())));
          break;
        }
        case Op::RowSum: {
          const Matrix& x = nodes_[n.in[0]].value;
          accumulate(adj, n.in[0], g.replicate(x.rows(), 1));
          break;
        }
        case Op::Broadcast:
          accumulate(adj, n.in[0], g.rowwise().sum());
          break;
        case Op::Elementwise:
          for (std::size_t k = 0; k < n.inputs.size(); ++k) {
            const std::size_t src = n.inputs[k];
            if (!wants(src)) continue;
            const Matrix& p = n.partials[k];
            if (p.rows() == g.rows())
              accumulate(adj, src, p.cwiseProduct(g));
            else
              accumulate(adj, src, p.cwiseProduct(g.replicate(p.rows(), 1)));
          }
          break;
      }
    }
    return out;
  }

 private:
  enum class Op { Constant, Param, Affine, Elu, Add, Sub, Mul, Scale, Relu, Square, Mean, RowSum, Broadcast, Elementwise };

  struct Node {
    Op op = Op::Constant;
    std::array<std::size_t, 3> in{};
    double scalar = 0.0;
    std::size_t entry = 0;
    bool requires_grad = false;
    Matrix value;
    std::vector<std::size_t> inputs;
    std::vector<Matrix> partials;
  };

  Var push(Node n) {
    if (n.op != Op::Constant && n.op != Op::Param) {
      switch (n.op) {
        case Op::Affine:
          n.requires_grad = wants(n.in[0]) || wants(n.in[1]) || wants(n.in[2]);
          break;
        case Op::Add:
        case Op::Sub:
        case Op::Mul:
          n.requires_grad = wants(n.in[0]) || wants(n.in[1]);
          break;
        case Op::Elementwise:
          for (auto src : n.inputs) n.requires_grad = n.requires_grad || wants(src);
          break;
        default:
          n.requires_grad = wants(n.in[0]);
      }
    }
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  Var binary(Op op, Var a, Var b, Matrix v) {
    const Matrix& av = value(a);
    const Matrix& bv = value(b);
    if (av.rows() != bv.rows() || av.cols() != bv.cols())
      throw InvalidSpec("binary op: operand shapes differ");
    Node n;
    n.op = op;
    n.in = {a.id, b.id, 0};
    n.value = std::move(v);
    return push(std::move(n));
  }

  bool wants(std::size_t id) const { return nodes_[id].requires_grad; }

  template <typename Expr>
  static void accumulate(std::vector<Matrix>& adj, std::size_t id, const Expr& expr) {
    if (adj[id].size() == 0)
      adj[id] = expr;
    else
      adj[id] += expr;
  }

  std::vector<Node> nodes_;
  const ParamStore* store_ = nullptr;
};

}  // namespace dbsde::nn
