#pragma once

// Reverse-mode differentiation over dense row-batched matrices. A Tape is
// built fresh for every forward pass; parameters are bound by pointer so
// backward() accumulates straight into caller-owned gradient storage.

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "scoreflow/core.hpp"

namespace scoreflow::train {

using Mat = Eigen::MatrixXd;
using ColVec = Eigen::VectorXd;

class Tape {
 public:
  using Id = std::size_t;

  /// Leaf bound to a parameter; gradients are added into *grad on backward().
  Id param(const Mat& value, Mat* grad) { return push(Op::param, value, {}, grad); }

  Id constant(Mat value) { return push(Op::constant, std::move(value), {}); }

  /// a (n x k) times b (k x m).
  Id matmul(Id a, Id b) {
    check(value(a).cols() == value(b).rows(), "matmul");
    return push(Op::matmul, value(a) * value(b), {a, b});
  }

  /// Adds a 1 x m row vector to every row of a.
  Id add_row_bias(Id a, Id bias) {
    check(value(bias).rows() == 1 && value(bias).cols() == value(a).cols(), "add_row_bias");
    Mat out = value(a);
    out.rowwise() += value(bias).row(0);
    return push(Op::add_row_bias, std::move(out), {a, bias});
  }

  Id silu(Id a) {
    const Mat& x = value(a);
    Mat out = x.array() / (1.0 + (-x.array()).exp());
    return push(Op::silu, std::move(out), {a});
  }

  Id mul(Id a, Id b) {
    same_shape(a, b, "mul");
    return push(Op::mul, value(a).cwiseProduct(value(b)), {a, b});
  }

  Id add(Id a, Id b) {
    same_shape(a, b, "add");
    return push(Op::add, value(a) + value(b), {a, b});
  }

  Id sub(Id a, Id b) {
    same_shape(a, b, "sub");
    return push(Op::sub, value(a) - value(b), {a, b});
  }

  /// Multiplies row i of a by the constant w[i].
  Id scale_rows(Id a, const ColVec& w) {
    check(w.size() == value(a).rows(), "scale_rows");
    Id id = push(Op::scale_rows, w.asDiagonal() * value(a), {a});
    nodes_[id].weights = w;
    return id;
  }

  Id concat_cols(Id a, Id b) {
    check(value(a).rows() == value(b).rows(), "concat_cols");
    Mat out(value(a).rows(), value(a).cols() + value(b).cols());
    out << value(a), value(b);
    return push(Op::concat_cols, std::move(out), {a, b});
  }

  /// Scalar (1 x 1): mean over rows of w[i] * ||a_i - target_i||^2.
  Id weighted_mse(Id a, const Mat& target, const ColVec& w) {
    check(target.rows() == value(a).rows() && target.cols() == value(a).cols() && w.size() == target.rows(),
          "weighted_mse");
    const Mat diff = value(a) - target;
    const double n = static_cast<double>(diff.rows());
    Mat out(1, 1);
    out(0, 0) = (w.array() * diff.rowwise().squaredNorm().array()).sum() / n;
    Id id = push(Op::weighted_mse, std::move(out), {a});
    nodes_[id].weights = w;
    nodes_[id].aux = diff;
    return id;
  }

  const Mat& value(Id id) const { return nodes_.at(id).value; }
  std::size_t size() const { return nodes_.size(); }

  /// Propagates d(out)/d(.) from a scalar node back to every bound parameter.
  void backward(Id out) {
    check(value(out).size() == 1, "backward needs a scalar output");
    for (auto& n : nodes_) n.grad.setZero(n.value.rows(), n.value.cols());
    nodes_[out].grad(0, 0) = 1.0;
    for (std::size_t i = out + 1; i-- > 0;) {
      Node& n = nodes_[i];
      const Mat& g = n.grad;
      switch (n.op) {
        case Op::param:
          *n.param_grad += g;
          break;
        case Op::constant:
          break;
        case Op::matmul:
          nodes_[n.in[0]].grad.noalias() += g * value(n.in[1]).transpose();
          nodes_[n.in[1]].grad.noalias() += value(n.in[0]).transpose() * g;
          break;
        case Op::add_row_bias:
          nodes_[n.in[0]].grad += g;
          nodes_[n.in[1]].grad += g.colwise().sum();
          break;
        case Op::silu: {
          const auto x = value(n.in[0]).array();
          const auto sig = 1.0 / (1.0 + (-x).exp());
          nodes_[n.in[0]].grad.array() += g.array() * sig * (1.0 + x * (1.0 - sig));
          break;
        }
        case Op::mul:
          nodes_[n.in[0]].grad.array() += g.array() * value(n.in[1]).array();
          nodes_[n.in[1]].grad.array() += g.array() * value(n.in[0]).array();
          break;
        case Op::add:
          nodes_[n.in[0]].grad += g;
          nodes_[n.in[1]].grad += g;
          break;
        case Op::sub:
          nodes_[n.in[0]].grad += g;
          nodes_[n.in[1]].grad -= g;
          break;
        case Op::scale_rows:
          nodes_[n.in[0]].grad.noalias() += n.weights.asDiagonal() * g;
          break;
        case Op::concat_cols: {
          const auto ca = value(n.in[0]).cols();
          nodes_[n.in[0]].grad += g.leftCols(ca);
          nodes_[n.in[1]].grad += g.rightCols(g.cols() - ca);
          break;
        }
        case Op::weighted_mse: {
          const double scale = 2.0 * g(0, 0) / static_cast<double>(n.aux.rows());
          nodes_[n.in[0]].grad.noalias() += scale * (n.weights.asDiagonal() * n.aux);
          break;
        }
      }
    }
  }

 private:
  enum class Op { param, constant, matmul, add_row_bias, silu, mul, add, sub, scale_rows, concat_cols, weighted_mse };

  struct Node {
    Op op;
    Mat value;
    Mat grad;
    std::vector<Id> in;
    Mat* param_grad = nullptr;
    ColVec weights;
    Mat aux;
  };

  Id push(Op op, Mat value, std::vector<Id> in, Mat* param_grad = nullptr) {
    for (Id i : in) check(i < nodes_.size(), "unknown node");
    nodes_.push_back(Node{op, std::move(value), Mat(), std::move(in), param_grad, ColVec(), Mat()});
    return nodes_.size() - 1;
  }

  static void check(bool ok, const char* what) {
    if (!ok) throw DimensionMismatch(std::string("tape: ") + what);
  }
  void same_shape(Id a, Id b, const char* what) const {
    check(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols(), what);
  }

  std::vector<Node> nodes_;
};

}  // namespace scoreflow::train
