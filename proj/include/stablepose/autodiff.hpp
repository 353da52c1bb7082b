#pragma once

// Minimal reverse-mode tape over Eigen matrices: exactly the operations the
// denoiser composes (dense affine layers, rectifier, kNN edge gathering,
// grouped and global max reductions, mean-squared error). Single-threaded,
// fixed evaluation order, so gradients are bitwise reproducible.

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

namespace stablepose::ad {

struct Tape {
  struct Node {
    Eigen::MatrixXd value;
    Eigen::MatrixXd grad;
    std::function<void(Tape&)> back;
  };
  std::vector<Node> nodes;

  int add_node(Eigen::MatrixXd v) {
    Node n;
    n.grad = Eigen::MatrixXd::Zero(v.rows(), v.cols());
    n.value = std::move(v);
    nodes.push_back(std::move(n));
    return static_cast<int>(nodes.size()) - 1;
  }

  const Eigen::MatrixXd& val(int id) const { return nodes[static_cast<std::size_t>(id)].value; }
  Eigen::MatrixXd& grad(int id) { return nodes[static_cast<std::size_t>(id)].grad; }

  // Seeds the (1x1) root with 1 and walks the tape in reverse creation order.
  void backward(int root) {
    grad(root)(0, 0) = 1.0;
    for (int id = root; id >= 0; --id) {
      auto& n = nodes[static_cast<std::size_t>(id)];
      if (n.back) n.back(*this);
    }
  }
};

inline int input(Tape& t, Eigen::MatrixXd v) { return t.add_node(std::move(v)); }

inline int matmul(Tape& t, int a, int b) {
  int out = t.add_node(t.val(a) * t.val(b));
  t.nodes.back().back = [a, b, out](Tape& tp) {
    tp.grad(a) += tp.grad(out) * tp.val(b).transpose();
    tp.grad(b) += tp.val(a).transpose() * tp.grad(out);
  };
  return out;
}

// Adds row vector b (1 x c) to every row of a.
inline int add_rowvec(Tape& t, int a, int b) {
  int out = t.add_node(t.val(a).rowwise() + t.val(b).row(0));
  t.nodes.back().back = [a, b, out](Tape& tp) {
    tp.grad(a) += tp.grad(out);
    tp.grad(b).row(0) += tp.grad(out).colwise().sum();
  };
  return out;
}

inline int add(Tape& t, int a, int b) {
  int out = t.add_node(t.val(a) + t.val(b));
  t.nodes.back().back = [a, b, out](Tape& tp) {
    tp.grad(a) += tp.grad(out);
    tp.grad(b) += tp.grad(out);
  };
  return out;
}

inline int scale(Tape& t, int a, double s) {
  int out = t.add_node(t.val(a) * s);
  t.nodes.back().back = [a, s, out](Tape& tp) { tp.grad(a) += tp.grad(out) * s; };
  return out;
}

// Rectifier with derivative 0 at exactly 0 (zero weights give dead gradients
// past the first nonlinearity, which a test asserts).
inline int relu(Tape& t, int a) {
  int out = t.add_node(t.val(a).cwiseMax(0.0));
  t.nodes.back().back = [a, out](Tape& tp) {
    tp.grad(a).array() += tp.grad(out).array() * (tp.val(a).array() > 0.0).cast<double>();
  };
  return out;
}

inline int concat_cols(Tape& t, const std::vector<int>& ids) {
  Eigen::Index rows = t.val(ids.front()).rows(), cols = 0;
  for (int id : ids) cols += t.val(id).cols();
  Eigen::MatrixXd v(rows, cols);
  Eigen::Index at = 0;
  for (int id : ids) {
    v.middleCols(at, t.val(id).cols()) = t.val(id);
    at += t.val(id).cols();
  }
  int out = t.add_node(std::move(v));
  t.nodes.back().back = [ids, out](Tape& tp) {
    Eigen::Index pos = 0;
    for (int id : ids) {
      tp.grad(id) += tp.grad(out).middleCols(pos, tp.val(id).cols());
      pos += tp.val(id).cols();
    }
  };
  return out;
}

// Row i*k+m of the output is [f_i | f_{knn(i,m)} - f_i] for features f (N x d).
inline int edge_features(Tape& t, int f, const Eigen::MatrixXi& knn) {
  const Eigen::MatrixXd& F = t.val(f);
  Eigen::Index n = knn.rows(), k = knn.cols(), d = F.cols();
  Eigen::MatrixXd E(n * k, 2 * d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index m = 0; m < k; ++m) {
      E.block(i * k + m, 0, 1, d) = F.row(i);
      E.block(i * k + m, d, 1, d) = F.row(knn(i, m)) - F.row(i);
    }
  int out = t.add_node(std::move(E));
  t.nodes.back().back = [f, knn, out, k, d](Tape& tp) {
    Eigen::MatrixXd& G = tp.grad(f);
    const Eigen::MatrixXd& GE = tp.grad(out);
    for (Eigen::Index i = 0; i < knn.rows(); ++i)
      for (Eigen::Index m = 0; m < k; ++m) {
        G.row(i) += GE.block(i * k + m, 0, 1, d) - GE.block(i * k + m, d, 1, d);
        G.row(knn(i, m)) += GE.block(i * k + m, d, 1, d);
      }
  };
  return out;
}

// (N*k x w) -> (N x w), max over each group of k consecutive rows; ties route
// the gradient to the first maximal row.
inline int group_max(Tape& t, int a, int k) {
  const Eigen::MatrixXd& A = t.val(a);
  Eigen::Index n = A.rows() / k, w = A.cols();
  Eigen::MatrixXd out_v(n, w);
  auto arg = std::make_shared<Eigen::MatrixXi>(n, w);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index c = 0; c < w; ++c) {
      Eigen::Index best = 0;
      double bv = A(i * k, c);
      for (Eigen::Index m = 1; m < k; ++m)
        if (A(i * k + m, c) > bv) {
          bv = A(i * k + m, c);
          best = m;
        }
      out_v(i, c) = bv;
      (*arg)(i, c) = static_cast<int>(best);
    }
  int out = t.add_node(std::move(out_v));
  t.nodes.back().back = [a, out, k, arg](Tape& tp) {
    const Eigen::MatrixXd& G = tp.grad(out);
    for (Eigen::Index i = 0; i < G.rows(); ++i)
      for (Eigen::Index c = 0; c < G.cols(); ++c)
        tp.grad(a)(i * k + (*arg)(i, c), c) += G(i, c);
  };
  return out;
}

// (N x w) -> (1 x w) column max; first maximal row wins ties.
inline int colwise_max(Tape& t, int a) {
  const Eigen::MatrixXd& A = t.val(a);
  Eigen::MatrixXd out_v(1, A.cols());
  auto arg = std::make_shared<Eigen::VectorXi>(A.cols());
  for (Eigen::Index c = 0; c < A.cols(); ++c) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < A.rows(); ++i)
      if (A(i, c) > A(best, c)) best = i;
    out_v(0, c) = A(best, c);
    (*arg)(c) = static_cast<int>(best);
  }
  int out = t.add_node(std::move(out_v));
  t.nodes.back().back = [a, out, arg](Tape& tp) {
    for (Eigen::Index c = 0; c < tp.grad(out).cols(); ++c)
      tp.grad(a)((*arg)(c), c) += tp.grad(out)(0, c);
  };
  return out;
}

// Mean over all entries of (a - b)^2. This is the per-term loss convention
// everywhere in the project (training applies its own per-t weights on top).
inline int mse(Tape& t, int a, int b) {
  Eigen::MatrixXd diff = t.val(a) - t.val(b);
  double n = static_cast<double>(diff.size());
  Eigen::MatrixXd v(1, 1);
  v(0, 0) = diff.squaredNorm() / n;
  int out = t.add_node(std::move(v));
  t.nodes.back().back = [a, b, out, n](Tape& tp) {
    double g = tp.grad(out)(0, 0) * 2.0 / n;
    Eigen::MatrixXd d = g * (tp.val(a) - tp.val(b));
    tp.grad(a) += d;
    tp.grad(b) -= d;
  };
  return out;
}

}  // namespace stablepose::ad
