#include "parlm/graph.hpp"

#include <cmath>
#include <stdexcept>

namespace parlm {

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
constexpr double kLnEps = 1e-5;  // layer norm epsilon
}  // namespace

Graph::V Graph::make(Mat value, bool needs_grad) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  nodes_.push_back(std::move(n));
  return static_cast<V>(nodes_.size() - 1);
}

Mat& Graph::grad_of(V v) {
  Node& n = nodes_[v];
  if (!n.grad_ready) {
    n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    n.grad_ready = true;
  }
  return n.grad;
}

Graph::V Graph::input(Mat m) { return make(std::move(m), false); }

Graph::V Graph::param(Param& p) {
  for (auto& [pp, v] : param_leaves_)
    if (pp == &p) return v;
  V v = make(p.value, p.trainable);
  param_leaves_.emplace_back(&p, v);
  return v;
}

Graph::V Graph::matmul(V a, V b, bool trans_a, bool trans_b) {
  const Mat& A = nodes_[a].value;
  const Mat& B = nodes_[b].value;
  Mat c;
  if (!trans_a && !trans_b) c.noalias() = A * B;
  else if (trans_a && !trans_b) c.noalias() = A.transpose() * B;
  else if (!trans_a && trans_b) c.noalias() = A * B.transpose();
  else c.noalias() = A.transpose() * B.transpose();
  V out = make(std::move(c), ng(a) || ng(b));
  if (!nodes_[out].needs_grad) return out;
  nodes_[out].back = [this, a, b, out, trans_a, trans_b]() {
    const Mat& G = nodes_[out].grad;
    const Mat& A = nodes_[a].value;
    const Mat& B = nodes_[b].value;
    if (ng(a)) {
      Mat& dA = grad_of(a);
      if (!trans_a && !trans_b) dA.noalias() += G * B.transpose();
      else if (trans_a && !trans_b) dA.noalias() += B * G.transpose();
      else if (!trans_a && trans_b) dA.noalias() += G * B;
      else dA.noalias() += B.transpose() * G.transpose();
    }
    if (ng(b)) {
      Mat& dB = grad_of(b);
      if (!trans_a && !trans_b) dB.noalias() += A.transpose() * G;
      else if (trans_a && !trans_b) dB.noalias() += A * G;
      else if (!trans_a && trans_b) dB.noalias() += G.transpose() * A;
      else dB.noalias() += G.transpose() * A.transpose();
    }
  };
  return out;
}

Graph::V Graph::add(V a, V b) {
  V out = make(nodes_[a].value + nodes_[b].value, ng(a) || ng(b));
  if (!nodes_[out].needs_grad) return out;
  nodes_[out].back = [this, a, b, out]() {
    const Mat& G = nodes_[out].grad;
    if (ng(a)) grad_of(a) += G;
    if (ng(b)) grad_of(b) += G;
  };
  return out;
}

Graph::V Graph::sub(V a, V b) {
  V out = make(nodes_[a].value - nodes_[b].value, ng(a) || ng(b));
  if (!nodes_[out].needs_grad) return out;
  nodes_[out].back = [this, a, b, out]() {
    const Mat& G = nodes_[out].grad;
    if (ng(a)) grad_of(a) += G;
    if (ng(b)) grad_of(b) -= G;
  };
  return out;
}

Graph::V Graph::add_rowvec(V a, V bias) {
  const Mat& A = nodes_[a].value;
  const Mat& B = nodes_[bias].value;
  if (B.rows() != 1 || B.cols() != A.cols()) throw std::invalid_argument("add_rowvec: bias must be 1 x cols");
  Mat c = A.rowwise() + B.row(0);
  V out = make(std::move(c), ng(a) || ng(bias));
  if (!nodes_[out].needs_grad) return out;
  nodes_[out].back = [this, a, bias, out]() {
    const Mat& G = nodes_[out].grad;
    if (ng(a)) grad_of(a) += G;
    if (ng(bias)) grad_of(bias).row(0) += G.colwise().sum();
  };
  return out;
}

Graph::V Graph::mul(V a, V b) {
  V out = make(nodes_[a].value.cwiseProduct(nodes_[b].value), ng(a) || ng(b));
  if (!nodes_[out].needs_grad) return out;
  nodes_[out].back = [this, a, b, out]() {
    const Mat& G = nodes_[out].grad;
    if (ng(a)) grad_of(a) += G.cwiseProduct(nodes_[b].value);
    if (ng(b)) grad_of(b) += G.cwiseProduct(nodes_[a].value);
  };
  return out;
}

Graph::V Graph::mul_colvec(V a, V gate) {
  const Mat& A = nodes_[a].value;
  const Mat& g = nodes_[gate].value;
  if (g.cols() != 1 || g.rows() != A.rows()) throw std::invalid_argument("mul_colvec: gate must be rows x 1");
  Mat c = A.array().colwise() * g.col(0).array();
  V out = make(std::move(c), ng(a) || ng(gate));
  if (!nodes_[out].needs_grad) return out;
  nodes_[out].back = [this, a, gate, out]() {
    const Mat& G = nodes_[out].grad;
    if (ng(a)) grad_of(a) += (G.array().colwise() * nodes_[gate].value.col(0).array()).matrix();
    if (ng(gate)) grad_of(gate).col(0) += G.cwiseProduct(nodes_[a].value).rowwise().sum();
  };
  return out;
}

Graph::V Graph::mul_rowvec(V a, V gate) {
  const Mat& A = nodes_[a].value;
  const Mat& g = nodes_[gate].value;
  if (g.rows() != 1 || g.cols() != A.cols()) throw std::invalid_argument("mul_rowvec: gate must be 1 x cols");
  Mat c = A.array().rowwise() * g.row(0).array();
  V out = make(std::move(c), ng(a) || ng(gate));
  if (!nodes_[out].needs_grad) return out;
  nodes_[out].back = [this, a, gate, out]() {
    const Mat& G = nodes_[out].grad;
    if (ng(a)) grad_of(a) += (G.array().rowwise() * nodes_[gate].value.row(0).array()).matrix();
    if (ng(gate)) grad_of(gate).row(0) += G.cwiseProduct(nodes_[a].value).colwise().sum();
  };
  return out;
}

Graph::V Graph::scale(V a, double c) {
  V out = make(nodes_[a].value * c, ng(a));
  if (!nodes_[out].needs_grad) return out;
  nodes_[out].back = [this, a, out, c]() { grad_of(a) += c * nodes_[out].grad; };
  return out;
}

Graph::V Graph::gelu(V a) {
  const Mat& X = nodes_[a].value;
  Mat y = X.unaryExpr([](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); });
  V out = make(std::move(y), ng(a));
  if (!nodes_[out].needs_grad) return out;
  nodes_[out].back = [this, a, out]() {
    const Mat& G = nodes_[out].grad;
    const Mat& X = nodes_[a].value;
    Mat d = X.unaryExpr([](double x) {
      double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
      double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
      return cdf + x * pdf;
    });
    grad_of(a) += G.cwiseProduct(d);
  };
  return out;
}

Graph::V Graph::sigmoid(V a) {
  Mat y = nodes_[a].value.unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  V out = make(std::move(y), ng(a));
  if (!nodes_[out].needs_grad) return out;
  nodes_[out].back = [this, a, out]() {
    const Mat& Y = nodes_[out].value;
    grad_of(a) += nodes_[out].grad.cwiseProduct(Y.cwiseProduct(Mat::Ones(Y.rows(), Y.cols()) - Y));
  };
  return out;
}

Graph::V Graph::softmax_rows(V a) {
  const Mat& X = nodes_[a].value;
  Mat y(X.rows(), X.cols());
  for (long i = 0; i < X.rows(); ++i) {
    double mx = X.row(i).maxCoeff();
    Eigen::RowVectorXd e = (X.row(i).array() - mx).exp();
    y.row(i) = e / e.sum();
  }
  V out = make(std::move(y), ng(a));
  if (!nodes_[out].needs_grad) return out;
  nodes_[out].back = [this, a, out]() {
    const Mat& P = nodes_[out].value;
    const Mat& G = nodes_[out].grad;
    Mat& dA = grad_of(a);
    for (long i = 0; i < P.rows(); ++i) {
      double dot = G.row(i).dot(P.row(i));
      dA.row(i) += P.row(i).cwiseProduct((G.row(i).array() - dot).matrix());
    }
  };
  return out;
}

Graph::V Graph::layer_norm(V a, V gain, V bias) {
  const Mat& X = nodes_[a].value;
  const long r = X.rows(), c = X.cols();
  Mat xhat(r, c);
  Eigen::VectorXd inv_std(r);
  for (long i = 0; i < r; ++i) {
    double mean = X.row(i).mean();
    double var = (X.row(i).array() - mean).square().mean();
    double is = 1.0 / std::sqrt(var + kLnEps);
    inv_std(i) = is;
    xhat.row(i) = (X.row(i).array() - mean) * is;
  }
  Mat y = (xhat.array().rowwise() * nodes_[gain].value.row(0).array()).rowwise() +
          nodes_[bias].value.row(0).array();
  V out = make(std::move(y), ng(a) || ng(gain) || ng(bias));
  if (!nodes_[out].needs_grad) return out;
  // xhat and inv_std are captured for the backward pass.
  nodes_[out].back = [this, a, gain, bias, out, xhat = std::move(xhat), inv_std = std::move(inv_std)]() {
    const Mat& G = nodes_[out].grad;
    const long r = G.rows(), c = G.cols();
    if (ng(gain)) grad_of(gain).row(0) += G.cwiseProduct(xhat).colwise().sum();
    if (ng(bias)) grad_of(bias).row(0) += G.colwise().sum();
    if (ng(a)) {
      Mat& dA = grad_of(a);
      const Eigen::RowVectorXd& w = nodes_[gain].value.row(0);
      for (long i = 0; i < r; ++i) {
        Eigen::RowVectorXd gw = G.row(i).cwiseProduct(w);
        double m1 = gw.mean();
        double m2 = gw.cwiseProduct(xhat.row(i)).mean();
        dA.row(i) += inv_std(i) * (gw.array() - m1 - xhat.row(i).array() * m2).matrix();
      }
    }
  };
  return out;
}

Graph::V Graph::transpose(V a) {
  V out = make(nodes_[a].value.transpose(), ng(a));
  if (!nodes_[out].needs_grad) return out;
  nodes_[out].back = [this, a, out]() { grad_of(a) += nodes_[out].grad.transpose(); };
  return out;
}

Graph::V Graph::concat_rows(const std::vector<V>& parts) {
  long rows = 0;
  const long cols = nodes_[parts.at(0)].value.cols();
  bool needs = false;
  for (V p : parts) {
    rows += nodes_[p].value.rows();
    needs = needs || ng(p);
  }
  Mat y(rows, cols);
  long r = 0;
  for (V p : parts) {
    y.middleRows(r, nodes_[p].value.rows()) = nodes_[p].value;
    r += nodes_[p].value.rows();
  }
  V out = make(std::move(y), needs);
  if (!needs) return out;
  nodes_[out].back = [this, parts, out]() {
    const Mat& G = nodes_[out].grad;
    long r = 0;
    for (V p : parts) {
      long pr = nodes_[p].value.rows();
      if (ng(p)) grad_of(p) += G.middleRows(r, pr);
      r += pr;
    }
  };
  return out;
}

Graph::V Graph::concat_cols(const std::vector<V>& parts) {
  long cols = 0;
  const long rows = nodes_[parts.at(0)].value.rows();
  bool needs = false;
  for (V p : parts) {
    cols += nodes_[p].value.cols();
    needs = needs || ng(p);
  }
  Mat y(rows, cols);
  long c = 0;
  for (V p : parts) {
    y.middleCols(c, nodes_[p].value.cols()) = nodes_[p].value;
    c += nodes_[p].value.cols();
  }
  V out = make(std::move(y), needs);
  if (!needs) return out;
  nodes_[out].back = [this, parts, out]() {
    const Mat& G = nodes_[out].grad;
    long c = 0;
    for (V p : parts) {
      long pc = nodes_[p].value.cols();
      if (ng(p)) grad_of(p) += G.middleCols(c, pc);
      c += pc;
    }
  };
  return out;
}

Graph::V Graph::slice_rows(V a, long r0, long nrows) {
  V out = make(nodes_[a].value.middleRows(r0, nrows), ng(a));
  if (!nodes_[out].needs_grad) return out;
  nodes_[out].back = [this, a, out, r0, nrows]() {
    grad_of(a).middleRows(r0, nrows) += nodes_[out].grad;
  };
  return out;
}

Graph::V Graph::slice_cols(V a, long c0, long ncols) {
  V out = make(nodes_[a].value.middleCols(c0, ncols), ng(a));
  if (!nodes_[out].needs_grad) return out;
  nodes_[out].back = [this, a, out, c0, ncols]() {
    grad_of(a).middleCols(c0, ncols) += nodes_[out].grad;
  };
  return out;
}

Graph::V Graph::mean_rows(V a) {
  const Mat& A = nodes_[a].value;
  Mat y = A.colwise().mean();
  V out = make(std::move(y), ng(a));
  if (!nodes_[out].needs_grad) return out;
  nodes_[out].back = [this, a, out]() {
    const Mat& G = nodes_[out].grad;
    const double inv = 1.0 / static_cast<double>(nodes_[a].value.rows());
    grad_of(a) += inv * G.replicate(nodes_[a].value.rows(), 1);
  };
  return out;
}

Graph::V Graph::max_rows(V a) {
  const Mat& A = nodes_[a].value;
  Mat y(1, A.cols());
  std::vector<long> arg(A.cols());
  for (long j = 0; j < A.cols(); ++j) {
    long best = 0;
    for (long i = 1; i < A.rows(); ++i)
      if (A(i, j) > A(best, j)) best = i;
    arg[j] = best;
    y(0, j) = A(best, j);
  }
  V out = make(std::move(y), ng(a));
  if (!nodes_[out].needs_grad) return out;
  nodes_[out].back = [this, a, out, arg = std::move(arg)]() {
    const Mat& G = nodes_[out].grad;
    Mat& dA = grad_of(a);
    for (long j = 0; j < G.cols(); ++j) dA(arg[j], j) += G(0, j);
  };
  return out;
}

Graph::V Graph::mean_cols(V a) {
  const Mat& A = nodes_[a].value;
  Mat y = A.rowwise().mean();
  V out = make(std::move(y), ng(a));
  if (!nodes_[out].needs_grad) return out;
  nodes_[out].back = [this, a, out]() {
    const Mat& G = nodes_[out].grad;
    const double inv = 1.0 / static_cast<double>(nodes_[a].value.cols());
    grad_of(a) += inv * G.replicate(1, nodes_[a].value.cols());
  };
  return out;
}

Graph::V Graph::max_cols(V a) {
  const Mat& A = nodes_[a].value;
  Mat y(A.rows(), 1);
  std::vector<long> arg(A.rows());
  for (long i = 0; i < A.rows(); ++i) {
    long best = 0;
    for (long j = 1; j < A.cols(); ++j)
      if (A(i, j) > A(i, best)) best = j;
    arg[i] = best;
    y(i, 0) = A(i, best);
  }
  V out = make(std::move(y), ng(a));
  if (!nodes_[out].needs_grad) return out;
  nodes_[out].back = [this, a, out, arg = std::move(arg)]() {
    const Mat& G = nodes_[out].grad;
    Mat& dA = grad_of(a);
    for (long i = 0; i < G.rows(); ++i) dA(i, arg[i]) += G(i, 0);
  };
  return out;
}

Graph::V Graph::sum_all(V a) {
  Mat y(1, 1);
  y(0, 0) = nodes_[a].value.sum();
  V out = make(std::move(y), ng(a));
  if (!nodes_[out].needs_grad) return out;
  nodes_[out].back = [this, a, out]() {
    grad_of(a).array() += nodes_[out].grad(0, 0);
  };
  return out;
}

Graph::V Graph::conv_rows(V x, V kernel, long window) {
  const Mat& X = nodes_[x].value;
  const Mat& K = nodes_[kernel].value;
  const long r = X.rows(), cin = X.cols();
  if (K.rows() != window * cin || K.cols() != 1)
    throw std::invalid_argument("conv_rows: kernel must be (window*cin) x 1");
  const long half = window / 2;
  Mat y = Mat::Zero(r, 1);
  for (long i = 0; i < r; ++i) {
    double acc = 0.0;
    for (long k = 0; k < window; ++k) {
      long ii = i + k - half;
      if (ii < 0 || ii >= r) continue;
      for (long c = 0; c < cin; ++c) acc += K(k * cin + c, 0) * X(ii, c);
    }
    y(i, 0) = acc;
  }
  V out = make(std::move(y), ng(x) || ng(kernel));
  if (!nodes_[out].needs_grad) return out;
  nodes_[out].back = [this, x, kernel, out, window]() {
    const Mat& G = nodes_[out].grad;
    const Mat& X = nodes_[x].value;
    const Mat& K = nodes_[kernel].value;
    const long r = X.rows(), cin = X.cols(), half = window / 2;
    for (long i = 0; i < r; ++i) {
      for (long k = 0; k < window; ++k) {
        long ii = i + k - half;
        if (ii < 0 || ii >= r) continue;
        for (long c = 0; c < cin; ++c) {
          if (ng(x)) grad_of(x)(ii, c) += G(i, 0) * K(k * cin + c, 0);
          if (ng(kernel)) grad_of(kernel)(k * cin + c, 0) += G(i, 0) * X(ii, c);
        }
      }
    }
  };
  return out;
}

Graph::V Graph::embed(Param& table, const std::vector<int>& ids) {
  V t = param(table);
  const Mat& T = nodes_[t].value;
  Mat y(static_cast<long>(ids.size()), T.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= T.rows()) throw std::invalid_argument("embed: id out of range");
    y.row(static_cast<long>(i)) = T.row(ids[i]);
  }
  V out = make(std::move(y), ng(t));
  if (!nodes_[out].needs_grad) return out;
  nodes_[out].back = [this, t, out, ids]() {
    const Mat& G = nodes_[out].grad;
    Mat& dT = grad_of(t);
    for (std::size_t i = 0; i < ids.size(); ++i) dT.row(ids[i]) += G.row(static_cast<long>(i));
  };
  return out;
}

Graph::V Graph::weighted_bce_with_logits(V logits, Mat targets, Mat weights, double eps) {
  const Mat& Z = nodes_[logits].value;
  if (targets.rows() != Z.rows() || targets.cols() != Z.cols() || weights.rows() != Z.rows() ||
      weights.cols() != Z.cols())
    throw std::invalid_argument("weighted_bce_with_logits: shape mismatch");
  if (!Z.allFinite()) throw std::invalid_argument("weighted_bce_with_logits: non-finite logits");
  const long n = Z.rows() * Z.cols();
  Mat p = Z.unaryExpr([](double z) { return 1.0 / (1.0 + std::exp(-z)); });
  double loss = 0.0;
  Mat dz = Mat::Zero(Z.rows(), Z.cols());
  for (long i = 0; i < Z.rows(); ++i)
    for (long j = 0; j < Z.cols(); ++j) {
      double pij = p(i, j);
      double pc = std::min(std::max(pij, eps), 1.0 - eps);
      double y = targets(i, j), w = weights(i, j);
      loss += -w * (y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc));
      if (pij > eps && pij < 1.0 - eps)
        dz(i, j) = -w * (y / pc - (1.0 - y) / (1.0 - pc)) * pij * (1.0 - pij) / static_cast<double>(n);
    }
  Mat out_val(1, 1);
  out_val(0, 0) = loss / static_cast<double>(n);
  V out = make(std::move(out_val), ng(logits));
  if (!nodes_[out].needs_grad) return out;
  nodes_[out].back = [this, logits, out, dz = std::move(dz)]() {
    grad_of(logits) += nodes_[out].grad(0, 0) * dz;
  };
  return out;
}

Graph::V Graph::softmax_xent_rows(V logits, std::vector<int> targets, std::vector<std::uint8_t> mask) {
  const Mat& Z = nodes_[logits].value;
  if (static_cast<long>(targets.size()) != Z.rows() || mask.size() != targets.size())
    throw std::invalid_argument("softmax_xent_rows: target/mask length mismatch");
  long n_incl = 0;
  for (auto m : mask) n_incl += m ? 1 : 0;
  if (n_incl == 0) throw std::invalid_argument("softmax_xent_rows: all rows masked out");
  double loss = 0.0;
  Mat dz = Mat::Zero(Z.rows(), Z.cols());
  for (long i = 0; i < Z.rows(); ++i) {
    if (!mask[i]) continue;
    double mx = Z.row(i).maxCoeff();
    Eigen::RowVectorXd e = (Z.row(i).array() - mx).exp();
    double s = e.sum();
    loss += -(Z(i, targets[i]) - mx - std::log(s));
    dz.row(i) = e / s / static_cast<double>(n_incl);
    dz(i, targets[i]) -= 1.0 / static_cast<double>(n_incl);
  }
  Mat out_val(1, 1);
  out_val(0, 0) = loss / static_cast<double>(n_incl);
  V out = make(std::move(out_val), ng(logits));
  if (!nodes_[out].needs_grad) return out;
  nodes_[out].back = [this, logits, out, dz = std::move(dz)]() {
    grad_of(logits) += nodes_[out].grad(0, 0) * dz;
  };
  return out;
}

void Graph::backward(V root) {
  Node& r = nodes_[root];
  if (r.value.rows() != 1 || r.value.cols() != 1)
    throw std::invalid_argument("backward: root must be a scalar node");
  grad_of(root)(0, 0) = 1.0;
  for (long i = static_cast<long>(nodes_.size()) - 1; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.grad_ready && n.back) n.back();
  }
}

void Graph::flush_param_grads() {
  for (auto& [p, v] : param_leaves_) {
    if (p->trainable && nodes_[v].grad_ready) p->grad += nodes_[v].grad;
  }
}

}  // namespace parlm
