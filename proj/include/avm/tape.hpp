#ifndef AVM_TAPE_HPP
#define AVM_TAPE_HPP

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "avm/common.hpp"

namespace avm {

// Reverse-mode autodiff over dense double matrices. Define-by-run: values are
// computed eagerly at node creation, gradients by a single reverse sweep.
// Dispatch is a switch over op codes rather than per-node closures; node
// counts reach a few thousand per sample, so allocation stays on the matrices.

enum class Op : std::uint8_t {
  kLeaf,
  kAdd,          // a + b, same shape
  kAddBRow,      // a (SxD) + broadcast row b (1xD)
  kRepeatRow,    // 1xD -> SxD
  kMatMul,       // a * b
  kMatMulNT,     // a * b^T
  kScale,        // saux * a
  kSoftmaxRows,
  kLayerNorm,    // rows of in0 normalized, gain in1, bias in2
  kGelu,
  kRelu,
  kSumRows,      // SxD -> 1xD
  kMeanRows,
  kMaxRows,      // columnwise max over rows; ties to lowest row
  kConcatRows,
  kConcatCols,
  kSliceCols,
  kSliceRows,
  kExp,
  kLog,
  kCosine,       // (1xD, 1xD) -> 1x1
  kPickNll,      // -log(max(p[y], clamp))
};

struct TapeNode {
  Op op = Op::kLeaf;
  int in0 = -1, in1 = -1, in2 = -1;
  std::vector<int> ins;  // kConcat* only
  Mat val;
  Mat grad;              // allocated on first contribution during backward
  Mat maux;              // op-specific cache (layernorm x-hat, etc.)
  Eigen::VectorXi iaux;  // argmax rows, slice bounds, picked index
  double saux = 0.0;
  Mat* sink = nullptr;   // leaf-only: external gradient accumulator
};

struct Var {
  int i = -1;
  bool valid() const { return i >= 0; }
};

class Tape {
 public:
  static constexpr double kNllClamp = 1e-12;

  const Mat& val(Var v) const { return nodes_[v.i].val; }
  const Mat& grad(Var v) const { return nodes_[v.i].grad; }
  bool has_grad(Var v) const { return nodes_[v.i].grad.size() > 0; }
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); zero_norm_cosine_seen_ = false; }

  /// Set when a cosine node saw a zero-norm operand (treated as similarity 0).
  bool zero_norm_cosine_seen() const { return zero_norm_cosine_seen_; }

  Var leaf(Mat v, Mat* grad_sink = nullptr) {
    TapeNode n;
    n.op = Op::kLeaf;
    n.val = std::move(v);
    n.sink = grad_sink;
    return push(std::move(n));
  }

  Var add(Var a, Var b) {
    const Mat& x = nodes_[a.i].val;
    const Mat& y = nodes_[b.i].val;
    if (x.rows() != y.rows() || x.cols() != y.cols())
      throw ShapeError("add: shape mismatch");
    TapeNode n;
    n.op = Op::kAdd;
    n.in0 = a.i;
    n.in1 = b.i;
    n.val = x + y;
    return push(std::move(n));
  }

  Var add_brow(Var a, Var row) {
    const Mat& x = nodes_[a.i].val;
    const Mat& r = nodes_[row.i].val;
    if (r.rows() != 1 || r.cols() != x.cols())
      throw ShapeError("add_brow: row must be 1 x cols(a)");
    TapeNode n;
    n.op = Op::kAddBRow;
    n.in0 = a.i;
    n.in1 = row.i;
    n.val = x.rowwise() + r.row(0);
    return push(std::move(n));
  }

  Var repeat_row(Var a, int s) {
    const Mat& x = nodes_[a.i].val;
    if (x.rows() != 1) throw ShapeError("repeat_row: input must be 1xD");
    if (s < 1) throw ShapeError("repeat_row: need s >= 1");
    TapeNode n;
    n.op = Op::kRepeatRow;
    n.in0 = a.i;
    n.val = x.replicate(s, 1);
    return push(std::move(n));
  }

  Var matmul(Var a, Var b) {
    const Mat& x = nodes_[a.i].val;
    const Mat& y = nodes_[b.i].val;
    if (x.cols() != y.rows()) throw ShapeError("matmul: inner dimensions differ");
    TapeNode n;
    n.op = Op::kMatMul;
    n.in0 = a.i;
    n.in1 = b.i;
    n.val.noalias() = x * y;
    return push(std::move(n));
  }

  Var matmul_nt(Var a, Var b) {
    const Mat& x = nodes_[a.i].val;
    const Mat& y = nodes_[b.i].val;
    if (x.cols() != y.cols()) throw ShapeError("matmul_nt: column counts differ");
    TapeNode n;
    n.op = Op::kMatMulNT;
    n.in0 = a.i;
    n.in1 = b.i;
    n.val.noalias() = x * y.transpose();
    return push(std::move(n));
  }

  Var scale(Var a, double c) {
    TapeNode n;
    n.op = Op::kScale;
    n.in0 = a.i;
    n.saux = c;
    n.val = c * nodes_[a.i].val;
    return push(std::move(n));
  }

  Var softmax_rows(Var a) {
    const Mat& x = nodes_[a.i].val;
    TapeNode n;
    n.op = Op::kSoftmaxRows;
    n.in0 = a.i;
    n.val.resize(x.rows(), x.cols());
    for (int r = 0; r < x.rows(); ++r) {
      double mx = x.row(r).maxCoeff();
      Eigen::RowVectorXd e = (x.row(r).array() - mx).exp();
      n.val.row(r) = e / e.sum();
    }
    return push(std::move(n));
  }

  /// Rowwise normalization with learnable gain/bias (1xD each), eps 1e-5.
  Var layer_norm(Var x, Var gain, Var bias) {
    const Mat& v = nodes_[x.i].val;
    const Mat& g = nodes_[gain.i].val;
    const Mat& b = nodes_[bias.i].val;
    if (g.rows() != 1 || b.rows() != 1 || g.cols() != v.cols() || b.cols() != v.cols())
      throw ShapeError("layer_norm: gain/bias must be 1 x cols(x)");
    const double eps = 1e-5;
    TapeNode n;
    n.op = Op::kLayerNorm;
    n.in0 = x.i;
    n.in1 = gain.i;
    n.in2 = bias.i;
    const int s = static_cast<int>(v.rows());
    const int d = static_cast<int>(v.cols());
    n.maux.resize(s, d + 1);  // [x_hat | inv_std]
    n.val.resize(s, d);
    for (int r = 0; r < s; ++r) {
      double mean = v.row(r).mean();
      double var = (v.row(r).array() - mean).square().mean();
      double inv = 1.0 / std::sqrt(var + eps);
      n.maux.block(r, 0, 1, d) = (v.row(r).array() - mean) * inv;
      n.maux(r, d) = inv;
      n.val.row(r) =
          n.maux.block(r, 0, 1, d).cwiseProduct(g.row(0)) + b.row(0);
    }
    return push(std::move(n));
  }

  Var gelu(Var a) {
    const Mat& x = nodes_[a.i].val;
    TapeNode n;
    n.op = Op::kGelu;
    n.in0 = a.i;
    n.val = x.unaryExpr([](double t) { return 0.5 * t * (1.0 + std::erf(t / std::sqrt(2.0))); });
    return push(std::move(n));
  }

  Var relu(Var a) {
    TapeNode n;
    n.op = Op::kRelu;
    n.in0 = a.i;
    n.val = nodes_[a.i].val.cwiseMax(0.0);
    return push(std::move(n));
  }

  Var sum_rows(Var a) {
    requireRows(a, "sum_rows");
    TapeNode n;
    n.op = Op::kSumRows;
    n.in0 = a.i;
    n.val = nodes_[a.i].val.colwise().sum();
    return push(std::move(n));
  }

  Var mean_rows(Var a) {
    requireRows(a, "mean_rows");
    TapeNode n;
    n.op = Op::kMeanRows;
    n.in0 = a.i;
    n.val = nodes_[a.i].val.colwise().mean();
    return push(std::move(n));
  }

  /// Columnwise max over the sequence axis; subgradient routes to the first
  /// maximal row of each column.
  Var max_rows(Var a) {
    requireRows(a, "max_rows");
    const Mat& x = nodes_[a.i].val;
    TapeNode n;
    n.op = Op::kMaxRows;
    n.in0 = a.i;
    n.val.resize(1, x.cols());
    n.iaux.resize(x.cols());
    for (int c = 0; c < x.cols(); ++c) {
      int best = 0;
      for (int r = 1; r < x.rows(); ++r)
        if (x(r, c) > x(best, c)) best = r;
      n.iaux(c) = best;
      n.val(0, c) = x(best, c);
    }
    return push(std::move(n));
  }

  Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: empty input");
    int cols = static_cast<int>(nodes_[parts[0].i].val.cols());
    int rows = 0;
    for (Var p : parts) {
      if (nodes_[p.i].val.cols() != cols) throw ShapeError("concat_rows: column mismatch");
      rows += static_cast<int>(nodes_[p.i].val.rows());
    }
    TapeNode n;
    n.op = Op::kConcatRows;
    n.val.resize(rows, cols);
    int at = 0;
    for (Var p : parts) {
      n.ins.push_back(p.i);
      int r = static_cast<int>(nodes_[p.i].val.rows());
      n.val.middleRows(at, r) = nodes_[p.i].val;
      at += r;
    }
    return push(std::move(n));
  }

  Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: empty input");
    int rows = static_cast<int>(nodes_[parts[0].i].val.rows());
    int cols = 0;
    for (Var p : parts) {
      if (nodes_[p.i].val.rows() != rows) throw ShapeError("concat_cols: row mismatch");
      cols += static_cast<int>(nodes_[p.i].val.cols());
    }
    TapeNode n;
    n.op = Op::kConcatCols;
    n.val.resize(rows, cols);
    int at = 0;
    for (Var p : parts) {
      n.ins.push_back(p.i);
      int c = static_cast<int>(nodes_[p.i].val.cols());
      n.val.middleCols(at, c) = nodes_[p.i].val;
      at += c;
    }
    return push(std::move(n));
  }

  Var slice_cols(Var a, int c0, int width) {
    const Mat& x = nodes_[a.i].val;
    if (c0 < 0 || width < 1 || c0 + width > x.cols())
      throw ShapeError("slice_cols: range out of bounds");
    TapeNode n;
    n.op = Op::kSliceCols;
    n.in0 = a.i;
    n.iaux.resize(2);
    n.iaux << c0, width;
    n.val = x.middleCols(c0, width);
    return push(std::move(n));
  }

  Var slice_rows(Var a, int r0, int height) {
    const Mat& x = nodes_[a.i].val;
    if (r0 < 0 || height < 1 || r0 + height > x.rows())
      throw ShapeError("slice_rows: range out of bounds");
    TapeNode n;
    n.op = Op::kSliceRows;
    n.in0 = a.i;
    n.iaux.resize(2);
    n.iaux << r0, height;
    n.val = x.middleRows(r0, height);
    return push(std::move(n));
  }

  Var exp(Var a) {
    TapeNode n;
    n.op = Op::kExp;
    n.in0 = a.i;
    n.val = nodes_[a.i].val.array().exp();
    return push(std::move(n));
  }

  Var log(Var a) {
    const Mat& x = nodes_[a.i].val;
    if ((x.array() <= 0.0).any()) throw NumericError("log: non-positive input");
    TapeNode n;
    n.op = Op::kLog;
    n.in0 = a.i;
    n.val = x.array().log();
    return push(std::move(n));
  }

  /// Cosine similarity of two 1xD vectors -> 1x1. A zero-norm operand yields
  /// similarity 0 with zero gradient and raises the tape's warning flag.
  Var cosine(Var a, Var b) {
    const Mat& x = nodes_[a.i].val;
    const Mat& y = nodes_[b.i].val;
    if (x.rows() != 1 || y.rows() != 1 || x.cols() != y.cols())
      throw ShapeError("cosine: expects two 1xD vectors");
    TapeNode n;
    n.op = Op::kCosine;
    n.in0 = a.i;
    n.in1 = b.i;
    double na = x.row(0).norm(), nb = y.row(0).norm();
    n.val.resize(1, 1);
    if (na == 0.0 || nb == 0.0) {
      n.val(0, 0) = 0.0;
      n.saux = 0.0;  // degenerate marker
      zero_norm_cosine_seen_ = true;
    } else {
      n.val(0, 0) = x.row(0).dot(y.row(0)) / (na * nb);
      n.saux = 1.0;
    }
    return push(std::move(n));
  }

  /// Negative log-likelihood of entry y of a 1xC probability row, clamped at
  /// kNllClamp before the log; the clamp region contributes zero gradient.
  Var pick_nll(Var probs, int y) {
    const Mat& p = nodes_[probs.i].val;
    if (p.rows() != 1) throw ShapeError("pick_nll: probs must be 1xC");
    if (y < 0 || y >= p.cols()) throw ShapeError("pick_nll: label out of range");
    TapeNode n;
    n.op = Op::kPickNll;
    n.in0 = probs.i;
    n.iaux.resize(1);
    n.iaux << y;
    n.val.resize(1, 1);
    n.val(0, 0) = -std::log(std::max(p(0, y), kNllClamp));
    return push(std::move(n));
  }

  /// Reverse sweep from a scalar root. Extra (node, seed) pairs allow
  /// injecting externally computed gradients (e.g. a loss evaluated on a
  /// different tape). Leaf sinks receive accumulated gradients at the end.
  void backward(Var root, double seed = 1.0,
                const std::vector<std::pair<Var, Mat>>& extra_seeds = {}) {
    TapeNode& r = nodes_[root.i];
    if (r.val.size() != 1) throw ShapeError("backward: root must be scalar");
    touch(root.i);
    nodes_[root.i].grad(0, 0) += seed;
    for (const auto& [v, g] : extra_seeds) {
      TapeNode& n = nodes_[v.i];
      if (g.rows() != n.val.rows() || g.cols() != n.val.cols())
        throw ShapeError("backward: seed shape mismatch");
      touch(v.i);
      n.grad += g;
    }
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
      if (nodes_[i].grad.size() == 0) continue;
      step_backward(i);
    }
    for (auto& n : nodes_)
      if (n.op == Op::kLeaf && n.sink && n.grad.size() > 0) *n.sink += n.grad;
  }

 private:
  std::vector<TapeNode> nodes_;
  bool zero_norm_cosine_seen_ = false;

  Var push(TapeNode&& n) {
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size() - 1)};
  }

  void requireRows(Var a, const char* who) {
    if (nodes_[a.i].val.rows() < 1) throw ShapeError(std::string(who) + ": empty input");
  }

  void touch(int i) {
    TapeNode& n = nodes_[i];
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.val.rows(), n.val.cols());
  }

  void step_backward(int i) {
    TapeNode& n = nodes_[i];
    const Mat& g = n.grad;
    switch (n.op) {
      case Op::kLeaf:
        break;
      case Op::kAdd:
        acc(n.in0, g);
        acc(n.in1, g);
        break;
      case Op::kAddBRow:
        acc(n.in0, g);
        accRow(n.in1, g.colwise().sum());
        break;
      case Op::kRepeatRow:
        accRow(n.in0, g.colwise().sum());
        break;
      case Op::kMatMul: {
        const Mat& a = nodes_[n.in0].val;
        const Mat& b = nodes_[n.in1].val;
        touch(n.in0);
        nodes_[n.in0].grad.noalias() += g * b.transpose();
        touch(n.in1);
        nodes_[n.in1].grad.noalias() += a.transpose() * g;
        break;
      }
      case Op::kMatMulNT: {
        const Mat& a = nodes_[n.in0].val;
        const Mat& b = nodes_[n.in1].val;
        touch(n.in0);
        nodes_[n.in0].grad.noalias() += g * b;
        touch(n.in1);
        nodes_[n.in1].grad.noalias() += g.transpose() * a;
        break;
      }
      case Op::kScale:
        acc(n.in0, n.saux * g);
        break;
      case Op::kSoftmaxRows: {
        const Mat& p = n.val;
        Mat gx(p.rows(), p.cols());
        for (int r = 0; r < p.rows(); ++r) {
          double dot = g.row(r).dot(p.row(r));
          gx.row(r) = (g.row(r).array() - dot) * p.row(r).array();
        }
        acc(n.in0, gx);
        break;
      }
      case Op::kLayerNorm: {
        const int d = static_cast<int>(n.val.cols());
        const Mat& gain = nodes_[n.in1].val;
        Mat gx(n.val.rows(), d);
        Eigen::RowVectorXd dgain = Eigen::RowVectorXd::Zero(d);
        Eigen::RowVectorXd dbias = Eigen::RowVectorXd::Zero(d);
        for (int r = 0; r < n.val.rows(); ++r) {
          auto xhat = n.maux.block(r, 0, 1, d);
          double inv = n.maux(r, d);
          dgain += g.row(r).cwiseProduct(xhat.row(0));
          dbias += g.row(r);
          Eigen::RowVectorXd dxhat = g.row(r).cwiseProduct(gain.row(0));
          double m1 = dxhat.mean();
          double m2 = dxhat.cwiseProduct(xhat.row(0)).mean();
          gx.row(r) = inv * (dxhat.array() - m1 - xhat.row(0).array() * m2);
        }
        acc(n.in0, gx);
        accRow(n.in1, dgain);
        accRow(n.in2, dbias);
        break;
      }
      case Op::kGelu: {
        const Mat& x = nodes_[n.in0].val;
        Mat dx = x.unaryExpr([](double t) {
          const double kInvSqrt2Pi = 0.3989422804014327;
          double cdf = 0.5 * (1.0 + std::erf(t / std::sqrt(2.0)));
          double pdf = kInvSqrt2Pi * std::exp(-0.5 * t * t);
          return cdf + t * pdf;
        });
        acc(n.in0, g.cwiseProduct(dx));
        break;
      }
      case Op::kRelu: {
        const Mat& x = nodes_[n.in0].val;
        acc(n.in0, g.cwiseProduct((x.array() > 0.0).cast<double>().matrix()));
        break;
      }
      case Op::kSumRows: {
        int s = static_cast<int>(nodes_[n.in0].val.rows());
        acc(n.in0, g.replicate(s, 1));
        break;
      }
      case Op::kMeanRows: {
        int s = static_cast<int>(nodes_[n.in0].val.rows());
        acc(n.in0, Mat(g.replicate(s, 1) / static_cast<double>(s)));
        break;
      }
      case Op::kMaxRows: {
        touch(n.in0);
        Mat& gx = nodes_[n.in0].grad;
        for (int c = 0; c < n.val.cols(); ++c) gx(n.iaux(c), c) += g(0, c);
        break;
      }
      case Op::kConcatRows: {
        int at = 0;
        for (int src : n.ins) {
          int r = static_cast<int>(nodes_[src].val.rows());
          acc(src, g.middleRows(at, r));
          at += r;
        }
        break;
      }
      case Op::kConcatCols: {
        int at = 0;
        for (int src : n.ins) {
          int c = static_cast<int>(nodes_[src].val.cols());
          acc(src, g.middleCols(at, c));
          at += c;
        }
        break;
      }
      case Op::kSliceCols: {
        touch(n.in0);
        nodes_[n.in0].grad.middleCols(n.iaux(0), n.iaux(1)) += g;
        break;
      }
      case Op::kSliceRows: {
        touch(n.in0);
        nodes_[n.in0].grad.middleRows(n.iaux(0), n.iaux(1)) += g;
        break;
      }
      case Op::kExp:
        acc(n.in0, g.cwiseProduct(n.val));
        break;
      case Op::kLog:
        acc(n.in0, g.cwiseQuotient(nodes_[n.in0].val));
        break;
      case Op::kCosine: {
        if (n.saux == 0.0) break;  // degenerate: zero gradient
        const Mat& a = nodes_[n.in0].val;
        const Mat& b = nodes_[n.in1].val;
        double na = a.row(0).norm(), nb = b.row(0).norm();
        double cosv = n.val(0, 0);
        double gs = g(0, 0);
        accRow(n.in0, gs * (b.row(0) / (na * nb) - cosv * a.row(0) / (na * na)));
        accRow(n.in1, gs * (a.row(0) / (na * nb) - cosv * b.row(0) / (nb * nb)));
        break;
      }
      case Op::kPickNll: {
        const Mat& p = nodes_[n.in0].val;
        int y = n.iaux(0);
        if (p(0, y) > kNllClamp) {
          touch(n.in0);
          nodes_[n.in0].grad(0, y) += g(0, 0) * (-1.0 / p(0, y));
        }
        break;
      }
    }
  }

  void acc(int i, const Mat& g) {
    touch(i);
    nodes_[i].grad += g;
  }
  template <typename RowExpr>
  void accRow(int i, const RowExpr& row) {
    touch(i);
    nodes_[i].grad.row(0) += row;
  }
};

}  // namespace avm

#endif  // AVM_TAPE_HPP
