#ifndef MRES_AUTODIFF_HPP
#define MRES_AUTODIFF_HPP

#include <Eigen/Dense>

#include <cassert>
#include <cmath>
#include <functional>
#include <utility>
#include <vector>

namespace mres::ad {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
class Tape;

/// Lightweight handle to a tape node.
template <typename Scalar>
struct Var {
  Tape<Scalar>* tape = nullptr;
  int id = -1;

  const Mat<Scalar>& value() const;
  bool valid() const { return tape != nullptr && id >= 0; }
};

/// Reverse-mode tape over dense Eigen matrices. Values are computed eagerly;
/// backward() walks nodes in reverse creation order, which is a valid
/// topological order because ops only reference earlier nodes.
template <typename Scalar>
class Tape {
 public:
  struct Node {
    Mat<Scalar> value;
    Mat<Scalar> grad;
    std::function<void()> pull;     // adds this node's grad into its parents
    Mat<Scalar>* sink = nullptr;    // external gradient accumulator (parameters)
  };

  Var<Scalar> constant(Mat<Scalar> value) { return push(std::move(value), nullptr, {}); }

  /// Leaf whose gradient is accumulated into *sink after backward().
  Var<Scalar> leaf(const Mat<Scalar>& value, Mat<Scalar>* sink) {
    return push(value, sink, {});
  }

  Var<Scalar> push(Mat<Scalar> value, Mat<Scalar>* sink, std::function<void()> pull) {
    Node n;
    n.value = std::move(value);
    n.sink = sink;
    n.pull = std::move(pull);
    nodes_.push_back(std::move(n));
    return Var<Scalar>{this, static_cast<int>(nodes_.size()) - 1};
  }

  const Mat<Scalar>& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  Mat<Scalar>& grad(int id) { return nodes_[static_cast<std::size_t>(id)].grad; }

  /// Backpropagates from a 1x1 root. Parameter sinks receive `+=` updates so
  /// gradients accumulate across tapes (e.g. over a batch).
  void backward(const Var<Scalar>& root) {
    assert(root.tape == this);
    assert(value(root.id).size() == 1);
    const int last = root.id;
    for (int i = 0; i <= last; ++i) {
      auto& n = nodes_[static_cast<std::size_t>(i)];
      n.grad = Mat<Scalar>::Zero(n.value.rows(), n.value.cols());
    }
    nodes_[static_cast<std::size_t>(last)].grad(0, 0) = Scalar(1);
    for (int i = last; i >= 0; --i) {
      auto& n = nodes_[static_cast<std::size_t>(i)];
      if (n.pull) n.pull();
      if (n.sink) *n.sink += n.grad;
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
};

template <typename Scalar>
const Mat<Scalar>& Var<Scalar>::value() const {
  return tape->value(id);
}

// ---- arithmetic -------------------------------------------------------------

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
  Tape<S>* t = a.tape;
  return t->push(a.value() + b.value(), nullptr, [t, a = a.id, b = b.id, out = int(t->size())] {
    t->grad(a) += t->grad(out);
    t->grad(b) += t->grad(out);
  });
}

template <typename S>
Var<S> sub(Var<S> a, Var<S> b) {
  Tape<S>* t = a.tape;
  return t->push(a.value() - b.value(), nullptr, [t, a = a.id, b = b.id, out = int(t->size())] {
    t->grad(a) += t->grad(out);
    t->grad(b) -= t->grad(out);
  });
}

template <typename S>
Var<S> cmul(Var<S> a, Var<S> b) {
  Tape<S>* t = a.tape;
  return t->push((a.value().array() * b.value().array()).matrix(), nullptr,
                 [t, a = a.id, b = b.id, out = int(t->size())] {
                   t->grad(a).array() += t->grad(out).array() * t->value(b).array();
                   t->grad(b).array() += t->grad(out).array() * t->value(a).array();
                 });
}

template <typename S>
Var<S> cmul_const(Var<S> a, const Mat<S>& m) {
  Tape<S>* t = a.tape;
  return t->push((a.value().array() * m.array()).matrix(), nullptr,
                 [t, a = a.id, m, out = int(t->size())] {
                   t->grad(a).array() += t->grad(out).array() * m.array();
                 });
}

template <typename S>
Var<S> scale(Var<S> a, S c) {
  Tape<S>* t = a.tape;
  return t->push(a.value() * c, nullptr, [t, a = a.id, c, out = int(t->size())] {
    t->grad(a) += t->grad(out) * c;
  });
}

template <typename S>
Var<S> add_scalar(Var<S> a, S c) {
  Tape<S>* t = a.tape;
  return t->push((a.value().array() + c).matrix(), nullptr, [t, a = a.id, out = int(t->size())] {
    t->grad(a) += t->grad(out);
  });
}

/// x + b with b broadcast over rows (bias add; b is 1 x d).
template <typename S>
Var<S> add_rowvec(Var<S> x, Var<S> b) {
  Tape<S>* t = x.tape;
  Mat<S> v = x.value();
  v.rowwise() += b.value().row(0);
  return t->push(std::move(v), nullptr, [t, x = x.id, b = b.id, out = int(t->size())] {
    t->grad(x) += t->grad(out);
    t->grad(b).row(0) += t->grad(out).colwise().sum();
  });
}

// ---- matrix products --------------------------------------------------------

template <typename S>
Var<S> matmul(Var<S> a, Var<S> b) {
  Tape<S>* t = a.tape;
  return t->push(a.value() * b.value(), nullptr, [t, a = a.id, b = b.id, out = int(t->size())] {
    t->grad(a) += t->grad(out) * t->value(b).transpose();
    t->grad(b) += t->value(a).transpose() * t->grad(out);
  });
}

/// a * b^T
template <typename S>
Var<S> matmul_nt(Var<S> a, Var<S> b) {
  Tape<S>* t = a.tape;
  return t->push(a.value() * b.value().transpose(), nullptr,
                 [t, a = a.id, b = b.id, out = int(t->size())] {
                   t->grad(a) += t->grad(out) * t->value(b);
                   t->grad(b) += t->grad(out).transpose() * t->value(a);
                 });
}

// ---- shape ops --------------------------------------------------------------

template <typename S>
Var<S> concat_rows(Var<S> a, Var<S> b) {
  Tape<S>* t = a.tape;
  Mat<S> v(a.value().rows() + b.value().rows(), a.value().cols());
  v.topRows(a.value().rows()) = a.value();
  v.bottomRows(b.value().rows()) = b.value();
  return t->push(std::move(v), nullptr, [t, a = a.id, b = b.id, out = int(t->size())] {
    const auto ra = t->value(a).rows();
    const auto rb = t->value(b).rows();
    t->grad(a) += t->grad(out).topRows(ra);
    t->grad(b) += t->grad(out).bottomRows(rb);
  });
}

template <typename S>
Var<S> concat_cols(const std::vector<Var<S>>& parts) {
  assert(!parts.empty());
  Tape<S>* t = parts.front().tape;
  Eigen::Index cols = 0;
  for (const auto& p : parts) cols += p.value().cols();
  Mat<S> v(parts.front().value().rows(), cols);
  Eigen::Index at = 0;
  std::vector<int> ids;
  for (const auto& p : parts) {
    v.middleCols(at, p.value().cols()) = p.value();
    at += p.value().cols();
    ids.push_back(p.id);
  }
  return t->push(std::move(v), nullptr, [t, ids, out = int(t->size())] {
    Eigen::Index at = 0;
    for (int id : ids) {
      const auto c = t->value(id).cols();
      t->grad(id) += t->grad(out).middleCols(at, c);
      at += c;
    }
  });
}

template <typename S>
Var<S> transpose(Var<S> a) {
  Tape<S>* t = a.tape;
  return t->push(a.value().transpose(), nullptr, [t, a = a.id, out = int(t->size())] {
    t->grad(a) += t->grad(out).transpose();
  });
}

template <typename S>
Var<S> rows(Var<S> a, int first, int count) {
  Tape<S>* t = a.tape;
  return t->push(a.value().middleRows(first, count), nullptr,
                 [t, a = a.id, first, count, out = int(t->size())] {
                   t->grad(a).middleRows(first, count) += t->grad(out);
                 });
}

template <typename S>
Var<S> cols(Var<S> a, int first, int count) {
  Tape<S>* t = a.tape;
  return t->push(a.value().middleCols(first, count), nullptr,
                 [t, a = a.id, first, count, out = int(t->size())] {
                   t->grad(a).middleCols(first, count) += t->grad(out);
                 });
}

/// Rows of a table selected by index, duplicates accumulate on backward.
template <typename S>
Var<S> gather_rows(Var<S> table, const std::vector<int>& indices) {
  Tape<S>* t = table.tape;
  Mat<S> v(static_cast<Eigen::Index>(indices.size()), table.value().cols());
  for (std::size_t k = 0; k < indices.size(); ++k) v.row(static_cast<Eigen::Index>(k)) =
      table.value().row(indices[k]);
  return t->push(std::move(v), nullptr, [t, table = table.id, indices, out = int(t->size())] {
    for (std::size_t k = 0; k < indices.size(); ++k)
      t->grad(table).row(indices[k]) += t->grad(out).row(static_cast<Eigen::Index>(k));
  });
}

/// out.row(i) = a(i, 0) * v.row(i); a is n x 1.
template <typename S>
Var<S> scale_rows(Var<S> v, Var<S> a) {
  Tape<S>* t = v.tape;
  Mat<S> value = v.value();
  for (Eigen::Index i = 0; i < value.rows(); ++i) value.row(i) *= a.value()(i, 0);
  return t->push(std::move(value), nullptr, [t, v = v.id, a = a.id, out = int(t->size())] {
    const auto& g = t->grad(out);
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      t->grad(v).row(i) += g.row(i) * t->value(a)(i, 0);
      t->grad(a)(i, 0) += g.row(i).dot(t->value(v).row(i));
    }
  });
}

// ---- nonlinearities ---------------------------------------------------------

template <typename S>
Var<S> sigmoid(Var<S> a) {
  Tape<S>* t = a.tape;
  Mat<S> v = (S(1) / (S(1) + (-a.value().array()).exp())).matrix();
  return t->push(std::move(v), nullptr, [t, a = a.id, out = int(t->size())] {
    const auto& s = t->value(out).array();
    t->grad(a).array() += t->grad(out).array() * s * (S(1) - s);
  });
}

/// Tanh-approximated GELU.
template <typename S>
Var<S> gelu(Var<S> a) {
  Tape<S>* t = a.tape;
  const S k = S(std::sqrt(2.0 / M_PI));
  const S c = S(0.044715);
  const auto& x = a.value().array();
  Mat<S> v = (S(0.5) * x * (S(1) + (k * (x + c * x.cube())).tanh())).matrix();
  return t->push(std::move(v), nullptr, [t, a = a.id, k, c, out = int(t->size())] {
    const auto& x = t->value(a).array();
    const auto th = (k * (x + c * x.cube())).tanh();
    const auto d = S(0.5) * (S(1) + th) + S(0.5) * x * (S(1) - th.square()) * k * (S(1) + S(3) * c * x.square());
    t->grad(a).array() += t->grad(out).array() * d;
  });
}

/// Elementwise max(a, c); gradient flows only where a > c.
template <typename S>
Var<S> clamp_min(Var<S> a, S c) {
  Tape<S>* t = a.tape;
  return t->push(a.value().array().max(c).matrix(), nullptr,
                 [t, a = a.id, c, out = int(t->size())] {
                   t->grad(a).array() +=
                       t->grad(out).array() * (t->value(a).array() > c).template cast<S>();
                 });
}

/// Elementwise natural log; inputs must be positive (clamp first).
template <typename S>
Var<S> log(Var<S> a) {
  Tape<S>* t = a.tape;
  return t->push(a.value().array().log().matrix(), nullptr,
                 [t, a = a.id, out = int(t->size())] {
                   t->grad(a).array() += t->grad(out).array() / t->value(a).array();
                 });
}

/// Elementwise 1/x.
template <typename S>
Var<S> reciprocal(Var<S> a) {
  Tape<S>* t = a.tape;
  return t->push(a.value().array().inverse().matrix(), nullptr,
                 [t, a = a.id, out = int(t->size())] {
                   t->grad(a).array() -=
                       t->grad(out).array() * t->value(out).array().square();
                 });
}

/// Reinterprets entries in row-major order as a rows x cols matrix.
template <typename S>
Var<S> reshape_rowmajor(Var<S> a, int rows_out, int cols_out) {
  Tape<S>* t = a.tape;
  const auto& in = a.value();
  assert(in.size() == Eigen::Index(rows_out) * cols_out);
  Mat<S> v(rows_out, cols_out);
  const Eigen::Index in_cols = in.cols();
  for (Eigen::Index k = 0; k < in.size(); ++k)
    v(k / cols_out, k % cols_out) = in(k / in_cols, k % in_cols);
  return t->push(std::move(v), nullptr, [t, a = a.id, cols_out, out = int(t->size())] {
    const auto& g = t->grad(out);
    auto& ga = t->grad(a);
    const Eigen::Index in_cols = ga.cols();
    for (Eigen::Index k = 0; k < ga.size(); ++k)
      ga(k / in_cols, k % in_cols) += g(k / cols_out, k % cols_out);
  });
}

/// Row-wise softmax with an optional additive mask applied to every row
/// (used to exclude padded keys; mask entries are 0 or a large negative).
template <typename S>
Var<S> softmax_rows(Var<S> a, const Eigen::Matrix<S, 1, Eigen::Dynamic>* add_mask = nullptr) {
  Tape<S>* t = a.tape;
  Mat<S> z = a.value();
  if (add_mask) z.rowwise() += *add_mask;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    auto row = z.row(i).array();
    row -= row.maxCoeff();
    row = row.exp();
    row /= row.sum();
  }
  return t->push(std::move(z), nullptr, [t, a = a.id, out = int(t->size())] {
    const auto& y = t->value(out);
    const auto& g = t->grad(out);
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      const S dot = g.row(i).dot(y.row(i));
      t->grad(a).row(i) += (y.row(i).array() * (g.row(i).array() - dot)).matrix();
    }
  });
}

/// Row-wise layer norm with learnable gamma/beta (1 x d).
template <typename S>
Var<S> layer_norm_rows(Var<S> x, Var<S> gamma, Var<S> beta, S eps = S(1e-5)) {
  Tape<S>* t = x.tape;
  const auto& xv = x.value();
  const Eigen::Index d = xv.cols();
  Mat<S> xhat(xv.rows(), d);
  Mat<S> inv_sigma(xv.rows(), 1);
  for (Eigen::Index i = 0; i < xv.rows(); ++i) {
    const S mu = xv.row(i).mean();
    const S var = (xv.row(i).array() - mu).square().sum() / S(d);
    const S is = S(1) / std::sqrt(var + eps);
    inv_sigma(i, 0) = is;
    xhat.row(i) = ((xv.row(i).array() - mu) * is).matrix();
  }
  Mat<S> v(xv.rows(), d);
  for (Eigen::Index i = 0; i < xv.rows(); ++i)
    v.row(i) = (xhat.row(i).array() * gamma.value().row(0).array()).matrix() + beta.value().row(0);

  return t->push(std::move(v), nullptr,
                 [t, x = x.id, gamma = gamma.id, beta = beta.id, xhat = std::move(xhat),
                  inv_sigma = std::move(inv_sigma), d, out = int(t->size())] {
                   const auto& g = t->grad(out);
                   for (Eigen::Index i = 0; i < g.rows(); ++i) {
                     const auto gy = (g.row(i).array() * t->value(gamma).row(0).array()).eval();
                     const S m1 = gy.mean();
                     const S m2 = (gy * xhat.row(i).array()).mean();
                     t->grad(x).row(i) +=
                         ((gy - m1 - xhat.row(i).array() * m2) * inv_sigma(i, 0)).matrix();
                     t->grad(gamma).row(0).array() += g.row(i).array() * xhat.row(i).array();
                     t->grad(beta).row(0) += g.row(i);
                   }
                 });
}

// ---- reductions -------------------------------------------------------------

template <typename S>
Var<S> sum(Var<S> a) {
  Tape<S>* t = a.tape;
  Mat<S> v(1, 1);
  v(0, 0) = a.value().sum();
  return t->push(std::move(v), nullptr, [t, a = a.id, out = int(t->size())] {
    t->grad(a).array() += t->grad(out)(0, 0);
  });
}

template <typename S>
Var<S> mean(Var<S> a) {
  Tape<S>* t = a.tape;
  const S n = S(a.value().size());
  Mat<S> v(1, 1);
  v(0, 0) = a.value().sum() / n;
  return t->push(std::move(v), nullptr, [t, a = a.id, n, out = int(t->size())] {
    t->grad(a).array() += t->grad(out)(0, 0) / n;
  });
}

// ---- resampling -------------------------------------------------------------

/// Bilinear upsample of a grid (same sampling convention as resize_prob);
/// linear map, so backward is the transposed scatter.
template <typename S>
Var<S> upsample_bilinear(Var<S> a, int target_h, int target_w) {
  Tape<S>* t = a.tape;
  const int src_h = static_cast<int>(a.value().rows());
  const int src_w = static_cast<int>(a.value().cols());
  struct Tap {
    int y0, y1, x0, x1;
    S wy, wx;
  };
  std::vector<Tap> taps(static_cast<std::size_t>(target_h) * target_w);
  const double sy = static_cast<double>(src_h) / target_h;
  const double sx = static_cast<double>(src_w) / target_w;
  for (int y = 0; y < target_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(src_h - 1));
    for (int x = 0; x < target_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(src_w - 1));
      Tap& tap = taps[static_cast<std::size_t>(y) * target_w + x];
      tap.y0 = static_cast<int>(std::floor(fy));
      tap.y1 = std::min(tap.y0 + 1, src_h - 1);
      tap.x0 = static_cast<int>(std::floor(fx));
      tap.x1 = std::min(tap.x0 + 1, src_w - 1);
      tap.wy = S(fy - tap.y0);
      tap.wx = S(fx - tap.x0);
    }
  }
  Mat<S> v(target_h, target_w);
  const auto& in = a.value();
  for (int y = 0; y < target_h; ++y)
    for (int x = 0; x < target_w; ++x) {
      const Tap& tap = taps[static_cast<std::size_t>(y) * target_w + x];
      v(y, x) = (S(1) - tap.wy) * ((S(1) - tap.wx) * in(tap.y0, tap.x0) + tap.wx * in(tap.y0, tap.x1)) +
                tap.wy * ((S(1) - tap.wx) * in(tap.y1, tap.x0) + tap.wx * in(tap.y1, tap.x1));
    }
  return t->push(std::move(v), nullptr,
                 [t, a = a.id, taps = std::move(taps), target_h, target_w, out = int(t->size())] {
                   const auto& g = t->grad(out);
                   auto& ga = t->grad(a);
                   for (int y = 0; y < target_h; ++y)
                     for (int x = 0; x < target_w; ++x) {
                       const Tap& tap = taps[static_cast<std::size_t>(y) * target_w + x];
                       const S gv = g(y, x);
                       ga(tap.y0, tap.x0) += (S(1) - tap.wy) * (S(1) - tap.wx) * gv;
                       ga(tap.y0, tap.x1) += (S(1) - tap.wy) * tap.wx * gv;
                       ga(tap.y1, tap.x0) += tap.wy * (S(1) - tap.wx) * gv;
                       ga(tap.y1, tap.x1) += tap.wy * tap.wx * gv;
                     }
                 });
}

}  // namespace mres::ad

#endif  // MRES_AUTODIFF_HPP
