#include "kdar/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "kdar/error.hpp"

namespace kdar {

template <typename Real>
void require_finite(const Matrix<Real>& m, std::string_view where) {
  if (!m.allFinite()) {
    throw NumericalError("non-finite value produced by " + std::string(where));
  }
}

template void require_finite<float>(const Matrix<float>&, std::string_view);
template void require_finite<double>(const Matrix<double>&, std::string_view);

namespace {

void require_same_shape(Index ar, Index ac, Index br, Index bc, const char* op) {
  if (ar != br || ac != bc) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch (" + std::to_string(ar) +
                                "x" + std::to_string(ac) + " vs " + std::to_string(br) + "x" +
                                std::to_string(bc) + ")");
  }
}

void require_segments(std::span<const Index> segments, Index n, Index num_segments,
                      const char* op) {
  if (static_cast<Index>(segments.size()) != n) {
    throw std::invalid_argument(std::string(op) + ": segment list length mismatch");
  }
  for (Index s : segments) {
    if (s < 0 || s >= num_segments) {
      throw std::out_of_range(std::string(op) + ": segment id out of range");
    }
  }
}

template <typename Real>
Real stable_log_sigmoid(Real x) {
  // ln sigmoid(x) = -softplus(-x)
  if (x >= 0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

template <typename Real>
Real sigmoid(Real x) {
  if (x >= 0) return Real(1) / (Real(1) + std::exp(-x));
  Real e = std::exp(x);
  return e / (Real(1) + e);
}

}  // namespace

template <typename Real>
Var Tape<Real>::push(Mat value, bool requires_grad, Backward backward, const char* op) {
  require_finite<Real>(value, op);
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  if (requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

template <typename Real>
typename Tape<Real>::Mat& Tape<Real>::grad_of(Var v) {
  Node& n = nodes_.at(v.index);
  if (n.grad.size() == 0 && n.value.size() != 0) {
    n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  }
  return n.grad;
}

template <typename Real>
Real Tape<Real>::scalar(Var v) const {
  const Mat& m = value(v);
  if (m.rows() != 1 || m.cols() != 1) throw std::invalid_argument("scalar: node is not 1x1");
  return m(0, 0);
}

template <typename Real>
Var Tape<Real>::parameter(ParameterStore<Real>& store, ParamId id) {
  Parameter<Real>* p = &store[id];
  return push(p->value, true,
              [p](Tape&, const Mat& g) {
                if (p->grad.size() == 0) p->grad = Mat::Zero(p->value.rows(), p->value.cols());
                p->grad += g;
              },
              "parameter");
}

template <typename Real>
Var Tape<Real>::constant(Mat value) {
  return push(std::move(value), false, {}, "constant");
}

template <typename Real>
Var Tape<Real>::gather_rows(Var src, std::span<const Index> ids) {
  const Mat& s = value(src);
  Mat out(static_cast<Index>(ids.size()), s.cols());
  for (std::size_t k = 0; k < ids.size(); ++k) {
    if (ids[k] < 0 || ids[k] >= s.rows()) {
      throw std::out_of_range("gather_rows: index " + std::to_string(ids[k]) +
                              " out of range [0, " + std::to_string(s.rows()) + ")");
    }
    out.row(static_cast<Index>(k)) = s.row(ids[k]);
  }
  std::vector<Index> saved(ids.begin(), ids.end());
  return push(std::move(out), requires_grad(src),
              [src, saved = std::move(saved)](Tape& t, const Mat& g) {
                Mat& gs = t.grad_of(src);
                for (std::size_t k = 0; k < saved.size(); ++k) {
                  gs.row(saved[k]) += g.row(static_cast<Index>(k));
                }
              },
              "gather_rows");
}

template <typename Real>
Var Tape<Real>::slice_rows(Var src, Index begin, Index count) {
  const Mat& s = value(src);
  if (begin < 0 || count < 0 || begin + count > s.rows()) {
    throw std::out_of_range("slice_rows: range out of bounds");
  }
  Mat out = s.middleRows(begin, count);
  return push(std::move(out), requires_grad(src),
              [src, begin, count](Tape& t, const Mat& g) {
                t.grad_of(src).middleRows(begin, count) += g;
              },
              "slice_rows");
}

template <typename Real>
Var Tape<Real>::weighted_segment_sum(Var rows, std::span<const Real> weights,
                                     std::span<const Index> segments, Index num_segments) {
  const Mat& r = value(rows);
  if (static_cast<Index>(weights.size()) != r.rows()) {
    throw std::invalid_argument("weighted_segment_sum: weight list length mismatch");
  }
  require_segments(segments, r.rows(), num_segments, "weighted_segment_sum");
  Mat out = Mat::Zero(num_segments, r.cols());
  for (Index j = 0; j < r.rows(); ++j) out.row(segments[j]) += weights[j] * r.row(j);
  std::vector<Real> w(weights.begin(), weights.end());
  std::vector<Index> seg(segments.begin(), segments.end());
  return push(std::move(out), requires_grad(rows),
              [rows, w = std::move(w), seg = std::move(seg)](Tape& t, const Mat& g) {
                Mat& gr = t.grad_of(rows);
                for (std::size_t j = 0; j < seg.size(); ++j) {
                  gr.row(static_cast<Index>(j)) += w[j] * g.row(seg[j]);
                }
              },
              "weighted_segment_sum");
}

template <typename Real>
Var Tape<Real>::weighted_segment_sum(Var rows, Var weights, std::span<const Index> segments,
                                     Index num_segments) {
  const Mat& r = value(rows);
  const Mat& w = value(weights);
  if (w.cols() != 1 || w.rows() != r.rows()) {
    throw std::invalid_argument("weighted_segment_sum: weights must be n x 1");
  }
  require_segments(segments, r.rows(), num_segments, "weighted_segment_sum");
  Mat out = Mat::Zero(num_segments, r.cols());
  for (Index j = 0; j < r.rows(); ++j) out.row(segments[j]) += w(j, 0) * r.row(j);
  std::vector<Index> seg(segments.begin(), segments.end());
  return push(std::move(out), requires_grad(rows) || requires_grad(weights),
              [rows, weights, seg = std::move(seg)](Tape& t, const Mat& g) {
                const bool rows_grad = t.requires_grad(rows);
                const bool weights_grad = t.requires_grad(weights);
                for (std::size_t j = 0; j < seg.size(); ++j) {
                  const auto jj = static_cast<Index>(j);
                  if (rows_grad) t.grad_of(rows).row(jj) += t.value(weights)(jj, 0) * g.row(seg[j]);
                  if (weights_grad) {
                    t.grad_of(weights)(jj, 0) += t.value(rows).row(jj).dot(g.row(seg[j]));
                  }
                }
              },
              "weighted_segment_sum");
}

template <typename Real>
Var Tape<Real>::add(Var a, Var b) {
  const Mat& x = value(a);
  const Mat& y = value(b);
  require_same_shape(x.rows(), x.cols(), y.rows(), y.cols(), "add");
  return push(x + y, requires_grad(a) || requires_grad(b),
              [a, b](Tape& t, const Mat& g) {
                if (t.requires_grad(a)) t.grad_of(a) += g;
                if (t.requires_grad(b)) t.grad_of(b) += g;
              },
              "add");
}

template <typename Real>
Var Tape<Real>::sub(Var a, Var b) {
  const Mat& x = value(a);
  const Mat& y = value(b);
  require_same_shape(x.rows(), x.cols(), y.rows(), y.cols(), "sub");
  return push(x - y, requires_grad(a) || requires_grad(b),
              [a, b](Tape& t, const Mat& g) {
                if (t.requires_grad(a)) t.grad_of(a) += g;
                if (t.requires_grad(b)) t.grad_of(b) -= g;
              },
              "sub");
}

template <typename Real>
Var Tape<Real>::mul(Var a, Var b) {
  const Mat& x = value(a);
  const Mat& y = value(b);
  require_same_shape(x.rows(), x.cols(), y.rows(), y.cols(), "mul");
  return push(x.cwiseProduct(y), requires_grad(a) || requires_grad(b),
              [a, b](Tape& t, const Mat& g) {
                if (t.requires_grad(a)) t.grad_of(a) += g.cwiseProduct(t.value(b));
                if (t.requires_grad(b)) t.grad_of(b) += g.cwiseProduct(t.value(a));
              },
              "mul");
}

template <typename Real>
Var Tape<Real>::scale(Var a, Real c) {
  return push(value(a) * c, requires_grad(a),
              [a, c](Tape& t, const Mat& g) { t.grad_of(a) += c * g; }, "scale");
}

template <typename Real>
Var Tape<Real>::matmul(Var rows, Var w) {
  const Mat& x = value(rows);
  const Mat& m = value(w);
  if (x.cols() != m.rows()) throw std::invalid_argument("matmul: inner dimensions differ");
  Mat out = x * m;
  return push(std::move(out), requires_grad(rows) || requires_grad(w),
              [rows, w](Tape& t, const Mat& g) {
                if (t.requires_grad(rows)) t.grad_of(rows).noalias() += g * t.value(w).transpose();
                if (t.requires_grad(w)) t.grad_of(w).noalias() += t.value(rows).transpose() * g;
              },
              "matmul");
}

template <typename Real>
Var Tape<Real>::grouped_softmax(Var logits, std::span<const Index> segments,
                                Index num_segments) {
  const Mat& z = value(logits);
  if (z.cols() != 1) throw std::invalid_argument("grouped_softmax: logits must be n x 1");
  require_segments(segments, z.rows(), num_segments, "grouped_softmax");
  std::vector<Real> seg_max(static_cast<std::size_t>(num_segments),
                            -std::numeric_limits<Real>::infinity());
  for (Index j = 0; j < z.rows(); ++j) {
    auto& m = seg_max[static_cast<std::size_t>(segments[j])];
    m = std::max(m, z(j, 0));
  }
  Mat out(z.rows(), 1);
  std::vector<Real> seg_sum(static_cast<std::size_t>(num_segments), Real(0));
  for (Index j = 0; j < z.rows(); ++j) {
    const auto s = static_cast<std::size_t>(segments[j]);
    out(j, 0) = std::exp(z(j, 0) - seg_max[s]);
    seg_sum[s] += out(j, 0);
  }
  for (Index j = 0; j < z.rows(); ++j) out(j, 0) /= seg_sum[static_cast<std::size_t>(segments[j])];

  std::vector<Index> seg(segments.begin(), segments.end());
  // The output node is the one about to be pushed; its index is known now.
  const Var self{nodes_.size()};
  return push(std::move(out), requires_grad(logits),
              [logits, self, num_segments, seg = std::move(seg)](Tape& t, const Mat& g) {
                const Mat& a = t.value(self);
                // d z_j = a_j (g_j - sum_k a_k g_k) within the segment.
                std::vector<Real> inner(static_cast<std::size_t>(num_segments), Real(0));
                for (std::size_t j = 0; j < seg.size(); ++j) {
                  const auto jj = static_cast<Index>(j);
                  inner[static_cast<std::size_t>(seg[j])] += a(jj, 0) * g(jj, 0);
                }
                Mat& gz = t.grad_of(logits);
                for (std::size_t j = 0; j < seg.size(); ++j) {
                  const auto jj = static_cast<Index>(j);
                  gz(jj, 0) += a(jj, 0) * (g(jj, 0) - inner[static_cast<std::size_t>(seg[j])]);
                }
              },
              "grouped_softmax");
}

template <typename Real>
Var Tape<Real>::row_dot(Var a, Var b) {
  const Mat& x = value(a);
  const Mat& y = value(b);
  require_same_shape(x.rows(), x.cols(), y.rows(), y.cols(), "row_dot");
  Mat out = x.cwiseProduct(y).rowwise().sum();
  return push(std::move(out), requires_grad(a) || requires_grad(b),
              [a, b](Tape& t, const Mat& g) {
                const Mat& x = t.value(a);
                const Mat& y = t.value(b);
                for (Index i = 0; i < x.rows(); ++i) {
                  if (t.requires_grad(a)) t.grad_of(a).row(i) += g(i, 0) * y.row(i);
                  if (t.requires_grad(b)) t.grad_of(b).row(i) += g(i, 0) * x.row(i);
                }
              },
              "row_dot");
}

template <typename Real>
Var Tape<Real>::row_cosine(Var a, Var b) {
  const Mat& x = value(a);
  const Mat& y = value(b);
  require_same_shape(x.rows(), x.cols(), y.rows(), y.cols(), "row_cosine");
  Mat out(x.rows(), 1);
  for (Index i = 0; i < x.rows(); ++i) {
    const Real nx = x.row(i).norm();
    const Real ny = y.row(i).norm();
    out(i, 0) = (nx > 0 && ny > 0) ? x.row(i).dot(y.row(i)) / (nx * ny) : Real(0);
    out(i, 0) = std::clamp(out(i, 0), Real(-1), Real(1));
  }
  return push(std::move(out), requires_grad(a) || requires_grad(b),
              [a, b](Tape& t, const Mat& g) {
                const Mat& x = t.value(a);
                const Mat& y = t.value(b);
                for (Index i = 0; i < x.rows(); ++i) {
                  const Real nx = x.row(i).norm();
                  const Real ny = y.row(i).norm();
                  if (!(nx > 0 && ny > 0)) continue;
                  const Real c = x.row(i).dot(y.row(i)) / (nx * ny);
                  // ds/dx = y/(|x||y|) - s x/|x|^2
                  if (t.requires_grad(a)) {
                    t.grad_of(a).row(i) += g(i, 0) * (y.row(i) / (nx * ny) - c * x.row(i) / (nx * nx));
                  }
                  if (t.requires_grad(b)) {
                    t.grad_of(b).row(i) += g(i, 0) * (x.row(i) / (nx * ny) - c * y.row(i) / (ny * ny));
                  }
                }
              },
              "row_cosine");
}

template <typename Real>
Var Tape<Real>::log_sigmoid(Var x) {
  Mat out = value(x).unaryExpr([](Real v) { return stable_log_sigmoid(v); });
  return push(std::move(out), requires_grad(x),
              [x](Tape& t, const Mat& g) {
                t.grad_of(x) += g.cwiseProduct(
                    t.value(x).unaryExpr([](Real v) { return sigmoid(-v); }));
              },
              "log_sigmoid");
}

template <typename Real>
Var Tape<Real>::concat_cols(Var a, Var b) {
  const Mat& x = value(a);
  const Mat& y = value(b);
  if (x.rows() != y.rows()) throw std::invalid_argument("concat_cols: row counts differ");
  Mat out(x.rows(), x.cols() + y.cols());
  out.leftCols(x.cols()) = x;
  out.rightCols(y.cols()) = y;
  const Index split = x.cols();
  return push(std::move(out), requires_grad(a) || requires_grad(b),
              [a, b, split](Tape& t, const Mat& g) {
                if (t.requires_grad(a)) t.grad_of(a) += g.leftCols(split);
                if (t.requires_grad(b)) t.grad_of(b) += g.rightCols(g.cols() - split);
              },
              "concat_cols");
}

template <typename Real>
Var Tape<Real>::sum(Var a) {
  Mat out(1, 1);
  out(0, 0) = value(a).sum();
  return push(std::move(out), requires_grad(a),
              [a](Tape& t, const Mat& g) { t.grad_of(a).array() += g(0, 0); }, "sum");
}

template <typename Real>
Var Tape<Real>::mean(Var a) {
  const Index n = value(a).size();
  Mat out = Mat::Zero(1, 1);
  if (n > 0) out(0, 0) = value(a).sum() / static_cast<Real>(n);
  return push(std::move(out), requires_grad(a),
              [a, n](Tape& t, const Mat& g) {
                if (n > 0) t.grad_of(a).array() += g(0, 0) / static_cast<Real>(n);
              },
              "mean");
}

template <typename Real>
Var Tape<Real>::sum_squares(Var a) {
  Mat out(1, 1);
  out(0, 0) = value(a).squaredNorm();
  return push(std::move(out), requires_grad(a),
              [a](Tape& t, const Mat& g) { t.grad_of(a) += (2 * g(0, 0)) * t.value(a); },
              "sum_squares");
}

template <typename Real>
void Tape<Real>::backward(Var root) {
  const Mat& r = value(root);
  if (r.rows() != 1 || r.cols() != 1) {
    throw std::invalid_argument("backward: root must be a 1x1 scalar");
  }
  if (requires_grad(root)) {
    grad_of(root)(0, 0) = Real(1);
    for (std::size_t k = root.index + 1; k-- > 0;) {
      Node& n = nodes_[k];
      if (!n.requires_grad || n.grad.size() == 0) continue;
      // Move the gradient out so the closure may touch other nodes freely.
      Mat g = std::move(n.grad);
      n.backward(*this, g);
    }
  }
  nodes_.clear();
}

template class Tape<float>;
template class Tape<double>;

}  // namespace kdar
