#include "sentord/nn/tape.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace sentord::nn {

template <typename S>
Tape<S>::Tape(const ParameterSet<S>& params, bool record)
    : params_(params), record_(record), param_nodes_(params.size(), -1) {
  nodes_.reserve(256);
}

template <typename S>
Var Tape<S>::constant(Mat value) {
  return push(std::move(value), {}, nullptr);
}

template <typename S>
Var Tape<S>::param(ParamId id) {
  if (id >= param_nodes_.size()) throw std::out_of_range("Tape::param: unknown parameter id");
  if (param_nodes_[id] >= 0) return Var{static_cast<std::uint32_t>(param_nodes_[id])};
  Node node;
  node.value = params_.value(id);
  node.requires_grad = record_;
  nodes_.push_back(std::move(node));
  const auto idx = static_cast<std::uint32_t>(nodes_.size() - 1);
  param_nodes_[id] = idx;
  return Var{idx};
}

template <typename S>
S Tape<S>::scalar(Var v) const {
  const auto& m = value(v);
  if (m.size() != 1) throw std::invalid_argument("Tape::scalar: node is not 1x1");
  return m(0, 0);
}

template <typename S>
Var Tape<S>::push(Mat value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return push(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
}

template <typename S>
Var Tape<S>::push(Mat value, std::span<const Var> inputs, BackwardFn fn) {
  if (backward_done_) throw std::logic_error("Tape: record after backward; call reset() first");
  Node node;
  node.value = std::move(value);
  bool needs = false;
  for (Var in : inputs) needs = needs || nodes_[in.id].requires_grad;
  node.requires_grad = record_ && needs;
  if (node.requires_grad) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename S>
typename Tape<S>::Mat& Tape<S>::grad_buffer(Var v) {
  auto& node = nodes_[v.id];
  if (node.grad.size() == 0) node.grad = Mat::Zero(node.value.rows(), node.value.cols());
  return node.grad;
}

template <typename S>
void Tape<S>::backward(Var loss) {
  if (backward_done_) throw std::logic_error("Tape::backward called twice without a new forward pass");
  if (value(loss).size() != 1) throw std::invalid_argument("Tape::backward: loss must be 1x1");
  backward_done_ = true;
  if (!nodes_[loss.id].requires_grad) return;
  nodes_[loss.id].grad = Mat::Ones(1, 1);
  for (std::int64_t i = loss.id; i >= 0; --i) {
    auto& node = nodes_[static_cast<std::size_t>(i)];
    if (node.backward && node.grad.size() != 0) node.backward(*this, static_cast<std::uint32_t>(i));
  }
  for (auto& node : nodes_) node.backward = nullptr;
}

template <typename S>
void Tape<S>::add_gradients_to(Gradients<S>& out) const {
  if (out.size() != param_nodes_.size()) throw std::invalid_argument("add_gradients_to: size mismatch");
  for (std::size_t id = 0; id < param_nodes_.size(); ++id) {
    if (param_nodes_[id] < 0) continue;
    const auto& g = nodes_[static_cast<std::size_t>(param_nodes_[id])].grad;
    if (g.size() != 0) out[id] += g;
  }
}

template <typename S>
void Tape<S>::reset() {
  nodes_.clear();
  std::fill(param_nodes_.begin(), param_nodes_.end(), -1);
  backward_done_ = false;
}

// ---------------------------------------------------------------------------

namespace {

template <typename S>
void require(bool ok, const char* op, const std::string& what) {
  if (!ok) throw std::invalid_argument(std::string(op) + ": " + what);
}

template <typename M>
std::string shape(const M& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

template <typename S>
Var matmul(Tape<S>& t, Var a, Var b) {
  const auto& A = t.value(a);
  const auto& B = t.value(b);
  require<S>(A.cols() == B.rows(), "matmul", shape(A) + " * " + shape(B));
  typename Tape<S>::Mat C = A * B;
  return t.push(std::move(C), {a, b}, [a, b](Tape<S>& t, std::uint32_t self) {
    const auto& G = t.grad(Var{self});
    if (t.requires_grad(a)) t.accumulate(a, G * t.value(b).transpose());
    if (t.requires_grad(b)) t.accumulate(b, t.value(a).transpose() * G);
  });
}

template <typename S>
Var matmul_nt(Tape<S>& t, Var a, Var b) {
  const auto& A = t.value(a);
  const auto& B = t.value(b);
  require<S>(A.cols() == B.cols(), "matmul_nt", shape(A) + " * (" + shape(B) + ")^T");
  typename Tape<S>::Mat C = A * B.transpose();
  return t.push(std::move(C), {a, b}, [a, b](Tape<S>& t, std::uint32_t self) {
    const auto& G = t.grad(Var{self});
    if (t.requires_grad(a)) t.accumulate(a, G * t.value(b));
    if (t.requires_grad(b)) t.accumulate(b, G.transpose() * t.value(a));
  });
}

template <typename S>
Var add(Tape<S>& t, Var a, Var b) {
  const auto& A = t.value(a);
  const auto& B = t.value(b);
  require<S>(A.rows() == B.rows() && A.cols() == B.cols(), "add", shape(A) + " + " + shape(B));
  typename Tape<S>::Mat C = A + B;
  return t.push(std::move(C), {a, b}, [a, b](Tape<S>& t, std::uint32_t self) {
    const auto& G = t.grad(Var{self});
    t.accumulate(a, G);
    t.accumulate(b, G);
  });
}

template <typename S>
Var mul(Tape<S>& t, Var a, Var b) {
  const auto& A = t.value(a);
  const auto& B = t.value(b);
  require<S>(A.rows() == B.rows() && A.cols() == B.cols(), "mul", shape(A) + " .* " + shape(B));
  typename Tape<S>::Mat C = A.cwiseProduct(B);
  return t.push(std::move(C), {a, b}, [a, b](Tape<S>& t, std::uint32_t self) {
    const auto& G = t.grad(Var{self});
    if (t.requires_grad(a)) t.accumulate(a, G.cwiseProduct(t.value(b)));
    if (t.requires_grad(b)) t.accumulate(b, G.cwiseProduct(t.value(a)));
  });
}

template <typename S>
Var add_row(Tape<S>& t, Var a, Var row) {
  const auto& A = t.value(a);
  const auto& r = t.value(row);
  require<S>(r.rows() == 1 && r.cols() == A.cols(), "add_row", shape(A) + " + " + shape(r));
  typename Tape<S>::Mat C = A.rowwise() + r.row(0);
  return t.push(std::move(C), {a, row}, [a, row](Tape<S>& t, std::uint32_t self) {
    const auto& G = t.grad(Var{self});
    t.accumulate(a, G);
    if (t.requires_grad(row)) t.accumulate(row, G.colwise().sum());
  });
}

template <typename S>
Var scale(Tape<S>& t, Var a, S factor) {
  typename Tape<S>::Mat C = t.value(a) * factor;
  return t.push(std::move(C), {a}, [a, factor](Tape<S>& t, std::uint32_t self) {
    t.accumulate(a, t.grad(Var{self}) * factor);
  });
}

template <typename S>
Var tanh(Tape<S>& t, Var a) {
  typename Tape<S>::Mat Y = t.value(a).array().tanh().matrix();
  return t.push(std::move(Y), {a}, [a](Tape<S>& t, std::uint32_t self) {
    const auto& Y = t.value(Var{self});
    t.accumulate(a, t.grad(Var{self}).cwiseProduct((S(1) - Y.array().square()).matrix()));
  });
}

template <typename S>
Var gelu(Tape<S>& t, Var a) {
  constexpr S c = S(0.7978845608028654);  // sqrt(2/pi)
  constexpr S k = S(0.044715);
  const auto& X = t.value(a);
  typename Tape<S>::Mat Y(X.rows(), X.cols());
  for (Index i = 0; i < X.size(); ++i) {
    const S x = X.data()[i];
    Y.data()[i] = S(0.5) * x * (S(1) + std::tanh(c * (x + k * x * x * x)));
  }
  return t.push(std::move(Y), {a}, [a](Tape<S>& t, std::uint32_t self) {
    const auto& X = t.value(a);
    const auto& G = t.grad(Var{self});
    typename Tape<S>::Mat D(X.rows(), X.cols());
    for (Index i = 0; i < X.size(); ++i) {
      const S x = X.data()[i];
      const S th = std::tanh(c * (x + k * x * x * x));
      const S dydx = S(0.5) * (S(1) + th) + S(0.5) * x * (S(1) - th * th) * c * (S(1) + S(3) * k * x * x);
      D.data()[i] = G.data()[i] * dydx;
    }
    t.accumulate(a, D);
  });
}

template <typename S>
Var softmax_rows(Tape<S>& t, Var a) {
  const auto& X = t.value(a);
  typename Tape<S>::Mat Y(X.rows(), X.cols());
  for (Index r = 0; r < X.rows(); ++r) {
    const S m = X.row(r).maxCoeff();
    Y.row(r) = (X.row(r).array() - m).exp().matrix();
    Y.row(r) /= Y.row(r).sum();
  }
  return t.push(std::move(Y), {a}, [a](Tape<S>& t, std::uint32_t self) {
    const auto& Y = t.value(Var{self});
    const auto& G = t.grad(Var{self});
    typename Tape<S>::Mat D(Y.rows(), Y.cols());
    for (Index r = 0; r < Y.rows(); ++r) {
      const S dot = G.row(r).dot(Y.row(r));
      D.row(r) = Y.row(r).cwiseProduct((G.row(r).array() - dot).matrix());
    }
    t.accumulate(a, D);
  });
}

template <typename S>
Var layer_norm_rows(Tape<S>& t, Var x, Var gain, Var bias, S eps) {
  const auto& X = t.value(x);
  const auto& g = t.value(gain);
  const auto& b = t.value(bias);
  require<S>(g.rows() == 1 && g.cols() == X.cols() && b.rows() == 1 && b.cols() == X.cols(),
             "layer_norm_rows", "gain/bias must be 1x" + std::to_string(X.cols()));
  const Index d = X.cols();
  typename Tape<S>::Mat xhat(X.rows(), d);
  Eigen::Matrix<S, Eigen::Dynamic, 1> inv_std(X.rows());
  for (Index r = 0; r < X.rows(); ++r) {
    const S mean = X.row(r).mean();
    const auto centered = (X.row(r).array() - mean).eval();
    const S var = centered.square().sum() / static_cast<S>(d);
    inv_std(r) = S(1) / std::sqrt(var + eps);
    xhat.row(r) = (centered * inv_std(r)).matrix();
  }
  typename Tape<S>::Mat Y = (xhat.array().rowwise() * g.row(0).array()).matrix();
  Y.rowwise() += b.row(0);
  return t.push(std::move(Y), {x, gain, bias},
                [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<S>& t,
                                                                                      std::uint32_t self) {
                  const auto& G = t.grad(Var{self});
                  const auto& g = t.value(gain);
                  const Index d = G.cols();
                  if (t.requires_grad(x)) {
                    typename Tape<S>::Mat D(G.rows(), d);
                    for (Index r = 0; r < G.rows(); ++r) {
                      const auto gx = G.row(r).cwiseProduct(g.row(0)).eval();
                      const S sum_gx = gx.sum();
                      const S sum_gx_xhat = gx.dot(xhat.row(r));
                      D.row(r) = (inv_std(r) / static_cast<S>(d)) *
                                 (static_cast<S>(d) * gx.array() - sum_gx - xhat.row(r).array() * sum_gx_xhat)
                                     .matrix();
                    }
                    t.accumulate(x, D);
                  }
                  if (t.requires_grad(gain)) t.accumulate(gain, G.cwiseProduct(xhat).colwise().sum());
                  if (t.requires_grad(bias)) t.accumulate(bias, G.colwise().sum());
                });
}

template <typename S>
Var gather_rows(Tape<S>& t, Var table, std::span<const int> ids) {
  const auto& T = t.value(table);
  typename Tape<S>::Mat Y(static_cast<Index>(ids.size()), T.cols());
  for (std::size_t k = 0; k < ids.size(); ++k) {
    require<S>(ids[k] >= 0 && ids[k] < T.rows(), "gather_rows",
               "row id " + std::to_string(ids[k]) + " out of range for " + shape(T));
    Y.row(static_cast<Index>(k)) = T.row(ids[k]);
  }
  std::vector<int> rows(ids.begin(), ids.end());
  return t.push(std::move(Y), {table}, [table, rows = std::move(rows)](Tape<S>& t, std::uint32_t self) {
    const auto& G = t.grad(Var{self});
    auto& gt = t.grad_buffer(table);
    for (std::size_t k = 0; k < rows.size(); ++k) gt.row(rows[k]) += G.row(static_cast<Index>(k));
  });
}

template <typename S>
Var slice_rows(Tape<S>& t, Var a, Index begin, Index count) {
  const auto& A = t.value(a);
  require<S>(begin >= 0 && count >= 0 && begin + count <= A.rows(), "slice_rows",
             "rows [" + std::to_string(begin) + ", +" + std::to_string(count) + ") of " + shape(A));
  typename Tape<S>::Mat Y = A.middleRows(begin, count);
  return t.push(std::move(Y), {a}, [a, begin, count](Tape<S>& t, std::uint32_t self) {
    t.grad_buffer(a).middleRows(begin, count) += t.grad(Var{self});
  });
}

template <typename S>
Var slice_cols(Tape<S>& t, Var a, Index begin, Index count) {
  const auto& A = t.value(a);
  require<S>(begin >= 0 && count >= 0 && begin + count <= A.cols(), "slice_cols",
             "cols [" + std::to_string(begin) + ", +" + std::to_string(count) + ") of " + shape(A));
  typename Tape<S>::Mat Y = A.middleCols(begin, count);
  return t.push(std::move(Y), {a}, [a, begin, count](Tape<S>& t, std::uint32_t self) {
    t.grad_buffer(a).middleCols(begin, count) += t.grad(Var{self});
  });
}

template <typename S>
Var concat_rows(Tape<S>& t, std::span<const Var> parts) {
  require<S>(!parts.empty(), "concat_rows", "no inputs");
  const Index cols = t.value(parts[0]).cols();
  Index rows = 0;
  for (Var p : parts) {
    require<S>(t.value(p).cols() == cols, "concat_rows", "column counts differ");
    rows += t.value(p).rows();
  }
  typename Tape<S>::Mat Y(rows, cols);
  Index at = 0;
  for (Var p : parts) {
    Y.middleRows(at, t.value(p).rows()) = t.value(p);
    at += t.value(p).rows();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return t.push(std::move(Y), parts, [inputs](Tape<S>& t, std::uint32_t self) {
    const auto& G = t.grad(Var{self});
    Index at = 0;
    for (Var p : inputs) {
      const Index r = t.value(p).rows();
      if (t.requires_grad(p)) t.grad_buffer(p) += G.middleRows(at, r);
      at += r;
    }
  });
}

template <typename S>
Var concat_cols(Tape<S>& t, std::span<const Var> parts) {
  require<S>(!parts.empty(), "concat_cols", "no inputs");
  const Index rows = t.value(parts[0]).rows();
  Index cols = 0;
  for (Var p : parts) {
    require<S>(t.value(p).rows() == rows, "concat_cols", "row counts differ");
    cols += t.value(p).cols();
  }
  typename Tape<S>::Mat Y(rows, cols);
  Index at = 0;
  for (Var p : parts) {
    Y.middleCols(at, t.value(p).cols()) = t.value(p);
    at += t.value(p).cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return t.push(std::move(Y), parts, [inputs](Tape<S>& t, std::uint32_t self) {
    const auto& G = t.grad(Var{self});
    Index at = 0;
    for (Var p : inputs) {
      const Index c = t.value(p).cols();
      if (t.requires_grad(p)) t.grad_buffer(p) += G.middleCols(at, c);
      at += c;
    }
  });
}

template <typename S>
Var transpose(Tape<S>& t, Var a) {
  typename Tape<S>::Mat Y = t.value(a).transpose();
  return t.push(std::move(Y), {a}, [a](Tape<S>& t, std::uint32_t self) {
    t.accumulate(a, t.grad(Var{self}).transpose());
  });
}

template <typename S>
Var sum(Tape<S>& t, Var a) {
  typename Tape<S>::Mat Y(1, 1);
  Y(0, 0) = t.value(a).sum();
  return t.push(std::move(Y), {a}, [a](Tape<S>& t, std::uint32_t self) {
    const S g = t.grad(Var{self})(0, 0);
    const auto& A = t.value(a);
    t.accumulate(a, Tape<S>::Mat::Constant(A.rows(), A.cols(), g));
  });
}

template <typename S>
Var sum_squares(Tape<S>& t, Var a) {
  typename Tape<S>::Mat Y(1, 1);
  Y(0, 0) = t.value(a).squaredNorm();
  return t.push(std::move(Y), {a}, [a](Tape<S>& t, std::uint32_t self) {
    const S g = t.grad(Var{self})(0, 0);
    t.accumulate(a, t.value(a) * (S(2) * g));
  });
}

template <typename S>
Var cross_entropy(Tape<S>& t, Var logits, std::span<const int> targets) {
  const auto& L = t.value(logits);
  require<S>(static_cast<std::size_t>(L.rows()) == targets.size() && L.rows() > 0, "cross_entropy",
             "need one target per logits row");
  typename Tape<S>::Mat P(L.rows(), L.cols());
  S loss = 0;
  for (Index r = 0; r < L.rows(); ++r) {
    const int target = targets[static_cast<std::size_t>(r)];
    require<S>(target >= 0 && target < L.cols(), "cross_entropy", "target out of range");
    const S m = L.row(r).maxCoeff();
    P.row(r) = (L.row(r).array() - m).exp().matrix();
    const S z = P.row(r).sum();
    P.row(r) /= z;
    loss += -(L(r, target) - m - std::log(z));
  }
  typename Tape<S>::Mat Y(1, 1);
  Y(0, 0) = loss / static_cast<S>(L.rows());
  std::vector<int> tgt(targets.begin(), targets.end());
  return t.push(std::move(Y), {logits},
                [logits, P = std::move(P), tgt = std::move(tgt)](Tape<S>& t, std::uint32_t self) {
                  const S g = t.grad(Var{self})(0, 0) / static_cast<S>(P.rows());
                  typename Tape<S>::Mat D = P * g;
                  for (Index r = 0; r < D.rows(); ++r) D(r, tgt[static_cast<std::size_t>(r)]) -= g;
                  t.accumulate(logits, D);
                });
}

template <typename S>
Var detach(Tape<S>& t, Var a) {
  return t.constant(t.value(a));
}

#define SENTORD_INSTANTIATE_TAPE(S)                                                   \
  template class Tape<S>;                                                             \
  template Var matmul<S>(Tape<S>&, Var, Var);                                         \
  template Var matmul_nt<S>(Tape<S>&, Var, Var);                                      \
  template Var add<S>(Tape<S>&, Var, Var);                                            \
  template Var mul<S>(Tape<S>&, Var, Var);                                            \
  template Var add_row<S>(Tape<S>&, Var, Var);                                        \
  template Var scale<S>(Tape<S>&, Var, S);                                            \
  template Var tanh<S>(Tape<S>&, Var);                                                \
  template Var gelu<S>(Tape<S>&, Var);                                                \
  template Var softmax_rows<S>(Tape<S>&, Var);                                        \
  template Var layer_norm_rows<S>(Tape<S>&, Var, Var, Var, S);                        \
  template Var gather_rows<S>(Tape<S>&, Var, std::span<const int>);                   \
  template Var slice_rows<S>(Tape<S>&, Var, Index, Index);                            \
  template Var slice_cols<S>(Tape<S>&, Var, Index, Index);                            \
  template Var concat_rows<S>(Tape<S>&, std::span<const Var>);                        \
  template Var concat_cols<S>(Tape<S>&, std::span<const Var>);                        \
  template Var transpose<S>(Tape<S>&, Var);                                           \
  template Var sum<S>(Tape<S>&, Var);                                                 \
  template Var sum_squares<S>(Tape<S>&, Var);                                         \
  template Var cross_entropy<S>(Tape<S>&, Var, std::span<const int>);                 \
  template Var detach<S>(Tape<S>&, Var);

SENTORD_INSTANTIATE_TAPE(float)
SENTORD_INSTANTIATE_TAPE(double)

#undef SENTORD_INSTANTIATE_TAPE

}  // namespace sentord::nn
