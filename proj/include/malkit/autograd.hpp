#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "malkit/errors.hpp"
#include "malkit/params.hpp"
#include "malkit/tensor.hpp"

namespace malkit::nn {

class Tape;

/// Handle to a node recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

/// Records forward operations so that gradients can be computed by a reverse
/// sweep. Node ids are assigned in creation order, which is a topological
/// order of the graph.
///
/// backward() may be called more than once on the same recording (for
/// example once per task loss); each call starts from cleared gradients.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Var constant(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, false, false, {}, {}, {}});
    return {this, nodes_.size() - 1};
  }

  // Leaf for a trainable parameter; repeated requests return the same node.
  Var param(const Parameter& p) {
    if (auto it = param_nodes_.find(p.name); it != param_nodes_.end()) {
      return {this, it->second};
    }
    nodes_.push_back(Node{p.value, {}, false, true, {}, {}, p.name});
    param_nodes_.emplace(p.name, nodes_.size() - 1);
    return {this, nodes_.size() - 1};
  }

  Var record(Tensor value, std::vector<std::size_t> parents, BackwardFn fn) {
    bool wants = false;
    for (std::size_t pid : parents) wants = wants || nodes_[pid].requires_grad;
    if (!wants) {
      parents.clear();
      fn = nullptr;
    }
    nodes_.push_back(
        Node{std::move(value), {}, false, wants, std::move(parents), std::move(fn), {}});
    return {this, nodes_.size() - 1};
  }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  // Upstream gradient of a node during the reverse sweep.
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }

  // Gradient accumulator of a parent; allocated on first use.
  Tensor& grad_acc(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
      n.grad = Tensor(n.value.shape());
      n.has_grad = true;
    }
    return n.grad;
  }

  std::size_t size() const noexcept { return nodes_.size(); }

  /// Reverse-mode sweep from a scalar loss. Every parameter leaf on the tape
  /// gets an entry; those the loss does not reach get exact zeros.
  GradientSet backward(Var loss) {
    if (loss.tape != this) throw ContractError("loss recorded on another tape");
    if (value(loss.id).size() != 1) {
      throw ContractError("backward requires a scalar loss, got shape " +
                          to_string(value(loss.id).shape()));
    }
    for (Node& n : nodes_) {
      n.has_grad = false;
      n.grad = Tensor();
    }
    std::vector<std::uint8_t> needed(nodes_.size(), 0);
    needed[loss.id] = nodes_[loss.id].requires_grad ? 1 : 0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      if (!needed[i]) continue;
      for (std::size_t pid : nodes_[i].parents)
        if (nodes_[pid].requires_grad) needed[pid] = 1;
    }
    if (needed[loss.id]) grad_acc(loss.id).fill(1.0);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!needed[i] || !n.has_grad || !n.backward) continue;
      n.backward(*this, i);
    }
    GradientSet out;
    for (const auto& [name, id] : param_nodes_) {
      const Node& n = nodes_[id];
      if (n.has_grad) {
        out.accumulate(name, n.grad);
      } else {
        out.accumulate(name, Tensor(n.value.shape()));
      }
    }
    return out;
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    std::string param;
  };

  std::vector<Node> nodes_;
  std::unordered_map<std::string, std::size_t> param_nodes_;
};

inline const Tensor& Var::value() const { return tape->value(id); }

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

inline MatMap as_mat(Tensor& t) {
  return MatMap(t.raw(), static_cast<Eigen::Index>(t.rows()),
                static_cast<Eigen::Index>(t.cols()));
}
inline ConstMatMap as_mat(const Tensor& t) {
  return ConstMatMap(t.raw(), static_cast<Eigen::Index>(t.rows()),
                     static_cast<Eigen::Index>(t.cols()));
}

inline void require_same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw ContractError("operands recorded on different tapes");
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

using detail::sigmoid;

enum class Activation { kIdentity, kRelu, kSigmoid, kSwish, kSoftmax };

inline Var matmul(Var a, Var b) {
  detail::require_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul: " + to_string(av.shape()) + " x " +
                         to_string(bv.shape()));
  }
  Tensor out({av.rows(), bv.cols()});
  detail::as_mat(out).noalias() = detail::as_mat(av) * detail::as_mat(bv);
  return a.tape->record(std::move(out), {a.id, b.id}, [a = a.id, b = b.id](Tape& t, std::size_t self) {
    const auto g = detail::as_mat(t.grad(self));
    if (t.requires_grad(a))
      detail::as_mat(t.grad_acc(a)).noalias() += g * detail::as_mat(t.value(b)).transpose();
    if (t.requires_grad(b))
      detail::as_mat(t.grad_acc(b)).noalias() += detail::as_mat(t.value(a)).transpose() * g;
  });
}

/// x * W + b with b broadcast over rows.
inline Var affine(Var x, Var w, Var b) {
  detail::require_same_tape(x, w);
  detail::require_same_tape(x, b);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  if (xv.rank() != 2 || wv.rank() != 2 || xv.cols() != wv.rows()) {
    throw DimensionError("dense: input " + to_string(xv.shape()) +
                         " is not conformable with weights " + to_string(wv.shape()));
  }
  if (bv.size() != wv.cols()) {
    throw DimensionError("dense: bias " + to_string(bv.shape()) +
                         " does not match weights " + to_string(wv.shape()));
  }
  Tensor out({xv.rows(), wv.cols()});
  auto om = detail::as_mat(out);
  om.noalias() = detail::as_mat(xv) * detail::as_mat(wv);
  const Eigen::Map<const Eigen::RowVectorXd> bias(bv.raw(), static_cast<Eigen::Index>(bv.size()));
  om.rowwise() += bias;
  return x.tape->record(std::move(out), {x.id, w.id, b.id},
                        [x = x.id, w = w.id, b = b.id](Tape& t, std::size_t self) {
    const auto g = detail::as_mat(t.grad(self));
    if (t.requires_grad(x))
      detail::as_mat(t.grad_acc(x)).noalias() += g * detail::as_mat(t.value(w)).transpose();
    if (t.requires_grad(w))
      detail::as_mat(t.grad_acc(w)).noalias() += detail::as_mat(t.value(x)).transpose() * g;
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad_acc(b);
      Eigen::Map<Eigen::RowVectorXd>(gb.raw(), static_cast<Eigen::Index>(gb.size())) +=
          g.colwise().sum();
    }
  });
}

inline Var relu(Var x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = v <= 0 ? 0.0 : v;  // NaN passes through
  return x.tape->record(std::move(out), {x.id}, [x = x.id](Tape& t, std::size_t self) {
    const Tensor& in = t.value(x);
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_acc(x);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (in[i] > 0) gx[i] += g[i];
  });
}

inline Var sigmoid(Var x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = detail::sigmoid(v);
  return x.tape->record(std::move(out), {x.id}, [x = x.id](Tape& t, std::size_t self) {
    const Tensor& y = t.value(self);
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_acc(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

// x * sigmoid(x)
inline Var swish(Var x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = v * detail::sigmoid(v);
  return x.tape->record(std::move(out), {x.id}, [x = x.id](Tape& t, std::size_t self) {
    const Tensor& in = t.value(x);
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_acc(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = detail::sigmoid(in[i]);
      gx[i] += g[i] * (s + in[i] * s * (1.0 - s));
    }
  });
}

// Row-wise softmax.
inline Var softmax(Var x) {
  const Tensor& in = x.value();
  Tensor out(in.shape());
  const std::size_t n = in.rows();
  const std::size_t c = in.cols();
  for (std::size_t r = 0; r < n; ++r) {
    auto src = in.row(r);
    auto dst = out.row(r);
    const double mx = c ? *std::max_element(src.begin(), src.end()) : 0.0;
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) total += dst[j] = std::exp(src[j] - mx);
    for (std::size_t j = 0; j < c; ++j) dst[j] /= total;
  }
  return x.tape->record(std::move(out), {x.id}, [x = x.id](Tape& t, std::size_t self) {
    const Tensor& y = t.value(self);
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_acc(x);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      auto yr = y.row(r);
      auto gr = g.row(r);
      double dot = 0.0;
      for (std::size_t j = 0; j < yr.size(); ++j) dot += yr[j] * gr[j];
      auto gxr = gx.row(r);
      for (std::size_t j = 0; j < yr.size(); ++j) gxr[j] += yr[j] * (gr[j] - dot);
    }
  });
}

inline Var activate(Var x, Activation act) {
  switch (act) {
    case Activation::kIdentity: return x;
    case Activation::kRelu: return relu(x);
    case Activation::kSigmoid: return sigmoid(x);
    case Activation::kSwish: return swish(x);
    case Activation::kSoftmax: return softmax(x);
  }
  return x;
}

/// activation(input * weights + bias)
inline Var dense_forward(Var input, Var weights, Var bias, Activation act) {
  return activate(affine(input, weights, bias), act);
}

/// Gathers table rows. `field` names the feature column in error messages.
inline Var embedding_lookup(Var table, std::span<const std::int64_t> ids,
                            const std::string& field = "embedding") {
  const Tensor& tv = table.value();
  if (tv.rank() != 2) throw DimensionError("embedding table must be rank 2, got " + to_string(tv.shape()));
  const std::size_t vocab = tv.rows();
  const std::size_t dim = tv.cols();
  Tensor out({ids.size(), dim});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw IndexError("feature '" + field + "': id " + std::to_string(ids[i]) +
                       " outside vocabulary [0, " + std::to_string(vocab) + ")");
    }
    std::copy_n(tv.row(static_cast<std::size_t>(ids[i])).begin(), dim, out.row(i).begin());
  }
  std::vector<std::int64_t> saved(ids.begin(), ids.end());
  return table.tape->record(std::move(out), {table.id},
                            [table = table.id, saved = std::move(saved)](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& gt = t.grad_acc(table);
    for (std::size_t i = 0; i < saved.size(); ++i) {
      auto src = g.row(i);
      auto dst = gt.row(static_cast<std::size_t>(saved[i]));
      for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
    }
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat_cols needs at least one input");
  const std::size_t n = parts.front().rows();
  std::size_t width = 0;
  std::vector<std::size_t> ids;
  for (Var p : parts) {
    detail::require_same_tape(parts.front(), p);
    if (p.rows() != n) {
      throw DimensionError("concat_cols: row mismatch " + to_string(parts.front().value().shape()) +
                           " vs " + to_string(p.value().shape()));
    }
    width += p.cols();
    ids.push_back(p.id);
  }
  Tensor out({n, width});
  std::size_t offset = 0;
  for (Var p : parts) {
    const Tensor& v = p.value();
    const std::size_t c = v.cols();
    for (std::size_t r = 0; r < n; ++r)
      std::copy_n(v.row(r).begin(), c, out.row(r).begin() + static_cast<std::ptrdiff_t>(offset));
    offset += c;
  }
  return parts.front().tape->record(std::move(out), ids, [ids](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    std::size_t offset = 0;
    for (std::size_t pid : ids) {
      const std::size_t c = t.value(pid).cols();
      if (t.requires_grad(pid)) {
        Tensor& gp = t.grad_acc(pid);
        for (std::size_t r = 0; r < g.rows(); ++r) {
          auto src = g.row(r).subspan(offset, c);
          auto dst = gp.row(r);
          for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
        }
      }
      offset += c;
    }
  });
}

inline Var add(Var a, Var b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  out += b.value();
  return a.tape->record(std::move(out), {a.id, b.id}, [a = a.id, b = b.id](Tape& t, std::size_t self) {
    if (t.requires_grad(a)) t.grad_acc(a) += t.grad(self);
    if (t.requires_grad(b)) t.grad_acc(b) += t.grad(self);
  });
}

inline Var sub(Var a, Var b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  out.add_scaled(b.value(), -1.0);
  return a.tape->record(std::move(out), {a.id, b.id}, [a = a.id, b = b.id](Tape& t, std::size_t self) {
    if (t.requires_grad(a)) t.grad_acc(a) += t.grad(self);
    if (t.requires_grad(b)) t.grad_acc(b).add_scaled(t.grad(self), -1.0);
  });
}

// Elementwise product.
inline Var mul(Var a, Var b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape->record(std::move(out), {a.id, b.id}, [a = a.id, b = b.id](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(a)) {
      const Tensor& bv = t.value(b);
      Tensor& ga = t.grad_acc(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(b)) {
      const Tensor& av = t.value(a);
      Tensor& gb = t.grad_acc(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

inline Var scale(Var x, double c) {
  Tensor out = x.value();
  out *= c;
  return x.tape->record(std::move(out), {x.id}, [x = x.id, c](Tape& t, std::size_t self) {
    t.grad_acc(x).add_scaled(t.grad(self), c);
  });
}

/// x[n x d] scaled row-wise by s[n x 1].
inline Var mul_rows(Var x, Var s) {
  detail::require_same_tape(x, s);
  const Tensor& xv = x.value();
  const Tensor& sv = s.value();
  if (sv.size() != xv.rows()) {
    throw DimensionError("mul_rows: scale " + to_string(sv.shape()) +
                         " does not match rows of " + to_string(xv.shape()));
  }
  Tensor out = xv;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (double& v : out.row(r)) v *= sv[r];
  return x.tape->record(std::move(out), {x.id, s.id}, [x = x.id, s = s.id](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& xv = t.value(x);
    const Tensor& sv = t.value(s);
    if (t.requires_grad(x)) {
      Tensor& gx = t.grad_acc(x);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        auto gr = g.row(r);
        auto dst = gx.row(r);
        for (std::size_t j = 0; j < gr.size(); ++j) dst[j] += gr[j] * sv[r];
      }
    }
    if (t.requires_grad(s)) {
      Tensor& gs = t.grad_acc(s);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        auto gr = g.row(r);
        auto xr = xv.row(r);
        double dot = 0.0;
        for (std::size_t j = 0; j < gr.size(); ++j) dot += gr[j] * xr[j];
        gs[r] += dot;
      }
    }
  });
}

/// Repeats each row `times` times: row i*times + j of the result is row i.
inline Var repeat_rows(Var x, std::size_t times) {
  const Tensor& xv = x.value();
  const std::size_t n = xv.rows();
  const std::size_t d = xv.cols();
  Tensor out({n * times, d});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t k = 0; k < times; ++k)
      std::copy_n(xv.row(r).begin(), d, out.row(r * times + k).begin());
  return x.tape->record(std::move(out), {x.id}, [x = x.id, times](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_acc(x);
    for (std::size_t r = 0; r < gx.rows(); ++r) {
      auto dst = gx.row(r);
      for (std::size_t k = 0; k < times; ++k) {
        auto src = g.row(r * times + k);
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
      }
    }
  });
}

/// Masked softmax pooling. Rows of `values` are grouped in blocks of `length`
/// (one block per output row); `scores` holds one logit per value row.
/// Blocks with no valid position produce a zero row.
inline Var attention_pool(Var scores, Var values, std::span<const std::uint8_t> mask,
                          std::size_t length) {
  detail::require_same_tape(scores, values);
  const Tensor& sv = scores.value();
  const Tensor& vv = values.value();
  if (length == 0) throw ContractError("attention_pool: block length must be positive");
  if (sv.size() != vv.rows() || mask.size() != vv.rows() || vv.rows() % length != 0) {
    throw DimensionError("attention_pool: scores " + to_string(sv.shape()) + ", values " +
                         to_string(vv.shape()) + ", mask length " + std::to_string(mask.size()));
  }
  const std::size_t n = vv.rows() / length;
  const std::size_t d = vv.cols();
  Tensor weights({n * length});
  Tensor out({n, d});
  for (std::size_t b = 0; b < n; ++b) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < length; ++j)
      if (mask[b * length + j]) mx = std::max(mx, sv[b * length + j]);
    if (!std::isfinite(mx)) continue;
    double total = 0.0;
    for (std::size_t j = 0; j < length; ++j) {
      const std::size_t k = b * length + j;
      if (mask[k]) total += weights[k] = std::exp(sv[k] - mx);
    }
    auto dst = out.row(b);
    for (std::size_t j = 0; j < length; ++j) {
      const std::size_t k = b * length + j;
      if (!mask[k]) continue;
      weights[k] /= total;
      auto src = vv.row(k);
      for (std::size_t c = 0; c < d; ++c) dst[c] += weights[k] * src[c];
    }
  }
  return scores.tape->record(
      std::move(out), {scores.id, values.id},
      [s = scores.id, v = values.id, weights = std::move(weights), length](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& vv = t.value(v);
        const std::size_t n = g.rows();
        std::vector<double> gdotv(length);
        for (std::size_t b = 0; b < n; ++b) {
          auto gb = g.row(b);
          double mean = 0.0;
          for (std::size_t j = 0; j < length; ++j) {
            const std::size_t k = b * length + j;
            double dot = 0.0;
            auto vr = vv.row(k);
            for (std::size_t c = 0; c < gb.size(); ++c) dot += gb[c] * vr[c];
            gdotv[j] = dot;
            mean += weights[k] * dot;
          }
          if (t.requires_grad(v)) {
            Tensor& gv = t.grad_acc(v);
            for (std::size_t j = 0; j < length; ++j) {
              const std::size_t k = b * length + j;
              if (weights[k] == 0.0) continue;
              auto dst = gv.row(k);
              for (std::size_t c = 0; c < gb.size(); ++c) dst[c] += weights[k] * gb[c];
            }
          }
          if (t.requires_grad(s)) {
            Tensor& gs = t.grad_acc(s);
            for (std::size_t j = 0; j < length; ++j) {
              const std::size_t k = b * length + j;
              gs[k] += weights[k] * (gdotv[j] - mean);
            }
          }
        }
      });
}

/// Per-row convex combination: out_i = sum_e gates(i, e) * experts[e]_i.
inline Var mix(Var gates, const std::vector<Var>& experts) {
  const Tensor& gv = gates.value();
  if (experts.empty() || gv.cols() != experts.size()) {
    throw DimensionError("mix: gates " + to_string(gv.shape()) + " for " +
                         std::to_string(experts.size()) + " experts");
  }
  const std::size_t n = gv.rows();
  const std::size_t d = experts.front().cols();
  std::vector<std::size_t> ids{gates.id};
  for (Var e : experts) {
    detail::require_same_tape(gates, e);
    if (e.rows() != n || e.cols() != d) {
      throw DimensionError("mix: expert " + to_string(e.value().shape()) + " vs gates " +
                           to_string(gv.shape()));
    }
    ids.push_back(e.id);
  }
  Tensor out({n, d});
  for (std::size_t e = 0; e < experts.size(); ++e) {
    const Tensor& ev = experts[e].value();
    for (std::size_t r = 0; r < n; ++r) {
      const double w = gv(r, e);
      auto src = ev.row(r);
      auto dst = out.row(r);
      for (std::size_t c = 0; c < d; ++c) dst[c] += w * src[c];
    }
  }
  return gates.tape->record(std::move(out), ids, [ids](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const std::size_t gid = ids.front();
    const Tensor& gv = t.value(gid);
    for (std::size_t e = 0; e + 1 < ids.size(); ++e) {
      const std::size_t eid = ids[e + 1];
      const Tensor& ev = t.value(eid);
      if (t.requires_grad(gid)) {
        Tensor& gg = t.grad_acc(gid);
        for (std::size_t r = 0; r < g.rows(); ++r) {
          auto gr = g.row(r);
          auto er = ev.row(r);
          double dot = 0.0;
          for (std::size_t c = 0; c < gr.size(); ++c) dot += gr[c] * er[c];
          gg(r, e) += dot;
        }
      }
      if (t.requires_grad(eid)) {
        Tensor& ge = t.grad_acc(eid);
        for (std::size_t r = 0; r < g.rows(); ++r) {
          const double w = gv(r, e);
          auto gr = g.row(r);
          auto dst = ge.row(r);
          for (std::size_t c = 0; c < gr.size(); ++c) dst[c] += w * gr[c];
        }
      }
    }
  });
}

// Forward identity; blocks gradient flow.
inline Var stop_gradient(Var x) { return x.tape->constant(x.value()); }

// Elementwise clamp; gradient passes where the input is inside [lo, hi].
inline Var clamp(Var x, double lo, double hi) {
  Tensor out = x.value();
  for (double& v : out.data())
    if (!std::isnan(v)) v = std::min(hi, std::max(lo, v));
  return x.tape->record(std::move(out), {x.id}, [x = x.id, lo, hi](Tape& t, std::size_t self) {
    const Tensor& in = t.value(x);
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_acc(x);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (in[i] >= lo && in[i] <= hi) gx[i] += g[i];
  });
}

inline Var sum(Var x) {
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  return x.tape->record(Tensor::scalar(total), {x.id}, [x = x.id](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    for (double& v : t.grad_acc(x).data()) v += g;
  });
}

/// sum_k coeffs[k] * terms[k] over scalar terms.
inline Var weighted_sum(const std::vector<Var>& terms, const std::vector<double>& coeffs) {
  if (terms.empty() || terms.size() != coeffs.size()) {
    throw ContractError("weighted_sum: " + std::to_string(terms.size()) + " terms, " +
                        std::to_string(coeffs.size()) + " coefficients");
  }
  std::vector<std::size_t> ids;
  double total = 0.0;
  for (std::size_t k = 0; k < terms.size(); ++k) {
    detail::require_same_tape(terms.front(), terms[k]);
    if (terms[k].value().size() != 1) {
      throw DimensionError("weighted_sum: term " + std::to_string(k) + " is not scalar");
    }
    total += coeffs[k] * terms[k].value()[0];
    ids.push_back(terms[k].id);
  }
  return terms.front().tape->record(Tensor::scalar(total), ids,
                                    [ids, coeffs](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    for (std::size_t k = 0; k < ids.size(); ++k)
      if (t.requires_grad(ids[k])) t.grad_acc(ids[k])[0] += coeffs[k] * g;
  });
}

/// Weighted binary cross-entropy on probabilities p[n x 1]:
/// -(sum_i w_i [y_i log p_i + (1 - y_i) log(1 - p_i)]) / sum_i w_i.
inline Var binary_cross_entropy(Var p, std::span<const double> labels,
                                std::span<const double> weights) {
  const Tensor& pv = p.value();
  const std::size_t n = pv.size();
  if (labels.size() != n || weights.size() != n) {
    throw DimensionError("binary_cross_entropy: " + std::to_string(n) + " predictions, " +
                         std::to_string(labels.size()) + " labels, " +
                         std::to_string(weights.size()) + " weights");
  }
  double wsum = 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(pv[i] > 0.0 && pv[i] < 1.0)) {
      throw NumericError("binary_cross_entropy: probability " + std::to_string(pv[i]) +
                         " outside (0, 1) at row " + std::to_string(i));
    }
    if (weights[i] < 0.0) throw ContractError("binary_cross_entropy: negative sample weight");
    wsum += weights[i];
    total += weights[i] * (labels[i] * std::log(pv[i]) + (1.0 - labels[i]) * std::log(1.0 - pv[i]));
  }
  if (wsum <= 0.0) throw ContractError("binary_cross_entropy: total sample weight is zero");
  std::vector<double> y(labels.begin(), labels.end());
  std::vector<double> w(weights.begin(), weights.end());
  return p.tape->record(Tensor::scalar(-total / wsum), {p.id},
                        [p = p.id, y = std::move(y), w = std::move(w), wsum](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    const Tensor& pv = t.value(p);
    Tensor& gp = t.grad_acc(p);
    for (std::size_t i = 0; i < y.size(); ++i) {
      gp[i] += -g * w[i] * (y[i] / pv[i] - (1.0 - y[i]) / (1.0 - pv[i])) / wsum;
    }
  });
}

/// Mean softmax cross-entropy of logits[n x C] against class indices.
inline Var softmax_cross_entropy(Var logits, std::span<const std::size_t> classes) {
  const Tensor& lv = logits.value();
  const std::size_t n = lv.rows();
  const std::size_t c = lv.cols();
  if (classes.size() != n) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(n) + " rows, " +
                         std::to_string(classes.size()) + " labels");
  }
  Tensor probs(lv.shape());
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (classes[r] >= c) throw ContractError("softmax_cross_entropy: class index out of range");
    auto src = lv.row(r);
    const double mx = *std::max_element(src.begin(), src.end());
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += probs(r, j) = std::exp(src[j] - mx);
    for (std::size_t j = 0; j < c; ++j) probs(r, j) /= z;
    total -= src[classes[r]] - mx - std::log(z);
  }
  std::vector<std::size_t> y(classes.begin(), classes.end());
  return logits.tape->record(Tensor::scalar(total / static_cast<double>(n)), {logits.id},
                             [l = logits.id, probs = std::move(probs), y = std::move(y)](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0] / static_cast<double>(y.size());
    Tensor& gl = t.grad_acc(l);
    for (std::size_t r = 0; r < y.size(); ++r) {
      auto pr = probs.row(r);
      auto dst = gl.row(r);
      for (std::size_t j = 0; j < pr.size(); ++j) dst[j] += g * (pr[j] - (j == y[r] ? 1.0 : 0.0));
    }
  });
}

}  // namespace malkit::nn
