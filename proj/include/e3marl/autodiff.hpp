#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "e3marl/rng.hpp"

// Minimal reverse-mode automatic differentiation over dense 64-bit tensors.
// A Tape records the forward pass; backward() accumulates gradients into
// Parameters. One tape is single-threaded; independent tapes may run
// concurrently.

namespace e3marl::ad {

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
    data.assign(numel_of(shape), 0.0);
  }
  Tensor(std::vector<std::size_t> s, std::vector<double> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != numel_of(shape)) {
      throw std::invalid_argument("Tensor: data length does not match shape");
    }
  }

  static std::size_t numel_of(const std::vector<std::size_t>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1},
                           std::multiplies<>());
  }
  static Tensor zeros(std::vector<std::size_t> s) { return Tensor(std::move(s)); }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  std::size_t numel() const { return data.size(); }
  std::size_t rows() const { return shape.empty() ? 1 : shape[0]; }
  std::size_t cols() const {
    if (shape.size() < 2) return shape.empty() ? 1 : 1;
    return shape[1];
  }
  double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

inline std::string shape_string(const std::vector<std::size_t>& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

inline void check_same_shape(const Tensor& a, const Tensor& b,
                             const char* op) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_string(a.shape) + " vs " +
                                shape_string(b.shape));
  }
}

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape) {}

  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0); }
};

class Tape;

class Var {
 public:
  Var() = default;
  bool valid() const { return tape_ != nullptr; }
  const Tensor& value() const;
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }

 private:
  friend class Tape;
  Var(Tape* t, std::size_t id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t node_id)>;

  Var constant(Tensor value) {
    return make_node(std::move(value), {}, nullptr, false, nullptr);
  }

  Var leaf(Parameter& p) {
    return make_node(p.value, {}, nullptr, true, &p);
  }

  // Records an operation with an externally supplied backward rule; the
  // rule receives this tape and the node id, reads grad(node_id), and adds
  // into grad(parent) for each input it differentiates.
  Var custom(std::vector<Var> inputs, Tensor value, BackwardFn backward) {
    std::vector<std::size_t> parents;
    bool needs = false;
    parents.reserve(inputs.size());
    for (const Var& v : inputs) {
      if (v.tape() != this) {
        throw std::invalid_argument("Tape::custom: input from another tape");
      }
      parents.push_back(v.id());
      needs = needs || nodes_[v.id()].needs_grad;
    }
    return make_node(std::move(value), std::move(parents),
                     needs ? std::move(backward) : nullptr, needs, nullptr);
  }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& value(const Var& v) const { return nodes_[v.id()].value; }
  Tensor& grad(std::size_t id) { return nodes_[id].grad; }
  bool needs_grad(const Var& v) const { return nodes_[v.id()].needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Accumulates d(loss)/d(theta) into every reachable Parameter's grad.
  // Repeated calls accumulate further.
  void backward(const Var& loss) {
    if (loss.tape() != this) {
      throw std::invalid_argument("backward: loss from another tape");
    }
    if (value(loss).numel() != 1) {
      throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                  shape_string(value(loss).shape));
    }
    const std::size_t root = loss.id();
    // Reachability pass: only ancestors of the loss that need gradients.
    std::vector<char> live(root + 1, 0);
    live[root] = 1;
    for (std::size_t id = root + 1; id-- > 0;) {
      if (!live[id] || !nodes_[id].needs_grad) continue;
      for (std::size_t p : nodes_[id].parents) live[p] = 1;
    }
    for (std::size_t id = 0; id <= root; ++id) {
      Node& n = nodes_[id];
      if (live[id] && n.needs_grad) {
        n.grad = Tensor(n.value.shape);
      } else {
        n.grad.data.clear();
        n.grad.shape.clear();
      }
    }
    nodes_[root].grad.data[0] = 1.0;
    for (std::size_t id = root + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!live[id] || !n.needs_grad) continue;
      if (n.backward) n.backward(*this, id);
      if (n.param) {
        for (std::size_t k = 0; k < n.grad.data.size(); ++k) {
          n.param->grad.data[k] += n.grad.data[k];
        }
      }
    }
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool needs_grad = false;
  };

  Var make_node(Tensor value, std::vector<std::size_t> parents,
                BackwardFn backward, bool needs_grad, Parameter* param) {
    Node n;
    n.value = std::move(value);
    n.parents = std::move(parents);
    n.backward = std::move(backward);
    n.param = param;
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }

// ---------------------------------------------------------------------------
// Forward operations

namespace detail {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                             Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

inline CMapMat as_matrix(const Tensor& t) {
  if (t.shape.size() != 2) {
    throw std::invalid_argument("expected rank-2 tensor, got " +
                                shape_string(t.shape));
  }
  return CMapMat(t.data.data(), static_cast<long>(t.shape[0]),
                 static_cast<long>(t.shape[1]));
}
inline MapMat as_matrix(Tensor& t) {
  if (t.shape.size() != 2) {
    throw std::invalid_argument("expected rank-2 tensor, got " +
                                shape_string(t.shape));
  }
  return MapMat(t.data.data(), static_cast<long>(t.shape[0]),
                static_cast<long>(t.shape[1]));
}

inline void add_into(Tensor& dst, const Tensor& src) {
  for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}
}  // namespace detail

inline Var matmul(Var a, Var b) {
  Tape& t = *a.tape();
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape.size() != 2 || bv.shape.size() != 2 ||
      av.shape[1] != bv.shape[0]) {
    throw std::invalid_argument("matmul: incompatible shapes " +
                                shape_string(av.shape) + " vs " +
                                shape_string(bv.shape));
  }
  Tensor out({av.shape[0], bv.shape[1]});
  detail::as_matrix(out) = detail::as_matrix(av) * detail::as_matrix(bv);
  return t.custom({a, b}, std::move(out),
                  [a, b](Tape& tp, std::size_t id) {
                    const Tensor& go = tp.grad(id);
                    auto g = detail::as_matrix(go);
                    if (tp.needs_grad(a)) {
                      detail::as_matrix(tp.grad(a.id())) +=
                          g * detail::as_matrix(tp.value(b)).transpose();
                    }
                    if (tp.needs_grad(b)) {
                      detail::as_matrix(tp.grad(b.id())) +=
                          detail::as_matrix(tp.value(a)).transpose() * g;
                    }
                  });
}

inline Var add(Var a, Var b) {
  Tape& t = *a.tape();
  check_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  detail::add_into(out, b.value());
  return t.custom({a, b}, std::move(out), [a, b](Tape& tp, std::size_t id) {
    const Tensor& go = tp.grad(id);
    if (tp.needs_grad(a)) detail::add_into(tp.grad(a.id()), go);
    if (tp.needs_grad(b)) detail::add_into(tp.grad(b.id()), go);
  });
}

inline Var multiply(Var a, Var b) {
  Tape& t = *a.tape();
  check_same_shape(a.value(), b.value(), "multiply");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b.value().data[i];
  return t.custom({a, b}, std::move(out), [a, b](Tape& tp, std::size_t id) {
    const Tensor& go = tp.grad(id);
    if (tp.needs_grad(a)) {
      Tensor& ga = tp.grad(a.id());
      const Tensor& bv = tp.value(b);
      for (std::size_t i = 0; i < go.data.size(); ++i)
        ga.data[i] += go.data[i] * bv.data[i];
    }
    if (tp.needs_grad(b)) {
      Tensor& gb = tp.grad(b.id());
      const Tensor& av = tp.value(a);
      for (std::size_t i = 0; i < go.data.size(); ++i)
        gb.data[i] += go.data[i] * av.data[i];
    }
  });
}

inline Var scale(Var a, double c) {
  Tape& t = *a.tape();
  Tensor out = a.value();
  for (double& v : out.data) v *= c;
  return t.custom({a}, std::move(out), [a, c](Tape& tp, std::size_t id) {
    const Tensor& go = tp.grad(id);
    Tensor& ga = tp.grad(a.id());
    for (std::size_t i = 0; i < go.data.size(); ++i) ga.data[i] += c * go.data[i];
  });
}

inline Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

// Concatenation along rows (axis 0) or columns (axis 1) of rank-2 tensors.
inline Var concat(std::vector<Var> parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  Tape& t = *parts[0].tape();
  if (axis != 0 && axis != 1) throw std::invalid_argument("concat: bad axis");
  std::size_t rows = parts[0].value().shape[0];
  std::size_t cols = parts[0].value().shape[1];
  std::size_t total = 0;
  for (const Var& p : parts) {
    const auto& s = p.value().shape;
    if (s.size() != 2) throw std::invalid_argument("concat: rank-2 only");
    if (axis == 0 && s[1] != cols)
      throw std::invalid_argument("concat: column mismatch");
    if (axis == 1 && s[0] != rows)
      throw std::invalid_argument("concat: row mismatch");
    total += s[axis];
  }
  Tensor out(axis == 0 ? std::vector<std::size_t>{total, cols}
                       : std::vector<std::size_t>{rows, total});
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& pv = p.value();
    if (axis == 0) {
      std::copy(pv.data.begin(), pv.data.end(),
                out.data.begin() + static_cast<long>(off * cols));
      off += pv.shape[0];
    } else {
      for (std::size_t r = 0; r < rows; ++r) {
        std::copy(pv.data.begin() + static_cast<long>(r * pv.shape[1]),
                  pv.data.begin() + static_cast<long>((r + 1) * pv.shape[1]),
                  out.data.begin() + static_cast<long>(r * total + off));
      }
      off += pv.shape[1];
    }
  }
  auto backward = [parts, axis](Tape& tp, std::size_t id) {
    const Tensor& go = tp.grad(id);
    const std::size_t total = go.shape[axis];
    std::size_t off = 0;
    for (const Var& p : parts) {
      const auto& s = tp.value(p).shape;
      if (tp.needs_grad(p)) {
        Tensor& gp = tp.grad(p.id());
        if (axis == 0) {
          for (std::size_t i = 0; i < s[0] * s[1]; ++i)
            gp.data[i] += go.data[off * s[1] + i];
        } else {
          for (std::size_t r = 0; r < s[0]; ++r)
            for (std::size_t c = 0; c < s[1]; ++c)
              gp.data[r * s[1] + c] += go.data[r * total + off + c];
        }
      }
      off += s[axis];
    }
  };
  return t.custom(std::move(parts), std::move(out), std::move(backward));
}

inline Var slice(Var a, int axis, std::size_t start, std::size_t len) {
  Tape& t = *a.tape();
  const Tensor& av = a.value();
  if (av.shape.size() != 2) throw std::invalid_argument("slice: rank-2 only");
  if (axis != 0 && axis != 1) throw std::invalid_argument("slice: bad axis");
  if (start + len > av.shape[axis]) {
    throw std::invalid_argument("slice: out of range");
  }
  const std::size_t rows = av.shape[0], cols = av.shape[1];
  Tensor out(axis == 0 ? std::vector<std::size_t>{len, cols}
                       : std::vector<std::size_t>{rows, len});
  if (axis == 0) {
    std::copy(av.data.begin() + static_cast<long>(start * cols),
              av.data.begin() + static_cast<long>((start + len) * cols),
              out.data.begin());
  } else {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < len; ++c)
        out.data[r * len + c] = av.data[r * cols + start + c];
  }
  return t.custom({a}, std::move(out),
                  [a, axis, start, len](Tape& tp, std::size_t id) {
                    const Tensor& go = tp.grad(id);
                    Tensor& ga = tp.grad(a.id());
                    const std::size_t cols = tp.value(a).shape[1];
                    if (axis == 0) {
                      for (std::size_t i = 0; i < go.data.size(); ++i)
                        ga.data[start * cols + i] += go.data[i];
                    } else {
                      const std::size_t rows = tp.value(a).shape[0];
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t c = 0; c < len; ++c)
                          ga.data[r * cols + start + c] += go.data[r * len + c];
                    }
                  });
}

inline Var reshape(Var a, std::vector<std::size_t> shape) {
  Tape& t = *a.tape();
  if (Tensor::numel_of(shape) != a.value().numel()) {
    throw std::invalid_argument("reshape: element count mismatch");
  }
  Tensor out(std::move(shape), a.value().data);
  return t.custom({a}, std::move(out), [a](Tape& tp, std::size_t id) {
    const Tensor& go = tp.grad(id);
    detail::add_into(tp.grad(a.id()), go);
  });
}

inline Var sum(Var a) {
  Tape& t = *a.tape();
  double s = 0.0;
  for (double v : a.value().data) s += v;
  return t.custom({a}, Tensor::scalar(s), [a](Tape& tp, std::size_t id) {
    const double g = tp.grad(id).data[0];
    Tensor& ga = tp.grad(a.id());
    for (double& v : ga.data) v += g;
  });
}

inline Var mean(Var a) {
  Tape& t = *a.tape();
  const std::size_t n = a.value().numel();
  double s = 0.0;
  for (double v : a.value().data) s += v;
  return t.custom({a}, Tensor::scalar(s / static_cast<double>(n)),
                  [a, n](Tape& tp, std::size_t id) {
                    const double g = tp.grad(id).data[0] / static_cast<double>(n);
                    Tensor& ga = tp.grad(a.id());
                    for (double& v : ga.data) v += g;
                  });
}

inline Var gather_rows(Var a, std::vector<std::size_t> indices) {
  Tape& t = *a.tape();
  const Tensor& av = a.value();
  if (av.shape.size() != 2) throw std::invalid_argument("gather_rows: rank-2 only");
  const std::size_t cols = av.shape[1];
  Tensor out({indices.size(), cols});
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= av.shape[0])
      throw std::invalid_argument("gather_rows: index out of range");
    std::copy(av.data.begin() + static_cast<long>(indices[r] * cols),
              av.data.begin() + static_cast<long>((indices[r] + 1) * cols),
              out.data.begin() + static_cast<long>(r * cols));
  }
  return t.custom({a}, std::move(out),
                  [a, indices = std::move(indices)](Tape& tp, std::size_t id) {
                    const Tensor& go = tp.grad(id);
                    Tensor& ga = tp.grad(a.id());
                    const std::size_t cols = go.shape[1];
                    for (std::size_t r = 0; r < indices.size(); ++r)
                      for (std::size_t c = 0; c < cols; ++c)
                        ga.data[indices[r] * cols + c] += go.data[r * cols + c];
                  });
}

// out has num_rows rows; row x[r] is added into out[indices[r]].
inline Var scatter_add_rows(Var a, std::vector<std::size_t> indices,
                            std::size_t num_rows) {
  Tape& t = *a.tape();
  const Tensor& av = a.value();
  if (av.shape.size() != 2)
    throw std::invalid_argument("scatter_add_rows: rank-2 only");
  if (indices.size() != av.shape[0])
    throw std::invalid_argument("scatter_add_rows: one index per row required");
  const std::size_t cols = av.shape[1];
  Tensor out({num_rows, cols});
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= num_rows)
      throw std::invalid_argument("scatter_add_rows: index out of range");
    for (std::size_t c = 0; c < cols; ++c)
      out.data[indices[r] * cols + c] += av.data[r * cols + c];
  }
  return t.custom({a}, std::move(out),
                  [a, indices = std::move(indices)](Tape& tp, std::size_t id) {
                    const Tensor& go = tp.grad(id);
                    Tensor& ga = tp.grad(a.id());
                    const std::size_t cols = go.shape[1];
                    for (std::size_t r = 0; r < indices.size(); ++r)
                      for (std::size_t c = 0; c < cols; ++c)
                        ga.data[r * cols + c] += go.data[indices[r] * cols + c];
                  });
}

// Per-row scaling by a constant factor vector (not differentiated w.r.t.
// the factors); used for mean aggregation on top of scatter_add_rows.
inline Var scale_rows(Var a, std::vector<double> factors) {
  Tape& t = *a.tape();
  const Tensor& av = a.value();
  if (av.shape.size() != 2) throw std::invalid_argument("scale_rows: rank-2 only");
  if (factors.size() != av.shape[0])
    throw std::invalid_argument("scale_rows: one factor per row required");
  const std::size_t cols = av.shape[1];
  Tensor out = av;
  for (std::size_t r = 0; r < factors.size(); ++r)
    for (std::size_t c = 0; c < cols; ++c) out.data[r * cols + c] *= factors[r];
  return t.custom({a}, std::move(out),
                  [a, factors = std::move(factors)](Tape& tp, std::size_t id) {
                    const Tensor& go = tp.grad(id);
                    Tensor& ga = tp.grad(a.id());
                    const std::size_t cols = go.shape[1];
                    for (std::size_t r = 0; r < factors.size(); ++r)
                      for (std::size_t c = 0; c < cols; ++c)
                        ga.data[r * cols + c] += factors[r] * go.data[r * cols + c];
                  });
}

inline Var relu(Var a) {
  Tape& t = *a.tape();
  Tensor out = a.value();
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;  // subgradient 0 at 0
  return t.custom({a}, std::move(out), [a](Tape& tp, std::size_t id) {
    const Tensor& go = tp.grad(id);
    const Tensor& av = tp.value(a);
    Tensor& ga = tp.grad(a.id());
    for (std::size_t i = 0; i < go.data.size(); ++i)
      if (av.data[i] > 0.0) ga.data[i] += go.data[i];
  });
}

inline Var tanh(Var a) {
  Tape& t = *a.tape();
  Tensor out = a.value();
  for (double& v : out.data) v = std::tanh(v);
  return t.custom({a}, std::move(out), [a](Tape& tp, std::size_t id) {
    const Tensor& go = tp.grad(id);
    const Tensor& y = tp.value(id);
    Tensor& ga = tp.grad(a.id());
    for (std::size_t i = 0; i < go.data.size(); ++i)
      ga.data[i] += go.data[i] * (1.0 - y.data[i] * y.data[i]);
  });
}

inline Var sigmoid(Var a) {
  Tape& t = *a.tape();
  Tensor out = a.value();
  for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
  return t.custom({a}, std::move(out), [a](Tape& tp, std::size_t id) {
    const Tensor& go = tp.grad(id);
    const Tensor& y = tp.value(id);
    Tensor& ga = tp.grad(a.id());
    for (std::size_t i = 0; i < go.data.size(); ++i)
      ga.data[i] += go.data[i] * y.data[i] * (1.0 - y.data[i]);
  });
}

// Row norms with epsilon inside the square root: sqrt(sum x^2 + eps),
// so gradients stay finite on zero-padded rows.
inline Var l2_norm_rows(Var a, double eps = 1e-12) {
  Tape& t = *a.tape();
  const Tensor& av = a.value();
  if (av.shape.size() != 2)
    throw std::invalid_argument("l2_norm_rows: rank-2 only");
  const std::size_t rows = av.shape[0], cols = av.shape[1];
  Tensor out({rows, 1});
  for (std::size_t r = 0; r < rows; ++r) {
    double s = eps;
    for (std::size_t c = 0; c < cols; ++c) {
      const double v = av.data[r * cols + c];
      s += v * v;
    }
    out.data[r] = std::sqrt(s);
  }
  return t.custom({a}, std::move(out), [a](Tape& tp, std::size_t id) {
    const Tensor& go = tp.grad(id);
    const Tensor& y = tp.value(id);
    const Tensor& av = tp.value(a);
    Tensor& ga = tp.grad(a.id());
    const std::size_t rows = av.shape[0], cols = av.shape[1];
    for (std::size_t r = 0; r < rows; ++r) {
      const double g = go.data[r] / y.data[r];
      for (std::size_t c = 0; c < cols; ++c)
        ga.data[r * cols + c] += g * av.data[r * cols + c];
    }
  });
}

// ---------------------------------------------------------------------------
// Parameter collections, optimization, checkpoints

class ParameterMap {
 public:
  Parameter& create(const std::string& name, Tensor init) {
    if (index_.count(name)) {
      throw std::invalid_argument("ParameterMap: duplicate parameter " + name);
    }
    params_.push_back(std::make_unique<Parameter>(name, std::move(init)));
    index_[name] = params_.size() - 1;
    return *params_.back();
  }

  Parameter& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) {
      throw std::out_of_range("ParameterMap: no parameter " + name);
    }
    return *params_[it->second];
  }
  const Parameter& at(const std::string& name) const {
    return const_cast<ParameterMap*>(this)->at(name);
  }

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

  // Copies values from another map with identical structure.
  void copy_values_from(const ParameterMap& other) {
    require_same_structure(other, "copy_values_from");
    for (std::size_t i = 0; i < params_.size(); ++i) {
      params_[i]->value.data = other.params_[i]->value.data;
    }
  }

  // Polyak averaging: theta_target <- tau * theta + (1 - tau) * theta_target.
  void soft_update_from(const ParameterMap& online, double tau) {
    require_same_structure(online, "soft_update_from");
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& dst = params_[i]->value.data;
      const auto& src = online.params_[i]->value.data;
      for (std::size_t k = 0; k < dst.size(); ++k) {
        dst[k] = tau * src[k] + (1.0 - tau) * dst[k];
      }
    }
  }

  double grad_norm() const {
    double s = 0.0;
    for (const auto& p : params_)
      for (double g : p->grad.data) s += g * g;
    return std::sqrt(s);
  }

  void scale_grads(double c) {
    for (auto& p : params_)
      for (double& g : p->grad.data) g *= c;
  }

  // Exact textual round-trip: doubles are written as hexfloats.
  void save(std::ostream& os) const {
    os << "e3marl-params 1\n" << params_.size() << "\n";
    os << std::hexfloat;
    for (const auto& p : params_) {
      os << p->name << " " << p->value.shape.size();
      for (std::size_t d : p->value.shape) os << " " << d;
      os << "\n";
      for (std::size_t i = 0; i < p->value.data.size(); ++i) {
        os << (i ? " " : "") << p->value.data[i];
      }
      os << "\n";
    }
  }

  void save_file(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    save(os);
  }

  // Loads values into existing parameters (names and shapes must match).
  void load(std::istream& is) {
    std::string magic;
    int version = 0;
    is >> magic >> version;
    if (magic != "e3marl-params" || version != 1) {
      throw std::runtime_error("unrecognized checkpoint header");
    }
    std::size_t count = 0;
    is >> count;
    if (count != params_.size()) {
      throw std::runtime_error("checkpoint has " + std::to_string(count) +
                               " parameters, expected " +
                               std::to_string(params_.size()));
    }
    for (std::size_t i = 0; i < count; ++i) {
      std::string name;
      std::size_t rank = 0;
      is >> name >> rank;
      std::vector<std::size_t> shape(rank);
      for (auto& d : shape) is >> d;
      Parameter& p = at(name);
      if (p.value.shape != shape) {
        throw std::runtime_error("checkpoint shape mismatch for " + name);
      }
      for (double& v : p.value.data) {
        std::string tok;
        is >> tok;
        v = std::strtod(tok.c_str(), nullptr);
      }
    }
    if (!is) throw std::runtime_error("truncated checkpoint");
  }

  void load_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path);
    load(is);
  }

 private:
  void require_same_structure(const ParameterMap& other, const char* op) const {
    if (other.params_.size() != params_.size()) {
      throw std::invalid_argument(std::string(op) + ": parameter count mismatch");
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (params_[i]->name != other.params_[i]->name ||
          params_[i]->value.shape != other.params_[i]->value.shape) {
        throw std::invalid_argument(std::string(op) + ": structure mismatch at " +
                                    params_[i]->name);
      }
    }
  }

  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, std::size_t> index_;
};

class SgdMomentum {
 public:
  SgdMomentum(double lr, double momentum = 0.9) : lr_(lr), momentum_(momentum) {}

  void step(ParameterMap& params) {
    if (velocity_.size() != params.size()) {
      velocity_.clear();
      for (std::size_t i = 0; i < params.size(); ++i) {
        velocity_.emplace_back(params[i].value.shape);
      }
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& v = velocity_[i].data;
      auto& p = params[i];
      for (std::size_t k = 0; k < v.size(); ++k) {
        v[k] = momentum_ * v[k] + p.grad.data[k];
        p.value.data[k] -= lr_ * v[k];
      }
    }
  }

  double learning_rate() const { return lr_; }

 private:
  double lr_;
  double momentum_;
  std::vector<Tensor> velocity_;
};

// Rescales gradients to max_norm if they exceed it; no-op when max_norm <= 0.
inline void clip_grad_norm(ParameterMap& params, double max_norm) {
  if (max_norm <= 0.0) return;
  const double n = params.grad_norm();
  if (n > max_norm) params.scale_grads(max_norm / n);
}

}  // namespace e3marl::ad
