#include "hcrn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace hcrn::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

thread_local CostCounters g_counters;
thread_local CostCategory g_category = CostCategory::kOther;

void charge(std::uint64_t macs) { g_counters.macs[static_cast<int>(g_category)] += macs; }

Tape* recording_tape(std::initializer_list<const Tensor*> inputs) {
  auto* tape = Tape::active();
  if (tape == nullptr) return nullptr;
  for (const auto* t : inputs) {
    if (t->defined() && t->requires_grad()) return tape;
  }
  return nullptr;
}

Tape* recording_tape(std::span<const Tensor> inputs) {
  auto* tape = Tape::active();
  if (tape == nullptr) return nullptr;
  for (const auto& t : inputs) {
    if (t.requires_grad()) return tape;
  }
  return nullptr;
}

Tensor make_output(Shape shape, std::vector<double> data, Tape* tape) {
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->data.assign(data.begin(), data.end());
  node->requires_grad = tape != nullptr;
  return Tensor(std::move(node));
}

void require_defined(const Tensor& t, const char* op, const char* what) {
  if (!t.defined()) throw ShapeError(std::string(op) + ": " + what + " is undefined");
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

void check_axis(const Tensor& x, std::size_t axis, const char* op) {
  if (axis >= x.rank()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for shape " +
                     to_string(x.shape()));
  }
}

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> st(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) st[i - 1] = st[i] * shape[i];
  return st;
}

// For every flat index of `out`, the flat offset of the element of `in` that
// broadcasts onto it. Ranks are equal and every extent of `in` is 1 or matches.
std::vector<std::size_t> broadcast_offsets(const Shape& in, const Shape& out) {
  const auto rank = out.size();
  auto in_strides = strides_of(in);
  for (std::size_t i = 0; i < rank; ++i) {
    if (in[i] == 1 && out[i] != 1) in_strides[i] = 0;
  }
  std::vector<std::size_t> offsets(numel(out));
  std::vector<std::size_t> idx(rank, 0);
  std::size_t off = 0;
  for (std::size_t flat = 0; flat < offsets.size(); ++flat) {
    offsets[flat] = off;
    for (std::size_t a = rank; a-- > 0;) {
      if (++idx[a] < out[a]) {
        off += in_strides[a];
        break;
      }
      off -= in_strides[a] * (out[a] - 1);
      idx[a] = 0;
    }
  }
  return offsets;
}

Shape broadcast_shape(const Tensor& x, const Tensor& y, const char* op) {
  if (x.rank() != y.rank()) {
    throw ShapeError(std::string(op) + ": rank mismatch between " + to_string(x.shape()) + " and " +
                     to_string(y.shape()));
  }
  Shape out(x.rank());
  for (std::size_t i = 0; i < x.rank(); ++i) {
    auto a = x.shape()[i];
    auto b = y.shape()[i];
    if (a != b && a != 1 && b != 1) {
      throw ShapeError(std::string(op) + ": shapes " + to_string(x.shape()) + " and " +
                       to_string(y.shape()) + " are not broadcastable");
    }
    out[i] = std::max(a, b);
  }
  return out;
}

enum class BinaryKind { kAdd, kSub, kMul };

Tensor binary(const Tensor& x, const Tensor& y, BinaryKind kind, const char* op) {
  require_defined(x, op, "lhs");
  require_defined(y, op, "rhs");
  auto out_shape = broadcast_shape(x, y, op);
  const auto n = numel(out_shape);
  const bool same = x.shape() == y.shape();
  std::vector<std::size_t> xo;
  std::vector<std::size_t> yo;
  if (!same) {
    xo = broadcast_offsets(x.shape(), out_shape);
    yo = broadcast_offsets(y.shape(), out_shape);
  }
  auto xd = x.data();
  auto yd = y.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double a = same ? xd[i] : xd[xo[i]];
    double b = same ? yd[i] : yd[yo[i]];
    switch (kind) {
      case BinaryKind::kAdd: out[i] = a + b; break;
      case BinaryKind::kSub: out[i] = a - b; break;
      case BinaryKind::kMul: out[i] = a * b; break;
    }
  }
  auto* tape = recording_tape({&x, &y});
  auto result = make_output(out_shape, std::move(out), tape);
  if (tape) {
    tape->record(op, result.node(),
                 [xn = x.node(), yn = y.node(), xo = std::move(xo), yo = std::move(yo), same,
                  kind](std::span<const double> g) {
                   const auto n = g.size();
                   if (xn->requires_grad) {
                     auto& gx = xn->ensure_grad();
                     for (std::size_t i = 0; i < n; ++i) {
                       double v = kind == BinaryKind::kMul ? g[i] * (same ? yn->data[i] : yn->data[yo[i]]) : g[i];
                       gx[same ? i : xo[i]] += v;
                     }
                   }
                   if (yn->requires_grad) {
                     auto& gy = yn->ensure_grad();
                     for (std::size_t i = 0; i < n; ++i) {
                       double v;
                       switch (kind) {
                         case BinaryKind::kAdd: v = g[i]; break;
                         case BinaryKind::kSub: v = -g[i]; break;
                         default: v = g[i] * (same ? xn->data[i] : xn->data[xo[i]]); break;
                       }
                       gy[same ? i : yo[i]] += v;
                     }
                   }
                 });
  }
  return result;
}

}  // namespace

CostCounters& cost_counters() { return g_counters; }
void reset_cost_counters() { g_counters = CostCounters{}; }

CostScope::CostScope(CostCategory category) : previous_(g_category) { g_category = category; }
CostScope::~CostScope() { g_category = previous_; }

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_defined(x, "linear", "input");
  require_defined(w, "linear", "weight");
  if (w.rank() != 2 || x.rank() == 0 || x.shape().back() != w.shape()[0]) {
    throw ShapeError("linear: input " + to_string(x.shape()) + " incompatible with weight " +
                     to_string(w.shape()));
  }
  const auto m = w.shape()[0];
  const auto n = w.shape()[1];
  if (b.defined() && (b.rank() != 1 || b.shape()[0] != n)) {
    throw ShapeError("linear: bias " + to_string(b.shape()) + " incompatible with weight " +
                     to_string(w.shape()));
  }
  const auto rows = x.numel() / m;
  Shape out_shape = x.shape();
  out_shape.back() = n;
  std::vector<double> out(rows * n);
  {
    ConstMap xm(x.data().data(), rows, m);
    ConstMap wm(w.data().data(), m, n);
    MutMap om(out.data(), rows, n);
    om.noalias() = xm * wm;
    if (b.defined()) {
      Eigen::Map<const Eigen::RowVectorXd> bv(b.data().data(), n);
      om.rowwise() += bv;
    }
  }
  charge(static_cast<std::uint64_t>(rows) * m * n);
  auto* tape = recording_tape({&x, &w, &b});
  auto result = make_output(std::move(out_shape), std::move(out), tape);
  if (tape) {
    tape->record("linear", result.node(),
                 [xn = x.node(), wn = w.node(), bn = b.defined() ? b.node() : nullptr, rows, m,
                  n](std::span<const double> g) {
                   ConstMap gm(g.data(), rows, n);
                   if (xn->requires_grad) {
                     MutMap gx(xn->ensure_grad().data(), rows, m);
                     gx.noalias() += gm * ConstMap(wn->data.data(), m, n).transpose();
                   }
                   if (wn->requires_grad) {
                     MutMap gw(wn->ensure_grad().data(), m, n);
                     gw.noalias() += ConstMap(xn->data.data(), rows, m).transpose() * gm;
                   }
                   if (bn && bn->requires_grad) {
                     Eigen::Map<Eigen::RowVectorXd> gb(bn->ensure_grad().data(), n);
                     gb += gm.colwise().sum();
                   }
                 });
  }
  return result;
}

Tensor apply_activation(const Tensor& x, Activation kind) {
  require_defined(x, "activation", "input");
  auto xd = x.data();
  std::vector<double> out(xd.size());
  switch (kind) {
    case Activation::kElu:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] > 0.0 ? xd[i] : std::expm1(xd[i]);
      break;
    case Activation::kSigmoid:
      for (std::size_t i = 0; i < out.size(); ++i) {
        double v = xd[i];
        out[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
      }
      break;
    case Activation::kTanh:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(xd[i]);
      break;
    case Activation::kRelu:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] > 0.0 ? xd[i] : 0.0;
      break;
  }
  auto* tape = recording_tape({&x});
  auto result = make_output(x.shape(), std::move(out), tape);
  if (tape) {
    static constexpr const char* kNames[] = {"elu", "sigmoid", "tanh", "relu"};
    tape->record(kNames[static_cast<int>(kind)], result.node(),
                 [xn = x.node(), on = std::weak_ptr<TensorNode>(result.node()),
                  kind](std::span<const double> g) {
                   if (!xn->requires_grad) return;
                   auto out_node = on.lock();
                   const auto& y = out_node->data;
                   auto& gx = xn->ensure_grad();
                   for (std::size_t i = 0; i < g.size(); ++i) {
                     double d = 0.0;
                     switch (kind) {
                       case Activation::kElu: d = xn->data[i] > 0.0 ? 1.0 : y[i] + 1.0; break;
                       case Activation::kSigmoid: d = y[i] * (1.0 - y[i]); break;
                       case Activation::kTanh: d = 1.0 - y[i] * y[i]; break;
                       case Activation::kRelu: d = xn->data[i] > 0.0 ? 1.0 : 0.0; break;
                     }
                     gx[i] += g[i] * d;
                   }
                 });
  }
  return result;
}

Tensor elu(const Tensor& x) { return apply_activation(x, Activation::kElu); }
Tensor sigmoid(const Tensor& x) { return apply_activation(x, Activation::kSigmoid); }
Tensor tanh(const Tensor& x) { return apply_activation(x, Activation::kTanh); }
Tensor relu(const Tensor& x) { return apply_activation(x, Activation::kRelu); }

namespace {

Tensor softmax_impl(const Tensor& x, std::size_t axis, bool log_space) {
  const char* op = log_space ? "log_softmax" : "softmax";
  require_defined(x, op, "input");
  check_axis(x, axis, op);
  const auto s = split_at(x.shape(), axis);
  auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.len * s.inner + in;
      double mx = xd[base];
      for (std::size_t l = 1; l < s.len; ++l) mx = std::max(mx, xd[base + l * s.inner]);
      double z = 0.0;
      for (std::size_t l = 0; l < s.len; ++l) z += std::exp(xd[base + l * s.inner] - mx);
      const double log_z = std::log(z);
      for (std::size_t l = 0; l < s.len; ++l) {
        const auto k = base + l * s.inner;
        out[k] = log_space ? xd[k] - mx - log_z : std::exp(xd[k] - mx) / z;
      }
    }
  }
  auto* tape = recording_tape({&x});
  auto result = make_output(x.shape(), std::move(out), tape);
  if (tape) {
    tape->record(op, result.node(),
                 [xn = x.node(), on = std::weak_ptr<TensorNode>(result.node()), s,
                  log_space](std::span<const double> g) {
                   if (!xn->requires_grad) return;
                   const auto& y = on.lock()->data;
                   auto& gx = xn->ensure_grad();
                   for (std::size_t o = 0; o < s.outer; ++o) {
                     for (std::size_t in = 0; in < s.inner; ++in) {
                       const std::size_t base = o * s.len * s.inner + in;
                       double acc = 0.0;
                       for (std::size_t l = 0; l < s.len; ++l) {
                         const auto k = base + l * s.inner;
                         acc += log_space ? g[k] : g[k] * y[k];
                       }
                       for (std::size_t l = 0; l < s.len; ++l) {
                         const auto k = base + l * s.inner;
                         gx[k] += log_space ? g[k] - std::exp(y[k]) * acc : y[k] * (g[k] - acc);
                       }
                     }
                   }
                 });
  }
  return result;
}

}  // namespace

Tensor softmax(const Tensor& x, std::size_t axis) { return softmax_impl(x, axis, false); }
Tensor log_softmax(const Tensor& x, std::size_t axis) { return softmax_impl(x, axis, true); }

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no parts");
  for (const auto& p : parts) require_defined(p, "concat", "part");
  const auto& ref = parts.front().shape();
  if (axis >= ref.size()) {
    throw ShapeError("concat: axis " + std::to_string(axis) + " invalid for shape " + to_string(ref));
  }
  Shape out_shape = ref;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const auto& sh = p.shape();
    bool ok = sh.size() == ref.size();
    for (std::size_t i = 0; ok && i < sh.size(); ++i) ok = i == axis || sh[i] == ref[i];
    if (!ok) {
      throw ShapeError("concat: ragged shapes " + to_string(ref) + " and " + to_string(sh) +
                       " along axis " + std::to_string(axis));
    }
    out_shape[axis] += sh[axis];
  }
  const auto s = split_at(out_shape, axis);
  std::vector<std::size_t> chunk(parts.size());
  for (std::size_t p = 0; p < parts.size(); ++p) chunk[p] = parts[p].shape()[axis] * s.inner;
  std::vector<double> out(numel(out_shape));
  std::size_t pos = 0;
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t p = 0; p < parts.size(); ++p) {
      auto src = parts[p].data().subspan(o * chunk[p], chunk[p]);
      std::copy(src.begin(), src.end(), out.begin() + pos);
      pos += chunk[p];
    }
  }
  auto* tape = recording_tape(parts);
  auto result = make_output(std::move(out_shape), std::move(out), tape);
  if (tape) {
    std::vector<std::shared_ptr<TensorNode>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    tape->record("concat", result.node(),
                 [nodes = std::move(nodes), chunk = std::move(chunk), outer = s.outer](std::span<const double> g) {
                   std::size_t pos = 0;
                   for (std::size_t o = 0; o < outer; ++o) {
                     for (std::size_t p = 0; p < nodes.size(); ++p) {
                       if (nodes[p]->requires_grad) {
                         auto& gp = nodes[p]->ensure_grad();
                         for (std::size_t i = 0; i < chunk[p]; ++i) gp[o * chunk[p] + i] += g[pos + i];
                       }
                       pos += chunk[p];
                     }
                   }
                 });
  }
  return result;
}

Tensor stack(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("stack: no parts");
  std::vector<Tensor> lifted;
  lifted.reserve(parts.size());
  for (const auto& p : parts) {
    require_defined(p, "stack", "part");
    if (p.shape() != parts.front().shape()) {
      throw ShapeError("stack: shapes " + to_string(parts.front().shape()) + " and " + to_string(p.shape()) +
                       " differ");
    }
    Shape s{1};
    s.insert(s.end(), p.shape().begin(), p.shape().end());
    lifted.push_back(reshape(p, std::move(s)));
  }
  return concat(lifted, 0);
}

Tensor reduce_mean(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("reduce_mean: empty list");
  const auto& ref = parts.front();
  require_defined(ref, "reduce_mean", "part");
  for (const auto& p : parts) {
    require_defined(p, "reduce_mean", "part");
    if (p.shape() != ref.shape()) {
      throw ShapeError("reduce_mean: shapes " + to_string(ref.shape()) + " and " + to_string(p.shape()) +
                       " differ");
    }
  }
  const auto n = ref.numel();
  const double inv = 1.0 / static_cast<double>(parts.size());
  std::vector<double> out(n, 0.0);
  for (const auto& p : parts) {
    auto d = p.data();
    for (std::size_t i = 0; i < n; ++i) out[i] += d[i];
  }
  for (auto& v : out) v *= inv;
  charge(static_cast<std::uint64_t>(n) * parts.size());
  auto* tape = recording_tape(parts);
  auto result = make_output(ref.shape(), std::move(out), tape);
  if (tape) {
    std::vector<std::shared_ptr<TensorNode>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    tape->record("reduce_mean", result.node(), [nodes = std::move(nodes), inv](std::span<const double> g) {
      for (const auto& node : nodes) {
        if (!node->requires_grad) continue;
        auto& gp = node->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i] * inv;
      }
    });
  }
  return result;
}

Tensor add(const Tensor& x, const Tensor& y) { return binary(x, y, BinaryKind::kAdd, "add"); }
Tensor sub(const Tensor& x, const Tensor& y) { return binary(x, y, BinaryKind::kSub, "sub"); }
Tensor hadamard(const Tensor& x, const Tensor& y) { return binary(x, y, BinaryKind::kMul, "hadamard"); }

Tensor scale(const Tensor& x, double factor) {
  require_defined(x, "scale", "input");
  std::vector<double> out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= factor;
  auto* tape = recording_tape({&x});
  auto result = make_output(x.shape(), std::move(out), tape);
  if (tape) {
    tape->record("scale", result.node(), [xn = x.node(), factor](std::span<const double> g) {
      if (!xn->requires_grad) return;
      auto& gx = xn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
    });
  }
  return result;
}

Tensor log(const Tensor& x) {
  require_defined(x, "log", "input");
  std::vector<double> out(x.data().begin(), x.data().end());
  for (auto& v : out) {
    if (!(v > 0.0)) throw std::domain_error("log: non-positive input " + std::to_string(v));
    v = std::log(v);
  }
  auto* tape = recording_tape({&x});
  auto result = make_output(x.shape(), std::move(out), tape);
  if (tape) {
    tape->record("log", result.node(), [xn = x.node()](std::span<const double> g) {
      if (!xn->requires_grad) return;
      auto& gx = xn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / xn->data[i];
    });
  }
  return result;
}

Tensor add_scalar(const Tensor& x, double value) {
  require_defined(x, "add_scalar", "input");
  std::vector<double> out(x.data().begin(), x.data().end());
  for (auto& v : out) v += value;
  auto* tape = recording_tape({&x});
  auto result = make_output(x.shape(), std::move(out), tape);
  if (tape) {
    tape->record("add_scalar", result.node(), [xn = x.node()](std::span<const double> g) {
      if (xn->requires_grad) xn->accumulate_grad(g);
    });
  }
  return result;
}

Tensor sum(const Tensor& x) {
  require_defined(x, "sum", "input");
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  auto* tape = recording_tape({&x});
  auto result = make_output({}, {acc}, tape);
  if (tape) {
    tape->record("sum", result.node(), [xn = x.node()](std::span<const double> g) {
      if (!xn->requires_grad) return;
      auto& gx = xn->ensure_grad();
      for (auto& v : gx) v += g[0];
    });
  }
  return result;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor sum_axis(const Tensor& x, std::size_t axis) {
  require_defined(x, "sum_axis", "input");
  check_axis(x, axis, "sum_axis");
  const auto s = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  auto xd = x.data();
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t l = 0; l < s.len; ++l) {
      const auto* src = xd.data() + (o * s.len + l) * s.inner;
      auto* dst = out.data() + o * s.inner;
      for (std::size_t in = 0; in < s.inner; ++in) dst[in] += src[in];
    }
  }
  auto* tape = recording_tape({&x});
  auto result = make_output(std::move(out_shape), std::move(out), tape);
  if (tape) {
    tape->record("sum_axis", result.node(), [xn = x.node(), s](std::span<const double> g) {
      if (!xn->requires_grad) return;
      auto& gx = xn->ensure_grad();
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t l = 0; l < s.len; ++l) {
          auto* dst = gx.data() + (o * s.len + l) * s.inner;
          const auto* src = g.data() + o * s.inner;
          for (std::size_t in = 0; in < s.inner; ++in) dst[in] += src[in];
        }
      }
    });
  }
  return result;
}

Tensor mean_axis(const Tensor& x, std::size_t axis) {
  check_axis(x, axis, "mean_axis");
  return scale(sum_axis(x, axis), 1.0 / static_cast<double>(x.shape()[axis]));
}

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined(x, "reshape", "input");
  if (numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  auto* tape = recording_tape({&x});
  auto result = make_output(std::move(shape), std::move(out), tape);
  if (tape) {
    tape->record("reshape", result.node(), [xn = x.node()](std::span<const double> g) {
      if (xn->requires_grad) xn->accumulate_grad(g);
    });
  }
  return result;
}

Tensor permute(const Tensor& x, std::span<const std::size_t> axes) {
  require_defined(x, "permute", "input");
  const auto rank = x.rank();
  std::vector<bool> seen(rank, false);
  bool valid = axes.size() == rank;
  for (std::size_t i = 0; valid && i < rank; ++i) {
    valid = axes[i] < rank && !seen[axes[i]];
    if (valid) seen[axes[i]] = true;
  }
  if (!valid) throw ShapeError("permute: invalid axis permutation for shape " + to_string(x.shape()));
  Shape out_shape(rank);
  const auto in_strides = strides_of(x.shape());
  std::vector<std::size_t> src_strides(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = x.shape()[axes[i]];
    src_strides[i] = in_strides[axes[i]];
  }
  const auto n = x.numel();
  std::vector<std::size_t> src(n);
  {
    std::vector<std::size_t> idx(rank, 0);
    std::size_t off = 0;
    for (std::size_t flat = 0; flat < n; ++flat) {
      src[flat] = off;
      for (std::size_t a = rank; a-- > 0;) {
        if (++idx[a] < out_shape[a]) {
          off += src_strides[a];
          break;
        }
        off -= src_strides[a] * (out_shape[a] - 1);
        idx[a] = 0;
      }
    }
  }
  auto xd = x.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = xd[src[i]];
  auto* tape = recording_tape({&x});
  auto result = make_output(std::move(out_shape), std::move(out), tape);
  if (tape) {
    tape->record("permute", result.node(), [xn = x.node(), src = std::move(src)](std::span<const double> g) {
      if (!xn->requires_grad) return;
      auto& gx = xn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[src[i]] += g[i];
    });
  }
  return result;
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  require_defined(x, "slice", "input");
  check_axis(x, axis, "slice");
  if (begin >= end || end > x.shape()[axis]) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") invalid for extent " + std::to_string(x.shape()[axis]));
  }
  const auto s = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  const auto width = (end - begin) * s.inner;
  auto xd = x.data();
  std::vector<double> out(s.outer * width);
  for (std::size_t o = 0; o < s.outer; ++o) {
    auto src = xd.subspan((o * s.len + begin) * s.inner, width);
    std::copy(src.begin(), src.end(), out.begin() + static_cast<std::ptrdiff_t>(o * width));
  }
  auto* tape = recording_tape({&x});
  auto result = make_output(std::move(out_shape), std::move(out), tape);
  if (tape) {
    tape->record("slice", result.node(), [xn = x.node(), s, begin, width](std::span<const double> g) {
      if (!xn->requires_grad) return;
      auto& gx = xn->ensure_grad();
      for (std::size_t o = 0; o < s.outer; ++o) {
        auto* dst = gx.data() + (o * s.len + begin) * s.inner;
        for (std::size_t i = 0; i < width; ++i) dst[i] += g[o * width + i];
      }
    });
  }
  return result;
}

Tensor expand(const Tensor& x, const Shape& shape) {
  require_defined(x, "expand", "input");
  bool ok = x.rank() == shape.size();
  for (std::size_t i = 0; ok && i < shape.size(); ++i) ok = x.shape()[i] == shape[i] || x.shape()[i] == 1;
  if (!ok) throw ShapeError("expand: cannot broadcast " + to_string(x.shape()) + " to " + to_string(shape));
  auto offsets = broadcast_offsets(x.shape(), shape);
  auto xd = x.data();
  std::vector<double> out(offsets.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[offsets[i]];
  auto* tape = recording_tape({&x});
  auto result = make_output(shape, std::move(out), tape);
  if (tape) {
    tape->record("expand", result.node(), [xn = x.node(), offsets = std::move(offsets)](std::span<const double> g) {
      if (!xn->requires_grad) return;
      auto& gx = xn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[offsets[i]] += g[i];
    });
  }
  return result;
}

Tensor embedding(const Tensor& table, std::span<const std::int64_t> ids) {
  require_defined(table, "embedding", "table");
  if (table.rank() != 2) throw ShapeError("embedding: table must be rank 2, got " + to_string(table.shape()));
  if (ids.empty()) throw ShapeError("embedding: empty id sequence");
  const auto vocab = table.shape()[0];
  const auto width = table.shape()[1];
  std::vector<std::size_t> rows(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw std::out_of_range("embedding: token id " + std::to_string(ids[i]) + " outside vocabulary of " +
                              std::to_string(vocab));
    }
    rows[i] = static_cast<std::size_t>(ids[i]);
  }
  auto td = table.data();
  std::vector<double> out(ids.size() * width);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(td.begin() + static_cast<std::ptrdiff_t>(rows[i] * width), width,
                out.begin() + static_cast<std::ptrdiff_t>(i * width));
  }
  auto* tape = recording_tape({&table});
  auto result = make_output({ids.size(), width}, std::move(out), tape);
  if (tape) {
    tape->record("embedding", result.node(),
                 [tn = table.node(), rows = std::move(rows), width](std::span<const double> g) {
                   if (!tn->requires_grad) return;
                   auto& gt = tn->ensure_grad();
                   for (std::size_t i = 0; i < rows.size(); ++i) {
                     for (std::size_t j = 0; j < width; ++j) gt[rows[i] * width + j] += g[i * width + j];
                   }
                 });
  }
  return result;
}

Tensor pick(const Tensor& x, std::span<const std::size_t> index) {
  require_defined(x, "pick", "input");
  if (x.rank() != 2 || x.shape()[0] != index.size()) {
    throw ShapeError("pick: input " + to_string(x.shape()) + " incompatible with " +
                     std::to_string(index.size()) + " indices");
  }
  const auto width = x.shape()[1];
  auto xd = x.data();
  std::vector<double> out(index.size());
  std::vector<std::size_t> flat(index.size());
  for (std::size_t b = 0; b < index.size(); ++b) {
    if (index[b] >= width) {
      throw std::out_of_range("pick: index " + std::to_string(index[b]) + " outside extent " +
                              std::to_string(width));
    }
    flat[b] = b * width + index[b];
    out[b] = xd[flat[b]];
  }
  auto* tape = recording_tape({&x});
  auto result = make_output({index.size()}, std::move(out), tape);
  if (tape) {
    tape->record("pick", result.node(), [xn = x.node(), flat = std::move(flat)](std::span<const double> g) {
      if (!xn->requires_grad) return;
      auto& gx = xn->ensure_grad();
      for (std::size_t b = 0; b < flat.size(); ++b) gx[flat[b]] += g[b];
    });
  }
  return result;
}

}  // namespace hcrn::ops
