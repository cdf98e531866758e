#include "bdd/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "bdd/errors.hpp"

namespace bdd {

namespace {

using detail::make_op;
using detail::Node;

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                         " vs " + shape_to_string(b.shape()));
  }
}

// Splits a shape into outer * len * inner around one axis.
struct AxisLayout {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;

  std::size_t at(std::size_t o, std::size_t k, std::size_t i) const {
    return (o * len + k) * inner + i;
  }
};

AxisLayout layout_for(const Shape& shape, int axis) {
  const int rank = static_cast<int>(shape.size());
  const int a = axis < 0 ? axis + rank : axis;
  if (rank == 0 || a < 0 || a >= rank) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_to_string(shape));
  }
  AxisLayout l;
  for (int i = 0; i < a; ++i) l.outer *= shape[i];
  l.len = shape[a];
  for (int i = a + 1; i < rank; ++i) l.inner *= shape[i];
  return l;
}

void check_tau(double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw ParameterError("temperature must be positive, got " + std::to_string(tau));
  }
}

}  // namespace

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.dim() != 2 || w.dim() != 2 || b.dim() != 1 || x.extent(1) != w.extent(0) ||
      b.extent(0) != w.extent(1)) {
    throw DimensionError("affine: incompatible shapes x" + shape_to_string(x.shape()) + " W" +
                         shape_to_string(w.shape()) + " b" + shape_to_string(b.shape()));
  }
  const std::size_t rows = x.extent(0), in = w.extent(0), out = w.extent(1);
  std::vector<double> y(rows * out);
  const auto xv = x.values(), wv = w.values(), bv = b.values();
  for (std::size_t i = 0; i < rows; ++i) {
    double* yi = &y[i * out];
    std::copy(bv.begin(), bv.end(), yi);
    for (std::size_t k = 0; k < in; ++k) {
      const double xik = xv[i * in + k];
      const double* wk = &wv[k * out];
      for (std::size_t j = 0; j < out; ++j) yi[j] += xik * wk[j];
    }
  }
  return make_op("affine", {rows, out}, std::move(y), {x, w, b},
                 [rows, in, out](Node& self) {
                   Node& xn = *self.inputs[0];
                   Node& wn = *self.inputs[1];
                   Node& bn = *self.inputs[2];
                   const auto& g = self.grad;
                   if (xn.requires_grad) {
                     xn.ensure_grad();
                     for (std::size_t i = 0; i < rows; ++i)
                       for (std::size_t k = 0; k < in; ++k) {
                         double acc = 0.0;
                         for (std::size_t j = 0; j < out; ++j)
                           acc += g[i * out + j] * wn.values[k * out + j];
                         xn.grad[i * in + k] += acc;
                       }
                   }
                   if (wn.requires_grad) {
                     wn.ensure_grad();
                     for (std::size_t i = 0; i < rows; ++i)
                       for (std::size_t k = 0; k < in; ++k) {
                         const double xik = xn.values[i * in + k];
                         for (std::size_t j = 0; j < out; ++j)
                           wn.grad[k * out + j] += xik * g[i * out + j];
                       }
                   }
                   if (bn.requires_grad) {
                     bn.ensure_grad();
                     for (std::size_t i = 0; i < rows; ++i)
                       for (std::size_t j = 0; j < out; ++j) bn.grad[j] += g[i * out + j];
                   }
                 });
}

Tensor relu(const Tensor& x) {
  std::vector<double> y(x.values().begin(), x.values().end());
  for (double& v : y) v = v > 0.0 ? v : 0.0;
  return make_op("relu", x.shape(), std::move(y), {x}, [](Node& self) {
    Node& xn = *self.inputs[0];
    xn.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (xn.values[i] > 0.0) xn.grad[i] += self.grad[i];
  });
}

Tensor softmax_tau(const Tensor& z, double tau, int axis) {
  check_tau(tau);
  const AxisLayout l = layout_for(z.shape(), axis);
  const auto zv = z.values();
  std::vector<double> p(zv.size());
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t i = 0; i < l.inner; ++i) {
      double peak = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < l.len; ++k) peak = std::max(peak, zv[l.at(o, k, i)] / tau);
      double total = 0.0;
      for (std::size_t k = 0; k < l.len; ++k) {
        const std::size_t idx = l.at(o, k, i);
        p[idx] = std::exp(zv[idx] / tau - peak);
        total += p[idx];
      }
      for (std::size_t k = 0; k < l.len; ++k) p[l.at(o, k, i)] /= total;
    }
  }
  return make_op("softmax_tau", z.shape(), std::move(p), {z}, [l, tau](Node& self) {
    Node& zn = *self.inputs[0];
    zn.ensure_grad();
    const auto& p = self.values;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < l.outer; ++o) {
      for (std::size_t i = 0; i < l.inner; ++i) {
        double dot = 0.0;
        for (std::size_t k = 0; k < l.len; ++k) dot += g[l.at(o, k, i)] * p[l.at(o, k, i)];
        for (std::size_t k = 0; k < l.len; ++k) {
          const std::size_t idx = l.at(o, k, i);
          zn.grad[idx] += p[idx] * (g[idx] - dot) / tau;
        }
      }
    }
  });
}

Tensor log_softmax_tau(const Tensor& z, double tau, int axis) {
  check_tau(tau);
  const AxisLayout l = layout_for(z.shape(), axis);
  const auto zv = z.values();
  std::vector<double> out(zv.size());
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t i = 0; i < l.inner; ++i) {
      double peak = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < l.len; ++k) peak = std::max(peak, zv[l.at(o, k, i)] / tau);
      double total = 0.0;
      for (std::size_t k = 0; k < l.len; ++k) total += std::exp(zv[l.at(o, k, i)] / tau - peak);
      const double lse = peak + std::log(total);
      for (std::size_t k = 0; k < l.len; ++k) {
        const std::size_t idx = l.at(o, k, i);
        out[idx] = zv[idx] / tau - lse;
      }
    }
  }
  return make_op("log_softmax_tau", z.shape(), std::move(out), {z}, [l, tau](Node& self) {
    Node& zn = *self.inputs[0];
    zn.ensure_grad();
    const auto& g = self.grad;
    for (std::size_t o = 0; o < l.outer; ++o) {
      for (std::size_t i = 0; i < l.inner; ++i) {
        double gsum = 0.0;
        for (std::size_t k = 0; k < l.len; ++k) gsum += g[l.at(o, k, i)];
        for (std::size_t k = 0; k < l.len; ++k) {
          const std::size_t idx = l.at(o, k, i);
          zn.grad[idx] += (g[idx] - std::exp(self.values[idx]) * gsum) / tau;
        }
      }
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] + b[i];
  return make_op("add", a.shape(), std::move(y), {a, b}, [](Node& self) {
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      in->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) in->grad[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] - b[i];
  return make_op("sub", a.shape(), std::move(y), {a, b}, [](Node& self) {
    Node& an = *self.inputs[0];
    Node& bn = *self.inputs[1];
    if (an.requires_grad) {
      an.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) an.grad[i] += self.grad[i];
    }
    if (bn.requires_grad) {
      bn.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) bn.grad[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] * b[i];
  return make_op("mul", a.shape(), std::move(y), {a, b}, [](Node& self) {
    Node& an = *self.inputs[0];
    Node& bn = *self.inputs[1];
    if (an.requires_grad) {
      an.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) an.grad[i] += self.grad[i] * bn.values[i];
    }
    if (bn.requires_grad) {
      bn.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) bn.grad[i] += self.grad[i] * an.values[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> y(a.values().begin(), a.values().end());
  for (double& v : y) v *= factor;
  return make_op("scale", a.shape(), std::move(y), {a}, [factor](Node& self) {
    Node& an = *self.inputs[0];
    an.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) an.grad[i] += self.grad[i] * factor;
  });
}

Tensor log_clamped(const Tensor& x, double floor) {
  if (floor < 0.0) throw ParameterError("log_clamped: negative floor");
  std::vector<double> y(x.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::log(std::max(x[i], floor));
  return make_op("log_clamped", x.shape(), std::move(y), {x}, [floor](Node& self) {
    Node& xn = *self.inputs[0];
    xn.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (xn.values[i] > floor) xn.grad[i] += self.grad[i] / xn.values[i];
  });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  return make_op("sum", {1}, {total}, {x}, [](Node& self) {
    Node& xn = *self.inputs[0];
    xn.ensure_grad();
    for (double& g : xn.grad) g += self.grad[0];
  });
}

Tensor sum_last(const Tensor& x) {
  if (x.dim() == 0) throw DimensionError("sum_last: rank-0 tensor");
  const std::size_t len = x.shape().back();
  const std::size_t rows = len == 0 ? 0 : x.numel() / len;
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  if (out_shape.empty()) out_shape = {1};
  std::vector<double> y(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < len; ++k) y[r] += x[r * len + k];
  return make_op("sum_last", std::move(out_shape), std::move(y), {x}, [len](Node& self) {
    Node& xn = *self.inputs[0];
    xn.ensure_grad();
    for (std::size_t r = 0; r < self.grad.size(); ++r)
      for (std::size_t k = 0; k < len; ++k) xn.grad[r * len + k] += self.grad[r];
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_to_string(x.shape()) + " as " +
                         shape_to_string(shape));
  }
  std::vector<double> y(x.values().begin(), x.values().end());
  return make_op("reshape", std::move(shape), std::move(y), {x}, [](Node& self) {
    Node& xn = *self.inputs[0];
    xn.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) xn.grad[i] += self.grad[i];
  });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const Shape& in_shape = x.shape();
  const std::size_t rank = in_shape.size();
  std::vector<bool> seen(rank, false);
  if (axes.size() != rank) {
    throw DimensionError("permute: " + std::to_string(axes.size()) + " axes for shape " +
                         shape_to_string(in_shape));
  }
  for (std::size_t a : axes) {
    if (a >= rank || seen[a]) throw DimensionError("permute: invalid axis list");
    seen[a] = true;
  }
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = in_shape[axes[i]];

  std::vector<std::size_t> in_stride(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_stride[i - 1] = in_stride[i] * in_shape[i];

  // source[i] is the input offset of output element i.
  const std::size_t n = x.numel();
  std::vector<std::size_t> source(n);
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t off = 0;
    for (std::size_t d = 0; d < rank; ++d) off += idx[d] * in_stride[axes[d]];
    source[flat] = off;
    for (std::size_t d = rank; d-- > 0;) {
      if (++idx[d] < out_shape[d]) break;
      idx[d] = 0;
    }
  }
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = x[source[i]];
  return make_op("permute", std::move(out_shape), std::move(y), {x},
                 [source = std::move(source)](Node& self) {
                   Node& xn = *self.inputs[0];
                   xn.ensure_grad();
                   for (std::size_t i = 0; i < source.size(); ++i)
                     xn.grad[source[i]] += self.grad[i];
                 });
}

}  // namespace bdd
