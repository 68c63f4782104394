#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "bevssl/error.hpp"

namespace bevssl {

using Shape = std::vector<std::size_t>;
using NodeId = std::size_t;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

class Tape;

// Dense row-major float64 array. Values are immutable and shared between
// copies; a tensor that lives on a tape also carries its node id.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)) {
    for (std::size_t d : shape_) {
      if (d == 0) throw ConfigError("tensor: zero-sized dimension in " + shape_str(shape_));
    }
    if (shape_.empty() || shape_size(shape_) != values.size()) {
      throw ConfigError("tensor: " + std::to_string(values.size()) + " values do not fill shape " +
                        shape_str(shape_));
    }
    data_ = std::make_shared<const std::vector<double>>(std::move(values));
  }

  static Tensor full(Shape shape, double value) {
    const std::size_t n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
  }
  static Tensor zeros(Shape shape) { return full(std::move(shape), 0.0); }
  static Tensor scalar(double value) { return Tensor({1}, {value}); }

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_ ? data_->size() : 0; }
  std::span<const double> values() const { return data_ ? std::span<const double>(*data_) : std::span<const double>(); }
  const double* data() const { return data_->data(); }
  double operator[](std::size_t i) const { return (*data_)[i]; }
  double item() const {
    if (size() != 1) throw ContractError("tensor: item() on a tensor of shape " + shape_str(shape_));
    return (*data_)[0];
  }

  bool requires_grad() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  std::optional<NodeId> node() const { return tape_ ? std::optional<NodeId>(node_) : std::nullopt; }

  // Same values, no tape reference.
  Tensor detach() const {
    Tensor t = *this;
    t.tape_ = nullptr;
    t.node_ = 0;
    return t;
  }

  bool same_values(const Tensor& other) const {
    return shape_ == other.shape_ && (data_ == other.data_ || *data_ == *other.data_);
  }

 private:
  friend class Tape;

  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
  Tape* tape_ = nullptr;
  NodeId node_ = 0;
};

enum class OpKind : std::uint8_t {
  leaf,
  add,
  sub,
  mul,
  matmul,
  conv2d,
  conv_transpose2d,
  relu,
  sigmoid,
  log,
  pow,
  mean,
  sum,
  scale,
  concat,
  slice,
  masked_fill,
  cosine_similarity,
};

inline const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::matmul: return "matmul";
    case OpKind::conv2d: return "conv2d";
    case OpKind::conv_transpose2d: return "conv_transpose2d";
    case OpKind::relu: return "relu";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::log: return "log";
    case OpKind::pow: return "pow";
    case OpKind::mean: return "mean";
    case OpKind::sum: return "sum";
    case OpKind::scale: return "scale";
    case OpKind::concat: return "concat";
    case OpKind::slice: return "slice";
    case OpKind::masked_fill: return "masked_fill";
    case OpKind::cosine_similarity: return "cosine_similarity";
  }
  return "?";
}

struct OpAttrs {
  std::size_t stride = 1;
  std::size_t padding = 0;
  double scalar = 0.0;  // scale factor, pow exponent, or fill value
  std::size_t axis = 0;
  std::size_t start = 0;
  std::size_t length = 0;
  // masked_fill: nonzero entries are filled; the mask covers the trailing
  // dimensions and repeats over the leading ones.
  std::shared_ptr<const std::vector<std::uint8_t>> mask;
};

struct TapeNode {
  OpKind kind = OpKind::leaf;
  std::vector<std::optional<NodeId>> inputs;
  std::vector<Tensor> saved;  // detached input values
  Tensor value;               // detached output value
  OpAttrs attrs;
  std::string name;  // leaves only
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor leaf(const Tensor& value, std::string name = {}) {
    TapeNode n;
    n.kind = OpKind::leaf;
    n.value = value.detach();
    n.name = std::move(name);
    nodes_.push_back(std::move(n));
    return attach(value, nodes_.size() - 1);
  }

  Tensor record(OpKind kind, const std::vector<Tensor>& inputs, const Tensor& output, OpAttrs attrs) {
    TapeNode n;
    n.kind = kind;
    n.attrs = std::move(attrs);
    for (const Tensor& in : inputs) {
      if (in.tape() != nullptr && in.tape() != this) {
        throw ContractError(std::string("tape: ") + op_name(kind) + " mixes tensors from different tapes");
      }
      n.inputs.push_back(in.node());
      n.saved.push_back(in.detach());
    }
    n.value = output.detach();
    nodes_.push_back(std::move(n));
    return attach(output, nodes_.size() - 1);
  }

  std::size_t size() const { return nodes_.size(); }
  const TapeNode& node(NodeId id) const { return nodes_.at(id); }

  // Reverse sweep from a scalar loss. Returns one gradient buffer per node;
  // nodes that do not influence the loss get an empty buffer.
  std::vector<std::vector<double>> gradients(const Tensor& loss) const;

  // Recomputes every node from the leaf values and saved constants.
  std::vector<std::vector<double>> replay() const;

 private:
  Tensor attach(const Tensor& t, NodeId id) {
    Tensor out = t;
    out.tape_ = this;
    out.node_ = id;
    return out;
  }

  std::vector<TapeNode> nodes_;
};

namespace detail {

struct ForwardResult {
  Shape shape;
  std::vector<double> values;
};

[[noreturn]] inline void shape_error(OpKind kind, const std::vector<Tensor>& in, const std::string& why) {
  std::string msg = std::string(op_name(kind)) + ": " + why + " (shapes";
  for (const Tensor& t : in) msg += " " + shape_str(t.shape());
  throw ConfigError(msg + ")");
}

inline double clamp_log_arg(double x) { return x < 1e-12 ? 1e-12 : x; }

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct ConvDims {
  std::size_t n, c, h, w, o, k, oh, ow, stride, pad;
};

inline ConvDims conv_dims(OpKind kind, const std::vector<Tensor>& in, const OpAttrs& a) {
  if (in.size() < 2 || in.size() > 3) shape_error(kind, in, "expects input, weight and optional bias");
  const Tensor& x = in[0];
  const Tensor& w = in[1];
  if (x.rank() != 4 || w.rank() != 4) shape_error(kind, in, "input and weight must be rank 4");
  if (w.dim(2) != w.dim(3)) shape_error(kind, in, "kernel must be square");
  if (a.stride == 0) shape_error(kind, in, "stride must be positive");
  ConvDims d{};
  d.n = x.dim(0);
  d.c = x.dim(1);
  d.h = x.dim(2);
  d.w = x.dim(3);
  d.k = w.dim(2);
  d.stride = a.stride;
  d.pad = a.padding;
  if (kind == OpKind::conv2d) {
    if (w.dim(1) != d.c) shape_error(kind, in, "weight input channels differ from input channels");
    d.o = w.dim(0);
    if (d.h + 2 * d.pad < d.k || d.w + 2 * d.pad < d.k) shape_error(kind, in, "kernel larger than padded input");
    d.oh = (d.h + 2 * d.pad - d.k) / d.stride + 1;
    d.ow = (d.w + 2 * d.pad - d.k) / d.stride + 1;
  } else {
    if (w.dim(0) != d.c) shape_error(kind, in, "weight input channels differ from input channels");
    if (d.pad != 0) shape_error(kind, in, "transposed convolution supports padding 0 only");
    d.o = w.dim(1);
    d.oh = (d.h - 1) * d.stride + d.k;
    d.ow = (d.w - 1) * d.stride + d.k;
  }
  if (in.size() == 3 && (in[2].rank() != 1 || in[2].dim(0) != d.o)) shape_error(kind, in, "bias must have one value per output channel");
  return d;
}

// Output columns ox with 0 <= ox*s + kx - p < w.
inline std::pair<std::size_t, std::size_t> valid_cols(std::size_t ow, std::size_t w, std::size_t s, std::size_t kx,
                                                      std::size_t p) {
  std::size_t lo = 0;
  if (kx < p) lo = (p - kx + s - 1) / s;
  // largest ox with ox*s + kx - p <= w - 1
  if (w - 1 + p < kx) return {0, 0};
  std::size_t hi = (w - 1 + p - kx) / s + 1;
  if (hi > ow) hi = ow;
  if (lo > hi) lo = hi;
  return {lo, hi};
}

inline void conv2d_forward(const ConvDims& d, const double* __restrict x, const double* __restrict w,
                           const double* bias, double* __restrict out) {
  const std::size_t s = d.stride, p = d.pad;
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t o = 0; o < d.o; ++o) {
      double* __restrict oplane = out + (n * d.o + o) * d.oh * d.ow;
      const double b = bias ? bias[o] : 0.0;
      for (std::size_t i = 0; i < d.oh * d.ow; ++i) oplane[i] = b;
      for (std::size_t c = 0; c < d.c; ++c) {
        const double* __restrict iplane = x + (n * d.c + c) * d.h * d.w;
        for (std::size_t ky = 0; ky < d.k; ++ky) {
          for (std::size_t kx = 0; kx < d.k; ++kx) {
            const double wv = w[((o * d.c + c) * d.k + ky) * d.k + kx];
            const auto [lo, hi] = valid_cols(d.ow, d.w, s, kx, p);
            for (std::size_t oy = 0; oy < d.oh; ++oy) {
              const std::size_t iy_p = oy * s + ky;
              if (iy_p < p || iy_p - p >= d.h) continue;
              const double* __restrict irow = iplane + (iy_p - p) * d.w;
              double* __restrict orow = oplane + oy * d.ow;
              if (s == 1) {
                for (std::size_t ox = lo; ox < hi; ++ox) orow[ox] += wv * irow[ox + kx - p];
              } else {
                for (std::size_t ox = lo; ox < hi; ++ox) orow[ox] += wv * irow[ox * s + kx - p];
              }
            }
          }
        }
      }
    }
  }
}

inline void conv2d_backward(const ConvDims& d, const double* __restrict x, const double* __restrict w,
                            const double* __restrict go, double* gx, double* gw, double* gb) {
  const std::size_t s = d.stride, p = d.pad;
  std::vector<double> acc(d.ow);
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t o = 0; o < d.o; ++o) {
      const double* __restrict gplane = go + (n * d.o + o) * d.oh * d.ow;
      if (gb) {
        double sum = 0.0;
        for (std::size_t i = 0; i < d.oh * d.ow; ++i) sum += gplane[i];
        gb[o] += sum;
      }
      for (std::size_t c = 0; c < d.c; ++c) {
        const double* __restrict iplane = x + (n * d.c + c) * d.h * d.w;
        double* __restrict gxplane = gx ? gx + (n * d.c + c) * d.h * d.w : nullptr;
        for (std::size_t ky = 0; ky < d.k; ++ky) {
          for (std::size_t kx = 0; kx < d.k; ++kx) {
            const std::size_t widx = ((o * d.c + c) * d.k + ky) * d.k + kx;
            const double wv = w[widx];
            const auto [lo, hi] = valid_cols(d.ow, d.w, s, kx, p);
            if (gw) std::fill(acc.begin(), acc.end(), 0.0);
            double* __restrict accp = acc.data();
            for (std::size_t oy = 0; oy < d.oh; ++oy) {
              const std::size_t iy_p = oy * s + ky;
              if (iy_p < p || iy_p - p >= d.h) continue;
              const double* __restrict grow = gplane + oy * d.ow;
              const std::size_t iy = iy_p - p;
              if (s == 1) {
                const double* __restrict irow = iplane + iy * d.w;
                if (gw) {
                  for (std::size_t ox = lo; ox < hi; ++ox) accp[ox] += grow[ox] * irow[ox + kx - p];
                }
                if (gxplane) {
                  double* __restrict gxrow = gxplane + iy * d.w;
                  for (std::size_t ox = lo; ox < hi; ++ox) gxrow[ox + kx - p] += wv * grow[ox];
                }
              } else {
                const double* __restrict irow = iplane + iy * d.w;
                double* __restrict gxrow = gxplane ? gxplane + iy * d.w : nullptr;
                for (std::size_t ox = lo; ox < hi; ++ox) {
                  const std::size_t ix = ox * s + kx - p;
                  if (gw) accp[ox] += grow[ox] * irow[ix];
                  if (gxrow) gxrow[ix] += wv * grow[ox];
                }
              }
            }
            if (gw) {
              double sum = 0.0;
              for (std::size_t ox = lo; ox < hi; ++ox) sum += accp[ox];
              gw[widx] += sum;
            }
          }
        }
      }
    }
  }
}

inline void conv_transpose2d_forward(const ConvDims& d, const double* __restrict x, const double* __restrict w,
                                     const double* bias, double* __restrict out) {
  const std::size_t s = d.stride;
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t o = 0; o < d.o; ++o) {
      double* oplane = out + (n * d.o + o) * d.oh * d.ow;
      const double b = bias ? bias[o] : 0.0;
      for (std::size_t i = 0; i < d.oh * d.ow; ++i) oplane[i] = b;
      for (std::size_t c = 0; c < d.c; ++c) {
        const double* iplane = x + (n * d.c + c) * d.h * d.w;
        for (std::size_t ky = 0; ky < d.k; ++ky) {
          for (std::size_t kx = 0; kx < d.k; ++kx) {
            const double wv = w[((c * d.o + o) * d.k + ky) * d.k + kx];
            for (std::size_t iy = 0; iy < d.h; ++iy) {
              double* orow = oplane + (iy * s + ky) * d.ow + kx;
              const double* irow = iplane + iy * d.w;
              for (std::size_t ix = 0; ix < d.w; ++ix) orow[ix * s] += wv * irow[ix];
            }
          }
        }
      }
    }
  }
}

inline void conv_transpose2d_backward(const ConvDims& d, const double* __restrict x, const double* __restrict w,
                                      const double* __restrict go, double* gx, double* gw, double* gb) {
  const std::size_t s = d.stride;
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t o = 0; o < d.o; ++o) {
      const double* gplane = go + (n * d.o + o) * d.oh * d.ow;
      if (gb) {
        double sum = 0.0;
        for (std::size_t i = 0; i < d.oh * d.ow; ++i) sum += gplane[i];
        gb[o] += sum;
      }
      for (std::size_t c = 0; c < d.c; ++c) {
        const double* iplane = x + (n * d.c + c) * d.h * d.w;
        double* gxplane = gx ? gx + (n * d.c + c) * d.h * d.w : nullptr;
        for (std::size_t ky = 0; ky < d.k; ++ky) {
          for (std::size_t kx = 0; kx < d.k; ++kx) {
            const std::size_t widx = ((c * d.o + o) * d.k + ky) * d.k + kx;
            const double wv = w[widx];
            double sum = 0.0;
            for (std::size_t iy = 0; iy < d.h; ++iy) {
              const double* grow = gplane + (iy * s + ky) * d.ow + kx;
              const double* irow = iplane + iy * d.w;
              for (std::size_t ix = 0; ix < d.w; ++ix) {
                sum += grow[ix * s] * irow[ix];
                if (gxplane) gxplane[iy * d.w + ix] += wv * grow[ix * s];
              }
            }
            if (gw) gw[widx] += sum;
          }
        }
      }
    }
  }
}

// Splits a shape around `axis` into (outer, axis length, inner).
inline void axis_split(const Shape& shape, std::size_t axis, std::size_t& outer, std::size_t& len, std::size_t& inner) {
  outer = 1;
  inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
}

inline std::size_t cosine_cells(const Shape& s) { return s[0] * s[2] * s[3]; }

inline ForwardResult forward(OpKind kind, const std::vector<Tensor>& in, const OpAttrs& a) {
  auto unary_check = [&] {
    if (in.size() != 1) shape_error(kind, in, "expects one input");
  };
  auto binary_same = [&] {
    if (in.size() != 2) shape_error(kind, in, "expects two inputs");
    if (in[0].shape() != in[1].shape()) shape_error(kind, in, "shape mismatch");
  };
  switch (kind) {
    case OpKind::leaf:
      throw ContractError("leaf has no forward rule");
    case OpKind::add:
    case OpKind::sub:
    case OpKind::mul: {
      binary_same();
      const std::size_t n = in[0].size();
      std::vector<double> out(n);
      const double* x = in[0].data();
      const double* y = in[1].data();
      if (kind == OpKind::add) {
        for (std::size_t i = 0; i < n; ++i) out[i] = x[i] + y[i];
      } else if (kind == OpKind::sub) {
        for (std::size_t i = 0; i < n; ++i) out[i] = x[i] - y[i];
      } else {
        for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * y[i];
      }
      return {in[0].shape(), std::move(out)};
    }
    case OpKind::matmul: {
      if (in.size() != 2 || in[0].rank() != 2 || in[1].rank() != 2 || in[0].dim(1) != in[1].dim(0)) {
        shape_error(kind, in, "expects [m,k] x [k,n]");
      }
      const std::size_t m = in[0].dim(0), k = in[0].dim(1), n = in[1].dim(1);
      std::vector<double> out(m * n, 0.0);
      const double* x = in[0].data();
      const double* y = in[1].data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
          const double xv = x[i * k + j];
          for (std::size_t c = 0; c < n; ++c) out[i * n + c] += xv * y[j * n + c];
        }
      }
      return {{m, n}, std::move(out)};
    }
    case OpKind::conv2d: {
      const ConvDims d = conv_dims(kind, in, a);
      std::vector<double> out(d.n * d.o * d.oh * d.ow);
      conv2d_forward(d, in[0].data(), in[1].data(), in.size() == 3 ? in[2].data() : nullptr, out.data());
      return {{d.n, d.o, d.oh, d.ow}, std::move(out)};
    }
    case OpKind::conv_transpose2d: {
      const ConvDims d = conv_dims(kind, in, a);
      std::vector<double> out(d.n * d.o * d.oh * d.ow);
      conv_transpose2d_forward(d, in[0].data(), in[1].data(), in.size() == 3 ? in[2].data() : nullptr, out.data());
      return {{d.n, d.o, d.oh, d.ow}, std::move(out)};
    }
    case OpKind::relu:
    case OpKind::sigmoid:
    case OpKind::log:
    case OpKind::pow:
    case OpKind::scale: {
      unary_check();
      const std::size_t n = in[0].size();
      const double* x = in[0].data();
      std::vector<double> out(n);
      switch (kind) {
        case OpKind::relu:
          for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
          break;
        case OpKind::sigmoid:
          for (std::size_t i = 0; i < n; ++i) out[i] = sigmoid(x[i]);
          break;
        case OpKind::log:
          for (std::size_t i = 0; i < n; ++i) out[i] = std::log(clamp_log_arg(x[i]));
          break;
        case OpKind::pow:
          if (a.scalar == 2.0) {
            for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * x[i];
          } else {
            for (std::size_t i = 0; i < n; ++i) out[i] = std::pow(x[i], a.scalar);
          }
          break;
        default:
          for (std::size_t i = 0; i < n; ++i) out[i] = a.scalar * x[i];
          break;
      }
      return {in[0].shape(), std::move(out)};
    }
    case OpKind::mean:
    case OpKind::sum: {
      unary_check();
      double s = 0.0;
      for (double v : in[0].values()) s += v;
      if (kind == OpKind::mean) s /= static_cast<double>(in[0].size());
      return {{1}, {s}};
    }
    case OpKind::concat: {
      if (in.empty()) shape_error(kind, in, "expects at least one input");
      const Shape& s0 = in[0].shape();
      if (a.axis >= s0.size()) shape_error(kind, in, "axis out of range");
      Shape out_shape = s0;
      out_shape[a.axis] = 0;
      for (const Tensor& t : in) {
        if (t.rank() != s0.size()) shape_error(kind, in, "rank mismatch");
        for (std::size_t i = 0; i < s0.size(); ++i) {
          if (i != a.axis && t.dim(i) != s0[i]) shape_error(kind, in, "non-concat dimensions differ");
        }
        out_shape[a.axis] += t.dim(a.axis);
      }
      std::size_t outer, len, inner;
      axis_split(out_shape, a.axis, outer, len, inner);
      std::vector<double> out(shape_size(out_shape));
      std::size_t offset = 0;
      for (const Tensor& t : in) {
        const std::size_t tl = t.dim(a.axis);
        for (std::size_t o = 0; o < outer; ++o) {
          const double* src = t.data() + o * tl * inner;
          std::copy(src, src + tl * inner, out.data() + (o * len + offset) * inner);
        }
        offset += tl;
      }
      return {out_shape, std::move(out)};
    }
    case OpKind::slice: {
      unary_check();
      const Shape& s0 = in[0].shape();
      if (a.axis >= s0.size() || a.length == 0 || a.start + a.length > s0[a.axis]) {
        shape_error(kind, in, "slice [" + std::to_string(a.start) + ", +" + std::to_string(a.length) +
                                  ") outside axis " + std::to_string(a.axis));
      }
      std::size_t outer, len, inner;
      axis_split(s0, a.axis, outer, len, inner);
      Shape out_shape = s0;
      out_shape[a.axis] = a.length;
      std::vector<double> out(shape_size(out_shape));
      for (std::size_t o = 0; o < outer; ++o) {
        const double* src = in[0].data() + (o * len + a.start) * inner;
        std::copy(src, src + a.length * inner, out.data() + o * a.length * inner);
      }
      return {out_shape, std::move(out)};
    }
    case OpKind::masked_fill: {
      unary_check();
      if (!a.mask || a.mask->empty() || in[0].size() % a.mask->size() != 0) {
        shape_error(kind, in, "mask size does not tile the input");
      }
      const std::size_t n = in[0].size(), m = a.mask->size();
      const double* x = in[0].data();
      const std::uint8_t* mk = a.mask->data();
      std::vector<double> out(n);
      for (std::size_t i = 0; i < n; ++i) out[i] = mk[i % m] ? a.scalar : x[i];
      return {in[0].shape(), std::move(out)};
    }
    case OpKind::cosine_similarity: {
      binary_same();
      if (in[0].rank() != 4) shape_error(kind, in, "expects [N,C,H,W] inputs");
      const Shape& s = in[0].shape();
      const std::size_t c = s[1], hw = s[2] * s[3];
      std::vector<double> out(cosine_cells(s));
      const double* x = in[0].data();
      const double* y = in[1].data();
      for (std::size_t n = 0; n < s[0]; ++n) {
        for (std::size_t i = 0; i < hw; ++i) {
          double dot = 0.0, xx = 0.0, yy = 0.0;
          for (std::size_t k = 0; k < c; ++k) {
            const double xv = x[(n * c + k) * hw + i], yv = y[(n * c + k) * hw + i];
            dot += xv * yv;
            xx += xv * xv;
            yy += yv * yv;
          }
          out[n * hw + i] = (xx > 0.0 && yy > 0.0) ? dot / std::sqrt(xx * yy) : 0.0;
        }
      }
      return {{s[0], 1, s[2], s[3]}, std::move(out)};
    }
  }
  throw ContractError("unknown op");
}

// Adds the gradient contributions of one node into the per-input buffers.
// A null buffer means that input does not need a gradient.
inline void backward(OpKind kind, const std::vector<Tensor>& in, const Tensor& out, const OpAttrs& a,
                     const std::vector<double>& go, std::vector<double*>& gin) {
  const std::size_t n_out = out.size();
  switch (kind) {
    case OpKind::leaf:
      return;
    case OpKind::add:
      for (std::size_t k = 0; k < 2; ++k) {
        if (gin[k]) {
          for (std::size_t i = 0; i < n_out; ++i) gin[k][i] += go[i];
        }
      }
      return;
    case OpKind::sub:
      if (gin[0]) {
        for (std::size_t i = 0; i < n_out; ++i) gin[0][i] += go[i];
      }
      if (gin[1]) {
        for (std::size_t i = 0; i < n_out; ++i) gin[1][i] -= go[i];
      }
      return;
    case OpKind::mul:
      if (gin[0]) {
        const double* y = in[1].data();
        for (std::size_t i = 0; i < n_out; ++i) gin[0][i] += go[i] * y[i];
      }
      if (gin[1]) {
        const double* x = in[0].data();
        for (std::size_t i = 0; i < n_out; ++i) gin[1][i] += go[i] * x[i];
      }
      return;
    case OpKind::matmul: {
      const std::size_t m = in[0].dim(0), k = in[0].dim(1), n = in[1].dim(1);
      const double* x = in[0].data();
      const double* y = in[1].data();
      if (gin[0]) {
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < k; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < n; ++c) s += go[i * n + c] * y[j * n + c];
            gin[0][i * k + j] += s;
          }
        }
      }
      if (gin[1]) {
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < k; ++j) {
            const double xv = x[i * k + j];
            for (std::size_t c = 0; c < n; ++c) gin[1][j * n + c] += xv * go[i * n + c];
          }
        }
      }
      return;
    }
    case OpKind::conv2d: {
      const ConvDims d = conv_dims(kind, in, a);
      conv2d_backward(d, in[0].data(), in[1].data(), go.data(), gin[0], gin[1], in.size() == 3 ? gin[2] : nullptr);
      return;
    }
    case OpKind::conv_transpose2d: {
      const ConvDims d = conv_dims(kind, in, a);
      conv_transpose2d_backward(d, in[0].data(), in[1].data(), go.data(), gin[0], gin[1],
                                in.size() == 3 ? gin[2] : nullptr);
      return;
    }
    case OpKind::relu: {
      if (!gin[0]) return;
      const double* x = in[0].data();
      for (std::size_t i = 0; i < n_out; ++i) gin[0][i] += x[i] > 0.0 ? go[i] : 0.0;
      return;
    }
    case OpKind::sigmoid: {
      if (!gin[0]) return;
      const double* y = out.data();
      for (std::size_t i = 0; i < n_out; ++i) gin[0][i] += go[i] * y[i] * (1.0 - y[i]);
      return;
    }
    case OpKind::log: {
      if (!gin[0]) return;
      const double* x = in[0].data();
      for (std::size_t i = 0; i < n_out; ++i) gin[0][i] += x[i] < 1e-12 ? 0.0 : go[i] / x[i];
      return;
    }
    case OpKind::pow: {
      if (!gin[0]) return;
      const double* x = in[0].data();
      const double e = a.scalar;
      if (e == 2.0) {
        for (std::size_t i = 0; i < n_out; ++i) gin[0][i] += go[i] * 2.0 * x[i];
      } else {
        for (std::size_t i = 0; i < n_out; ++i) gin[0][i] += go[i] * e * std::pow(x[i], e - 1.0);
      }
      return;
    }
    case OpKind::scale:
      if (gin[0]) {
        for (std::size_t i = 0; i < n_out; ++i) gin[0][i] += a.scalar * go[i];
      }
      return;
    case OpKind::mean:
    case OpKind::sum: {
      if (!gin[0]) return;
      const double g = kind == OpKind::mean ? go[0] / static_cast<double>(in[0].size()) : go[0];
      for (std::size_t i = 0; i < in[0].size(); ++i) gin[0][i] += g;
      return;
    }
    case OpKind::concat: {
      std::size_t outer, len, inner;
      axis_split(out.shape(), a.axis, outer, len, inner);
      std::size_t offset = 0;
      for (std::size_t k = 0; k < in.size(); ++k) {
        const std::size_t tl = in[k].dim(a.axis);
        if (gin[k]) {
          for (std::size_t o = 0; o < outer; ++o) {
            const double* src = go.data() + (o * len + offset) * inner;
            double* dst = gin[k] + o * tl * inner;
            for (std::size_t i = 0; i < tl * inner; ++i) dst[i] += src[i];
          }
        }
        offset += tl;
      }
      return;
    }
    case OpKind::slice: {
      if (!gin[0]) return;
      std::size_t outer, len, inner;
      axis_split(in[0].shape(), a.axis, outer, len, inner);
      for (std::size_t o = 0; o < outer; ++o) {
        const double* src = go.data() + o * a.length * inner;
        double* dst = gin[0] + (o * len + a.start) * inner;
        for (std::size_t i = 0; i < a.length * inner; ++i) dst[i] += src[i];
      }
      return;
    }
    case OpKind::masked_fill: {
      if (!gin[0]) return;
      const std::size_t m = a.mask->size();
      const std::uint8_t* mk = a.mask->data();
      for (std::size_t i = 0; i < n_out; ++i) {
        if (!mk[i % m]) gin[0][i] += go[i];
      }
      return;
    }
    case OpKind::cosine_similarity: {
      const Shape& s = in[0].shape();
      const std::size_t c = s[1], hw = s[2] * s[3];
      const double* x = in[0].data();
      const double* y = in[1].data();
      for (std::size_t n = 0; n < s[0]; ++n) {
        for (std::size_t i = 0; i < hw; ++i) {
          double dot = 0.0, xx = 0.0, yy = 0.0;
          for (std::size_t k = 0; k < c; ++k) {
            const double xv = x[(n * c + k) * hw + i], yv = y[(n * c + k) * hw + i];
            dot += xv * yv;
            xx += xv * xv;
            yy += yv * yv;
          }
          if (!(xx > 0.0 && yy > 0.0)) continue;
          const double g = go[n * hw + i];
          const double norm = std::sqrt(xx * yy);
          const double cosv = dot / norm;
          for (std::size_t k = 0; k < c; ++k) {
            const std::size_t idx = (n * c + k) * hw + i;
            if (gin[0]) gin[0][idx] += g * (y[idx] / norm - cosv * x[idx] / xx);
            if (gin[1]) gin[1][idx] += g * (x[idx] / norm - cosv * y[idx] / yy);
          }
        }
      }
      return;
    }
  }
}

}  // namespace detail

inline std::vector<std::vector<double>> Tape::gradients(const Tensor& loss) const {
  if (loss.tape() != this) throw ContractError("backward: loss is not recorded on this tape");
  if (loss.size() != 1) throw ContractError("backward: loss must be a single-element tensor, got " + shape_str(loss.shape()));
  std::vector<std::vector<double>> grads(nodes_.size());
  const NodeId root = *loss.node();
  grads[root].assign(1, 1.0);
  for (NodeId id = root + 1; id-- > 0;) {
    if (grads[id].empty()) continue;
    const TapeNode& n = nodes_[id];
    if (n.kind == OpKind::leaf) continue;
    std::vector<double*> gin(n.inputs.size(), nullptr);
    for (std::size_t k = 0; k < n.inputs.size(); ++k) {
      if (!n.inputs[k]) continue;
      auto& g = grads[*n.inputs[k]];
      if (g.empty()) g.assign(nodes_[*n.inputs[k]].value.size(), 0.0);
      gin[k] = g.data();
    }
    detail::backward(n.kind, n.saved, n.value, n.attrs, grads[id], gin);
  }
  return grads;
}

inline std::vector<std::vector<double>> Tape::replay() const {
  std::vector<Tensor> values(nodes_.size());
  for (NodeId id = 0; id < nodes_.size(); ++id) {
    const TapeNode& n = nodes_[id];
    if (n.kind == OpKind::leaf) {
      values[id] = n.value;
      continue;
    }
    std::vector<Tensor> in;
    in.reserve(n.inputs.size());
    for (std::size_t k = 0; k < n.inputs.size(); ++k) in.push_back(n.inputs[k] ? values[*n.inputs[k]] : n.saved[k]);
    auto r = detail::forward(n.kind, in, n.attrs);
    values[id] = Tensor(std::move(r.shape), std::move(r.values));
  }
  std::vector<std::vector<double>> out;
  out.reserve(values.size());
  for (const Tensor& t : values) out.emplace_back(t.values().begin(), t.values().end());
  return out;
}

// Primitive operations. Each result is recorded on the tape of its
// differentiable inputs; results of purely constant inputs are constants.
namespace op {

inline Tensor apply(OpKind kind, const std::vector<Tensor>& inputs, OpAttrs attrs = {}) {
  for (const Tensor& t : inputs) {
    if (!t.defined()) throw ContractError(std::string(op_name(kind)) + ": undefined input");
  }
  auto r = detail::forward(kind, inputs, attrs);
  Tape* tape = nullptr;
  for (const Tensor& t : inputs) {
    if (t.tape()) tape = t.tape();
  }
  for (std::size_t i = 0; i < r.values.size(); ++i) {
    if (!std::isfinite(r.values[i])) {
      std::string where = tape ? " at node " + std::to_string(tape->size()) : " (untracked)";
      throw NumericError(std::string(op_name(kind)) + ": non-finite output" + where);
    }
  }
  Tensor out(std::move(r.shape), std::move(r.values));
  if (!tape) return out;
  return tape->record(kind, inputs, out, std::move(attrs));
}

inline Tensor add(const Tensor& a, const Tensor& b) { return apply(OpKind::add, {a, b}); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return apply(OpKind::sub, {a, b}); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return apply(OpKind::mul, {a, b}); }
inline Tensor matmul(const Tensor& a, const Tensor& b) { return apply(OpKind::matmul, {a, b}); }

inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias = {}, std::size_t stride = 1,
                     std::size_t padding = 0) {
  OpAttrs a;
  a.stride = stride;
  a.padding = padding;
  if (bias.defined()) return apply(OpKind::conv2d, {x, w, bias}, a);
  return apply(OpKind::conv2d, {x, w}, a);
}

inline Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& bias = {}, std::size_t stride = 1) {
  OpAttrs a;
  a.stride = stride;
  if (bias.defined()) return apply(OpKind::conv_transpose2d, {x, w, bias}, a);
  return apply(OpKind::conv_transpose2d, {x, w}, a);
}

inline Tensor relu(const Tensor& x) { return apply(OpKind::relu, {x}); }
inline Tensor sigmoid(const Tensor& x) { return apply(OpKind::sigmoid, {x}); }
// Natural log with the argument clamped below at 1e-12.
inline Tensor log(const Tensor& x) { return apply(OpKind::log, {x}); }

inline Tensor pow(const Tensor& x, double exponent) {
  OpAttrs a;
  a.scalar = exponent;
  return apply(OpKind::pow, {x}, a);
}

inline Tensor scale(const Tensor& x, double factor) {
  OpAttrs a;
  a.scalar = factor;
  return apply(OpKind::scale, {x}, a);
}

inline Tensor mean(const Tensor& x) { return apply(OpKind::mean, {x}); }
inline Tensor sum(const Tensor& x) { return apply(OpKind::sum, {x}); }

inline Tensor concat(const std::vector<Tensor>& xs, std::size_t axis) {
  OpAttrs a;
  a.axis = axis;
  return apply(OpKind::concat, xs, a);
}

inline Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  OpAttrs a;
  a.axis = axis;
  a.start = start;
  a.length = length;
  return apply(OpKind::slice, {x}, a);
}

inline Tensor masked_fill(const Tensor& x, std::vector<std::uint8_t> mask, double value = 0.0) {
  OpAttrs a;
  a.scalar = value;
  a.mask = std::make_shared<const std::vector<std::uint8_t>>(std::move(mask));
  return apply(OpKind::masked_fill, {x}, a);
}

// Cosine similarity of the channel vectors of two [N,C,H,W] tensors, giving
// [N,1,H,W]. Cells where either vector is zero yield 0.
inline Tensor cosine_similarity(const Tensor& a, const Tensor& b) { return apply(OpKind::cosine_similarity, {a, b}); }

}  // namespace op

}  // namespace bevssl
