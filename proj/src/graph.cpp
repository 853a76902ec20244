#include "phijack/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "phijack/kernels.hpp"
#include "phijack/rng.hpp"

namespace phijack {

namespace {
const kern::Ops& K() { return kern::ops(); }

void transpose_into(const double* a, int rows, int cols, std::vector<double>& out) {
  out.resize(static_cast<size_t>(rows) * cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) out[static_cast<size_t>(j) * rows + i] = a[static_cast<size_t>(i) * cols + j];
}
}  // namespace

const char* op_kind_name(OpKind k) {
  switch (k) {
    case OpKind::Leaf: return "leaf";
    case OpKind::MatMul: return "matmul";
    case OpKind::MatMulNT: return "matmul_nt";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::AddScalar: return "add_scalar";
    case OpKind::AddRowVec: return "add_rowvec";
    case OpKind::SoftmaxRows: return "softmax_rows";
    case OpKind::LayerNormRows: return "layernorm_rows";
    case OpKind::L2NormalizeRows: return "l2normalize_rows";
    case OpKind::RowwiseDot: return "rowwise_dot";
    case OpKind::SliceCols: return "slice_cols";
    case OpKind::ConcatCols: return "concat_cols";
    case OpKind::GatherRows: return "gather_rows";
    case OpKind::GatherFlat: return "gather_flat";
    case OpKind::Transpose: return "transpose";
    case OpKind::TopkRowMean: return "topk_row_mean";
    case OpKind::SumAll: return "sum_all";
    case OpKind::MeanAll: return "mean_all";
    case OpKind::DotAll: return "dot_all";
    case OpKind::ComposePatch: return "compose_patch";
    case OpKind::XentRows: return "xent_rows";
  }
  return "?";
}

int Graph::check(Value v) const {
  if (!v.valid() || v.id >= static_cast<int>(nodes_.size())) {
    fail(ErrorKind::Capability, "invalid graph value handle");
  }
  return v.id;
}

void Graph::check_finite(const Node& n, const double* data, size_t len, const char* phase) const {
  // cheap screen first: NaN/Inf propagate through the sum
  if (std::isfinite(K().sum(data, len))) return;
  for (size_t i = 0; i < len; ++i) {
    if (!std::isfinite(data[i])) {
      fail(ErrorKind::Numeric, std::string("non-finite value in ") + phase + " of op '" +
                                   op_kind_name(n.kind) + "' (node " +
                                   std::to_string(&n - nodes_.data()) + ", element " +
                                   std::to_string(i) + ")");
    }
  }
  fail(ErrorKind::Numeric, std::string("non-finite reduction in ") + phase + " of op '" +
                               op_kind_name(n.kind) + "'");
}

Value Graph::leaf(const double* data, int rows, int cols, bool requires_grad) {
  Node n;
  n.kind = OpKind::Leaf;
  n.rows = rows;
  n.cols = cols;
  n.ext = data;
  n.requires_grad = requires_grad;
  check_finite(n, data, n.len(), "forward");
  nodes_.push_back(std::move(n));
  return Value{static_cast<int>(nodes_.size()) - 1};
}

Value Graph::constant_copy(std::vector<double> data, int rows, int cols) {
  if (data.size() != static_cast<size_t>(rows) * cols) {
    fail(ErrorKind::Shape, "constant_copy: data length does not match shape");
  }
  Node n;
  n.kind = OpKind::Leaf;
  n.rows = rows;
  n.cols = cols;
  n.val = std::move(data);
  check_finite(n, n.val.data(), n.len(), "forward");
  nodes_.push_back(std::move(n));
  return Value{static_cast<int>(nodes_.size()) - 1};
}

Graph::Node& Graph::make(OpKind kind, int rows, int cols, std::initializer_list<Value> ins) {
  Node n;
  n.kind = kind;
  n.rows = rows;
  n.cols = cols;
  for (Value v : ins) {
    int id = check(v);
    n.in[n.nin++] = id;
    n.requires_grad = n.requires_grad || nodes_[id].requires_grad;
  }
  nodes_.push_back(std::move(n));
  return nodes_.back();
}

// Appends the node, runs the op, validates output.
#define PHIJACK_FINISH(nref)                                   \
  do {                                                         \
    Node& n_ = (nref);                                         \
    n_.val.resize(n_.len());                                   \
    run_forward(n_, n_.val.data());                            \
    check_finite(n_, n_.val.data(), n_.len(), "forward");      \
  } while (0)

Value Graph::matmul(Value a, Value b) {
  const Node& na = nodes_[check(a)];
  const Node& nb = nodes_[check(b)];
  if (na.cols != nb.rows) {
    fail(ErrorKind::Shape, "matmul: inner dimensions " + std::to_string(na.cols) + " vs " +
                               std::to_string(nb.rows));
  }
  Node& n = make(OpKind::MatMul, na.rows, nb.cols, {a, b});
  PHIJACK_FINISH(n);
  return Value{static_cast<int>(nodes_.size()) - 1};
}

Value Graph::matmul_nt(Value a, Value b) {
  const Node& na = nodes_[check(a)];
  const Node& nb = nodes_[check(b)];
  if (na.cols != nb.cols) {
    fail(ErrorKind::Shape, "matmul_nt: shared dimension " + std::to_string(na.cols) + " vs " +
                               std::to_string(nb.cols));
  }
  Node& n = make(OpKind::MatMulNT, na.rows, nb.rows, {a, b});
  PHIJACK_FINISH(n);
  return Value{static_cast<int>(nodes_.size()) - 1};
}

namespace {
void require_same_shape(const char* what, int ar, int ac, int br, int bc) {
  if (ar != br || ac != bc) {
    fail(ErrorKind::Shape, std::string(what) + ": shapes " + std::to_string(ar) + "x" +
                               std::to_string(ac) + " vs " + std::to_string(br) + "x" +
                               std::to_string(bc));
  }
}
}  // namespace

Value Graph::add(Value a, Value b) {
  const Node& na = nodes_[check(a)];
  const Node& nb = nodes_[check(b)];
  require_same_shape("add", na.rows, na.cols, nb.rows, nb.cols);
  Node& n = make(OpKind::Add, na.rows, na.cols, {a, b});
  PHIJACK_FINISH(n);
  return Value{static_cast<int>(nodes_.size()) - 1};
}

Value Graph::sub(Value a, Value b) {
  const Node& na = nodes_[check(a)];
  const Node& nb = nodes_[check(b)];
  require_same_shape("sub", na.rows, na.cols, nb.rows, nb.cols);
  Node& n = make(OpKind::Sub, na.rows, na.cols, {a, b});
  PHIJACK_FINISH(n);
  return Value{static_cast<int>(nodes_.size()) - 1};
}

Value Graph::mul(Value a, Value b) {
  const Node& na = nodes_[check(a)];
  const Node& nb = nodes_[check(b)];
  require_same_shape("mul", na.rows, na.cols, nb.rows, nb.cols);
  Node& n = make(OpKind::Mul, na.rows, na.cols, {a, b});
  PHIJACK_FINISH(n);
  return Value{static_cast<int>(nodes_.size()) - 1};
}

Value Graph::scale(Value a, double c) {
  const Node& na = nodes_[check(a)];
  Node& n = make(OpKind::Scale, na.rows, na.cols, {a});
  n.p0 = c;
  PHIJACK_FINISH(n);
  return Value{static_cast<int>(nodes_.size()) - 1};
}

Value Graph::add_scalar(Value a, double c) {
  const Node& na = nodes_[check(a)];
  Node& n = make(OpKind::AddScalar, na.rows, na.cols, {a});
  n.p0 = c;
  PHIJACK_FINISH(n);
  return Value{static_cast<int>(nodes_.size()) - 1};
}

Value Graph::add_rowvec(Value a, Value row) {
  const Node& na = nodes_[check(a)];
  const Node& nr = nodes_[check(row)];
  if (nr.rows != 1 || nr.cols != na.cols) {
    fail(ErrorKind::Shape, "add_rowvec: row vector must be 1x" + std::to_string(na.cols));
  }
  Node& n = make(OpKind::AddRowVec, na.rows, na.cols, {a, row});
  PHIJACK_FINISH(n);
  return Value{static_cast<int>(nodes_.size()) - 1};
}

Value Graph::softmax_rows(Value a) {
  const Node& na = nodes_[check(a)];
  Node& n = make(OpKind::SoftmaxRows, na.rows, na.cols, {a});
  PHIJACK_FINISH(n);
  return Value{static_cast<int>(nodes_.size()) - 1};
}

Value Graph::layernorm_rows(Value x, Value gamma, Value beta, double eps) {
  const Node& nx = nodes_[check(x)];
  const Node& ng = nodes_[check(gamma)];
  const Node& nb = nodes_[check(beta)];
  if (ng.rows != 1 || ng.cols != nx.cols || nb.rows != 1 || nb.cols != nx.cols) {
    fail(ErrorKind::Shape, "layernorm_rows: gamma/beta must be 1x" + std::to_string(nx.cols));
  }
  Node& n = make(OpKind::LayerNormRows, nx.rows, nx.cols, {x, gamma, beta});
  n.p0 = eps;
  PHIJACK_FINISH(n);
  return Value{static_cast<int>(nodes_.size()) - 1};
}

Value Graph::l2normalize_rows(Value x, double eps) {
  const Node& nx = nodes_[check(x)];
  Node& n = make(OpKind::L2NormalizeRows, nx.rows, nx.cols, {x});
  n.p0 = eps;
  PHIJACK_FINISH(n);
  return Value{static_cast<int>(nodes_.size()) - 1};
}

Value Graph::rowwise_dot(Value a, Value b) {
  const Node& na = nodes_[check(a)];
  const Node& nb = nodes_[check(b)];
  require_same_shape("rowwise_dot", na.rows, na.cols, nb.rows, nb.cols);
  Node& n = make(OpKind::RowwiseDot, na.rows, 1, {a, b});
  PHIJACK_FINISH(n);
  return Value{static_cast<int>(nodes_.size()) - 1};
}

Value Graph::slice_cols(Value a, int col0, int width) {
  const Node& na = nodes_[check(a)];
  if (col0 < 0 || width <= 0 || col0 + width > na.cols) {
    fail(ErrorKind::Shape, "slice_cols: range out of bounds");
  }
  Node& n = make(OpKind::SliceCols, na.rows, width, {a});
  n.i0 = col0;
  n.i1 = width;
  PHIJACK_FINISH(n);
  return Value{static_cast<int>(nodes_.size()) - 1};
}

Value Graph::concat_cols(const std::vector<Value>& parts) {
  if (parts.empty() || parts.size() > 8) {
    fail(ErrorKind::Capability, "concat_cols supports 1..8 inputs");
  }
  int rows = nodes_[check(parts[0])].rows;
  int total = 0;
  for (Value v : parts) {
    const Node& nv = nodes_[check(v)];
    if (nv.rows != rows) fail(ErrorKind::Shape, "concat_cols: row counts differ");
    total += nv.cols;
  }
  Node n;
  n.kind = OpKind::ConcatCols;
  n.rows = rows;
  n.cols = total;
  for (Value v : parts) {
    n.in[n.nin++] = v.id;
    n.requires_grad = n.requires_grad || nodes_[v.id].requires_grad;
  }
  nodes_.push_back(std::move(n));
  PHIJACK_FINISH(nodes_.back());
  return Value{static_cast<int>(nodes_.size()) - 1};
}

Value Graph::gather_rows(Value a, std::vector<int> indices) {
  const Node& na = nodes_[check(a)];
  if (indices.empty()) fail(ErrorKind::Domain, "gather_rows: empty index set");
  for (int i : indices) {
    if (i < 0 || i >= na.rows) fail(ErrorKind::Shape, "gather_rows: index out of range");
  }
  Node& n = make(OpKind::GatherRows, static_cast<int>(indices.size()), na.cols, {a});
  n.aux_i = std::move(indices);
  PHIJACK_FINISH(n);
  return Value{static_cast<int>(nodes_.size()) - 1};
}

Value Graph::gather_flat(Value a, std::vector<int> indices, int rows, int cols) {
  const Node& na = nodes_[check(a)];
  if (indices.size() != static_cast<size_t>(rows) * cols) {
    fail(ErrorKind::Shape, "gather_flat: index count does not match output shape");
  }
  const int limit = na.rows * na.cols;
  for (int i : indices) {
    if (i < 0 || i >= limit) fail(ErrorKind::Shape, "gather_flat: index out of range");
  }
  Node& n = make(OpKind::GatherFlat, rows, cols, {a});
  n.aux_i = std::move(indices);
  PHIJACK_FINISH(n);
  return Value{static_cast<int>(nodes_.size()) - 1};
}

Value Graph::transpose(Value a) {
  const Node& na = nodes_[check(a)];
  Node& n = make(OpKind::Transpose, na.cols, na.rows, {a});
  PHIJACK_FINISH(n);
  return Value{static_cast<int>(nodes_.size()) - 1};
}

Value Graph::topk_row_mean(Value a, int k) {
  const Node& na = nodes_[check(a)];
  if (k < 1 || k > na.cols) {
    fail(ErrorKind::Domain, "topk_row_mean: k must lie in [1, cols]");
  }
  Node& n = make(OpKind::TopkRowMean, na.rows, 1, {a});
  n.i0 = k;
  PHIJACK_FINISH(n);
  return Value{static_cast<int>(nodes_.size()) - 1};
}

Value Graph::sum_all(Value a) {
  Node& n = make(OpKind::SumAll, 1, 1, {a});
  PHIJACK_FINISH(n);
  return Value{static_cast<int>(nodes_.size()) - 1};
}

Value Graph::mean_all(Value a) {
  Node& n = make(OpKind::MeanAll, 1, 1, {a});
  PHIJACK_FINISH(n);
  return Value{static_cast<int>(nodes_.size()) - 1};
}

Value Graph::dot_all(Value a, Value b) {
  const Node& na = nodes_[check(a)];
  const Node& nb = nodes_[check(b)];
  require_same_shape("dot_all", na.rows, na.cols, nb.rows, nb.cols);
  Node& n = make(OpKind::DotAll, 1, 1, {a, b});
  PHIJACK_FINISH(n);
  return Value{static_cast<int>(nodes_.size()) - 1};
}

Value Graph::compose_patch(Value image, Value patch, int img_h, int img_w, int side,
                           int anchor_row, int anchor_col) {
  const Node& ni = nodes_[check(image)];
  const Node& np = nodes_[check(patch)];
  if (ni.len() != static_cast<size_t>(img_h) * img_w * 3) {
    fail(ErrorKind::Shape, "compose_patch: image length mismatch");
  }
  if (np.len() != static_cast<size_t>(side) * side * 3) {
    fail(ErrorKind::Shape, "compose_patch: patch length mismatch");
  }
  if (anchor_row < 0 || anchor_col < 0 || anchor_row + side > img_h || anchor_col + side > img_w) {
    fail(ErrorKind::Placement, "compose_patch: rectangle outside image bounds");
  }
  Node& n = make(OpKind::ComposePatch, img_h * img_w * 3, 1, {image, patch});
  n.aux_i = {img_h, img_w, side, anchor_row, anchor_col};
  PHIJACK_FINISH(n);
  return Value{static_cast<int>(nodes_.size()) - 1};
}

Value Graph::xent_rows(Value logits, std::vector<int> targets, std::vector<uint8_t> allowed,
                       std::vector<double> row_weights) {
  const Node& nl = nodes_[check(logits)];
  const size_t m = static_cast<size_t>(nl.rows);
  const size_t kcls = static_cast<size_t>(nl.cols);
  if (targets.size() != m || allowed.size() != m * kcls || row_weights.size() != m) {
    fail(ErrorKind::Shape, "xent_rows: targets/mask/weights do not match logits shape");
  }
  for (size_t i = 0; i < m; ++i) {
    if (targets[i] >= static_cast<int>(kcls)) fail(ErrorKind::Shape, "xent_rows: target out of range");
  }
  Node& n = make(OpKind::XentRows, 1, 1, {logits});
  n.aux_i = std::move(targets);
  n.aux_b = std::move(allowed);
  n.aux_d = std::move(row_weights);
  PHIJACK_FINISH(n);
  return Value{static_cast<int>(nodes_.size()) - 1};
}

std::span<const double> Graph::val(Value v) const {
  const Node& n = nodes_[check(v)];
  return {n.data(), n.len()};
}

double Graph::scalar_value(Value v) const {
  const Node& n = nodes_[check(v)];
  if (n.len() != 1) fail(ErrorKind::Shape, "scalar_value on a non-scalar node");
  return n.data()[0];
}

std::span<const double> Graph::grad(Value v) const {
  const Node& n = nodes_[check(v)];
  if (n.grad.empty()) fail(ErrorKind::State, "gradient not computed for this node");
  return {n.grad.data(), n.grad.size()};
}

bool Graph::has_grad(Value v) const { return !nodes_[check(v)].grad.empty(); }

void Graph::clear() {
  nodes_.clear();
}

// --- forward --------------------------------------------------------------

void Graph::run_forward(Node& n, double* out) {
  const auto in = [&](int slot) -> const Node& { return nodes_[n.in[slot]]; };
  switch (n.kind) {
    case OpKind::Leaf:
      break;
    case OpKind::MatMul: {
      const Node& a = in(0);
      const Node& b = in(1);
      K().matmul(a.data(), b.data(), out, a.rows, a.cols, b.cols);
      break;
    }
    case OpKind::MatMulNT: {
      const Node& a = in(0);
      const Node& b = in(1);
      transpose_into(b.data(), b.rows, b.cols, scratch_);
      K().matmul(a.data(), scratch_.data(), out, a.rows, a.cols, b.rows);
      break;
    }
    case OpKind::Add:
      K().add(in(0).data(), in(1).data(), out, n.len());
      break;
    case OpKind::Sub:
      K().sub(in(0).data(), in(1).data(), out, n.len());
      break;
    case OpKind::Mul:
      K().mul(in(0).data(), in(1).data(), out, n.len());
      break;
    case OpKind::Scale:
      K().scale(n.p0, in(0).data(), out, n.len());
      break;
    case OpKind::AddScalar: {
      const double* a = in(0).data();
      for (size_t i = 0; i < n.len(); ++i) out[i] = a[i] + n.p0;
      break;
    }
    case OpKind::AddRowVec: {
      const Node& a = in(0);
      const double* r = in(1).data();
      for (int i = 0; i < a.rows; ++i) {
        K().add(a.data() + static_cast<size_t>(i) * a.cols, r, out + static_cast<size_t>(i) * a.cols,
                a.cols);
      }
      break;
    }
    case OpKind::SoftmaxRows: {
      const Node& a = in(0);
      const int c = a.cols;
      for (int i = 0; i < a.rows; ++i) {
        const double* x = a.data() + static_cast<size_t>(i) * c;
        double* y = out + static_cast<size_t>(i) * c;
        double mx = x[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, x[j]);
        for (int j = 0; j < c; ++j) y[j] = x[j] - mx;
        K().exp_vec(y, y, c);
        const double s = K().sum(y, c);
        K().scale(1.0 / s, y, y, c);
      }
      break;
    }
    case OpKind::LayerNormRows: {
      const Node& x = in(0);
      const double* g = in(1).data();
      const double* b = in(2).data();
      const int c = x.cols;
      n.aux_d.resize(static_cast<size_t>(x.rows) * (c + 1));
      double* xhat_store = n.aux_d.data();
      double* inv_store = n.aux_d.data() + static_cast<size_t>(x.rows) * c;
      for (int i = 0; i < x.rows; ++i) {
        const double* xr = x.data() + static_cast<size_t>(i) * c;
        double* xh = xhat_store + static_cast<size_t>(i) * c;
        double* y = out + static_cast<size_t>(i) * c;
        const double mu = K().sum(xr, c) / c;
        double var = 0.0;
        for (int j = 0; j < c; ++j) {
          const double d = xr[j] - mu;
          var += d * d;
        }
        var /= c;
        const double inv = 1.0 / std::sqrt(var + n.p0);
        inv_store[i] = inv;
        for (int j = 0; j < c; ++j) {
          xh[j] = (xr[j] - mu) * inv;
          y[j] = g[j] * xh[j] + b[j];
        }
      }
      break;
    }
    case OpKind::L2NormalizeRows: {
      const Node& x = in(0);
      const int c = x.cols;
      n.aux_d.resize(x.rows);
      for (int i = 0; i < x.rows; ++i) {
        const double* xr = x.data() + static_cast<size_t>(i) * c;
        const double nrm = std::sqrt(K().dot(xr, xr, c));
        n.aux_d[i] = nrm;
        K().scale(1.0 / (nrm + n.p0), xr, out + static_cast<size_t>(i) * c, c);
      }
      break;
    }
    case OpKind::RowwiseDot: {
      const Node& a = in(0);
      const Node& b = in(1);
      for (int i = 0; i < a.rows; ++i) {
        out[i] = K().dot(a.data() + static_cast<size_t>(i) * a.cols,
                         b.data() + static_cast<size_t>(i) * a.cols, a.cols);
      }
      break;
    }
    case OpKind::SliceCols: {
      const Node& a = in(0);
      for (int i = 0; i < a.rows; ++i) {
        std::memcpy(out + static_cast<size_t>(i) * n.cols,
                    a.data() + static_cast<size_t>(i) * a.cols + n.i0,
                    static_cast<size_t>(n.cols) * sizeof(double));
      }
      break;
    }
    case OpKind::ConcatCols: {
      int off = 0;
      for (int s = 0; s < n.nin; ++s) {
        const Node& p = nodes_[n.in[s]];
        for (int i = 0; i < p.rows; ++i) {
          std::memcpy(out + static_cast<size_t>(i) * n.cols + off,
                      p.data() + static_cast<size_t>(i) * p.cols,
                      static_cast<size_t>(p.cols) * sizeof(double));
        }
        off += p.cols;
      }
      break;
    }
    case OpKind::GatherRows: {
      const Node& a = in(0);
      for (size_t i = 0; i < n.aux_i.size(); ++i) {
        std::memcpy(out + i * a.cols, a.data() + static_cast<size_t>(n.aux_i[i]) * a.cols,
                    static_cast<size_t>(a.cols) * sizeof(double));
      }
      break;
    }
    case OpKind::GatherFlat: {
      const double* a = in(0).data();
      for (size_t i = 0; i < n.aux_i.size(); ++i) out[i] = a[n.aux_i[i]];
      break;
    }
    case OpKind::Transpose: {
      const Node& a = in(0);
      for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < a.cols; ++j)
          out[static_cast<size_t>(j) * a.rows + i] = a.data()[static_cast<size_t>(i) * a.cols + j];
      break;
    }
    case OpKind::TopkRowMean: {
      const Node& a = in(0);
      const int c = a.cols;
      const int k = n.i0;
      n.aux_i.assign(static_cast<size_t>(a.rows) * k, 0);
      std::vector<int> order(c);
      for (int i = 0; i < a.rows; ++i) {
        const double* x = a.data() + static_cast<size_t>(i) * c;
        std::iota(order.begin(), order.end(), 0);
        // descending value, ties broken by lower column index
        std::stable_sort(order.begin(), order.end(),
                         [&](int l, int r) { return x[l] > x[r]; });
        double acc = 0.0;
        for (int j = 0; j < k; ++j) {
          n.aux_i[static_cast<size_t>(i) * k + j] = order[j];
          acc += x[order[j]];
        }
        out[i] = acc / k;
      }
      break;
    }
    case OpKind::SumAll:
      out[0] = K().sum(in(0).data(), in(0).len());
      break;
    case OpKind::MeanAll:
      out[0] = K().sum(in(0).data(), in(0).len()) / static_cast<double>(in(0).len());
      break;
    case OpKind::DotAll:
      out[0] = K().dot(in(0).data(), in(1).data(), in(0).len());
      break;
    case OpKind::ComposePatch: {
      const Node& img = in(0);
      const double* p = in(1).data();
      const int w = n.aux_i[1], side = n.aux_i[2], r0 = n.aux_i[3], c0 = n.aux_i[4];
      std::memcpy(out, img.data(), img.len() * sizeof(double));
      for (int r = 0; r < side; ++r) {
        for (int c = 0; c < side; ++c) {
          const size_t dst = (static_cast<size_t>(r0 + r) * w + (c0 + c)) * 3;
          const size_t src = (static_cast<size_t>(r) * side + c) * 3;
          out[dst] = p[src];
          out[dst + 1] = p[src + 1];
          out[dst + 2] = p[src + 2];
        }
      }
      break;
    }
    case OpKind::XentRows: {
      const Node& l = in(0);
      const int c = l.cols;
      // saved softmax probabilities (zero outside the allowed set) for backward
      const size_t m = static_cast<size_t>(l.rows);
      const size_t probs_off = m;  // aux_d layout: [row_weights (m)] [probs (m*c)]
      n.aux_d.resize(m + m * c, 0.0);
      double wsum = 0.0;
      double loss = 0.0;
      for (size_t i = 0; i < m; ++i) {
        const int t = n.aux_i[i];
        const double wr = n.aux_d[i];
        if (t < 0 || wr == 0.0) continue;
        const double* x = l.data() + i * c;
        const uint8_t* al = n.aux_b.data() + i * c;
        double mx = x[t];
        for (int j = 0; j < c; ++j) {
          if ((al[j] || j == t) && x[j] > mx) mx = x[j];
        }
        double z = 0.0;
        for (int j = 0; j < c; ++j) {
          if (al[j] || j == t) z += std::exp(x[j] - mx);
        }
        double* pr = n.aux_d.data() + probs_off + i * c;
        for (int j = 0; j < c; ++j) {
          pr[j] = (al[j] || j == t) ? std::exp(x[j] - mx) / z : 0.0;
        }
        loss += wr * (std::log(z) - (x[t] - mx));
        wsum += wr;
      }
      n.p0 = wsum;  // saved for backward
      out[0] = wsum > 0.0 ? loss / wsum : 0.0;
      break;
    }
  }
}

// --- backward ---------------------------------------------------------------

double* Graph::grad_buf(int id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(n.len(), 0.0);
  return n.grad.data();
}

void Graph::backward(Value root) {
  const int rid = check(root);
  if (nodes_[rid].len() != 1) {
    fail(ErrorKind::Shape, "backward: root must be scalar");
  }
  grad_buf(rid)[0] = 1.0;
  for (int id = rid; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.empty() || n.kind == OpKind::Leaf) continue;
    check_finite(n, n.grad.data(), n.grad.size(), "backward");
    run_backward(id);
  }
}

void Graph::run_backward(int id) {
  Node& n = nodes_[id];
  const double* gy = n.grad.data();
  const auto want = [&](int slot) { return nodes_[n.in[slot]].requires_grad; };
  const auto gin = [&](int slot) { return grad_buf(n.in[slot]); };
  const auto in = [&](int slot) -> const Node& { return nodes_[n.in[slot]]; };

  switch (n.kind) {
    case OpKind::Leaf:
      break;
    case OpKind::MatMul: {
      const Node& a = in(0);
      const Node& b = in(1);
      if (want(0)) {  // dA += dC * B^T
        transpose_into(b.data(), b.rows, b.cols, scratch_);
        K().matmul_acc(gy, scratch_.data(), gin(0), a.rows, b.cols, b.rows);
      }
      if (want(1)) {  // dB += A^T * dC
        transpose_into(a.data(), a.rows, a.cols, scratch_);
        K().matmul_acc(scratch_.data(), gy, gin(1), a.cols, a.rows, b.cols);
      }
      break;
    }
    case OpKind::MatMulNT: {
      const Node& a = in(0);
      const Node& b = in(1);
      if (want(0)) {  // dA += dC * B
        K().matmul_acc(gy, b.data(), gin(0), a.rows, b.rows, b.cols);
      }
      if (want(1)) {  // dB += dC^T * A
        transpose_into(gy, a.rows, b.rows, scratch_);
        K().matmul_acc(scratch_.data(), a.data(), gin(1), b.rows, a.rows, a.cols);
      }
      break;
    }
    case OpKind::Add:
      if (want(0)) K().axpy(1.0, gy, gin(0), n.len());
      if (want(1)) K().axpy(1.0, gy, gin(1), n.len());
      break;
    case OpKind::Sub:
      if (want(0)) K().axpy(1.0, gy, gin(0), n.len());
      if (want(1)) K().axpy(-1.0, gy, gin(1), n.len());
      break;
    case OpKind::Mul:
      if (want(0)) K().fma_vec(gy, in(1).data(), gin(0), n.len());
      if (want(1)) K().fma_vec(gy, in(0).data(), gin(1), n.len());
      break;
    case OpKind::Scale:
      if (want(0)) K().axpy(n.p0, gy, gin(0), n.len());
      break;
    case OpKind::AddScalar:
      if (want(0)) K().axpy(1.0, gy, gin(0), n.len());
      break;
    case OpKind::AddRowVec: {
      const Node& a = in(0);
      if (want(0)) K().axpy(1.0, gy, gin(0), n.len());
      if (want(1)) {
        double* gr = gin(1);
        for (int i = 0; i < a.rows; ++i) {
          K().axpy(1.0, gy + static_cast<size_t>(i) * a.cols, gr, a.cols);
        }
      }
      break;
    }
    case OpKind::SoftmaxRows: {
      if (!want(0)) break;
      const int c = n.cols;
      double* gx = gin(0);
      for (int i = 0; i < n.rows; ++i) {
        const double* y = n.val.data() + static_cast<size_t>(i) * c;
        const double* gyr = gy + static_cast<size_t>(i) * c;
        double* gxr = gx + static_cast<size_t>(i) * c;
        const double t = K().dot(gyr, y, c);
        for (int j = 0; j < c; ++j) gxr[j] += y[j] * (gyr[j] - t);
      }
      break;
    }
    case OpKind::LayerNormRows: {
      const Node& x = in(0);
      const double* g = in(1).data();
      const int c = x.cols;
      const double* xhat_store = n.aux_d.data();
      const double* inv_store = n.aux_d.data() + static_cast<size_t>(x.rows) * c;
      for (int i = 0; i < x.rows; ++i) {
        const double* xh = xhat_store + static_cast<size_t>(i) * c;
        const double* gyr = gy + static_cast<size_t>(i) * c;
        if (want(1)) {
          double* gg = gin(1);
          for (int j = 0; j < c; ++j) gg[j] += gyr[j] * xh[j];
        }
        if (want(2)) {
          K().axpy(1.0, gyr, gin(2), c);
        }
        if (want(0)) {
          double* gxr = gin(0) + static_cast<size_t>(i) * c;
          double h1 = 0.0, h2 = 0.0;
          for (int j = 0; j < c; ++j) {
            const double dxh = gyr[j] * g[j];
            h1 += dxh;
            h2 += dxh * xh[j];
          }
          h1 /= c;
          h2 /= c;
          const double inv = inv_store[i];
          for (int j = 0; j < c; ++j) {
            const double dxh = gyr[j] * g[j];
            gxr[j] += inv * (dxh - h1 - xh[j] * h2);
          }
        }
      }
      break;
    }
    case OpKind::L2NormalizeRows: {
      if (!want(0)) break;
      const Node& x = in(0);
      const int c = x.cols;
      double* gx = gin(0);
      for (int i = 0; i < x.rows; ++i) {
        const double* xr = x.data() + static_cast<size_t>(i) * c;
        const double* gyr = gy + static_cast<size_t>(i) * c;
        double* gxr = gx + static_cast<size_t>(i) * c;
        const double nrm = n.aux_d[i];
        const double d = nrm + n.p0;
        K().axpy(1.0 / d, gyr, gxr, c);
        if (nrm > 1e-300) {
          const double coef = -K().dot(gyr, xr, c) / (nrm * d * d);
          K().axpy(coef, xr, gxr, c);
        }
      }
      break;
    }
    case OpKind::RowwiseDot: {
      const Node& a = in(0);
      const Node& b = in(1);
      const int c = a.cols;
      for (int i = 0; i < a.rows; ++i) {
        if (want(0)) {
          K().axpy(gy[i], b.data() + static_cast<size_t>(i) * c,
                   gin(0) + static_cast<size_t>(i) * c, c);
        }
        if (want(1)) {
          K().axpy(gy[i], a.data() + static_cast<size_t>(i) * c,
                   gin(1) + static_cast<size_t>(i) * c, c);
        }
      }
      break;
    }
    case OpKind::SliceCols: {
      if (!want(0)) break;
      const Node& a = in(0);
      double* gx = gin(0);
      for (int i = 0; i < a.rows; ++i) {
        K().axpy(1.0, gy + static_cast<size_t>(i) * n.cols,
                 gx + static_cast<size_t>(i) * a.cols + n.i0, n.cols);
      }
      break;
    }
    case OpKind::ConcatCols: {
      int off = 0;
      for (int s = 0; s < n.nin; ++s) {
        const Node& p = nodes_[n.in[s]];
        if (nodes_[n.in[s]].requires_grad) {
          double* gp = grad_buf(n.in[s]);
          for (int i = 0; i < p.rows; ++i) {
            K().axpy(1.0, gy + static_cast<size_t>(i) * n.cols + off,
                     gp + static_cast<size_t>(i) * p.cols, p.cols);
          }
        }
        off += p.cols;
      }
      break;
    }
    case OpKind::GatherRows: {
      if (!want(0)) break;
      const Node& a = in(0);
      double* gx = gin(0);
      for (size_t i = 0; i < n.aux_i.size(); ++i) {
        K().axpy(1.0, gy + i * a.cols, gx + static_cast<size_t>(n.aux_i[i]) * a.cols, a.cols);
      }
      break;
    }
    case OpKind::GatherFlat: {
      if (!want(0)) break;
      double* gx = gin(0);
      for (size_t i = 0; i < n.aux_i.size(); ++i) gx[n.aux_i[i]] += gy[i];
      break;
    }
    case OpKind::Transpose: {
      if (!want(0)) break;
      const Node& a = in(0);
      double* gx = gin(0);
      for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < a.cols; ++j)
          gx[static_cast<size_t>(i) * a.cols + j] += gy[static_cast<size_t>(j) * a.rows + i];
      break;
    }
    case OpKind::TopkRowMean: {
      if (!want(0)) break;
      const Node& a = in(0);
      const int k = n.i0;
      double* gx = gin(0);
      for (int i = 0; i < a.rows; ++i) {
        const double gshare = gy[i] / k;
        for (int j = 0; j < k; ++j) {
          gx[static_cast<size_t>(i) * a.cols + n.aux_i[static_cast<size_t>(i) * k + j]] += gshare;
        }
      }
      break;
    }
    case OpKind::SumAll: {
      if (!want(0)) break;
      double* gx = gin(0);
      const double g0 = gy[0];
      for (size_t i = 0; i < in(0).len(); ++i) gx[i] += g0;
      break;
    }
    case OpKind::MeanAll: {
      if (!want(0)) break;
      double* gx = gin(0);
      const double g0 = gy[0] / static_cast<double>(in(0).len());
      for (size_t i = 0; i < in(0).len(); ++i) gx[i] += g0;
      break;
    }
    case OpKind::DotAll: {
      if (want(0)) K().axpy(gy[0], in(1).data(), gin(0), in(0).len());
      if (want(1)) K().axpy(gy[0], in(0).data(), gin(1), in(1).len());
      break;
    }
    case OpKind::ComposePatch: {
      const int w = n.aux_i[1], side = n.aux_i[2], r0 = n.aux_i[3], c0 = n.aux_i[4];
      if (want(1)) {
        double* gp = gin(1);
        for (int r = 0; r < side; ++r) {
          for (int c = 0; c < side; ++c) {
            const size_t dst = (static_cast<size_t>(r0 + r) * w + (c0 + c)) * 3;
            const size_t src = (static_cast<size_t>(r) * side + c) * 3;
            gp[src] += gy[dst];
            gp[src + 1] += gy[dst + 1];
            gp[src + 2] += gy[dst + 2];
          }
        }
      }
      if (want(0)) {
        double* gi = gin(0);
        K().axpy(1.0, gy, gi, n.len());
        // inside the rectangle the image contributes nothing
        for (int r = 0; r < side; ++r) {
          for (int c = 0; c < side; ++c) {
            const size_t dst = (static_cast<size_t>(r0 + r) * w + (c0 + c)) * 3;
            gi[dst] -= gy[dst];
            gi[dst + 1] -= gy[dst + 1];
            gi[dst + 2] -= gy[dst + 2];
          }
        }
      }
      break;
    }
    case OpKind::XentRows: {
      if (!want(0)) break;
      const Node& l = in(0);
      const int c = l.cols;
      const size_t m = static_cast<size_t>(l.rows);
      const double wsum = n.p0;
      if (wsum <= 0.0) break;
      double* gx = gin(0);
      const double g0 = gy[0] / wsum;
      const double* probs = n.aux_d.data() + m;
      for (size_t i = 0; i < m; ++i) {
        const int t = n.aux_i[i];
        const double wr = n.aux_d[i];
        if (t < 0 || wr == 0.0) continue;
        const double* pr = probs + i * c;
        double* gxr = gx + i * c;
        for (int j = 0; j < c; ++j) {
          double d = pr[j];
          if (j == t) d -= 1.0;
          gxr[j] += g0 * wr * d;
        }
      }
      break;
    }
  }
}

bool Graph::verify_recompute() {
  std::vector<double> tmp;
  for (auto& n : nodes_) {
    if (n.kind == OpKind::Leaf) continue;
    tmp.assign(n.len(), 0.0);
    run_forward(n, tmp.data());
    if (std::memcmp(tmp.data(), n.val.data(), n.len() * sizeof(double)) != 0) return false;
  }
  return true;
}

// --- differentiation contract ----------------------------------------------

std::vector<double> patch_gradient(const PatchObjective& objective, const Patch& at) {
  Graph g;
  Value p = g.leaf(at.data.data(), static_cast<int>(at.data.size()), 1, true);
  Value root = objective(g, p);
  if (g.rows(root) != 1 || g.cols(root) != 1) {
    fail(ErrorKind::Shape, "patch objective must produce a scalar");
  }
  g.backward(root);
  if (!g.has_grad(p)) return std::vector<double>(at.data.size(), 0.0);
  auto gr = g.grad(p);
  return {gr.begin(), gr.end()};
}

double FdReport::rel(const FdEntry& e, double floor_value) {
  const double denom = std::max({std::fabs(e.analytic), std::fabs(e.numeric), floor_value});
  return std::fabs(e.analytic - e.numeric) / denom;
}

double FdReport::max_rel(double floor_value) const {
  double m = 0.0;
  for (const auto& e : entries) m = std::max(m, rel(e, floor_value));
  return m;
}

double FdReport::median_rel(double floor_value) const {
  if (entries.empty()) return 0.0;
  std::vector<double> r;
  r.reserve(entries.size());
  for (const auto& e : entries) r.push_back(rel(e, floor_value));
  std::sort(r.begin(), r.end());
  return r[r.size() / 2];
}

double FdReport::frac_within(double threshold, double floor_value) const {
  if (entries.empty()) return 1.0;
  size_t ok = 0;
  for (const auto& e : entries) {
    if (rel(e, floor_value) <= threshold) ++ok;
  }
  return static_cast<double>(ok) / entries.size();
}

FdReport finite_difference_check(const PatchObjective& objective, const Patch& at, double step,
                                 size_t sample, uint64_t seed) {
  if (step <= 0.0) fail(ErrorKind::Domain, "finite_difference_check: step must be positive");
  const size_t dims = at.data.size();
  if (sample > dims) {
    fail(ErrorKind::Domain, "finite_difference_check: sample exceeds coordinate count");
  }
  FdReport report;
  report.step = step;
  if (sample == 0) return report;

  const std::vector<double> analytic = patch_gradient(objective, at);

  std::vector<int> coords(dims);
  std::iota(coords.begin(), coords.end(), 0);
  RandomStream rng(seed);
  for (size_t i = dims - 1; i > 0; --i) {
    std::swap(coords[i], coords[rng.below(i + 1)]);
  }
  coords.resize(sample);

  Patch work = at;
  const auto eval = [&]() {
    Graph g;
    Value p = g.leaf(work.data.data(), static_cast<int>(work.data.size()), 1, false);
    Value root = objective(g, p);
    return g.scalar_value(root);
  };

  for (int coord : coords) {
    const double saved = work.data[coord];
    work.data[coord] = saved + step;
    const double fp = eval();
    work.data[coord] = saved - step;
    const double fm = eval();
    work.data[coord] = saved;
    report.entries.push_back({coord, analytic[coord], (fp - fm) / (2.0 * step)});
  }
  return report;
}

}  // namespace phijack
