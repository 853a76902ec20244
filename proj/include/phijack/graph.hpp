#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "phijack/common.hpp"
#include "phijack/imaging.hpp"

namespace phijack {

// Reverse-mode differentiation over a recorded tape of tensor operations.
// Values are computed eagerly as ops are appended; backward() runs one
// reverse sweep accumulating adjoints into every node that (transitively)
// depends on a differentiable leaf. All storage is 64-bit.
//
// Tensors are row-major [rows x cols]; vectors are [n x 1] or [1 x n]
// depending on orientation, scalars [1 x 1].

struct Value {
  int id = -1;
  bool valid() const { return id >= 0; }
};

enum class OpKind : uint8_t {
  Leaf,
  MatMul,        // [m,k] x [k,n]
  MatMulNT,      // [m,k] x [n,k]^T
  Add,
  Sub,
  Mul,
  Scale,         // p0 * a
  AddScalar,     // a + p0
  AddRowVec,     // [m,n] + broadcast [1,n]
  SoftmaxRows,
  LayerNormRows, // (x, gamma, beta), eps = p0
  L2NormalizeRows,
  RowwiseDot,    // ([m,n],[m,n]) -> [m,1]
  SliceCols,
  ConcatCols,
  GatherRows,
  GatherFlat,    // arbitrary index gather into [rows,cols]
  Transpose,
  TopkRowMean,   // mean of k largest per row, ties -> lower column
  SumAll,
  MeanAll,
  DotAll,        // sum(a .* b) -> scalar
  ComposePatch,  // image overwrite inside patch rectangle
  XentRows,      // masked softmax cross-entropy, weighted row mean
};

const char* op_kind_name(OpKind k);

class Graph {
public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Leaves. Views are non-owning: the caller keeps the buffer alive for the
  // lifetime of the graph epoch.
  Value leaf(const double* data, int rows, int cols, bool requires_grad);
  Value constant(const double* data, int rows, int cols) { return leaf(data, rows, cols, false); }
  Value constant_copy(std::vector<double> data, int rows, int cols);

  Value matmul(Value a, Value b);
  Value matmul_nt(Value a, Value b);
  Value add(Value a, Value b);
  Value sub(Value a, Value b);
  Value mul(Value a, Value b);
  Value scale(Value a, double c);
  Value add_scalar(Value a, double c);
  Value add_rowvec(Value a, Value row);
  Value softmax_rows(Value a);
  Value layernorm_rows(Value x, Value gamma, Value beta, double eps);
  Value l2normalize_rows(Value x, double eps);
  Value rowwise_dot(Value a, Value b);
  Value slice_cols(Value a, int col0, int width);
  Value concat_cols(const std::vector<Value>& parts);
  Value gather_rows(Value a, std::vector<int> indices);
  Value gather_flat(Value a, std::vector<int> indices, int rows, int cols);
  Value transpose(Value a);
  Value topk_row_mean(Value a, int k);
  Value sum_all(Value a);
  Value mean_all(Value a);
  Value dot_all(Value a, Value b);
  // image and patch are flat [len,1] columns; anchor/side in pixels
  Value compose_patch(Value image, Value patch, int img_h, int img_w, int side, int anchor_row,
                      int anchor_col);
  // targets[i] < 0 skips row i; allowed is row-major [m,K] with 1 = class
  // participates in row i's denominator (the target class is always
  // included); loss = weighted mean over rows of -log softmax[target].
  Value xent_rows(Value logits, std::vector<int> targets, std::vector<uint8_t> allowed,
                  std::vector<double> row_weights);

  int rows(Value v) const { return nodes_[check(v)].rows; }
  int cols(Value v) const { return nodes_[check(v)].cols; }
  std::span<const double> val(Value v) const;
  double scalar_value(Value v) const;
  std::span<const double> grad(Value v) const;
  // false when no adjoint reached the node (its gradient is identically zero)
  bool has_grad(Value v) const;

  void backward(Value root);

  // Re-executes every recorded op against its stored inputs and reports
  // whether all outputs reproduce bit-identically.
  bool verify_recompute();

  void clear();
  size_t size() const { return nodes_.size(); }

private:
  struct Node {
    OpKind kind = OpKind::Leaf;
    int rows = 0, cols = 0;
    std::array<int, 8> in{{-1, -1, -1, -1, -1, -1, -1, -1}};
    int nin = 0;
    double p0 = 0.0;
    int i0 = 0, i1 = 0;
    std::vector<int> aux_i;
    std::vector<uint8_t> aux_b;
    std::vector<double> aux_d;
    const double* ext = nullptr;  // leaf view; otherwise val owns storage
    std::vector<double> val;
    std::vector<double> grad;
    bool requires_grad = false;

    const double* data() const { return ext != nullptr ? ext : val.data(); }
    size_t len() const { return static_cast<size_t>(rows) * cols; }
  };

  int check(Value v) const;
  Node& make(OpKind kind, int rows, int cols, std::initializer_list<Value> ins);
  void run_forward(Node& n, double* out);
  void run_backward(int id);
  void check_finite(const Node& n, const double* data, size_t len, const char* phase) const;
  double* grad_buf(int id);

  std::vector<Node> nodes_;
  std::vector<double> scratch_;
};

// --- differentiation contract --------------------------------------------

// A scalar objective expressed over a patch leaf.
using PatchObjective = std::function<Value(Graph&, Value)>;

// d(objective)/d(patch), evaluated at `at`. Deterministic for fixed inputs.
std::vector<double> patch_gradient(const PatchObjective& objective, const Patch& at);

struct FdEntry {
  int coord = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct FdReport {
  std::vector<FdEntry> entries;
  double step = 0.0;

  // relative error with a denominator floor
  static double rel(const FdEntry& e, double floor_value);
  double max_rel(double floor_value = 1e-8) const;
  double median_rel(double floor_value = 1e-8) const;
  // fraction of entries with rel <= threshold
  double frac_within(double threshold, double floor_value = 1e-8) const;
};

// Central differences on a seeded random coordinate subset.
FdReport finite_difference_check(const PatchObjective& objective, const Patch& at, double step,
                                 size_t sample, uint64_t seed);

}  // namespace phijack
