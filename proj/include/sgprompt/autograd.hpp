#pragma once

// Reverse-mode differentiation over a DAG of rank-2 tensor primitives.
//
// Expressions are built symbolically (shapes are validated at construction)
// and are immutable. evaluate() runs a forward pass; gradients() runs a
// forward and a backward pass and returns d(root)/d(leaf) for every
// trainable leaf reachable from a scalar root.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "sgprompt/csr.hpp"
#include "sgprompt/tensor.hpp"

namespace sgprompt::ag {

using sgprompt::Csr;

enum class Op {
  Leaf,
  MatMul,
  Add,
  Sub,
  Mul,
  AddRow,
  MulRow,
  Relu,
  GatherRows,
  SegmentSum,
  AdjacencySum,
  RowNorm,
  CosinePairs,
  Scale,
  Divide,
  Exp,
  Log,
  Sum,
  Mean,
  WeightedSum,
  Custom,
};

const char* op_name(Op op);

using Index = std::vector<std::size_t>;

// Custom primitive hooks. Forward receives input values; backward receives
// input values, the output value and the upstream gradient, and returns one
// gradient per input (same shapes as the inputs).
using CustomForward = std::function<Tensor(std::span<const Tensor* const>)>;
using CustomBackward = std::function<std::vector<Tensor>(
    std::span<const Tensor* const>, const Tensor&, const Tensor&)>;

struct Node;

class Expr {
 public:
  Expr() = default;
  explicit Expr(std::shared_ptr<const Node> node) : node_(std::move(node)) {}

  std::size_t rows() const;
  std::size_t cols() const;
  Op op() const;
  const std::string& name() const;
  bool trainable() const;
  bool requires_grad() const;
  bool valid() const { return node_ != nullptr; }

  const Node* node() const { return node_.get(); }
  const std::shared_ptr<const Node>& shared() const { return node_; }

 private:
  std::shared_ptr<const Node> node_;
};

// Leaves.
Expr constant(Tensor value, std::string name = "const");
Expr constant(std::shared_ptr<const Tensor> value, std::string name = "const");
Expr parameter(Tensor value, std::string name = "param");
// Stored value of a leaf. Throws ContractError for non-leaf expressions.
const Tensor& leaf_value(const Expr& leaf);

// Primitives.
Expr matmul(const Expr& a, const Expr& b);
Expr add(const Expr& a, const Expr& b);
Expr sub(const Expr& a, const Expr& b);
Expr mul(const Expr& a, const Expr& b);
Expr add_row(const Expr& a, const Expr& row);  // a + 1·row
Expr mul_row(const Expr& a, const Expr& row);  // each row of a ⊙ row
Expr relu(const Expr& a);
Expr gather_rows(const Expr& a, std::shared_ptr<const Index> rows);
Expr segment_sum(const Expr& a, std::shared_ptr<const Index> segment_of_row,
                 std::size_t num_segments);
Expr adjacency_sum(const Expr& a, std::shared_ptr<const Csr> adjacency);
Expr row_norm(const Expr& a);
// cos(a[ia[k]], b[ib[k]]) for each k, as a column. Norms are guarded by
// adding 1e-12 so zero rows have similarity 0 instead of NaN.
Expr cosine_pairs(const Expr& a, const Expr& b, std::shared_ptr<const Index> ia,
                  std::shared_ptr<const Index> ib);
Expr cosine_rows(const Expr& a, const Expr& b);
Expr scale(const Expr& a, double factor);
Expr divide(const Expr& a, double divisor);
Expr exp(const Expr& a);
Expr log(const Expr& a);
Expr sum(const Expr& a);
Expr mean(const Expr& a);
// Σ_k weights[0,k] · mats[k]; weights is 1xK.
Expr weighted_sum(const std::vector<Expr>& mats, const Expr& weights);
Expr custom(std::string name, std::vector<Expr> inputs, std::size_t rows, std::size_t cols,
            CustomForward forward, CustomBackward backward);

constexpr double kCosineNormGuard = 1e-12;

/// Gradients keyed by trainable leaf.
class Gradients {
 public:
  const Tensor& operator[](const Expr& leaf) const;
  bool contains(const Expr& leaf) const { return grads_.count(leaf.node()) != 0; }
  std::size_t size() const { return grads_.size(); }

  void set(const Node* leaf, Tensor g) { grads_[leaf] = std::move(g); }

 private:
  std::unordered_map<const Node*, Tensor> grads_;
};

/// Value override for a leaf during evaluation. Used by finite differences.
using LeafOverrides = std::unordered_map<const Node*, const Tensor*>;

Tensor evaluate(const Expr& root, const LeafOverrides& overrides = {});

/// Forward value plus gradients of a 1x1 root.
struct ValueAndGrad {
  double value = 0.0;
  Gradients grads;
};
ValueAndGrad value_and_gradients(const Expr& root);
Gradients gradients(const Expr& root);

/// Trainable leaves reachable from root, in first-visit order.
std::vector<Expr> trainable_leaves(const Expr& root);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_leaf;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

/// Central differences per trainable scalar against gradients(root). The
/// relative error uses max(|analytic|, |numeric|, 1e-8) as denominator.
GradCheckReport finite_diff_report(const Expr& root, double step);
double finite_diff_check(const Expr& root, double step);

}  // namespace sgprompt::ag
