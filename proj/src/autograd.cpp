#include "sgprompt/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "sgprompt/errors.hpp"

namespace sgprompt::ag {

struct Node {
  Op op = Op::Leaf;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::shared_ptr<const Node>> inputs;
  std::string name;
  bool trainable = false;
  bool requires_grad = false;

  std::shared_ptr<const Tensor> value;  // leaves only
  double scalar = 0.0;
  std::shared_ptr<const Index> index_a;
  std::shared_ptr<const Index> index_b;
  std::size_t count = 0;
  std::shared_ptr<const Csr> csr;
  CustomForward custom_forward;
  CustomBackward custom_backward;
};

const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::MatMul: return "matmul";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::AddRow: return "add_row";
    case Op::MulRow: return "mul_row";
    case Op::Relu: return "relu";
    case Op::GatherRows: return "gather_rows";
    case Op::SegmentSum: return "segment_sum";
    case Op::AdjacencySum: return "adjacency_sum";
    case Op::RowNorm: return "row_norm";
    case Op::CosinePairs: return "cosine_pairs";
    case Op::Scale: return "scale";
    case Op::Divide: return "divide";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::WeightedSum: return "weighted_sum";
    case Op::Custom: return "custom";
  }
  return "unknown";
}

std::size_t Expr::rows() const { return node_->rows; }
std::size_t Expr::cols() const { return node_->cols; }
Op Expr::op() const { return node_->op; }
const std::string& Expr::name() const { return node_->name; }
bool Expr::trainable() const { return node_->trainable; }
bool Expr::requires_grad() const { return node_->requires_grad; }

namespace {

std::string shape_of(const Expr& e) {
  return "(" + std::to_string(e.rows()) + "x" + std::to_string(e.cols()) + ")";
}

[[noreturn]] void shape_fail(Op op, const std::string& detail) {
  throw ShapeError(std::string(op_name(op)) + ": " + detail);
}

void require_valid(Op op, std::initializer_list<const Expr*> xs) {
  for (const Expr* x : xs) {
    if (!x->valid()) shape_fail(op, "uninitialised operand");
  }
}

Expr make(Op op, std::size_t rows, std::size_t cols, std::vector<Expr> inputs,
          Node extra = {}) {
  auto node = std::make_shared<Node>(std::move(extra));
  node->op = op;
  node->rows = rows;
  node->cols = cols;
  if (node->name.empty()) node->name = op_name(op);
  for (auto& in : inputs) {
    node->requires_grad = node->requires_grad || in.requires_grad();
    node->inputs.push_back(in.shared());
  }
  return Expr(std::move(node));
}

void require_same_shape(Op op, const Expr& a, const Expr& b) {
  require_valid(op, {&a, &b});
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    shape_fail(op, shape_of(a) + " vs " + shape_of(b));
  }
}

void check_index(Op op, const Index& idx, std::size_t bound, const char* what) {
  for (std::size_t i : idx) {
    if (i >= bound) {
      shape_fail(op, std::string(what) + " index " + std::to_string(i) + " out of range " +
                         std::to_string(bound));
    }
  }
}

}  // namespace

Expr constant(Tensor value, std::string name) {
  return constant(std::make_shared<const Tensor>(std::move(value)), std::move(name));
}

Expr constant(std::shared_ptr<const Tensor> value, std::string name) {
  auto node = std::make_shared<Node>();
  node->op = Op::Leaf;
  node->rows = value->rows();
  node->cols = value->cols();
  node->name = std::move(name);
  node->value = std::move(value);
  return Expr(std::move(node));
}

Expr parameter(Tensor value, std::string name) {
  auto node = std::make_shared<Node>();
  node->op = Op::Leaf;
  node->rows = value.rows();
  node->cols = value.cols();
  node->name = std::move(name);
  node->trainable = true;
  node->requires_grad = true;
  node->value = std::make_shared<const Tensor>(std::move(value));
  return Expr(std::move(node));
}

const Tensor& leaf_value(const Expr& leaf) {
  if (!leaf.valid() || leaf.op() != Op::Leaf) throw ContractError("leaf_value: not a leaf");
  return *leaf.node()->value;
}

Expr matmul(const Expr& a, const Expr& b) {
  require_valid(Op::MatMul, {&a, &b});
  if (a.cols() != b.rows()) shape_fail(Op::MatMul, shape_of(a) + " · " + shape_of(b));
  return make(Op::MatMul, a.rows(), b.cols(), {a, b});
}

Expr add(const Expr& a, const Expr& b) {
  require_same_shape(Op::Add, a, b);
  return make(Op::Add, a.rows(), a.cols(), {a, b});
}

Expr sub(const Expr& a, const Expr& b) {
  require_same_shape(Op::Sub, a, b);
  return make(Op::Sub, a.rows(), a.cols(), {a, b});
}

Expr mul(const Expr& a, const Expr& b) {
  require_same_shape(Op::Mul, a, b);
  return make(Op::Mul, a.rows(), a.cols(), {a, b});
}

Expr add_row(const Expr& a, const Expr& row) {
  require_valid(Op::AddRow, {&a, &row});
  if (row.rows() != 1 || row.cols() != a.cols()) {
    shape_fail(Op::AddRow, shape_of(a) + " + row " + shape_of(row));
  }
  return make(Op::AddRow, a.rows(), a.cols(), {a, row});
}

Expr mul_row(const Expr& a, const Expr& row) {
  require_valid(Op::MulRow, {&a, &row});
  if (row.rows() != 1 || row.cols() != a.cols()) {
    shape_fail(Op::MulRow, shape_of(a) + " ⊙ row " + shape_of(row));
  }
  return make(Op::MulRow, a.rows(), a.cols(), {a, row});
}

Expr relu(const Expr& a) {
  require_valid(Op::Relu, {&a});
  return make(Op::Relu, a.rows(), a.cols(), {a});
}

Expr gather_rows(const Expr& a, std::shared_ptr<const Index> rows) {
  require_valid(Op::GatherRows, {&a});
  check_index(Op::GatherRows, *rows, a.rows(), "row");
  Node extra;
  extra.index_a = rows;
  return make(Op::GatherRows, rows->size(), a.cols(), {a}, std::move(extra));
}

Expr segment_sum(const Expr& a, std::shared_ptr<const Index> segment_of_row,
                 std::size_t num_segments) {
  require_valid(Op::SegmentSum, {&a});
  if (segment_of_row->size() != a.rows()) {
    shape_fail(Op::SegmentSum, std::to_string(segment_of_row->size()) +
                                   " segment ids for " + shape_of(a));
  }
  check_index(Op::SegmentSum, *segment_of_row, num_segments, "segment");
  Node extra;
  extra.index_a = segment_of_row;
  extra.count = num_segments;
  return make(Op::SegmentSum, num_segments, a.cols(), {a}, std::move(extra));
}

Expr adjacency_sum(const Expr& a, std::shared_ptr<const Csr> adjacency) {
  require_valid(Op::AdjacencySum, {&a});
  if (adjacency->num_rows() != a.rows()) {
    shape_fail(Op::AdjacencySum, "adjacency with " + std::to_string(adjacency->num_rows()) +
                                     " rows against " + shape_of(a));
  }
  check_index(Op::AdjacencySum, adjacency->indices, a.rows(), "neighbour");
  Node extra;
  extra.csr = std::move(adjacency);
  return make(Op::AdjacencySum, a.rows(), a.cols(), {a}, std::move(extra));
}

Expr row_norm(const Expr& a) {
  require_valid(Op::RowNorm, {&a});
  return make(Op::RowNorm, a.rows(), 1, {a});
}

Expr cosine_pairs(const Expr& a, const Expr& b, std::shared_ptr<const Index> ia,
                  std::shared_ptr<const Index> ib) {
  require_valid(Op::CosinePairs, {&a, &b});
  if (a.cols() != b.cols()) shape_fail(Op::CosinePairs, shape_of(a) + " vs " + shape_of(b));
  if (ia->size() != ib->size()) {
    shape_fail(Op::CosinePairs, "pair index lengths differ");
  }
  check_index(Op::CosinePairs, *ia, a.rows(), "left");
  check_index(Op::CosinePairs, *ib, b.rows(), "right");
  Node extra;
  extra.index_a = std::move(ia);
  extra.index_b = std::move(ib);
  const std::size_t n = extra.index_a->size();
  return make(Op::CosinePairs, n, 1, {a, b}, std::move(extra));
}

Expr cosine_rows(const Expr& a, const Expr& b) {
  require_same_shape(Op::CosinePairs, a, b);
  auto idx = std::make_shared<Index>(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) (*idx)[i] = i;
  return cosine_pairs(a, b, idx, idx);
}

Expr scale(const Expr& a, double factor) {
  require_valid(Op::Scale, {&a});
  Node extra;
  extra.scalar = factor;
  return make(Op::Scale, a.rows(), a.cols(), {a}, std::move(extra));
}

Expr divide(const Expr& a, double divisor) {
  require_valid(Op::Divide, {&a});
  if (divisor == 0.0) throw NumericError("divide: division by zero");
  Node extra;
  extra.scalar = divisor;
  return make(Op::Divide, a.rows(), a.cols(), {a}, std::move(extra));
}

Expr exp(const Expr& a) {
  require_valid(Op::Exp, {&a});
  return make(Op::Exp, a.rows(), a.cols(), {a});
}

Expr log(const Expr& a) {
  require_valid(Op::Log, {&a});
  return make(Op::Log, a.rows(), a.cols(), {a});
}

Expr sum(const Expr& a) {
  require_valid(Op::Sum, {&a});
  return make(Op::Sum, 1, 1, {a});
}

Expr mean(const Expr& a) {
  require_valid(Op::Mean, {&a});
  if (a.rows() * a.cols() == 0) shape_fail(Op::Mean, "empty operand");
  return make(Op::Mean, 1, 1, {a});
}

Expr weighted_sum(const std::vector<Expr>& mats, const Expr& weights) {
  if (mats.empty()) shape_fail(Op::WeightedSum, "no matrices");
  require_valid(Op::WeightedSum, {&weights});
  if (weights.rows() != 1 || weights.cols() != mats.size()) {
    shape_fail(Op::WeightedSum, "weights " + shape_of(weights) + " for " +
                                    std::to_string(mats.size()) + " matrices");
  }
  for (const auto& m : mats) require_same_shape(Op::WeightedSum, mats.front(), m);
  std::vector<Expr> inputs = mats;
  inputs.push_back(weights);
  return make(Op::WeightedSum, mats.front().rows(), mats.front().cols(), std::move(inputs));
}

Expr custom(std::string name, std::vector<Expr> inputs, std::size_t rows, std::size_t cols,
            CustomForward forward, CustomBackward backward) {
  for (const auto& in : inputs) {
    if (!in.valid()) shape_fail(Op::Custom, name + ": uninitialised operand");
  }
  Node extra;
  extra.name = std::move(name);
  extra.custom_forward = std::move(forward);
  extra.custom_backward = std::move(backward);
  return make(Op::Custom, rows, cols, std::move(inputs), std::move(extra));
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

std::vector<const Node*> topo_order(const Node* root) {
  std::vector<const Node*> order;
  std::unordered_set<const Node*> done;
  std::vector<std::pair<const Node*, std::size_t>> stack{{root, 0}};
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next == 0 && done.count(node)) {
      stack.pop_back();
      continue;
    }
    if (next < node->inputs.size()) {
      const Node* child = node->inputs[next++].get();
      if (!done.count(child)) stack.emplace_back(child, 0);
      continue;
    }
    if (done.insert(node).second) order.push_back(node);
    stack.pop_back();
  }
  return order;
}

struct Pass {
  std::vector<const Node*> order;
  std::unordered_map<const Node*, std::size_t> position;
  std::vector<Tensor> values;

  const Tensor& value_of(const Node* n) const { return values[position.at(n)]; }
};

double cos_norm(std::span<const double> r) {
  double s = 0.0;
  for (double x : r) s += x * x;
  return std::sqrt(s);
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Tensor forward_node(const Node& n, const Pass& pass, const LeafOverrides& overrides) {
  auto in = [&](std::size_t i) -> const Tensor& { return pass.value_of(n.inputs[i].get()); };
  switch (n.op) {
    case Op::Leaf: {
      auto it = overrides.find(&n);
      return it != overrides.end() ? *it->second : *n.value;
    }
    case Op::MatMul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      Tensor c(a.rows(), b.cols());
      const std::size_t k = a.cols();
      const std::size_t m = b.cols();
      for (std::size_t i = 0; i < a.rows(); ++i) {
        double* ci = &c(i, 0);
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = a(i, p);
          if (aip == 0.0) continue;
          const double* bp = &b(p, 0);
          for (std::size_t j = 0; j < m; ++j) ci[j] += aip * bp[j];
        }
      }
      return c;
    }
    case Op::Add:
    case Op::Sub:
    case Op::Mul: {
      Tensor c = in(0);
      const Tensor& b = in(1);
      for (std::size_t i = 0; i < c.size(); ++i) {
        if (n.op == Op::Add) c[i] += b[i];
        else if (n.op == Op::Sub) c[i] -= b[i];
        else c[i] *= b[i];
      }
      return c;
    }
    case Op::AddRow:
    case Op::MulRow: {
      Tensor c = in(0);
      const Tensor& r = in(1);
      for (std::size_t i = 0; i < c.rows(); ++i) {
        auto row = c.row_span(i);
        for (std::size_t j = 0; j < row.size(); ++j) {
          if (n.op == Op::AddRow) row[j] += r[j];
          else row[j] *= r[j];
        }
      }
      return c;
    }
    case Op::Relu: {
      Tensor c = in(0);
      for (double& x : c.values()) x = x > 0.0 ? x : 0.0;
      return c;
    }
    case Op::GatherRows: {
      const Tensor& a = in(0);
      const Index& idx = *n.index_a;
      Tensor c(idx.size(), a.cols());
      for (std::size_t k = 0; k < idx.size(); ++k) {
        std::copy_n(&a(idx[k], 0), a.cols(), &c(k, 0));
      }
      return c;
    }
    case Op::SegmentSum: {
      const Tensor& a = in(0);
      const Index& seg = *n.index_a;
      Tensor c(n.count, a.cols());
      for (std::size_t i = 0; i < a.rows(); ++i) {
        auto dst = c.row_span(seg[i]);
        auto src = a.row_span(i);
        for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
      }
      return c;
    }
    case Op::AdjacencySum: {
      const Tensor& a = in(0);
      Tensor c(a.rows(), a.cols());
      for (std::size_t v = 0; v < a.rows(); ++v) {
        auto dst = c.row_span(v);
        for (std::size_t u : n.csr->row(v)) {
          auto src = a.row_span(u);
          for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
        }
      }
      return c;
    }
    case Op::RowNorm: {
      const Tensor& a = in(0);
      Tensor c(a.rows(), 1);
      for (std::size_t i = 0; i < a.rows(); ++i) c[i] = cos_norm(a.row_span(i));
      return c;
    }
    case Op::CosinePairs: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const Index& ia = *n.index_a;
      const Index& ib = *n.index_b;
      std::vector<double> na(a.rows()), nb(b.rows());
      for (std::size_t i = 0; i < a.rows(); ++i) na[i] = cos_norm(a.row_span(i)) + kCosineNormGuard;
      for (std::size_t i = 0; i < b.rows(); ++i) nb[i] = cos_norm(b.row_span(i)) + kCosineNormGuard;
      Tensor c(ia.size(), 1);
      for (std::size_t k = 0; k < ia.size(); ++k) {
        c[k] = dot(a.row_span(ia[k]), b.row_span(ib[k])) / (na[ia[k]] * nb[ib[k]]);
      }
      return c;
    }
    case Op::Scale: {
      Tensor c = in(0);
      for (double& x : c.values()) x *= n.scalar;
      return c;
    }
    case Op::Divide: {
      Tensor c = in(0);
      for (double& x : c.values()) x /= n.scalar;
      return c;
    }
    case Op::Exp: {
      Tensor c = in(0);
      for (double& x : c.values()) x = std::exp(x);
      return c;
    }
    case Op::Log: {
      Tensor c = in(0);
      for (double& x : c.values()) x = std::log(x);
      return c;
    }
    case Op::Sum:
    case Op::Mean: {
      const Tensor& a = in(0);
      double s = 0.0;
      for (double x : a.values()) s += x;
      if (n.op == Op::Mean) s /= static_cast<double>(a.size());
      return Tensor::scalar(s);
    }
    case Op::WeightedSum: {
      const std::size_t k = n.inputs.size() - 1;
      const Tensor& w = in(k);
      Tensor c(n.rows, n.cols);
      for (std::size_t l = 0; l < k; ++l) {
        const Tensor& m = in(l);
        const double wl = w[l];
        for (std::size_t i = 0; i < c.size(); ++i) c[i] += wl * m[i];
      }
      return c;
    }
    case Op::Custom: {
      std::vector<const Tensor*> ins;
      for (std::size_t i = 0; i < n.inputs.size(); ++i) ins.push_back(&in(i));
      Tensor c = n.custom_forward(ins);
      if (c.rows() != n.rows || c.cols() != n.cols) {
        throw ShapeError(n.name + ": custom forward returned " + c.shape_string());
      }
      return c;
    }
  }
  throw ContractError("unknown op");
}

Pass run_forward(const Node* root, const LeafOverrides& overrides) {
  Pass pass;
  pass.order = topo_order(root);
  pass.values.reserve(pass.order.size());
  for (std::size_t i = 0; i < pass.order.size(); ++i) {
    const Node* n = pass.order[i];
    pass.position.emplace(n, i);
    Tensor v = forward_node(*n, pass, overrides);
    if (!v.all_finite()) {
      throw NumericError("non-finite value produced by " + n->name +
                         (n->op == Op::Leaf ? " (leaf)" : ""));
    }
    pass.values.push_back(std::move(v));
  }
  return pass;
}

void accumulate(Tensor& dst, const Tensor& src) {
  if (dst.empty() && src.size() != 0) {
    dst = src;
    return;
  }
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

Tensor& slot(std::vector<Tensor>& grads, const Pass& pass, const Node* input) {
  Tensor& g = grads[pass.position.at(input)];
  if (g.rows() != input->rows || g.cols() != input->cols) g = Tensor(input->rows, input->cols);
  return g;
}

void backward_node(const Node& n, const Tensor& out, const Tensor& g, const Pass& pass,
                   std::vector<Tensor>& grads) {
  auto in = [&](std::size_t i) -> const Tensor& { return pass.value_of(n.inputs[i].get()); };
  auto wants = [&](std::size_t i) { return n.inputs[i]->requires_grad; };
  auto dst = [&](std::size_t i) -> Tensor& { return slot(grads, pass, n.inputs[i].get()); };

  switch (n.op) {
    case Op::Leaf:
      return;
    case Op::MatMul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const std::size_t k = a.cols();
      const std::size_t m = b.cols();
      if (wants(0)) {
        Tensor& da = dst(0);
        for (std::size_t i = 0; i < a.rows(); ++i) {
          const double* gi = &g(i, 0);
          for (std::size_t p = 0; p < k; ++p) {
            const double* bp = &b(p, 0);
            double s = 0.0;
            for (std::size_t j = 0; j < m; ++j) s += gi[j] * bp[j];
            da(i, p) += s;
          }
        }
      }
      if (wants(1)) {
        Tensor& db = dst(1);
        for (std::size_t i = 0; i < a.rows(); ++i) {
          const double* gi = &g(i, 0);
          for (std::size_t p = 0; p < k; ++p) {
            const double aip = a(i, p);
            if (aip == 0.0) continue;
            double* dbp = &db(p, 0);
            for (std::size_t j = 0; j < m; ++j) dbp[j] += aip * gi[j];
          }
        }
      }
      return;
    }
    case Op::Add:
      if (wants(0)) accumulate(dst(0), g);
      if (wants(1)) accumulate(dst(1), g);
      return;
    case Op::Sub:
      if (wants(0)) accumulate(dst(0), g);
      if (wants(1)) {
        Tensor& d = dst(1);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
      }
      return;
    case Op::Mul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (wants(0)) {
        Tensor& d = dst(0);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * b[i];
      }
      if (wants(1)) {
        Tensor& d = dst(1);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * a[i];
      }
      return;
    }
    case Op::AddRow: {
      if (wants(0)) accumulate(dst(0), g);
      if (wants(1)) {
        Tensor& d = dst(1);
        for (std::size_t i = 0; i < g.rows(); ++i) {
          auto gr = g.row_span(i);
          for (std::size_t j = 0; j < gr.size(); ++j) d[j] += gr[j];
        }
      }
      return;
    }
    case Op::MulRow: {
      const Tensor& a = in(0);
      const Tensor& r = in(1);
      if (wants(0)) {
        Tensor& d = dst(0);
        for (std::size_t i = 0; i < g.rows(); ++i) {
          for (std::size_t j = 0; j < g.cols(); ++j) d(i, j) += g(i, j) * r[j];
        }
      }
      if (wants(1)) {
        Tensor& d = dst(1);
        for (std::size_t i = 0; i < g.rows(); ++i) {
          for (std::size_t j = 0; j < g.cols(); ++j) d[j] += g(i, j) * a(i, j);
        }
      }
      return;
    }
    case Op::Relu: {
      if (!wants(0)) return;
      const Tensor& a = in(0);
      Tensor& d = dst(0);
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (a[i] > 0.0) d[i] += g[i];
      }
      return;
    }
    case Op::GatherRows: {
      if (!wants(0)) return;
      Tensor& d = dst(0);
      const Index& idx = *n.index_a;
      for (std::size_t k = 0; k < idx.size(); ++k) {
        auto dr = d.row_span(idx[k]);
        auto gr = g.row_span(k);
        for (std::size_t j = 0; j < gr.size(); ++j) dr[j] += gr[j];
      }
      return;
    }
    case Op::SegmentSum: {
      if (!wants(0)) return;
      Tensor& d = dst(0);
      const Index& seg = *n.index_a;
      for (std::size_t i = 0; i < seg.size(); ++i) {
        auto dr = d.row_span(i);
        auto gr = g.row_span(seg[i]);
        for (std::size_t j = 0; j < gr.size(); ++j) dr[j] += gr[j];
      }
      return;
    }
    case Op::AdjacencySum: {
      if (!wants(0)) return;
      Tensor& d = dst(0);
      for (std::size_t u = 0; u < g.rows(); ++u) {
        auto dr = d.row_span(u);
        for (std::size_t v : n.csr->row(u)) {
          auto gr = g.row_span(v);
          for (std::size_t j = 0; j < gr.size(); ++j) dr[j] += gr[j];
        }
      }
      return;
    }
    case Op::RowNorm: {
      if (!wants(0)) return;
      const Tensor& a = in(0);
      Tensor& d = dst(0);
      for (std::size_t i = 0; i < a.rows(); ++i) {
        const double nrm = out[i];
        if (nrm == 0.0) continue;
        auto ar = a.row_span(i);
        auto dr = d.row_span(i);
        for (std::size_t j = 0; j < ar.size(); ++j) dr[j] += g[i] * ar[j] / nrm;
      }
      return;
    }
    case Op::CosinePairs: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const Index& ia = *n.index_a;
      const Index& ib = *n.index_b;
      std::vector<double> ra(a.rows()), rb(b.rows());
      for (std::size_t i = 0; i < a.rows(); ++i) ra[i] = cos_norm(a.row_span(i));
      for (std::size_t i = 0; i < b.rows(); ++i) rb[i] = cos_norm(b.row_span(i));
      const bool want_a = wants(0);
      const bool want_b = wants(1);
      Tensor* da = want_a ? &dst(0) : nullptr;
      Tensor* db = want_b ? &dst(1) : nullptr;
      // cos = a·b / (na nb) with na = |a| + guard:
      //   ∂cos/∂a = b / (na nb) − (a·b) / (na² nb) · a / |a|
      for (std::size_t k = 0; k < ia.size(); ++k) {
        const double gk = g[k];
        if (gk == 0.0) continue;
        auto av = a.row_span(ia[k]);
        auto bv = b.row_span(ib[k]);
        const double abs_a = ra[ia[k]];
        const double abs_b = rb[ib[k]];
        const double na = abs_a + kCosineNormGuard;
        const double nb = abs_b + kCosineNormGuard;
        const double ab = dot(av, bv);
        if (want_a) {
          auto dr = da->row_span(ia[k]);
          const double c1 = gk / (na * nb);
          const double c2 = abs_a > 0.0 ? gk * ab / (na * na * nb * abs_a) : 0.0;
          for (std::size_t j = 0; j < av.size(); ++j) dr[j] += c1 * bv[j] - c2 * av[j];
        }
        if (want_b) {
          auto dr = db->row_span(ib[k]);
          const double c1 = gk / (na * nb);
          const double c2 = abs_b > 0.0 ? gk * ab / (nb * nb * na * abs_b) : 0.0;
          for (std::size_t j = 0; j < bv.size(); ++j) dr[j] += c1 * av[j] - c2 * bv[j];
        }
      }
      return;
    }
    case Op::Scale:
    case Op::Divide: {
      if (!wants(0)) return;
      Tensor& d = dst(0);
      for (std::size_t i = 0; i < g.size(); ++i) {
        d[i] += n.op == Op::Scale ? g[i] * n.scalar : g[i] / n.scalar;
      }
      return;
    }
    case Op::Exp: {
      if (!wants(0)) return;
      Tensor& d = dst(0);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * out[i];
      return;
    }
    case Op::Log: {
      if (!wants(0)) return;
      const Tensor& a = in(0);
      Tensor& d = dst(0);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] / a[i];
      return;
    }
    case Op::Sum:
    case Op::Mean: {
      if (!wants(0)) return;
      Tensor& d = dst(0);
      double gv = g[0];
      if (n.op == Op::Mean) gv /= static_cast<double>(d.size());
      for (double& x : d.values()) x += gv;
      return;
    }
    case Op::WeightedSum: {
      const std::size_t k = n.inputs.size() - 1;
      const Tensor& w = in(k);
      for (std::size_t l = 0; l < k; ++l) {
        if (!wants(l)) continue;
        Tensor& d = dst(l);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += w[l] * g[i];
      }
      if (wants(k)) {
        Tensor& dw = dst(k);
        for (std::size_t l = 0; l < k; ++l) {
          const Tensor& m = in(l);
          double s = 0.0;
          for (std::size_t i = 0; i < g.size(); ++i) s += g[i] * m[i];
          dw[l] += s;
        }
      }
      return;
    }
    case Op::Custom: {
      std::vector<const Tensor*> ins;
      for (std::size_t i = 0; i < n.inputs.size(); ++i) ins.push_back(&in(i));
      std::vector<Tensor> gs = n.custom_backward(ins, out, g);
      if (gs.size() != n.inputs.size()) {
        throw ShapeError(n.name + ": custom backward returned wrong gradient count");
      }
      for (std::size_t i = 0; i < gs.size(); ++i) {
        if (!wants(i)) continue;
        if (!gs[i].same_shape(*ins[i])) {
          throw ShapeError(n.name + ": custom backward gradient shape mismatch");
        }
        accumulate(dst(i), gs[i]);
      }
      return;
    }
  }
}

}  // namespace

Tensor evaluate(const Expr& root, const LeafOverrides& overrides) {
  if (!root.valid()) throw ContractError("evaluate: empty expression");
  Pass pass = run_forward(root.node(), overrides);
  return std::move(pass.values.back());
}

ValueAndGrad value_and_gradients(const Expr& root) {
  if (!root.valid()) throw ContractError("gradients: empty expression");
  if (root.rows() != 1 || root.cols() != 1) {
    throw ContractError("gradients: root must be scalar, got (" + std::to_string(root.rows()) +
                        "x" + std::to_string(root.cols()) + ")");
  }
  Pass pass = run_forward(root.node(), {});
  std::vector<Tensor> grads(pass.order.size());
  grads.back() = Tensor::scalar(1.0);
  for (std::size_t i = pass.order.size(); i-- > 0;) {
    const Node* n = pass.order[i];
    if (!n->requires_grad || grads[i].empty()) continue;
    backward_node(*n, pass.values[i], grads[i], pass, grads);
  }
  ValueAndGrad result;
  result.value = pass.values.back()[0];
  for (std::size_t i = 0; i < pass.order.size(); ++i) {
    const Node* n = pass.order[i];
    if (n->op != Op::Leaf || !n->trainable) continue;
    Tensor g = grads[i].empty() ? Tensor(n->rows, n->cols) : std::move(grads[i]);
    if (!g.all_finite()) throw NumericError("non-finite gradient for leaf " + n->name);
    result.grads.set(n, std::move(g));
  }
  return result;
}

Gradients gradients(const Expr& root) { return value_and_gradients(root).grads; }

const Tensor& Gradients::operator[](const Expr& leaf) const {
  auto it = grads_.find(leaf.node());
  if (it == grads_.end()) {
    throw ContractError("gradients: no gradient for leaf " +
                        (leaf.valid() ? leaf.name() : std::string("<empty>")));
  }
  return it->second;
}

std::vector<Expr> trainable_leaves(const Expr& root) {
  std::vector<Expr> leaves;
  std::unordered_set<const Node*> seen;
  std::vector<std::shared_ptr<const Node>> stack{root.shared()};
  while (!stack.empty()) {
    auto n = stack.back();
    stack.pop_back();
    if (!seen.insert(n.get()).second) continue;
    if (n->op == Op::Leaf && n->trainable) leaves.emplace_back(n);
    for (auto it = n->inputs.rbegin(); it != n->inputs.rend(); ++it) stack.push_back(*it);
  }
  return leaves;
}

GradCheckReport finite_diff_report(const Expr& root, double step) {
  if (step <= 0.0) throw ContractError("finite_diff_check: step must be positive");
  const Gradients analytic = gradients(root);
  GradCheckReport report;
  for (const Expr& leaf : trainable_leaves(root)) {
    const Tensor& base = *leaf.node()->value;
    const Tensor& ga = analytic[leaf];
    Tensor probe = base;
    LeafOverrides overrides{{leaf.node(), &probe}};
    for (std::size_t i = 0; i < base.size(); ++i) {
      probe[i] = base[i] + step;
      const double up = evaluate(root, overrides).item();
      probe[i] = base[i] - step;
      const double down = evaluate(root, overrides).item();
      probe[i] = base[i];
      const double numeric = (up - down) / (2.0 * step);
      const double denom = std::max({std::abs(ga[i]), std::abs(numeric), 1e-8});
      const double rel = std::abs(ga[i] - numeric) / denom;
      ++report.checked;
      if (rel > report.max_rel_error || report.worst_leaf.empty()) {
        report.max_rel_error = rel;
        report.worst_leaf = leaf.name();
        report.worst_index = i;
        report.analytic = ga[i];
        report.numeric = numeric;
      }
    }
  }
  return report;
}

double finite_diff_check(const Expr& root, double step) {
  return finite_diff_report(root, step).max_rel_error;
}

}  // namespace sgprompt::ag
