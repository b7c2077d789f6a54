#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "mmc/array.hpp"

namespace mmc::ad {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One vertex of the reverse-mode tape. `backprop` reads this node's grad and
// accumulates into the parents' grads; leaves have no backprop.
struct Node {
    long id = 0;
    const char* op = "leaf";
    Array value;
    Array grad;  // allocated by backward(), same shape as value
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backprop;
};

// Value-semantics handle to a node. Copying shares the node.
class Var {
  public:
    Var() = default;
    explicit Var(NodePtr n) : node(std::move(n)) {}

    bool valid() const { return node != nullptr; }
    const Array& val() const { return node->value; }
    Array& mutable_val() { return node->value; }
    const Array& grad() const { return node->grad; }
    const std::vector<int>& shape() const { return node->value.shape; }

    NodePtr node;
};

Var leaf(Array value);
Var constant(Array value);  // alias of leaf; reads better at call sites

// elementwise, same shape
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var add_scalar(const Var& a, double c);
Var scale(const Var& a, double c);

// shape / indexing
Var matmul(const Var& a, const Var& b);    // (m,k)x(k,n)
Var transpose(const Var& a);               // 2-D
Var reshape(const Var& a, std::vector<int> shape);
Var concat(const std::vector<Var>& parts, int axis);
Var slice(const Var& a, int axis, int start, int len);
Var rows(const Var& a, const std::vector<int>& idx);       // gather along axis 0
Var take_last(const Var& a, const std::vector<int>& idx);  // a[r, idx[r]] -> (rows)
Var broadcast_row(const Var& v, int n);                    // (d) or (1,d) -> (n,d)

// reductions
Var sum_all(const Var& a);   // -> (1)
Var mean_all(const Var& a);  // -> (1)
Var sum_axis(const Var& a, int axis);
Var mean_axis(const Var& a, int axis);

// elementwise maps
Var exp_(const Var& a);
Var log_(const Var& a);
Var sqrt_(const Var& a);
Var square(const Var& a);
Var abs_smooth(const Var& a, double eps = 1e-12);  // sqrt(x^2 + eps)
Var relu(const Var& a);
Var sin_(const Var& a);
Var cos_(const Var& a);
Var min_const(const Var& a, double c);  // gradient 0 where a >= c

// structured ops
Var softmax_last(const Var& a);
Var logsumexp_last(const Var& a);                       // -> (rows)
Var layernorm_last(const Var& a, double eps = 1e-5);    // no affine
Var norm_last(const Var& a, double eps = 1e-12);        // sqrt(sum x^2 + eps) -> (rows)
Var cumsum_time(const Var& a);                          // cumulative sum over axis 0
Var stop_grad(const Var& a);

// forward takes `hard_value` verbatim; backward passes the incoming gradient to
// `soft` unchanged
Var straight_through(const Var& soft, Array hard_value);

// Populates grad on every node reachable from `loss` (which must be scalar).
// Deterministic: repeated calls on the same graph produce bit-identical grads.
void backward(const Var& loss);

// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
double gradcheck(const std::function<Var(const Var&)>& f, const Array& x, double h = 1e-5);

}  // namespace mmc::ad
