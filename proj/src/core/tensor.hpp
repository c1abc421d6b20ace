#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace ebml {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& s);
std::string shape_str(const Shape& s);

// Thrown when an operation produces a non-finite value. Public ops never
// propagate NaN/Inf silently.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

struct ContractError : std::logic_error {
  explicit ContractError(const std::string& what) : std::logic_error(what) {}
};

namespace detail {
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // sized lazily during backward
  bool requires_grad = false;
  bool backward_done = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Accumulates this node's grad into its parents' grads.
  std::function<void(Node&)> backfn;
};
}  // namespace detail

// Value-semantic handle to a node of a per-computation tape. Graphs are
// built eagerly by the free ops below; backward() walks the graph once in
// reverse topological order and then frees it.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  std::size_t size() const { return n_->value.size(); }
  std::size_t ndim() const { return n_->shape.size(); }
  const std::vector<double>& data() const { return n_->value; }
  std::vector<double>& mutable_data() { return n_->value; }
  double item() const;

  bool requires_grad() const { return n_->requires_grad; }
  const std::vector<double>& grad() const;

  // Value-equal copy with no tape linkage and requires_grad = false.
  Tensor detach() const;

  void zero_grad() { n_->grad.clear(); }

  // Root must be a scalar on the tape; populates grad on every
  // requires_grad leaf reachable from it, then drops the graph.
  void backward();

  detail::Node* node() const { return n_.get(); }
  std::shared_ptr<detail::Node> node_ptr() const { return n_; }

  friend Tensor make_op(Shape shape, std::vector<double> value,
                        std::vector<Tensor> parents,
                        std::function<void(detail::Node&)> backfn,
                        const char* opname);

 private:
  std::shared_ptr<detail::Node> n_;
};

// Builds a tape node from computed values, parent handles and a backward
// closure. The extension point every op above is made of.
Tensor make_op(Shape shape, std::vector<double> value,
               std::vector<Tensor> parents,
               std::function<void(detail::Node&)> backfn, const char* opname);

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);

// ---- reductions ----
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor row_sum(const Tensor& a);                       // [n,k] -> [n]
Tensor logsumexp_rows(const Tensor& a);                // [n,k] -> [n]

// ---- structured ----
Tensor matmul(const Tensor& a, const Tensor& b);       // [n,m]x[m,p]
Tensor add_rowvec(const Tensor& a, const Tensor& b);   // [n,p] + [p]
Tensor sub_colvec(const Tensor& a, const Tensor& v);   // [n,k] - [n] per row
Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& idx);
Tensor reshape(const Tensor& a, Shape shape);
// x [n,c,h,w], w [oc,ic,kh,kw], b [oc]; zero padding `pad`, square stride.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b,
              std::size_t stride, std::size_t pad);

// Numerically stable log(sum(exp(v))) over a plain vector; the non-tape
// primitive underlying logsumexp_rows.
double logsumexp(const std::vector<double>& v);

}  // namespace ebml
