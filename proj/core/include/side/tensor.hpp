#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

namespace side {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// One recorded node of the dynamic tape. The tape is the DAG hanging off the
// loss tensor: recording order is the topological order (seq is assigned from
// a monotonically increasing per-thread counter), and backward() replays it in
// reverse, visiting each node exactly once.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // persistent; allocated on first backward()
  bool requires_grad = false;
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> parents;
  // Pushes this node's gradient contribution into the parents' per-pass
  // buffers. A null entry marks a parent that does not need a gradient.
  std::function<void(const std::vector<double>& self_grad,
                     const std::vector<std::vector<double>*>& parent_grads)>
      backprop;
};

}  // namespace detail

// Dense row-major f64 tensor participating in a reverse-mode autodiff graph.
// Value semantics over a shared node: copies alias the same storage. Values
// are immutable once an op has consumed them; only leaves may be mutated
// (optimizer updates, finite-difference probes) between graph builds.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  std::size_t extent(std::size_t axis) const;

  const std::vector<double>& data() const;
  // Leaf mutation only; the graph does not see value changes retroactively.
  std::vector<double>& mutable_data();
  double item() const;  // scalar tensors

  bool requires_grad() const;
  bool has_grad() const;
  const std::vector<double>& grad() const;
  void zero_grad();

  // Detached copy of the values (no graph history, no grad).
  Tensor detach() const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend class OpBuilder;
};

// Internal: wraps node creation for ops. Records parents and the backward
// rule only when some input requires a gradient.
class OpBuilder {
 public:
  static Tensor make(const char* op_name, Shape shape,
                     std::vector<double> value,
                     const std::vector<Tensor>& inputs,
                     std::function<void(const std::vector<double>&,
                                        const std::vector<std::vector<double>*>&)>
                         backprop);
  static Tensor leaf(Shape shape, std::vector<double> value, bool requires_grad);
};

// Populates grad on every requires_grad tensor reachable from `loss`.
// Repeated calls accumulate; zero_grad() resets a leaf.
void backward(const Tensor& loss);

// ---- primitive ops ---------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);   // [M×K]·[K×N]
Tensor transpose(const Tensor& x);                 // 2-D
Tensor softmax_rows(const Tensor& x);              // 2-D, rows sum to 1
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);  // trailing axis
Tensor bilinear_upsample(const Tensor& x, std::size_t factor);     // C×H×W

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor negate(const Tensor& x);
Tensor add_scalar(const Tensor& x, double s);
Tensor mul_scalar(const Tensor& x, double s);

Tensor sum(const Tensor& x);                                   // all axes -> scalar
Tensor sum(const Tensor& x, const std::vector<std::size_t>& axes);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, const std::vector<std::size_t>& axes);
Tensor masked_sum(const Tensor& x, const Tensor& mask);        // mask is 0/1, constant

Tensor reshape(const Tensor& x, Shape new_shape);
// out[i] = x[index_map[i]]; backward scatter-adds through the map.
Tensor gather(const Tensor& x, std::vector<std::size_t> index_map, Shape out_shape);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count);  // 2-D
Tensor concat_cols(const std::vector<Tensor>& xs);                         // 2-D
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);  // normalizes the trailing axis

// Layout bridges between image maps and attention tokens.
Tensor chw_to_tokens(const Tensor& x);  // C×H×W -> (H·W)×C
Tensor tokens_to_chw(const Tensor& x, std::size_t channels, std::size_t h,
                     std::size_t w);

// ---- serialization ---------------------------------------------------------

// Flat binary block: magic "SRTT", u32 rank, u64 extents, f64 payload, all
// little-endian. Checkpoints concatenate these.
void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);

// ---- verification ----------------------------------------------------------

// Max over coordinates of |analytic - central difference| scaled by
// max(1, |analytic|, |numeric|). f must build a fresh graph per call and
// return a scalar.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                  double eps = 1e-5);

// Same check restricted to selected coordinates of existing leaf parameters;
// build_loss must be a deterministic forward of the current leaf values.
double grad_check_coords(
    const std::function<Tensor()>& build_loss,
    const std::vector<std::pair<Tensor, std::size_t>>& coords, double eps = 1e-5);

}  // namespace side
