#include "side/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "side/errors.hpp"

namespace side {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace {

// Recording order of the tape; a graph and its tensors stay on one thread.
thread_local std::uint64_t g_seq = 0;

std::shared_ptr<detail::Node> new_node(Shape shape, std::vector<double> value) {
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->seq = ++g_seq;
  return n;
}

#ifndef NDEBUG
void check_finite(const char* op_name, const std::vector<double>& v) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw NumericError(std::string(op_name) + ": non-finite output at index " +
                         std::to_string(i));
    }
  }
}
#endif

}  // namespace

Tensor OpBuilder::leaf(Shape shape, std::vector<double> value, bool requires_grad) {
  if (shape_numel(shape) != value.size()) {
    throw ShapeError("tensor: shape " + shape_str(shape) + " expects " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(value.size()));
  }
  for (std::size_t e : shape) {
    if (e == 0) throw ShapeError("tensor: zero extent in shape " + shape_str(shape));
  }
  auto n = new_node(std::move(shape), std::move(value));
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor OpBuilder::make(
    const char* op_name, Shape shape, std::vector<double> value,
    const std::vector<Tensor>& inputs,
    std::function<void(const std::vector<double>&,
                       const std::vector<std::vector<double>*>&)>
        backprop) {
#ifndef NDEBUG
  check_finite(op_name, value);
#else
  (void)op_name;
#endif
  auto n = new_node(std::move(shape), std::move(value));
  bool rg = false;
  for (const Tensor& t : inputs) rg = rg || t.requires_grad();
  n->requires_grad = rg;
  if (rg) {
    n->parents.reserve(inputs.size());
    for (const Tensor& t : inputs) n->parents.push_back(t.node_ptr());
    n->backprop = std::move(backprop);
  }
  return Tensor(std::move(n));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::vector<double> v(shape_numel(shape), 0.0);
  return OpBuilder::leaf(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> v(shape_numel(shape), value);
  return OpBuilder::leaf(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  return OpBuilder::leaf(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return OpBuilder::leaf(Shape{}, std::vector<double>{value}, requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::size() const { return node_->value.size(); }

std::size_t Tensor::extent(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("tensor: axis " + std::to_string(axis) +
                     " out of range for shape " + shape_str(shape()));
  }
  return node_->shape[axis];
}

const std::vector<double>& Tensor::data() const { return node_->value; }

std::vector<double>& Tensor::mutable_data() { return node_->value; }

double Tensor::item() const {
  if (size() != 1) {
    throw ShapeError("tensor: item() needs a scalar, got " + shape_str(shape()));
  }
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

const std::vector<double>& Tensor::grad() const {
  if (!has_grad()) throw NumericError("tensor: grad not populated");
  return node_->grad;
}

void Tensor::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  return OpBuilder::leaf(node_->shape, node_->value, false);
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("<empty>")));
  }
  detail::Node* root = loss.node();
  if (!root->requires_grad) return;

  // Collect ancestors; reverse recording order visits each node after all of
  // its consumers, so per-pass gradients are complete when propagated.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<detail::Node*> stack{root};
  seen.insert(root);
  while (!stack.empty()) {
    detail::Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(),
            [](const detail::Node* a, const detail::Node* b) { return a->seq > b->seq; });

  // Per-pass scratch buffers keep repeated backward() calls from
  // double-counting earlier passes; persistent grads accumulate at the end.
  std::unordered_map<detail::Node*, std::vector<double>> scratch;
  scratch[root] = std::vector<double>{1.0};

  std::vector<std::vector<double>*> parent_bufs;
  for (detail::Node* n : order) {
    auto it = scratch.find(n);
    if (it == scratch.end()) continue;
    if (!n->backprop) continue;
    parent_bufs.clear();
    parent_bufs.reserve(n->parents.size());
    for (const auto& p : n->parents) {
      if (!p->requires_grad) {
        parent_bufs.push_back(nullptr);
        continue;
      }
      auto& buf = scratch[p.get()];
      if (buf.empty()) buf.assign(p->value.size(), 0.0);
      parent_bufs.push_back(&buf);
    }
    n->backprop(it->second, parent_bufs);
  }

  for (detail::Node* n : order) {
    auto it = scratch.find(n);
    if (it == scratch.end()) continue;
    if (n->grad.empty()) n->grad.assign(n->value.size(), 0.0);
    const std::vector<double>& g = it->second;
    for (std::size_t i = 0; i < g.size(); ++i) n->grad[i] += g[i];
  }
}

// ---- serialization ---------------------------------------------------------

namespace {

constexpr char kTensorMagic[4] = {'S', 'R', 'T', 'T'};

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

void put_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

// Tracks the absolute byte offset so malformed streams can be reported
// precisely even when the tensor block sits inside a larger file.
struct BlockReader {
  std::istream& in;
  std::size_t offset;

  explicit BlockReader(std::istream& s) : in(s) {
    const auto pos = s.tellg();
    offset = pos < 0 ? 0 : static_cast<std::size_t>(pos);
  }

  void bytes(void* dst, std::size_t n, const char* what) {
    in.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n) {
      throw ParseError(std::string("tensor block: truncated ") + what, offset);
    }
    offset += n;
  }

  std::uint32_t u32(const char* what) {
    unsigned char b[4];
    bytes(b, 4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }

  std::uint64_t u64(const char* what) {
    unsigned char b[8];
    bytes(b, 8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }

  double f64(const char* what) {
    std::uint64_t bits = u64(what);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
};

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
  out.write(kTensorMagic, 4);
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t e : t.shape()) put_u64(out, e);
  for (double v : t.data()) put_f64(out, v);
}

Tensor read_tensor(std::istream& in) {
  BlockReader r(in);
  const std::size_t magic_at = r.offset;
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, kTensorMagic, 4) != 0) {
    throw ParseError("tensor block: bad magic, expected SRTT", magic_at);
  }
  const std::size_t rank_at = r.offset;
  std::uint32_t rank = r.u32("rank");
  if (rank > 16) {
    throw ParseError("tensor block: implausible rank " + std::to_string(rank),
                     rank_at);
  }
  Shape shape(rank);
  for (auto& e : shape) e = static_cast<std::size_t>(r.u64("extent"));
  std::size_t n = shape_numel(shape);
  std::vector<double> data(n);
  for (auto& v : data) v = r.f64("payload");
  return Tensor::from_data(std::move(shape), std::move(data));
}

}  // namespace side
