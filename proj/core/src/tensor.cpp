#include "hcrn/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>

namespace hcrn {

namespace {

thread_local Tape* g_active_tape = nullptr;
std::atomic<std::uint64_t> g_next_tape_id{1};

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void TensorNode::accumulate_grad(std::span<const double> g) {
  auto& buf = ensure_grad();
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

Buffer& TensorNode::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = hcrn::numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  for (auto e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
  }
  if (hcrn::numel(shape) != values.size()) {
    throw ShapeError("shape " + to_string(shape) + " holds " + std::to_string(hcrn::numel(shape)) +
                     " values, got " + std::to_string(values.size()));
  }
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->data.assign(values.begin(), values.end());
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  Shape s{values.size()};
  return from(std::move(s), std::move(values), requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + to_string(shape()));
  }
  return shape()[axis];
}

std::size_t Tensor::numel() const { return node_->data.size(); }

std::span<const double> Tensor::data() const { return node_->data; }
std::span<double> Tensor::mutable_data() { return node_->data; }
std::span<const double> Tensor::grad() const { return node_->grad; }
bool Tensor::has_grad() const { return !node_->grad.empty(); }

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
void Tensor::set_requires_grad(bool value) { node_->requires_grad = value; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return node_->data[0];
}

Tensor Tensor::clone() const {
  return from(shape(), std::vector<double>(node_->data.begin(), node_->data.end()), node_->requires_grad && node_->tape_id == 0);
}

Tape::Tape() : id_(g_next_tape_id.fetch_add(1)) {}

void Tape::record(std::string op, std::shared_ptr<TensorNode> output, BackwardFn fn) {
  if (consumed_) throw GradientError("cannot record on a tape after backward; call reset() first");
  output->tape_id = id_;
  entries_.push_back({std::move(output), std::move(fn)});
  op_names_.push_back(std::move(op));
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw GradientError("backward called twice on the same tape without reset()");
  if (!loss.defined() || loss.numel() != 1) {
    throw GradientError("backward requires a scalar loss, got shape " +
                        (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  }
  if (loss.node()->tape_id != id_) throw GradientError("loss was not produced by this tape");
  consumed_ = true;
  loss.node()->ensure_grad()[0] += 1.0;
  backward_order_.clear();
  backward_order_.reserve(entries_.size());
  for (std::size_t i = entries_.size(); i-- > 0;) {
    auto& e = entries_[i];
    backward_order_.push_back(i);
    if (e.output->grad.empty()) continue;
    e.fn(e.output->grad);
  }
}

void Tape::reset() {
  entries_.clear();
  op_names_.clear();
  backward_order_.clear();
  consumed_ = false;
}

Tape* Tape::active() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(g_active_tape) { g_active_tape = nullptr; }
NoGradScope::~NoGradScope() { g_active_tape = previous_; }

void backward(const Tensor& loss) {
  auto* tape = Tape::active();
  if (tape == nullptr) throw GradientError("backward called with no active tape");
  tape->backward(loss);
}

}  // namespace hcrn
