#pragma once

// Dense tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a cheap handle onto shared storage. Operations executed while a
// Tape is installed on the current thread (see TapeScope) are recorded when at
// least one input requires a gradient; Tape::backward replays them in reverse.
// Without an installed tape nothing is recorded, which is the inference mode.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <new>
#include <string>
#include <vector>

namespace hcrn {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class GradientError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Fixed 64-byte alignment keeps vectorized reductions bitwise reproducible
// regardless of where the allocator happens to place a buffer.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

struct TensorNode {
  Shape shape;
  Buffer data;
  // Empty until a gradient reaches this node.
  Buffer grad;
  bool requires_grad = false;
  // Id of the tape that produced this node; 0 for leaves.
  std::uint64_t tape_id = 0;

  void accumulate_grad(std::span<const double> g);
  Buffer& ensure_grad();
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  // Empty span when no gradient has been accumulated.
  std::span<const double> grad() const;
  bool has_grad() const;
  void zero_grad();

  bool requires_grad() const;
  void set_requires_grad(bool value);

  double item() const;
  double operator[](std::size_t flat_index) const { return data()[flat_index]; }

  // Deep copy detached from any tape.
  Tensor clone() const;

  const std::shared_ptr<TensorNode>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<TensorNode> node_;
};

// Ordered record of executed differentiable operations.
class Tape {
 public:
  using BackwardFn = std::function<void(std::span<const double> output_grad)>;

  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::uint64_t id() const { return id_; }
  std::size_t size() const { return entries_.size(); }
  bool consumed() const { return consumed_; }

  void record(std::string op, std::shared_ptr<TensorNode> output, BackwardFn fn);

  // Seeds d(loss)/d(loss) = 1 and replays every entry once, newest first.
  void backward(const Tensor& loss);

  // Drops all entries so the tape can be reused.
  void reset();

  std::span<const std::string> op_names() const { return op_names_; }
  // Entry indices in the order the last backward pass visited them.
  std::span<const std::size_t> last_backward_order() const { return backward_order_; }

  // Tape installed on this thread, or nullptr.
  static Tape* active();

 private:
  friend class TapeScope;
  struct Entry {
    std::shared_ptr<TensorNode> output;
    BackwardFn fn;
  };

  std::uint64_t id_;
  bool consumed_ = false;
  std::vector<Entry> entries_;
  std::vector<std::string> op_names_;
  std::vector<std::size_t> backward_order_;
};

// Installs a tape on the current thread for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Disables recording for the scope's lifetime.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

// Runs backward on the tape that produced `loss`, which must be the active one.
void backward(const Tensor& loss);

}  // namespace hcrn
