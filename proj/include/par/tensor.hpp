#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace par {

/// Raised when an operation's preconditions (shapes, ranges, states) do not hold.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Raised when strict-finite mode is on and an op produces NaN or Inf.
class NumericalFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TapeStateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);

class Tape;

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  // Set only for values produced by a recorded op.
  Tape* tape = nullptr;
  std::size_t node = 0;
};

}  // namespace detail

/// Dense row-major array of doubles with shared-handle semantics.
///
/// Copying a Tensor copies the handle, not the data. Leaves (parameters) may
/// be mutated in place through mutable_data(); values recorded on a tape are
/// immutable. Rank-1 tensors are treated as 1 x n rows by every op, and all
/// op results are rank 2.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, double value, bool requires_grad = false);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data,
                       bool requires_grad = false);
  static Tensor row(std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows,
                          bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t numel() const;
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  /// Writable view; only valid on leaves that are not recorded on any tape.
  std::span<double> mutable_data();

  double operator()(std::size_t r, std::size_t c) const;
  double item() const;
  std::vector<double> row_values(std::size_t r) const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  std::optional<std::size_t> tape_id() const;

  /// Same values, fresh leaf, no gradient tracking.
  Tensor detach() const;
  /// Same values, fresh leaf, keeps requires_grad.
  Tensor clone() const;

  const detail::TensorImpl* handle() const { return impl_.get(); }
  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  friend class Tape;
  friend Tensor make_op_result(const char*, Shape, std::vector<double>, const std::vector<Tensor>&,
                               std::function<void(std::span<const double>,
                                                  std::span<std::vector<double>* const>)>);

  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Gradients produced by one backward pass, keyed by tensor handle.
class GradientMap {
 public:
  bool contains(const Tensor& t) const;
  /// Gradient of t; zeros when t was not reached.
  std::vector<double> get(const Tensor& t) const;
  const std::vector<double>* find(const Tensor& t) const;
  void set(const Tensor& t, std::vector<double> g);
  std::size_t size() const { return grads_.size(); }

 private:
  std::unordered_map<const detail::TensorImpl*, std::vector<double>> grads_;
};

using BackwardFn =
    std::function<void(std::span<const double> grad_out, std::span<std::vector<double>* const> grad_in)>;

/// Records differentiable ops in execution order and replays them backward.
///
/// A tape is single-owner. Ops record onto the tape made current on the calling
/// thread via Tape::Scope; ops run outside any scope are not recorded.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  class Scope {
   public:
    explicit Scope(Tape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* prev_;
  };

  static Tape* current();

  /// Reverse pass from a scalar loss. Every tensor in `wrt` gets an entry,
  /// zero-filled if the loss does not depend on it.
  GradientMap backward(const Tensor& loss, std::span<const Tensor> wrt = {});

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }
  /// Names of recorded ops in recording order.
  std::vector<std::string> op_names() const;

  // Used by op implementations.
  std::size_t node_for_input(const Tensor& t);
  std::size_t record(const char* name, const std::shared_ptr<detail::TensorImpl>& out,
                     std::vector<std::size_t> inputs, BackwardFn fn);

  static constexpr std::size_t kNoGrad = static_cast<std::size_t>(-1);

 private:
  struct Node {
    const char* name = "leaf";
    std::shared_ptr<detail::TensorImpl> value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::unordered_map<const detail::TensorImpl*, std::size_t> leaves_;
  bool consumed_ = false;
};

/// Builds an op result; records it on the current tape when any input needs a gradient.
Tensor make_op_result(const char* name, Shape shape, std::vector<double> data,
                      const std::vector<Tensor>& inputs, BackwardFn fn);

/// When on, every op result is checked for NaN/Inf (thread-local switch).
void set_strict_finite(bool on);
bool strict_finite();

}  // namespace par
