#include "par/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace par {

namespace {

thread_local Tape* g_current_tape = nullptr;
thread_local bool g_strict_finite = false;

std::size_t product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void set_strict_finite(bool on) { g_strict_finite = on; }
bool strict_finite() { return g_strict_finite; }

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  for (auto extent : shape) {
    if (extent == 0) throw ContractViolation("tensor: zero extent in shape " + shape_str(shape));
  }
  if (shape.empty()) throw ContractViolation("tensor: empty shape");
  if (product(shape) != data.size()) {
    throw ContractViolation("tensor: shape " + shape_str(shape) + " does not hold " +
                            std::to_string(data.size()) + " values");
  }
  impl_ = std::make_shared<detail::TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return filled(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::filled(Shape shape, double value, bool requires_grad) {
  const auto n = product(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data, bool requires_grad) {
  return Tensor({rows, cols}, std::move(data), requires_grad);
}

Tensor Tensor::row(std::vector<double> values, bool requires_grad) {
  const auto n = values.size();
  return Tensor({1, n}, std::move(values), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({1, 1}, {value}, requires_grad); }

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows, bool requires_grad) {
  std::vector<double> data;
  std::size_t cols = rows.size() ? rows.begin()->size() : 0;
  for (const auto& r : rows) {
    if (r.size() != cols) throw ContractViolation("from_rows: ragged rows");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor({rows.size(), cols}, std::move(data), requires_grad);
}

const Shape& Tensor::shape() const {
  if (!impl_) throw ContractViolation("tensor: use of undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::numel() const { return impl_ ? impl_->data.size() : 0; }

std::size_t Tensor::rows() const {
  const auto& s = shape();
  return s.size() == 1 ? 1 : product(Shape(s.begin(), s.end() - 1));
}

std::size_t Tensor::cols() const { return shape().back(); }

std::span<const double> Tensor::data() const {
  if (!impl_) throw ContractViolation("tensor: use of undefined tensor");
  return impl_->data;
}

std::span<double> Tensor::mutable_data() {
  if (!impl_) throw ContractViolation("tensor: use of undefined tensor");
  if (impl_->tape != nullptr) throw ContractViolation("tensor: cannot mutate a value recorded on a tape");
  return impl_->data;
}

double Tensor::operator()(std::size_t r, std::size_t c) const {
  const auto nc = cols();
  if (r >= rows() || c >= nc) throw ContractViolation("tensor: index out of range");
  return impl_->data[r * nc + c];
}

double Tensor::item() const {
  if (numel() != 1) throw ContractViolation("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  return impl_->data[0];
}

std::vector<double> Tensor::row_values(std::size_t r) const {
  const auto nc = cols();
  if (r >= rows()) throw ContractViolation("row_values: row out of range");
  return {impl_->data.begin() + static_cast<std::ptrdiff_t>(r * nc),
          impl_->data.begin() + static_cast<std::ptrdiff_t>((r + 1) * nc)};
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  if (!impl_) throw ContractViolation("tensor: use of undefined tensor");
  if (impl_->tape != nullptr) throw ContractViolation("set_requires_grad: tensor is a recorded op result");
  impl_->requires_grad = on;
}

std::optional<std::size_t> Tensor::tape_id() const {
  if (!impl_ || impl_->tape == nullptr) return std::nullopt;
  return impl_->node;
}

Tensor Tensor::detach() const { return Tensor(shape(), impl_->data, false); }

Tensor Tensor::clone() const { return Tensor(shape(), impl_->data, impl_->requires_grad); }

// ---------------------------------------------------------------------------
// GradientMap

bool GradientMap::contains(const Tensor& t) const { return grads_.count(t.handle()) != 0; }

std::vector<double> GradientMap::get(const Tensor& t) const {
  auto it = grads_.find(t.handle());
  if (it == grads_.end()) return std::vector<double>(t.numel(), 0.0);
  return it->second;
}

const std::vector<double>* GradientMap::find(const Tensor& t) const {
  auto it = grads_.find(t.handle());
  return it == grads_.end() ? nullptr : &it->second;
}

void GradientMap::set(const Tensor& t, std::vector<double> g) {
  if (g.size() != t.numel()) throw ContractViolation("GradientMap::set: size mismatch");
  grads_[t.handle()] = std::move(g);
}

// ---------------------------------------------------------------------------
// Tape

Tape::Scope::Scope(Tape& tape) : prev_(g_current_tape) { g_current_tape = &tape; }
Tape::Scope::~Scope() { g_current_tape = prev_; }

Tape* Tape::current() { return g_current_tape; }

std::size_t Tape::node_for_input(const Tensor& t) {
  const auto& impl = t.impl();
  if (!impl->requires_grad) return kNoGrad;
  if (impl->tape != nullptr) {
    if (impl->tape != this) throw ContractViolation("tape: input was recorded on a different tape");
    return impl->node;
  }
  auto [it, inserted] = leaves_.try_emplace(impl.get(), nodes_.size());
  if (inserted) {
    Node leaf;
    leaf.value = impl;
    nodes_.push_back(std::move(leaf));
  }
  return it->second;
}

std::size_t Tape::record(const char* name, const std::shared_ptr<detail::TensorImpl>& out,
                         std::vector<std::size_t> inputs, BackwardFn fn) {
  if (consumed_) throw TapeStateError("tape: cannot record on a consumed tape");
  Node node;
  node.name = name;
  node.value = out;
  node.inputs = std::move(inputs);
  node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

std::vector<std::string> Tape::op_names() const {
  std::vector<std::string> names;
  names.reserve(nodes_.size());
  for (const auto& n : nodes_) names.emplace_back(n.name);
  return names;
}

GradientMap Tape::backward(const Tensor& loss, std::span<const Tensor> wrt) {
  if (consumed_) throw TapeStateError("backward: tape already consumed");
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractViolation("backward: loss must be a scalar, got " +
                            (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  consumed_ = true;

  std::vector<std::vector<double>> grads(nodes_.size());
  const auto& limpl = loss.impl();
  if (limpl->tape == this) {
    grads[limpl->node].assign(1, 1.0);
  } else if (limpl->requires_grad) {
    auto it = leaves_.find(limpl.get());
    if (it != leaves_.end()) grads[it->second].assign(1, 1.0);
  }

  std::vector<std::vector<double>*> in_ptrs;
  for (std::size_t k = nodes_.size(); k-- > 0;) {
    Node& node = nodes_[k];
    if (!node.backward || grads[k].empty()) continue;
    in_ptrs.assign(node.inputs.size(), nullptr);
    for (std::size_t j = 0; j < node.inputs.size(); ++j) {
      const auto id = node.inputs[j];
      if (id == kNoGrad) continue;
      auto& buf = grads[id];
      if (buf.empty()) buf.assign(nodes_[id].value->data.size(), 0.0);
      in_ptrs[j] = &buf;
    }
    node.backward(grads[k], in_ptrs);
  }

  GradientMap out;
  for (std::size_t k = 0; k < nodes_.size(); ++k) {
    if (grads[k].empty()) continue;
    out.set(Tensor(nodes_[k].value), std::move(grads[k]));
  }
  for (const auto& t : wrt) {
    if (!out.contains(t)) out.set(t, std::vector<double>(t.numel(), 0.0));
  }
  return out;
}

// ---------------------------------------------------------------------------

Tensor make_op_result(const char* name, Shape shape, std::vector<double> data,
                      const std::vector<Tensor>& inputs, BackwardFn fn) {
  if (g_strict_finite) {
    for (double v : data) {
      if (!std::isfinite(v)) throw NumericalFault(std::string(name) + ": non-finite value in result");
    }
  }
  Tensor out(std::move(shape), std::move(data), false);
  Tape* tape = g_current_tape;
  if (tape == nullptr) return out;

  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;

  std::vector<std::size_t> ids;
  ids.reserve(inputs.size());
  for (const auto& in : inputs) ids.push_back(tape->node_for_input(in));
  out.impl_->requires_grad = true;
  out.impl_->node = tape->record(name, out.impl_, std::move(ids), std::move(fn));
  out.impl_->tape = tape;
  return out;
}

}  // namespace par
