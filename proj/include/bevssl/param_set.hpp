#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "bevssl/error.hpp"
#include "bevssl/tensor.hpp"

namespace bevssl {

struct Param {
  std::string name;
  Tensor value;
  std::vector<double> grad;
  // adaptive-moment optimizer state
  std::vector<double> m;
  std::vector<double> v;
};

// Parameters as bound into one forward pass: differentiable leaves for the
// student, plain constants for the teacher.
class Bindings {
 public:
  const Tensor& operator[](const std::string& name) const {
    auto it = map_.find(name);
    if (it == map_.end()) throw ContractError("bindings: no parameter named '" + name + "'");
    return it->second;
  }
  void set(const std::string& name, Tensor t) { map_[name] = std::move(t); }
  bool contains(const std::string& name) const { return map_.count(name) != 0; }

 private:
  std::unordered_map<std::string, Tensor> map_;
};

// Named, ordered parameter collection. Insertion order is the canonical
// order for checkpoints and optimizer updates.
class ParamSet {
 public:
  void add(std::string name, Tensor value) {
    if (index_.count(name)) throw ContractError("param set: duplicate parameter '" + name + "'");
    index_.emplace(name, params_.size());
    Param p;
    p.name = std::move(name);
    p.grad.assign(value.size(), 0.0);
    p.value = value.detach();
    params_.push_back(std::move(p));
  }

  std::size_t size() const { return params_.size(); }
  bool empty() const { return params_.empty(); }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Param& at(const std::string& name) { return params_[lookup(name)]; }
  const Param& at(const std::string& name) const { return params_[lookup(name)]; }
  Param& operator[](std::size_t i) { return params_[i]; }
  const Param& operator[](std::size_t i) const { return params_[i]; }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void set_value(const std::string& name, Tensor value) {
    Param& p = at(name);
    if (value.shape() != p.value.shape()) {
      throw ContractError("param set: shape change for '" + name + "' " + shape_str(p.value.shape()) + " -> " +
                          shape_str(value.shape()));
    }
    p.value = value.detach();
  }

  // Leaves on `tape` when given, constants otherwise.
  Bindings bind(Tape* tape) const {
    Bindings b;
    for (const Param& p : params_) b.set(p.name, tape ? tape->leaf(p.value, p.name) : p.value);
    return b;
  }

  void zero_grad() {
    for (Param& p : params_) std::fill(p.grad.begin(), p.grad.end(), 0.0);
  }

  std::size_t element_count() const {
    std::size_t n = 0;
    for (const Param& p : params_) n += p.value.size();
    return n;
  }

  // Same names, shapes and values (optimizer state is ignored).
  bool same_values(const ParamSet& other) const {
    if (other.size() != size()) return false;
    for (std::size_t i = 0; i < size(); ++i) {
      if (params_[i].name != other.params_[i].name || !params_[i].value.same_values(other.params_[i].value)) {
        return false;
      }
    }
    return true;
  }

 private:
  std::size_t lookup(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("param set: no parameter named '" + name + "'");
    return it->second;
  }

  std::vector<Param> params_;
  std::map<std::string, std::size_t> index_;
};

// Runs the reverse sweep and writes every parameter gradient. Parameters that
// are not leaves of this tape, or do not reach the loss, get zeros.
inline void backward(const Tensor& loss, ParamSet& params) {
  if (loss.size() != 1) throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  if (!loss.tape()) throw ContractError("backward: loss is not differentiable");
  const Tape& tape = *loss.tape();
  auto grads = tape.gradients(loss);
  params.zero_grad();
  for (NodeId id = 0; id < tape.size(); ++id) {
    const TapeNode& n = tape.node(id);
    if (n.kind != OpKind::leaf || n.name.empty() || !params.contains(n.name) || grads[id].empty()) continue;
    Param& p = params.at(n.name);
    for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += grads[id][i];
  }
}

}  // namespace bevssl
