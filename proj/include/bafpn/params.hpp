#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "bafpn/errors.hpp"
#include "bafpn/tensor.hpp"

namespace bafpn {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  std::string init;
};

// Ordered collection of named trainable tensors. Iteration order is creation
// order, which fixes optimizer-update and checkpoint-entry order.
template <typename T>
class ParamRegistry {
 public:
  Tensor<T> add(std::string name, Tensor<T> value, std::string init) {
    if (index_.count(name)) throw ContractError("duplicate parameter name: " + name);
    value.set_requires_grad(true);
    index_.emplace(name, items_.size());
    items_.push_back(Parameter<T>{std::move(name), value, std::move(init)});
    return items_.back().value;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Parameter<T>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw NameError("no parameter named '" + name + "'");
    return items_[it->second];
  }

  std::size_t size() const { return items_.size(); }
  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

  std::int64_t total_count() const {
    std::int64_t n = 0;
    for (const auto& p : items_) n += p.value.numel();
    return n;
  }

  void zero_grads() {
    for (auto& p : items_) p.value.zero_grad();
  }

 private:
  std::vector<Parameter<T>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace bafpn
