#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "uav/core/digest.hpp"
#include "uav/core/errors.hpp"
#include "uav/core/rng.hpp"
#include "uav/core/tensor.hpp"

namespace uav {

/// Named parameters in lexicographic order, each flagged trainable or frozen.
///
/// Copying performs a deep copy so that a snapshot never aliases live weights.
/// A frozen entry never carries requires_grad, so no gradient can be
/// accumulated into it; assert_no_frozen_grads() turns any breach into a
/// FreezeViolation.
template <std::floating_point T>
class BasicParamStore {
 public:
  struct Entry {
    BasicTensor<T> tensor;
    bool trainable = false;
  };

  BasicParamStore() = default;
  BasicParamStore(BasicParamStore&&) noexcept = default;
  BasicParamStore& operator=(BasicParamStore&&) noexcept = default;

  BasicParamStore(const BasicParamStore& other) {
    for (const auto& [name, e] : other.entries_) entries_.emplace(name, Entry{e.tensor.clone(), e.trainable});
  }

  BasicParamStore& operator=(const BasicParamStore& other) {
    if (this != &other) {
      BasicParamStore copy(other);
      *this = std::move(copy);
    }
    return *this;
  }

  void add(const std::string& name, BasicTensor<T> tensor, bool trainable) {
    if (name.empty()) throw ConfigError("param store: empty parameter name");
    tensor.set_requires_grad(trainable);
    if (!entries_.emplace(name, Entry{std::move(tensor), trainable}).second)
      throw ConfigError("param store: duplicate parameter '" + name + "'");
  }

  /// Adds a tensor drawn from Normal(0, stddev).
  void add_normal(const std::string& name, Shape shape, double stddev, RngState& rng, bool trainable) {
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(rng.normal() * stddev);
    add(name, BasicTensor<T>(std::move(shape), std::move(v)), trainable);
  }

  void add_constant(const std::string& name, Shape shape, T value, bool trainable) {
    const auto n = shape_numel(shape);
    add(name, BasicTensor<T>(std::move(shape), std::vector<T>(n, value)), trainable);
  }

  [[nodiscard]] bool contains(const std::string& name) const { return entries_.contains(name); }

  [[nodiscard]] const BasicTensor<T>& at(const std::string& name) const { return find(name).tensor; }
  [[nodiscard]] BasicTensor<T>& at(const std::string& name) { return find(name).tensor; }
  [[nodiscard]] bool trainable(const std::string& name) const { return find(name).trainable; }

  void set_trainable(const std::string& name, bool on) {
    auto& e = find(name);
    e.trainable = on;
    e.tensor.set_requires_grad(on);
    if (!on) e.tensor.zero_grad();
  }

  void set_all_trainable(bool on) {
    for (auto& [name, e] : entries_) set_trainable(name, on);
  }

  /// Replaces the values of an existing entry, keeping its role.
  void assign(const std::string& name, BasicTensor<T> tensor) {
    auto& e = find(name);
    if (tensor.shape() != e.tensor.shape())
      throw ShapeError("param store: assigning " + shape_str(tensor.shape()) + " to '" + name + "' of shape " +
                       shape_str(e.tensor.shape()));
    tensor.set_requires_grad(e.trainable);
    e.tensor = std::move(tensor);
  }

  [[nodiscard]] std::size_t size() const { return entries_.size(); }
  [[nodiscard]] bool empty() const { return entries_.empty(); }
  [[nodiscard]] auto begin() const { return entries_.begin(); }
  [[nodiscard]] auto end() const { return entries_.end(); }
  [[nodiscard]] auto begin() { return entries_.begin(); }
  [[nodiscard]] auto end() { return entries_.end(); }

  [[nodiscard]] std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [name, e] : entries_) out.push_back(name);
    return out;
  }

  [[nodiscard]] std::size_t parameter_count(bool trainable_only = false) const {
    std::size_t n = 0;
    for (const auto& [name, e] : entries_)
      if (!trainable_only || e.trainable) n += e.tensor.numel();
    return n;
  }

  void zero_grad() {
    for (auto& [name, e] : entries_) e.tensor.zero_grad();
  }

  void assert_no_frozen_grads(const std::string& owner) const {
    for (const auto& [name, e] : entries_)
      if (!e.trainable && e.tensor.has_grad())
        throw FreezeViolation(owner + ": gradient reached frozen parameter '" + name + "'");
  }

  /// Canonical bytes: per entry name, rank, dims, then values (little-endian).
  [[nodiscard]] std::vector<std::uint8_t> canonical_bytes() const {
    ByteWriter w;
    w.u32(static_cast<std::uint32_t>(entries_.size()));
    for (const auto& [name, e] : entries_) {
      w.u32(static_cast<std::uint32_t>(name.size()));
      w.raw(name);
      w.u32(static_cast<std::uint32_t>(e.tensor.rank()));
      for (const auto d : e.tensor.shape()) w.u32(static_cast<std::uint32_t>(d));
      for (const T v : e.tensor.data()) w.template value<T>(v);
    }
    return w.take();
  }

  /// SHA-256 over canonical_bytes(); equal digests mean bit-identical stores.
  [[nodiscard]] std::string digest() const { return sha256_hex(canonical_bytes()); }

  /// Same names, shapes and roles with values converted to another precision.
  template <std::floating_point U>
  [[nodiscard]] BasicParamStore<U> cast() const {
    BasicParamStore<U> out;
    for (const auto& [name, e] : entries_) {
      std::vector<U> v(e.tensor.data().begin(), e.tensor.data().end());
      out.add(name, BasicTensor<U>(e.tensor.shape(), std::move(v)), e.trainable);
    }
    return out;
  }

 private:
  Entry& find(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw IndexError("param store: no parameter named '" + name + "'");
    return it->second;
  }
  const Entry& find(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw IndexError("param store: no parameter named '" + name + "'");
    return it->second;
  }

  std::map<std::string, Entry> entries_;
};

using ParamStore = BasicParamStore<float>;

}  // namespace uav
