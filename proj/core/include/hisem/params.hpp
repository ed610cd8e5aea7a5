#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hisem/tensor.hpp"

namespace hisem {

/// Seeded generator with toolchain-independent output (std distributions
/// are implementation-defined, so sampling is done by hand).
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  Real uniform();
  /// Standard normal via Box-Muller.
  Real normal();
  /// Uniform integer on [0, n).
  std::size_t below(std::size_t n);

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) std::swap(items[i - 1], items[below(i)]);
  }

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  Real spare_ = 0.0;
};

/// Derives an independent stream seed from a base seed and a salt.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

Tensor normal_parameter(Shape shape, Rng& rng, Real stddev);
Tensor constant_parameter(Shape shape, Real value);

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Ordered registry of trainable tensors. Registration order fixes the
/// optimizer and checkpoint order. A tensor registered under two names
/// (tied weights) is stored once, under the first name.
class ParamStore {
 public:
  Tensor add(const std::string& name, Tensor tensor);
  const std::vector<NamedTensor>& entries() const { return entries_; }
  /// Throws std::out_of_range for unknown names.
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<NamedTensor> entries_;
};

}  // namespace hisem
