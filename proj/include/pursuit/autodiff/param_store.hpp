#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pursuit/autodiff/diff_array.hpp"

namespace pursuit::ad {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 0.5;
};

/// Named trainable parameters plus their adaptive-moment state. Iteration is
/// lexicographic by name.
class ParamStore {
 public:
  struct Entry {
    DiffArray value;
    std::vector<double> first_moment;
    std::vector<double> second_moment;
  };

  /// Registers a new parameter; duplicate names are rejected.
  DiffArray& add(const std::string& name, Shape shape, std::vector<double> values);

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const DiffArray& get(const std::string& name) const;
  DiffArray& get(const std::string& name);

  std::vector<std::string> names() const;
  std::size_t size() const { return entries_.size(); }
  std::size_t parameter_count() const;
  std::uint64_t step() const { return step_; }
  void set_step(std::uint64_t step) { step_ = step; }

  const std::map<std::string, Entry>& entries() const { return entries_; }
  std::map<std::string, Entry>& entries() { return entries_; }

  void zero_grad();
  /// Global 2-norm over all gradients (missing gradients count as zero).
  double grad_norm() const;

  /// Deep copy of the values with fresh moments; the copy shares nothing.
  ParamStore clone() const;

  /// Applies the clipped Adam update and zeroes gradients. Returns the global
  /// gradient norm measured before clipping.
  double adam_step(const AdamConfig& config);

 private:
  std::map<std::string, Entry> entries_;
  std::uint64_t step_ = 0;
};

double adam_step(ParamStore& store, double lr, double clip_norm);

}  // namespace pursuit::ad
