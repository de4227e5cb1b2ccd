#include "pursuit/autodiff/param_store.hpp"

#include <cmath>
#include <stdexcept>

namespace pursuit::ad {

DiffArray& ParamStore::add(const std::string& name, Shape shape, std::vector<double> values) {
  if (entries_.count(name) != 0) throw std::invalid_argument("ParamStore: duplicate parameter " + name);
  const std::size_t n = values.size();
  Entry entry{DiffArray::parameter(std::move(shape), std::move(values)), std::vector<double>(n, 0.0),
              std::vector<double>(n, 0.0)};
  return entries_.emplace(name, std::move(entry)).first->second.value;
}

const DiffArray& ParamStore::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("ParamStore: no parameter named " + name);
  return it->second.value;
}

DiffArray& ParamStore::get(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("ParamStore: no parameter named " + name);
  return it->second.value;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, entry] : entries_) out.push_back(name);
  return out;
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, entry] : entries_) n += entry.value.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [name, entry] : entries_) entry.value.zero_grad();
}

double ParamStore::grad_norm() const {
  double sq = 0.0;
  for (const auto& [name, entry] : entries_)
    for (double g : entry.value.grad()) sq += g * g;
  return std::sqrt(sq);
}

ParamStore ParamStore::clone() const {
  ParamStore copy;
  for (const auto& [name, entry] : entries_) {
    const auto v = entry.value.values();
    copy.add(name, entry.value.shape(), std::vector<double>(v.begin(), v.end()));
  }
  copy.step_ = step_;
  return copy;
}

double ParamStore::adam_step(const AdamConfig& config) {
  const double norm = grad_norm();
  const double clip = (config.clip_norm > 0.0 && norm > config.clip_norm) ? config.clip_norm / norm : 1.0;
  ++step_;
  const double t = static_cast<double>(step_);
  const double bias1 = 1.0 - std::pow(config.beta1, t);
  const double bias2 = 1.0 - std::pow(config.beta2, t);
  for (auto& [name, entry] : entries_) {
    if (!entry.value.has_grad()) continue;
    auto w = entry.value.mutable_values();
    auto g = entry.value.mutable_grad();
    auto& m = entry.first_moment;
    auto& v = entry.second_moment;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i] * clip;
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * gi;
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * gi * gi;
      const double mhat = m[i] / bias1;
      const double vhat = v[i] / bias2;
      w[i] -= config.lr * mhat / (std::sqrt(vhat) + config.eps);
      g[i] = 0.0;
    }
  }
  return norm;
}

double adam_step(ParamStore& store, double lr, double clip_norm) {
  AdamConfig config;
  config.lr = lr;
  config.clip_norm = clip_norm;
  return store.adam_step(config);
}

}  // namespace pursuit::ad
