#include "hcrn/params.hpp"

#include <cmath>
#include <stdexcept>

namespace hcrn {

Tensor ParamStore::create(const std::string& name, Shape shape, double bound, std::mt19937_64& rng) {
  std::vector<double> values(numel(shape), 0.0);
  if (bound > 0.0) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : values) v = dist(rng);
  }
  return adopt(name, Tensor::from(std::move(shape), std::move(values)));
}

Tensor ParamStore::adopt(const std::string& name, Tensor value) {
  if (contains(name)) throw std::invalid_argument("parameter '" + name + "' registered twice");
  value.set_requires_grad(true);
  params_.emplace(name, value);
  return value;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return it->second;
}

std::vector<Tensor> ParamStore::tensors() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& [_, t] : params_) out.push_back(t);
  return out;
}

std::size_t ParamStore::element_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [_, t] : params_) {
    auto copy = t;
    copy.zero_grad();
  }
}

Linear make_linear(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                   std::mt19937_64& rng, bool with_bias) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Linear l;
  l.weight = store.create(prefix + ".weight", {in, out}, bound, rng);
  if (with_bias) l.bias = store.create(prefix + ".bias", {out}, bound, rng);
  return l;
}

}  // namespace hcrn
