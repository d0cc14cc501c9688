#pragma once

#include <map>
#include <random>
#include <string>
#include <vector>

#include "hcrn/ops.hpp"
#include "hcrn/tensor.hpp"

namespace hcrn {

// Trainable tensors addressed by hierarchical dotted names.
class ParamStore {
 public:
  // Registers a parameter drawn from U(-bound, bound); bound 0 gives zeros.
  Tensor create(const std::string& name, Shape shape, double bound, std::mt19937_64& rng);
  // Registers an existing tensor (shape and values kept).
  Tensor adopt(const std::string& name, Tensor value);

  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  const std::map<std::string, Tensor>& all() const { return params_; }

  std::vector<Tensor> tensors() const;
  std::size_t element_count() const;
  void zero_grad();

 private:
  std::map<std::string, Tensor> params_;
};

// Affine map with its parameters; bias may be absent.
struct Linear {
  Tensor weight;
  Tensor bias;

  Tensor operator()(const Tensor& x) const { return ops::linear(x, weight, bias); }
  std::size_t in_features() const { return weight.shape()[0]; }
  std::size_t out_features() const { return weight.shape()[1]; }
};

// Creates `<prefix>.weight` [in, out] and, unless `with_bias` is false,
// `<prefix>.bias` [out], both U(-1/sqrt(in), 1/sqrt(in)).
Linear make_linear(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                   std::mt19937_64& rng, bool with_bias = true);

}  // namespace hcrn
