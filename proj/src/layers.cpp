#include "of3d/layers.hpp"

#include <cmath>
#include <vector>

namespace of3d {

void add_linear(ParamStore& params, const std::string& name, std::size_t in,
                std::size_t out, Rng& rng, bool bias) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  std::vector<double> w(in * out);
  for (double& v : w) v = rng.uniform(-bound, bound);
  params.add(name + ".weight", Tensor::from({in, out}, std::move(w)));
  if (bias) params.add(name + ".bias", Tensor::zeros({1, out}));
}

void add_norm(ParamStore& params, const std::string& name, std::size_t width) {
  params.add(name + ".gain", Tensor::full({1, width}, 1.0));
  params.add(name + ".bias", Tensor::zeros({1, width}));
}

Tensor apply_linear(const ParamStore& params, const std::string& name, const Tensor& x) {
  const std::string bias = name + ".bias";
  if (!params.contains(bias)) return matmul(x, params.get(name + ".weight"));
  return linear(x, params.get(name + ".weight"), params.get(bias));
}

Tensor apply_norm(const ParamStore& params, const std::string& name, const Tensor& x) {
  return layer_norm(x, params.get(name + ".gain"), params.get(name + ".bias"), kNormEps);
}

}  // namespace of3d
