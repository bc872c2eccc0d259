#pragma once

// Named parameter blocks shared by the encoder and decoder. A linear block
// `name` owns `name.weight` (in×out) and `name.bias` (1×out); a norm block
// owns `name.gain` and `name.bias` (1×width). A linear block registered
// without bias is applied as a plain product.

#include <string>

#include "of3d/checkpoint.hpp"
#include "of3d/random.hpp"
#include "of3d/tensor.hpp"

namespace of3d {

inline constexpr double kNormEps = 1e-5;

// Glorot-uniform weights, zero bias.
void add_linear(ParamStore& params, const std::string& name, std::size_t in,
                std::size_t out, Rng& rng, bool bias = true);
// Unit gain, zero bias.
void add_norm(ParamStore& params, const std::string& name, std::size_t width);

Tensor apply_linear(const ParamStore& params, const std::string& name, const Tensor& x);
Tensor apply_norm(const ParamStore& params, const std::string& name, const Tensor& x);

}  // namespace of3d
