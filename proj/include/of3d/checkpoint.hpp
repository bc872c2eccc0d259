#pragma once

// Named-tensor containers and the binary checkpoint format.
//
//   OF3D-CKPT v1\n
//   <name>\n
//   <d0> <d1> ...\n
//   <byte count>\n
//   <little-endian IEEE-754 binary64 payload, row-major>\n
//
// repeated per tensor, in lexicographic name order.

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>

#include "of3d/tensor.hpp"

namespace of3d {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using TensorMap = std::map<std::string, Tensor>;

// Trainable parameters keyed by dotted name. Every registered tensor is a
// leaf that requires gradients.
class ParamStore {
 public:
  const Tensor& add(const std::string& name, const Tensor& value);
  // Stores `value` itself (shared, not copied), replacing any previous entry.
  void bind(const std::string& name, const Tensor& value);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.contains(name); }
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;

  const TensorMap& tensors() const { return params_; }
  TensorMap& tensors() { return params_; }

  void zero_grad();
  // Independent copy with fresh gradient state.
  ParamStore clone() const;

 private:
  TensorMap params_;
};

void save_checkpoint(const std::filesystem::path& path, const TensorMap& tensors);
TensorMap load_checkpoint(const std::filesystem::path& path);

std::string encode_checkpoint(const TensorMap& tensors);
TensorMap decode_checkpoint(const std::string& bytes);

}  // namespace of3d
