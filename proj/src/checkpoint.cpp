#include "of3d/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>

#include "of3d/text_io.hpp"

namespace of3d {

namespace {

constexpr std::string_view kMagic = "OF3D-CKPT v1";

void put_le64(std::string& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>(bits & 0xffu));
    bits >>= 8;
  }
}

double get_le64(const char* p) {
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) {
    bits = (bits << 8) | static_cast<unsigned char>(p[i]);
  }
  return std::bit_cast<double>(bits);
}

}  // namespace

const Tensor& ParamStore::add(const std::string& name, const Tensor& value) {
  if (params_.contains(name)) {
    throw std::invalid_argument("duplicate parameter " + name);
  }
  return params_.emplace(name, value.clone(true)).first->second;
}

void ParamStore::bind(const std::string& name, const Tensor& value) {
  params_.insert_or_assign(name, value);
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("no parameter named " + name);
  return it->second;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [_, t] : params_) t.zero_grad();
}

ParamStore ParamStore::clone() const {
  ParamStore out;
  for (const auto& [name, t] : params_) out.params_.emplace(name, t.clone(true));
  return out;
}

std::string encode_checkpoint(const TensorMap& tensors) {
  std::string out;
  out.append(kMagic).push_back('\n');
  for (const auto& [name, t] : tensors) {
    if (name.empty() || name.find_first_of(" \n\r\t") != std::string::npos) {
      throw CheckpointError("invalid tensor name '" + name + "'");
    }
    out.append(name).push_back('\n');
    for (std::size_t i = 0; i < t.rank(); ++i) {
      if (i) out.push_back(' ');
      out.append(std::to_string(t.shape()[i]));
    }
    out.push_back('\n');
    out.append(std::to_string(t.numel() * 8)).push_back('\n');
    for (double v : t.data()) put_le64(out, v);
    out.push_back('\n');
  }
  return out;
}

TensorMap decode_checkpoint(const std::string& bytes) {
  std::size_t pos = 0;
  auto read_line = [&](const char* what) {
    const std::size_t end = bytes.find('\n', pos);
    if (end == std::string::npos) {
      throw CheckpointError(std::string("truncated checkpoint reading ") + what);
    }
    std::string line = bytes.substr(pos, end - pos);
    pos = end + 1;
    return line;
  };
  if (read_line("header") != kMagic) {
    throw CheckpointError("not an OF3D-CKPT v1 file");
  }
  TensorMap out;
  while (pos < bytes.size()) {
    std::string name = read_line("name");
    Shape shape;
    for (auto tok : split_ws(read_line("shape"))) {
      long long d = 0;
      if (!parse_int(tok, d) || d <= 0) {
        throw CheckpointError("bad shape for tensor " + name);
      }
      shape.push_back(static_cast<std::size_t>(d));
    }
    long long length = 0;
    if (!parse_int(read_line("payload length"), length) || length < 0) {
      throw CheckpointError("bad payload length for tensor " + name);
    }
    if (shape.empty() || static_cast<std::size_t>(length) != shape_numel(shape) * 8) {
      throw CheckpointError("payload length does not match shape for " + name);
    }
    if (pos + static_cast<std::size_t>(length) + 1 > bytes.size()) {
      throw CheckpointError("truncated payload for tensor " + name);
    }
    std::vector<double> data(shape_numel(shape));
    for (std::size_t i = 0; i < data.size(); ++i) {
      data[i] = get_le64(bytes.data() + pos + i * 8);
    }
    pos += static_cast<std::size_t>(length);
    if (bytes[pos] != '\n') throw CheckpointError("missing terminator after " + name);
    ++pos;
    if (!out.emplace(name, Tensor::from(std::move(shape), std::move(data))).second) {
      throw CheckpointError("duplicate tensor " + name);
    }
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const TensorMap& tensors) {
  write_file(path, encode_checkpoint(tensors));
}

TensorMap load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

}  // namespace of3d
