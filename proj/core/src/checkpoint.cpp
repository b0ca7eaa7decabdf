// Copyright 2026 The ProxyKD Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "proxykd/model/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "proxykd/error.hpp"
#include "proxykd/util/hash.hpp"

namespace pkd::model {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian hosts");

namespace {

constexpr char kMagic[4] = {'P', 'K', 'D', '1'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u32(std::uint32_t v) { bytes(&v, sizeof v); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}
  void bytes(void* p, std::size_t n) {
    if (pos_ + n > in_.size()) throw ValidationError("checkpoint: truncated file");
    std::memcpy(p, in_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    bytes(&v, sizeof v);
    return v;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  const std::vector<std::uint8_t>& in_;
  std::size_t pos_ = 0;
};

template <typename Src, typename Dst>
void convert_into(Reader& r, std::span<Dst> dst) {
  for (Dst& d : dst) {
    Src s;
    r.bytes(&s, sizeof s);
    d = static_cast<Dst>(s);
  }
}

}  // namespace

template <std::floating_point T>
std::vector<std::uint8_t> serialize_checkpoint(const LanguageModel<T>& model) {
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kCheckpointVersion);
  w.u32(sizeof(T));
  const ModelConfig& c = model.config();
  for (int v : {c.vocab_size, c.max_seq_len, c.n_layers, c.n_heads, c.d_model, c.d_ff}) {
    w.u32(static_cast<std::uint32_t>(v));
  }
  w.u32(static_cast<std::uint32_t>(model.role()));
  const auto& params = model.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.u32(static_cast<std::uint32_t>(p.name.size()));
    w.bytes(p.name.data(), p.name.size());
    w.u32(static_cast<std::uint32_t>(p.tensor.rank()));
    for (std::size_t d : p.tensor.shape()) w.u32(static_cast<std::uint32_t>(d));
    w.bytes(p.tensor.values().data(), p.tensor.size() * sizeof(T));
  }
  return w.take();
}

template <std::floating_point T>
LanguageModel<T> deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw ValidationError("checkpoint: bad magic (expected PKD1)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw ValidationError("checkpoint: unsupported version " + std::to_string(version));
  }
  const std::uint32_t scalar_bytes = r.u32();
  if (scalar_bytes != 4 && scalar_bytes != 8) {
    throw ValidationError("checkpoint: unsupported scalar width " + std::to_string(scalar_bytes));
  }
  ModelConfig c;
  c.vocab_size = static_cast<int>(r.u32());
  c.max_seq_len = static_cast<int>(r.u32());
  c.n_layers = static_cast<int>(r.u32());
  c.n_heads = static_cast<int>(r.u32());
  c.d_model = static_cast<int>(r.u32());
  c.d_ff = static_cast<int>(r.u32());
  const std::uint32_t role = r.u32();
  if (role > static_cast<std::uint32_t>(Role::kTeacher)) throw ValidationError("checkpoint: bad role tag");

  LanguageModel<T> model(c, static_cast<Role>(role), 0);
  const std::uint32_t n_params = r.u32();
  if (n_params != model.parameters().size()) {
    throw ValidationError("checkpoint: expected " + std::to_string(model.parameters().size()) +
                          " parameters, file has " + std::to_string(n_params));
  }
  for (auto& p : model.parameters()) {
    std::string name(r.u32(), '\0');
    r.bytes(name.data(), name.size());
    if (name != p.name) throw ValidationError("checkpoint: expected parameter " + p.name + ", found " + name);
    ad::Shape shape(r.u32());
    for (auto& d : shape) d = r.u32();
    if (shape != p.tensor.shape()) {
      throw ValidationError("checkpoint: parameter " + name + " has shape " + ad::shape_str(shape) +
                            ", model expects " + ad::shape_str(p.tensor.shape()));
    }
    auto dst = p.tensor.mutable_values();
    if (scalar_bytes == 4) {
      convert_into<float>(r, dst);
    } else {
      convert_into<double>(r, dst);
    }
  }
  if (!r.done()) throw ValidationError("checkpoint: trailing bytes after parameter records");
  return model;
}

template <std::floating_point T>
void save_checkpoint(const LanguageModel<T>& model, const std::filesystem::path& path) {
  auto bytes = serialize_checkpoint(model);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("checkpoint: cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("checkpoint: write failed for " + path.string());
}

template <std::floating_point T>
LanguageModel<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("checkpoint: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint<T>(bytes);
}

template <std::floating_point T>
std::string checkpoint_hash(const LanguageModel<T>& model) {
  return util::sha256_hex(serialize_checkpoint(model));
}

#define PKD_INSTANTIATE_CHECKPOINT(T)                                                        \
  template std::vector<std::uint8_t> serialize_checkpoint(const LanguageModel<T>&);         \
  template LanguageModel<T> deserialize_checkpoint<T>(const std::vector<std::uint8_t>&);    \
  template void save_checkpoint(const LanguageModel<T>&, const std::filesystem::path&);     \
  template LanguageModel<T> load_checkpoint<T>(const std::filesystem::path&);               \
  template std::string checkpoint_hash(const LanguageModel<T>&);

PKD_INSTANTIATE_CHECKPOINT(float)
PKD_INSTANTIATE_CHECKPOINT(double)

}  // namespace pkd::model
