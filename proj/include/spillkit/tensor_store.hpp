#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "spillkit/error.hpp"
#include "spillkit/util.hpp"

namespace spillkit {

// Checkpoint container layout:
//   [u64 little-endian N][N bytes JSON header][payload]
// The header maps tensor names to {"dtype", "shape", "data_offsets": [begin, end]}
// with offsets relative to the payload start. An optional "__metadata__"
// object holds string pairs.

inline std::size_t dtype_size(const std::string& dtype) {
  static const std::map<std::string, std::size_t> sizes = {
      {"F64", 8}, {"F32", 4}, {"F16", 2}, {"BF16", 2}, {"I64", 8}, {"I32", 4}, {"I16", 2},
      {"I8", 1},  {"U64", 8}, {"U32", 4}, {"U16", 2},  {"U8", 1},  {"BOOL", 1}};
  const auto it = sizes.find(dtype);
  if (it == sizes.end()) throw Error(Errc::unsupported, "unsupported dtype '" + dtype + "'");
  return it->second;
}

struct TensorInfo {
  std::string name;
  std::string dtype;
  std::vector<std::int64_t> shape;
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t elements() const {
    std::size_t n = 1;
    for (auto d : shape) n *= static_cast<std::size_t>(d);
    return n;
  }

  bool operator==(const TensorInfo&) const = default;
};

/// A parsed container. The header text is kept verbatim so that a store
/// whose layout is unchanged writes back bit-identically.
class TensorStore {
 public:
  TensorStore() = default;

  static TensorStore read(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 8) throw Error(Errc::truncation, "container shorter than its 8-byte header length");
    std::uint64_t n = 0;
    for (int i = 7; i >= 0; --i) n = (n << 8) | bytes[static_cast<std::size_t>(i)];
    if (n > bytes.size() - 8)
      throw Error(Errc::truncation, "header length " + std::to_string(n) + " exceeds file size " + std::to_string(bytes.size()));

    TensorStore s;
    s.header_text_.assign(reinterpret_cast<const char*>(bytes.data() + 8), static_cast<std::size_t>(n));
    s.payload_.assign(bytes.begin() + 8 + static_cast<std::ptrdiff_t>(n), bytes.end());

    json header;
    try {
      header = json::parse(s.header_text_);
    } catch (const json::parse_error& e) {
      throw ParseError("container header is not valid JSON", 8 + e.byte);
    }
    if (!header.is_object()) throw Error(Errc::corruption, "container header must be a JSON object");
    for (auto it = header.begin(); it != header.end(); ++it) {
      if (it.key() == "__metadata__") {
        s.metadata_ = it.value();
        continue;
      }
      const json& t = it.value();
      TensorInfo info;
      info.name = it.key();
      try {
        info.dtype = t.at("dtype").get<std::string>();
        info.shape = t.at("shape").get<std::vector<std::int64_t>>();
        const auto off = t.at("data_offsets").get<std::vector<std::size_t>>();
        if (off.size() != 2) throw Error(Errc::corruption, "tensor '" + info.name + "' needs two data offsets");
        info.begin = off[0];
        info.end = off[1];
      } catch (const json::exception&) {
        throw Error(Errc::corruption, "tensor '" + info.name + "' has a malformed header entry");
      }
      for (auto d : info.shape)
        if (d < 0) throw Error(Errc::corruption, "tensor '" + info.name + "' has a negative dimension");
      if (info.end < info.begin) throw Error(Errc::corruption, "tensor '" + info.name + "' has inverted offsets");
      if (info.end - info.begin != info.elements() * dtype_size(info.dtype))
        throw Error(Errc::corruption, "tensor '" + info.name + "' byte range does not match its shape and dtype");
      if (info.end > s.payload_.size())
        throw Error(Errc::truncation, "tensor '" + info.name + "' extends past the end of the file");
      s.tensors_.push_back(std::move(info));
    }
    std::sort(s.tensors_.begin(), s.tensors_.end(), [](const TensorInfo& a, const TensorInfo& b) {
      return a.begin != b.begin ? a.begin < b.begin : a.end < b.end;
    });
    for (std::size_t i = 1; i < s.tensors_.size(); ++i)
      if (s.tensors_[i].begin < s.tensors_[i - 1].end)
        throw Error(Errc::corruption, "tensors '" + s.tensors_[i - 1].name + "' and '" + s.tensors_[i].name + "' overlap");
    return s;
  }

  Bytes write() const {
    Bytes out(8);
    std::uint64_t n = header_text_.size();
    for (int i = 0; i < 8; ++i) out[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(n >> (8 * i));
    out.insert(out.end(), header_text_.begin(), header_text_.end());
    out.insert(out.end(), payload_.begin(), payload_.end());
    return out;
  }

  /// Tensors in payload order.
  const std::vector<TensorInfo>& tensors() const { return tensors_; }
  const json& metadata() const { return metadata_; }

  bool contains(const std::string& name) const { return find(name) != nullptr; }

  const TensorInfo* find(const std::string& name) const {
    for (const auto& t : tensors_)
      if (t.name == name) return &t;
    return nullptr;
  }

  const TensorInfo& info(const std::string& name) const {
    if (const auto* t = find(name)) return *t;
    throw Error(Errc::unknown_target, "no tensor named '" + name + "'");
  }

  std::span<const std::uint8_t> raw(const std::string& name) const {
    const auto& t = info(name);
    return std::span(payload_).subspan(t.begin, t.end - t.begin);
  }

  std::vector<float> read_f32(const std::string& name) const {
    const auto& t = info(name);
    if (t.dtype != "F32") throw Error(Errc::unsupported, "tensor '" + name + "' is " + t.dtype + ", expected F32");
    std::vector<float> out(t.elements());
    for (std::size_t i = 0; i < out.size(); ++i) {
      std::uint32_t bits = 0;
      for (int b = 3; b >= 0; --b) bits = (bits << 8) | payload_[t.begin + 4 * i + static_cast<std::size_t>(b)];
      out[i] = std::bit_cast<float>(bits);
    }
    return out;
  }

  /// Overwrite an F32 tensor in place; size must match.
  void write_f32(const std::string& name, std::span<const float> values) {
    const auto& t = info(name);
    if (t.dtype != "F32") throw Error(Errc::unsupported, "tensor '" + name + "' is " + t.dtype + ", expected F32");
    if (values.size() != t.elements()) throw Error(Errc::dimension, "tensor '" + name + "' size mismatch on write");
    for (std::size_t i = 0; i < values.size(); ++i) {
      const auto bits = std::bit_cast<std::uint32_t>(values[i]);
      for (int b = 0; b < 4; ++b) payload_[t.begin + 4 * i + static_cast<std::size_t>(b)] = static_cast<std::uint8_t>(bits >> (8 * b));
    }
  }

 private:
  std::string header_text_;
  Bytes payload_;
  std::vector<TensorInfo> tensors_;
  json metadata_ = json::object();
};

/// Assembles a new F32 container with a canonical compact header.
class TensorStoreBuilder {
 public:
  TensorStoreBuilder& add(const std::string& name, std::vector<std::int64_t> shape, std::span<const float> values) {
    std::size_t n = 1;
    for (auto d : shape) n *= static_cast<std::size_t>(d);
    if (n != values.size()) throw Error(Errc::dimension, "tensor '" + name + "' shape does not match its values");
    entries_.push_back({name, std::move(shape), std::vector<float>(values.begin(), values.end())});
    return *this;
  }

  TensorStoreBuilder& metadata(const std::string& key, const std::string& value) {
    metadata_[key] = value;
    return *this;
  }

  Bytes bytes() const {
    json header = json::object();
    if (!metadata_.empty()) header["__metadata__"] = metadata_;
    std::size_t offset = 0;
    for (const auto& e : entries_) {
      const std::size_t len = e.values.size() * 4;
      header[e.name] = {{"dtype", "F32"}, {"shape", e.shape}, {"data_offsets", {offset, offset + len}}};
      offset += len;
    }
    std::string text = header.dump();
    while ((8 + text.size()) % 8 != 0) text.push_back(' ');
    Bytes out(8);
    for (int i = 0; i < 8; ++i) out[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(text.size() >> (8 * i));
    out.insert(out.end(), text.begin(), text.end());
    for (const auto& e : entries_)
      for (float v : e.values) {
        const auto bits = std::bit_cast<std::uint32_t>(v);
        for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
      }
    return out;
  }

  TensorStore build() const { return TensorStore::read(bytes()); }

 private:
  struct Entry {
    std::string name;
    std::vector<std::int64_t> shape;
    std::vector<float> values;
  };
  std::vector<Entry> entries_;
  json metadata_ = json::object();
};

inline TensorStore read_store(std::span<const std::uint8_t> bytes) { return TensorStore::read(bytes); }
inline Bytes write_store(const TensorStore& store) { return store.write(); }

}  // namespace spillkit
