// Binary checkpoint format.
//
//   "UNITECKP"                   8-byte magic
//   u32 version                  currently 1
//   u64 n, n bytes               header JSON: config, vocab, seed, step, tag
//   u64 tensor count
//   per tensor, declaration order:
//     u64 n, n bytes name; u64 rows; u64 cols; rows*cols f64
//   u32 crc32 of every preceding byte
//
// All integers and floats are little-endian.
#pragma once

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <zlib.h>

#include <json.hpp>

#include "corpus.hpp"
#include "model.hpp"

namespace unite {

inline constexpr char kCheckpointMagic[8] = {'U', 'N', 'I', 'T', 'E', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
  Vocab vocab;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::string tag;
};

namespace detail {

template <class T>
void put_le(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& buf) : buf_(buf) {}
  template <class T>
  T get() {
    need(sizeof(T));
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, buf_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, bytes, sizeof(T));
    return value;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw Error("checkpoint: truncated file");
  }
  const std::string& buf_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(const std::string& bytes, std::size_t n) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(n)));
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ckpt) {
  check_shapes(ckpt.config, ckpt.params);
  if (ckpt.vocab.size() != ckpt.config.vocab_size) throw Error("checkpoint: vocab size does not match config");
  nlohmann::json header;
  header["config"] = ckpt.config.to_json();
  header["vocab"] = ckpt.vocab.tokens();
  header["seed"] = ckpt.seed;
  header["step"] = ckpt.step;
  header["tag"] = ckpt.tag;
  const std::string header_text = header.dump();

  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint64_t>(out, header_text.size());
  out += header_text;
  const auto names = ckpt.params.names();
  auto tensors = const_cast<ModelParams&>(ckpt.params).tensors();
  detail::put_le<std::uint64_t>(out, tensors.size());
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    detail::put_le<std::uint64_t>(out, names[i].size());
    out += names[i];
    detail::put_le<std::uint64_t>(out, tensors[i]->rows);
    detail::put_le<std::uint64_t>(out, tensors[i]->cols);
    for (double x : tensors[i]->data) detail::put_le<double>(out, x);
  }
  detail::put_le<std::uint32_t>(out, detail::crc32_of(out, out.size()));
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& buf) {
  if (buf.size() < sizeof(kCheckpointMagic) + 4 || std::memcmp(buf.data(), kCheckpointMagic, 8) != 0)
    throw Error("checkpoint: bad magic");
  const std::size_t body = buf.size() - 4;
  detail::Reader tail(buf);
  tail.bytes(body);
  if (tail.get<std::uint32_t>() != detail::crc32_of(buf, body)) throw Error("checkpoint: checksum mismatch");

  detail::Reader r(buf);
  r.bytes(8);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) throw Error("checkpoint: unsupported version " + std::to_string(version));
  const auto header_len = r.get<std::uint64_t>();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.bytes(header_len));
  } catch (const nlohmann::json::exception&) {
    throw Error("checkpoint: malformed header");
  }
  Checkpoint ckpt;
  ckpt.config = ModelConfig::from_json(header.at("config"));
  ckpt.vocab = vocab_from_tokens(header.at("vocab").get<std::vector<std::string>>());
  ckpt.seed = header.at("seed").get<std::uint64_t>();
  ckpt.step = header.at("step").get<std::uint64_t>();
  ckpt.tag = header.at("tag").get<std::string>();
  if (ckpt.vocab.size() != ckpt.config.vocab_size) throw Error("checkpoint: vocab size does not match config");

  ckpt.params = zero_params(ckpt.config);
  const auto names = ckpt.params.names();
  auto tensors = ckpt.params.tensors();
  if (r.get<std::uint64_t>() != tensors.size()) throw Error("checkpoint/config shape mismatch");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto name = r.bytes(r.get<std::uint64_t>());
    if (name != names[i]) throw Error("checkpoint: unexpected tensor " + name);
    const auto rows = r.get<std::uint64_t>();
    const auto cols = r.get<std::uint64_t>();
    if (rows != tensors[i]->rows || cols != tensors[i]->cols) throw Error("checkpoint/config shape mismatch");
    for (double& x : tensors[i]->data) x = r.get<double>();
  }
  if (r.pos() != body) throw Error("checkpoint: trailing bytes");
  return ckpt;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  const std::string bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace unite
