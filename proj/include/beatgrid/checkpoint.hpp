#pragma once

// Checkpoint container: magic bytes, format version, JSON header (model and
// run configuration plus the step counter), a named-tensor table with shapes,
// row-major little-endian 32-bit float payloads, and a trailing CRC32 over
// everything before it.

#include <bit>
#include <cstring>

#include <json.hpp>

#include "beatgrid/model.hpp"

namespace beatgrid::nn {

inline constexpr char kCheckpointMagic[8] = {'B', 'G', 'C', 'K', 'P', 'T', '0', '\n'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline std::uint32_t crc32(std::span<const std::uint8_t> data, std::uint32_t crc = 0) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  crc = ~crc;
  for (std::uint8_t b : data) crc = table[(crc ^ b) & 0xff] ^ (crc >> 8);
  return ~crc;
}

inline void put_u32le(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back((v >> (8 * i)) & 0xff);
}
inline void put_u64le(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back((v >> (8 * i)) & 0xff);
}
inline void put_f32le(std::vector<std::uint8_t>& out, float f) {
  put_u32le(out, std::bit_cast<std::uint32_t>(f));
}

class CkptReader {
 public:
  explicit CkptReader(std::span<const std::uint8_t> d) : d_(d) {}
  std::size_t pos() const { return pos_; }
  void need(std::size_t n) const {
    require(d_.size() - pos_ >= n, Errc::corrupt_checksum, "checkpoint truncated");
  }
  std::uint32_t u32le() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | d_[pos_ + static_cast<std::size_t>(i)];
    pos_ += 4;
    return v;
  }
  std::uint64_t u64le() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | d_[pos_ + static_cast<std::size_t>(i)];
    pos_ += 8;
    return v;
  }
  float f32le() { return std::bit_cast<float>(u32le()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(d_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> d_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"d_model", c.d_model},
       {"d_ff", c.d_ff},
       {"num_layers", c.num_layers},
       {"num_heads", c.num_heads},
       {"vocab_size", c.vocab_size},
       {"max_input_len", c.max_input_len},
       {"max_target_len", c.max_target_len},
       {"dropout", c.dropout},
       {"rel_pos_buckets", c.rel_pos_buckets},
       {"rel_pos_max_distance", c.rel_pos_max_distance}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("d_model").get_to(c.d_model);
  j.at("d_ff").get_to(c.d_ff);
  j.at("num_layers").get_to(c.num_layers);
  j.at("num_heads").get_to(c.num_heads);
  j.at("vocab_size").get_to(c.vocab_size);
  j.at("max_input_len").get_to(c.max_input_len);
  j.at("max_target_len").get_to(c.max_target_len);
  j.at("dropout").get_to(c.dropout);
  j.at("rel_pos_buckets").get_to(c.rel_pos_buckets);
  j.at("rel_pos_max_distance").get_to(c.rel_pos_max_distance);
}

struct Checkpoint {
  ModelParams params;
  long step = 0;
  nlohmann::json extra;  // run/codec configuration, embedded for provenance
};

inline std::vector<std::uint8_t> save_checkpoint(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + sizeof(kCheckpointMagic));
  detail::put_u32le(out, kCheckpointVersion);

  nlohmann::json header;
  header["model"] = ckpt.params.config;
  header["step"] = ckpt.step;
  header["extra"] = ckpt.extra;
  const std::string hs = header.dump();
  detail::put_u64le(out, hs.size());
  out.insert(out.end(), hs.begin(), hs.end());

  std::uint32_t count = 0;
  visit_tensors(ckpt.params, [&](const std::string&, const Mat<float>&) { ++count; });
  detail::put_u32le(out, count);
  visit_tensors(ckpt.params, [&](const std::string& name, const Mat<float>& m) {
    detail::put_u32le(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    detail::put_u64le(out, static_cast<std::uint64_t>(m.rows()));
    detail::put_u64le(out, static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) detail::put_f32le(out, m(r, c));
  });
  detail::put_u32le(out, detail::crc32(out));
  return out;
}

inline Checkpoint load_checkpoint(std::span<const std::uint8_t> bytes) {
  require(bytes.size() > sizeof(kCheckpointMagic) + 8, Errc::corrupt_checksum,
          "checkpoint too small");
  const std::uint32_t stored_crc =
      detail::CkptReader(bytes.subspan(bytes.size() - 4)).u32le();
  const std::uint32_t actual_crc = detail::crc32(bytes.first(bytes.size() - 4));
  require(stored_crc == actual_crc, Errc::corrupt_checksum, "checkpoint CRC mismatch");

  detail::CkptReader r(bytes.first(bytes.size() - 4));
  require(r.str(sizeof(kCheckpointMagic)) ==
              std::string(kCheckpointMagic, sizeof(kCheckpointMagic)),
          Errc::version_mismatch, "not a checkpoint file");
  require(r.u32le() == kCheckpointVersion, Errc::version_mismatch,
          "unsupported checkpoint version");

  const std::uint64_t hlen = r.u64le();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.str(hlen));
  } catch (const nlohmann::json::exception&) {
    raise(Errc::version_mismatch, "unreadable checkpoint header");
  }
  Checkpoint ckpt;
  try {
    ckpt.params.config = header.at("model").get<ModelConfig>();
    ckpt.step = header.at("step").get<long>();
    ckpt.extra = header.value("extra", nlohmann::json::object());
  } catch (const nlohmann::json::exception&) {
    raise(Errc::version_mismatch, "checkpoint header missing fields");
  }
  ckpt.params.config.validate();
  detail::allocate(ckpt.params);

  const std::uint32_t count = r.u32le();
  std::uint32_t seen = 0;
  visit_tensors(ckpt.params, [&](const std::string& name, Mat<float>& m) {
    ++seen;
    const std::uint32_t nlen = r.u32le();
    require(r.str(nlen) == name, Errc::version_mismatch, "tensor name mismatch at " + name);
    const auto rows = static_cast<Eigen::Index>(r.u64le());
    const auto cols = static_cast<Eigen::Index>(r.u64le());
    require(rows == m.rows() && cols == m.cols(), Errc::version_mismatch,
            "tensor shape mismatch at " + name);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = r.f32le();
  });
  require(seen == count, Errc::version_mismatch, "tensor count mismatch");
  return ckpt;
}

// Loading against an expected configuration (the usual inference entry):
// a config disagreement is a version error, not a silent reshape.
inline Checkpoint load_checkpoint(std::span<const std::uint8_t> bytes,
                                  const ModelConfig& expected) {
  Checkpoint ckpt = load_checkpoint(bytes);
  require(ckpt.params.config == expected, Errc::version_mismatch,
          "checkpoint was produced by a different model configuration");
  return ckpt;
}

}  // namespace beatgrid::nn
