#include "ccn/io.hpp"
#include "ccn/training.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <bit>
#include <cstring>

namespace ccn {

using nlohmann::json;

void to_json(json &j, CheckpointMeta const &m)
{
  j = json{{"fold_id", m.fold_id}, {"seed", m.seed}, {"epoch", m.epoch}, {"val_score", m.val_score}};
}

void from_json(json const &j, CheckpointMeta &m)
{
  m.fold_id = j.at("fold_id").get<int>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.epoch = j.at("epoch").get<Index>();
  m.val_score = j.at("val_score").get<double>();
}

namespace {

template <typename Scalar> constexpr auto dtype_name() -> char const *
{
  if constexpr (sizeof(Scalar) == 4) {
    return "f32";
  } else {
    return "f64";
  }
}

auto dtype_size(std::string const &dtype) -> std::size_t
{
  if (dtype == "f32") { return 4; }
  if (dtype == "f64") { return 8; }
  throw FormatError(FormatErrc::BadHeader, "unknown dtype '" + dtype + "'");
}

template <typename T> void put_le(std::string &out, T v)
{
  for (std::size_t i = 0; i < sizeof(T); ++i) { out.push_back(static_cast<char>((v >> (8 * i)) & 0xff)); }
}

template <typename T> auto get_le(std::string_view in, std::size_t offset) -> T
{
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) { v |= T(static_cast<unsigned char>(in[offset + i])) << (8 * i); }
  return v;
}

template <typename Scalar> auto encode_values(Matrix<Scalar> const &m) -> std::string
{
  std::string out(static_cast<std::size_t>(m.size()) * sizeof(Scalar), '\0');
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(out.data(), m.data(), out.size());
  } else {
    using Bits = std::conditional_t<sizeof(Scalar) == 4, std::uint32_t, std::uint64_t>;
    out.clear();
    for (Index i = 0; i < m.size(); ++i) { put_le(out, std::bit_cast<Bits>(m.data()[i])); }
  }
  return out;
}

template <typename Scalar> void decode_values(std::string_view bytes, Matrix<Scalar> &m)
{
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(m.data(), bytes.data(), bytes.size());
  } else {
    using Bits = std::conditional_t<sizeof(Scalar) == 4, std::uint32_t, std::uint64_t>;
    for (Index i = 0; i < m.size(); ++i) {
      m.data()[i] = std::bit_cast<Scalar>(get_le<Bits>(bytes, static_cast<std::size_t>(i) * sizeof(Scalar)));
    }
  }
}

constexpr std::size_t preamble_bytes = 4 + 4 + 8;

struct Framing
{
  std::uint32_t    version;
  std::string_view header;
  std::string_view payload;
};

auto split_frame(std::string_view bytes) -> Framing
{
  if (bytes.size() < 4 || bytes.substr(0, 4) != checkpoint_magic) {
    throw FormatError(FormatErrc::BadMagic, "not a checkpoint (bad magic)");
  }
  if (bytes.size() < preamble_bytes) { throw FormatError(FormatErrc::Truncated, "checkpoint preamble truncated"); }
  auto const version = get_le<std::uint32_t>(bytes, 4);
  if (version != checkpoint_version) {
    throw FormatError(FormatErrc::UnsupportedVersion, fmt::format("unsupported checkpoint version {}", version));
  }
  auto const header_len = get_le<std::uint64_t>(bytes, 8);
  if (header_len > bytes.size() - preamble_bytes) { throw FormatError(FormatErrc::Truncated, "checkpoint header truncated"); }
  return Framing{version, bytes.substr(preamble_bytes, header_len), bytes.substr(preamble_bytes + header_len)};
}

} // namespace

template <typename Scalar> auto save_checkpoint(Model<Scalar> const &model, CheckpointMeta const &meta) -> std::string
{
  json        params = json::array();
  std::string payload;
  for (auto const &p : model.params) {
    auto bytes = encode_values(p.value);
    params.push_back(json{{"name", p.name}, {"shape", p.shape}, {"fnv1a64", io::hex(io::fnv1a64(bytes))}});
    payload += bytes;
  }
  json header{{"format", "ccn-checkpoint"},
              {"dtype", dtype_name<Scalar>()},
              {"config", model.config},
              {"meta", meta},
              {"params", params},
              {"payload_bytes", payload.size()}};
  auto const text = header.dump(1);

  std::string out;
  out.reserve(preamble_bytes + text.size() + payload.size());
  out.append(checkpoint_magic);
  put_le<std::uint32_t>(out, checkpoint_version);
  put_le<std::uint64_t>(out, text.size());
  out += text;
  out += payload;
  return out;
}

auto read_checkpoint_info(std::string_view bytes) -> CheckpointInfo
{
  auto const     frame = split_frame(bytes);
  CheckpointInfo info;
  info.version = frame.version;
  info.header = std::string(frame.header);
  try {
    auto const h = json::parse(frame.header);
    info.dtype = h.at("dtype").get<std::string>();
    info.config = h.at("config").get<ModelConfig>();
    info.meta = h.at("meta").get<CheckpointMeta>();
  } catch (json::exception const &e) {
    throw FormatError(FormatErrc::BadHeader, std::string("checkpoint header: ") + e.what());
  } catch (ConfigError const &e) {
    throw FormatError(FormatErrc::BadHeader, std::string("checkpoint header: ") + e.what());
  }
  dtype_size(info.dtype);
  return info;
}

template <typename Scalar> auto load_checkpoint(std::string_view bytes) -> LoadedCheckpoint<Scalar>
{
  auto const frame = split_frame(bytes);
  auto const info = read_checkpoint_info(bytes);
  if (info.dtype != dtype_name<Scalar>()) {
    throw FormatError(FormatErrc::DtypeMismatch,
                      fmt::format("checkpoint holds {} values, requested {}", info.dtype, dtype_name<Scalar>()));
  }
  json entries;
  std::uint64_t declared_payload = 0;
  try {
    auto const h = json::parse(frame.header);
    entries = h.at("params");
    declared_payload = h.at("payload_bytes").get<std::uint64_t>();
  } catch (json::exception const &e) {
    throw FormatError(FormatErrc::BadHeader, std::string("checkpoint header: ") + e.what());
  }

  LoadedCheckpoint<Scalar> out{build_model<Scalar>(info.config, 0), info.meta};
  auto                    &params = out.model.params;

  // Shape audit: header order must match the order this config builds.
  if (!entries.is_array() || entries.size() != params.size()) {
    throw FormatError(FormatErrc::ParameterMismatch,
                      fmt::format("checkpoint lists {} parameters, config builds {}", entries.size(), params.size()));
  }
  std::uint64_t expected_payload = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto const &p = params[i];
    std::string name;
    std::vector<Index> shape;
    try {
      name = entries[i].at("name").get<std::string>();
      shape = entries[i].at("shape").get<std::vector<Index>>();
    } catch (json::exception const &e) {
      throw FormatError(FormatErrc::BadHeader, std::string("checkpoint parameter entry: ") + e.what());
    }
    if (name != p.name || shape != p.shape) {
      throw FormatError(FormatErrc::ParameterMismatch,
                        fmt::format("parameter {} is '{}' in the checkpoint, expected '{}'", i, name, p.name));
    }
    expected_payload += static_cast<std::uint64_t>(p.size()) * sizeof(Scalar);
  }
  if (declared_payload != expected_payload) {
    throw FormatError(FormatErrc::SizeMismatch,
                      fmt::format("header declares {} payload bytes, shapes imply {}", declared_payload, expected_payload));
  }
  if (frame.payload.size() < expected_payload) {
    throw FormatError(FormatErrc::Truncated,
                      fmt::format("payload holds {} bytes, expected {}", frame.payload.size(), expected_payload));
  }
  if (frame.payload.size() > expected_payload) {
    throw FormatError(FormatErrc::SizeMismatch,
                      fmt::format("payload holds {} bytes, expected {}", frame.payload.size(), expected_payload));
  }

  std::size_t offset = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto      &p = params[i];
    auto const n = static_cast<std::size_t>(p.size()) * sizeof(Scalar);
    auto const chunk = frame.payload.substr(offset, n);
    if (entries[i].contains("fnv1a64") && entries[i]["fnv1a64"].get<std::string>() != io::hex(io::fnv1a64(chunk))) {
      throw FormatError(FormatErrc::ChecksumMismatch, "checksum mismatch for parameter '" + p.name + "'");
    }
    decode_values(chunk, p.value);
    offset += n;
  }
  return out;
}

#define CCN_INSTANTIATE(S)                                                                                             \
  template auto save_checkpoint(Model<S> const &, CheckpointMeta const &) -> std::string;                              \
  template auto load_checkpoint<S>(std::string_view) -> LoadedCheckpoint<S>;

CCN_INSTANTIATE(float)
CCN_INSTANTIATE(double)

#undef CCN_INSTANTIATE

} // namespace ccn
