#include "ccn/io.hpp"

#include <fmt/format.h>

#include <atomic>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unistd.h>

namespace ccn::io {

namespace fs = std::filesystem;

auto fnv1a64(std::string_view bytes, std::uint64_t h) -> std::uint64_t
{
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

auto hex(std::uint64_t v) -> std::string { return fmt::format("{:016x}", v); }

auto read_file(fs::path const &path) -> std::string
{
  std::ifstream in(path, std::ios::binary);
  if (!in) { throw LoadError(LoadErrc::MissingFile, "cannot open " + path.string()); }
  std::ostringstream ss;
  ss << in.rdbuf();
  if (!in && !in.eof()) { throw LoadError(LoadErrc::Io, "read failed: " + path.string()); }
  return std::move(ss).str();
}

namespace {

auto unique_suffix() -> std::string
{
  static std::atomic<unsigned> counter{0};
  return fmt::format(".tmp-{}-{}", ::getpid(), counter++);
}

} // namespace

void write_file_atomic(fs::path const &path, std::string_view bytes)
{
  auto tmp = path;
  tmp += unique_suffix();
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) { throw LoadError(LoadErrc::Io, "cannot write " + tmp.string()); }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw LoadError(LoadErrc::Io, "write failed: " + tmp.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw LoadError(LoadErrc::Io, "cannot rename into " + path.string());
  }
}

auto encode_f32(Matrix<float> const &m) -> std::string
{
  std::string out(static_cast<std::size_t>(m.size()) * 4, '\0');
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(out.data(), m.data(), out.size());
  } else {
    for (Index i = 0; i < m.size(); ++i) {
      auto const u = std::bit_cast<std::uint32_t>(m.data()[i]);
      for (int k = 0; k < 4; ++k) { out[4 * i + k] = static_cast<char>((u >> (8 * k)) & 0xff); }
    }
  }
  return out;
}

auto decode_f32(std::string_view bytes, Index rows, Index cols) -> Matrix<float>
{
  if (static_cast<Index>(bytes.size()) != rows * cols * 4) {
    throw LoadError(LoadErrc::LengthMismatch,
                    fmt::format("expected {} bytes for {}x{} f32 values, found {}", rows * cols * 4, rows, cols, bytes.size()));
  }
  Matrix<float> m(rows, cols);
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(m.data(), bytes.data(), bytes.size());
  } else {
    for (Index i = 0; i < m.size(); ++i) {
      std::uint32_t u = 0;
      for (int k = 0; k < 4; ++k) { u |= std::uint32_t(static_cast<unsigned char>(bytes[4 * i + k])) << (8 * k); }
      m.data()[i] = std::bit_cast<float>(u);
    }
  }
  return m;
}

StagedDir::StagedDir(fs::path target)
  : target_(std::move(target))
{
  auto parent = target_.parent_path();
  if (parent.empty()) { parent = "."; }
  std::error_code ec;
  fs::create_directories(parent, ec);
  staging_ = target_;
  staging_ += unique_suffix();
  fs::create_directories(staging_, ec);
  if (ec) { throw LoadError(LoadErrc::Io, "cannot create " + staging_.string()); }
}

StagedDir::~StagedDir()
{
  if (!committed_) {
    std::error_code ec;
    fs::remove_all(staging_, ec);
  }
}

void StagedDir::commit()
{
  std::error_code ec;
  if (fs::exists(target_)) {
    auto old = target_;
    old += unique_suffix();
    fs::rename(target_, old, ec);
    if (ec) { throw LoadError(LoadErrc::Io, "cannot move aside " + target_.string()); }
    fs::rename(staging_, target_, ec);
    if (ec) {
      fs::rename(old, target_, ec);
      throw LoadError(LoadErrc::Io, "cannot move staged output into " + target_.string());
    }
    fs::remove_all(old, ec);
  } else {
    fs::rename(staging_, target_, ec);
    if (ec) { throw LoadError(LoadErrc::Io, "cannot move staged output into " + target_.string()); }
  }
  committed_ = true;
}

} // namespace ccn::io
