#pragma once

#include "tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace ccn::io {

auto fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) -> std::uint64_t;
auto hex(std::uint64_t v) -> std::string;

// Throws LoadError(MissingFile / Io).
auto read_file(std::filesystem::path const &path) -> std::string;

// Writes to a temporary sibling then renames over `path`.
void write_file_atomic(std::filesystem::path const &path, std::string_view bytes);

// Little-endian 32-bit reals, row-major.
auto encode_f32(Matrix<float> const &m) -> std::string;
auto decode_f32(std::string_view bytes, Index rows, Index cols) -> Matrix<float>;

/*
 * Stages a directory next to `target` and swaps it into place on commit.
 * Uncommitted staging directories are removed on destruction.
 */
class StagedDir
{
public:
  explicit StagedDir(std::filesystem::path target);
  ~StagedDir();
  StagedDir(StagedDir const &) = delete;
  auto operator=(StagedDir const &) -> StagedDir & = delete;

  [[nodiscard]] auto path() const -> std::filesystem::path const & { return staging_; }
  // Replaces `target` (if present) with the staged contents.
  void commit();

private:
  std::filesystem::path target_;
  std::filesystem::path staging_;
  bool                  committed_ = false;
};

} // namespace ccn::io
