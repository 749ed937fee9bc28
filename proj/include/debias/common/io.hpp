#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace debias {

// Raised when an input path cannot be opened; the CLI maps it to a usage error.
class MissingInputError : public std::runtime_error {
public:
  explicit MissingInputError(const std::filesystem::path& path)
      : std::runtime_error("cannot open input file: " + path.string()), path_(path) {}
  const std::filesystem::path& path() const { return path_; }

private:
  std::filesystem::path path_;
};

std::string read_file(const std::filesystem::path& path);
std::vector<std::string> read_lines(const std::filesystem::path& path);

// Writes to a sibling temp file and renames it into place, so readers never
// observe a truncated artifact.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

}  // namespace debias
