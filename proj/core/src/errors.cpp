// SPDX-License-Identifier: Apache-2.0
#include "mmt/errors.hpp"

namespace mmt {

FormatError::FormatError(const std::filesystem::path& path, const std::string& reason)
    : DataError(path.string() + ": " + reason), path_(path), reason_(reason) {}

MissingFileError::MissingFileError(const std::filesystem::path& path)
    : DataError("missing file: " + path.string()), path_(path) {}

}  // namespace mmt
