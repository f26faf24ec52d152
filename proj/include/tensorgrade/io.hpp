#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "tensorgrade/volume.hpp"

namespace tensorgrade {

/// Failure while reading or writing a volume file. `kind()` separates the
/// causes so callers (and tests) can tell them apart; the message names the
/// file and the offending field.
class IoError : public std::runtime_error {
public:
  enum class Kind { Unreadable, UnsupportedType, SizeMismatch, NonFinite, BadHeader, WriteFailed };

  IoError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

private:
  Kind kind_;
};

/// Reads a volume. Supported:
///  - `*.nii`: uncompressed little-endian NIfTI-1, float32, dim[0] in {3,4}
///    (dim[4] is the channel count, stored on disk as consecutive 3-D frames);
///  - `*.f32` or `*.json`: raw float32 payload plus a JSON sidecar holding
///    `dims`, `spacing` and `channels`.
Volume load_volume(const std::filesystem::path& path);

/// Writes `v` as float32. `*.nii` selects NIfTI-1; anything else writes the raw
/// pair `<stem>.f32` + `<stem>.json`.
void save_volume(const Volume& v, const std::filesystem::path& path);

RoiMask load_mask(const std::filesystem::path& path);
void save_mask(const RoiMask& m, const std::filesystem::path& path, Spacing spacing = {1.0, 1.0, 1.0});

/// Path of the float32 payload file a raw volume at `path` uses.
std::filesystem::path raw_payload_path(const std::filesystem::path& path);
std::filesystem::path raw_sidecar_path(const std::filesystem::path& path);

} // namespace tensorgrade
