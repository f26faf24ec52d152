#include "tensorgrade/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

#include "json.hpp"

namespace tensorgrade {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little, "float payloads are read without byte swapping");

constexpr std::int32_t kNiftiHeaderSize = 348;
constexpr std::size_t kNiftiDataOffset = 352;
constexpr std::int16_t kFloat32 = 16;

std::vector<char> read_all(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(IoError::Kind::Unreadable, path.string() + ": cannot open for reading");
  return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

void write_all(const fs::path& path, const char* bytes, std::size_t n) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(IoError::Kind::WriteFailed, path.string() + ": cannot open for writing");
  out.write(bytes, static_cast<std::streamsize>(n));
  out.flush();
  if (!out) throw IoError(IoError::Kind::WriteFailed, path.string() + ": write failed");
}

std::int32_t swap32(std::int32_t v) {
  const auto u = static_cast<std::uint32_t>(v);
  return static_cast<std::int32_t>((u >> 24) | ((u >> 8) & 0xff00u) | ((u << 8) & 0xff0000u) | (u << 24));
}

template <class T>
T get(const std::vector<char>& buf, std::size_t off) {
  T v;
  std::memcpy(&v, buf.data() + off, sizeof(T));
  return v;
}

template <class T>
void put(std::vector<char>& buf, std::size_t off, T v) {
  std::memcpy(buf.data() + off, &v, sizeof(T));
}

std::vector<double> decode_f32(const char* bytes, std::size_t count, const fs::path& path, float slope = 1.0f,
                               float inter = 0.0f) {
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    float f;
    std::memcpy(&f, bytes + i * 4, 4);
    const double v = static_cast<double>(f) * slope + inter;
    if (!std::isfinite(v))
      throw IoError(IoError::Kind::NonFinite,
                    path.string() + ": payload value " + std::to_string(i) + " is not finite");
    out[i] = v;
  }
  return out;
}

std::vector<char> encode_f32(std::span<const double> d) {
  std::vector<char> out(d.size() * 4);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const float f = static_cast<float>(d[i]);
    std::memcpy(out.data() + i * 4, &f, 4);
  }
  return out;
}

bool has_ext(const fs::path& p, const char* ext) { return p.extension() == ext; }

Volume load_nifti(const fs::path& path) {
  const auto buf = read_all(path);
  if (buf.size() < static_cast<std::size_t>(kNiftiHeaderSize))
    throw IoError(IoError::Kind::BadHeader, path.string() + ": file shorter than a NIfTI-1 header");
  const auto sizeof_hdr = get<std::int32_t>(buf, 0);
  if (sizeof_hdr != kNiftiHeaderSize) {
    if (swap32(sizeof_hdr) == kNiftiHeaderSize)
      throw IoError(IoError::Kind::BadHeader, path.string() + ": sizeof_hdr indicates big-endian, not supported");
    throw IoError(IoError::Kind::BadHeader, path.string() + ": sizeof_hdr is not 348");
  }
  if (std::memcmp(buf.data() + 344, "n+1", 4) != 0)
    throw IoError(IoError::Kind::BadHeader, path.string() + ": magic is not single-file 'n+1'");
  const auto ndim = get<std::int16_t>(buf, 40);
  if (ndim != 3 && ndim != 4)
    throw IoError(IoError::Kind::BadHeader, path.string() + ": dim[0] must be 3 or 4, got " + std::to_string(ndim));
  Dims dims{};
  for (int a = 0; a < 3; ++a) {
    const auto d = get<std::int16_t>(buf, 42 + 2 * a);
    if (d < 1)
      throw IoError(IoError::Kind::BadHeader, path.string() + ": dim[" + std::to_string(a + 1) + "] must be positive");
    dims[a] = static_cast<std::size_t>(d);
  }
  std::size_t channels = 1;
  if (ndim == 4) {
    const auto c = get<std::int16_t>(buf, 48);
    if (c < 1) throw IoError(IoError::Kind::BadHeader, path.string() + ": dim[4] must be positive");
    channels = static_cast<std::size_t>(c);
  }
  const auto datatype = get<std::int16_t>(buf, 70);
  if (datatype != kFloat32)
    throw IoError(IoError::Kind::UnsupportedType,
                  path.string() + ": datatype " + std::to_string(datatype) + " unsupported (float32 only)");
  Spacing spacing{};
  for (int a = 0; a < 3; ++a) {
    const double s = get<float>(buf, 80 + 4 * a);
    if (!(s > 0.0) || !std::isfinite(s))
      throw IoError(IoError::Kind::BadHeader, path.string() + ": pixdim[" + std::to_string(a + 1) + "] must be positive");
    spacing[a] = s;
  }
  const float vox_offset = get<float>(buf, 108);
  if (!(vox_offset >= 348.0f))
    throw IoError(IoError::Kind::BadHeader, path.string() + ": vox_offset below header size");
  float slope = get<float>(buf, 112);
  float inter = get<float>(buf, 116);
  if (slope == 0.0f || !std::isfinite(slope)) {
    slope = 1.0f;
    inter = 0.0f;
  }
  const std::size_t offset = static_cast<std::size_t>(vox_offset);
  const std::size_t count = dims[0] * dims[1] * dims[2] * channels;
  if (buf.size() < offset || buf.size() - offset != count * 4)
    throw IoError(IoError::Kind::SizeMismatch,
                  path.string() + ": dims imply " + std::to_string(count * 4) + " payload bytes, file holds " +
                      std::to_string(buf.size() >= offset ? buf.size() - offset : 0));
  // NIfTI stores the channels as consecutive 3-D frames; memory interleaves them per voxel.
  const auto frames = decode_f32(buf.data() + offset, count, path, slope, inter);
  const std::size_t nvox = count / channels;
  std::vector<double> data(count);
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t i = 0; i < nvox; ++i) data[i * channels + c] = frames[c * nvox + i];
  return Volume(dims, spacing, channels, std::move(data));
}

void save_nifti(const Volume& v, const fs::path& path) {
  if (v.dims()[0] > 32767 || v.dims()[1] > 32767 || v.dims()[2] > 32767 || v.channels() > 32767)
    throw IoError(IoError::Kind::WriteFailed, path.string() + ": dims exceed NIfTI-1 int16 range");
  std::vector<char> buf(kNiftiDataOffset, 0);
  put<std::int32_t>(buf, 0, kNiftiHeaderSize);
  const bool multi = v.channels() > 1;
  put<std::int16_t>(buf, 40, multi ? 4 : 3);
  for (int a = 0; a < 3; ++a) put<std::int16_t>(buf, 42 + 2 * a, static_cast<std::int16_t>(v.dims()[a]));
  put<std::int16_t>(buf, 48, static_cast<std::int16_t>(v.channels()));
  for (int a = 4; a < 7; ++a) put<std::int16_t>(buf, 42 + 2 * a, 1);
  put<std::int16_t>(buf, 70, kFloat32);
  put<std::int16_t>(buf, 72, 32);
  put<float>(buf, 76, 1.0f);
  for (int a = 0; a < 3; ++a) put<float>(buf, 80 + 4 * a, static_cast<float>(v.spacing()[a]));
  put<float>(buf, 92, 1.0f);
  put<float>(buf, 108, static_cast<float>(kNiftiDataOffset));
  put<float>(buf, 112, 1.0f);
  buf[123] = 2; // xyzt_units: mm
  std::memcpy(buf.data() + 344, "n+1", 4);
  const std::size_t nc = v.channels(), nvox = v.voxel_count();
  std::vector<double> frames(nvox * nc);
  for (std::size_t c = 0; c < nc; ++c)
    for (std::size_t i = 0; i < nvox; ++i) frames[c * nvox + i] = v.data()[i * nc + c];
  auto payload = encode_f32(frames);
  buf.insert(buf.end(), payload.begin(), payload.end());
  write_all(path, buf.data(), buf.size());
}

Volume load_raw(const fs::path& path) {
  const auto sidecar = raw_sidecar_path(path);
  const auto payload_path = raw_payload_path(path);
  const auto text = read_all(sidecar);
  json meta;
  try {
    meta = json::parse(text.begin(), text.end());
  } catch (const json::exception& e) {
    throw IoError(IoError::Kind::BadHeader, sidecar.string() + ": invalid JSON: " + e.what());
  }
  auto field = [&](const char* name) -> const json& {
    if (!meta.contains(name)) throw IoError(IoError::Kind::BadHeader, sidecar.string() + ": missing field '" + name + "'");
    return meta[name];
  };
  Dims dims{};
  Spacing spacing{};
  std::size_t channels = 0;
  try {
    const auto& jd = field("dims");
    const auto& js = field("spacing");
    if (!jd.is_array() || jd.size() != 3)
      throw IoError(IoError::Kind::BadHeader, sidecar.string() + ": field 'dims' must hold 3 entries");
    if (!js.is_array() || js.size() != 3)
      throw IoError(IoError::Kind::BadHeader, sidecar.string() + ": field 'spacing' must hold 3 entries");
    for (int a = 0; a < 3; ++a) {
      const auto d = jd[a].get<long long>();
      if (d < 1) throw IoError(IoError::Kind::BadHeader, sidecar.string() + ": field 'dims' must be positive");
      dims[a] = static_cast<std::size_t>(d);
      spacing[a] = js[a].get<double>();
      if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a]))
        throw IoError(IoError::Kind::BadHeader, sidecar.string() + ": field 'spacing' must be positive");
    }
    const auto c = field("channels").get<long long>();
    if (c < 1) throw IoError(IoError::Kind::BadHeader, sidecar.string() + ": field 'channels' must be positive");
    channels = static_cast<std::size_t>(c);
  } catch (const json::exception& e) {
    throw IoError(IoError::Kind::BadHeader, sidecar.string() + ": malformed header: " + e.what());
  }
  const auto bytes = read_all(payload_path);
  const std::size_t count = dims[0] * dims[1] * dims[2] * channels;
  if (bytes.size() != count * 4)
    throw IoError(IoError::Kind::SizeMismatch, payload_path.string() + ": dims imply " + std::to_string(count * 4) +
                                                   " payload bytes, file holds " + std::to_string(bytes.size()));
  return Volume(dims, spacing, channels, decode_f32(bytes.data(), count, payload_path));
}

void save_raw(const Volume& v, const fs::path& path) {
  json meta;
  meta["dims"] = {v.dims()[0], v.dims()[1], v.dims()[2]};
  meta["spacing"] = {v.spacing()[0], v.spacing()[1], v.spacing()[2]};
  meta["channels"] = v.channels();
  const std::string text = meta.dump(2) + "\n";
  const auto payload = encode_f32(v.data());
  write_all(raw_payload_path(path), payload.data(), payload.size());
  write_all(raw_sidecar_path(path), text.data(), text.size());
}

} // namespace

fs::path raw_payload_path(const fs::path& path) {
  fs::path p = path;
  if (has_ext(p, ".json") || has_ext(p, ".f32")) p.replace_extension();
  p += ".f32";
  return p;
}

fs::path raw_sidecar_path(const fs::path& path) {
  fs::path p = path;
  if (has_ext(p, ".json") || has_ext(p, ".f32")) p.replace_extension();
  p += ".json";
  return p;
}

Volume load_volume(const fs::path& path) {
  if (has_ext(path, ".nii")) return load_nifti(path);
  if (has_ext(path, ".gz"))
    throw IoError(IoError::Kind::UnsupportedType, path.string() + ": compressed volumes are not supported");
  return load_raw(path);
}

void save_volume(const Volume& v, const fs::path& path) {
  if (has_ext(path, ".nii"))
    save_nifti(v, path);
  else
    save_raw(v, path);
}

RoiMask load_mask(const fs::path& path) { return RoiMask::from_volume(load_volume(path)); }

void save_mask(const RoiMask& m, const fs::path& path, Spacing spacing) { save_volume(m.to_volume(spacing), path); }

} // namespace tensorgrade
