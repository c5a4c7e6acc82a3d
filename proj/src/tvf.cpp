#include "nascore/tvf.hpp"

#include <array>
#include <fstream>

#include "nascore/core.hpp"

namespace nascore {

namespace {

constexpr std::array<char, 4> kMagic{'T', 'V', 'F', '1'};
constexpr std::uint8_t kDtypeU16 = 0;
constexpr std::size_t kHeaderBytes = 24;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

void write_tvf(const std::filesystem::path& path, const VideoClip& clip) {
  const std::size_t samples = static_cast<std::size_t>(clip.frames) * clip.frame_size();
  if (clip.pixels.size() != samples) {
    throw Error(ErrorCode::kInvalidArgument, "clip holds " + std::to_string(clip.pixels.size()) +
                                                 " samples, header says " + std::to_string(samples));
  }
  std::string bytes;
  bytes.reserve(kHeaderBytes + 2 * samples);
  bytes.append(kMagic.data(), kMagic.size());
  put_u32(bytes, clip.frames);
  put_u32(bytes, clip.height);
  put_u32(bytes, clip.width);
  put_u32(bytes, clip.fps);
  bytes.push_back(static_cast<char>(kDtypeU16));
  bytes.append(3, '\0');
  for (std::uint16_t v : clip.pixels) {
    bytes.push_back(static_cast<char>(v & 0xff));
    bytes.push_back(static_cast<char>(v >> 8));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIo, "short write to " + path.string());
}

VideoClip read_tvf(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::array<unsigned char, kHeaderBytes> header{};
  in.read(reinterpret_cast<char*>(header.data()), header.size());
  if (in.gcount() != static_cast<std::streamsize>(header.size())) {
    throw Error(ErrorCode::kFormat, path.string() + ": truncated header");
  }
  if (!std::equal(kMagic.begin(), kMagic.end(), header.begin())) {
    throw Error(ErrorCode::kFormat, path.string() + ": bad magic");
  }
  VideoClip clip;
  clip.frames = get_u32(&header[4]);
  clip.height = get_u32(&header[8]);
  clip.width = get_u32(&header[12]);
  clip.fps = get_u32(&header[16]);
  if (header[20] != kDtypeU16) throw Error(ErrorCode::kFormat, path.string() + ": unsupported dtype");
  const std::size_t samples = static_cast<std::size_t>(clip.frames) * clip.frame_size();
  std::vector<unsigned char> raw(2 * samples);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
    throw Error(ErrorCode::kFormat, path.string() + ": truncated pixel data");
  }
  clip.pixels.resize(samples);
  for (std::size_t i = 0; i < samples; ++i) {
    clip.pixels[i] = static_cast<std::uint16_t>(raw[2 * i] | (raw[2 * i + 1] << 8));
  }
  return clip;
}

}  // namespace nascore
