#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace nascore {

inline constexpr std::uint32_t kDefaultFps = 6;

/// Raw thermal counts, frame-major then row-major.
struct VideoClip {
  std::uint32_t frames = 0;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t fps = kDefaultFps;
  std::vector<std::uint16_t> pixels;

  std::size_t frame_size() const { return static_cast<std::size_t>(height) * width; }
  std::uint16_t at(std::size_t t, std::size_t y, std::size_t x) const {
    return pixels[(t * height + y) * width + x];
  }
  const std::uint16_t* frame(std::size_t t) const { return pixels.data() + t * frame_size(); }
};

// TVF container: "TVF1", u32 T, u32 H, u32 W, u32 fps, u8 dtype (0 = u16),
// 3 zero bytes, then T*H*W little-endian u16 samples.
void write_tvf(const std::filesystem::path& path, const VideoClip& clip);
VideoClip read_tvf(const std::filesystem::path& path);

}  // namespace nascore
