#pragma once

#include <cstddef>
#include <vector>

namespace mbarf {

// Row-major, channel-interleaved float image. Single-channel instances hold
// depth, opacity or masks.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, int c, double fill = 0.0)
      : width(w), height(h), channels(c),
        data(static_cast<size_t>(w) * static_cast<size_t>(h) * static_cast<size_t>(c), fill) {}

  size_t pixel_count() const { return static_cast<size_t>(width) * static_cast<size_t>(height); }
  size_t index(int x, int y, int c = 0) const {
    return (static_cast<size_t>(y) * static_cast<size_t>(width) + static_cast<size_t>(x)) *
               static_cast<size_t>(channels) +
           static_cast<size_t>(c);
  }
  double& at(int x, int y, int c = 0) { return data[index(x, y, c)]; }
  double at(int x, int y, int c = 0) const { return data[index(x, y, c)]; }
  bool empty() const { return data.empty(); }
  bool same_shape(const Image& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }
  bool operator==(const Image&) const = default;
};

// Per-pixel exclusion mask; true marks a pixel removed from sampling and
// metrics.
struct Mask {
  int width = 0;
  int height = 0;
  std::vector<bool> excluded;

  Mask() = default;
  Mask(int w, int h) : width(w), height(h), excluded(static_cast<size_t>(w * h), false) {}
  bool empty() const { return excluded.empty(); }
  bool at(int x, int y) const { return !empty() && excluded[static_cast<size_t>(y * width + x)]; }
  void set(int x, int y, bool v) { excluded[static_cast<size_t>(y * width + x)] = v; }
  bool operator==(const Mask&) const = default;
};

}  // namespace mbarf
