#ifndef SBDIAG_IMAGE_HPP
#define SBDIAG_IMAGE_HPP

#include <vector>

#include "sbdiag/common.hpp"

namespace sbdiag {

/// Single H x W x C tile, row-major with channels innermost.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<double> data;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c, double fill = 0.0)
      : height(h), width(w), channels(c), data(h * w * c, fill) {}

  double& at(std::size_t y, std::size_t x, std::size_t c) { return data[(y * width + x) * channels + c]; }
  double at(std::size_t y, std::size_t x, std::size_t c) const { return data[(y * width + x) * channels + c]; }

  bool square() const { return height == width; }
  bool same_shape(const Image& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
};

/// N tiles sharing one shape.
struct ImageStack {
  std::vector<Image> images;

  std::size_t size() const { return images.size(); }
  std::size_t channels() const { return images.empty() ? 0 : images.front().channels; }

  void check_consistent() const {
    require(!images.empty(), ErrorKind::kInvalidArgument, "image stack is empty");
    for (const auto& im : images) {
      require(im.same_shape(images.front()), ErrorKind::kDimMismatch, "image stack: mixed tile shapes");
      require(im.square(), ErrorKind::kDimMismatch, "image stack: tiles must be square");
      for (double v : im.data) require(std::isfinite(v), ErrorKind::kNonFinite, "image stack: non-finite pixel");
    }
  }
};

}  // namespace sbdiag

#endif  // SBDIAG_IMAGE_HPP
