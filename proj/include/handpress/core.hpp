/* Copyright 2026 The Handpress Authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#ifndef HANDPRESS_CORE_HPP_
#define HANDPRESS_CORE_HPP_

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace handpress {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;
using MatX2 = Eigen::Matrix<double, Eigen::Dynamic, 2>;
using MatX3 = Eigen::Matrix<double, Eigen::Dynamic, 3>;
using MatX3i = Eigen::Matrix<int, Eigen::Dynamic, 3>;
using Quat = Eigen::Quaterniond;

/// Malformed or inconsistent input data (files, streams, observations).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Optimization or numerical failure (divergence, non-finite values).
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ----------------------------------------------------------------------------
// Image: dense row-major raster with a runtime channel count.

template <typename T>
class Image {
 public:
  Image() = default;
  Image(int width, int height, int channels = 1, T fill = T(0))
      : width_(width), height_(height), channels_(channels),
        data_(static_cast<size_t>(width) * height * channels, fill) {
    if (width < 0 || height < 0 || channels < 1)
      throw std::invalid_argument("Image: non-positive dimensions");
  }

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  bool empty() const { return data_.empty(); }
  size_t size() const { return data_.size(); }

  T& at(int x, int y, int c = 0) {
    return data_[(static_cast<size_t>(y) * width_ + x) * channels_ + c];
  }
  const T& at(int x, int y, int c = 0) const {
    return data_[(static_cast<size_t>(y) * width_ + x) * channels_ + c];
  }
  bool contains(int x, int y) const {
    return x >= 0 && y >= 0 && x < width_ && y < height_;
  }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& raw() { return data_; }
  const std::vector<T>& raw() const { return data_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_size(const Image& o) const {
    return width_ == o.width_ && height_ == o.height_ && channels_ == o.channels_;
  }

  template <typename U>
  Image<U> cast() const {
    Image<U> out(width_, height_, channels_);
    for (size_t i = 0; i < data_.size(); ++i) out.raw()[i] = static_cast<U>(data_[i]);
    return out;
  }

 private:
  int width_ = 0, height_ = 0, channels_ = 1;
  std::vector<T> data_;
};

using ImageF = Image<float>;
using ImageD = Image<double>;
using ImageI = Image<int32_t>;
using ImageU8 = Image<uint8_t>;

/// Bilinear sample of channel c with clamped borders; (x, y) in pixel-center
/// coordinates (texel i is centered at i + 0.5).
template <typename T>
double bilinear(const Image<T>& img, double x, double y, int c = 0) {
  const double fx = x - 0.5, fy = y - 0.5;
  int x0 = static_cast<int>(std::floor(fx)), y0 = static_cast<int>(std::floor(fy));
  const double ax = fx - x0, ay = fy - y0;
  const auto cl = [](int v, int hi) { return v < 0 ? 0 : (v >= hi ? hi - 1 : v); };
  const int x1 = cl(x0 + 1, img.width()), y1 = cl(y0 + 1, img.height());
  x0 = cl(x0, img.width());
  y0 = cl(y0, img.height());
  return (1 - ax) * (1 - ay) * img.at(x0, y0, c) + ax * (1 - ay) * img.at(x1, y0, c) +
         (1 - ax) * ay * img.at(x0, y1, c) + ax * ay * img.at(x1, y1, c);
}

// ----------------------------------------------------------------------------
// Raw float32 grid container: 16-byte header {magic "HPRW", u32 width, height,
// channels, little endian} followed by row-major interleaved float32 data.

void write_raw(const std::string& path, const ImageF& img);
ImageF read_raw(const std::string& path);

// ----------------------------------------------------------------------------
// Deterministic parallelism. Work is split into fixed-size chunks whose
// writes must be disjoint; the result is then independent of thread count.

void set_thread_count(int n);
int thread_count();

void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& body,
                  int64_t grain = 1);

// ----------------------------------------------------------------------------
// Seeded RNG. Substreams derive from (seed, stream) so that parallel
// generation never shares an engine.

inline std::mt19937_64 make_rng(uint64_t seed, uint64_t stream = 0) {
  std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32),
                    static_cast<uint32_t>(stream), static_cast<uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

/// Canonical quaternion with w >= 0 (antipodal representative).
inline Quat canonical(const Quat& q) {
  return q.w() < 0 ? Quat(-q.w(), -q.x(), -q.y(), -q.z()) : q;
}

std::string format_double(double v);  // shortest round-trip representation

}  // namespace handpress

#endif  // HANDPRESS_CORE_HPP_
