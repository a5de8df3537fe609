#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace posecert {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Row-major float32 tensor. Images are stored channel-first (C, H, W).
struct Tensor {
  Shape shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(Shape s, float fill = 0.0f);
  Tensor(Shape s, std::vector<float> values);

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int64_t rank() const { return static_cast<int64_t>(shape.size()); }
  int64_t dim(int i) const { return shape.at(static_cast<size_t>(i)); }

  float& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  float operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  // (c, h, w) addressing for rank-3 tensors.
  float& at(int64_t c, int64_t h, int64_t w) { return data[static_cast<size_t>((c * shape[1] + h) * shape[2] + w)]; }
  float at(int64_t c, int64_t h, int64_t w) const {
    return data[static_cast<size_t>((c * shape[1] + h) * shape[2] + w)];
  }

  bool all_finite() const;
  bool operator==(const Tensor& o) const { return shape == o.shape && data == o.data; }
};

Tensor read_tensor(const std::string& path);
void write_tensor(const std::string& path, const Tensor& t);

// Binary PPM (P6), 8-bit. Returned as (3, H, W) with values 0..255.
Tensor read_ppm(const std::string& path);
void write_ppm(const std::string& path, const Tensor& t);

// Dispatches on the file magic: "PCTN" or "P6".
Tensor load_image_or_tensor(const std::string& path);

}  // namespace posecert
