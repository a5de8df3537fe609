#include "core/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "core/error.hpp"

namespace posecert {

static_assert(std::endian::native == std::endian::little, "little-endian host required for tensor I/O");

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (auto d : s) {
    require(d >= 0, ErrorCode::Shape, "negative dimension in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

Tensor::Tensor(Shape s, float fill) : shape(std::move(s)) {
  data.assign(static_cast<size_t>(shape_numel(shape)), fill);
}

Tensor::Tensor(Shape s, std::vector<float> values) : shape(std::move(s)), data(std::move(values)) {
  require(static_cast<int64_t>(data.size()) == shape_numel(shape), ErrorCode::Shape,
          "tensor data length " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
}

bool Tensor::all_finite() const {
  return std::all_of(data.begin(), data.end(), [](float v) { return std::isfinite(v); });
}

namespace {

std::vector<char> slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::Io, "cannot open " + path);
  return std::vector<char>((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

uint32_t read_u32(const std::vector<char>& b, size_t off) {
  uint32_t v;
  std::memcpy(&v, b.data() + off, 4);
  return v;
}

Tensor parse_pctn(const std::vector<char>& b, const std::string& path) {
  require(b.size() >= 8, ErrorCode::Parse, path + ": truncated tensor header");
  uint32_t rank = read_u32(b, 4);
  require(rank >= 1 && rank <= 8, ErrorCode::Parse, path + ": unsupported tensor rank " + std::to_string(rank));
  // Header is padded to at least 16 bytes.
  size_t hdr = std::max<size_t>(16, 8 + 4 * static_cast<size_t>(rank));
  require(b.size() >= hdr, ErrorCode::Parse, path + ": truncated tensor header");
  Shape s;
  for (uint32_t i = 0; i < rank; ++i) s.push_back(read_u32(b, 8 + 4 * i));
  int64_t n = shape_numel(s);
  require(b.size() == hdr + 4 * static_cast<size_t>(n), ErrorCode::Parse,
          path + ": payload length does not match shape " + shape_str(s));
  std::vector<float> data(static_cast<size_t>(n));
  std::memcpy(data.data(), b.data() + hdr, 4 * static_cast<size_t>(n));
  return Tensor(s, std::move(data));
}

Tensor parse_ppm(const std::vector<char>& b, const std::string& path) {
  size_t pos = 2;
  auto next_int = [&]() {
    while (pos < b.size()) {
      if (b[pos] == '#') {
        while (pos < b.size() && b[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(b[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    int v = 0;
    bool any = false;
    while (pos < b.size() && std::isdigit(static_cast<unsigned char>(b[pos]))) {
      v = v * 10 + (b[pos] - '0');
      ++pos;
      any = true;
    }
    require(any, ErrorCode::Parse, path + ": malformed PPM header");
    return v;
  };
  int w = next_int(), h = next_int(), maxv = next_int();
  require(maxv == 255, ErrorCode::Parse, path + ": only 8-bit PPM supported");
  ++pos;  // single whitespace before raster
  size_t n = static_cast<size_t>(w) * static_cast<size_t>(h) * 3;
  require(b.size() >= pos + n, ErrorCode::Parse, path + ": truncated PPM raster");
  Tensor t({3, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        t.at(c, y, x) = static_cast<unsigned char>(b[pos + (static_cast<size_t>(y) * w + x) * 3 + c]);
  return t;
}

}  // namespace

Tensor read_tensor(const std::string& path) {
  auto b = slurp(path);
  require(b.size() >= 4 && std::memcmp(b.data(), "PCTN", 4) == 0, ErrorCode::Parse, path + ": missing PCTN magic");
  return parse_pctn(b, path);
}

void write_tensor(const std::string& path, const Tensor& t) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::Io, "cannot write " + path);
  f.write("PCTN", 4);
  uint32_t rank = static_cast<uint32_t>(t.shape.size());
  f.write(reinterpret_cast<const char*>(&rank), 4);
  size_t hdr = std::max<size_t>(16, 8 + 4 * static_cast<size_t>(rank));
  for (auto d : t.shape) {
    uint32_t u = static_cast<uint32_t>(d);
    f.write(reinterpret_cast<const char*>(&u), 4);
  }
  for (size_t i = 8 + 4 * static_cast<size_t>(rank); i < hdr; ++i) f.put('\0');
  f.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(4 * t.data.size()));
}

Tensor read_ppm(const std::string& path) {
  auto b = slurp(path);
  require(b.size() >= 2 && b[0] == 'P' && b[1] == '6', ErrorCode::Parse, path + ": not a binary PPM");
  return parse_ppm(b, path);
}

void write_ppm(const std::string& path, const Tensor& t) {
  require(t.rank() == 3 && t.dim(0) == 3, ErrorCode::Shape, "PPM output needs a (3,H,W) tensor");
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::Io, "cannot write " + path);
  int64_t h = t.dim(1), w = t.dim(2);
  f << "P6\n" << w << " " << h << "\n255\n";
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < 3; ++c) {
        float v = std::clamp(std::round(t.at(c, y, x)), 0.0f, 255.0f);
        f.put(static_cast<char>(static_cast<unsigned char>(v)));
      }
}

Tensor load_image_or_tensor(const std::string& path) {
  auto b = slurp(path);
  if (b.size() >= 4 && std::memcmp(b.data(), "PCTN", 4) == 0) return parse_pctn(b, path);
  if (b.size() >= 2 && b[0] == 'P' && b[1] == '6') return parse_ppm(b, path);
  fail(ErrorCode::Parse, path + ": unrecognized tensor/image format");
}

}  // namespace posecert
