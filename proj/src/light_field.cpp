#include "lfs/light_field.hpp"

#include <cfenv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "lfs/ops.hpp"

namespace lfs {

namespace {

using i64 = std::int64_t;
namespace fs = std::filesystem;

constexpr char kMagic[4] = {'L', 'F', '4', 'D'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is, const char* field) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw FormatError(std::string("lf4: truncated header at field '") + field + "'");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::string view_name(i64 v, i64 u) {
  return "view_" + std::to_string(v) + "_" + std::to_string(u) + ".png";
}

}  // namespace

LightField::LightField(Tensor t) : data(std::move(t)) {
  if (data.rank() != 5) {
    throw ShapeError("LightField tensor must be [U,U,H,W,C], got " + shape_str(data.shape()));
  }
  if (data.extent(0) != data.extent(1)) {
    throw ShapeError("LightField angular grid must be square, got " + shape_str(data.shape()));
  }
  if (data.extent(0) < 1 || data.extent(4) < 1) {
    throw ShapeError("LightField needs at least one view and one channel, got " +
                     shape_str(data.shape()));
  }
  data.check_finite("LightField");
}

Tensor LightField::view(i64 v, i64 u) const {
  const i64 U = angular();
  if (v < 0 || v >= U || u < 0 || u >= U) {
    throw ArgumentError("view index (" + std::to_string(v) + "," + std::to_string(u) +
                        ") out of range for U=" + std::to_string(U));
  }
  const i64 block = height() * width() * channels();
  return Tensor::from_array(Shape{height(), width(), channels()},
                            data.values().segment((v * U + u) * block, block));
}

void save_lf4_tensor(const Tensor& t, const std::string& path, LfDtype dtype) {
  if (t.rank() != 5) {
    throw ShapeError("lf4 payload must be rank 5 [U,U,H,W,C], got " + shape_str(t.shape()));
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.write(kMagic, 4);
  write_u32(os, kVersion);
  for (int a = 0; a < 5; ++a) write_u32(os, static_cast<std::uint32_t>(t.extent(a)));
  write_u32(os, static_cast<std::uint32_t>(dtype));
  const Eigen::ArrayXd& v = t.values();
  if (dtype == LfDtype::F64) {
    os.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(sizeof(double)) * v.size());
  } else {
    std::vector<float> f(static_cast<std::size_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) f[static_cast<std::size_t>(i)] = static_cast<float>(v[i]);
    os.write(reinterpret_cast<const char*>(f.data()),
             static_cast<std::streamsize>(sizeof(float) * f.size()));
  }
  if (!os) throw IoError("write failed: " + path);
}

Tensor load_lf4_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open for reading: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("lf4: bad magic in " + path + " (expected \"LF4D\")");
  }
  const std::uint32_t version = read_u32(is, "version");
  if (version != kVersion) {
    throw FormatError("lf4: unsupported version " + std::to_string(version) + " in " + path);
  }
  const std::uint32_t uv = read_u32(is, "U_v");
  const std::uint32_t uh = read_u32(is, "U_h");
  const std::uint32_t h = read_u32(is, "H");
  const std::uint32_t w = read_u32(is, "W");
  const std::uint32_t c = read_u32(is, "C");
  const std::uint32_t dtype = read_u32(is, "dtype");
  if (dtype != 0 && dtype != 1) {
    throw FormatError("lf4: unknown dtype code " + std::to_string(dtype) + " in " + path);
  }
  const i64 count = static_cast<i64>(uv) * uh * h * w * c;
  const std::size_t sample_bytes = dtype == 1 ? sizeof(double) : sizeof(float);

  Eigen::ArrayXd values(count);
  if (dtype == 1) {
    is.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(sample_bytes) * count);
  } else {
    std::vector<float> f(static_cast<std::size_t>(count));
    is.read(reinterpret_cast<char*>(f.data()),
            static_cast<std::streamsize>(sample_bytes) * count);
    for (i64 i = 0; i < count; ++i) values[i] = static_cast<double>(f[static_cast<std::size_t>(i)]);
  }
  if (is.gcount() != static_cast<std::streamsize>(sample_bytes) * count) {
    throw FormatError("lf4: truncated payload in " + path + ": header declares " +
                      std::to_string(count) + " samples (U_v=" + std::to_string(uv) +
                      ", U_h=" + std::to_string(uh) + ", H=" + std::to_string(h) +
                      ", W=" + std::to_string(w) + ", C=" + std::to_string(c) +
                      "), file holds " + std::to_string(is.gcount() / sample_bytes));
  }
  return Tensor::from_array(
      Shape{static_cast<i64>(uv), static_cast<i64>(uh), static_cast<i64>(h),
            static_cast<i64>(w), static_cast<i64>(c)},
      std::move(values));
}

void save_lf4(const LightField& lf, const std::string& path, LfDtype dtype) {
  save_lf4_tensor(lf.data, path, dtype);
}

LightField load_lf4(const std::string& path) {
  Tensor t = load_lf4_tensor(path);
  if (t.extent(0) != t.extent(1)) {
    throw FormatError("lf4: U_v=" + std::to_string(t.extent(0)) +
                      " != U_h=" + std::to_string(t.extent(1)) + " in " + path);
  }
  return LightField(t);
}

void save_sai_grid(const LightField& lf, const std::string& dir) {
  if (lf.channels() != 1 && lf.channels() != 3) {
    throw ArgumentError("sai-grid supports 1 or 3 channels, got " +
                        std::to_string(lf.channels()));
  }
  fs::create_directories(dir);
  nlohmann::json manifest = {{"views", lf.angular()},
                             {"height", lf.height()},
                             {"width", lf.width()},
                             {"channels", lf.channels()}};
  std::ofstream ms(fs::path(dir) / "manifest.json");
  if (!ms) throw IoError("cannot write manifest.json in " + dir);
  ms << manifest.dump(2) << "\n";

  for (i64 v = 0; v < lf.angular(); ++v) {
    for (i64 u = 0; u < lf.angular(); ++u) {
      write_png((fs::path(dir) / view_name(v, u)).string(), png_from_image(lf.view(v, u)));
    }
  }
}

LightField load_sai_grid(const std::string& dir) {
  const fs::path mpath = fs::path(dir) / "manifest.json";
  std::ifstream ms(mpath);
  if (!ms) throw FormatError("sai-grid: missing manifest.json in " + dir);
  nlohmann::json manifest;
  try {
    ms >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("sai-grid: invalid manifest.json: " + std::string(e.what()));
  }
  for (const char* key : {"views", "height", "width", "channels"}) {
    if (!manifest.contains(key)) {
      throw FormatError(std::string("sai-grid: manifest.json missing field '") + key + "'");
    }
  }
  const i64 U = manifest["views"].get<i64>();
  const i64 H = manifest["height"].get<i64>();
  const i64 W = manifest["width"].get<i64>();
  const i64 C = manifest["channels"].get<i64>();

  Tensor data = Tensor::zeros(Shape{U, U, H, W, C});
  const i64 block = H * W * C;
  for (i64 v = 0; v < U; ++v) {
    for (i64 u = 0; u < U; ++u) {
      const fs::path p = fs::path(dir) / view_name(v, u);
      if (!fs::exists(p)) {
        throw FormatError("sai-grid: missing view file " + view_name(v, u) + " in " + dir);
      }
      Tensor img = image_from_png(read_png(p.string()));
      if (img.extent(0) != H || img.extent(1) != W || img.extent(2) != C) {
        throw FormatError("sai-grid: " + view_name(v, u) + " has shape " +
                          shape_str(img.shape()) + ", manifest declares [" +
                          std::to_string(H) + "," + std::to_string(W) + "," +
                          std::to_string(C) + "]");
      }
      data.mutable_values().segment((v * U + u) * block, block) = img.values();
    }
  }
  return LightField(data);
}

Tensor epi(const LightField& lf, i64 fixed_row, i64 fixed_v) {
  const i64 U = lf.angular();
  if (fixed_row < 0 || fixed_row >= lf.height()) {
    throw ArgumentError("epi: row " + std::to_string(fixed_row) + " out of range [0," +
                        std::to_string(lf.height()) + ")");
  }
  if (fixed_v < 0 || fixed_v >= U) {
    throw ArgumentError("epi: v " + std::to_string(fixed_v) + " out of range [0," +
                        std::to_string(U) + ")");
  }
  const i64 W = lf.width(), C = lf.channels();
  Tensor out = Tensor::zeros(Shape{U, W, C});
  const i64 row_len = W * C;
  const i64 view_block = lf.height() * row_len;
  for (i64 u = 0; u < U; ++u) {
    out.mutable_values().segment(u * row_len, row_len) = lf.data.values().segment(
        (fixed_v * U + u) * view_block + fixed_row * row_len, row_len);
  }
  return out;
}

Tensor refocus(const LightField& lf, double slope) {
  const i64 U = lf.angular();
  const i64 H = lf.height(), W = lf.width();
  Tape scratch;
  std::vector<Tensor> aligned;
  aligned.reserve(static_cast<std::size_t>(U * U));
  for (i64 v = 0; v < U; ++v) {
    for (i64 u = 0; u < U; ++u) {
      const ViewOffset du = lf.offset(v, u);
      Tensor grid = const_offset_grid(H, W, slope * static_cast<double>(du.dh),
                                      slope * static_cast<double>(du.dv));
      aligned.push_back(grid_sample(scratch, lf.view(v, u), grid));
    }
  }
  return reduce_view_mean(scratch, stack_leading(scratch, aligned));
}

Tensor image_from_png(const PngImage& img) {
  Tensor t = Tensor::zeros(Shape{img.height, img.width, img.channels});
  Eigen::ArrayXd& v = t.mutable_values();
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    v[static_cast<Eigen::Index>(i)] = static_cast<double>(img.pixels[i]) / 255.0;
  }
  return t;
}

PngImage png_from_image(const Tensor& image) {
  if (image.rank() != 3 || (image.extent(2) != 1 && image.extent(2) != 3)) {
    throw ArgumentError("png_from_image: need [H,W,1] or [H,W,3], got " +
                        shape_str(image.shape()));
  }
  PngImage out;
  out.height = image.extent(0);
  out.width = image.extent(1);
  out.channels = image.extent(2);
  out.pixels.resize(static_cast<std::size_t>(image.size()));
  const Eigen::ArrayXd& v = image.values();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double scaled = std::min(std::max(v[i], 0.0), 1.0) * 255.0;
    // nearbyint under the default rounding mode rounds half to even.
    out.pixels[static_cast<std::size_t>(i)] =
        static_cast<std::uint8_t>(std::nearbyint(scaled));
  }
  return out;
}

Tensor to_luminance(const Tensor& image) {
  if (image.rank() != 3) {
    throw ShapeError("to_luminance: need [H,W,C], got " + shape_str(image.shape()));
  }
  if (image.extent(2) == 1) return image;
  if (image.extent(2) != 3) {
    throw ArgumentError("to_luminance: need 1 or 3 channels, got " +
                        std::to_string(image.extent(2)));
  }
  const i64 H = image.extent(0), W = image.extent(1);
  Tensor out = Tensor::zeros(Shape{H, W, 1});
  const double* src = image.values().data();
  double* dst = out.mutable_values().data();
  for (i64 p = 0; p < H * W; ++p) {
    dst[p] = 0.299 * src[3 * p] + 0.587 * src[3 * p + 1] + 0.114 * src[3 * p + 2];
  }
  return out;
}

}  // namespace lfs
