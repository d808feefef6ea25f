#include "frepa/tensorio.hpp"

#include "json.hpp"
#include <png.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <memory>
#include <sstream>

namespace frepa {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

constexpr std::array<std::uint8_t, 4> kMagic = {'F', 'R', 'P', 'T'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[at + i]) << (8 * i);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_frpt(const Tensor& tensor) {
  if (tensor.rank() == 0 || tensor.rank() > 255) throw Error("FRPT rank must be in [1, 255]");
  std::vector<std::uint8_t> out(kMagic.begin(), kMagic.end());
  out.reserve(5 + 4 * tensor.shape().size() + 4 * static_cast<std::size_t>(tensor.size()));
  out.push_back(static_cast<std::uint8_t>(tensor.rank()));
  for (Index d : tensor.shape()) {
    if (d > static_cast<Index>(UINT32_MAX)) throw Error("FRPT dimension exceeds u32");
    put_u32(out, static_cast<std::uint32_t>(d));
  }
  for (float v : tensor.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

Tensor decode_frpt(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 5 || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin()))
    throw Error("not an FRPT container (bad magic)");
  const std::size_t rank = bytes[4];
  if (rank == 0) throw Error("FRPT rank 0");
  if (bytes.size() < 5 + 4 * rank) throw Error("truncated FRPT header");
  Shape shape(rank);
  for (std::size_t i = 0; i < rank; ++i) shape[i] = get_u32(bytes, 5 + 4 * i);
  const std::size_t offset = 5 + 4 * rank;
  for (Index d : shape)
    if (d == 0) throw Error("FRPT zero dimension");
  const auto count = static_cast<std::size_t>(shape_size(shape));
  if (bytes.size() != offset + 4 * count)
    throw Error("FRPT payload size " + std::to_string(bytes.size() - offset) + " does not match shape " +
                shape_string(shape));
  Tensor::Array data(static_cast<Index>(count));
  for (std::size_t i = 0; i < count; ++i) data[static_cast<Index>(i)] = std::bit_cast<float>(get_u32(bytes, offset + 4 * i));
  return Tensor(std::move(shape), std::move(data));
}

void write_tensor(const std::filesystem::path& path, const Tensor& tensor) {
  const auto bytes = encode_frpt(tensor);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed: " + path.string());
}

Tensor read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_frpt(bytes);
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// PNG

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_error_handler(png_structp, png_const_charp msg) { throw Error(std::string("libpng: ") + msg); }
void png_warning_handler(png_structp, png_const_charp) {}

}  // namespace

Tensor read_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw Error("cannot open " + path.string());
  std::array<unsigned char, 8> sig{};
  if (std::fread(sig.data(), 1, 8, file.get()) != 8 || png_sig_cmp(sig.data(), 0, 8))
    throw Error(path.string() + ": not a PNG file");

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_handler, png_warning_handler);
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_read_struct(p, i, nullptr); }
  } guard{&png, &info};

  try {
    png_init_io(png, file.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    const int color = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    depth = png_get_bit_depth(png, info);
    const int channels = png_get_channels(png, info);
    const Index width = png_get_image_width(png, info);
    const Index height = png_get_image_height(png, info);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    if (channels != 1 && channels != 3) throw Error("unsupported PNG channel count " + std::to_string(channels));

    std::vector<unsigned char> buffer(rowbytes * static_cast<std::size_t>(height));
    std::vector<png_bytep> rows(static_cast<std::size_t>(height));
    for (Index y = 0; y < height; ++y) rows[static_cast<std::size_t>(y)] = buffer.data() + y * rowbytes;
    png_read_image(png, rows.data());

    Tensor out({channels, height, width});
    const double scale = depth == 16 ? 65535.0 : 255.0;
    for (Index y = 0; y < height; ++y) {
      const unsigned char* row = rows[static_cast<std::size_t>(y)];
      for (Index x = 0; x < width; ++x)
        for (Index c = 0; c < channels; ++c) {
          const Index i = x * channels + c;
          const double v = depth == 16 ? (row[2 * i] << 8 | row[2 * i + 1]) : row[i];
          out(c, y, x) = static_cast<float>(v / scale);
        }
    }
    return out;
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

void write_png(const std::filesystem::path& path, const Tensor& image, int bit_depth) {
  if (image.rank() != 3 || (image.channels() != 1 && image.channels() != 3))
    throw Error("write_png expects a [1|3, H, W] tensor, got " + shape_string(image.shape()));
  if (bit_depth != 8 && bit_depth != 16) throw Error("PNG bit depth must be 8 or 16");
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw Error("cannot open " + path.string() + " for writing");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_handler, png_warning_handler);
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_write_struct(p, i); }
  } guard{&png, &info};

  const Index c = image.channels(), h = image.shape()[1], w = image.shape()[2];
  const double scale = bit_depth == 16 ? 65535.0 : 255.0;
  const std::size_t bpp = bit_depth / 8;
  std::vector<unsigned char> buffer(static_cast<std::size_t>(h * w * c) * bpp);
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      for (Index k = 0; k < c; ++k) {
        const auto v = static_cast<unsigned>(std::lround(std::clamp<double>(image(k, y, x), 0.0, 1.0) * scale));
        unsigned char* p = buffer.data() + ((y * w + x) * c + k) * bpp;
        if (bit_depth == 16) {
          p[0] = static_cast<unsigned char>(v >> 8);
          p[1] = static_cast<unsigned char>(v & 0xff);
        } else {
          p[0] = static_cast<unsigned char>(v);
        }
      }
  std::vector<png_bytep> rows(static_cast<std::size_t>(h));
  for (Index y = 0; y < h; ++y) rows[static_cast<std::size_t>(y)] = buffer.data() + y * w * c * bpp;

  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), bit_depth,
               c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
}

// ---------------------------------------------------------------------------
// Normalization

std::optional<WindowSpec> ct_window(const std::string& name) {
  if (name == "lung") return WindowSpec{-1000.0, 400.0, name};
  if (name == "abdomen") return WindowSpec{-160.0, 240.0, name};
  if (name == "brain") return WindowSpec{-30.0, 90.0, name};
  if (name == "bone") return WindowSpec{-300.0, 1200.0, name};
  return std::nullopt;
}

Tensor normalize_ct(const Tensor& volume, const WindowSpec& window) {
  if (!(window.low < window.high)) throw Error("window '" + window.name + "' requires low < high");
  if (!volume.all_finite()) throw Error("normalize_ct: non-finite Hounsfield values");
  const double width = window.high - window.low;
  Tensor out(volume.shape());
  out.data() = ((volume.data().cast<double>() - window.low) / width).min(1.0).max(0.0).cast<float>();
  return out;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw Error("percentile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

Tensor normalize_percentile(const Tensor& image) {
  if (!image.all_finite()) throw Error("normalize_percentile: non-finite intensities");
  std::vector<double> values(image.data().begin(), image.data().end());
  const double lo = percentile(values, 0.5);
  const double hi = percentile(std::move(values), 99.5);
  if (!(hi > lo)) throw Error("degenerate intensity range");
  Tensor out(image.shape());
  out.data() = ((image.data().cast<double>().max(lo).min(hi) - lo) / (hi - lo)).cast<float>();
  return out;
}

// ---------------------------------------------------------------------------
// Geometry

namespace {

// Catmull-Rom (a = -0.5) cubic convolution weights for fractional offset t.
std::array<double, 4> catmull_rom(double t) {
  const double t2 = t * t, t3 = t2 * t;
  return {-0.5 * t3 + t2 - 0.5 * t, 1.5 * t3 - 2.5 * t2 + 1.0, -1.5 * t3 + 2.0 * t2 + 0.5 * t, 0.5 * t3 - 0.5 * t2};
}

// Dense 1D resampling matrix (dst x src) with replicate-edge sampling.
Eigen::MatrixXd resample_matrix(Index src, Index dst) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(dst, src);
  const double scale = static_cast<double>(src) / static_cast<double>(dst);
  for (Index i = 0; i < dst; ++i) {
    const double x = (static_cast<double>(i) + 0.5) * scale - 0.5;
    const double base = std::floor(x);
    const auto w = catmull_rom(x - base);
    for (int k = 0; k < 4; ++k) {
      const Index j = std::clamp<Index>(static_cast<Index>(base) - 1 + k, 0, src - 1);
      m(i, j) += w[static_cast<std::size_t>(k)];
    }
  }
  return m;
}

}  // namespace

Tensor resize_bicubic(const Tensor& image, Index height, Index width) {
  if (image.rank() != 3) throw Error("resize expects a [C, H, W] tensor, got " + shape_string(image.shape()));
  const Index h = image.shape()[1], w = image.shape()[2];
  if (h == height && w == width) return image;
  const Eigen::MatrixXd rows = resample_matrix(h, height);
  const Eigen::MatrixXd cols = resample_matrix(w, width);
  Tensor out({image.channels(), height, width});
  for (Index c = 0; c < image.channels(); ++c)
    out.plane(c) = (rows * image.plane(c).cast<double>() * cols.transpose()).cast<float>();
  return out;
}

Tensor resize_pad(const Tensor& image, Index target) {
  if (image.rank() != 3) throw Error("resize_pad expects a [C, H, W] tensor, got " + shape_string(image.shape()));
  const Index c = image.channels(), h = image.shape()[1], w = image.shape()[2];
  if (h < 8 || w < 8) throw Error("resize_pad requires H, W >= 8, got " + shape_string(image.shape()));
  if (c != 1 && c != 3) throw Error("resize_pad expects 1 or 3 channels, got " + std::to_string(c));
  if (target < 1) throw Error("resize_pad target must be positive");

  const double scale = static_cast<double>(target) / static_cast<double>(std::max(h, w));
  const Index nh = std::clamp<Index>(std::lround(static_cast<double>(h) * scale), 1, target);
  const Index nw = std::clamp<Index>(std::lround(static_cast<double>(w) * scale), 1, target);
  const Tensor resized = resize_bicubic(image, nh, nw);

  const Index top = (target - nh) / 2, left = (target - nw) / 2;
  Tensor out({3, target, target});
  for (Index k = 0; k < 3; ++k) out.plane(k).block(top, left, nh, nw) = resized.plane(c == 1 ? 0 : k);
  return out;
}

// ---------------------------------------------------------------------------
// Manifest

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw Error("cannot open manifest " + manifest.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw Error(manifest.string() + ": " + e.what());
  }
  const nlohmann::json& files = doc.is_array() ? doc : doc.value("files", nlohmann::json::array());
  if (!files.is_array()) throw Error(manifest.string() + ": 'files' must be an array");
  const auto base = manifest.parent_path();
  std::vector<ManifestEntry> entries;
  for (const auto& f : files) {
    if (!f.contains("path")) throw Error(manifest.string() + ": entry without 'path'");
    std::filesystem::path p = f.at("path").get<std::string>();
    entries.push_back({p.is_absolute() ? p : base / p, f.value("modality", ""), f.value("window", "none")});
  }
  return entries;
}

void write_manifest(const std::filesystem::path& manifest, const std::vector<ManifestEntry>& entries) {
  nlohmann::json files = nlohmann::json::array();
  const auto base = manifest.parent_path();
  for (const auto& e : entries) {
    const auto rel = base.empty() ? e.path : std::filesystem::proximate(e.path, base);
    files.push_back({{"path", rel.generic_string()}, {"modality", e.modality}, {"window", e.window}});
  }
  std::ofstream out(manifest);
  if (!out) throw Error("cannot write manifest " + manifest.string());
  out << nlohmann::json{{"files", files}}.dump(2) << '\n';
}

Tensor load_entry(const ManifestEntry& entry) {
  if (!std::filesystem::exists(entry.path)) throw Error("missing input file " + entry.path.string());
  const auto ext = entry.path.extension().string();
  Tensor raw = (ext == ".png" || ext == ".PNG") ? read_png(entry.path) : read_tensor(entry.path);
  if (entry.window == "none" || entry.window.empty()) return raw;
  if (entry.window == "percentile") return normalize_percentile(raw);
  if (auto w = ct_window(entry.window)) return normalize_ct(raw, *w);
  throw Error(entry.path.string() + ": unknown window '" + entry.window + "'");
}

}  // namespace frepa
