#pragma once

// Dataset ingestion for the canonical distribution formats: MNIST IDX files,
// CIFAR-10 binary batches and SVHN cropped-digit MATLAB (level 5) containers.
// Images are scaled to [0, 1] and stored channel-major (C, H, W).

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fedcon/tensor.hpp"

namespace fedcon {

/// A distribution file is missing, truncated or unreadable.
class IngestionError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A file is readable but its content does not follow the expected format.
class FormatError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

enum class DatasetName { mnist, cifar10, svhn };

inline std::string_view dataset_name(DatasetName d) {
  switch (d) {
    case DatasetName::mnist: return "mnist";
    case DatasetName::cifar10: return "cifar10";
    case DatasetName::svhn: return "svhn";
  }
  return "?";
}

inline DatasetName parse_dataset_name(std::string_view s) {
  if (s == "mnist" || s == "MNIST") return DatasetName::mnist;
  if (s == "cifar10" || s == "CIFAR10" || s == "cifar") return DatasetName::cifar10;
  if (s == "svhn" || s == "SVHN") return DatasetName::svhn;
  throw std::invalid_argument("unknown dataset '" + std::string(s) + "' (expected mnist, cifar10 or svhn)");
}

struct DatasetDescriptor {
  DatasetName name = DatasetName::mnist;
  std::size_t height = 0, width = 0, channels = 0;
  std::size_t num_classes = 10;
  std::size_t train_size = 0, test_size = 0;

  Shape image_shape_chw() const { return {channels, height, width}; }
};

inline DatasetDescriptor describe(DatasetName name) {
  switch (name) {
    case DatasetName::mnist: return {name, 28, 28, 1, 10, 60000, 10000};
    case DatasetName::cifar10: return {name, 32, 32, 3, 10, 50000, 10000};
    case DatasetName::svhn: return {name, 32, 32, 3, 10, 73257, 26032};
  }
  return {};
}

struct LabeledExample {
  Tensor<float> image;  // (C, H, W), values in [0, 1]
  int label = 0;
};

struct UnlabeledExample {
  Tensor<float> image;
};

struct LoadedDataset {
  std::vector<LabeledExample> train;
  std::vector<LabeledExample> test;
  DatasetDescriptor descriptor;
};

namespace detail {

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open dataset file '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IngestionError("error reading dataset file '" + path.string() + "'");
  return bytes;
}

inline std::uint32_t read_be32(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) | p[3];
}

inline std::uint32_t read_le32(const std::uint8_t* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}

/// First existing candidate, else the first candidate (so errors name it).
inline std::filesystem::path locate(const std::filesystem::path& root, std::initializer_list<std::string_view> subdirs,
                                    std::string_view file) {
  std::filesystem::path first;
  for (auto sub : subdirs) {
    auto p = sub.empty() ? root / file : root / sub / file;
    if (first.empty()) first = p;
    if (std::filesystem::exists(p)) return p;
  }
  return first;
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// Reads an IDX image file (magic 0x00000803) as (1, rows, cols) images.
inline std::vector<Tensor<float>> read_idx_images(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  if (bytes.size() >= 4 && detail::read_be32(bytes.data()) != kIdxImageMagic)
    throw FormatError("bad IDX image magic in '" + path.string() + "'");
  if (bytes.size() < 16) throw IngestionError("truncated IDX image file '" + path.string() + "'");
  const std::size_t count = detail::read_be32(bytes.data() + 4);
  const std::size_t rows = detail::read_be32(bytes.data() + 8);
  const std::size_t cols = detail::read_be32(bytes.data() + 12);
  if (bytes.size() != 16 + count * rows * cols) throw IngestionError("truncated IDX image file '" + path.string() + "'");
  std::vector<Tensor<float>> images;
  images.reserve(count);
  const std::uint8_t* p = bytes.data() + 16;
  for (std::size_t i = 0; i < count; ++i) {
    Tensor<float> img({1, rows, cols});
    for (std::size_t j = 0; j < rows * cols; ++j) img[j] = float(*p++) / 255.0f;
    images.push_back(std::move(img));
  }
  return images;
}

/// Reads an IDX label file (magic 0x00000801).
inline std::vector<int> read_idx_labels(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  if (bytes.size() >= 4 && detail::read_be32(bytes.data()) != kIdxLabelMagic)
    throw FormatError("bad IDX label magic in '" + path.string() + "'");
  if (bytes.size() < 8) throw IngestionError("truncated IDX label file '" + path.string() + "'");
  const std::size_t count = detail::read_be32(bytes.data() + 4);
  if (bytes.size() != 8 + count) throw IngestionError("truncated IDX label file '" + path.string() + "'");
  return std::vector<int>(bytes.begin() + 8, bytes.end());
}

inline constexpr std::size_t kCifarRecordBytes = 1 + 3072;

/// Reads one CIFAR-10 binary batch: records of 1 label byte + 3072 pixel bytes
/// (1024 red, 1024 green, 1024 blue, each row-major 32x32).
inline std::vector<LabeledExample> read_cifar_batch(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  if (bytes.empty() || bytes.size() % kCifarRecordBytes != 0)
    throw IngestionError("CIFAR batch '" + path.string() + "' is not a whole number of 3073-byte records");
  std::vector<LabeledExample> out;
  out.reserve(bytes.size() / kCifarRecordBytes);
  for (std::size_t off = 0; off < bytes.size(); off += kCifarRecordBytes) {
    const int label = bytes[off];
    if (label > 9) throw FormatError("CIFAR batch '" + path.string() + "' has label byte " + std::to_string(label));
    Tensor<float> img({3, 32, 32});
    for (std::size_t j = 0; j < 3072; ++j) img[j] = float(bytes[off + 1 + j]) / 255.0f;
    out.push_back({std::move(img), label});
  }
  return out;
}

/// Writes examples in CIFAR-10 binary batch format. Pixels are rounded to bytes.
inline void write_cifar_batch(const std::filesystem::path& path, const std::vector<LabeledExample>& examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestionError("cannot write '" + path.string() + "'");
  std::vector<char> record(kCifarRecordBytes);
  for (const auto& ex : examples) {
    if (ex.image.size() != 3072) throw DimensionError("CIFAR records hold 3x32x32 images");
    record[0] = char(ex.label);
    for (std::size_t j = 0; j < 3072; ++j)
      record[1 + j] = char(std::uint8_t(std::lround(std::clamp(ex.image[j], 0.0f, 1.0f) * 255.0f)));
    out.write(record.data(), std::streamsize(record.size()));
  }
  if (!out) throw IngestionError("error writing '" + path.string() + "'");
}

namespace mat5 {

// Data element types of the level 5 MAT-file format.
inline constexpr std::uint32_t miINT8 = 1, miUINT8 = 2, miINT16 = 3, miUINT16 = 4, miINT32 = 5, miUINT32 = 6,
                               miSINGLE = 7, miDOUBLE = 9, miINT64 = 12, miUINT64 = 13, miMATRIX = 14,
                               miCOMPRESSED = 15;

struct Array {
  std::string name;
  std::vector<std::size_t> dims;  // column-major dimensions
  std::vector<double> values;     // real part, column-major
};

struct Element {
  std::uint32_t type = 0;
  const std::uint8_t* data = nullptr;
  std::size_t size = 0;
  std::size_t consumed = 0;  // bytes including tag and padding
};

inline Element read_element(const std::uint8_t* p, std::size_t avail, const std::string& file) {
  if (avail < 8) throw FormatError("truncated MAT element in '" + file + "'");
  Element e;
  const std::uint32_t word = detail::read_le32(p);
  if (word >> 16) {  // small data element: 2-byte size, 2-byte type, 4 data bytes
    e.type = word & 0xffff;
    e.size = word >> 16;
    e.data = p + 4;
    e.consumed = 8;
    if (e.size > 4) throw FormatError("invalid small MAT element in '" + file + "'");
    return e;
  }
  e.type = word;
  e.size = detail::read_le32(p + 4);
  e.data = p + 8;
  const std::size_t padded = e.type == miCOMPRESSED ? e.size : (e.size + 7) / 8 * 8;
  if (8 + e.size > avail) throw FormatError("truncated MAT element in '" + file + "'");
  e.consumed = std::min(avail, 8 + padded);
  return e;
}

inline std::vector<double> numeric_values(const Element& e, const std::string& file) {
  std::vector<double> out;
  auto take = [&](auto tag) {
    using V = decltype(tag);
    const std::size_t n = e.size / sizeof(V);
    out.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      V v;
      std::memcpy(&v, e.data + i * sizeof(V), sizeof(V));
      out[i] = double(v);
    }
  };
  switch (e.type) {
    case miINT8: take(std::int8_t{}); break;
    case miUINT8: take(std::uint8_t{}); break;
    case miINT16: take(std::int16_t{}); break;
    case miUINT16: take(std::uint16_t{}); break;
    case miINT32: take(std::int32_t{}); break;
    case miUINT32: take(std::uint32_t{}); break;
    case miSINGLE: take(float{}); break;
    case miDOUBLE: take(double{}); break;
    case miINT64: take(std::int64_t{}); break;
    case miUINT64: take(std::uint64_t{}); break;
    default: throw FormatError("unsupported MAT numeric type " + std::to_string(e.type) + " in '" + file + "'");
  }
  return out;
}

inline Array parse_matrix(const Element& m, const std::string& file) {
  Array a;
  const std::uint8_t* p = m.data;
  std::size_t avail = m.size;
  auto next = [&]() {
    Element e = read_element(p, avail, file);
    p += e.consumed;
    avail -= e.consumed;
    return e;
  };
  const Element flags = next();
  if (flags.type != miUINT32 || flags.size < 8) throw FormatError("bad MAT array flags in '" + file + "'");
  if (detail::read_le32(flags.data) & 0x0800) throw FormatError("complex MAT arrays are not supported in '" + file + "'");
  const Element dims = next();
  for (double d : numeric_values(dims, file)) a.dims.push_back(std::size_t(d));
  const Element name = next();
  a.name.assign(reinterpret_cast<const char*>(name.data), name.size);
  const Element real = next();
  a.values = numeric_values(real, file);
  std::size_t expect = 1;
  for (auto d : a.dims) expect *= d;
  if (a.values.size() != expect) throw FormatError("MAT array '" + a.name + "' size mismatch in '" + file + "'");
  return a;
}

inline std::vector<std::uint8_t> inflate_bytes(const std::uint8_t* data, std::size_t size, const std::string& file) {
  z_stream zs{};
  if (inflateInit(&zs) != Z_OK) throw FormatError("zlib init failed for '" + file + "'");
  zs.next_in = const_cast<Bytef*>(data);
  zs.avail_in = static_cast<uInt>(size);
  std::vector<std::uint8_t> out;
  std::array<std::uint8_t, 1 << 16> chunk{};
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = chunk.data();
    zs.avail_out = static_cast<uInt>(chunk.size());
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw FormatError("corrupt compressed MAT element in '" + file + "'");
    }
    out.insert(out.end(), chunk.data(), chunk.data() + (chunk.size() - zs.avail_out));
    if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) break;
  }
  inflateEnd(&zs);
  return out;
}

/// All numeric arrays in a level 5 MAT-file (little-endian only).
inline std::vector<Array> read_mat_file(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  const std::string file = path.string();
  if (bytes.size() < 128) throw IngestionError("truncated MAT file '" + file + "'");
  if (bytes[126] != 'I' || bytes[127] != 'M')
    throw FormatError("'" + file + "' is not a little-endian level 5 MAT file");
  std::vector<Array> arrays;
  std::size_t off = 128;
  while (off + 8 <= bytes.size()) {
    const Element e = read_element(bytes.data() + off, bytes.size() - off, file);
    off += e.consumed;
    if (e.type == miCOMPRESSED) {
      const auto raw = inflate_bytes(e.data, e.size, file);
      const Element inner = read_element(raw.data(), raw.size(), file);
      if (inner.type == miMATRIX) arrays.push_back(parse_matrix(inner, file));
    } else if (e.type == miMATRIX) {
      arrays.push_back(parse_matrix(e, file));
    }
  }
  return arrays;
}

}  // namespace mat5

/// SVHN cropped digits: X is (32, 32, 3, N) uint8 column-major, y is (N, 1) with
/// digit 0 stored as label 10.
inline std::vector<LabeledExample> read_svhn_mat(const std::filesystem::path& path) {
  const auto arrays = mat5::read_mat_file(path);
  const mat5::Array* x = nullptr;
  const mat5::Array* y = nullptr;
  for (const auto& a : arrays) {
    if (a.name == "X") x = &a;
    if (a.name == "y") y = &a;
  }
  if (!x || !y) throw FormatError("'" + path.string() + "' lacks the X and y arrays");
  if (x->dims.size() != 4 || x->dims[0] != 32 || x->dims[1] != 32 || x->dims[2] != 3)
    throw FormatError("'" + path.string() + "': X must be 32x32x3xN");
  const std::size_t n = x->dims[3];
  if (y->values.size() != n) throw FormatError("'" + path.string() + "': label count differs from image count");
  std::vector<LabeledExample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Tensor<float> img({3, 32, 32});
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t r = 0; r < 32; ++r)
        for (std::size_t col = 0; col < 32; ++col)
          img[(c * 32 + r) * 32 + col] = float(x->values[r + 32 * (col + 32 * (c + 3 * i))]) / 255.0f;
    int label = int(y->values[i]);
    if (label == 10) label = 0;
    if (label < 0 || label > 9) throw FormatError("'" + path.string() + "': label out of range");
    out.push_back({std::move(img), label});
  }
  return out;
}

inline void check_size(std::size_t got, std::size_t want, const std::string& what) {
  if (got != want)
    throw FormatError(what + " holds " + std::to_string(got) + " examples, expected " + std::to_string(want));
}

/// Loads train and test splits from `root` (or a dataset-named subdirectory),
/// preserving file order.
inline LoadedDataset load_dataset(DatasetName name, const std::filesystem::path& root) {
  LoadedDataset ds;
  ds.descriptor = describe(name);
  switch (name) {
    case DatasetName::mnist: {
      auto load = [&](std::string_view images, std::string_view labels, std::vector<LabeledExample>& dst) {
        const auto ipath = detail::locate(root, {"", "mnist", "MNIST/raw"}, images);
        const auto lpath = detail::locate(root, {"", "mnist", "MNIST/raw"}, labels);
        auto imgs = read_idx_images(ipath);
        const auto labs = read_idx_labels(lpath);
        if (imgs.size() != labs.size())
          throw FormatError("'" + ipath.string() + "' and '" + lpath.string() + "' disagree on example count");
        dst.reserve(imgs.size());
        for (std::size_t i = 0; i < imgs.size(); ++i) {
          if (imgs[i].dim(1) != 28 || imgs[i].dim(2) != 28) throw FormatError("'" + ipath.string() + "' is not 28x28");
          dst.push_back({std::move(imgs[i]), labs[i]});
        }
      };
      load("train-images-idx3-ubyte", "train-labels-idx1-ubyte", ds.train);
      load("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", ds.test);
      break;
    }
    case DatasetName::cifar10: {
      for (int b = 1; b <= 5; ++b) {
        auto part = read_cifar_batch(
            detail::locate(root, {"", "cifar-10-batches-bin", "cifar10"}, "data_batch_" + std::to_string(b) + ".bin"));
        ds.train.insert(ds.train.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
      }
      ds.test = read_cifar_batch(detail::locate(root, {"", "cifar-10-batches-bin", "cifar10"}, "test_batch.bin"));
      break;
    }
    case DatasetName::svhn:
      ds.train = read_svhn_mat(detail::locate(root, {"", "svhn"}, "train_32x32.mat"));
      ds.test = read_svhn_mat(detail::locate(root, {"", "svhn"}, "test_32x32.mat"));
      break;
  }
  check_size(ds.train.size(), ds.descriptor.train_size, std::string(dataset_name(name)) + " training set");
  check_size(ds.test.size(), ds.descriptor.test_size, std::string(dataset_name(name)) + " test set");
  return ds;
}

}  // namespace fedcon
