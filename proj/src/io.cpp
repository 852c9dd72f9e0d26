#include "gramflow/io.hpp"

#include <cstring>
#include <fstream>

namespace gramflow {

namespace {

constexpr char kMagic[4] = {'L', 'G', 'F', 'T'};

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

struct Header {
  LgftDtype dtype;
  Shape dims;
};

void write_header(std::ostream& os, LgftDtype dtype, const Shape& dims) {
  os.write(kMagic, 4);
  put_u32(os, kLgftVersion);
  os.put(static_cast<char>(dtype));
  os.put(static_cast<char>(dims.size()));
  for (std::size_t d : dims) put_u64(os, d);
}

Header read_header(std::istream& is, const std::filesystem::path& path) {
  char magic[4];
  is.read(magic, 4);
  require_schema(is.good() && std::memcmp(magic, kMagic, 4) == 0,
                 path.string() + ": not an LGFT file");
  std::uint32_t version = get_u32(is);
  require_schema(version == kLgftVersion,
                 path.string() + ": unsupported LGFT version " + std::to_string(version));
  int dtype = is.get();
  require_schema(dtype >= 0 && dtype <= 2,
                 path.string() + ": unknown dtype code " + std::to_string(dtype));
  int ndim = is.get();
  require_schema(ndim >= 1, path.string() + ": tensor rank must be >= 1");
  Shape dims(static_cast<std::size_t>(ndim));
  for (auto& d : dims) {
    d = static_cast<std::size_t>(get_u64(is));
    require_schema(is.good() && d >= 1, path.string() + ": bad extent in header");
  }
  return {static_cast<LgftDtype>(dtype), std::move(dims)};
}

}  // namespace

void lgft_write(const std::filesystem::path& path, const Tensor& t, LgftDtype dtype) {
  require(dtype == LgftDtype::f32 || dtype == LgftDtype::f64,
          "lgft_write stores fp32/fp64 tensors; use lgft_write_u8 for masks");
  std::ofstream os(path, std::ios::binary);
  require_schema(os.good(), "cannot open " + path.string() + " for writing");
  write_header(os, dtype, t.dims());
  if (dtype == LgftDtype::f64) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      std::uint64_t bits;
      double v = t[i];
      std::memcpy(&bits, &v, 8);
      put_u64(os, bits);
    }
  } else {
    for (std::size_t i = 0; i < t.size(); ++i) {
      float f = static_cast<float>(t[i]);
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      put_u32(os, bits);
    }
  }
  require_schema(os.good(), "write failed for " + path.string());
}

Tensor lgft_read(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require_schema(is.good(), "cannot open " + path.string());
  Header h = read_header(is, path);
  require_schema(h.dtype != LgftDtype::u8,
                 path.string() + ": u8 payload, use lgft_read_u8");
  std::size_t n = shape_numel(h.dims);
  std::vector<double> data(n);
  if (h.dtype == LgftDtype::f64) {
    for (std::size_t i = 0; i < n; ++i) {
      std::uint64_t bits = get_u64(is);
      double v;
      std::memcpy(&v, &bits, 8);
      data[i] = v;
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t bits = get_u32(is);
      float f;
      std::memcpy(&f, &bits, 4);
      data[i] = static_cast<double>(f);
    }
  }
  require_schema(is.good(), path.string() + ": truncated payload");
  return Tensor::from_data(std::move(h.dims), std::move(data));
}

void lgft_write_u8(const std::filesystem::path& path, const Shape& dims,
                   const std::vector<std::uint8_t>& data) {
  require(shape_numel(dims) == data.size(), "u8 payload does not match shape");
  std::ofstream os(path, std::ios::binary);
  require_schema(os.good(), "cannot open " + path.string() + " for writing");
  write_header(os, LgftDtype::u8, dims);
  os.write(reinterpret_cast<const char*>(data.data()),
           static_cast<std::streamsize>(data.size()));
  require_schema(os.good(), "write failed for " + path.string());
}

std::pair<Shape, std::vector<std::uint8_t>> lgft_read_u8(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require_schema(is.good(), "cannot open " + path.string());
  Header h = read_header(is, path);
  require_schema(h.dtype == LgftDtype::u8, path.string() + ": expected u8 payload");
  std::size_t n = shape_numel(h.dims);
  std::vector<std::uint8_t> data(n);
  is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(n));
  require_schema(is.good(), path.string() + ": truncated payload");
  return {std::move(h.dims), std::move(data)};
}

}  // namespace gramflow
