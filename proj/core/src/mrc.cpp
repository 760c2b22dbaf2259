#include "rmfn/mrc.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace rmfn {

namespace {

constexpr size_t kHeaderBytes = 1024;

void put_i32(uint8_t* p, int32_t v) {
  p[0] = static_cast<uint8_t>(v & 0xff);
  p[1] = static_cast<uint8_t>((v >> 8) & 0xff);
  p[2] = static_cast<uint8_t>((v >> 16) & 0xff);
  p[3] = static_cast<uint8_t>((v >> 24) & 0xff);
}

void put_f32(uint8_t* p, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_i32(p, static_cast<int32_t>(bits));
}

int32_t get_i32(const uint8_t* p, bool swap) {
  uint32_t v = static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
               (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
  if (swap) v = __builtin_bswap32(v);
  return static_cast<int32_t>(v);
}

float get_f32(const uint8_t* p, bool swap) {
  const uint32_t bits = static_cast<uint32_t>(get_i32(p, swap));
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace

MrcData mrc_read(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open MRC file '" + path + "'");
  std::vector<uint8_t> hdr(kHeaderBytes);
  f.read(reinterpret_cast<char*>(hdr.data()), kHeaderBytes);
  if (!f) throw std::runtime_error("truncated MRC header in '" + path + "'");

  if (std::memcmp(hdr.data() + 208, "MAP ", 4) != 0)
    throw std::runtime_error("'" + path + "' lacks the MAP identifier");

  // Machine stamp: 0x44 little-endian, 0x11 big-endian.
  bool swap = false;
  if (hdr[212] == 0x11)
    swap = true;
  else if (hdr[212] != 0x44 && hdr[212] != 0x00)
    throw std::runtime_error("unrecognized MRC machine stamp");

  int32_t nx = get_i32(hdr.data() + 0, swap);
  int32_t ny = get_i32(hdr.data() + 4, swap);
  int32_t nz = get_i32(hdr.data() + 8, swap);
  const int32_t mode = get_i32(hdr.data() + 12, swap);
  // A nonsensical shape with an unswapped read usually means a stampless
  // big-endian file; retry swapped.
  if (!swap && (nx <= 0 || ny <= 0 || nz <= 0 || mode < 0 || mode > 101)) {
    swap = true;
    nx = get_i32(hdr.data() + 0, swap);
    ny = get_i32(hdr.data() + 4, swap);
    nz = get_i32(hdr.data() + 8, swap);
  }
  if (get_i32(hdr.data() + 12, swap) != 2)
    throw std::runtime_error("unsupported MRC mode " +
                             std::to_string(get_i32(hdr.data() + 12, swap)) +
                             " (only mode 2, float32)");
  if (nx <= 0 || ny <= 0 || nz <= 0)
    throw std::runtime_error("bad MRC dimensions in '" + path + "'");

  const int32_t mx = get_i32(hdr.data() + 28, swap);
  const float xlen = get_f32(hdr.data() + 40, swap);
  const int32_t ispg = get_i32(hdr.data() + 88, swap);
  const int32_t nsymbt = get_i32(hdr.data() + 92, swap);
  if (nsymbt < 0) throw std::runtime_error("bad MRC symmetry block size");

  MrcData out;
  out.voxel_size = (mx > 0 && xlen > 0.0f) ? static_cast<double>(xlen) / mx : 1.0;
  out.is_volume = ispg != 0;

  f.seekg(static_cast<std::streamoff>(kHeaderBytes) + nsymbt, std::ios::beg);
  const int64_t n = static_cast<int64_t>(nx) * ny * nz;
  std::vector<uint8_t> raw(static_cast<size_t>(n) * 4);
  f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!f) throw std::runtime_error("truncated MRC data in '" + path + "'");

  out.values = Tensor({nz, ny, nx});
  for (int64_t i = 0; i < n; ++i)
    out.values[i] = static_cast<double>(get_f32(raw.data() + i * 4, swap));
  return out;
}

void mrc_write(const std::string& path, const Tensor& values, double voxel_size,
               bool is_volume) {
  if (values.rank() != 3)
    throw std::invalid_argument("MRC data must be rank 3, got " + values.shape_str());
  if (voxel_size <= 0.0) throw std::invalid_argument("voxel size must be positive");
  const int64_t nz = values.dim(0), ny = values.dim(1), nx = values.dim(2);

  double dmin = values[0], dmax = values[0], sum = 0.0, sum2 = 0.0;
  for (int64_t i = 0; i < values.size(); ++i) {
    const double v = values[i];
    dmin = std::min(dmin, v);
    dmax = std::max(dmax, v);
    sum += v;
    sum2 += v * v;
  }
  const double mean = sum / static_cast<double>(values.size());
  const double rms =
      std::sqrt(std::max(0.0, sum2 / static_cast<double>(values.size()) - mean * mean));

  std::vector<uint8_t> hdr(kHeaderBytes, 0);
  put_i32(hdr.data() + 0, static_cast<int32_t>(nx));
  put_i32(hdr.data() + 4, static_cast<int32_t>(ny));
  put_i32(hdr.data() + 8, static_cast<int32_t>(nz));
  put_i32(hdr.data() + 12, 2);  // mode: float32
  // nxstart/nystart/nzstart stay 0; sampling grid equals the extent.
  put_i32(hdr.data() + 28, static_cast<int32_t>(nx));  // mx
  put_i32(hdr.data() + 32, static_cast<int32_t>(ny));  // my
  put_i32(hdr.data() + 36, static_cast<int32_t>(nz));  // mz
  put_f32(hdr.data() + 40, static_cast<float>(voxel_size * static_cast<double>(nx)));
  put_f32(hdr.data() + 44, static_cast<float>(voxel_size * static_cast<double>(ny)));
  put_f32(hdr.data() + 48, static_cast<float>(voxel_size * static_cast<double>(nz)));
  put_f32(hdr.data() + 52, 90.0f);
  put_f32(hdr.data() + 56, 90.0f);
  put_f32(hdr.data() + 60, 90.0f);
  put_i32(hdr.data() + 64, 1);  // mapc
  put_i32(hdr.data() + 68, 2);  // mapr
  put_i32(hdr.data() + 72, 3);  // maps
  put_f32(hdr.data() + 76, static_cast<float>(dmin));
  put_f32(hdr.data() + 80, static_cast<float>(dmax));
  put_f32(hdr.data() + 84, static_cast<float>(mean));
  put_i32(hdr.data() + 88, is_volume ? 1 : 0);  // ispg
  std::memcpy(hdr.data() + 208, "MAP ", 4);
  hdr[212] = 0x44;  // little-endian stamp
  hdr[213] = 0x44;
  put_f32(hdr.data() + 216, static_cast<float>(rms));

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f.write(reinterpret_cast<const char*>(hdr.data()), kHeaderBytes);
  std::vector<uint8_t> raw(static_cast<size_t>(values.size()) * 4);
  for (int64_t i = 0; i < values.size(); ++i)
    put_f32(raw.data() + i * 4, static_cast<float>(values[i]));
  f.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!f) throw std::runtime_error("failed writing MRC data to '" + path + "'");
}

}  // namespace rmfn
