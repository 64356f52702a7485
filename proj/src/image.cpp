#include "radreg/image.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "radreg/volume.hpp"

namespace radreg {

Image2D load_image(const std::string& path) {
  std::ifstream hdr(path + ".json");
  if (!hdr) throw CorruptFileError("cannot open header: " + path + ".json");
  nlohmann::json j;
  hdr >> j;
  Image2D img(j.at("dims").at(0).get<int>(), j.at("dims").at(1).get<int>());
  std::ifstream raw(path + ".raw", std::ios::binary | std::ios::ate);
  if (!raw) throw CorruptFileError("cannot open payload: " + path + ".raw");
  const auto bytes = static_cast<size_t>(raw.tellg());
  if (bytes != img.size() * sizeof(float)) {
    throw CorruptFileError("image payload size mismatch: " + path);
  }
  raw.seekg(0);
  raw.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(bytes));
  return img;
}

void save_image(const Image2D& img, const std::string& path) {
  nlohmann::json j;
  j["dims"] = {img.height, img.width};
  std::ofstream hdr(path + ".json");
  hdr << j.dump(2) << "\n";
  std::ofstream raw(path + ".raw", std::ios::binary);
  raw.write(reinterpret_cast<const char*>(img.data.data()),
            static_cast<std::streamsize>(img.data.size() * sizeof(float)));
  if (!hdr || !raw) throw std::runtime_error("save_image: write failed for " + path);
}

void save_pgm16(const Image2D& img, const std::string& filename) {
  float lo = img.data.empty() ? 0.0f : img.data[0];
  float hi = lo;
  for (float v : img.data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const float scale = (hi > lo) ? 65535.0f / (hi - lo) : 0.0f;
  std::ofstream f(filename, std::ios::binary);
  f << "P5\n" << img.width << " " << img.height << "\n65535\n";
  for (float v : img.data) {
    const auto q = static_cast<uint16_t>(std::lround((v - lo) * scale));
    const unsigned char b[2] = {static_cast<unsigned char>(q >> 8),
                                static_cast<unsigned char>(q & 0xFF)};
    f.write(reinterpret_cast<const char*>(b), 2);
  }
  if (!f) throw std::runtime_error("save_pgm16: write failed for " + filename);
}

namespace {

void put_u32be(std::vector<unsigned char>& v, uint32_t x) {
  v.push_back(static_cast<unsigned char>(x >> 24));
  v.push_back(static_cast<unsigned char>(x >> 16));
  v.push_back(static_cast<unsigned char>(x >> 8));
  v.push_back(static_cast<unsigned char>(x));
}

void write_chunk(std::ofstream& f, const char type[4], const std::vector<unsigned char>& payload) {
  std::vector<unsigned char> buf;
  put_u32be(buf, static_cast<uint32_t>(payload.size()));
  buf.insert(buf.end(), type, type + 4);
  buf.insert(buf.end(), payload.begin(), payload.end());
  const uint32_t crc =
      crc32(0, buf.data() + 4, static_cast<uInt>(buf.size() - 4));
  put_u32be(buf, crc);
  f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

}  // namespace

void save_rgb(const ImageRGB& img, const std::string& filename) {
  if (filename.size() >= 4 && filename.substr(filename.size() - 4) == ".ppm") {
    std::ofstream f(filename, std::ios::binary);
    f << "P6\n" << img.width << " " << img.height << "\n255\n";
    f.write(reinterpret_cast<const char*>(img.data.data()),
            static_cast<std::streamsize>(img.data.size()));
    if (!f) throw std::runtime_error("save_rgb: write failed for " + filename);
    return;
  }
  // minimal PNG: one IDAT, filter type 0 per scanline
  std::vector<unsigned char> raw;
  raw.reserve((static_cast<size_t>(img.width) * 3 + 1) * img.height);
  for (int v = 0; v < img.height; ++v) {
    raw.push_back(0);  // filter none
    const unsigned char* row = &img.data[static_cast<size_t>(v) * img.width * 3];
    raw.insert(raw.end(), row, row + static_cast<size_t>(img.width) * 3);
  }
  uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
  std::vector<unsigned char> comp(comp_len);
  if (compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK) {
    throw std::runtime_error("save_rgb: deflate failed");
  }
  comp.resize(comp_len);

  std::ofstream f(filename, std::ios::binary);
  static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
  f.write(reinterpret_cast<const char*>(sig), 8);
  std::vector<unsigned char> ihdr;
  put_u32be(ihdr, static_cast<uint32_t>(img.width));
  put_u32be(ihdr, static_cast<uint32_t>(img.height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(2);  // color type RGB
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  write_chunk(f, "IHDR", ihdr);
  write_chunk(f, "IDAT", comp);
  write_chunk(f, "IEND", {});
  if (!f) throw std::runtime_error("save_rgb: write failed for " + filename);
}

}  // namespace radreg
