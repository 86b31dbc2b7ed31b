#include "vicc/mcs_io.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "vicc/errors.hpp"

namespace vicc {
namespace {

constexpr char kMagic[4] = {'M', 'C', 'S', '1'};
constexpr uint32_t kMaxDim = 1u << 20;

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(const unsigned char* b) {
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

std::string sidecar_path(const std::string& mcs_path) {
  std::filesystem::path p(mcs_path);
  if (p.extension() == ".mcs") p.replace_extension("");
  return p.string() + ".meta.json";
}

void save_mcs(const std::string& path, const ComplexImage& img,
              const std::string& extra_meta_json) {
  img.check();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw_format("save_mcs: cannot open " + path, FormatCode::None);
  os.write(kMagic, 4);
  put_u32(os, static_cast<uint32_t>(img.coils));
  put_u32(os, static_cast<uint32_t>(img.height));
  put_u32(os, static_cast<uint32_t>(img.width));
  std::vector<float> payload(img.size() * 2);
  for (size_t i = 0; i < img.size(); ++i) {
    payload[2 * i] = static_cast<float>(img.data[i].real());
    payload[2 * i + 1] = static_cast<float>(img.data[i].imag());
  }
  static_assert(sizeof(float) == 4);
  os.write(reinterpret_cast<const char*>(payload.data()),
           static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (!os) throw_format("save_mcs: write failed for " + path, FormatCode::None);
  os.close();

  nlohmann::json meta;
  if (!extra_meta_json.empty()) {
    meta = nlohmann::json::parse(extra_meta_json, nullptr, false);
    if (meta.is_discarded() || !meta.is_object())
      throw_contract("save_mcs: extra_meta_json must be a JSON object");
  }
  meta["domain"] = img.domain == Domain::Image ? "image" : "kspace";
  std::ofstream ms(sidecar_path(path));
  if (!ms) throw_format("save_mcs: cannot open sidecar for " + path, FormatCode::None);
  ms << meta.dump(2) << "\n";
}

ComplexImage load_mcs(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw_format("load_mcs: cannot open " + path, FormatCode::None);
  unsigned char header[16];
  is.read(reinterpret_cast<char*>(header), 16);
  if (is.gcount() != 16)
    throw_format("load_mcs: file shorter than header: " + path, FormatCode::Truncated);
  if (std::memcmp(header, kMagic, 4) != 0)
    throw_format("load_mcs: bad magic in " + path, FormatCode::BadMagic);
  const uint32_t coils = get_u32(header + 4);
  const uint32_t height = get_u32(header + 8);
  const uint32_t width = get_u32(header + 12);
  if (coils == 0 || height == 0 || width == 0 || coils > kMaxDim || height > kMaxDim ||
      width > kMaxDim ||
      static_cast<uint64_t>(coils) * height * width > (1ull << 31))
    throw_format("load_mcs: unreasonable dimensions in " + path, FormatCode::DimOverflow);

  Domain domain = Domain::Image;
  const std::string side = sidecar_path(path);
  if (std::filesystem::exists(side)) {
    std::ifstream ms(side);
    nlohmann::json meta = nlohmann::json::parse(ms, nullptr, false);
    if (meta.is_discarded() || !meta.contains("domain") || !meta["domain"].is_string())
      throw_format("load_mcs: unreadable sidecar " + side, FormatCode::BadSidecar);
    const std::string d = meta["domain"].get<std::string>();
    if (d == "image") domain = Domain::Image;
    else if (d == "kspace") domain = Domain::KSpace;
    else throw_format("load_mcs: unknown domain in sidecar " + side, FormatCode::BadSidecar);
  }

  ComplexImage img(static_cast<int>(coils), static_cast<int>(height),
                   static_cast<int>(width), domain);
  std::vector<float> payload(img.size() * 2);
  is.read(reinterpret_cast<char*>(payload.data()),
          static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (is.gcount() != static_cast<std::streamsize>(payload.size() * sizeof(float)))
    throw_format("load_mcs: truncated payload in " + path, FormatCode::Truncated);
  for (size_t i = 0; i < img.size(); ++i) {
    img.data[i] = {static_cast<double>(payload[2 * i]), static_cast<double>(payload[2 * i + 1])};
  }
  return img;
}

}  // namespace vicc
