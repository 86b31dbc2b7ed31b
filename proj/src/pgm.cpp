#include "vicc/pgm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <vector>

#include "vicc/errors.hpp"

namespace vicc {

void write_pgm(const std::string& path, const RealImage& img, double peak) {
  if (peak <= 0.0) {
    for (double v : img.data) peak = std::max(peak, v);
    if (peak <= 0.0) peak = 1.0;
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw_format("write_pgm: cannot open " + path, FormatCode::None);
  os << "P5\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> row(img.width);
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      const double v = std::clamp(img.at(r, c) / peak, 0.0, 1.0);
      row[c] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    os.write(reinterpret_cast<const char*>(row.data()), img.width);
  }
  if (!os) throw_format("write_pgm: write failed for " + path, FormatCode::None);
}

}  // namespace vicc
