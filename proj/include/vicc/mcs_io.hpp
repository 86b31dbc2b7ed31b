#pragma once

#include <optional>
#include <string>

#include "vicc/image.hpp"

namespace vicc {

/// .mcs container: magic "MCS1", three little-endian u32 (coils, height,
/// width), then coils*height*width complex samples as little-endian
/// binary32 (real, imag) pairs, coil-major row-major. The domain tag lives
/// in a JSON sidecar next to the file.

std::string sidecar_path(const std::string& mcs_path);

/// Writes the .mcs file plus its sidecar. extra_meta, when given, must be a
/// JSON object source string whose keys are merged into the sidecar.
void save_mcs(const std::string& path, const ComplexImage& img,
              const std::string& extra_meta_json = "");

/// Reads the .mcs file; the domain comes from the sidecar when present and
/// defaults to Image otherwise.
ComplexImage load_mcs(const std::string& path);

}  // namespace vicc
