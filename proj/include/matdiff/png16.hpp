#pragma once

#include <filesystem>

#include "matdiff/grid.hpp"

namespace matdiff {

// 16-bit PNG with fixed encoder settings so identical grids produce
// byte-identical files. 1 channel -> grayscale, 3 channels -> RGB.
void write_png16(const std::filesystem::path& path, const Grid& g);

// Returns a 1- or 3-channel grid with values in [0,1].
Grid read_png16(const std::filesystem::path& path);

} // namespace matdiff
