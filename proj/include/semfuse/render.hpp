#pragma once

#include <filesystem>
#include <unordered_map>

#include "semfuse/image.hpp"
#include "semfuse/labelspace.hpp"

namespace semfuse::render {

// CSV with header `id,r,g,b`. Ids absent from the map render magenta.
using Colormap = std::unordered_map<labels::LabelId, Rgb8>;

Colormap load_colormap(const std::filesystem::path& path);

constexpr Rgb8 kUnknownColor{255, 0, 255};

Image<Rgb8> colorize(const labels::LabelMap& lm, const Colormap& cmap);

}  // namespace semfuse::render
