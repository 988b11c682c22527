#include "semfuse/render.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace semfuse::render {

Colormap load_colormap(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("colormap: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("colormap: empty file " + path.string());

  Colormap cmap;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    std::istringstream ss(line);
    std::string field;
    unsigned values[4];
    for (int i = 0; i < 4; ++i) {
      if (!std::getline(ss, field, ','))
        throw std::runtime_error("colormap: malformed line " + std::to_string(lineno));
      values[i] = static_cast<unsigned>(std::stoul(field));
    }
    if (values[0] > 0xffff || values[1] > 255 || values[2] > 255 || values[3] > 255)
      throw std::runtime_error("colormap: value out of range at line " + std::to_string(lineno));
    cmap[static_cast<labels::LabelId>(values[0])] = {static_cast<uint8_t>(values[1]),
                                                     static_cast<uint8_t>(values[2]),
                                                     static_cast<uint8_t>(values[3])};
  }
  return cmap;
}

Image<Rgb8> colorize(const labels::LabelMap& lm, const Colormap& cmap) {
  Image<Rgb8> out(lm.width(), lm.height());
  for (size_t i = 0; i < lm.grid.size(); ++i) {
    const auto it = cmap.find(lm.grid.data[i]);
    out.data[i] = it == cmap.end() ? kUnknownColor : it->second;
  }
  return out;
}

}  // namespace semfuse::render
