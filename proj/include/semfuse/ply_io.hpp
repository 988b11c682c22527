#pragma once

#include <filesystem>

#include "semfuse/fusion3d.hpp"

namespace semfuse::fusion {

// Binary little-endian PLY with `x y z nx ny nz` float vertex properties
// and uchar-count int-index `vertex_indices` face lists.
void write_mesh_ply(const std::filesystem::path& path, const TriangleMesh& mesh);
TriangleMesh read_mesh_ply(const std::filesystem::path& path);

// Same vertex layout plus `label`, `label_count`, `label2`, `label2_count`
// uint16 properties; no face element.
void write_cloud_ply(const std::filesystem::path& path, const LabeledCloud& cloud);
LabeledCloud read_cloud_ply(const std::filesystem::path& path, const std::string& space = "");

}  // namespace semfuse::fusion
