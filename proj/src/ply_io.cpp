#include "semfuse/ply_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

static_assert(std::endian::native == std::endian::little,
              "binary PLY writer assumes a little-endian host");

namespace semfuse::fusion {

namespace {

[[noreturn]] void fail(const std::filesystem::path& path, const std::string& what) {
  throw std::runtime_error("ply: " + what + ": " + path.string());
}

enum class ScalarType { kFloat32, kFloat64, kUint8, kUint16, kInt32, kUint32 };

size_t scalar_size(ScalarType t) {
  switch (t) {
    case ScalarType::kFloat32: return 4;
    case ScalarType::kFloat64: return 8;
    case ScalarType::kUint8: return 1;
    case ScalarType::kUint16: return 2;
    case ScalarType::kInt32: return 4;
    case ScalarType::kUint32: return 4;
  }
  return 0;
}

ScalarType parse_type(const std::string& s, const std::filesystem::path& path) {
  if (s == "float" || s == "float32") return ScalarType::kFloat32;
  if (s == "double" || s == "float64") return ScalarType::kFloat64;
  if (s == "uchar" || s == "uint8") return ScalarType::kUint8;
  if (s == "ushort" || s == "uint16") return ScalarType::kUint16;
  if (s == "int" || s == "int32") return ScalarType::kInt32;
  if (s == "uint" || s == "uint32") return ScalarType::kUint32;
  fail(path, "unsupported property type " + s);
}

double read_scalar(std::istream& in, ScalarType t) {
  char buf[8];
  in.read(buf, static_cast<std::streamsize>(scalar_size(t)));
  switch (t) {
    case ScalarType::kFloat32: {
      float v;
      std::memcpy(&v, buf, 4);
      return v;
    }
    case ScalarType::kFloat64: {
      double v;
      std::memcpy(&v, buf, 8);
      return v;
    }
    case ScalarType::kUint8: return static_cast<uint8_t>(buf[0]);
    case ScalarType::kUint16: {
      uint16_t v;
      std::memcpy(&v, buf, 2);
      return v;
    }
    case ScalarType::kInt32: {
      int32_t v;
      std::memcpy(&v, buf, 4);
      return v;
    }
    case ScalarType::kUint32: {
      uint32_t v;
      std::memcpy(&v, buf, 4);
      return v;
    }
  }
  return 0;
}

struct Property {
  std::string name;
  bool is_list = false;
  ScalarType type = ScalarType::kFloat32;
  ScalarType count_type = ScalarType::kUint8;
};

struct Element {
  std::string name;
  size_t count = 0;
  std::vector<Property> properties;
};

struct Header {
  std::vector<Element> elements;
  size_t body_offset = 0;
};

Header parse_header(std::ifstream& in, const std::filesystem::path& path) {
  std::string line;
  if (!std::getline(in, line) || line.substr(0, 3) != "ply") fail(path, "not a PLY file");

  Header header;
  bool format_ok = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ss(line);
    std::string word;
    ss >> word;
    if (word == "comment") continue;
    if (word == "format") {
      std::string fmt;
      ss >> fmt;
      if (fmt != "binary_little_endian") fail(path, "only binary_little_endian is supported");
      format_ok = true;
    } else if (word == "element") {
      Element e;
      ss >> e.name >> e.count;
      header.elements.push_back(e);
    } else if (word == "property") {
      if (header.elements.empty()) fail(path, "property before element");
      Property p;
      std::string t;
      ss >> t;
      if (t == "list") {
        p.is_list = true;
        std::string ct, vt;
        ss >> ct >> vt >> p.name;
        p.count_type = parse_type(ct, path);
        p.type = parse_type(vt, path);
      } else {
        p.type = parse_type(t, path);
        ss >> p.name;
      }
      header.elements.back().properties.push_back(p);
    } else if (word == "end_header") {
      if (!format_ok) fail(path, "missing format line");
      return header;
    }
  }
  fail(path, "unterminated header");
}

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void write_vertex_header(std::ofstream& out, size_t n, bool labeled) {
  out << "element vertex " << n << "\n"
      << "property float x\n"
      << "property float y\n"
      << "property float z\n"
      << "property float nx\n"
      << "property float ny\n"
      << "property float nz\n";
  if (labeled) {
    out << "property ushort label\n"
        << "property ushort label_count\n"
        << "property ushort label2\n"
        << "property ushort label2_count\n";
  }
}

}  // namespace

void write_mesh_ply(const std::filesystem::path& path, const TriangleMesh& mesh) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(path, "cannot open for write");
  out << "ply\nformat binary_little_endian 1.0\n";
  write_vertex_header(out, mesh.vertices.size(), false);
  out << "element face " << mesh.faces.size() << "\n"
      << "property list uchar int vertex_indices\n"
      << "end_header\n";
  for (size_t i = 0; i < mesh.vertices.size(); ++i) {
    for (int a = 0; a < 3; ++a) put(out, mesh.vertices[i][a]);
    for (int a = 0; a < 3; ++a) put(out, mesh.normals[i][a]);
  }
  for (const auto& f : mesh.faces) {
    put<uint8_t>(out, 3);
    for (int a = 0; a < 3; ++a) put<int32_t>(out, f[static_cast<size_t>(a)]);
  }
  if (!out) fail(path, "write failed");
}

void write_cloud_ply(const std::filesystem::path& path, const LabeledCloud& cloud) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(path, "cannot open for write");
  out << "ply\nformat binary_little_endian 1.0\n";
  if (!cloud.space.empty()) out << "comment label_space " << cloud.space << "\n";
  write_vertex_header(out, cloud.size(), true);
  out << "end_header\n";
  for (size_t i = 0; i < cloud.size(); ++i) {
    for (int a = 0; a < 3; ++a) put(out, cloud.points[i][a]);
    for (int a = 0; a < 3; ++a) put(out, cloud.normals[i][a]);
    put(out, cloud.label1[i]);
    put(out, cloud.count1[i]);
    put(out, cloud.label2[i]);
    put(out, cloud.count2[i]);
  }
  if (!out) fail(path, "write failed");
}

namespace {

struct VertexReader {
  // Column index of each known property, -1 when absent.
  int x = -1, y = -1, z = -1, nx = -1, ny = -1, nz = -1;
  int label = -1, label_count = -1, label2 = -1, label2_count = -1;
  std::vector<Property> props;

  explicit VertexReader(const Element& e) : props(e.properties) {
    for (size_t i = 0; i < props.size(); ++i) {
      const std::string& n = props[i].name;
      const int idx = static_cast<int>(i);
      if (n == "x") x = idx;
      else if (n == "y") y = idx;
      else if (n == "z") z = idx;
      else if (n == "nx") nx = idx;
      else if (n == "ny") ny = idx;
      else if (n == "nz") nz = idx;
      else if (n == "label") label = idx;
      else if (n == "label_count") label_count = idx;
      else if (n == "label2") label2 = idx;
      else if (n == "label2_count") label2_count = idx;
    }
  }

  std::vector<double> read_row(std::istream& in, const std::filesystem::path& path) const {
    std::vector<double> row(props.size(), 0.0);
    for (size_t i = 0; i < props.size(); ++i) {
      if (props[i].is_list) fail(path, "unexpected list property in vertex element");
      row[i] = read_scalar(in, props[i].type);
    }
    return row;
  }
};

}  // namespace

TriangleMesh read_mesh_ply(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open");
  const Header header = parse_header(in, path);

  TriangleMesh mesh;
  for (const Element& e : header.elements) {
    if (e.name == "vertex") {
      const VertexReader vr(e);
      if (vr.x < 0 || vr.y < 0 || vr.z < 0) fail(path, "vertex element missing x/y/z");
      mesh.vertices.reserve(e.count);
      for (size_t i = 0; i < e.count; ++i) {
        const auto row = vr.read_row(in, path);
        mesh.vertices.emplace_back(row[vr.x], row[vr.y], row[vr.z]);
        if (vr.nx >= 0 && vr.ny >= 0 && vr.nz >= 0)
          mesh.normals.emplace_back(row[vr.nx], row[vr.ny], row[vr.nz]);
      }
    } else if (e.name == "face") {
      for (size_t i = 0; i < e.count; ++i) {
        const Property& p = e.properties.at(0);
        if (!p.is_list) fail(path, "face element must be a list property");
        const auto n = static_cast<size_t>(read_scalar(in, p.count_type));
        std::vector<int> idx(n);
        for (size_t a = 0; a < n; ++a) idx[a] = static_cast<int>(read_scalar(in, p.type));
        // Triangulate as a fan in case of polygons.
        for (size_t a = 2; a < n; ++a)
          mesh.faces.push_back({idx[0], idx[a - 1], idx[a]});
      }
    } else {
      // Skip unknown fixed-size elements.
      size_t row_size = 0;
      for (const auto& p : e.properties) {
        if (p.is_list) fail(path, "cannot skip list element " + e.name);
        row_size += scalar_size(p.type);
      }
      in.seekg(static_cast<std::streamoff>(row_size * e.count), std::ios::cur);
    }
  }
  if (!in) fail(path, "truncated body");
  for (const auto& f : mesh.faces)
    for (int a = 0; a < 3; ++a)
      if (f[static_cast<size_t>(a)] < 0 ||
          f[static_cast<size_t>(a)] >= static_cast<int>(mesh.vertices.size()))
        fail(path, "face index out of range");
  return mesh;
}

LabeledCloud read_cloud_ply(const std::filesystem::path& path, const std::string& space) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open");
  const Header header = parse_header(in, path);

  LabeledCloud cloud;
  cloud.space = space;
  for (const Element& e : header.elements) {
    if (e.name != "vertex") {
      size_t row_size = 0;
      for (const auto& p : e.properties) {
        if (p.is_list) fail(path, "cannot skip list element " + e.name);
        row_size += scalar_size(p.type);
      }
      in.seekg(static_cast<std::streamoff>(row_size * e.count), std::ios::cur);
      continue;
    }
    const VertexReader vr(e);
    if (vr.x < 0 || vr.y < 0 || vr.z < 0) fail(path, "vertex element missing x/y/z");
    cloud.resize(e.count);
    for (size_t i = 0; i < e.count; ++i) {
      const auto row = vr.read_row(in, path);
      cloud.points[i] = Eigen::Vector3f(static_cast<float>(row[vr.x]),
                                        static_cast<float>(row[vr.y]),
                                        static_cast<float>(row[vr.z]));
      if (vr.nx >= 0 && vr.ny >= 0 && vr.nz >= 0)
        cloud.normals[i] = Eigen::Vector3f(static_cast<float>(row[vr.nx]),
                                           static_cast<float>(row[vr.ny]),
                                           static_cast<float>(row[vr.nz]));
      if (vr.label >= 0) cloud.label1[i] = static_cast<uint16_t>(row[vr.label]);
      if (vr.label_count >= 0) cloud.count1[i] = static_cast<uint16_t>(row[vr.label_count]);
      if (vr.label2 >= 0) cloud.label2[i] = static_cast<uint16_t>(row[vr.label2]);
      if (vr.label2_count >= 0) cloud.count2[i] = static_cast<uint16_t>(row[vr.label2_count]);
    }
  }
  if (!in) fail(path, "truncated body");
  return cloud;
}

}  // namespace semfuse::fusion
