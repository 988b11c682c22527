#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "semfuse/image.hpp"

namespace semfuse::labels {

using LabelId = uint16_t;

struct LabelClass {
  LabelId id = 0;
  std::string name;
  std::string synkey;  // empty when the class has no WordNet anchor
};

// Ordered class vocabulary. Id 0 is reserved for unlabeled/ignore in every
// space and is never listed as a real class.
struct LabelSpace {
  std::string name;
  std::vector<LabelClass> classes;

  bool contains(LabelId id) const;
  // Number of real classes (id 0 not counted).
  size_t class_count() const;
  // Largest id + 1; the row/column count for dense per-id tables.
  LabelId id_bound() const;
};

// Many-to-one id translation between two spaces. Ids absent from `entries`
// implicitly map to 0.
struct MappingTable {
  std::string source;
  std::string target;
  std::unordered_map<LabelId, LabelId> entries;

  LabelId map_id(LabelId id) const {
    auto it = entries.find(id);
    return it == entries.end() ? LabelId{0} : it->second;
  }
};

struct LabelMap {
  Image<LabelId> grid;
  std::string space;

  int width() const { return grid.width; }
  int height() const { return grid.height; }
};

// CSV with header `id,name,synkey`; synkey may be blank. The space name is
// taken from the file stem unless given explicitly.
LabelSpace load_label_space(const std::filesystem::path& path, const std::string& name = "");

// CSV with header `source_id,target_id`. Duplicate source rows collapse to
// the smallest target id with a warning.
MappingTable load_mapping(const std::filesystem::path& path, const std::string& source,
                          const std::string& target);

LabelMap apply_mapping(const MappingTable& m, const LabelMap& lm);

// entries[s] = m2(m1(s)); compositions that land on 0 are omitted.
MappingTable compose(const MappingTable& m1, const MappingTable& m2);

// Restricts `m` so that only the k most frequent target classes survive;
// everything else maps to 0. Frequency ties at the k-th rank resolve to the
// smaller id.
MappingTable project_topk(const LabelSpace& target_space, const MappingTable& m, int k,
                          const std::map<LabelId, uint64_t>& class_frequencies);

// 16-bit single-channel PNG, filename `%06d.png` by convention.
LabelMap read_label_map(const std::filesystem::path& path, const std::string& space);
void write_label_map(const std::filesystem::path& path, const LabelMap& lm);

std::string frame_filename(int index, const char* ext = ".png");

}  // namespace semfuse::labels
