#include "semfuse/labelspace.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "semfuse/image_io.hpp"
#include "semfuse/log.hpp"

namespace semfuse::labels {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

uint64_t parse_uint(const std::string& s, const std::string& context) {
  size_t pos = 0;
  unsigned long v = 0;
  try {
    v = std::stoul(s, &pos);
  } catch (const std::exception&) {
    throw std::runtime_error(context + ": not a number: '" + s + "'");
  }
  if (pos != s.size()) throw std::runtime_error(context + ": trailing junk in '" + s + "'");
  return v;
}

LabelId parse_label_id(const std::string& s, const std::string& context) {
  const uint64_t v = parse_uint(s, context);
  if (v > 0xffff) throw std::runtime_error(context + ": id out of 16-bit range: " + s);
  return static_cast<LabelId>(v);
}

}  // namespace

bool LabelSpace::contains(LabelId id) const {
  if (id == 0) return true;
  return std::any_of(classes.begin(), classes.end(),
                     [id](const LabelClass& c) { return c.id == id; });
}

size_t LabelSpace::class_count() const {
  size_t n = 0;
  for (const auto& c : classes)
    if (c.id != 0) ++n;
  return n;
}

LabelId LabelSpace::id_bound() const {
  LabelId bound = 1;
  for (const auto& c : classes) bound = std::max<LabelId>(bound, c.id + 1);
  return bound;
}

LabelSpace load_label_space(const std::filesystem::path& path, const std::string& name) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("label space: cannot open " + path.string());

  LabelSpace space;
  space.name = name.empty() ? path.stem().string() : name;

  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("label space: empty file " + path.string());
  const auto header = split_csv_line(line);
  if (header.size() < 2 || header[0] != "id" || header[1] != "name")
    throw std::runtime_error("label space: missing id column in header of " + path.string());

  std::unordered_set<LabelId> seen_ids;
  std::unordered_set<std::string> seen_synkeys;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv_line(line);
    if (fields.size() < 2)
      throw std::runtime_error("label space: malformed line " + std::to_string(lineno));
    LabelClass c;
    c.id = parse_label_id(fields[0], path.string() + ":" + std::to_string(lineno));
    c.name = fields[1];
    c.synkey = fields.size() > 2 ? fields[2] : "";

    if (!seen_ids.insert(c.id).second)
      throw std::runtime_error("label space: duplicate id " + std::to_string(c.id) + " in " +
                               path.string());
    if (c.id == 0) {
      // Row 0 may only restate the reserved unlabeled slot.
      if (c.name != "unlabeled" && c.name != "unknown" && c.name != "ignore" && !c.name.empty())
        throw std::runtime_error("label space: id 0 is reserved for unlabeled, got class '" +
                                 c.name + "'");
    } else {
      if (c.name.empty())
        throw std::runtime_error("label space: empty class name at line " + std::to_string(lineno));
      if (!c.synkey.empty() && !seen_synkeys.insert(c.synkey).second)
        throw std::runtime_error("label space: duplicate synkey '" + c.synkey + "'");
    }
    space.classes.push_back(std::move(c));
  }
  return space;
}

MappingTable load_mapping(const std::filesystem::path& path, const std::string& source,
                          const std::string& target) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("mapping: cannot open " + path.string());

  MappingTable m;
  m.source = source;
  m.target = target;

  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("mapping: empty file " + path.string());
  const auto header = split_csv_line(line);
  if (header.size() < 2 || header[0] != "source_id" || header[1] != "target_id")
    throw std::runtime_error("mapping: bad header in " + path.string());

  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv_line(line);
    if (fields.size() < 2)
      throw std::runtime_error("mapping: malformed line " + std::to_string(lineno));
    const LabelId src = parse_label_id(fields[0], path.string() + ":" + std::to_string(lineno));
    const LabelId dst = parse_label_id(fields[1], path.string() + ":" + std::to_string(lineno));
    if (src == 0) {
      if (dst != 0)
        throw std::runtime_error("mapping: source id 0 must map to 0 in " + path.string());
      continue;
    }
    auto [it, inserted] = m.entries.emplace(src, dst);
    if (!inserted) {
      // Ambiguous one-to-many row: keep the smallest target id.
      if (dst < it->second) it->second = dst;
      log_warn("mapping " + path.string() + ": duplicate source id " + std::to_string(src) +
               ", keeping smallest target " + std::to_string(it->second));
    }
  }
  return m;
}

LabelMap apply_mapping(const MappingTable& m, const LabelMap& lm) {
  if (lm.space != m.source)
    throw std::runtime_error("apply_mapping: map space '" + lm.space + "' != table source '" +
                             m.source + "'");
  LabelMap out;
  out.space = m.target;
  out.grid = Image<LabelId>(lm.grid.width, lm.grid.height);
  for (size_t i = 0; i < lm.grid.size(); ++i) out.grid.data[i] = m.map_id(lm.grid.data[i]);
  return out;
}

MappingTable compose(const MappingTable& m1, const MappingTable& m2) {
  if (m1.target != m2.source)
    throw std::runtime_error("compose: m1 target '" + m1.target + "' != m2 source '" + m2.source +
                             "'");
  MappingTable out;
  out.source = m1.source;
  out.target = m2.target;
  for (const auto& [src, mid] : m1.entries) {
    const LabelId dst = m2.map_id(mid);
    if (dst != 0) out.entries.emplace(src, dst);
  }
  return out;
}

MappingTable project_topk(const LabelSpace& target_space, const MappingTable& m, int k,
                          const std::map<LabelId, uint64_t>& class_frequencies) {
  if (m.target != target_space.name)
    throw std::runtime_error("project_topk: table target '" + m.target + "' != space '" +
                             target_space.name + "'");
  if (k <= 0) throw std::runtime_error("project_topk: k must be positive");
  const size_t n_classes = target_space.class_count();
  if (static_cast<size_t>(k) > n_classes)
    throw std::runtime_error("project_topk: k=" + std::to_string(k) + " exceeds class count " +
                             std::to_string(n_classes));

  // Rank real target classes by (count desc, id asc).
  std::vector<std::pair<uint64_t, LabelId>> ranked;
  ranked.reserve(n_classes);
  for (const auto& c : target_space.classes) {
    if (c.id == 0) continue;
    auto it = class_frequencies.find(c.id);
    ranked.emplace_back(it == class_frequencies.end() ? 0 : it->second, c.id);
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });

  std::unordered_set<LabelId> keep;
  for (int i = 0; i < k; ++i) keep.insert(ranked[static_cast<size_t>(i)].second);

  MappingTable out;
  out.source = m.source;
  out.target = m.target;
  for (const auto& [src, dst] : m.entries)
    if (keep.count(dst)) out.entries.emplace(src, dst);
  return out;
}

LabelMap read_label_map(const std::filesystem::path& path, const std::string& space) {
  LabelMap lm;
  lm.grid = read_png16(path);
  lm.space = space;
  return lm;
}

void write_label_map(const std::filesystem::path& path, const LabelMap& lm) {
  write_png16(path, lm.grid);
}

std::string frame_filename(int index, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06d%s", index, ext);
  return buf;
}

}  // namespace semfuse::labels
