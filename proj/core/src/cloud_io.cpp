#include "defrec/cloud_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <sstream>

#include "defrec/errors.hpp"
#include "defrec/fs_util.hpp"
#include "defrec/rng.hpp"

namespace defrec {

bool Dataset::per_point_labels() const {
  return !samples.empty() && !samples.front().point_labels.empty();
}

namespace {

bool in_split(const Dataset& d, std::size_t i, std::optional<Split> split) {
  if (!split) return true;
  const Split s = d.splits.empty() ? Split::Train : d.splits[i];
  return s == *split;
}

std::vector<std::string_view> tokenize(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

std::string at_line(std::size_t line) { return "line " + std::to_string(line) + ": "; }

double parse_double(std::string_view tok, std::size_t line) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size())
    throw DataError(at_line(line) + "malformed number '" + std::string(tok) + "'");
  if (!std::isfinite(v)) throw DataError(at_line(line) + "non-finite coordinate");
  return v;
}

int parse_int(std::string_view tok, std::size_t line) {
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size() || v < INT32_MIN || v > INT32_MAX)
    throw DataError(at_line(line) + "malformed integer '" + std::string(tok) + "'");
  return static_cast<int>(v);
}

/// Split into lines, dropping a trailing '\r'.
std::vector<std::string_view> split_lines(const std::string& text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::string_view l(text.data() + start, end - start);
    if (!l.empty() && l.back() == '\r') l.remove_suffix(1);
    lines.push_back(l);
    if (end == text.size()) break;
    start = end + 1;
  }
  return lines;
}

PointCloud make_cloud(std::vector<Vec3>& pts) {
  if (pts.empty()) throw DataError("empty cloud");
  return PointCloud::from_points(pts);
}

}  // namespace

std::vector<LabeledCloud> Dataset::labeled(std::optional<Split> split) const {
  std::vector<LabeledCloud> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!in_split(*this, i, split)) continue;
    if (samples[i].label < 0) throw DataError("dataset '" + name + "' sample " + std::to_string(i) + " has no class label");
    out.push_back({samples[i].cloud, samples[i].label});
  }
  return out;
}

std::vector<SegLabeledCloud> Dataset::seg_labeled(std::optional<Split> split) const {
  std::vector<SegLabeledCloud> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!in_split(*this, i, split)) continue;
    if (samples[i].point_labels.empty())
      throw DataError("dataset '" + name + "' sample " + std::to_string(i) + " has no per-point labels");
    out.push_back({samples[i].cloud, samples[i].point_labels});
  }
  return out;
}

std::vector<PointCloud> Dataset::clouds(std::optional<Split> split) const {
  std::vector<PointCloud> out;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (in_split(*this, i, split)) out.push_back(samples[i].cloud);
  return out;
}

void Dataset::validate() const {
  if (!splits.empty() && splits.size() != samples.size()) throw DataError("split assignment does not cover every sample");
  const bool per_point = per_point_labels();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    const std::string where = "sample " + std::to_string(i) + ": ";
    if (s.cloud.empty()) throw DataError(where + "empty cloud");
    if (s.label >= num_classes) throw DataError(where + "label outside class range");
    if (s.label < -1) throw DataError(where + "negative label");
    if (per_point != !s.point_labels.empty()) throw DataError(where + "per-point labels present on some samples only");
    if (per_point) {
      if (s.point_labels.size() != s.cloud.size()) throw DataError(where + "label count does not match point count");
      for (int l : s.point_labels)
        if (l < 0 || l >= num_classes) throw DataError(where + "point label outside class range");
    }
  }
}

LoadedCloud parse_xyz(const std::string& text) {
  std::vector<Vec3> pts;
  std::vector<int> labels;
  std::optional<bool> with_label;
  const auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::size_t lineno = i + 1;
    const auto toks = tokenize(lines[i]);
    if (toks.empty() || toks.front().front() == '#') continue;
    if (toks.size() != 3 && toks.size() != 4)
      throw DataError(at_line(lineno) + "expected 'x y z' or 'x y z label', got " + std::to_string(toks.size()) + " fields");
    const bool has = toks.size() == 4;
    if (with_label && *with_label != has) throw DataError(at_line(lineno) + "label column present on some lines only");
    with_label = has;
    pts.emplace_back(parse_double(toks[0], lineno), parse_double(toks[1], lineno), parse_double(toks[2], lineno));
    if (has) labels.push_back(parse_int(toks[3], lineno));
  }
  LoadedCloud out{make_cloud(pts), std::nullopt};
  if (with_label.value_or(false)) out.labels = std::move(labels);
  return out;
}

LoadedCloud parse_ply(const std::string& text) {
  struct Element {
    std::string name;
    std::size_t count = 0;
    std::vector<std::string> props;
    bool has_list = false;
  };
  const auto lines = split_lines(text);
  if (lines.empty() || tokenize(lines[0]).size() != 1 || tokenize(lines[0])[0] != "ply")
    throw DataError(at_line(1) + "missing 'ply' magic");
  std::vector<Element> elements;
  std::size_t i = 1;
  bool ended = false;
  for (; i < lines.size(); ++i) {
    const std::size_t lineno = i + 1;
    const auto toks = tokenize(lines[i]);
    if (toks.empty()) continue;
    if (toks[0] == "comment" || toks[0] == "obj_info") continue;
    if (toks[0] == "format") {
      if (toks.size() != 3) throw DataError(at_line(lineno) + "malformed format line");
      if (toks[1] != "ascii") throw DataError(at_line(lineno) + "only ASCII PLY is supported");
    } else if (toks[0] == "element") {
      if (toks.size() != 3) throw DataError(at_line(lineno) + "malformed element line");
      Element e;
      e.name = std::string(toks[1]);
      const int c = parse_int(toks[2], lineno);
      if (c < 0) throw DataError(at_line(lineno) + "negative element count");
      e.count = static_cast<std::size_t>(c);
      elements.push_back(std::move(e));
    } else if (toks[0] == "property") {
      if (elements.empty()) throw DataError(at_line(lineno) + "property before any element");
      if (toks.size() >= 2 && toks[1] == "list") {
        if (toks.size() != 5) throw DataError(at_line(lineno) + "malformed list property");
        elements.back().has_list = true;
        elements.back().props.emplace_back(toks[4]);
      } else {
        if (toks.size() != 3) throw DataError(at_line(lineno) + "malformed property line");
        elements.back().props.emplace_back(toks[2]);
      }
    } else if (toks[0] == "end_header") {
      ended = true;
      ++i;
      break;
    } else {
      throw DataError(at_line(lineno) + "unknown header keyword '" + std::string(toks[0]) + "'");
    }
  }
  if (!ended) throw DataError(at_line(lines.size()) + "missing end_header");

  std::vector<Vec3> pts;
  std::vector<int> labels;
  bool with_label = false;
  bool seen_vertex = false;
  for (const Element& e : elements) {
    if (e.name != "vertex") {
      // Skip the body of other elements (faces and the like).
      for (std::size_t k = 0; k < e.count; ++k, ++i) {
        while (i < lines.size() && tokenize(lines[i]).empty()) ++i;
        if (i >= lines.size()) throw DataError(at_line(lines.size()) + "unexpected end of file in element '" + e.name + "'");
      }
      continue;
    }
    seen_vertex = true;
    if (e.has_list) throw DataError("vertex element may not have list properties");
    auto find = [&](const char* n) -> int {
      const auto it = std::find(e.props.begin(), e.props.end(), n);
      return it == e.props.end() ? -1 : static_cast<int>(it - e.props.begin());
    };
    const int ix = find("x"), iy = find("y"), iz = find("z"), il = find("label");
    if (ix < 0 || iy < 0 || iz < 0) throw DataError("vertex element lacks x, y or z");
    with_label = il >= 0;
    for (std::size_t k = 0; k < e.count; ++k, ++i) {
      while (i < lines.size() && tokenize(lines[i]).empty()) ++i;
      if (i >= lines.size()) throw DataError(at_line(lines.size()) + "unexpected end of file in vertex data");
      const std::size_t lineno = i + 1;
      const auto toks = tokenize(lines[i]);
      if (toks.size() != e.props.size())
        throw DataError(at_line(lineno) + "expected " + std::to_string(e.props.size()) + " values, got " +
                        std::to_string(toks.size()));
      pts.emplace_back(parse_double(toks[static_cast<std::size_t>(ix)], lineno),
                       parse_double(toks[static_cast<std::size_t>(iy)], lineno),
                       parse_double(toks[static_cast<std::size_t>(iz)], lineno));
      if (with_label) labels.push_back(parse_int(toks[static_cast<std::size_t>(il)], lineno));
    }
  }
  if (!seen_vertex) throw DataError("no vertex element");
  LoadedCloud out{make_cloud(pts), std::nullopt};
  if (with_label) out.labels = std::move(labels);
  return out;
}

namespace {

enum class Format { Xyz, Ply, Archive };

Format detect(const std::filesystem::path& path, const std::string& head) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (ext == ".ply") return Format::Ply;
  if (ext == ".dfrc") return Format::Archive;
  if (ext == ".xyz" || ext == ".txt" || ext == ".pts") return Format::Xyz;
  if (head.rfind("DFRC", 0) == 0) return Format::Archive;
  if (head.rfind("ply", 0) == 0) return Format::Ply;
  return Format::Xyz;
}

}  // namespace

LoadedCloud load_cloud(const std::filesystem::path& path, std::size_t index) {
  const std::vector<std::uint8_t> bytes = read_binary(path);
  const std::string head(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(4, bytes.size())));
  const std::string where = path.string() + ": ";
  try {
    switch (detect(path, head)) {
      case Format::Archive: {
        Dataset d = deserialize_archive(bytes, path.stem().string());
        if (index >= d.samples.size()) throw InvalidArgument("sample index " + std::to_string(index) + " out of range");
        Sample& s = d.samples[index];
        LoadedCloud out{std::move(s.cloud), std::nullopt};
        if (!s.point_labels.empty()) out.labels = std::move(s.point_labels);
        return out;
      }
      case Format::Ply:
        return parse_ply(std::string(bytes.begin(), bytes.end()));
      case Format::Xyz:
        return parse_xyz(std::string(bytes.begin(), bytes.end()));
    }
  } catch (const DataError& e) {
    throw DataError(where + e.what());
  }
  throw DataError(where + "unknown format");
}

void save_xyz(const std::filesystem::path& path, const PointCloud& cloud, const std::vector<int>* labels) {
  if (labels && labels->size() != cloud.size()) throw InvalidArgument("label count does not match point count");
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3 p = cloud.point(i);
    os << p.x() << ' ' << p.y() << ' ' << p.z();
    if (labels) os << ' ' << (*labels)[i];
    os << '\n';
  }
  atomic_write(path, os.str());
}

std::vector<std::uint8_t> serialize_archive(const Dataset& data) {
  data.validate();
  if (data.num_classes < 0 || data.num_classes > 0xFFFF) throw InvalidArgument("class count does not fit the archive");
  const bool per_point = data.per_point_labels();
  ByteWriter w;
  w.raw("DFRC", 4);
  w.u16(kArchiveVersion);
  w.u16(static_cast<std::uint16_t>(data.num_classes));
  w.u32(static_cast<std::uint32_t>(data.samples.size()));
  w.u32(per_point ? 1u : 0u);
  for (const Sample& s : data.samples) {
    w.u32(static_cast<std::uint32_t>(s.cloud.size()));
    w.i32(s.label);
    for (std::size_t i = 0; i < s.cloud.size(); ++i)
      for (int c = 0; c < 3; ++c) w.f32(static_cast<float>(s.cloud.points()(static_cast<Eigen::Index>(i), c)));
    if (per_point)
      for (int l : s.point_labels) w.i32(l);
  }
  return std::move(w.bytes());
}

Dataset deserialize_archive(const std::vector<std::uint8_t>& bytes, const std::string& name) {
  ByteReader r(bytes.data(), bytes.size(), "archive");
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, "DFRC", 4) != 0) throw DataError("archive: bad magic");
  const std::uint16_t version = r.u16();
  if (version != kArchiveVersion) throw DataError("archive: unsupported version " + std::to_string(version));
  Dataset d;
  d.name = name;
  d.num_classes = r.u16();
  const std::uint32_t count = r.u32();
  const std::uint32_t flags = r.u32();
  if (flags & ~1u) throw DataError("archive: unknown header flags");
  const bool per_point = flags & 1u;
  d.samples.reserve(std::min<std::uint32_t>(count, 1u << 16));
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::uint32_t n = r.u32();
    if (n == 0) throw DataError("archive: sample " + std::to_string(k) + ": empty cloud");
    if (static_cast<std::uint64_t>(n) * 12 > r.remaining()) throw DataError("archive: truncated sample " + std::to_string(k));
    Sample s;
    s.label = r.i32();
    PointMatrix pts(n, 3);
    for (std::uint32_t i = 0; i < n; ++i)
      for (int c = 0; c < 3; ++c) {
        const float v = r.f32();
        if (!std::isfinite(v)) throw DataError("archive: sample " + std::to_string(k) + ": non-finite coordinate");
        pts(i, c) = v;
      }
    s.cloud = PointCloud(std::move(pts));
    if (per_point) {
      s.point_labels.resize(n);
      for (auto& l : s.point_labels) l = r.i32();
    }
    d.samples.push_back(std::move(s));
  }
  if (r.remaining() != 0) throw DataError("archive: trailing bytes");
  d.validate();
  return d;
}

void save_archive(const std::filesystem::path& path, const Dataset& data) { atomic_write(path, serialize_archive(data)); }

Dataset load_archive(const std::filesystem::path& path) {
  try {
    return deserialize_archive(read_binary(path), path.stem().string());
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

Sample prepare_sample(const Sample& raw, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw InvalidArgument("target point count must be >= 1");
  const PointCloud norm = normalize_unit_cube(raw.cloud);
  std::vector<std::size_t> idx;
  if (norm.size() >= n) {
    idx = farthest_point_sample(norm, n, seed);
  } else {
    idx.resize(norm.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng = make_rng(derive_seed(seed, {1}));
    while (idx.size() < n) idx.push_back(uniform_index(rng, norm.size()));
  }
  Sample out;
  out.cloud = norm.select(idx);
  out.label = raw.label;
  if (!raw.point_labels.empty()) {
    out.point_labels.reserve(n);
    for (std::size_t i : idx) out.point_labels.push_back(raw.point_labels[i]);
  }
  return out;
}

}  // namespace defrec
