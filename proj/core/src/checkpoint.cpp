#include "defrec/checkpoint.hpp"

#include <cstring>

#include "defrec/errors.hpp"

namespace defrec {
namespace {

constexpr char kMagic[4] = {'D', 'F', 'C', 'K'};

void write_widths(ByteWriter& w, const std::vector<int>& widths) {
  w.u32(static_cast<std::uint32_t>(widths.size()));
  for (int x : widths) w.u32(static_cast<std::uint32_t>(x));
}

std::vector<int> read_widths(ByteReader& r) {
  const std::uint32_t n = r.u32();
  if (n > 64) throw DataError("checkpoint: implausible layer count");
  std::vector<int> widths(n);
  for (auto& x : widths) x = static_cast<int>(r.u32());
  return widths;
}

}  // namespace

void write_shape(ByteWriter& w, const NetworkShape& shape) {
  w.u32(static_cast<std::uint32_t>(shape.num_classes));
  write_widths(w, shape.point_widths);
  w.u32(static_cast<std::uint32_t>(shape.global_width));
  write_widths(w, shape.sup_widths);
  write_widths(w, shape.ssl_widths);
  write_widths(w, shape.seg_widths);
  w.f64(shape.dropout);
  w.u8(shape.segmentation ? 1 : 0);
}

NetworkShape read_shape(ByteReader& r) {
  NetworkShape s;
  s.num_classes = static_cast<int>(r.u32());
  s.point_widths = read_widths(r);
  s.global_width = static_cast<int>(r.u32());
  s.sup_widths = read_widths(r);
  s.ssl_widths = read_widths(r);
  s.seg_widths = read_widths(r);
  s.dropout = r.f64();
  s.segmentation = r.u8() != 0;
  try {
    s.validate();
  } catch (const InvalidArgument& e) {
    throw DataError(std::string("checkpoint: bad shape header: ") + e.what());
  }
  return s;
}

void write_model(ByteWriter& w, const Model<float>& model) {
  write_shape(w, model.shape());
  const auto& tensors = model.layout().tensors;
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const TensorInfo& t : tensors) {
    w.str(t.name);
    w.u32(static_cast<std::uint32_t>(t.rows));
    w.u32(static_cast<std::uint32_t>(t.cols));
    w.raw(model.params().data() + t.offset, static_cast<std::size_t>(t.rows * t.cols) * sizeof(float));
  }
}

Model<float> read_model(ByteReader& r) {
  Model<float> model(read_shape(r));
  const auto& tensors = model.layout().tensors;
  if (r.u32() != tensors.size()) throw DataError("checkpoint: tensor count does not match shape");
  for (const TensorInfo& t : tensors) {
    const std::string name = r.str();
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    if (name != t.name || rows != t.rows || cols != t.cols)
      throw DataError("checkpoint: tensor '" + name + "' does not match expected '" + t.name + "'");
    r.raw(model.params().data() + t.offset, static_cast<std::size_t>(rows) * cols * sizeof(float));
  }
  return model;
}

void seal(ByteWriter& w) {
  const std::uint64_t size = w.bytes().size();
  const std::uint64_t sum = fnv1a64(w.bytes().data(), w.bytes().size());
  w.u64(size);
  w.u64(sum);
}

ByteReader unseal(const std::vector<std::uint8_t>& bytes, const std::string& context) {
  if (bytes.size() < 16) throw DataError(context + ": file too short");
  const std::size_t payload = bytes.size() - 16;
  std::uint64_t size = 0;
  std::uint64_t sum = 0;
  std::memcpy(&size, bytes.data() + payload, 8);
  std::memcpy(&sum, bytes.data() + payload + 8, 8);
  if (size != payload || sum != fnv1a64(bytes.data(), payload))
    throw DataError(context + ": checksum mismatch (truncated or corrupt file)");
  return ByteReader(bytes.data(), payload, context);
}

std::vector<std::uint8_t> serialize_checkpoint(const Model<float>& model) {
  ByteWriter w;
  w.raw(kMagic, 4);
  w.u32(kCheckpointVersion);
  write_model(w, model);
  seal(w);
  return std::move(w.bytes());
}

Model<float> deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  ByteReader r = unseal(bytes, "checkpoint");
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw DataError("checkpoint: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) throw DataError("checkpoint: unsupported version " + std::to_string(version));
  Model<float> model = read_model(r);
  if (r.remaining() != 0) throw DataError("checkpoint: trailing bytes");
  return model;
}

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model) {
  atomic_write(path, serialize_checkpoint(model));
}

Model<float> load_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(read_binary(path)); }

}  // namespace defrec
