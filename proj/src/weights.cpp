#include "vrap/weights.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "vrap/errors.hpp"

namespace vrap {

namespace {

void put_u16(std::ostream& os, uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_f32(std::ostream& os, const float* data, size_t n) {
  // little-endian host assumed for the bulk write; asserted via a probe
  static_assert(sizeof(float) == 4);
  os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * 4));
}

uint16_t get_u16(std::istream& is, const std::string& path) {
  unsigned char b[2];
  if (!is.read(reinterpret_cast<char*>(b), 2))
    throw DataError(path + ": truncated weight file");
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

uint32_t get_u32(std::istream& is, const std::string& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw DataError(path + ": truncated weight file");
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

bool host_little_endian() {
  const uint32_t probe = 1;
  unsigned char b;
  std::memcpy(&b, &probe, 1);
  return b == 1;
}

}  // namespace

void save_weights(const std::string& path, const NamedTensors& tensors) {
  if (!host_little_endian())
    throw DataError("VRW1 writer requires a little-endian host");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError(path + ": cannot open for writing");
  os.write("VRW1", 4);
  put_u32(os, static_cast<uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (name.size() > 0xffff) throw DataError("tensor name too long: " + name);
    put_u16(os, static_cast<uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    os.put(static_cast<char>(t->shape.size()));
    for (int d : t->shape) put_u32(os, static_cast<uint32_t>(d));
    put_f32(os, t->values.data(), t->values.size());
  }
  if (!os) throw DataError(path + ": write failed");
}

NamedTensors load_weights(const std::string& path) {
  if (!host_little_endian())
    throw DataError("VRW1 reader requires a little-endian host");
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError(path + ": cannot open");
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "VRW1", 4) != 0)
    throw DataError(path + ": bad magic, expected VRW1");
  const uint32_t count = get_u32(is, path);
  NamedTensors out;
  out.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t name_len = get_u16(is, path);
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len))
      throw DataError(path + ": truncated weight file");
    const int rank = is.get();
    if (rank < 0) throw DataError(path + ": truncated weight file");
    std::vector<int> shape(rank);
    for (int d = 0; d < rank; ++d)
      shape[d] = static_cast<int>(get_u32(is, path));
    std::vector<float> values(shape_numel(shape));
    if (!is.read(reinterpret_cast<char*>(values.data()),
                 static_cast<std::streamsize>(values.size() * 4)))
      throw DataError(path + ": truncated weight file");
    out.emplace_back(std::move(name),
                     tensor(std::move(shape), std::move(values)));
  }
  return out;
}

}  // namespace vrap
