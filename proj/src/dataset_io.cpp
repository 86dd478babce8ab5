// SPDX-License-Identifier: Apache-2.0
#include <limits>

#include "fineformer/binary_io.hpp"
#include "fineformer/config.hpp"
#include "fineformer/errors.hpp"
#include "fineformer/synthdata.hpp"

namespace fineformer {
namespace {

constexpr std::string_view kMagic = "FFDS1";
constexpr std::uint32_t kVersion = 1;

void write_values(BinaryWriter& w, std::span<const double> values) {
  for (const double v : values) {
    const auto f = static_cast<float>(v);
    if (static_cast<double>(f) != v) {
      throw FormatError("dataset value " + format_double(v) + " is not representable in single precision");
    }
    w.f32(f);
  }
}

void write_example(BinaryWriter& w, std::uint8_t split, const Example& ex) {
  w.u8(split);
  w.i32(static_cast<std::int32_t>(ex.label));
  w.u32(static_cast<std::uint32_t>(ex.attributes.size()));
  for (const auto a : ex.attributes) w.i32(static_cast<std::int32_t>(a));
  if (const auto* f = std::get_if<FeatureSequence>(&ex.input)) {
    w.u32(2);
    w.u64(f->channels);
    w.u64(f->tokens);
    write_values(w, f->values);
  } else {
    const auto& v = std::get<Video>(ex.input);
    w.u32(4);
    w.u64(v.frames);
    w.u64(v.height);
    w.u64(v.width);
    w.u64(3);
    write_values(w, v.values);
  }
}

std::vector<double> read_values(BinaryReader& r, std::size_t count) {
  if (count > r.remaining() / 4) throw FormatError("dataset example extends past end of file");
  std::vector<double> out(count);
  for (auto& v : out) v = r.f32();
  return out;
}

std::size_t checked_index(std::int32_t raw, std::size_t bound, const char* what) {
  if (raw < 0 || static_cast<std::size_t>(raw) >= bound) {
    throw FormatError(std::string("dataset ") + what + " " + std::to_string(raw) + " out of range");
  }
  return static_cast<std::size_t>(raw);
}

Example read_example(BinaryReader& r, const SyntheticSpec& spec, std::uint8_t& split) {
  Example ex;
  split = r.u8();
  if (split > 1) throw FormatError("dataset split tag " + std::to_string(split) + " is neither train nor test");
  ex.label = checked_index(r.i32(), spec.num_classes, "label");
  const std::uint32_t n_attr = r.u32();
  if (n_attr != spec.tokens) throw FormatError("dataset example has wrong attribute count");
  ex.attributes.resize(n_attr);
  for (auto& a : ex.attributes) a = checked_index(r.i32(), spec.attributes, "attribute");

  const std::uint32_t rank = r.u32();
  if (!spec.video) {
    if (rank != 2) throw FormatError("feature example must have rank 2");
    FeatureSequence f;
    f.channels = r.u64();
    f.tokens = r.u64();
    if (f.channels != spec.channels || f.tokens != spec.tokens) throw FormatError("feature example extents mismatch");
    f.values = read_values(r, f.channels * f.tokens);
    ex.input = std::move(f);
  } else {
    if (rank != 4) throw FormatError("video example must have rank 4");
    Video v;
    v.frames = r.u64();
    v.height = r.u64();
    v.width = r.u64();
    if (r.u64() != 3 || v.frames != spec.video_frames || v.height != spec.video_height || v.width != spec.video_width) {
      throw FormatError("video example extents mismatch");
    }
    v.values = read_values(r, v.frames * v.height * v.width * 3);
    ex.input = std::move(v);
  }
  return ex;
}

}  // namespace

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  BinaryWriter w;
  w.bytes(kMagic);
  w.u32(kVersion);
  const std::string header = header_text("data", to_key_values(dataset.spec));
  w.u64(header.size());
  w.bytes(header);
  w.u64(dataset.train.size() + dataset.test.size());
  for (const auto& ex : dataset.train) write_example(w, 0, ex);
  for (const auto& ex : dataset.test) write_example(w, 1, ex);
  write_file(path, w.buffer());
}

Dataset load_dataset(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  BinaryReader r(bytes);
  if (r.bytes(kMagic.size()) != kMagic) throw FormatError(path.string() + ": not an FFDS1 dataset");
  if (const auto version = r.u32(); version != kVersion) {
    throw FormatError(path.string() + ": unsupported dataset version " + std::to_string(version));
  }
  const std::uint64_t header_len = r.u64();
  if (header_len > r.remaining()) throw FormatError(path.string() + ": truncated header");

  Dataset data;
  for (const auto& [key, value] : parse_header(r.bytes(header_len))) {
    if (key.rfind("data.", 0) != 0) throw FormatError(path.string() + ": unexpected header key " + key);
    try {
      set_field(data.spec, key.substr(5), value);
    } catch (const ConfigError& e) {
      throw FormatError(path.string() + ": " + e.what());
    }
  }
  data.spec.validate();
  data.classes = define_classes(data.spec);
  data.prototypes = attribute_prototypes(data.spec);

  const std::uint64_t count = r.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::uint8_t split = 0;
    auto ex = read_example(r, data.spec, split);
    (split == 0 ? data.train : data.test).push_back(std::move(ex));
  }
  if (!r.at_end()) throw FormatError(path.string() + ": trailing bytes after last example");
  return data;
}

}  // namespace fineformer
