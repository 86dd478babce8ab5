// SPDX-License-Identifier: Apache-2.0
#include "fineformer/checkpoint.hpp"

#include "fineformer/binary_io.hpp"
#include "fineformer/config.hpp"
#include "fineformer/errors.hpp"

namespace fineformer {
namespace {

constexpr std::string_view kMagic = "FFCK1";

void write_tensor(BinaryWriter& w, const NamedTensor& nt) {
  w.u32(static_cast<std::uint32_t>(nt.name.size()));
  w.bytes(nt.name);
  w.u32(static_cast<std::uint32_t>(nt.tensor.rank()));
  for (const auto extent : nt.tensor.shape()) w.u64(extent);
  for (const double v : nt.tensor.values()) w.f64(v);
}

NamedTensor read_tensor(BinaryReader& r) {
  NamedTensor nt;
  nt.name = std::string(r.bytes(r.u32()));
  const std::uint32_t rank = r.u32();
  Shape shape(rank);
  std::size_t count = 1;
  for (auto& extent : shape) {
    extent = r.u64();
    if (extent == 0 || extent > r.remaining()) throw FormatError("tensor '" + nt.name + "' has an invalid extent");
    count *= extent;
  }
  if (count > r.remaining() / 8) throw FormatError("tensor '" + nt.name + "' extends past end of file");
  std::vector<double> values(count);
  for (auto& v : values) v = r.f64();
  nt.tensor = Tensor(std::move(shape), std::move(values));
  return nt;
}

std::size_t to_size(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const auto out = std::stoull(value, &used);
    if (used == value.size()) return static_cast<std::size_t>(out);
  } catch (const std::logic_error&) {
  }
  throw FormatError("checkpoint header " + key + " is not an integer");
}

}  // namespace

std::string Checkpoint::to_bytes() const {
  std::string header = header_text("model", to_key_values(model));
  header += header_text("train", to_key_values(train));
  header += header_text("checkpoint", {{"epoch", std::to_string(epoch)},
                                       {"optimizer_steps", std::to_string(optimizer_steps)},
                                       {"best_top1", format_double(best_top1)},
                                       {"best_epoch", std::to_string(best_epoch)},
                                       {"optimizer_tensors", std::to_string(optimizer_state.size())},
                                       {"rng_state", rng_state}});
  BinaryWriter w;
  w.bytes(kMagic);
  w.u32(kVersion);
  w.u64(header.size());
  w.bytes(header);
  w.u64(parameters.size() + optimizer_state.size());
  for (const auto& p : parameters) write_tensor(w, p);
  for (const auto& s : optimizer_state) write_tensor(w, s);
  return w.buffer();
}

Checkpoint Checkpoint::from_bytes(std::string_view bytes) {
  BinaryReader r(bytes);
  if (r.bytes(kMagic.size()) != kMagic) throw FormatError("not an FFCK1 checkpoint");
  if (const auto version = r.u32(); version != kVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint64_t header_len = r.u64();
  if (header_len > r.remaining()) throw FormatError("truncated checkpoint header");

  Checkpoint ck;
  std::size_t optimizer_tensors = 0;
  for (const auto& [key, value] : parse_header(r.bytes(header_len))) {
    const auto dot = key.find('.');
    const std::string section = key.substr(0, dot);
    const std::string field = dot == std::string::npos ? std::string() : key.substr(dot + 1);
    try {
      if (section == "model") {
        set_field(ck.model, field, value);
      } else if (section == "train") {
        set_field(ck.train, field, value);
      } else if (key == "checkpoint.epoch") {
        ck.epoch = to_size(key, value);
      } else if (key == "checkpoint.optimizer_steps") {
        ck.optimizer_steps = to_size(key, value);
      } else if (key == "checkpoint.best_top1") {
        ck.best_top1 = std::stod(value);
      } else if (key == "checkpoint.best_epoch") {
        ck.best_epoch = to_size(key, value);
      } else if (key == "checkpoint.optimizer_tensors") {
        optimizer_tensors = to_size(key, value);
      } else if (key == "checkpoint.rng_state") {
        ck.rng_state = value;
      } else {
        throw FormatError("unexpected checkpoint header key " + key);
      }
    } catch (const ConfigError& e) {
      throw FormatError(std::string("checkpoint header: ") + e.what());
    } catch (const std::logic_error&) {
      throw FormatError("checkpoint header " + key + " is malformed");
    }
  }

  const std::uint64_t count = r.u64();
  if (optimizer_tensors > count) throw FormatError("checkpoint optimizer tensor count exceeds total");
  for (std::uint64_t i = 0; i < count; ++i) {
    auto nt = read_tensor(r);
    (i < count - optimizer_tensors ? ck.parameters : ck.optimizer_state).push_back(std::move(nt));
  }
  if (!r.at_end()) throw FormatError("trailing bytes after last checkpoint tensor");
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const { write_file(path, to_bytes()); }

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  try {
    return from_bytes(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::vector<NamedTensor> snapshot_parameters(const ActionModel& model) {
  std::vector<NamedTensor> out;
  for (const auto& p : model.parameters()) out.push_back({p.name, p.tensor.detach()});
  for (const auto& p : model.frozen_parameters()) out.push_back({p.name, p.tensor.detach()});
  return out;
}

std::unique_ptr<ActionModel> restore_model(const Checkpoint& checkpoint) {
  auto model = make_model(checkpoint.model);
  load_parameters(*model, checkpoint.parameters);
  return model;
}

}  // namespace fineformer
