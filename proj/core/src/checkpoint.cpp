// SPDX-License-Identifier: Apache-2.0
#include <string_view>

#include "binary_io.hpp"
#include "mmt/config.hpp"
#include "mmt/errors.hpp"
#include "mmt/training.hpp"

namespace mmt {
namespace fs = std::filesystem;
using num::Tensor;

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

void put_tensor_values(io::ByteWriter& w, const Tensor& t) {
  w.u64(t.size());
  for (double x : t.values()) w.f64(x);
}

Tensor get_tensor_values(io::ByteReader& r, const num::Shape& shape) {
  const std::uint64_t n = r.u64();
  if (n != num::shape_size(shape)) r.fail("moment size does not match its parameter");
  r.need(n * 8, "tensor values");
  Tensor t(shape);
  for (auto& x : t.values()) x = r.f64();
  return t;
}

}  // namespace

std::uint64_t config_hash(const ModelConfig& model) {
  ModelConfig structural = model;
  structural.dropout = 0.0;  // affects training only
  return num::fnv1a(model_config_to_json(structural));
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
  io::ByteWriter w;
  w.raw("MMTC");
  w.u32(kCheckpointVersion);
  w.u64(c.config_hash);
  w.str(c.train_config_json);
  w.str(model_config_to_json(c.model));
  w.u32(static_cast<std::uint32_t>(c.vocabulary.size()));
  for (const auto& word : c.vocabulary) w.str(word);
  w.u64(c.step);
  w.str(c.sampler_rng_state);
  w.str(c.dropout_rng_state);
  w.u64(c.sampler.order.size());
  for (std::size_t i : c.sampler.order) w.u64(i);
  w.u64(c.sampler.cursor);
  w.u64(c.sampler.epoch);
  w.u32(static_cast<std::uint32_t>(c.params.size()));
  for (const auto& [name, value] : c.params) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(value.rank()));
    for (std::size_t e : value.shape()) w.u64(e);
    for (double x : value.values()) w.f64(x);
  }
  if (c.adam.first_moment.size() != c.params.size() || c.adam.second_moment.size() != c.params.size()) {
    throw ContractError("optimizer state does not cover every parameter");
  }
  w.i64(c.adam.step);
  for (std::size_t i = 0; i < c.params.size(); ++i) {
    put_tensor_values(w, c.adam.first_moment[i]);
    put_tensor_values(w, c.adam.second_moment[i]);
  }
  const auto& bytes = w.bytes();
  const std::uint64_t sum =
      num::fnv1a(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  w.u64(sum);
  return w.bytes();
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes, const fs::path& origin) {
  if (bytes.size() < 12) throw FormatError(origin, "file too short for a checkpoint");
  const std::size_t body = bytes.size() - 8;
  std::uint64_t stored = 0;
  for (std::size_t i = 0; i < 8; ++i) stored |= static_cast<std::uint64_t>(bytes[body + i]) << (8 * i);
  io::ByteReader r(bytes, origin);
  if (r.raw(4) != "MMTC") throw FormatError(origin, "bad magic (expected MMTC)");
  const std::uint64_t actual = num::fnv1a(std::string_view(reinterpret_cast<const char*>(bytes.data()), body));
  if (stored != actual) throw FormatError(origin, "checksum mismatch (file corrupted or truncated)");
  if (const auto v = r.u32(); v != kCheckpointVersion) {
    throw FormatError(origin, "unsupported checkpoint version " + std::to_string(v));
  }
  Checkpoint c;
  c.config_hash = r.u64();
  c.train_config_json = r.str();
  c.model = model_config_from_json(r.str());
  if (config_hash(c.model) != c.config_hash) throw FormatError(origin, "stored config hash does not match its config");
  const std::uint32_t words = r.u32();
  for (std::uint32_t i = 0; i < words; ++i) c.vocabulary.push_back(r.str());
  c.step = r.u64();
  c.sampler_rng_state = r.str();
  c.dropout_rng_state = r.str();
  const std::uint64_t order = r.u64();
  r.need(order * 8, "sampler order");
  for (std::uint64_t i = 0; i < order; ++i) c.sampler.order.push_back(r.u64());
  c.sampler.cursor = r.u64();
  c.sampler.epoch = r.u64();
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const std::uint32_t rank = r.u32();
    if (rank > 8) r.fail("implausible tensor rank " + std::to_string(rank));
    num::Shape shape(rank);
    for (auto& e : shape) e = r.u64();
    const std::size_t n = num::shape_size(shape);
    r.need(n * 8, "parameter values");
    Tensor t(shape);
    for (auto& x : t.values()) x = r.f64();
    c.params.emplace_back(std::move(name), std::move(t));
  }
  c.adam.step = r.i64();
  for (const auto& [name, value] : c.params) {
    c.adam.first_moment.push_back(get_tensor_values(r, value.shape()));
    c.adam.second_moment.push_back(get_tensor_values(r, value.shape()));
  }
  if (r.remaining() != 8) r.fail("unexpected bytes before the checksum");
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) { io::write_file(path, encode_checkpoint(ckpt)); }

Checkpoint load_checkpoint(const fs::path& path) { return decode_checkpoint(io::read_file(path), path); }

}  // namespace mmt
