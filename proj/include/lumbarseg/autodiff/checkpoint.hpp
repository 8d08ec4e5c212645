#pragma once

// Binary checkpoint container (all integers and floats little-endian):
//
//   magic "LSCK" | u32 format_version | u8 element type (1 = f32, 2 = f64)
//   u32 metadata count | { u32 len, key bytes, u32 len, value bytes }*
//   u32 tensor count   | { u32 len, name bytes, u8 trainable, u32 rank,
//                          u64 extent * rank, element * product(extents) }*
//   adam: u64 step_count, f64 learning_rate, f64 beta1, f64 beta2, f64 epsilon,
//         u32 moment count, { element * size (first), element * size (second) }*
//
// Moments follow the order of the trainable tensors. Metadata is sorted by key,
// which makes save -> load -> save byte-identical.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "lumbarseg/autodiff/adam.hpp"
#include "lumbarseg/autodiff/parameters.hpp"

namespace lumbarseg::ad {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

template <typename Scalar>
struct Checkpoint {
  struct Entry {
    std::string name;
    Shape shape;
    bool trainable = true;
    Array<Scalar> values;
  };

  std::uint32_t format_version = kCheckpointFormatVersion;
  std::map<std::string, std::string> metadata;
  std::vector<Entry> tensors;
  AdamState<Scalar> adam;

  static Checkpoint capture(const ParameterSet<Scalar>& params, const AdamState<Scalar>& adam,
                            std::map<std::string, std::string> metadata = {});

  // Copies values into an existing parameter set. Every tensor of `params` must
  // be present with the same shape unless its name is listed in `skip`.
  void restore_into(ParameterSet<Scalar>& params, const std::vector<std::string>& skip = {}) const;

  const Entry& entry(const std::string& name) const;
  bool contains(const std::string& name) const;
  std::uint64_t hash_of(const std::string& name) const;

  std::vector<std::uint8_t> to_bytes() const;
  static Checkpoint from_bytes(const std::vector<std::uint8_t>& bytes);
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

}  // namespace lumbarseg::ad
