#pragma once

// Single-file checkpoint container.
//
// Layout:
//   bytes 0..3    magic "SNNT"
//   bytes 4..7    format version, u32 little-endian (currently 1)
//   bytes 8..15   manifest length in bytes, u64 little-endian
//   manifest      JSON text: kind, kind-specific metadata, and a named-tensor
//                 directory mapping name -> { shape, byte offset }
//   payload       tensor data as row-major 32-bit little-endian floats,
//                 concatenated in directory order with no gaps
//
// Writes are canonical (tensors sorted by name, manifest keys sorted), so
// save -> load -> save reproduces the file byte for byte.

#include <string>

#include "snnet/dataset.hpp"
#include "snnet/stitching.hpp"

namespace snnet {

inline constexpr uint32_t kCheckpointVersion = 1;

struct DatasetCheckpoint {
  SyntheticTask task;
  Dataset data;
};

struct SpaceCheckpoint {
  StitchSpace space;
  bool trained = false;  // set once joint training has run on this space
};

// Peeks at the manifest and returns the container kind ("dataset", "anchor",
// or "space") without loading the payload.
std::string checkpoint_kind(const std::string& path);

void save_dataset(const std::string& path, const SyntheticTask& task, const Dataset& data);
DatasetCheckpoint load_dataset(const std::string& path);

void save_anchor(const std::string& path, const AnchorModel& model);
AnchorModel load_anchor(const std::string& path);

void save_space(const std::string& path, const StitchSpace& space, bool trained);
SpaceCheckpoint load_space(const std::string& path);

}  // namespace snnet
