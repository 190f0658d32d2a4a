#pragma once

// Versioned binary parameter snapshots: magic "TDV3", u32 version, u32 record
// count, then per record a length-prefixed name, the shape and the values as
// little-endian 32-bit floats. Records are sorted by name. Values are exact
// because parameters live on the float32 grid.

#include <map>
#include <string>

#include "tdv3/params.hpp"

namespace tdv3 {

inline constexpr std::uint32_t kCheckpointVersion = 1;

void checkpoint_save(const ParameterStore& store, const std::string& path);

// Reads all records; corrupt magic, unsupported version or truncation raise
// errors naming the path.
std::map<std::string, Tensor> checkpoint_read(const std::string& path);

// Copies loaded values into an existing store. Name or shape disagreements
// raise an error naming the first offending tensor in sorted order.
void checkpoint_restore(ParameterStore& store, const std::map<std::string, Tensor>& loaded);

}  // namespace tdv3
