#pragma once

#include <cstdint>
#include <string>

#include "capaint/core/sequence.hpp"

namespace capaint::augment {

enum class BaselineKind { kFlip, kRotate, kCrop };

BaselineKind baseline_kind_from_string(const std::string& name);
const char* to_string(BaselineKind kind);

/// One spatial transform, chosen by `seed`, applied identically to every
/// frame:
///   flip   - horizontal mirror
///   rotate - 90, 180 or 270 degrees (180 only for non-square frames)
///   crop   - ceil(0.8 H) x ceil(0.8 W) window resized back bilinearly
STSequence baseline_augment(const STSequence& sequence, BaselineKind kind, std::uint64_t seed);

}  // namespace capaint::augment
