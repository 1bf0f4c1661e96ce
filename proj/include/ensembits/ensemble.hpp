#pragma once

#include "ensembits/geometry.hpp"

#include <optional>
#include <string>
#include <vector>

namespace ensembits {

/// One protein's unordered multiset of frames. All frames share residue count
/// and atom layout.
struct Ensemble {
  std::string id;
  std::string group;
  std::vector<geometry::FrameCoords> frames;
  /// Per-residue ground-truth flexibility (synthetic corpora only).
  std::optional<std::vector<double>> flexibility;

  std::size_t frame_count() const { return frames.size(); }
  std::size_t residue_count() const { return frames.empty() ? 0 : frames.front().residue_count(); }
  const std::vector<geometry::Atom>& layout() const { return frames.front().layout(); }

  /// Throws unless there is at least one frame and all frames are congruent.
  void validate() const;
  /// Sub-ensemble made of the listed frames, in the listed order.
  Ensemble subset(const std::vector<std::size_t>& frame_indices) const;

  bool operator==(const Ensemble&) const = default;
};

}  // namespace ensembits
