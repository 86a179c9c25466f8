#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "vgkit/grounding_metrics.hpp"

namespace vgkit {

inline constexpr int kHeatmapScale = 16;

// Binary PPM (P6). Each map cell becomes a scale x scale block of gray level
// round(255 * a / max(a)); mask cells bordering a non-mask cell or the image
// edge get a one-pixel pure red (255, 0, 0) outline on that side.
std::vector<std::uint8_t> encode_heatmap(const AttentionMap& map, const PatchMask& mask,
                                         int scale = kHeatmapScale);
void render_heatmap(const AttentionMap& map, const PatchMask& mask, const std::filesystem::path& out,
                    int scale = kHeatmapScale);

// Written as manifest.json into every output directory.
struct RunManifest {
  std::string command;
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json inputs = nlohmann::json::object();
  std::string tool_version;
  double wall_time_s = 0;

  nlohmann::json to_json() const;
};

std::string tool_version();
void write_run_manifest(const std::filesystem::path& dir, const RunManifest& manifest);

}  // namespace vgkit
