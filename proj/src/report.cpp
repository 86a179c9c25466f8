#include "vgkit/report.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "vgkit/errors.hpp"
#include "vgkit/tensor_io.hpp"

#ifndef VGKIT_VERSION
#define VGKIT_VERSION "0.0.0"
#endif

namespace vgkit {

std::vector<std::uint8_t> encode_heatmap(const AttentionMap& map, const PatchMask& mask, int scale) {
  if (map.n() != mask.n()) throw ShapeError("heatmap map and mask grids differ");
  if (scale < 1) throw ConfigError("heatmap scale must be >= 1");
  const int n = map.n();
  const int side = n * scale;
  const std::string header = "P6\n" + std::to_string(side) + " " + std::to_string(side) + "\n255\n";

  const auto cells = map.cells();
  const double peak = *std::max_element(cells.begin(), cells.end());
  std::vector<std::uint8_t> gray(cells.size());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    gray[i] = peak > 0 ? static_cast<std::uint8_t>(std::lround(255.0 * cells[i] / peak)) : 0;
  }
  auto inside = [&](int i, int j) { return i >= 0 && j >= 0 && i < n && j < n && mask.at(i, j); };

  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(header.size() + static_cast<std::size_t>(side) * side * 3);
  for (int y = 0; y < side; ++y) {
    const int i = y / scale;
    const int py = y % scale;
    for (int x = 0; x < side; ++x) {
      const int j = x / scale;
      const int px = x % scale;
      bool red = false;
      if (inside(i, j)) {
        red = (py == 0 && !inside(i - 1, j)) || (py == scale - 1 && !inside(i + 1, j)) ||
              (px == 0 && !inside(i, j - 1)) || (px == scale - 1 && !inside(i, j + 1));
      }
      if (red) {
        out.insert(out.end(), {255, 0, 0});
      } else {
        const auto g = gray[static_cast<std::size_t>(i) * n + j];
        out.insert(out.end(), {g, g, g});
      }
    }
  }
  return out;
}

void render_heatmap(const AttentionMap& map, const PatchMask& mask, const std::filesystem::path& out, int scale) {
  write_file_atomic(out, encode_heatmap(map, mask, scale));
}

nlohmann::json RunManifest::to_json() const {
  return nlohmann::json{{"command", command},
                        {"config", config},
                        {"inputs", inputs},
                        {"tool_version", tool_version},
                        {"wall_time_s", wall_time_s}};
}

std::string tool_version() { return VGKIT_VERSION; }

void write_run_manifest(const std::filesystem::path& dir, const RunManifest& manifest) {
  write_file_atomic(dir / "manifest.json", manifest.to_json().dump(2) + "\n");
}

}  // namespace vgkit
