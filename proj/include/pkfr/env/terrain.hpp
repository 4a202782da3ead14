#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "pkfr/num/errors.hpp"

namespace pkfr::env {

enum class TerrainFamily : int {
  kBoxes = 0,
  kWalkOverObstacles,
  kClimbSlope,
  kRoughGround,
  kUpStairs,
  kClimbDown,
  kDownStairs,
  kClimbUp,
  kGapsCrossing,
};

inline constexpr std::array<TerrainFamily, 9> kAllFamilies = {
    TerrainFamily::kBoxes,     TerrainFamily::kWalkOverObstacles, TerrainFamily::kClimbSlope,
    TerrainFamily::kRoughGround, TerrainFamily::kUpStairs,        TerrainFamily::kClimbDown,
    TerrainFamily::kDownStairs, TerrainFamily::kClimbUp,          TerrainFamily::kGapsCrossing,
};

inline std::string_view family_name(TerrainFamily f) {
  switch (f) {
    case TerrainFamily::kBoxes: return "Boxes";
    case TerrainFamily::kWalkOverObstacles: return "WalkOverObstacles";
    case TerrainFamily::kClimbSlope: return "ClimbSlope";
    case TerrainFamily::kRoughGround: return "RoughGround";
    case TerrainFamily::kUpStairs: return "UpStairs";
    case TerrainFamily::kClimbDown: return "ClimbDown";
    case TerrainFamily::kDownStairs: return "DownStairs";
    case TerrainFamily::kClimbUp: return "ClimbUp";
    case TerrainFamily::kGapsCrossing: return "GapsCrossing";
  }
  throw ContractError("unknown terrain family " + std::to_string(static_cast<int>(f)));
}

inline std::optional<TerrainFamily> parse_family(std::string_view name) {
  for (auto f : kAllFamilies)
    if (family_name(f) == name) return f;
  return std::nullopt;
}

/// Fixed layout shared by every family (meters).
struct TerrainLayout {
  static constexpr double kResolution = 0.05;
  static constexpr std::size_t kCells = 200;  // 10 m
  static constexpr double kFeatureStart = 1.5;
  static constexpr double kFeatureEnd = 7.5;
  static constexpr double kGoalX = 8.0;
};

/// 1-D heightfield. Gap cells keep the surrounding surface height in
/// `heights` (used as the reference level for fall detection) but give no
/// support to feet and are transparent to depth rays.
struct TerrainProfile {
  TerrainFamily family = TerrainFamily::kRoughGround;
  double difficulty = 0.0;
  std::uint64_t seed = 0;
  double resolution = TerrainLayout::kResolution;
  std::vector<double> heights;
  std::vector<std::uint8_t> gap;
  double goal_x = TerrainLayout::kGoalX;

  double length() const { return resolution * static_cast<double>(heights.size()); }

  std::size_t cell(double x) const {
    if (x <= 0.0) return 0;
    const auto i = static_cast<std::size_t>(x / resolution);
    return std::min(i, heights.size() - 1);
  }

  double cell_center(std::size_t i) const { return (static_cast<double>(i) + 0.5) * resolution; }

  /// Surface height under x; the field is extended flat beyond both ends.
  double height_at(double x) const { return heights[cell(x)]; }
  bool supported_at(double x) const { return gap[cell(x)] == 0; }
};

namespace detail {

inline std::size_t cell_of(double x) {
  return static_cast<std::size_t>(std::llround(x / TerrainLayout::kResolution));
}

inline void raise_span(TerrainProfile& t, double x0, double x1, double h) {
  for (std::size_t i = cell_of(x0); i < std::min(cell_of(x1), t.heights.size()); ++i) t.heights[i] += h;
}

}  // namespace detail

inline constexpr double kStairRise = 0.12;      // at difficulty 1
inline constexpr double kStairTread = 0.3;
inline constexpr std::size_t kStairCount = 12;
inline constexpr double kLedgeHeight = 0.3;
inline constexpr double kSlopeMaxDeg = 20.0;
inline constexpr double kRoughAmplitude = 0.05;
inline constexpr double kBoxHeight = 0.12;
inline constexpr double kObstacleHeight = 0.15;
inline constexpr double kGapMaxWidth = 0.4;

/// Deterministic in (family, difficulty, seed).
inline TerrainProfile generate_terrain(TerrainFamily family, double difficulty, std::uint64_t seed) {
  if (!(difficulty >= 0.0 && difficulty <= 1.0)) {
    throw ContractError("generate_terrain: difficulty must lie in [0, 1]");
  }
  TerrainProfile t;
  t.family = family;
  t.difficulty = difficulty;
  t.seed = seed;
  t.heights.assign(TerrainLayout::kCells, 0.0);
  t.gap.assign(TerrainLayout::kCells, 0);
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(family) + 1);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
  const double res = TerrainLayout::kResolution;
  const std::size_t start = detail::cell_of(TerrainLayout::kFeatureStart);
  const std::size_t end = detail::cell_of(TerrainLayout::kFeatureEnd);

  switch (family) {
    case TerrainFamily::kBoxes: {
      double x = 2.0;
      while (x < 7.0) {
        const double w = uniform(0.3, 0.6);
        const double h = difficulty * kBoxHeight * uniform(0.5, 1.0);
        detail::raise_span(t, x, std::min(x + w, TerrainLayout::kFeatureEnd), h);
        x += w + uniform(0.4, 0.9);
      }
      break;
    }
    case TerrainFamily::kWalkOverObstacles: {
      double x = 2.0;
      while (x < 7.2) {
        const double h = difficulty * kObstacleHeight * uniform(0.6, 1.0);
        detail::raise_span(t, x, x + 0.1, h);
        x += uniform(0.6, 1.2);
      }
      break;
    }
    case TerrainFamily::kClimbSlope: {
      const double grade = std::tan(difficulty * kSlopeMaxDeg * M_PI / 180.0);
      const double ramp_end = 5.5;
      for (std::size_t i = start; i < t.heights.size(); ++i) {
        const double x = std::min(t.cell_center(i), ramp_end);
        t.heights[i] = grade * (x - TerrainLayout::kFeatureStart);
      }
      break;
    }
    case TerrainFamily::kRoughGround: {
      // Noise is drawn per 0.1 m patch.
      const double amp = difficulty * kRoughAmplitude;
      for (std::size_t i = detail::cell_of(1.0); i < t.heights.size(); i += 2) {
        const double h = amp * uniform(-1.0, 1.0);
        t.heights[i] = h;
        if (i + 1 < t.heights.size()) t.heights[i + 1] = h;
      }
      break;
    }
    case TerrainFamily::kUpStairs:
    case TerrainFamily::kDownStairs: {
      const double rise = (family == TerrainFamily::kUpStairs ? 1.0 : -1.0) * difficulty * kStairRise;
      const std::size_t tread = detail::cell_of(kStairTread);
      for (std::size_t i = start; i < t.heights.size(); ++i) {
        const std::size_t step = std::min((i - start) / tread, kStairCount);
        t.heights[i] = rise * static_cast<double>(step);
      }
      break;
    }
    case TerrainFamily::kClimbUp:
    case TerrainFamily::kClimbDown: {
      const double h = (family == TerrainFamily::kClimbUp ? 1.0 : -1.0) * difficulty * kLedgeHeight;
      for (std::size_t i = detail::cell_of(3.0); i < t.heights.size(); ++i) t.heights[i] = h;
      break;
    }
    case TerrainFamily::kGapsCrossing: {
      const auto width = static_cast<std::size_t>(std::llround(difficulty * kGapMaxWidth / res));
      for (double x0 : {2.5, 4.0, 5.5, 7.0}) {
        const double jitter = uniform(-0.2, 0.2);
        const std::size_t c0 = detail::cell_of(x0 + jitter);
        for (std::size_t i = c0; i < std::min(c0 + width, end); ++i) t.gap[i] = 1;
      }
      break;
    }
    default:
      throw ContractError("generate_terrain: unknown terrain family " +
                          std::to_string(static_cast<int>(family)));
  }
  return t;
}

/// Shortest round-trip decimal form of a double.
inline std::string format_real(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

/// Plain-text heightfield: header "family difficulty seed resolution", then
/// one height per line, or "GAP" for unsupported cells.
inline void export_terrain(const TerrainProfile& t, std::ostream& os) {
  os << family_name(t.family) << ' ' << format_real(t.difficulty) << ' ' << t.seed << ' '
     << format_real(t.resolution) << '\n';
  for (std::size_t i = 0; i < t.heights.size(); ++i) {
    if (t.gap[i]) {
      os << "GAP\n";
    } else {
      os << format_real(t.heights[i]) << '\n';
    }
  }
}

}  // namespace pkfr::env
