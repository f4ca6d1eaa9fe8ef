#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "smd/bundle_adjustment.hpp"
#include "smd/error.hpp"
#include "smd/features.hpp"
#include "smd/image.hpp"
#include "smd/plane_sweep.hpp"
#include "smd/synth.hpp"

namespace smd {

enum class InitMode { Rank1, Flat };

std::string to_string(InitMode mode);
InitMode parse_init_mode(const std::string& s);

struct PipelineConfig {
  std::string input;  // directory or file pattern; ignored when synthetic
  bool synthetic = false;
  SceneConfig scene;  // synthetic input; render_images is forced on
  int grid_size = 80;
  int n_planes = 128;
  int sweep_downscale = 2;
  int median_radius = 2;
  BAOptions ba;
  InitMode init_mode = InitMode::Rank1;
  std::filesystem::path output_dir = "out";
  std::uint64_t seed = 1;  // synthetic scenes use this instead of scene.seed
  int threads = 0;         // 0 = hardware concurrency
};

inline const std::vector<std::string> kStageNames = {"read", "features", "init", "ba", "sweep"};

struct StageTime {
  std::string name;
  double seconds = 0;
};

// Synthetic runs only: estimates against the generating scene. Inverse
// depths are compared after a global scale fit, since the reconstruction
// gauge is arbitrary.
struct TruthEval {
  double focal_error_pct = 0;
  double grid_error_px = 0;
  double within_one_plane = 0;  // fraction of valid depth pixels
};

struct RunReport {
  bool ok = false;
  std::string failed_stage;
  std::optional<ErrorKind> error_kind;
  std::string error;

  std::vector<StageTime> stages;
  double total_seconds = 0;
  int n_frames = 0;
  int image_width = 0;
  int image_height = 0;
  int feature_count = 0;
  std::string init_mode;
  BAReport ba;
  double focal = 0;
  double k1 = 0;
  double k2 = 0;
  double plane_min = 0;
  double plane_max = 0;
  int n_planes = 0;
  int depth_valid_pixels = 0;
  std::optional<TruthEval> truth;
  std::filesystem::path depth_pfm;
  std::filesystem::path depth_preview;
  std::filesystem::path report_json;

  // Wall-clock values live under "timing" only.
  std::string to_json() const;
};

// Files in a directory (.png/.pgm), or files matching a glob pattern in the
// last path component, in lexicographic order. The first one is the
// reference.
std::vector<std::filesystem::path> list_frames(const std::string& pattern);
std::vector<GrayImage> load_frames(const std::string& pattern);

// Writes depth.pfm, depth_preview.png and report.json into cfg.output_dir.
// Stage failures are reported, not thrown; I/O failures writing the report
// itself throw.
RunReport run(const PipelineConfig& cfg);

// Reduced-resolution ground-truth inverse depth of a rendered scene.
FloatMap truth_inverse_depth(const GroundTruth& truth, int factor);

// 8-bit RGB preview, viridis over the valid inverse-depth range, black where
// invalid.
std::vector<std::uint8_t> colorize(const DepthMap& map);

// CLI exit status: 2 input error, 3 degenerate motion, 4 solver failure.
int exit_code(ErrorKind kind);

}  // namespace smd
