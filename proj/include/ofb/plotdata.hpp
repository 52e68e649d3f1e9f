#pragma once

// CSV tables derived from a search output directory.

#include <filesystem>

namespace ofb {

struct PlotdataSummary {
  std::size_t trajectory_rows = 0;
  std::size_t curve_rows = 0;
  std::size_t kept_rows = 0;
  bool truncated_log = false;
};

// Reads searchlog.jsonl and, when present, architecture.json from `run_dir`
// and writes
//   trajectory.csv  epoch,step,submodule_id,label,unit_rank,live,S,V,m
//                   (ranks padded with zeros up to the widest submodule)
//   curves.csv      one row per iteration: losses, lambda, gamma, g
//   kept_dims.csv   kept width per submodule
PlotdataSummary write_plotdata(const std::filesystem::path& run_dir,
                               const std::filesystem::path& out_dir);

}  // namespace ofb
