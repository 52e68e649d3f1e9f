#include "ofb/plotdata.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

#include "ofb/error.hpp"
#include "ofb/io.hpp"

namespace ofb {

namespace {

std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out.precision(17);
  return out;
}

}  // namespace

PlotdataSummary write_plotdata(const std::filesystem::path& run_dir,
                               const std::filesystem::path& out_dir) {
  PlotdataSummary summary;
  const auto records = read_jsonl(run_dir / "searchlog.jsonl", &summary.truncated_log);
  Architecture arch;
  if (std::filesystem::exists(run_dir / "architecture.json")) {
    arch = architecture_from_json(read_json(run_dir / "architecture.json"));
  }
  std::filesystem::create_directories(out_dir);

  // every submodule is padded to the widest one
  std::size_t max_units = 0;
  for (const auto& e : arch.submodules) max_units = std::max(max_units, e.full_width);
  for (const auto& r : records) {
    if (r.at("type") != "epoch") continue;
    for (const auto& s : r.at("submodules")) max_units = std::max(max_units, s.at("S").size());
  }

  auto traj = open_csv(out_dir / "trajectory.csv");
  traj << "epoch,step,submodule_id,label,unit_rank,live,S,V,m\n";
  auto curves = open_csv(out_dir / "curves.csv");
  curves << "step,epoch,lambda,gamma,loss,task,rec,mask,entropy,psi,budget,l1,g\n";

  for (const auto& r : records) {
    const auto type = r.at("type").get<std::string>();
    if (type == "epoch") {
      for (const auto& s : r.at("submodules")) {
        const auto id = s.at("id").get<std::size_t>();
        const auto& S = s.at("S");
        const auto& V = s.at("V");
        const auto& M = s.at("m");
        for (std::size_t k = 0; k < max_units; ++k) {
          traj << r.at("epoch").get<std::size_t>() << ',' << r.at("step").get<std::size_t>() << ','
               << id << ',' << s.at("label").get<std::string>() << ',' << k << ',';
          if (k < S.size()) {
            traj << "1," << S[k].get<double>() << ',' << V[k].get<double>() << ','
                 << M[k].get<double>() << '\n';
          } else {
            traj << "0,0,0,0\n";
          }
          ++summary.trajectory_rows;
        }
      }
    } else if (type == "iter") {
      curves << r.at("step").get<std::size_t>() << ',' << r.at("epoch").get<std::size_t>();
      for (const char* k : {"lambda", "gamma", "loss", "task", "rec", "mask", "entropy", "psi",
                            "budget", "l1", "g"}) {
        curves << ',' << r.at(k).get<double>();
      }
      curves << '\n';
      ++summary.curve_rows;
    }
  }

  auto kept = open_csv(out_dir / "kept_dims.csv");
  kept << "submodule_id,kind,layer,full_width,kept_width\n";
  for (std::size_t i = 0; i < arch.submodules.size(); ++i) {
    const auto& e = arch.submodules[i];
    kept << i << ',' << to_string(e.kind) << ',' << e.layer << ',' << e.full_width << ','
         << e.kept_units.size() << '\n';
    ++summary.kept_rows;
  }
  return summary;
}

}  // namespace ofb
