#include "ofb/io.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "ofb/error.hpp"

namespace ofb {

nlohmann::json architecture_to_json(const Architecture& arch) {
  nlohmann::json subs = nlohmann::json::array();
  for (const auto& e : arch.submodules) {
    subs.push_back({{"kind", to_string(e.kind)},
                    {"layer", e.layer},
                    {"full_width", e.full_width},
                    {"kept_width", e.kept_units.size()},
                    {"kept_units", e.kept_units},
                    {"kept_steps", e.kept_steps}});
  }
  return {{"submodules", subs}};
}

Architecture architecture_from_json(const nlohmann::json& j) {
  Architecture arch;
  for (const auto& s : j.at("submodules")) {
    ArchitectureEntry e;
    e.kind = submodule_kind_from_string(s.at("kind").get<std::string>());
    e.layer = s.at("layer").get<int>();
    e.full_width = s.at("full_width").get<std::size_t>();
    e.kept_units = s.at("kept_units").get<std::vector<std::size_t>>();
    e.kept_steps = s.at("kept_steps").get<std::vector<std::size_t>>();
    arch.submodules.push_back(std::move(e));
  }
  return arch;
}

nlohmann::json vit_arch_to_json(const ViTArch& a) {
  const auto& b = a.base;
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : a.layers) {
    layers.push_back({{"heads", l.heads}, {"head_channels", l.head_channels}, {"mlp", l.mlp}});
  }
  return {{"base",
           {{"image_size", b.image_size},
            {"patch_size", b.patch_size},
            {"embed_dim", b.embed_dim},
            {"depth", b.depth},
            {"heads", b.heads},
            {"head_dim", b.head_dim},
            {"mlp_dim", b.mlp_dim},
            {"classes", b.classes}}},
          {"embed", a.embed},
          {"layers", layers}};
}

ViTArch vit_arch_from_json(const nlohmann::json& j) {
  ViTArch a;
  const auto& b = j.at("base");
  a.base.image_size = b.at("image_size").get<std::size_t>();
  a.base.patch_size = b.at("patch_size").get<std::size_t>();
  a.base.embed_dim = b.at("embed_dim").get<std::size_t>();
  a.base.depth = b.at("depth").get<std::size_t>();
  a.base.heads = b.at("heads").get<std::size_t>();
  a.base.head_dim = b.at("head_dim").get<std::size_t>();
  a.base.mlp_dim = b.at("mlp_dim").get<std::size_t>();
  a.base.classes = b.at("classes").get<std::size_t>();
  a.embed = j.at("embed").get<std::size_t>();
  for (const auto& l : j.at("layers")) {
    a.layers.push_back({l.at("heads").get<std::size_t>(), l.at("head_channels").get<std::size_t>(),
                        l.at("mlp").get<std::size_t>()});
  }
  return a;
}

void save_checkpoint(const ViTModel& model, const std::filesystem::path& stem) {
  auto bin = stem;
  bin += ".bin";
  auto man = stem;
  man += ".json";
  std::ofstream out(bin, std::ios::binary);
  if (!out) throw Error("cannot write " + bin.string());
  nlohmann::json tensors = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : model.named_tensors()) {
    const auto d = t.data();
    out.write(reinterpret_cast<const char*>(d.data()),
              static_cast<std::streamsize>(d.size() * sizeof(double)));
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += d.size() * sizeof(double);
  }
  write_json(man, {{"format", "float64-le"},
                   {"file", bin.filename().string()},
                   {"bytes", offset},
                   {"arch", vit_arch_to_json(model.arch)},
                   {"tensors", tensors}});
}

ViTModel load_checkpoint(const std::filesystem::path& stem) {
  auto man = stem;
  man += ".json";
  const auto manifest = read_json(man);
  ViTModel model = ViTModel::init(vit_arch_from_json(manifest.at("arch")), 0);
  const auto bin = stem.parent_path() / manifest.at("file").get<std::string>();
  std::ifstream in(bin, std::ios::binary);
  if (!in) throw Error("cannot read " + bin.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::map<std::string, nlohmann::json> entries;
  for (const auto& t : manifest.at("tensors")) entries[t.at("name").get<std::string>()] = t;
  for (auto [name, t] : model.named_tensors()) {
    const auto it = entries.find(name);
    if (it == entries.end()) throw Error("checkpoint " + man.string() + " lacks tensor " + name);
    const auto shape = it->second.at("shape").get<Shape>();
    if (shape != t.shape()) {
      throw ShapeError("checkpoint tensor " + name + " has shape " + shape_str(shape) +
                       ", model expects " + shape_str(t.shape()));
    }
    const auto offset = it->second.at("offset").get<std::size_t>();
    const std::size_t n = t.numel() * sizeof(double);
    if (offset + n > bytes.size()) throw Error("checkpoint " + bin.string() + " is truncated");
    std::memcpy(t.mutable_data().data(), bytes.data() + offset, n);
  }
  return model;
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path, bool* truncated) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  std::vector<nlohmann::json> out;
  std::string line;
  if (truncated) *truncated = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception&) {
      if (truncated) *truncated = true;
      break;
    }
  }
  return out;
}

std::vector<PruneEvent> read_prune_events(const std::filesystem::path& path) {
  std::vector<PruneEvent> events;
  for (const auto& j : read_jsonl(path)) events.push_back(PruneEvent::from_json(j));
  return events;
}

}  // namespace ofb
