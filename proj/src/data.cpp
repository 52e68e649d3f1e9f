#include "ofb/data.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "ofb/error.hpp"
#include "ofb/runtime.hpp"

namespace ofb {

static_assert(std::endian::native == std::endian::little, "binary formats assume little-endian");

std::string to_string(Generator g) {
  return g == Generator::GaussianBlobs ? "gaussian-blobs" : "striped-textures";
}

Generator generator_from_string(const std::string& name) {
  if (name == "gaussian-blobs") return Generator::GaussianBlobs;
  if (name == "striped-textures") return Generator::StripedTextures;
  throw ConfigError("unknown generator '" + name + "' (gaussian-blobs, striped-textures)");
}

namespace {

double uniform01(std::mt19937_64& rng) {
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

struct ClassPrototype {
  double cx, cy;  // blob centre
  double angle;   // stripe orientation
  double freq;
};

std::vector<ClassPrototype> prototypes(const SyntheticDatasetSpec& spec, std::mt19937_64& rng) {
  std::vector<ClassPrototype> out;
  const double size = static_cast<double>(spec.image_size);
  for (std::size_t k = 0; k < spec.classes; ++k) {
    ClassPrototype p;
    // centres spread on a ring so classes stay apart
    const double theta =
        2.0 * std::numbers::pi * (static_cast<double>(k) + 0.3 * uniform01(rng)) /
        static_cast<double>(spec.classes);
    p.cx = size / 2.0 + 0.25 * size * std::cos(theta);
    p.cy = size / 2.0 + 0.25 * size * std::sin(theta);
    p.angle = std::numbers::pi * static_cast<double>(k) / static_cast<double>(spec.classes);
    p.freq = 2.0 * std::numbers::pi / (4.0 + 2.0 * uniform01(rng));
    out.push_back(p);
  }
  return out;
}

Dataset make_split(const SyntheticDatasetSpec& spec, const std::vector<ClassPrototype>& protos,
                   std::size_t n, std::mt19937_64& rng) {
  Dataset d;
  d.n = n;
  d.image_size = spec.image_size;
  const std::size_t side = spec.image_size;
  d.images.resize(n * side * side);
  d.labels.resize(n);
  const double sigma = static_cast<double>(side) / 8.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % spec.classes);
    d.labels[i] = label;
    const auto& p = protos[static_cast<std::size_t>(label)];
    const double jx = 2.0 * standard_normal(rng);
    const double jy = 2.0 * standard_normal(rng);
    const double phase = 2.0 * std::numbers::pi * uniform01(rng);
    double* img = d.images.data() + i * side * side;
    for (std::size_t y = 0; y < side; ++y) {
      for (std::size_t x = 0; x < side; ++x) {
        const double fx = static_cast<double>(x), fy = static_cast<double>(y);
        double v;
        if (spec.generator == Generator::GaussianBlobs) {
          const double dx = fx - p.cx - jx, dy = fy - p.cy - jy;
          v = 2.0 * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
        } else {
          const double u = fx * std::cos(p.angle) + fy * std::sin(p.angle);
          v = std::sin(p.freq * u + phase);
        }
        img[y * side + x] = v + spec.noise_sigma * standard_normal(rng);
      }
    }
  }
  return d;
}

template <typename T>
void write_raw(const std::filesystem::path& path, const std::vector<T>& values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(T)));
}

template <typename T>
std::vector<T> read_raw(const std::filesystem::path& path, std::size_t count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::vector<T> values(count);
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(count * sizeof(T)));
  if (in.gcount() != static_cast<std::streamsize>(count * sizeof(T))) {
    throw Error(path.string() + " is truncated");
  }
  return values;
}

}  // namespace

DatasetPair generate(const SyntheticDatasetSpec& spec) {
  if (spec.classes < 2) throw ConfigError("data.classes must be at least 2");
  if (spec.image_size == 0) throw ConfigError("data.image_size must be positive");
  if (!(spec.noise_sigma >= 0.0)) throw ConfigError("data.noise_sigma must be non-negative");
  std::mt19937_64 rng(spec.seed);
  const auto protos = prototypes(spec, rng);
  DatasetPair out;
  out.train = make_split(spec, protos, spec.n_train, rng);
  out.eval = make_split(spec, protos, spec.n_eval, rng);
  return out;
}

std::vector<double> patchify(const Dataset& data, std::size_t patch_size) {
  const std::size_t side = data.image_size;
  if (patch_size == 0 || side % patch_size != 0) {
    throw ShapeError("patchify: image size " + std::to_string(side) +
                     " is not divisible by patch size " + std::to_string(patch_size));
  }
  const std::size_t grid = side / patch_size;
  const std::size_t pp = patch_size * patch_size;
  std::vector<double> out(data.n * grid * grid * pp);
  for (std::size_t i = 0; i < data.n; ++i) {
    const double* img = data.images.data() + i * side * side;
    for (std::size_t gy = 0; gy < grid; ++gy) {
      for (std::size_t gx = 0; gx < grid; ++gx) {
        double* dst = out.data() + ((i * grid + gy) * grid + gx) * pp;
        for (std::size_t y = 0; y < patch_size; ++y) {
          for (std::size_t x = 0; x < patch_size; ++x) {
            dst[y * patch_size + x] = img[(gy * patch_size + y) * side + gx * patch_size + x];
          }
        }
      }
    }
  }
  return out;
}

void gather_batch(const std::vector<double>& patches, std::size_t per_sample,
                  const std::vector<std::size_t>& indices, std::vector<double>& out) {
  out.resize(indices.size() * per_sample);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    std::memcpy(out.data() + b * per_sample, patches.data() + indices[b] * per_sample,
                per_sample * sizeof(double));
  }
}

void write_dataset(const DatasetPair& data, const SyntheticDatasetSpec& spec,
                   const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest = {{"classes", spec.classes},
                             {"image_size", spec.image_size},
                             {"channels", 1},
                             {"generator", to_string(spec.generator)},
                             {"noise_sigma", spec.noise_sigma},
                             {"seed", spec.seed},
                             {"dtype", "float64-le"},
                             {"label_dtype", "int32-le"}};
  for (const auto& [name, split] : {std::pair{"train", &data.train}, std::pair{"eval", &data.eval}}) {
    write_raw(dir / (std::string(name) + "_images.bin"), split->images);
    std::vector<std::int32_t> labels(split->labels.begin(), split->labels.end());
    write_raw(dir / (std::string(name) + "_labels.bin"), labels);
    manifest["splits"][name] = {{"n", split->n},
                                {"images", std::string(name) + "_images.bin"},
                                {"labels", std::string(name) + "_labels.bin"},
                                {"shape", {split->n, 1, split->image_size, split->image_size}}};
  }
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << "\n";
}

Dataset read_split(const std::filesystem::path& dir, const std::string& split) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw Error("no manifest.json in " + dir.string());
  const auto manifest = nlohmann::json::parse(in);
  const auto& s = manifest.at("splits").at(split);
  Dataset d;
  d.n = s.at("n").get<std::size_t>();
  d.image_size = manifest.at("image_size").get<std::size_t>();
  d.images = read_raw<double>(dir / s.at("images").get<std::string>(),
                              d.n * d.image_size * d.image_size);
  const auto labels = read_raw<std::int32_t>(dir / s.at("labels").get<std::string>(), d.n);
  d.labels.assign(labels.begin(), labels.end());
  return d;
}

}  // namespace ofb
