#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "ofb/config.hpp"
#include "ofb/data.hpp"

using namespace ofb;

namespace {

SyntheticDatasetSpec small_spec(Generator g = Generator::GaussianBlobs) {
  SyntheticDatasetSpec s;
  s.n_train = 400;
  s.n_eval = 200;
  s.generator = g;
  return s;
}

// Accuracy of the nearest class mean fitted on the training split.
double nearest_mean_accuracy(const DatasetPair& d, std::size_t classes) {
  const std::size_t px = d.train.image_size * d.train.image_size;
  std::vector<std::vector<double>> mean(classes, std::vector<double>(px, 0.0));
  std::vector<double> count(classes, 0.0);
  for (std::size_t i = 0; i < d.train.n; ++i) {
    const auto c = static_cast<std::size_t>(d.train.labels[i]);
    for (std::size_t k = 0; k < px; ++k) mean[c][k] += d.train.images[i * px + k];
    count[c] += 1.0;
  }
  for (std::size_t c = 0; c < classes; ++c) {
    for (auto& v : mean[c]) v /= count[c];
  }
  std::size_t hit = 0;
  for (std::size_t i = 0; i < d.eval.n; ++i) {
    std::size_t best = 0;
    double best_d = INFINITY;
    for (std::size_t c = 0; c < classes; ++c) {
      double dist = 0.0;
      for (std::size_t k = 0; k < px; ++k) {
        const double e = d.eval.images[i * px + k] - mean[c][k];
        dist += e * e;
      }
      if (dist < best_d) best_d = dist, best = c;
    }
    hit += static_cast<int>(best) == d.eval.labels[i];
  }
  return static_cast<double>(hit) / static_cast<double>(d.eval.n);
}

}  // namespace

TEST_CASE("synthetic data") {
  for (auto g : {Generator::GaussianBlobs, Generator::StripedTextures}) {
    const auto spec = small_spec(g);
    const auto d = generate(spec);
    CHECK(d.train.n == 400);
    CHECK(d.eval.images.size() == 200 * 32 * 32);
    std::vector<int> count(4, 0);
    for (int l : d.train.labels) ++count[l];
    for (int c : count) CHECK(c == 100);
    const auto again = generate(spec);
    CHECK(again.train.images == d.train.images);
    CHECK(again.eval.labels == d.eval.labels);
    auto other = spec;
    other.seed += 1;
    CHECK(generate(other).train.images != d.train.images);
    if (g == Generator::GaussianBlobs) CHECK(nearest_mean_accuracy(d, 4) > 0.8);
  }
  CHECK(generator_from_string("striped-textures") == Generator::StripedTextures);
  CHECK_THROWS(generator_from_string("plaid"));
}

TEST_CASE("patchify layout") {
  Dataset d;
  d.n = 1;
  d.image_size = 4;
  for (int i = 0; i < 16; ++i) d.images.push_back(i);
  d.labels = {0};
  const auto p = patchify(d, 2);
  // token 1 is the top-right 2x2 patch
  CHECK(std::vector<double>(p.begin() + 4, p.begin() + 8) == std::vector<double>{2, 3, 6, 7});
  std::vector<double> out;
  gather_batch(p, 16, {0, 0}, out);
  CHECK(out.size() == 32);
}

TEST_CASE("dataset files") {
  const auto spec = small_spec();
  const auto d = generate(spec);
  const auto dir = std::filesystem::temp_directory_path() / "ofb_data_test";
  std::filesystem::remove_all(dir);
  write_dataset(d, spec, dir);
  const auto train = read_split(dir, "train");
  CHECK(train.images == d.train.images);
  CHECK(train.labels == d.train.labels);
  CHECK(read_split(dir, "eval").n == 200);
  CHECK_THROWS(read_split(dir, "test"));

  const auto dir2 = dir / "again";
  write_dataset(generate(spec), spec, dir2);
  for (const char* f : {"train_images.bin", "eval_labels.bin"}) {
    std::ifstream a(dir / f, std::ios::binary), b(dir2 / f, std::ios::binary);
    const std::string sa((std::istreambuf_iterator<char>(a)), {});
    const std::string sb((std::istreambuf_iterator<char>(b)), {});
    CHECK(!sa.empty());
    CHECK(sa == sb);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("config parsing") {
  const auto c = parse_config("# comment\ntrainer.tau = 0.3\n\nreg.mu2=50\npmim.mode=none\n");
  CHECK(c.train.tau == 0.3);
  CHECK(c.reg.mu2 == 50.0);
  CHECK(c.pmim.mode == MaskingMode::None);
  CHECK(c.reg.mu1 == 0.5);

  const auto snap = config_snapshot(c);
  CHECK(config_snapshot(parse_config(snap)) == snap);
  for (const auto& k : config_keys()) {
    CHECK(snap.find("\n" + k.name + " = ") != std::string::npos);
    CHECK(!k.doc.empty());
  }

  const auto fails_with = [](const std::string& text, const std::string& needle) {
    try {
      parse_config(text).validate();
    } catch (const ConfigError& e) {
      return std::string(e.what()).find(needle) != std::string::npos;
    }
    return false;
  };
  CHECK(fails_with("trainer.tau=1.5\n", "trainer.tau"));
  CHECK(fails_with("trainer.tau=0\n", "trainer.tau"));
  CHECK(fails_with("foo.bar=1\n", "unknown config key 'foo.bar'"));
  CHECK(fails_with("trainer.epochs=two\n", "trainer.epochs"));
  CHECK(fails_with("just text\n", "line 1"));
  CHECK(fails_with("reg.mu1_schedule=sometimes\n", "reg.mu1_schedule"));
  CHECK(fails_with("reg.mu2=-1\n", "reg.mu2"));
  CHECK_NOTHROW(parse_config("trainer.tau=1\n").validate());
  CHECK_THROWS_AS(load_config("/nonexistent/cfg.txt"), ConfigError);
}
