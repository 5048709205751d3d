#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "test_util.hpp"
#include "tsumm/data.hpp"
#include "tsumm/metrics.hpp"

using namespace tsumm;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("tsumm_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("record round trip is bit exact") {
  TempDir dir;
  VideoRecord rec = testutil::random_record({6, 4, 3}, 11, 42);
  rec.presence.assign(size_t(11) * 3, 1);
  rec.presence[4 * 3 + 1] = 0;
  const std::string path = dir.file("a.tsmm");
  write_record(rec, path);
  VideoRecord back = read_record(path);
  CHECK(back.n_frames == rec.n_frames);
  CHECK(back.dims == rec.dims);
  CHECK(back.id == "a");
  for (size_t i = 0; i < rec.visual.size(); ++i) CHECK(back.visual[i] == rec.visual[i]);
  for (size_t i = 0; i < rec.text.size(); ++i) CHECK(back.text[i] == rec.text[i]);
  for (size_t i = 0; i < rec.audio.size(); ++i) CHECK(back.audio[i] == rec.audio[i]);
  for (size_t i = 0; i < rec.gt.size(); ++i) CHECK(back.gt[i] == rec.gt[i]);
  CHECK(back.presence == rec.presence);

  // minimal record, no gt, no presence
  VideoRecord tiny = testutil::random_record({1, 1, 1}, 1, 43, false);
  write_record(tiny, dir.file("t.tsmm"));
  VideoRecord tback = read_record(dir.file("t.tsmm"));
  CHECK(tback.n_frames == 1);
  CHECK_FALSE(tback.has_gt());
  CHECK(tback.presence.empty());
}

TEST_CASE("record corruption errors") {
  TempDir dir;
  VideoRecord rec = testutil::random_record({3, 3, 3}, 5, 44);
  const std::string path = dir.file("c.tsmm");
  write_record(rec, path);

  // truncation: drop trailing bytes
  {
    std::ifstream in(path, std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
    std::ofstream out(dir.file("trunc.tsmm"), std::ios::binary);
    out.write(bytes.data(), std::streamsize(bytes.size() - 7));
  }
  CHECK_THROWS_WITH_AS(read_record(dir.file("trunc.tsmm")),
                       doctest::Contains("does not match header"), std::runtime_error);

  // bad magic
  {
    std::ofstream out(dir.file("magic.tsmm"), std::ios::binary);
    out.write("NOPE", 4);
  }
  CHECK_THROWS_WITH_AS(read_record(dir.file("magic.tsmm")), doctest::Contains("bad magic"),
                       std::runtime_error);

  // bad version
  {
    std::ifstream in(path, std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
    bytes[4] = 99;
    std::ofstream out(dir.file("ver.tsmm"), std::ios::binary);
    out.write(bytes.data(), std::streamsize(bytes.size()));
  }
  CHECK_THROWS_WITH_AS(read_record(dir.file("ver.tsmm")), doctest::Contains("version"),
                       std::runtime_error);

  CHECK_THROWS_AS(read_record(dir.file("missing.tsmm")), std::runtime_error);
}

TEST_CASE("synthetic generation") {
  SyntheticSpec spec;
  spec.n_videos = 6;
  spec.min_frames = 24;
  spec.max_frames = 40;
  spec.noise = 0.0;
  spec.seed = 99;
  auto records = generate_synthetic(spec);
  CHECK(records.size() == 6);

  for (const auto& rec : records) {
    CHECK(rec.n_frames >= 24);
    CHECK(rec.n_frames <= 40);
    CHECK(rec.has_gt());
    // per-video rescale reaches both endpoints
    float mn = 1.f, mx = 0.f;
    for (float v : rec.gt) {
      mn = std::min(mn, v);
      mx = std::max(mx, v);
      CHECK(v >= 0.f);
      CHECK(v <= 1.f);
    }
    CHECK(mn == 0.f);
    CHECK(mx == 1.f);
  }

  // determinism: same seed, same bytes
  auto again = generate_synthetic(spec);
  for (size_t r = 0; r < records.size(); ++r) {
    CHECK(records[r].n_frames == again[r].n_frames);
    for (size_t i = 0; i < records[r].visual.size(); ++i)
      CHECK(records[r].visual[i] == again[r].visual[i]);
    for (size_t i = 0; i < records[r].gt.size(); ++i) CHECK(records[r].gt[i] == again[r].gt[i]);
  }

  // noiseless planted signal: gt is exactly the rescaled dominant channel 0
  for (const auto& rec : records) {
    auto dom = synthetic_dominance(spec, int(&rec - records.data()), rec.n_frames);
    std::vector<float> signal(size_t(rec.n_frames));
    const std::vector<float>* mats[3] = {&rec.visual, &rec.text, &rec.audio};
    for (int i = 0; i < rec.n_frames; ++i)
      signal[size_t(i)] = (*mats[dom[size_t(i)]])[size_t(i) * size_t(rec.dims[size_t(dom[size_t(i)])])];
    float mn = signal[0], mx = signal[0];
    for (float v : signal) {
      mn = std::min(mn, v);
      mx = std::max(mx, v);
    }
    for (int i = 0; i < rec.n_frames; ++i) {
      const float expect = float((double(signal[size_t(i)]) - double(mn)) / (double(mx) - double(mn)));
      CHECK(rec.gt[size_t(i)] == expect);
    }
    // and the dominance marker channel is set
    for (int i = 0; i < rec.n_frames; ++i)
      CHECK((*mats[dom[size_t(i)]])[size_t(i) * size_t(rec.dims[size_t(dom[size_t(i)])]) + 1] == 1.f);
  }

  // rank correlation of gt with planted signal is perfect at zero noise
  {
    const auto& rec = records[0];
    auto dom = synthetic_dominance(spec, 0, rec.n_frames);
    std::vector<float> signal(size_t(rec.n_frames));
    const std::vector<float>* mats[3] = {&rec.visual, &rec.text, &rec.audio};
    for (int i = 0; i < rec.n_frames; ++i)
      signal[size_t(i)] = (*mats[dom[size_t(i)]])[size_t(i) * size_t(rec.dims[size_t(dom[size_t(i)])])];
    CHECK(*spearman_rho(signal, rec.gt) > 0.99);
  }

  // text dropout marks presence and zero-fills features
  SyntheticSpec drop = spec;
  drop.text_dropout = 0.3;
  auto dropped = generate_synthetic(drop);
  int absent = 0, total = 0;
  for (const auto& rec : dropped) {
    for (int i = 0; i < rec.n_frames; ++i) {
      ++total;
      if (!rec.presence[size_t(i) * 3 + 1]) {
        ++absent;
        for (int d = 0; d < rec.dims[1]; ++d) CHECK(rec.text[size_t(i) * size_t(rec.dims[1]) + d] == 0.f);
      }
    }
  }
  CHECK(absent > int(0.15 * total));
  CHECK(absent < int(0.45 * total));

  // dominance chain switches but persists
  auto dom = synthetic_dominance(spec, 1, 1000);
  int switches = 0;
  for (size_t i = 1; i < dom.size(); ++i) switches += dom[i] != dom[i - 1] ? 1 : 0;
  CHECK(switches > 10);
  CHECK(switches < 120);
}

TEST_CASE("manifest round trip and split loading") {
  TempDir dir;
  SyntheticSpec spec;
  spec.n_videos = 10;
  spec.min_frames = 8;
  spec.max_frames = 12;
  spec.dims = {4, 3, 2};
  auto records = generate_synthetic(spec);

  DatasetManifest manifest;
  for (const auto& rec : records) {
    write_record(rec, dir.file(rec.id + ".tsmm"));
    ManifestEntry e;
    e.id = rec.id;
    e.path = rec.id + ".tsmm";
    e.n_frames = rec.n_frames;
    e.dims = rec.dims;
    e.has_gt = true;
    manifest.records.push_back(e);
  }
  split_dataset(manifest, {0.8, 0.1, 0.1}, 7);
  CHECK(manifest.split("train").size() == 8);
  CHECK(manifest.split("val").size() == 1);
  CHECK(manifest.split("test").size() == 1);

  write_manifest(manifest, dir.file("manifest.json"));
  auto loaded = read_manifest(dir.file("manifest.json"));
  CHECK(loaded.records.size() == 10);
  CHECK(loaded.split("train").size() == 8);

  auto train = load_split(loaded, dir.path.string(), "train");
  CHECK(train.size() == 8);
  for (const auto& rec : train) CHECK(rec.has_gt());

  // duplicate ids rejected
  DatasetManifest dup = manifest;
  dup.records[1].id = dup.records[0].id;
  CHECK_THROWS_AS(dup.validate(), std::invalid_argument);

  // manifest/file mismatch rejected
  DatasetManifest bad = loaded;
  bad.records[0].n_frames += 1;
  write_manifest(bad, dir.file("bad.json"));
  auto bad_loaded = read_manifest(dir.file("bad.json"));
  CHECK_THROWS_AS(load_split(bad_loaded, dir.path.string(), bad_loaded.records[0].split),
                  std::invalid_argument);
}

TEST_CASE("split_dataset determinism, partition, stratification") {
  auto make_manifest = [](int n) {
    DatasetManifest m;
    for (int i = 0; i < n; ++i) {
      ManifestEntry e;
      e.id = "r" + std::to_string(i);
      e.path = e.id + ".tsmm";
      e.n_frames = 10;
      e.dims = {2, 2, 2};
      e.has_gt = true;
      m.records.push_back(e);
    }
    return m;
  };

  auto a = make_manifest(10);
  split_dataset(a, {0.8, 0.1, 0.1}, 5);
  auto b = make_manifest(10);
  split_dataset(b, {0.8, 0.1, 0.1}, 5);
  for (size_t i = 0; i < a.records.size(); ++i) CHECK(a.records[i].split == b.records[i].split);

  // every record lands in exactly one split
  int counts[3] = {0, 0, 0};
  for (const auto& e : a.records) {
    CHECK((e.split == "train" || e.split == "val" || e.split == "test"));
    counts[e.split == "train" ? 0 : e.split == "val" ? 1 : 2]++;
  }
  CHECK(counts[0] + counts[1] + counts[2] == 10);

  // stratified: two tags of 10 each keep exact proportions per split
  auto s = make_manifest(20);
  for (int i = 0; i < 20; ++i) s.records[size_t(i)].tags["strata"] = i < 10 ? "music" : "sports";
  split_dataset(s, {0.8, 0.1, 0.1}, 11);
  int per_tag[2][3] = {{0, 0, 0}, {0, 0, 0}};
  for (int i = 0; i < 20; ++i) {
    const auto& e = s.records[size_t(i)];
    per_tag[i < 10 ? 0 : 1][e.split == "train" ? 0 : e.split == "val" ? 1 : 2]++;
  }
  for (int t = 0; t < 2; ++t) {
    CHECK(per_tag[t][0] == 8);
    CHECK(per_tag[t][1] == 1);
    CHECK(per_tag[t][2] == 1);
  }

  auto few = make_manifest(2);
  CHECK_THROWS_AS(split_dataset(few, {0.8, 0.1, 0.1}, 1), std::invalid_argument);
  auto off = make_manifest(10);
  CHECK_THROWS_AS(split_dataset(off, {0.8, 0.3, 0.1}, 1), std::invalid_argument);
}

TEST_CASE("zero_leading") {
  std::vector<float> gt = {0.9f, 0.8f, 0.7f, 0.6f, 0.5f, 0.4f};
  auto z = zero_leading(gt, 5);
  CHECK(z == std::vector<float>{0, 0, 0, 0, 0, 0.4f});
  auto all = zero_leading({0.9f, 0.8f, 0.7f}, 5);
  CHECK(all == std::vector<float>{0, 0, 0});
  CHECK(zero_leading(gt, 0) == gt);
  CHECK_THROWS_AS(zero_leading({}, 5), std::invalid_argument);
}
