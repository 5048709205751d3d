#include "tsumm/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "tsumm/rng.hpp"
#include "tsumm/tensor.hpp"

namespace tsumm {

namespace {

constexpr char kRecordMagic[4] = {'T', 'S', 'M', 'M'};
constexpr uint16_t kRecordVersion = 1;

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(uint8_t(v & 0xFF));
  out.push_back(uint8_t(v >> 8));
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(uint8_t((v >> (8 * i)) & 0xFF));
}

void put_f32(std::vector<uint8_t>& out, float f) {
  uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

struct Reader {
  const std::vector<uint8_t>& buf;
  size_t pos = 0;
  const std::string& path;

  void need(size_t n) const {
    if (pos + n > buf.size())
      throw std::runtime_error("record '" + path + "': truncated or corrupt file");
  }
  uint16_t u16() {
    need(2);
    uint16_t v = uint16_t(buf[pos]) | uint16_t(buf[pos + 1]) << 8;
    pos += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(buf[pos + size_t(i)]) << (8 * i);
    pos += 4;
    return v;
  }
  uint8_t u8() {
    need(1);
    return buf[pos++];
  }
  void f32_array(std::vector<float>& out, size_t count) {
    need(count * 4);
    out.resize(count);
    for (size_t i = 0; i < count; ++i) {
      uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= uint32_t(buf[pos + i * 4 + size_t(b)]) << (8 * b);
      std::memcpy(&out[i], &bits, 4);
    }
    pos += count * 4;
  }
};

std::vector<uint8_t> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(in),
                              std::istreambuf_iterator<char>());
}

void dump(const std::string& path, const void* data, size_t len) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out.write(static_cast<const char*>(data), std::streamsize(len));
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

}  // namespace

void VideoRecord::validate() const {
  check_arg(n_frames >= 1, "record '" + id + "': empty");
  const std::vector<float>* mats[3] = {&visual, &text, &audio};
  for (int m = 0; m < 3; ++m) {
    check_arg(dims[size_t(m)] >= 1, "record '" + id + "': nonpositive feature dim");
    check_arg(int(mats[m]->size()) == n_frames * dims[size_t(m)],
              "record '" + id + "': feature matrix extent mismatch");
  }
  check_arg(presence.empty() || int(presence.size()) == n_frames * 3,
            "record '" + id + "': presence extent mismatch");
  check_arg(gt.empty() || int(gt.size()) == n_frames,
            "record '" + id + "': ground-truth length mismatch");
  for (float v : gt)
    check_arg(v >= 0.f && v <= 1.f, "record '" + id + "': ground truth outside [0, 1]");
}

void write_record(const VideoRecord& record, const std::string& path) {
  record.validate();
  std::vector<uint8_t> buf;
  buf.reserve(16 + (record.visual.size() + record.text.size() + record.audio.size()) * 4 +
              record.presence.size() + record.gt.size() * 4);
  buf.insert(buf.end(), kRecordMagic, kRecordMagic + 4);
  put_u16(buf, kRecordVersion);
  put_u32(buf, uint32_t(record.n_frames));
  for (int m = 0; m < 3; ++m) put_u32(buf, uint32_t(record.dims[size_t(m)]));
  const uint8_t flags = uint8_t((record.has_gt() ? 1 : 0) | (record.presence.empty() ? 0 : 2));
  buf.push_back(flags);
  for (const auto* mat : {&record.visual, &record.text, &record.audio})
    for (float f : *mat) put_f32(buf, f);
  buf.insert(buf.end(), record.presence.begin(), record.presence.end());
  for (float f : record.gt) put_f32(buf, f);
  dump(path, buf.data(), buf.size());
}

VideoRecord read_record(const std::string& path) {
  const std::vector<uint8_t> buf = slurp(path);
  Reader r{buf, 0, path};
  r.need(4);
  if (std::memcmp(buf.data(), kRecordMagic, 4) != 0)
    throw std::runtime_error("record '" + path + "': bad magic");
  r.pos = 4;
  const uint16_t version = r.u16();
  if (version != kRecordVersion)
    throw std::runtime_error("record '" + path + "': unsupported version " +
                             std::to_string(version));
  VideoRecord rec;
  rec.n_frames = int(r.u32());
  for (int m = 0; m < 3; ++m) rec.dims[size_t(m)] = int(r.u32());
  const uint8_t flags = r.u8();
  if (rec.n_frames < 1) throw std::runtime_error("record '" + path + "': empty record");

  // Exact size check up front: no partial record is ever returned.
  size_t expected = r.pos;
  for (int m = 0; m < 3; ++m) expected += size_t(rec.n_frames) * size_t(rec.dims[size_t(m)]) * 4;
  if (flags & 2) expected += size_t(rec.n_frames) * 3;
  if (flags & 1) expected += size_t(rec.n_frames) * 4;
  if (buf.size() != expected)
    throw std::runtime_error("record '" + path + "': size " + std::to_string(buf.size()) +
                             " does not match header (expected " + std::to_string(expected) + ")");

  r.f32_array(rec.visual, size_t(rec.n_frames) * size_t(rec.dims[0]));
  r.f32_array(rec.text, size_t(rec.n_frames) * size_t(rec.dims[1]));
  r.f32_array(rec.audio, size_t(rec.n_frames) * size_t(rec.dims[2]));
  if (flags & 2) {
    r.need(size_t(rec.n_frames) * 3);
    rec.presence.assign(buf.begin() + long(r.pos), buf.begin() + long(r.pos) + rec.n_frames * 3);
    r.pos += size_t(rec.n_frames) * 3;
  }
  if (flags & 1) r.f32_array(rec.gt, size_t(rec.n_frames));

  // Derive a default id from the file name.
  size_t slash = path.find_last_of('/');
  std::string base = slash == std::string::npos ? path : path.substr(slash + 1);
  size_t dot = base.find_last_of('.');
  rec.id = dot == std::string::npos ? base : base.substr(0, dot);
  rec.validate();
  return rec;
}

void DatasetManifest::validate() const {
  std::vector<std::string> ids;
  for (const auto& e : records) ids.push_back(e.id);
  std::sort(ids.begin(), ids.end());
  for (size_t i = 1; i < ids.size(); ++i)
    check_arg(ids[i] != ids[i - 1], "manifest: duplicate id '" + ids[i] + "'");
}

std::vector<const ManifestEntry*> DatasetManifest::split(const std::string& name) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : records)
    if (e.split == name) out.push_back(&e);
  return out;
}

void write_manifest(const DatasetManifest& m, const std::string& path) {
  m.validate();
  nlohmann::json j;
  j["format_version"] = m.format_version;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& e : m.records) {
    rows.push_back({{"id", e.id},
                    {"path", e.path},
                    {"n_frames", e.n_frames},
                    {"dims", e.dims},
                    {"has_gt", e.has_gt},
                    {"split", e.split},
                    {"tags", e.tags}});
  }
  j["records"] = rows;
  const std::string text = j.dump(2);
  dump(path, text.data(), text.size());
}

DatasetManifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("manifest '" + path + "': invalid JSON: " + e.what());
  }
  DatasetManifest m;
  m.format_version = j.at("format_version").get<int>();
  if (m.format_version != 1)
    throw std::runtime_error("manifest '" + path + "': unsupported format version");
  for (const auto& row : j.at("records")) {
    ManifestEntry e;
    e.id = row.at("id").get<std::string>();
    e.path = row.at("path").get<std::string>();
    e.n_frames = row.at("n_frames").get<int>();
    auto dims = row.at("dims");
    for (int i = 0; i < 3; ++i) e.dims[size_t(i)] = dims.at(size_t(i)).get<int>();
    e.has_gt = row.at("has_gt").get<bool>();
    e.split = row.value("split", std::string());
    if (row.contains("tags"))
      e.tags = row.at("tags").get<std::map<std::string, std::string>>();
    m.records.push_back(std::move(e));
  }
  m.validate();
  return m;
}

std::vector<VideoRecord> load_split(const DatasetManifest& m, const std::string& manifest_dir,
                                    const std::string& split) {
  std::vector<VideoRecord> out;
  for (const auto* e : m.split(split)) {
    VideoRecord rec = read_record(manifest_dir + "/" + e->path);
    check_arg(rec.n_frames == e->n_frames && rec.dims == e->dims,
              "record '" + e->id + "': file does not match manifest entry");
    check_arg(rec.has_gt() == e->has_gt, "record '" + e->id + "': gt flag mismatch vs manifest");
    rec.id = e->id;
    rec.meta = e->tags;
    out.push_back(std::move(rec));
  }
  return out;
}

void SyntheticSpec::validate() const {
  check_arg(n_videos >= 1, "synthetic: n_videos must be >= 1");
  check_arg(min_frames >= 2 && max_frames >= min_frames, "synthetic: bad frame range");
  for (int d : dims) check_arg(d >= 2, "synthetic: dims must be >= 2");
  check_arg(stay_prob > 0.0 && stay_prob <= 1.0, "synthetic: stay_prob must be in (0, 1]");
  check_arg(noise >= 0.0, "synthetic: noise must be >= 0");
  check_arg(text_dropout >= 0.0 && text_dropout < 1.0, "synthetic: text_dropout in [0, 1)");
}

std::vector<int> synthetic_dominance(const SyntheticSpec& spec, int video_index, int n_frames) {
  Rng rng(Rng::mix(spec.seed, 0xD0311Au, uint64_t(video_index)));
  std::vector<int> dom(static_cast<size_t>(n_frames));
  dom[0] = int(rng.next_below(3));
  for (int i = 1; i < n_frames; ++i) {
    if (rng.uniform() < spec.stay_prob) {
      dom[size_t(i)] = dom[size_t(i) - 1];
    } else {
      // uniform switch to one of the other two modalities
      const int step = 1 + int(rng.next_below(2));
      dom[size_t(i)] = (dom[size_t(i) - 1] + step) % 3;
    }
  }
  return dom;
}

std::vector<VideoRecord> generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::vector<VideoRecord> out;
  out.reserve(size_t(spec.n_videos));
  for (int vi = 0; vi < spec.n_videos; ++vi) {
    Rng rng_len(Rng::mix(spec.seed, 0x1E46u, uint64_t(vi)));
    Rng rng_sig(Rng::mix(spec.seed, 0x516Au, uint64_t(vi)));
    Rng rng_noise(Rng::mix(spec.seed, 0x40153u, uint64_t(vi)));
    Rng rng_pres(Rng::mix(spec.seed, 0x9835u, uint64_t(vi)));

    VideoRecord rec;
    char name[32];
    snprintf(name, sizeof(name), "synth_%04d", vi);
    rec.id = name;
    rec.n_frames = spec.min_frames + int(rng_len.next_below(uint64_t(spec.max_frames - spec.min_frames + 1)));
    rec.dims = spec.dims;
    const int n = rec.n_frames;

    const std::vector<int> dom = synthetic_dominance(spec, vi, n);

    // Smooth two-sinusoid trajectories: one saliency signal plus one decoy
    // per modality. A modality's signal channel carries the saliency signal
    // while it is dominant and its own decoy content otherwise, so uniform
    // mixing confounds the saliency signal with the decoys.
    auto trajectory = [n](Rng& rng) {
      const double f1 = rng.uniform(1.0, 3.0), p1 = rng.uniform();
      const double f2 = rng.uniform(3.0, 7.0), p2 = rng.uniform();
      std::vector<float> t(static_cast<size_t>(n));
      for (int i = 0; i < n; ++i) {
        const double x = double(i) / double(n);
        t[size_t(i)] = float(std::sin(2 * 3.14159265358979323846 * (f1 * x + p1)) +
                             0.6 * std::sin(2 * 3.14159265358979323846 * (f2 * x + p2)));
      }
      return t;
    };
    std::vector<float> u = trajectory(rng_sig);
    std::vector<float> decoy[3] = {trajectory(rng_sig), trajectory(rng_sig), trajectory(rng_sig)};
    float umin = u[0], umax = u[0];
    for (float v : u) {
      umin = std::min(umin, v);
      umax = std::max(umax, v);
    }
    rec.gt.resize(static_cast<size_t>(n));
    const double span = double(umax) - double(umin);
    for (int i = 0; i < n; ++i)
      rec.gt[size_t(i)] = span > 1e-12 ? float((double(u[size_t(i)]) - double(umin)) / span) : 0.f;

    std::vector<float>* mats[3] = {&rec.visual, &rec.text, &rec.audio};
    for (int m = 0; m < 3; ++m) mats[m]->assign(size_t(n) * size_t(spec.dims[size_t(m)]), 0.f);
    for (int i = 0; i < n; ++i) {
      for (int m = 0; m < 3; ++m) {
        const int dm = spec.dims[size_t(m)];
        float* row = mats[m]->data() + size_t(i) * size_t(dm);
        const bool dominant = dom[size_t(i)] == m;
        for (int d = 0; d < dm; ++d) row[d] = float(spec.noise * rng_noise.normal());
        // channel 0 carries the saliency signal or decoy content, channel 1
        // marks dominance
        if (dominant) {
          row[0] += u[size_t(i)];
          row[1] += 1.f;
        } else if (spec.decoy_content) {
          row[0] += decoy[m][size_t(i)];
        }
      }
    }

    rec.presence.assign(size_t(n) * 3, 1);
    if (spec.text_dropout > 0.0) {
      const int target = int(spec.text_dropout * n);
      int dropped = 0;
      int guard = 0;
      while (dropped < target && guard++ < 10 * n) {
        const int start = int(rng_pres.next_below(uint64_t(n)));
        const int len = 3 + int(rng_pres.next_below(8));
        for (int i = start; i < std::min(n, start + len); ++i) {
          if (rec.presence[size_t(i) * 3 + 1]) {
            rec.presence[size_t(i) * 3 + 1] = 0;
            ++dropped;
            float* row = rec.text.data() + size_t(i) * size_t(spec.dims[1]);
            for (int d = 0; d < spec.dims[1]; ++d) row[d] = 0.f;  // fill value for absent frames
          }
        }
      }
    }
    rec.validate();
    out.push_back(std::move(rec));
  }
  return out;
}

void split_dataset(DatasetManifest& manifest, const std::array<double, 3>& ratios, uint64_t seed) {
  double total = ratios[0] + ratios[1] + ratios[2];
  check_arg(std::fabs(total - 1.0) < 1e-6, "split: ratios must sum to 1");
  check_arg(manifest.records.size() >= 3, "split: fewer records than splits");
  static const char* kNames[3] = {"train", "val", "test"};

  // Group by stratum tag, iterate strata in sorted order.
  std::map<std::string, std::vector<size_t>> strata;
  for (size_t i = 0; i < manifest.records.size(); ++i) {
    auto it = manifest.records[i].tags.find("strata");
    strata[it == manifest.records[i].tags.end() ? "" : it->second].push_back(i);
  }

  for (auto& [key, idx] : strata) {
    Rng rng(Rng::mix(seed, fnv1a64(key.data(), key.size())));
    rng.shuffle(idx.data(), idx.size());
    const int n = int(idx.size());
    int counts[3];
    double frac[3];
    int assigned = 0;
    for (int s = 0; s < 3; ++s) {
      const double exact = ratios[size_t(s)] * n;
      counts[s] = int(std::floor(exact + 1e-9));
      frac[s] = exact - counts[s];
      assigned += counts[s];
    }
    while (assigned < n) {  // largest remainder, ties toward train > val > test
      int best = 0;
      for (int s = 1; s < 3; ++s)
        if (frac[s] > frac[best]) best = s;
      ++counts[best];
      frac[best] = -1;
      ++assigned;
    }
    int pos = 0;
    for (int s = 0; s < 3; ++s)
      for (int c = 0; c < counts[s]; ++c) manifest.records[idx[size_t(pos++)]].split = kNames[s];
  }
}

std::vector<float> zero_leading(const std::vector<float>& gt, int seconds) {
  check_arg(!gt.empty(), "zero_leading: empty ground truth");
  check_arg(seconds >= 0, "zero_leading: negative span");
  std::vector<float> out = gt;
  const int lim = std::min<int>(seconds, int(gt.size()));
  for (int i = 0; i < lim; ++i) out[size_t(i)] = 0.f;
  return out;
}

}  // namespace tsumm
