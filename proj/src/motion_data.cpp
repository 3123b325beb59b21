#include "motret/motion_data.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <unordered_set>

#include "json.hpp"
#include "motret/binio.hpp"
#include "motret/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace motret {

std::string to_string(Source s) {
  switch (s) {
    case Source::A: return "A";
    case Source::B: return "B";
    default: return "synthetic";
  }
}

std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    default: return "test";
  }
}

Source source_from_string(const std::string& s) {
  if (s == "A") return Source::A;
  if (s == "B") return Source::B;
  if (s == "synthetic") return Source::Synthetic;
  throw DataError("unknown source '" + s + "' (expected A, B or synthetic)");
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw DataError("unknown split '" + s + "' (expected train, val or test)");
}

void MotionSequence::validate() const {
  check_data(body.ndim() == 3 && body.dim(1) == kBodyJoints && body.dim(2) == kBodyFeatDim,
             "motion: body tensor must be [T x 21 x 12], got " + body.shape_str());
  const int T = body.dim(0);
  check_data(T >= 1, "motion: frame count must be >= 1");
  check_data(root.ndim() == 2 && root.dim(0) == T && root.dim(1) == kRootDim,
             "motion: root tensor must be [T x 4], got " + root.shape_str());
  check_data(feet.ndim() == 2 && feet.dim(0) == T && feet.dim(1) == kFeetDim,
             "motion: feet tensor must be [T x 4], got " + feet.shape_str());
  check_data(fps > 0.0, "motion: fps must be positive");
  check_data(body.all_finite() && root.all_finite(), "motion: non-finite value in body/root");
  for (long i = 0; i < feet.numel(); ++i)
    check_data(feet[i] == 0.0 || feet[i] == 1.0, "motion: feet flags must be 0 or 1");
}

std::vector<int> Dataset::split_indices(Split s) const {
  std::vector<int> idx;
  for (size_t i = 0; i < pairs.size(); ++i)
    if (pairs[i].split == s) idx.push_back(static_cast<int>(i));
  return idx;
}

// ---------------------------------------------------------------- binary IO

namespace {
constexpr uint16_t kMotionFormatVersion = 1;
constexpr uint8_t kTagBody = 0, kTagRoot = 1, kTagFeet = 2;

void put_group_payload(std::ostream& os, const Tensor& t) {
  for (long i = 0; i < t.numel(); ++i) io::put_f32(os, static_cast<float>(t[i]));
}

Tensor get_group_payload(std::istream& is, std::vector<int> shape, const char* what) {
  Tensor t(std::move(shape));
  for (long i = 0; i < t.numel(); ++i) t[i] = static_cast<double>(io::get_f32(is, what));
  return t;
}
}  // namespace

void write_motion(const MotionSequence& m, const std::string& path) {
  m.validate();
  std::ofstream os(path, std::ios::binary);
  check_data(os.good(), "cannot open for writing: " + path);
  io::put_bytes(os, "MOTF");
  io::put_u16(os, kMotionFormatVersion);
  io::put_f32(os, static_cast<float>(m.fps));
  io::put_u32(os, static_cast<uint32_t>(m.frames()));
  io::put_u8(os, 3);
  io::put_u8(os, kTagBody);
  io::put_u16(os, kBodyJoints);
  io::put_u16(os, kBodyFeatDim);
  io::put_u8(os, kTagRoot);
  io::put_u16(os, 1);
  io::put_u16(os, kRootDim);
  io::put_u8(os, kTagFeet);
  io::put_u16(os, 1);
  io::put_u16(os, kFeetDim);
  put_group_payload(os, m.body);
  put_group_payload(os, m.root);
  put_group_payload(os, m.feet);
  check_data(os.good(), "write failed: " + path);
}

MotionSequence read_motion(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  check_data(is.good(), "cannot open motion file: " + path);
  check_data(io::get_bytes(is, 4, "magic") == "MOTF", "bad magic in " + path);
  const uint16_t version = io::get_u16(is, "version");
  check_data(version == kMotionFormatVersion,
             "unsupported motion format version " + std::to_string(version) + " in " + path);
  MotionSequence m;
  m.fps = static_cast<double>(io::get_f32(is, "fps"));
  const uint32_t T = io::get_u32(is, "frame count");
  check_data(T >= 1, "motion file with zero frames: " + path);
  const uint8_t groups = io::get_u8(is, "group count");
  check_data(groups == 3, "expected 3 token groups in " + path);

  struct GroupHeader {
    uint8_t tag;
    uint16_t count, dim;
  };
  GroupHeader gh[3];
  for (auto& g : gh) {
    g.tag = io::get_u8(is, "group tag");
    g.count = io::get_u16(is, "token count");
    g.dim = io::get_u16(is, "token dim");
  }
  check_data(gh[0].tag == kTagBody && gh[1].tag == kTagRoot && gh[2].tag == kTagFeet,
             "unexpected group order in " + path);
  check_data(gh[0].count == kBodyJoints && gh[0].dim == kBodyFeatDim,
             "body group dimension mismatch in " + path);
  check_data(gh[1].count == 1 && gh[1].dim == kRootDim, "root group dimension mismatch in " + path);
  check_data(gh[2].count == 1 && gh[2].dim == kFeetDim, "feet group dimension mismatch in " + path);

  // Validate payload size against the header before trusting T for allocation.
  const uintmax_t expected =  // 30-byte header, then f32 payload
      30 + 4ull * T * (static_cast<uintmax_t>(kBodyJoints) * kBodyFeatDim + kRootDim + kFeetDim);
  check_data(fs::file_size(path) == expected, "payload size does not match header in " + path);

  const int Ti = static_cast<int>(T);
  m.body = get_group_payload(is, {Ti, kBodyJoints, kBodyFeatDim}, "body payload");
  m.root = get_group_payload(is, {Ti, kRootDim}, "root payload");
  m.feet = get_group_payload(is, {Ti, kFeetDim}, "feet payload");
  is.peek();
  check_data(is.eof(), "trailing bytes after payload in " + path);
  m.validate();
  return m;
}

// ---------------------------------------------------------------- manifests

Dataset load_manifest(const std::string& path) {
  std::ifstream is(path);
  check_data(is.good(), "cannot open manifest: " + path);
  const fs::path base = fs::path(path).parent_path();

  Dataset ds;
  std::unordered_set<std::string> seen_ids;
  std::string line;
  long line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = "manifest line " + std::to_string(line_no) + ": ";
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(where + e.what());
    }
    try {
      TextMotionPair p;
      p.id = rec.at("id").get<std::string>();
      check_data(!p.id.empty(), where + "empty id");
      check_data(seen_ids.insert(p.id).second, where + "duplicate id '" + p.id + "'");
      p.texts = rec.at("texts").get<std::vector<std::string>>();
      check_data(!p.texts.empty(), where + "empty texts");
      for (const auto& t : p.texts) check_data(!t.empty(), where + "empty text entry");
      p.source = source_from_string(rec.at("source").get<std::string>());
      p.split = split_from_string(rec.at("split").get<std::string>());
      if (rec.contains("label")) p.label = rec.at("label").get<std::string>();
      const std::string mf = rec.at("motion_file").get<std::string>();
      const fs::path mp = fs::path(mf).is_absolute() ? fs::path(mf) : base / mf;
      p.motion = read_motion(mp.string());
      ds.pairs.push_back(std::move(p));
    } catch (const json::exception& e) {
      throw DataError(where + e.what());
    } catch (const DataError& e) {
      throw DataError(where + e.what());
    }
  }
  for (const auto& p : ds.pairs) {
    const std::string s = to_string(p.source);
    bool present = false;
    for (const auto& q : ds.provenance) present = present || q == s;
    if (!present) ds.provenance.push_back(s);
  }
  return ds;
}

namespace {
std::string file_safe(const std::string& id) {
  std::string out = id;
  for (char& c : out)
    if (c == '/' || c == '\\') c = '_';
  return out;
}
}  // namespace

void save_dataset(const Dataset& ds, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "motions");
  std::ofstream os(fs::path(dir) / "manifest.jsonl");
  check_data(os.good(), "cannot write manifest in " + dir);
  for (const auto& p : ds.pairs) {
    const std::string rel = "motions/" + file_safe(p.id) + ".motf";
    write_motion(p.motion, (fs::path(dir) / rel).string());
    json rec;
    rec["id"] = p.id;
    rec["texts"] = p.texts;
    rec["motion_file"] = rel;
    rec["source"] = to_string(p.source);
    rec["split"] = to_string(p.split);
    if (!p.label.empty()) rec["label"] = p.label;
    os << rec.dump() << "\n";
  }
  check_data(os.good(), "manifest write failed in " + dir);
}

// ---------------------------------------------------------------- transforms

Dataset unify(const Dataset& a, const Dataset& b) {
  Dataset out;
  auto absorb = [&out](const Dataset& d) {
    for (const auto& p : d.pairs) {
      TextMotionPair q = p;
      q.id = to_string(p.source) + "/" + p.id;
      q.motion.validate();  // both inputs must share the common token layout
      out.pairs.push_back(std::move(q));
    }
    for (const auto& s : d.provenance) {
      bool present = false;
      for (const auto& q : out.provenance) present = present || q == s;
      if (!present) out.provenance.push_back(s);
    }
  };
  absorb(a);
  absorb(b);
  std::unordered_set<std::string> ids;
  for (const auto& p : out.pairs)
    check_data(ids.insert(p.id).second, "unify: id collision after prefixing: " + p.id);
  return out;
}

MotionSequence downsample(const MotionSequence& m, int max_frames) {
  check_data(max_frames >= 2, "downsample: max_frames must be >= 2");
  const int T = m.frames();
  if (T <= max_frames) return m;
  MotionSequence out;
  out.fps = m.fps;
  out.body = Tensor({max_frames, kBodyJoints, kBodyFeatDim});
  out.root = Tensor({max_frames, kRootDim});
  out.feet = Tensor({max_frames, kFeetDim});
  for (int i = 0; i < max_frames; ++i) {
    const int src = static_cast<int>(
        std::lround(static_cast<double>(i) * (T - 1) / (max_frames - 1)));
    for (int j = 0; j < kBodyJoints; ++j)
      for (int d = 0; d < kBodyFeatDim; ++d) out.body.at(i, j, d) = m.body.at(src, j, d);
    for (int d = 0; d < kRootDim; ++d) out.root.at(i, d) = m.root.at(src, d);
    for (int d = 0; d < kFeetDim; ++d) out.feet.at(i, d) = m.feet.at(src, d);
  }
  return out;
}

Tensor compute_velocities(const Tensor& positions, double fps) {
  check_data(positions.ndim() == 3 && positions.dim(2) == 3,
             "velocities: positions must be [T x J x 3]");
  check_data(positions.all_finite(), "velocities: non-finite input");
  const int T = positions.dim(0), J = positions.dim(1);
  Tensor v({T, J, 3});
  for (int t = 1; t < T; ++t)
    for (int j = 0; j < J; ++j)
      for (int c = 0; c < 3; ++c)
        v.at(t, j, c) = (positions.at(t, j, c) - positions.at(t - 1, j, c)) * fps;
  if (T > 1)
    for (int j = 0; j < J; ++j)
      for (int c = 0; c < 3; ++c) v.at(0, j, c) = v.at(1, j, c);
  return v;
}

Tensor compute_feet_contact(const Tensor& feet_vel_mag, double threshold) {
  check_data(threshold > 0.0, "feet contact: threshold must be positive");
  check_data(feet_vel_mag.ndim() == 2 && feet_vel_mag.dim(1) == kFeetDim,
             "feet contact: input must be [T x 4]");
  Tensor c(feet_vel_mag.shape());
  for (long i = 0; i < c.numel(); ++i) c[i] = std::fabs(feet_vel_mag[i]) < threshold ? 1.0 : 0.0;
  return c;
}

// ---------------------------------------------------------------- synthesis

namespace {
constexpr double kTau = 6.283185307179586476925286766559;

const char* kSubjects[] = {"a person", "the man", "a woman", "someone"};
const char* kAdverbs[] = {"slowly", "quickly", "carefully", "energetically"};
// Two interchangeable verbs/manners per archetype family; every content word
// is unique to its family so a bag-of-words teacher clusters captions by it.
const char* kVerbs[][2] = {
    {"walks", "strides"},   {"jumps", "hops"},     {"waves", "gestures"},  {"crouches", "squats"},
    {"kicks", "strikes"},   {"turns", "spins"},    {"stretches", "reaches"}, {"climbs", "ascends"},
};
const char* kManners[][2] = {
    {"forward steadily", "straight ahead"},   {"up and down", "high into the air"},
    {"both arms overhead", "with the right hand"}, {"down low", "close to the ground"},
    {"with one leg", "at an imaginary target"},    {"around in place", "in a tight circle"},
    {"toward the ceiling", "far above the head"},  {"up the stairs", "onto a platform"},
};
constexpr int kFamilies = 8;
}  // namespace

Dataset synth_dataset(uint64_t seed, int n_pairs, int n_archetypes, double train_frac,
                      double val_frac) {
  check_data(n_pairs >= 1, "synth: n_pairs must be >= 1");
  check_data(n_archetypes >= 2, "synth: need at least 2 archetypes");
  check_data(train_frac >= 0.0 && val_frac >= 0.0 && train_frac + val_frac <= 1.0,
             "synth: invalid split fractions");

  Rng rng(splitmix64(seed ^ 0x6d6f74696f6e73ULL));
  const int n_train = static_cast<int>(std::lround(train_frac * n_pairs));
  const int n_val = static_cast<int>(std::lround(val_frac * n_pairs));

  Dataset ds;
  ds.provenance = {"synthetic"};
  for (int i = 0; i < n_pairs; ++i) {
    const int a = i % n_archetypes;
    const int fam = a % kFamilies;

    TextMotionPair p;
    {
      char buf[16];
      std::snprintf(buf, sizeof buf, "s%04d", i);
      p.id = buf;
    }
    p.source = Source::Synthetic;
    p.label = "arch" + std::to_string(a);
    p.split = (i < n_train) ? Split::Train : (i < n_train + n_val ? Split::Val : Split::Test);

    // ---- motion ----
    const int T = 28 + static_cast<int>(rng.uniform_int(21));  // 28..48 frames
    const double fps = 20.0;
    const double freq = 0.6 + 0.35 * fam + rng.uniform(-0.05, 0.05);
    const double phase = rng.uniform(0.0, kTau);
    const double amp_scale = rng.uniform(0.8, 1.2);
    const double root_speed = 0.15 * ((a * 2) % 5 + 1) + rng.uniform(-0.02, 0.02);

    Tensor pos({T, kBodyJoints, 3});
    for (int j = 0; j < kBodyJoints; ++j) {
      const double amp = amp_scale * (0.2 + 0.8 * (((j * 7 + a * 13) % 5) / 4.0));
      for (int c = 0; c < 3; ++c) {
        const double base = 0.1 * ((j * 31 + c * 17) % 7 - 3);
        for (int t = 0; t < T; ++t)
          pos.at(t, j, c) = base + amp * std::sin(kTau * freq * t / fps + phase + 0.7 * j + 1.3 * c);
      }
    }
    Tensor vel = compute_velocities(pos, fps);

    MotionSequence m;
    m.fps = fps;
    m.body = Tensor({T, kBodyJoints, kBodyFeatDim});
    for (int t = 0; t < T; ++t)
      for (int j = 0; j < kBodyJoints; ++j) {
        for (int c = 0; c < 3; ++c) m.body.at(t, j, c) = pos.at(t, j, c);
        for (int c = 0; c < 6; ++c)
          m.body.at(t, j, 3 + c) =
              0.5 * std::sin(kTau * 0.5 * freq * t / fps + 0.9 * j + 0.6 * c + phase);
        for (int c = 0; c < 3; ++c) m.body.at(t, j, 9 + c) = vel.at(t, j, c);
      }
    m.root = Tensor({T, kRootDim});
    for (int t = 0; t < T; ++t) {
      m.root.at(t, 0) = 0.2 * std::sin(kTau * freq * t / fps + phase);
      m.root.at(t, 1) = root_speed;
      m.root.at(t, 2) = 0.05 * std::sin(0.5 * kTau * freq * t / fps);
      m.root.at(t, 3) = 0.9 + 0.08 * std::sin(kTau * freq * t / fps + 1.0);
    }
    // contact flags from ankle/foot velocity magnitudes
    Tensor mags({T, kFeetDim});
    const int foot_joints[kFeetDim] = {6, 9, 7, 10};
    for (int t = 0; t < T; ++t)
      for (int f = 0; f < kFeetDim; ++f) {
        const int j = foot_joints[f];
        double s = 0.0;
        for (int c = 0; c < 3; ++c) s += vel.at(t, j, c) * vel.at(t, j, c);
        mags.at(t, f) = std::sqrt(s);
      }
    // Keep generated values on the f32 grid: the on-disk format stores f32,
    // and training determinism wants in-memory and reloaded data identical.
    m.body.round_to_f32();
    m.root.round_to_f32();
    m.feet = compute_feet_contact(mags, 1.0);
    p.motion = std::move(m);

    // ---- captions ----
    const int n_texts = 1 + static_cast<int>(rng.uniform_int(3));
    for (int q = 0; q < n_texts; ++q) {
      std::string text = kSubjects[rng.uniform_int(4)];
      text += " ";
      text += kVerbs[fam][rng.uniform_int(2)];
      text += " ";
      text += kManners[fam][rng.uniform_int(2)];
      if (rng.bernoulli(0.5)) {
        text += " ";
        text += kAdverbs[rng.uniform_int(4)];
      }
      if (a >= kFamilies) text += " variation " + std::to_string(a);
      p.texts.push_back(std::move(text));
    }

    ds.pairs.push_back(std::move(p));
  }
  return ds;
}

}  // namespace motret
