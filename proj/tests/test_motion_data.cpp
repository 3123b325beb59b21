#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "doctest.h"
#include "motret/motion_data.hpp"
#include "motret/rng.hpp"

using namespace motret;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  static int counter = 0;
  fs::path p = fs::temp_directory_path() / ("motret_" + tag + "_" + std::to_string(++counter));
  fs::create_directories(p);
  return p;
}

MotionSequence random_motion(int T, Rng& rng) {
  MotionSequence m;
  m.fps = 20.0;
  m.body = Tensor({T, kBodyJoints, kBodyFeatDim});
  for (long i = 0; i < m.body.numel(); ++i) m.body[i] = rng.normal();
  m.root = Tensor({T, kRootDim});
  for (long i = 0; i < m.root.numel(); ++i) m.root[i] = rng.normal();
  m.feet = Tensor({T, kFeetDim});
  for (long i = 0; i < m.feet.numel(); ++i) m.feet[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
  return m;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(is), {});
}

bool same_motion_bits(const MotionSequence& a, const MotionSequence& b) {
  return a.fps == b.fps && bit_equal(a.body, b.body) && bit_equal(a.root, b.root) &&
         bit_equal(a.feet, b.feet);
}

}  // namespace

TEST_CASE("motion file round trip is byte identical") {
  Rng rng(1);
  auto dir = temp_dir("motf");
  MotionSequence m = random_motion(17, rng);
  m.body.round_to_f32();
  m.root.round_to_f32();

  const auto p1 = dir / "a.motf";
  const auto p2 = dir / "b.motf";
  write_motion(m, p1.string());
  MotionSequence r = read_motion(p1.string());
  CHECK(r.frames() == 17);
  CHECK(same_motion_bits(m, r));
  write_motion(r, p2.string());
  CHECK(slurp(p1) == slurp(p2));
  fs::remove_all(dir);
}

TEST_CASE("motion file rejects malformed input") {
  Rng rng(2);
  auto dir = temp_dir("motf_bad");
  MotionSequence m = random_motion(5, rng);
  const auto good = dir / "good.motf";
  write_motion(m, good.string());
  std::string bytes = slurp(good);

  auto write_raw = [&](const std::string& name, const std::string& content) {
    std::ofstream os(dir / name, std::ios::binary);
    os.write(content.data(), static_cast<std::streamsize>(content.size()));
  };

  write_raw("magic.motf", "XXXX" + bytes.substr(4));
  CHECK_THROWS_AS(read_motion((dir / "magic.motf").string()), DataError);

  write_raw("trunc.motf", bytes.substr(0, bytes.size() - 7));
  CHECK_THROWS_AS(read_motion((dir / "trunc.motf").string()), DataError);

  write_raw("trail.motf", bytes + "xx");
  CHECK_THROWS_AS(read_motion((dir / "trail.motf").string()), DataError);

  std::string wrongdim = bytes;
  wrongdim[16] = 20;  // body token count (low byte)
  write_raw("dims.motf", wrongdim);
  CHECK_THROWS_AS(read_motion((dir / "dims.motf").string()), DataError);

  std::string bigT = bytes;
  bigT[13] = 20;  // frame count high byte: header claims ~335M frames
  write_raw("bigT.motf", bigT);
  CHECK_THROWS_AS(read_motion((dir / "bigT.motf").string()), DataError);

  CHECK_THROWS_AS(read_motion((dir / "missing.motf").string()), DataError);
  fs::remove_all(dir);
}

TEST_CASE("manifest save/load preserves records") {
  Dataset ds = synth_dataset(3, 3, 2);
  auto dir = temp_dir("manifest");
  save_dataset(ds, dir.string());
  Dataset back = load_manifest((dir / "manifest.jsonl").string());
  REQUIRE(back.pairs.size() == 3);
  for (size_t i = 0; i < 3; ++i) {
    CHECK(back.pairs[i].id == ds.pairs[i].id);
    CHECK(back.pairs[i].texts == ds.pairs[i].texts);
    CHECK(back.pairs[i].label == ds.pairs[i].label);
    CHECK(back.pairs[i].split == ds.pairs[i].split);
    CHECK(same_motion_bits(back.pairs[i].motion, ds.pairs[i].motion));
  }
  // load -> save -> identical manifest bytes
  auto dir2 = temp_dir("manifest2");
  save_dataset(back, dir2.string());
  CHECK(slurp(dir / "manifest.jsonl") == slurp(dir2 / "manifest.jsonl"));
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST_CASE("manifest errors carry line numbers") {
  auto dir = temp_dir("manifest_bad");
  Dataset ds = synth_dataset(5, 2, 2);
  save_dataset(ds, dir.string());

  auto manifest = dir / "manifest.jsonl";
  std::string content = slurp(manifest);

  {
    std::ofstream os(manifest);
    os << content;
    os << R"({"id":"x9","texts":[],"motion_file":"motions/s0000.motf","source":"synthetic","split":"train"})"
       << "\n";
  }
  try {
    load_manifest(manifest.string());
    FAIL("expected empty-texts error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    CHECK(std::string(e.what()).find("empty texts") != std::string::npos);
  }

  {
    std::ofstream os(manifest);
    os << content << "this is not a structured record\n";
  }
  CHECK_THROWS_AS(load_manifest(manifest.string()), DataError);

  {
    std::ofstream os(manifest);
    os << content
       << R"({"id":"x9","texts":["hi"],"motion_file":"motions/nope.motf","source":"A","split":"train"})"
       << "\n";
  }
  CHECK_THROWS_AS(load_manifest(manifest.string()), DataError);
  fs::remove_all(dir);
}

TEST_CASE("unify concatenates with source prefixes") {
  Dataset a = synth_dataset(1, 10, 2);
  Dataset b = synth_dataset(2, 5, 2);
  for (auto& p : a.pairs) p.source = Source::A;
  for (auto& p : b.pairs) p.source = Source::B;

  Dataset joint = unify(a, b);
  CHECK(joint.pairs.size() == 15);
  CHECK(joint.pairs[0].id == "A/s0000");
  CHECK(joint.pairs[10].id == "B/s0000");  // same raw id, distinct after prefixing

  Dataset empty;
  Dataset only_b = unify(empty, b);
  REQUIRE(only_b.pairs.size() == 5);
  for (size_t i = 0; i < 5; ++i) {
    CHECK(only_b.pairs[i].id == "B/" + b.pairs[i].id);
    CHECK(only_b.pairs[i].texts == b.pairs[i].texts);
  }

  // same source twice -> id collision must be detected
  CHECK_THROWS_AS(unify(b, b), DataError);
}

TEST_CASE("unify preserves payload multiset across grouping order") {
  Dataset a = synth_dataset(11, 4, 2);
  Dataset b = synth_dataset(12, 3, 2);
  Dataset c = synth_dataset(13, 2, 2);
  for (auto& p : a.pairs) p.source = Source::A;
  for (auto& p : b.pairs) p.source = Source::B;

  auto texts_of = [](const Dataset& d) {
    std::vector<std::vector<std::string>> out;
    for (const auto& p : d.pairs) out.push_back(p.texts);
    std::sort(out.begin(), out.end());
    return out;
  };
  Dataset left = unify(unify(a, b), c);
  Dataset right = unify(a, unify(b, c));
  CHECK(left.pairs.size() == right.pairs.size());
  CHECK(texts_of(left) == texts_of(right));
}

TEST_CASE("downsample index rule") {
  Rng rng(9);
  MotionSequence m = random_motion(450, rng);
  MotionSequence d = downsample(m, 200);
  REQUIRE(d.frames() == 200);
  // first and last frames kept
  for (int c = 0; c < kRootDim; ++c) {
    CHECK(d.root.at(0, c) == m.root.at(0, c));
    CHECK(d.root.at(199, c) == m.root.at(449, c));
  }
  // closed-form index for a middle sample
  const int i = 77;
  const int src = static_cast<int>(std::lround(77.0 * 449.0 / 199.0));
  for (int c = 0; c < kRootDim; ++c) CHECK(d.root.at(i, c) == m.root.at(src, c));

  MotionSequence m150 = random_motion(150, rng);
  CHECK(same_motion_bits(downsample(m150, 200), m150));

  MotionSequence m200 = random_motion(200, rng);
  CHECK(same_motion_bits(downsample(m200, 200), m200));
}

TEST_CASE("downsample is idempotent") {
  Rng rng(10);
  for (int trial = 0; trial < 5; ++trial) {
    const int T = 30 + static_cast<int>(rng.uniform_int(400));
    const int k = 20 + static_cast<int>(rng.uniform_int(100));
    MotionSequence m = random_motion(T, rng);
    MotionSequence once = downsample(m, k);
    MotionSequence twice = downsample(once, k);
    CHECK(same_motion_bits(once, twice));
    CHECK(once.frames() <= k);
  }
}

TEST_CASE("velocities") {
  Tensor constant({4, 2, 3});
  constant.fill(3.7);
  Tensor v0 = compute_velocities(constant, 20.0);
  for (long i = 0; i < v0.numel(); ++i) CHECK(v0[i] == 0.0);

  // p[t] = t * e_x at fps 1 -> unit velocity in x everywhere (incl. replicated v[0])
  Tensor lin({5, 1, 3});
  for (int t = 0; t < 5; ++t) lin.at(t, 0, 0) = static_cast<double>(t);
  Tensor v1 = compute_velocities(lin, 1.0);
  for (int t = 0; t < 5; ++t) {
    CHECK(v1.at(t, 0, 0) == doctest::Approx(1.0));
    CHECK(v1.at(t, 0, 1) == 0.0);
    CHECK(v1.at(t, 0, 2) == 0.0);
  }

  Rng rng(21);
  Tensor p({5, 3, 3});
  for (long i = 0; i < p.numel(); ++i) p[i] = rng.normal();
  const double fps = 12.5;
  Tensor v = compute_velocities(p, fps);
  for (int t = 1; t < 5; ++t)
    for (int j = 0; j < 3; ++j)
      for (int c = 0; c < 3; ++c)
        CHECK(v.at(t, j, c) == doctest::Approx((p.at(t, j, c) - p.at(t - 1, j, c)) * fps));
  for (int j = 0; j < 3; ++j)
    for (int c = 0; c < 3; ++c) CHECK(v.at(0, j, c) == v.at(1, j, c));

  Tensor single({1, 2, 3});
  single.fill(5.0);
  Tensor vs = compute_velocities(single, 20.0);
  for (long i = 0; i < vs.numel(); ++i) CHECK(vs[i] == 0.0);

  Tensor bad({2, 1, 3});
  bad[0] = std::nan("");
  CHECK_THROWS_AS(compute_velocities(bad, 20.0), DataError);
}

TEST_CASE("feet contact thresholding") {
  Tensor zeros({3, 4});
  Tensor c = compute_feet_contact(zeros, 0.5);
  for (long i = 0; i < c.numel(); ++i) CHECK(c[i] == 1.0);

  Tensor big = Tensor::full({3, 4}, 99.0);
  c = compute_feet_contact(big, 0.5);
  for (long i = 0; i < c.numel(); ++i) CHECK(c[i] == 0.0);

  Tensor mixed({1, 4}, {0.001, 0.5, 0.001, 0.5});
  c = compute_feet_contact(mixed, 0.01);
  CHECK(c[0] == 1.0);
  CHECK(c[1] == 0.0);
  CHECK(c[2] == 1.0);
  CHECK(c[3] == 0.0);

  CHECK_THROWS_AS(compute_feet_contact(zeros, 0.0), DataError);
}

TEST_CASE("synthetic dataset is deterministic and class-complete") {
  Dataset d1 = synth_dataset(7, 32, 4);
  Dataset d2 = synth_dataset(7, 32, 4);
  REQUIRE(d1.pairs.size() == 32);
  for (size_t i = 0; i < 32; ++i) {
    CHECK(d1.pairs[i].id == d2.pairs[i].id);
    CHECK(d1.pairs[i].texts == d2.pairs[i].texts);
    CHECK(d1.pairs[i].label == d2.pairs[i].label);
    CHECK(same_motion_bits(d1.pairs[i].motion, d2.pairs[i].motion));
  }

  std::set<std::string> labels;
  for (const auto& p : d1.pairs) labels.insert(p.label);
  CHECK(labels.size() == 4);  // exactly k classes

  Dataset other = synth_dataset(8, 32, 4);
  bool any_diff = false;
  for (size_t i = 0; i < 32; ++i)
    any_diff = any_diff || !same_motion_bits(d1.pairs[i].motion, other.pairs[i].motion);
  CHECK(any_diff);

  for (const auto& p : d1.pairs) {
    p.motion.validate();
    CHECK(p.motion.frames() >= 28);
    CHECK(p.motion.frames() <= 48);
    CHECK(!p.texts.empty());
  }
}

TEST_CASE("synthetic dataset split fractions") {
  Dataset ds = synth_dataset(3, 80, 4, 0.6, 0.1);
  int tr = 0, va = 0, te = 0;
  for (const auto& p : ds.pairs) {
    if (p.split == Split::Train) ++tr;
    if (p.split == Split::Val) ++va;
    if (p.split == Split::Test) ++te;
  }
  CHECK(tr == 48);
  CHECK(va == 8);
  CHECK(te == 24);

  // splits stay class balanced (archetypes rotate, ranges are contiguous)
  std::map<std::string, int> test_by_label;
  for (const auto& p : ds.pairs)
    if (p.split == Split::Test) ++test_by_label[p.label];
  CHECK(test_by_label.size() == 4);
  for (const auto& [_, n] : test_by_label) CHECK(n == 6);
}
