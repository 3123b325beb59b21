#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "motret/tensor.hpp"

namespace motret {

inline constexpr int kBodyJoints = 21;
inline constexpr int kBodyFeatDim = 12;  // 3 position + 6 rot6d + 3 velocity
inline constexpr int kRootDim = 4;       // y rotation velocity, xy linear velocity, height
inline constexpr int kFeetDim = 4;       // two contact flags per foot

enum class Source { A, B, Synthetic };
enum class Split { Train, Val, Test };

std::string to_string(Source s);
std::string to_string(Split s);
Source source_from_string(const std::string& s);
Split split_from_string(const std::string& s);

// Variable-length skeleton clip with heterogeneous per-frame tokens.
struct MotionSequence {
  Tensor body;  // [T, 21, 12]
  Tensor root;  // [T, 4]
  Tensor feet;  // [T, 4], entries in {0,1}
  double fps = 20.0;

  int frames() const { return body.ndim() == 3 ? body.dim(0) : 0; }
  void validate() const;
};

struct TextMotionPair {
  std::string id;
  std::vector<std::string> texts;
  MotionSequence motion;
  Source source = Source::Synthetic;
  Split split = Split::Train;
  std::string label;  // empty = unlabeled
};

struct Dataset {
  std::vector<TextMotionPair> pairs;
  std::vector<std::string> provenance;

  std::vector<int> split_indices(Split s) const;
};

// ---- binary motion tensors ----
void write_motion(const MotionSequence& m, const std::string& path);
MotionSequence read_motion(const std::string& path);

// ---- manifests (one structured record per line) ----
Dataset load_manifest(const std::string& path);
// Writes <dir>/manifest.jsonl plus <dir>/motions/<id>.motf for every pair.
void save_dataset(const Dataset& ds, const std::string& dir);

// ---- transforms ----
Dataset unify(const Dataset& a, const Dataset& b);
MotionSequence downsample(const MotionSequence& m, int max_frames);
Tensor compute_velocities(const Tensor& positions, double fps);            // [T,J,3] -> [T,J,3]
Tensor compute_feet_contact(const Tensor& feet_vel_mag, double threshold);  // [T,4] -> binary [T,4]

// Parametric clips + template captions grouped into archetypes; labels carry
// the archetype so motion-to-motion relevance is known. Split boundaries are
// contiguous index ranges; archetypes rotate, so splits stay class-balanced.
Dataset synth_dataset(uint64_t seed, int n_pairs, int n_archetypes, double train_frac = 1.0,
                      double val_frac = 0.0);

}  // namespace motret
