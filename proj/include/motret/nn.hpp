#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "motret/autodiff.hpp"

namespace motret::nn {

// Named trainable tensors in registration order. Registration order is the
// serialization order, so identical construction code means identical
// checkpoint layout.
class ParamStore {
 public:
  ad::Var add(const std::string& name, Tensor init);
  ad::Var& get(const std::string& name);
  const std::vector<std::pair<std::string, ad::Var>>& items() const { return items_; }
  size_t size() const { return items_.size(); }
  long value_count() const;
  void zero_grads();
  // Snap all parameters to the binary32 grid (checkpoints store f32).
  void round_to_f32();

 private:
  std::vector<std::pair<std::string, ad::Var>> items_;
  std::unordered_map<std::string, size_t> index_;
};

Tensor xavier_init(int in_dim, int out_dim, Rng& rng);
Tensor normal_init(std::vector<int> shape, double stddev, Rng& rng);

struct Linear {
  ad::Var W;  // [in, out]
  ad::Var b;  // [out]
  static Linear create(ParamStore& ps, const std::string& name, int in, int out, Rng& rng);
  ad::Var operator()(const ad::Var& x) const;
};

struct LayerNorm {
  ad::Var gain, bias;
  static LayerNorm create(ParamStore& ps, const std::string& name, int dim);
  ad::Var operator()(const ad::Var& x) const { return ad::layer_norm(x, gain, bias); }
};

// Pre-norm transformer block: x + attn(LN(x)), then x + ffn(LN(x)).
// keep_keys masks sequence positions (shared across the batch dim);
// keep_batch zeroes whole batch slices. Either may be null.
struct TransformerLayer {
  LayerNorm ln1, ln2;
  Linear q, k, v, o, ff1, ff2;
  int heads = 1;

  static TransformerLayer create(ParamStore& ps, const std::string& name, int dim, int heads,
                                 int ffn_dim, Rng& rng);
  ad::Var forward(const ad::Var& x, const std::vector<uint8_t>* keep_keys,
                  const std::vector<uint8_t>* keep_batch, double dropout_rate, Rng* drop_rng) const;
  ad::Var operator()(const ad::Var& x) const { return forward(x, nullptr, nullptr, 0.0, nullptr); }
};

// Fixed sin/cos table: row t, even columns sin(t/10000^(d/dim)), odd cos.
Tensor sinusoidal_positions(int len, int dim);

}  // namespace motret::nn
