#include "motret/nn.hpp"

#include <cmath>

#include "motret/common.hpp"

namespace motret::nn {

using ad::Var;

Var ParamStore::add(const std::string& name, Tensor init) {
  check_data(index_.find(name) == index_.end(), "param store: duplicate name " + name);
  init.round_to_f32();
  Var v = Var::leaf(std::move(init));
  index_[name] = items_.size();
  items_.emplace_back(name, v);
  return v;
}

Var& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  check_data(it != index_.end(), "param store: unknown name " + name);
  return items_[it->second].second;
}

long ParamStore::value_count() const {
  long n = 0;
  for (const auto& [_, v] : items_) n += v.value().numel();
  return n;
}

void ParamStore::zero_grads() {
  for (auto& [_, v] : items_) v.zero_grad();
}

void ParamStore::round_to_f32() {
  for (auto& [_, v] : items_) v.mutable_value().round_to_f32();
}

Tensor xavier_init(int in_dim, int out_dim, Rng& rng) {
  const double stddev = std::sqrt(2.0 / (in_dim + out_dim));
  Tensor t({in_dim, out_dim});
  for (long i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, stddev);
  return t;
}

Tensor normal_init(std::vector<int> shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (long i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, stddev);
  return t;
}

Linear Linear::create(ParamStore& ps, const std::string& name, int in, int out, Rng& rng) {
  Linear l;
  l.W = ps.add(name + "/W", xavier_init(in, out, rng));
  l.b = ps.add(name + "/b", Tensor::zeros({out}));
  return l;
}

Var Linear::operator()(const Var& x) const { return ad::add_rowvec(ad::matmul(x, W), b); }

LayerNorm LayerNorm::create(ParamStore& ps, const std::string& name, int dim) {
  LayerNorm ln;
  ln.gain = ps.add(name + "/gain", Tensor::full({dim}, 1.0));
  ln.bias = ps.add(name + "/bias", Tensor::zeros({dim}));
  return ln;
}

TransformerLayer TransformerLayer::create(ParamStore& ps, const std::string& name, int dim,
                                          int heads, int ffn_dim, Rng& rng) {
  check_data(dim % heads == 0, "transformer layer: width must be divisible by heads");
  TransformerLayer t;
  t.ln1 = LayerNorm::create(ps, name + "/ln1", dim);
  t.q = Linear::create(ps, name + "/attn_q", dim, dim, rng);
  t.k = Linear::create(ps, name + "/attn_k", dim, dim, rng);
  t.v = Linear::create(ps, name + "/attn_v", dim, dim, rng);
  t.o = Linear::create(ps, name + "/attn_o", dim, dim, rng);
  t.ln2 = LayerNorm::create(ps, name + "/ln2", dim);
  t.ff1 = Linear::create(ps, name + "/ffn_1", dim, ffn_dim, rng);
  t.ff2 = Linear::create(ps, name + "/ffn_2", ffn_dim, dim, rng);
  t.heads = heads;
  return t;
}

Var TransformerLayer::forward(const Var& x, const std::vector<uint8_t>* keep_keys,
                              const std::vector<uint8_t>* keep_batch, double dropout_rate,
                              Rng* drop_rng) const {
  const int dim = x.value().dim(2);
  const int dh = dim / heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  Var h = ln1(x);
  Var qh = ad::heads_split(q(h), heads);
  Var kh = ad::heads_split(k(h), heads);
  Var vh = ad::heads_split(v(h), heads);
  Var scores = ad::scale(ad::bmm(qh, ad::transpose2(kh)), inv_sqrt_dh);
  if (keep_keys != nullptr) scores = ad::add_key_mask(scores, *keep_keys);
  Var ctx = ad::heads_merge(ad::bmm(ad::softmax_lastdim(scores), vh), heads);
  Var attn_out = o(ctx);
  if (dropout_rate > 0.0 && drop_rng != nullptr) attn_out = ad::dropout(attn_out, dropout_rate, *drop_rng);
  Var x1 = ad::add(x, attn_out);

  Var f = ff2(ad::gelu(ff1(ln2(x1))));
  if (dropout_rate > 0.0 && drop_rng != nullptr) f = ad::dropout(f, dropout_rate, *drop_rng);
  Var x2 = ad::add(x1, f);

  if (keep_keys != nullptr) x2 = ad::mul_mask_dim1(x2, *keep_keys);
  if (keep_batch != nullptr) x2 = ad::mul_mask_dim0(x2, *keep_batch);
  return x2;
}

Tensor sinusoidal_positions(int len, int dim) {
  Tensor pe({len, dim});
  for (int t = 0; t < len; ++t) {
    for (int d = 0; d < dim; d += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(d) / dim);
      pe.at(t, d) = std::sin(t * freq);
      if (d + 1 < dim) pe.at(t, d + 1) = std::cos(t * freq);
    }
  }
  return pe;
}

}  // namespace motret::nn
