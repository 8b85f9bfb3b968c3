#include "emag/errors.hpp"
#include "emag/model.hpp"

#include <cmath>

namespace emag::model {

TensorD& ParameterSet::add(const std::string& name, TensorD tensor, bool decay) {
  for (const auto& p : params_) {
    if (p.name == name) throw ContractError("duplicate parameter name " + name);
  }
  tensor.set_requires_grad(true);
  params_.push_back({name, std::move(tensor), decay});
  return params_.back().tensor;
}

std::size_t ParameterSet::count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.tensor.size());
  return n;
}

const NamedParameter& ParameterSet::find(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p;
  }
  throw ContractError("no parameter named " + name);
}

Linear::Linear(ParameterSet& params, const std::string& name, int in, int out, Rng& rng) {
  const double limit = std::sqrt(6.0 / (in + out));
  std::uniform_real_distribution<double> u(-limit, limit);
  TensorD::Array w(static_cast<ad::Index>(in) * out);
  for (auto& v : w) v = u(rng);
  w_ = params.add(name + ".weight", TensorD({in, out}, std::move(w)), true);
  b_ = params.add(name + ".bias", TensorD::zeros({out}), false);
}

TensorD Linear::operator()(const TensorD& x) const { return ad::add(ad::matmul(x, w_), b_); }

LayerNorm::LayerNorm(ParameterSet& params, const std::string& name, int dim) {
  gain_ = params.add(name + ".gain", TensorD::full({dim}, 1.0), false);
  bias_ = params.add(name + ".bias", TensorD::zeros({dim}), false);
}

TensorD LayerNorm::operator()(const TensorD& x) const { return ad::layer_norm(x, gain_, bias_); }

MultiHeadAttention::MultiHeadAttention(ParameterSet& params, const std::string& name, int dim, int heads,
                                       Rng& rng)
    : q_(params, name + ".q", dim, dim, rng),
      k_(params, name + ".k", dim, dim, rng),
      v_(params, name + ".v", dim, dim, rng),
      o_(params, name + ".out", dim, dim, rng),
      heads_(heads) {
  if (heads < 1 || dim % heads != 0) throw ValidationError("attention: dim must be divisible by heads");
}

TensorD MultiHeadAttention::operator()(const TensorD& query, const TensorD& memory, const KeyMask* key_mask,
                                       bool causal) const {
  const ad::Index B = query.dim(0), Lq = query.dim(1), Lk = memory.dim(1), C = query.dim(2);
  const ad::Index H = heads_, dh = C / H;
  auto split = [&](const TensorD& x, ad::Index len) {
    return ad::permute(ad::reshape(x, {B, len, H, dh}), {0, 2, 1, 3});
  };
  const TensorD q = split(q_(query), Lq);
  const TensorD k = split(k_(memory), Lk);
  const TensorD v = split(v_(memory), Lk);
  TensorD scores = ad::scale(ad::bmm(q, ad::transpose(k)), 1.0 / std::sqrt(static_cast<double>(dh)));
  if (key_mask || causal) {
    if (key_mask && static_cast<ad::Index>(key_mask->size()) != B * Lk) {
      throw DimensionError("attention: key mask size does not match the memory");
    }
    ad::Mask mask(static_cast<std::size_t>(B * H * Lq * Lk), 0);
    bool any = false;
    for (ad::Index b = 0; b < B; ++b)
      for (ad::Index h = 0; h < H; ++h)
        for (ad::Index i = 0; i < Lq; ++i)
          for (ad::Index j = 0; j < Lk; ++j) {
            const bool off = (key_mask && (*key_mask)[b * Lk + j]) || (causal && j > i);
            if (off) {
              mask[((b * H + h) * Lq + i) * Lk + j] = 1;
              any = true;
            }
          }
    if (any) scores = ad::masked_fill(scores, mask, -1e30);
  }
  const TensorD attended = ad::bmm(ad::softmax(scores), v);
  return o_(ad::reshape(ad::permute(attended, {0, 2, 1, 3}), {B, Lq, C}));
}

FeedForward::FeedForward(ParameterSet& params, const std::string& name, int dim, int hidden, Rng& rng)
    : in_(params, name + ".in", dim, hidden, rng), out_(params, name + ".out", hidden, dim, rng) {}

TensorD FeedForward::operator()(const TensorD& x) const { return out_(ad::relu(in_(x))); }

MlpHead::MlpHead(ParameterSet& params, const std::string& name, int dim, int out, Rng& rng)
    : in_(params, name + ".hidden", dim, dim, rng), out_(params, name + ".out", dim, out, rng) {}

TensorD MlpHead::operator()(const TensorD& x, double dropout, bool train, Rng& rng) const {
  return out_(ad::dropout(ad::relu(in_(x)), dropout, train, rng));
}

TensorD::Array sinusoid(double t, int dim) {
  TensorD::Array out(dim);
  for (int d = 0; d < dim; ++d) {
    const int i = d / 2;
    const double angle = t / std::pow(10000.0, 2.0 * i / dim);
    out[d] = d % 2 == 0 ? std::sin(angle) : std::cos(angle);
  }
  return out;
}

}  // namespace emag::model
