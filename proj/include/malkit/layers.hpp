#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "malkit/autograd.hpp"
#include "malkit/params.hpp"

namespace malkit::nn {

struct DenseLayer {
  std::string weight;
  std::string bias;
  std::size_t in = 0;
  std::size_t out = 0;
};

inline DenseLayer add_dense(ParamStore& store, const std::string& prefix,
                            const std::string& group, std::size_t in,
                            std::size_t out) {
  DenseLayer layer{prefix + ".w", prefix + ".b", in, out};
  store.add(layer.weight, group, {in, out}, Init::kGlorotUniform);
  store.add(layer.bias, group, {out}, Init::kZeros);
  return layer;
}

inline Var apply(Tape& tape, const ParamStore& store, const DenseLayer& layer,
                 Var x, Activation act) {
  return dense_forward(x, tape.param(store.at(layer.weight)),
                       tape.param(store.at(layer.bias)), act);
}

/// Stack of dense layers sharing one hidden activation.
struct Mlp {
  std::vector<DenseLayer> layers;
  Activation activation = Activation::kRelu;

  std::size_t out_width(std::size_t in) const {
    return layers.empty() ? in : layers.back().out;
  }
};

inline Mlp add_mlp(ParamStore& store, const std::string& prefix,
                   const std::string& group, std::size_t in,
                   const std::vector<std::size_t>& widths, Activation act) {
  Mlp mlp;
  mlp.activation = act;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    mlp.layers.push_back(
        add_dense(store, prefix + ".l" + std::to_string(i), group, in, widths[i]));
    in = widths[i];
  }
  return mlp;
}

inline Var apply(Tape& tape, const ParamStore& store, const Mlp& mlp, Var x) {
  for (const auto& layer : mlp.layers) x = apply(tape, store, layer, x, mlp.activation);
  return x;
}

/// Scoring network of target attention: a two-layer feed-forward net over
/// (query, key, query*key, query-key).
struct AttentionNet {
  DenseLayer hidden;
  DenseLayer score;
  std::size_t dim = 0;
};

inline AttentionNet add_attention(ParamStore& store, const std::string& prefix,
                                  const std::string& group, std::size_t dim,
                                  std::size_t hidden) {
  return {add_dense(store, prefix + ".hidden", group, 4 * dim, hidden),
          add_dense(store, prefix + ".score", group, hidden, 1), dim};
}

/// Batched target attention. `query` is [n x d]; `sequence` holds n blocks of
/// `length` rows each ([n*length x d]); `mask` flags valid rows. A block with
/// no valid row (empty behavior sequence) yields a zero vector.
inline Var target_attention(Tape& tape, const ParamStore& store,
                            const AttentionNet& net, Var query, Var sequence,
                            std::span<const std::uint8_t> mask,
                            std::size_t length) {
  const std::size_t n = query.rows();
  const std::size_t d = query.cols();
  if (d != net.dim || (length > 0 && sequence.cols() != d)) {
    throw DimensionError("target_attention: query " + to_string(query.value().shape()) +
                         ", sequence " + to_string(sequence.value().shape()) +
                         ", attention dim " + std::to_string(net.dim));
  }
  if (length == 0) return tape.constant(Tensor({n, d}));
  if (sequence.rows() != n * length) {
    throw DimensionError("target_attention: sequence " + to_string(sequence.value().shape()) +
                         " is not " + std::to_string(n) + " blocks of " + std::to_string(length));
  }
  Var q = repeat_rows(query, length);
  Var features = concat_cols({q, sequence, mul(q, sequence), sub(q, sequence)});
  Var hidden = apply(tape, store, net.hidden, features, Activation::kSigmoid);
  Var scores = apply(tape, store, net.score, hidden, Activation::kIdentity);
  return attention_pool(scores, sequence, mask, length);
}

// Single query against an L x d sequence; returns [1 x d].
inline Var target_attention(Tape& tape, const ParamStore& store,
                            const AttentionNet& net, Var query, Var sequence,
                            std::span<const std::uint8_t> mask) {
  if (mask.size() != sequence.rows() && sequence.rows() != 0) {
    throw DimensionError("target_attention: mask length " + std::to_string(mask.size()) +
                         " for sequence " + to_string(sequence.value().shape()));
  }
  return target_attention(tape, store, net, query, sequence, mask, mask.size());
}

}  // namespace malkit::nn
