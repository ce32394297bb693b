#pragma once

// Tiny 2-layer detector used by the toy pipeline and the similarity probe.
// Layout (roles chosen so merges exercise every slice kind):
//   mlp.weight  [hidden, input]   mlp
//   mlp.bias    [hidden]          mlp
//   attn.weight [feature, hidden] attention
//   attn.bias   [feature]         attention
//   head.weight [1, feature]      head
//   head.bias   [1]               head
// Forward: z = tanh(W1 x + b1); f = W2 z + b2 (pre-logit feature); s = w f + b.

#include "realmerge/archive.hpp"
#include "realmerge/linalg.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace realmerge::toy {

struct Sample {
    linalg::Vec x;
    int label = 0; // 0 real, 1 fake
    std::string family;
};

struct Dataset {
    std::vector<Sample> samples;
    size_t input_dim = 0;
};

struct ModelShape {
    size_t input = 32;
    size_t hidden = 16;
    size_t feature = 8;
};

// seeded gaussian init, weights scaled by 0.3/sqrt(fan_in), biases zero;
// the seed alone determines every parameter bit
TensorArchive init_toy_model(const ModelShape & shape, uint64_t seed);

// recovers the shape from tensor dims; throws layout_mismatch when the
// archive is not a toy checkpoint
ModelShape model_shape(const TensorArchive & model);

// pre-logit feature f(x)
linalg::Vec toy_features(const TensorArchive & model, const linalg::Vec & x);

// scalar score s(x) = head . f(x) + bias
double toy_logit(const TensorArchive & model, const linalg::Vec & x);

} // namespace realmerge::toy
