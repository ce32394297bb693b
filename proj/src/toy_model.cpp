#include "realmerge/toy_model.hpp"

#include "realmerge/errors.hpp"
#include "realmerge/rng.hpp"

#include <cmath>

namespace realmerge::toy {

TensorArchive init_toy_model(const ModelShape & shape, uint64_t seed) {
    if (shape.input < 1 || shape.hidden < 1 || shape.feature < 1) {
        throw Error(errc::bad_argument, "toy model dimensions must be >= 1");
    }
    Rng rng(seed);
    auto weights = [&](size_t rows, size_t cols) {
        const double scale = 0.3 / std::sqrt((double) cols);
        return rng.gaussian_vec(rows * cols, scale);
    };
    TensorArchive a;
    // fill order is fixed so the seed determines every value regardless of
    // archive iteration order
    a.set_tensor("mlp.weight", {shape.hidden, shape.input}, Role::mlp, weights(shape.hidden, shape.input));
    a.set_tensor("mlp.bias", {shape.hidden}, Role::mlp, std::vector<double>(shape.hidden, 0.0));
    a.set_tensor("attn.weight", {shape.feature, shape.hidden}, Role::attention, weights(shape.feature, shape.hidden));
    a.set_tensor("attn.bias", {shape.feature}, Role::attention, std::vector<double>(shape.feature, 0.0));
    a.set_tensor("head.weight", {1, shape.feature}, Role::head, weights(1, shape.feature));
    a.set_tensor("head.bias", {1}, Role::head, std::vector<double>(1, 0.0));
    return a;
}

ModelShape model_shape(const TensorArchive & model) {
    const char * names[] = {"mlp.weight", "mlp.bias", "attn.weight", "attn.bias", "head.weight", "head.bias"};
    for (const char * n : names) {
        if (!model.has(n)) {
            throw Error(errc::layout_mismatch, std::string("toy checkpoint is missing tensor '") + n + "'");
        }
    }
    const TensorEntry & w1 = model.at("mlp.weight");
    const TensorEntry & w2 = model.at("attn.weight");
    const TensorEntry & wh = model.at("head.weight");
    if (w1.shape.size() != 2 || w2.shape.size() != 2 || wh.shape.size() != 2 || wh.shape[0] != 1) {
        throw Error(errc::layout_mismatch, "toy checkpoint weights have unexpected ranks");
    }
    ModelShape s;
    s.hidden = w1.shape[0];
    s.input = w1.shape[1];
    s.feature = w2.shape[0];
    if (w2.shape[1] != s.hidden || wh.shape[1] != s.feature ||
        model.at("mlp.bias").shape != std::vector<size_t>{s.hidden} ||
        model.at("attn.bias").shape != std::vector<size_t>{s.feature} ||
        model.at("head.bias").shape != std::vector<size_t>{1}) {
        throw Error(errc::layout_mismatch, "toy checkpoint tensor shapes are inconsistent");
    }
    return s;
}

linalg::Vec toy_features(const TensorArchive & model, const linalg::Vec & x) {
    const ModelShape s = model_shape(model);
    if (x.size() != s.input) {
        throw Error(errc::shape_mismatch, "input size does not match the model's input dimension");
    }
    const auto & w1 = model.at("mlp.weight").data;
    const auto & b1 = model.at("mlp.bias").data;
    const auto & w2 = model.at("attn.weight").data;
    const auto & b2 = model.at("attn.bias").data;

    linalg::Vec z(s.hidden);
    for (size_t j = 0; j < s.hidden; j++) {
        double acc = b1[j];
        for (size_t c = 0; c < s.input; c++) {
            acc += w1[j * s.input + c] * x[c];
        }
        z[j] = std::tanh(acc);
    }
    linalg::Vec f(s.feature);
    for (size_t j = 0; j < s.feature; j++) {
        double acc = b2[j];
        for (size_t c = 0; c < s.hidden; c++) {
            acc += w2[j * s.hidden + c] * z[c];
        }
        f[j] = acc;
    }
    return f;
}

double toy_logit(const TensorArchive & model, const linalg::Vec & x) {
    const linalg::Vec f = toy_features(model, x);
    const auto & wh = model.at("head.weight").data;
    const auto & bh = model.at("head.bias").data;
    double s = bh[0];
    for (size_t c = 0; c < f.size(); c++) {
        s += wh[c] * f[c];
    }
    return s;
}

} // namespace realmerge::toy
