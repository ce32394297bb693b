#include "realmerge/toy.hpp"

#include "realmerge/errors.hpp"
#include "realmerge/rng.hpp"
#include "realmerge/threading.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace realmerge::toy {

namespace fs = std::filesystem;

std::vector<ToyGeneratorFamily> make_families(size_t count, size_t input_dim, double cue_strength,
                                              double noise_scale, uint64_t seed, double stable_scale,
                                              double idio_scale) {
    if (count < 1 || input_dim < 2) {
        throw Error(errc::bad_argument, "make_families: need count >= 1 and input_dim >= 2");
    }
    if (!(cue_strength >= 0.0) || !(noise_scale >= 0.0)) {
        throw Error(errc::bad_argument, "make_families: cue_strength and noise_scale must be >= 0");
    }
    if (!(stable_scale >= 0.0) || !(idio_scale >= 0.0)) {
        throw Error(errc::bad_argument, "make_families: stable_scale and idio_scale must be >= 0");
    }
    Rng rng(seed);
    const linalg::Vec real_mean = rng.gaussian_vec(input_dim, 1.0);

    // Family cues share one artifact axis on top of family-specific parts:
    // generators leave partially common traces at different strengths. The
    // family-specific parts sit at the vertices of a regular simplex in the
    // complement of the shared axis (pairwise cos -1/(count-1)), which lets
    // the shared trace carry most of the cue energy while distinct cues stay
    // decorrelated: pairwise cue |cos| <= 0.5 holds with margin, enforced below.
    if (count + 1 > input_dim) {
        throw Error(errc::degenerate_input,
                    "make_families: could not place another cue direction with pairwise |cos| <= 0.5");
    }
    const double shared_e = count > 1 ? (0.5 * (double) (count - 1) + 1.0) / (double) count - 0.02 : 0.6;
    const double shared_w = std::sqrt(shared_e);
    const double idio_w = std::sqrt(1.0 - shared_e);
    const linalg::Vec shared_axis = rng.unit_vec(input_dim);

    // orthonormal frame spanning `count` directions orthogonal to the shared axis
    std::vector<linalg::Vec> frame;
    for (size_t t = 0; t < count; t++) {
        linalg::Vec q;
        double q_norm2 = 0.0;
        for (size_t attempt = 0; attempt < 64 && q_norm2 <= 1e-12; attempt++) {
            q = rng.gaussian_vec(input_dim, 1.0);
            double along = 0.0;
            for (size_t jx = 0; jx < input_dim; jx++) { along += q[jx] * shared_axis[jx]; }
            for (size_t jx = 0; jx < input_dim; jx++) { q[jx] -= along * shared_axis[jx]; }
            for (const linalg::Vec & prev : frame) {
                double c = 0.0;
                for (size_t jx = 0; jx < input_dim; jx++) { c += q[jx] * prev[jx]; }
                for (size_t jx = 0; jx < input_dim; jx++) { q[jx] -= c * prev[jx]; }
            }
            q_norm2 = 0.0;
            for (size_t jx = 0; jx < input_dim; jx++) { q_norm2 += q[jx] * q[jx]; }
        }
        if (q_norm2 <= 1e-12) {
            throw Error(errc::degenerate_input,
                        "make_families: could not place another cue direction with pairwise |cos| <= 0.5");
        }
        const double inv = 1.0 / std::sqrt(q_norm2);
        for (size_t jx = 0; jx < input_dim; jx++) { q[jx] *= inv; }
        frame.push_back(std::move(q));
    }

    std::vector<ToyGeneratorFamily> out;
    std::vector<linalg::Vec> cues;
    for (size_t i = 0; i < count; i++) {
        // simplex vertex i in frame coordinates: normalize(e_i - ones/count)
        linalg::Vec cue(input_dim, 0.0);
        if (count == 1) {
            cue = frame[0];
        } else {
            const double off = -1.0 / (double) count;
            const double inv = 1.0 / std::sqrt(1.0 - 1.0 / (double) count);
            for (size_t t = 0; t < count; t++) {
                const double coord = ((t == i ? 1.0 : 0.0) + off) * inv;
                for (size_t jx = 0; jx < input_dim; jx++) {
                    cue[jx] += coord * frame[t][jx];
                }
            }
        }
        for (size_t jx = 0; jx < input_dim; jx++) {
            cue[jx] = shared_w * shared_axis[jx] + idio_w * cue[jx];
        }
        for (const linalg::Vec & prev : cues) {
            double c = 0.0;
            for (size_t jx = 0; jx < input_dim; jx++) { c += cue[jx] * prev[jx]; }
            if (std::abs(c) > 0.5 + 1e-9) {
                throw Error(errc::degenerate_input,
                            "make_families: could not place another cue direction with pairwise |cos| <= 0.5");
            }
        }
        cues.push_back(cue);

        ToyGeneratorFamily fam;
        std::ostringstream id;
        id << "fam" << std::setw(2) << std::setfill('0') << i;
        fam.family_id = id.str();
        fam.real_mean = real_mean;
        fam.cue_dir = std::move(cue);
        fam.cue_strength = cue_strength;
        fam.noise_scale = noise_scale;
        fam.stable_axis = shared_axis;
        fam.stable_scale = stable_scale;
        fam.idio_scale = idio_scale;
        fam.seed = rng.next_u64();
        out.push_back(std::move(fam));
    }
    return out;
}

Dataset gen_toy_data(const ToyGeneratorFamily & family, size_t n_per_class, uint64_t split_seed) {
    if (n_per_class < 1) {
        throw Error(errc::bad_argument, "gen_toy_data: need at least one sample per class");
    }
    const size_t p = family.real_mean.size();
    if (family.cue_dir.size() != p) {
        throw Error(errc::shape_mismatch, "gen_toy_data: cue direction does not match the real mean");
    }
    if (!family.stable_axis.empty() && family.stable_axis.size() != p) {
        throw Error(errc::shape_mismatch, "gen_toy_data: stable axis does not match the real mean");
    }
    Rng rng(split_seed, family.seed);

    // axis of the cue's family-specific part: the cue with its stable-axis
    // component removed. Real noise is shrunk along it the same way it is
    // shrunk along the stable axis, and the two axes are orthogonal by
    // construction so the shrinks compose independently
    linalg::Vec idio_axis;
    if (!family.stable_axis.empty() && family.idio_scale != 1.0) {
        idio_axis = family.cue_dir;
        double along = 0.0;
        for (size_t jx = 0; jx < p; jx++) { along += idio_axis[jx] * family.stable_axis[jx]; }
        for (size_t jx = 0; jx < p; jx++) { idio_axis[jx] -= along * family.stable_axis[jx]; }
        double norm2 = 0.0;
        for (size_t jx = 0; jx < p; jx++) { norm2 += idio_axis[jx] * idio_axis[jx]; }
        if (norm2 > 1e-12) {
            const double inv = 1.0 / std::sqrt(norm2);
            for (size_t jx = 0; jx < p; jx++) { idio_axis[jx] *= inv; }
        } else {
            idio_axis.clear(); // cue parallel to the stable axis: nothing family-specific to shrink
        }
    }

    Dataset data;
    data.input_dim = p;
    data.samples.reserve(2 * n_per_class);
    for (int label = 0; label <= 1; label++) {
        for (size_t s = 0; s < n_per_class; s++) {
            Sample smp;
            smp.label = label;
            smp.family = family.family_id;
            smp.x.resize(p);
            linalg::Vec noise = rng.gaussian_vec(p, family.noise_scale);
            if (!family.stable_axis.empty() && family.stable_scale != 1.0) {
                // shrink the noise along the stable axis: both classes share the
                // covariance, so the fake shift along that axis stands out
                double along = 0.0;
                for (size_t jx = 0; jx < p; jx++) {
                    along += noise[jx] * family.stable_axis[jx];
                }
                const double adj = (family.stable_scale - 1.0) * along;
                for (size_t jx = 0; jx < p; jx++) {
                    noise[jx] += adj * family.stable_axis[jx];
                }
            }
            if (!idio_axis.empty()) {
                double along = 0.0;
                for (size_t jx = 0; jx < p; jx++) {
                    along += noise[jx] * idio_axis[jx];
                }
                const double adj = (family.idio_scale - 1.0) * along;
                for (size_t jx = 0; jx < p; jx++) {
                    noise[jx] += adj * idio_axis[jx];
                }
            }
            for (size_t jx = 0; jx < p; jx++) {
                smp.x[jx] = family.real_mean[jx] + noise[jx] +
                            (label == 1 ? family.cue_strength * family.cue_dir[jx] : 0.0);
            }
            data.samples.push_back(std::move(smp));
        }
    }
    return data;
}

std::pair<Dataset, Dataset> split_pool(const Dataset & pool, size_t n_train_per_class) {
    Dataset train, test;
    train.input_dim = pool.input_dim;
    test.input_dim = pool.input_dim;
    size_t seen[2] = {0, 0};
    for (const Sample & s : pool.samples) {
        if (s.label != 0 && s.label != 1) {
            throw Error(errc::bad_argument, "split_pool: labels must be 0 or 1");
        }
        if (seen[s.label] < n_train_per_class) {
            train.samples.push_back(s);
            seen[s.label]++;
        } else {
            test.samples.push_back(s);
        }
    }
    if (seen[0] < n_train_per_class || seen[1] < n_train_per_class) {
        throw Error(errc::bad_argument, "split_pool: pool has fewer samples per class than requested for training");
    }
    return {std::move(train), std::move(test)};
}

namespace {

// flat working copy of the toy checkpoint for the training loop
struct ToyParams {
    size_t p = 0, h = 0, d = 0;
    linalg::Vec w1, b1, w2, b2, wh;
    double bh = 0.0;

    static ToyParams from_archive(const TensorArchive & a) {
        const ModelShape s = model_shape(a);
        ToyParams tp;
        tp.p = s.input;
        tp.h = s.hidden;
        tp.d = s.feature;
        tp.w1 = a.at("mlp.weight").data;
        tp.b1 = a.at("mlp.bias").data;
        tp.w2 = a.at("attn.weight").data;
        tp.b2 = a.at("attn.bias").data;
        tp.wh = a.at("head.weight").data;
        tp.bh = a.at("head.bias").data[0];
        return tp;
    }

    void store(TensorArchive & a) const {
        a.set_tensor("mlp.weight", {h, p}, Role::mlp, w1);
        a.set_tensor("mlp.bias", {h}, Role::mlp, b1);
        a.set_tensor("attn.weight", {d, h}, Role::attention, w2);
        a.set_tensor("attn.bias", {d}, Role::attention, b2);
        a.set_tensor("head.weight", {1, d}, Role::head, wh);
        a.set_tensor("head.bias", {1}, Role::head, linalg::Vec{bh});
    }
};

struct GradientPass {
    double loss = 0.0;
    ToyParams grad;
};

// mean logistic loss and its gradient over the whole batch
GradientPass full_batch_pass(const ToyParams & tp, const Dataset & data) {
    GradientPass out;
    out.grad.p = tp.p;
    out.grad.h = tp.h;
    out.grad.d = tp.d;
    out.grad.w1.assign(tp.w1.size(), 0.0);
    out.grad.b1.assign(tp.b1.size(), 0.0);
    out.grad.w2.assign(tp.w2.size(), 0.0);
    out.grad.b2.assign(tp.b2.size(), 0.0);
    out.grad.wh.assign(tp.wh.size(), 0.0);
    out.grad.bh = 0.0;

    linalg::Vec z(tp.h), f(tp.d), df(tp.d), dz(tp.h);
    for (const Sample & smp : data.samples) {
        for (size_t j = 0; j < tp.h; j++) {
            double acc = tp.b1[j];
            for (size_t c = 0; c < tp.p; c++) {
                acc += tp.w1[j * tp.p + c] * smp.x[c];
            }
            z[j] = std::tanh(acc);
        }
        for (size_t j = 0; j < tp.d; j++) {
            double acc = tp.b2[j];
            for (size_t c = 0; c < tp.h; c++) {
                acc += tp.w2[j * tp.h + c] * z[c];
            }
            f[j] = acc;
        }
        double s = tp.bh;
        for (size_t c = 0; c < tp.d; c++) {
            s += tp.wh[c] * f[c];
        }

        const double y = smp.label == 1 ? 1.0 : -1.0;
        const double m = y * s;
        // log(1 + exp(-m)) without overflow for very negative margins
        out.loss += m > 0.0 ? std::log1p(std::exp(-m)) : -m + std::log1p(std::exp(m));
        const double ds = -y / (1.0 + std::exp(m));

        for (size_t c = 0; c < tp.d; c++) {
            out.grad.wh[c] += ds * f[c];
            df[c] = ds * tp.wh[c];
        }
        out.grad.bh += ds;
        for (size_t c = 0; c < tp.h; c++) {
            dz[c] = 0.0;
        }
        for (size_t j = 0; j < tp.d; j++) {
            for (size_t c = 0; c < tp.h; c++) {
                out.grad.w2[j * tp.h + c] += df[j] * z[c];
                dz[c] += df[j] * tp.w2[j * tp.h + c];
            }
            out.grad.b2[j] += df[j];
        }
        for (size_t j = 0; j < tp.h; j++) {
            const double dpre = dz[j] * (1.0 - z[j] * z[j]);
            for (size_t c = 0; c < tp.p; c++) {
                out.grad.w1[j * tp.p + c] += dpre * smp.x[c];
            }
            out.grad.b1[j] += dpre;
        }
    }

    const double inv = 1.0 / (double) data.samples.size();
    out.loss *= inv;
    for (double & g : out.grad.w1) {
        g *= inv;
    }
    for (double & g : out.grad.b1) {
        g *= inv;
    }
    for (double & g : out.grad.w2) {
        g *= inv;
    }
    for (double & g : out.grad.b2) {
        g *= inv;
    }
    for (double & g : out.grad.wh) {
        g *= inv;
    }
    out.grad.bh *= inv;
    return out;
}

void apply_step(ToyParams & tp, const ToyParams & grad, double step) {
    for (size_t i = 0; i < tp.w1.size(); i++) {
        tp.w1[i] -= step * grad.w1[i];
    }
    for (size_t i = 0; i < tp.b1.size(); i++) {
        tp.b1[i] -= step * grad.b1[i];
    }
    for (size_t i = 0; i < tp.w2.size(); i++) {
        tp.w2[i] -= step * grad.w2[i];
    }
    for (size_t i = 0; i < tp.b2.size(); i++) {
        tp.b2[i] -= step * grad.b2[i];
    }
    for (size_t i = 0; i < tp.wh.size(); i++) {
        tp.wh[i] -= step * grad.wh[i];
    }
    tp.bh -= step * grad.bh;
}

} // namespace

ToySpecialist train_specialist(const Dataset & train, size_t epochs, double step_size, uint64_t seed,
                               const ModelShape & shape, double decay, double head_decay) {
    if (train.samples.empty()) {
        throw Error(errc::bad_argument, "train_specialist: empty dataset");
    }
    if (!(decay >= 0.0) || !(head_decay >= 0.0)) {
        throw Error(errc::bad_argument, "train_specialist: decay must be >= 0");
    }
    bool has[2] = {false, false};
    for (const Sample & s : train.samples) {
        if (s.label != 0 && s.label != 1) {
            throw Error(errc::bad_argument, "train_specialist: labels must be 0 or 1");
        }
        has[s.label] = true;
        if (s.x.size() != train.input_dim || s.x.size() != shape.input) {
            throw Error(errc::shape_mismatch, "train_specialist: sample dimension does not match the model input");
        }
    }
    if (!has[0] || !has[1]) {
        throw Error(errc::bad_argument, "train_specialist: both classes must be present");
    }
    if (!(step_size > 0.0)) {
        throw Error(errc::bad_argument, "train_specialist: step size must be > 0");
    }

    ToySpecialist spec;
    spec.family_id = train.samples[0].family;
    for (const Sample & s : train.samples) {
        if (s.family != spec.family_id) {
            spec.family_id.clear();
            break;
        }
    }

    spec.checkpoint = init_toy_model(shape, seed);
    ToyParams tp = ToyParams::from_archive(spec.checkpoint);
    const ToyParams tp0 = tp;

    // proximal-gradient training: a plain gradient step on the data loss, then
    // an implicit shrink toward the init, w <- w0 + (w - w0)/(1 + step*rate),
    // which is stable for any rate. The recorded loss is the composite
    // objective data + rate/2 * ||theta - theta0||^2 per group. The pull gives
    // the task-vector norm a signal-dependent equilibrium instead of unbounded
    // logit growth, and a hard head rate keeps all heads near the shared init.
    auto dist2 = [](const linalg::Vec & w, const linalg::Vec & w0) {
        double acc = 0.0;
        for (size_t i = 0; i < w.size(); i++) {
            acc += (w[i] - w0[i]) * (w[i] - w0[i]);
        }
        return acc;
    };
    auto composite_loss = [&](double data_loss) {
        const double body2 = dist2(tp.w1, tp0.w1) + dist2(tp.b1, tp0.b1) + dist2(tp.w2, tp0.w2) +
                             dist2(tp.b2, tp0.b2);
        const double head2 = dist2(tp.wh, tp0.wh) + (tp.bh - tp0.bh) * (tp.bh - tp0.bh);
        return data_loss + 0.5 * decay * body2 + 0.5 * head_decay * head2;
    };
    auto shrink = [&]() {
        auto pull = [&](linalg::Vec & w, const linalg::Vec & w0, double rate) {
            if (rate <= 0.0) {
                return;
            }
            const double keep = 1.0 / (1.0 + step_size * rate);
            for (size_t i = 0; i < w.size(); i++) {
                w[i] = w0[i] + (w[i] - w0[i]) * keep;
            }
        };
        pull(tp.w1, tp0.w1, decay);
        pull(tp.b1, tp0.b1, decay);
        pull(tp.w2, tp0.w2, decay);
        pull(tp.b2, tp0.b2, decay);
        pull(tp.wh, tp0.wh, head_decay);
        if (head_decay > 0.0) {
            tp.bh = tp0.bh + (tp.bh - tp0.bh) / (1.0 + step_size * head_decay);
        }
    };

    for (size_t e = 0; e < epochs; e++) {
        GradientPass pass = full_batch_pass(tp, train);
        const double loss = composite_loss(pass.loss);
        spec.loss_curve.push_back(loss);
        if (loss > 10.0 * spec.loss_curve.front() || !std::isfinite(loss)) {
            std::ostringstream msg;
            msg << "train_specialist: loss " << loss << " at epoch " << e << " exceeds 10x the initial "
                << spec.loss_curve.front() << " (step size " << step_size << ")";
            throw Error(errc::divergence, msg.str());
        }
        apply_step(tp, pass.grad, step_size);
        shrink();
    }
    const double final_loss = composite_loss(full_batch_pass(tp, train).loss);
    spec.loss_curve.push_back(final_loss);
    if (final_loss > 10.0 * spec.loss_curve.front() || !std::isfinite(final_loss)) {
        throw Error(errc::divergence, "train_specialist: final loss exceeds 10x the initial loss");
    }

    tp.store(spec.checkpoint);
    if (!spec.family_id.empty()) {
        spec.checkpoint.meta()["family_id"] = spec.family_id;
        spec.checkpoint.meta()["model_id"] = "spec-" + spec.family_id;
    } else {
        spec.checkpoint.meta()["model_id"] = "spec";
    }
    return spec;
}

std::vector<MergeConfig> default_method_set() {
    std::vector<MergeConfig> out;
    MergeConfig m;
    m.method = MergeMethod::wa;
    out.push_back(m);
    m = MergeConfig{};
    m.method = MergeMethod::ta;
    m.alpha = 0.5;
    out.push_back(m);
    m = MergeConfig{};
    m.method = MergeMethod::ties;
    m.sparsity_p = 0.5;
    out.push_back(m);
    m = MergeConfig{};
    m.method = MergeMethod::cart;
    m.alpha = 0.5;
    m.rank_frac = 0.7;
    out.push_back(m);
    m = MergeConfig{};
    m.method = MergeMethod::r2m;
    m.alpha = 0.5;
    m.rank_frac = 0.7;
    m.k = 1;
    out.push_back(m);
    return out;
}

ProtocolConfig ProtocolConfig::from_json(const nlohmann::json & j) {
    if (!j.is_object()) {
        throw Error(errc::bad_argument, "protocol config must be a JSON object");
    }
    ProtocolConfig cfg;
    for (const auto & [key, value] : j.items()) {
        if (key == "n_seen") {
            cfg.n_seen = value.get<size_t>();
        } else if (key == "n_unseen") {
            cfg.n_unseen = value.get<size_t>();
        } else if (key == "n_train") {
            cfg.n_train = value.get<size_t>();
        } else if (key == "n_test") {
            cfg.n_test = value.get<size_t>();
        } else if (key == "epochs") {
            cfg.epochs = value.get<size_t>();
        } else if (key == "step_size") {
            cfg.step_size = value.get<double>();
        } else if (key == "cue_strength") {
            cfg.cue_strength = value.get<double>();
        } else if (key == "noise_scale") {
            cfg.noise_scale = value.get<double>();
        } else if (key == "stable_scale") {
            cfg.stable_scale = value.get<double>();
        } else if (key == "weight_decay") {
            cfg.weight_decay = value.get<double>();
        } else if (key == "head_decay") {
            cfg.head_decay = value.get<double>();
        } else if (key == "decay_curve") {
            cfg.decay_curve = value.get<std::vector<double>>();
        } else if (key == "max_final_loss") {
            cfg.max_final_loss = value.get<double>();
        } else if (key == "input_dim") {
            cfg.shape.input = value.get<size_t>();
        } else if (key == "hidden_dim") {
            cfg.shape.hidden = value.get<size_t>();
        } else if (key == "feature_dim") {
            cfg.shape.feature = value.get<size_t>();
        } else if (key == "seed") {
            cfg.seed = value.get<uint64_t>();
        } else if (key == "incremental") {
            cfg.incremental = value.get<bool>();
        } else if (key == "threads") {
            cfg.threads = value.get<size_t>();
        } else if (key == "methods") {
            cfg.methods.clear();
            for (const auto & mj : value) {
                cfg.methods.push_back(MergeConfig::from_json(mj));
            }
        } else {
            throw Error(errc::bad_argument, "unknown protocol config key '" + key + "'");
        }
    }
    return cfg;
}

nlohmann::json ProtocolConfig::to_json() const {
    nlohmann::json mj = nlohmann::json::array();
    for (const MergeConfig & m : methods) {
        mj.push_back(m.to_json());
    }
    return nlohmann::json{
        {"n_seen", n_seen},
        {"n_unseen", n_unseen},
        {"n_train", n_train},
        {"n_test", n_test},
        {"epochs", epochs},
        {"step_size", step_size},
        {"cue_strength", cue_strength},
        {"noise_scale", noise_scale},
        {"stable_scale", stable_scale},
        {"weight_decay", weight_decay},
        {"head_decay", head_decay},
        {"decay_curve", decay_curve},
        {"max_final_loss", max_final_loss},
        {"input_dim", shape.input},
        {"hidden_dim", shape.hidden},
        {"feature_dim", shape.feature},
        {"seed", seed},
        {"incremental", incremental},
        {"threads", threads},
        {"methods", mj},
    };
}

std::string render_similarity_table(const std::vector<SimilarityRow> & rows) {
    auto fmt = [](const metrics::SimilarityResult & r) {
        std::ostringstream os;
        os << std::fixed << std::setprecision(4) << r.mean_cos;
        if (r.zero_excluded > 0) {
            os << " (" << r.zero_excluded << " excluded)";
        }
        return os.str();
    };
    std::vector<std::array<std::string, 4>> table;
    table.push_back({"specialist", "real", "own_fake", "other_fake"});
    for (const SimilarityRow & row : rows) {
        table.push_back({row.specialist_id, fmt(row.real), fmt(row.own_fake), fmt(row.other_fake)});
    }
    std::array<size_t, 4> width = {0, 0, 0, 0};
    for (const auto & row : table) {
        for (size_t c = 0; c < 4; c++) {
            width[c] = std::max(width[c], row[c].size());
        }
    }
    std::ostringstream os;
    for (const auto & row : table) {
        for (size_t c = 0; c < 4; c++) {
            os << (c == 0 ? "" : "  ") << std::left << std::setw((int) width[c]) << row[c];
        }
        os << "\n";
    }
    return os.str();
}

namespace {

std::vector<double> class_scores(const TensorArchive & model, const Dataset & data, int label) {
    std::vector<double> out;
    for (const Sample & s : data.samples) {
        if (s.label == label) {
            out.push_back(toy_logit(model, s.x));
        }
    }
    return out;
}

double model_auc(const TensorArchive & model, const Dataset & data) {
    return metrics::auc(class_scores(model, data, 1), class_scores(model, data, 0));
}

FileRecord stat_record(const std::string & path, const char * phase) {
    FileRecord rec;
    rec.path = path;
    rec.phase = phase;
    rec.bytes = (uint64_t) fs::file_size(path);
    rec.mtime_ns = (int64_t) std::chrono::duration_cast<std::chrono::nanoseconds>(
                       fs::last_write_time(path).time_since_epoch())
                       .count();
    return rec;
}

void write_text(const std::string & path, const std::string & text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error(errc::io_error, "cannot open '" + path + "' for writing");
    }
    out << text;
    if (!out) {
        throw Error(errc::io_error, "short write to '" + path + "'");
    }
}

// one merged model per method plus its evaluation against the given seen set
struct MethodRun {
    MergeConfig cfg;
    TensorArchive merged;
    metrics::EvalReport report;
};

MethodRun run_method(const MergeConfig & mcfg, const TensorArchive & base,
                     const std::vector<const TensorArchive *> & specialists,
                     const std::vector<std::string> & seen, const std::vector<std::string> & unseen,
                     const std::map<std::string, Dataset> & test_sets,
                     const std::map<std::string, std::map<std::string, double>> & auc_matrix) {
    MethodRun run;
    run.cfg = mcfg;
    run.merged = merge_models(base, specialists, mcfg);
    run.report.method_id = mcfg.method_id();
    run.report.config = mcfg.to_json();

    std::vector<double> drops;
    for (const std::string & fam : seen) {
        const double auc_merged = model_auc(run.merged, test_sets.at(fam));
        run.report.auc_per_task[fam] = auc_merged;
        const double auc_spec = auc_matrix.at(fam).at(fam);
        run.report.drop_per_task[fam] = metrics::drop(auc_spec, auc_merged);
        drops.push_back(run.report.drop_per_task[fam]);
    }
    run.report.drop_max = metrics::drop_max(drops);

    if (!unseen.empty()) {
        double acc = 0.0;
        for (const std::string & fam : unseen) {
            const double auc_merged = model_auc(run.merged, test_sets.at(fam));
            std::vector<double> spec_aucs;
            for (const std::string & sfam : seen) {
                spec_aucs.push_back(auc_matrix.at(sfam).at(fam));
            }
            const double g = metrics::gain_unseen(auc_merged, spec_aucs);
            run.report.gain_per_task[fam] = g;
            acc += g;
        }
        run.report.gain_unseen = acc / (double) unseen.size();
    }
    return run;
}

} // namespace

ProtocolResult run_protocol(const ProtocolConfig & cfg, const std::string & out_dir) {
    if (cfg.n_seen < 1) {
        throw Error(errc::bad_argument, "run_protocol: need at least one seen family");
    }
    if (cfg.incremental && cfg.n_unseen < 1) {
        throw Error(errc::bad_argument, "run_protocol: incremental mode needs at least one unseen family");
    }
    auto sub_seed = [&](uint64_t stream) { return Rng(cfg.seed, 7000 + stream).next_u64(); };

    if (!(cfg.weight_decay >= 0.0) || !(cfg.head_decay >= 0.0)) {
        throw Error(errc::bad_argument, "run_protocol: weight_decay and head_decay must be >= 0");
    }
    if (!(cfg.stable_scale >= 0.0)) {
        throw Error(errc::bad_argument, "run_protocol: stable_scale must be >= 0");
    }
    if (cfg.decay_curve.empty()) {
        throw Error(errc::bad_argument, "run_protocol: decay_curve needs at least one anchor");
    }
    for (double m : cfg.decay_curve) {
        if (!(m >= 0.0)) {
            throw Error(errc::bad_argument, "run_protocol: decay_curve anchors must be >= 0");
        }
    }
    if (!(cfg.max_final_loss > 0.0)) {
        throw Error(errc::bad_argument, "run_protocol: max_final_loss must be > 0");
    }

    const size_t total = cfg.n_seen + cfg.n_unseen;
    const std::vector<ToyGeneratorFamily> families =
        make_families(total, cfg.shape.input, cfg.cue_strength, cfg.noise_scale, sub_seed(1),
                      cfg.stable_scale);

    // proximal pull for the specialist at position pos in [0, 1]: piecewise
    // linear across the decay_curve anchors, scaled by weight_decay
    auto decay_at = [&](double pos) -> double {
        const std::vector<double> & c = cfg.decay_curve;
        if (c.size() == 1) {
            return cfg.weight_decay * c[0];
        }
        const double t = std::clamp(pos, 0.0, 1.0) * (double) (c.size() - 1);
        const size_t lo = std::min((size_t) t, c.size() - 2);
        const double frac = t - (double) lo;
        return cfg.weight_decay * (c[lo] + frac * (c[lo + 1] - c[lo]));
    };
    auto seen_decay = [&](size_t i) -> double {
        const double pos = cfg.n_seen > 1 ? (double) i / (double) (cfg.n_seen - 1) : 0.0;
        return decay_at(pos);
    };

    ProtocolResult res;
    std::map<std::string, Dataset> train_sets, test_sets;
    for (size_t i = 0; i < total; i++) {
        const Dataset pool = gen_toy_data(families[i], cfg.n_train + cfg.n_test, sub_seed(100 + i));
        auto [train, test] = split_pool(pool, cfg.n_train);
        train_sets[families[i].family_id] = std::move(train);
        test_sets[families[i].family_id] = std::move(test);
        (i < cfg.n_seen ? res.seen_families : res.unseen_families).push_back(families[i].family_id);
    }

    const uint64_t init_seed = sub_seed(2);
    TensorArchive base = init_toy_model(cfg.shape, init_seed);
    base.meta()["model_id"] = "base";

    // every specialist starts from the same seed, hence the same parameters
    std::vector<ToySpecialist> specialists(cfg.n_seen);
    parallel_for(cfg.n_seen, cfg.threads, [&](size_t i) {
        specialists[i] = train_specialist(train_sets.at(res.seen_families[i]), cfg.epochs, cfg.step_size,
                                          init_seed, cfg.shape, seen_decay(i), cfg.head_decay);
    });
    for (const ToySpecialist & s : specialists) {
        if (!s.loss_curve.empty() && s.loss_curve.back() > cfg.max_final_loss) {
            throw Error(errc::divergence, "run_protocol: specialist " + s.family_id +
                                              " finished with loss " + std::to_string(s.loss_curve.back()) +
                                              " above the configured bound " +
                                              std::to_string(cfg.max_final_loss));
        }
    }

    for (size_t i = 0; i < cfg.n_seen; i++) {
        const std::string & fam = res.seen_families[i];
        std::map<std::string, double> row;
        for (size_t f = 0; f < total; f++) {
            row[families[f].family_id] = model_auc(specialists[i].checkpoint, test_sets.at(families[f].family_id));
        }
        res.specialist_auc[fam] = row.at(fam);
        res.auc_matrix[fam] = std::move(row);
    }

    const std::vector<MergeConfig> methods = cfg.methods.empty() ? default_method_set() : cfg.methods;
    std::vector<const TensorArchive *> spec_ptrs;
    for (const ToySpecialist & s : specialists) {
        spec_ptrs.push_back(&s.checkpoint);
    }

    std::vector<MethodRun> runs;
    for (const MergeConfig & m : methods) {
        runs.push_back(run_method(m, base, spec_ptrs, res.seen_families, res.unseen_families, test_sets,
                                  res.auc_matrix));
        res.reports.push_back(runs.back().report);
    }

    // similarity probe always measures against the plain weight average
    const TensorArchive * wa_model = nullptr;
    for (const MethodRun & r : runs) {
        if (r.cfg.method == MergeMethod::wa) {
            wa_model = &r.merged;
            break;
        }
    }
    TensorArchive wa_fallback;
    if (wa_model == nullptr && cfg.n_seen >= 1) {
        MergeConfig wcfg;
        wcfg.method = MergeMethod::wa;
        wa_fallback = merge_models(base, spec_ptrs, wcfg);
        wa_model = &wa_fallback;
    }
    Dataset probe;
    probe.input_dim = cfg.shape.input;
    for (const std::string & fam : res.seen_families) {
        const Dataset & t = test_sets.at(fam);
        probe.samples.insert(probe.samples.end(), t.samples.begin(), t.samples.end());
    }
    for (const ToySpecialist & s : specialists) {
        SimilarityRow row;
        row.specialist_id = s.checkpoint.meta_value("model_id");
        row.real = metrics::feature_similarity(s.checkpoint, *wa_model, probe, metrics::ClassTag::real, cfg.threads);
        row.own_fake =
            metrics::feature_similarity(s.checkpoint, *wa_model, probe, metrics::ClassTag::own_fake, cfg.threads);
        row.other_fake = cfg.n_seen > 1 ? metrics::feature_similarity(s.checkpoint, *wa_model, probe,
                                                                      metrics::ClassTag::other_fake, cfg.threads)
                                        : metrics::SimilarityResult{};
        res.similarity.push_back(std::move(row));
    }

    res.table = metrics::render_eval_table(res.reports);
    res.similarity_table = render_similarity_table(res.similarity);

    const bool writing = !out_dir.empty();
    if (writing) {
        fs::create_directories(out_dir);
        auto out_path = [&](const std::string & name) { return (fs::path(out_dir) / name).string(); };

        save_archive(base, out_path("base.rma"));
        res.written_files.push_back(stat_record(out_path("base.rma"), "initial"));
        for (const ToySpecialist & s : specialists) {
            const std::string path = out_path("spec-" + s.family_id + ".rma");
            save_archive(s.checkpoint, path);
            res.written_files.push_back(stat_record(path, "initial"));
        }
        for (const MethodRun & r : runs) {
            const std::string mpath = out_path("merged-" + r.report.method_id + ".rma");
            save_archive(r.merged, mpath);
            res.written_files.push_back(stat_record(mpath, "initial"));
            const std::string epath = out_path("eval-" + r.report.method_id + ".json");
            write_text(epath, r.report.to_json().dump(2) + "\n");
            res.written_files.push_back(stat_record(epath, "initial"));
        }
        write_text(out_path("comparison_table.txt"), res.table);
        res.written_files.push_back(stat_record(out_path("comparison_table.txt"), "initial"));
        write_text(out_path("similarity_table.txt"), res.similarity_table);
        res.written_files.push_back(stat_record(out_path("similarity_table.txt"), "initial"));
    }

    // incremental scenario: one new family arrives, its specialist is
    // trained from the same shared initialization, and every method
    // re-merges; nothing written above is opened again
    if (cfg.incremental) {
        const std::string new_fam = res.unseen_families.front();
        ToySpecialist extra =
            train_specialist(train_sets.at(new_fam), cfg.epochs, cfg.step_size, init_seed, cfg.shape,
                             decay_at(1.0), cfg.head_decay);

        std::vector<const TensorArchive *> extended = spec_ptrs;
        extended.push_back(&extra.checkpoint);
        std::vector<std::string> seen2 = res.seen_families;
        seen2.push_back(new_fam);
        std::vector<std::string> unseen2(res.unseen_families.begin() + 1, res.unseen_families.end());

        std::map<std::string, std::map<std::string, double>> auc2 = res.auc_matrix;
        std::map<std::string, double> new_row;
        for (size_t f = 0; f < total; f++) {
            new_row[families[f].family_id] = model_auc(extra.checkpoint, test_sets.at(families[f].family_id));
        }
        auc2[new_fam] = std::move(new_row);

        for (const MergeConfig & m : methods) {
            MethodRun run = run_method(m, base, extended, seen2, unseen2, test_sets, auc2);
            res.incremental_reports.push_back(run.report);
            if (writing) {
                auto out_path = [&](const std::string & name) { return (fs::path(out_dir) / name).string(); };
                const std::string mpath = out_path("merged-inc-" + run.report.method_id + ".rma");
                save_archive(run.merged, mpath);
                res.written_files.push_back(stat_record(mpath, "incremental"));
                const std::string epath = out_path("eval-inc-" + run.report.method_id + ".json");
                write_text(epath, run.report.to_json().dump(2) + "\n");
                res.written_files.push_back(stat_record(epath, "incremental"));
            }
        }
        if (writing) {
            auto out_path = [&](const std::string & name) { return (fs::path(out_dir) / name).string(); };
            const std::string spath = out_path("spec-" + extra.family_id + ".rma");
            save_archive(extra.checkpoint, spath);
            res.written_files.push_back(stat_record(spath, "incremental"));
            write_text(out_path("comparison_table_inc.txt"), metrics::render_eval_table(res.incremental_reports));
            res.written_files.push_back(stat_record(out_path("comparison_table_inc.txt"), "incremental"));
        }
    }

    if (writing) {
        write_text((fs::path(out_dir) / "protocol_result.json").string(), res.to_json().dump(2) + "\n");
    }
    return res;
}

nlohmann::json ProtocolResult::to_json() const {
    nlohmann::json reports_j = nlohmann::json::array();
    for (const auto & r : reports) {
        reports_j.push_back(r.to_json());
    }
    nlohmann::json inc_j = nlohmann::json::array();
    for (const auto & r : incremental_reports) {
        inc_j.push_back(r.to_json());
    }
    nlohmann::json sim_j = nlohmann::json::array();
    for (const auto & row : similarity) {
        sim_j.push_back({
            {"specialist", row.specialist_id},
            {"real", row.real.mean_cos},
            {"own_fake", row.own_fake.mean_cos},
            {"other_fake", row.other_fake.mean_cos},
            {"zero_excluded",
             row.real.zero_excluded + row.own_fake.zero_excluded + row.other_fake.zero_excluded},
        });
    }
    nlohmann::json files_j = nlohmann::json::array();
    for (const auto & f : written_files) {
        files_j.push_back({{"path", f.path}, {"bytes", f.bytes}, {"mtime_ns", f.mtime_ns}, {"phase", f.phase}});
    }
    return nlohmann::json{
        {"seen_families", seen_families},
        {"unseen_families", unseen_families},
        {"specialist_auc", specialist_auc},
        {"auc_matrix", auc_matrix},
        {"reports", reports_j},
        {"incremental_reports", inc_j},
        {"similarity", sim_j},
        {"written_files", files_j},
    };
}

} // namespace realmerge::toy
