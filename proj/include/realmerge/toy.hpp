#pragma once

// Desk-scale end-to-end protocol: synthetic generator families with
// family-specific fake cues over a shared real distribution, tiny
// specialists trained by full-batch gradient descent from one shared
// initialization, every merge method applied, and the retention (drop),
// transfer (gain), and feature-similarity tables produced. Includes the
// incremental scenario where one new family is integrated by re-merging
// without retraining or rewriting anything that exists.

#include "realmerge/merge.hpp"
#include "realmerge/metrics.hpp"
#include "realmerge/toy_model.hpp"

#include <json.hpp>

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace realmerge::toy {

struct ToyGeneratorFamily {
    std::string family_id;
    linalg::Vec real_mean;    // shared by every family
    linalg::Vec cue_dir;      // unit, family-specific fake artifact axis
    double cue_strength = 2.0;
    double noise_scale = 1.0;
    linalg::Vec stable_axis;  // unit axis of low natural variance, shared by every family
    double stable_scale = 1.0; // noise std multiplier along stable_axis (1 = isotropic)
    double idio_scale = 1.0;   // noise std multiplier along the family's own idiosyncratic cue axis
    uint64_t seed = 0;
};

// one shared real mean; cue directions mix one shared artifact axis with
// family-specific parts placed at regular-simplex vertices in its orthogonal
// complement, so pairwise cue |cos| <= 0.5 holds with margin (enforced;
// throws degenerate_input when count + 1 > input_dim). The real distribution
// is tight along the same shared axis (std stable_scale < 1): natural inputs
// obey a stable constraint there, and every generator's cue violates it a
// little, so deviations along that axis are the reliable cross-family signal.
// Each family's real samples are also tight along that family's own
// idiosyncratic cue axis (std idio_scale < 1): a generator's artifact
// perturbs a direction that is quiet in its own real footage, which is what
// makes the family-specific part of the cue detectable at all
std::vector<ToyGeneratorFamily> make_families(size_t count, size_t input_dim, double cue_strength,
                                              double noise_scale, uint64_t seed, double stable_scale = 1.0,
                                              double idio_scale = 1.0);

// n real + n fake gaussian samples; reals at real_mean, fakes shifted by
// cue_strength along cue_dir
Dataset gen_toy_data(const ToyGeneratorFamily & family, size_t n_per_class, uint64_t split_seed);

// first n_train_per_class samples of each class go to train, the rest to
// test; index split keeps the sets disjoint by construction
std::pair<Dataset, Dataset> split_pool(const Dataset & pool, size_t n_train_per_class);

struct ToySpecialist {
    TensorArchive checkpoint;
    std::vector<double> loss_curve; // loss before each update, then the final loss
    std::string family_id;
};

// full-batch gradient descent on the logistic loss from the seeded shared
// initialization; the same seed gives every specialist the same starting
// point, so checkpoint - base is a well-defined task vector. decay > 0 adds
// a proximal pull toward the init (grad += decay * (theta - theta0)), so the
// task-vector norm settles at a signal-dependent equilibrium instead of
// growing without bound; head_decay is the same pull on the head tensors
// only. Pinning the head hard keeps every specialist's head close to the
// common initial direction, so the family-specific work happens in the
// backbone and averaging heads across specialists stays harmless
ToySpecialist train_specialist(const Dataset & train, size_t epochs, double step_size, uint64_t seed,
                               const ModelShape & shape = {}, double decay = 0.0, double head_decay = 0.0);

struct ProtocolConfig {
    size_t n_seen = 3;
    size_t n_unseen = 2;
    size_t n_train = 128; // per class
    size_t n_test = 512;  // per class
    size_t epochs = 300;
    double step_size = 0.4;
    double cue_strength = 2.0;
    double noise_scale = 1.0;
    double stable_scale = 0.25; // real-manifold noise std along the stable axis
    double idio_scale = 0.25;   // real-manifold noise std along each family's own cue axis
    double weight_decay = 0.6;  // proximal pull toward the base during training
    double head_decay = 5.0;    // same pull on the head only (keeps heads near-collinear)
    // per-specialist regularization schedule: seen family at position
    // pos = i / (n_seen - 1) trains with weight_decay times the curve value
    // at pos (piecewise linear across the anchors). Specialists regularized
    // less move farther from the base along the common direction, giving the
    // stacked task vectors the magnitude spread the factorization needs
    std::vector<double> decay_curve {1.0, 0.1, 0.05};
    // reject a training run whose final composite loss stays above this;
    // the default sits just above chance-level logistic loss, so heavily
    // regularized specialists that barely move still pass while a run that
    // ends worse than no learning at all is rejected
    double max_final_loss = 0.75;
    ModelShape shape;
    uint64_t seed = 1;
    bool incremental = false;
    size_t threads = 1;
    std::vector<MergeConfig> methods; // empty selects the default comparison set

    static ProtocolConfig from_json(const nlohmann::json & j);
    nlohmann::json to_json() const;
};

// wa, ta(0.5), ties(0.5), cart(0.5, 0.7), r2m(0.5, 0.7, k=1)
std::vector<MergeConfig> default_method_set();

struct SimilarityRow {
    std::string specialist_id;
    metrics::SimilarityResult real;
    metrics::SimilarityResult own_fake;
    metrics::SimilarityResult other_fake;
};

struct FileRecord {
    std::string path;
    uint64_t bytes = 0;
    int64_t mtime_ns = 0;
    std::string phase; // "initial" or "incremental"
};

struct ProtocolResult {
    std::vector<std::string> seen_families;
    std::vector<std::string> unseen_families;
    std::map<std::string, double> specialist_auc;        // family -> its specialist's own-family AUC
    std::map<std::string, std::map<std::string, double>> auc_matrix; // specialist family -> family -> AUC
    std::vector<metrics::EvalReport> reports;            // one per method
    std::vector<SimilarityRow> similarity;               // each specialist vs the weight-averaged model
    std::vector<metrics::EvalReport> incremental_reports; // re-merge after adding the first unseen family
    std::string table;
    std::string similarity_table;
    std::vector<FileRecord> written_files;               // stat taken right after each write

    nlohmann::json to_json() const;
};

// out_dir empty keeps everything in memory; otherwise writes one archive per
// specialist and merged model, one JSON report per method, and the tables
ProtocolResult run_protocol(const ProtocolConfig & cfg, const std::string & out_dir = "");

// similarity table text for a probe of specialists against a reference model
std::string render_similarity_table(const std::vector<SimilarityRow> & rows);

} // namespace realmerge::toy
