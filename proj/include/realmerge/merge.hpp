#pragma once

#include "realmerge/linalg.hpp"
#include "realmerge/task_vector.hpp"

#include <json.hpp>

#include <string>
#include <utility>
#include <vector>

namespace realmerge {

enum class MergeMethod { wa, ta, ties, cart, r2m };
enum class EtaVariant { core_norm, core_over_res_norm };

const char * merge_method_name(MergeMethod m);
MergeMethod merge_method_from_name(const std::string & s);
const char * eta_variant_name(EtaVariant v);
EtaVariant eta_variant_from_name(const std::string & s);

// All merge hyperparameters. alpha doubles as the TA/CART global scale.
// JSON keys are exactly the field names; unknown keys are rejected.
struct MergeConfig {
    MergeMethod method = MergeMethod::r2m;
    double alpha = 0.5;
    double rank_frac = 0.7;
    size_t k = 1;
    double sparsity_p = 0.5;
    double eps = 1e-12;
    EtaVariant eta_variant = EtaVariant::core_over_res_norm;
    bool paper_anchor = false;
    size_t threads = 1;

    void validate() const;
    // Hyperparameters outside the conventional sweep grids; informational.
    std::vector<std::string> off_grid_flags() const;
    nlohmann::json to_json() const;
    static MergeConfig from_json(const nlohmann::json & j);
    std::string method_id() const;
};

// Everything the residual/core split produces, kept for inspection and for
// the theory checks.
struct CoreDecomposition {
    TaskVector tau_bar;
    linalg::Projector top_vectors;  // D x k, zero columns when degenerate
    std::vector<double> top_values;
    TaskVector tau_core;
    std::vector<TaskVector> residuals;  // delta_i
    std::vector<TaskVector> truncated;  // after per-slice rank truncation
    std::vector<TaskVector> matched;    // after norm matching
    double m_mean = 0.0;
    TaskVector res_merge;
    double eta = 0.0;
    double rank_frac = 0.0;
    bool degenerate = false;
};

struct HeadSet {
    std::vector<std::vector<double>> heads;
};

std::vector<double> average_head(const HeadSet & hs);

// Per-slice rank from the fraction knob: max(1, round(rank_frac * min(m, n))).
size_t slice_rank(double rank_frac, size_t rows, size_t cols);

TaskVector merge_wa(const std::vector<TaskVector> & taus);
TaskVector merge_ta(const std::vector<TaskVector> & taus, double alpha);

TaskVector ties_trim(const TaskVector & tau, double p);
TaskVector merge_ties(const std::vector<TaskVector> & taus, double p, bool paper_anchor = false);

TaskVector merge_cart(const std::vector<TaskVector> & taus, double eta, double rank_frac, size_t threads = 1);

struct R2mCore {
    TaskVector tau_bar;
    TaskVector tau_core;
    linalg::Projector basis;
    std::vector<double> top_values;
    bool degenerate = false;
};

R2mCore r2m_core(const std::vector<TaskVector> & taus, size_t k);

std::vector<TaskVector> r2m_residuals(const std::vector<TaskVector> & taus, const TaskVector & tau_bar,
                                      double rank_frac, size_t threads = 1);

std::pair<std::vector<TaskVector>, double> r2m_norm_match(const std::vector<TaskVector> & truncated, double eps);

struct R2mResult {
    TaskVector update;
    CoreDecomposition decomp;
};

R2mResult r2m_merge(const std::vector<TaskVector> & taus, const MergeConfig & cfg);

// Dispatch on cfg.method; decomp is filled for r2m when non-null.
TaskVector merge_update(const std::vector<TaskVector> & taus, const MergeConfig & cfg,
                        CoreDecomposition * decomp = nullptr);

// Full model merge: backbone update applied to the base plus the averaged
// specialist heads.
TensorArchive merge_models(const TensorArchive & base, const std::vector<const TensorArchive *> & specialists,
                           const MergeConfig & cfg, CoreDecomposition * decomp = nullptr);

} // namespace realmerge
