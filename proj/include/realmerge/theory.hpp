#pragma once

// Numerical verification harness for the merge's guiding conditions on a
// synthetic spiked task-vector model paired with an exactly linear feature
// map:
//   recovery   — the top right singular vector of the centered task matrix
//                recovers the planted shared axis within the spectral-gap
//                bound gamma,
//   linearity  — the feature map's response to parameter displacements is
//                exactly linear (zero remainder) and matches finite
//                differences,
//   off-axis   — the merged residual's response off the shared direction u
//                stays below the core response (ratio eps' < 1),
//   cone       — every merged real-fake separation vector lies within angle
//                asin(eps/(1-eps)) of u,
//   heads      — exactly collinear per-task heads give the averaged head
//                identical rankings and AUC.

#include "realmerge/linalg.hpp"
#include "realmerge/merge.hpp"
#include "realmerge/task_vector.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace realmerge::theory {

struct SyntheticTaskSpec {
    size_t n = 8;       // tasks
    size_t d = 16;      // slice rows; the flat dimension is d*p
    size_t p = 16;      // slice cols
    double sigma_a = 1.0;
    double sigma_z = 0.05;
    uint64_t vstar_seed = 1;
    uint64_t noise_seed = 2;

    size_t dim() const { return d * p; }
};

struct SyntheticTasks {
    std::vector<TaskVector> taus; // tau_i = a_i * vstar + zeta_i
    linalg::Vec vstar;            // planted unit axis
    linalg::Vec a;                // planted coefficients
};

// layout: one tensor "linear.weight" [d, p], so the task vectors carry a
// single rank-truncatable slice
SyntheticTasks gen_synthetic_tasks(const SyntheticTaskSpec & spec);

struct R2Report {
    double sin_recovery = 0.0; // sin angle(recovered axis, planted axis)
    double gamma = 0.0;        // opnorm(Z_c) / (norm(A_c) - opnorm(Z_c)); +inf when the denominator is <= 0
    double a_c_norm = 0.0;
    double z_c_opnorm = 0.0;
    bool gamma_lt_1 = false;
    bool holds = false; // gamma < 1 implies sin_recovery <= gamma (small absolute slack)

    nlohmann::json to_json() const;
};

R2Report r2_check(const std::vector<TaskVector> & taus, const linalg::Vec & vstar);

struct LinearModelConfig {
    size_t d = 8;
    size_t p = 16;
    size_t n_tasks = 6;
    double gap_scale = 1.0;    // norm scale of the shared class-mean gap direction
    double gap_perturb = 0.0;  // per-task deviation from the shared gap (0 = identical gaps)
    double base_scale = 0.0;   // scale of theta0 entries (0 = zero base)
    double input_noise = 1.0;  // isotropic input std, used only when sampling
    uint64_t seed = 7;
};

// phi(x; theta) = Theta x with Theta = reshape(theta, d x p); the response
// to a displacement is exactly H_i(delta) = reshape(delta) * gap_i
class LinearFeatureModel {
  public:
    size_t d = 0;
    size_t p = 0;
    linalg::Vec theta0;                  // flat base parameters, length d*p
    std::vector<LayoutEntry> layout;     // single "linear.weight" [d,p] entry
    std::vector<linalg::Vec> mean0;      // class-0 input means per task
    std::vector<linalg::Vec> mean1;      // class-1 input means per task
    std::vector<linalg::Vec> gap;        // mean1 - mean0
    double input_noise = 1.0;
    double fd_max_err = 0.0;             // worst closed-form vs finite-difference deviation

    size_t dim() const { return d * p; }
    size_t tasks() const { return gap.size(); }

    // reshape(delta) * gap_i
    linalg::Vec h_apply(size_t task, const linalg::Vec & delta) const;
    // reshape(theta) * gap_i: the real-fake feature-mean difference at theta
    linalg::Vec delta_rf(size_t task, const linalg::Vec & theta) const;
};

// builds the model and validates h_apply against central finite differences
// of delta_rf at theta0 (step 1e-5, tolerance 1e-8)
LinearFeatureModel build_linear_model(const LinearModelConfig & cfg);

// || delta_rf(theta0 + delta) - delta_rf(theta0) - h_apply(delta) ||, which
// linearity makes zero up to rounding
double r1_remainder(const LinearFeatureModel & model, size_t task, const linalg::Vec & delta);

struct R3Report {
    std::vector<double> lhs;   // per task: off-axis norm of the scaled merged-residual response
    std::vector<double> rhs;   // per task: norm of the core response
    double eps_prime = 0.0;    // max lhs/rhs
    double kappa_u = 0.0;      // mean fraction of residual energy off u, per slice columns
    double tail_ratio = 0.0;   // mean truncation tail fraction of the residuals
    bool eps_lt_1 = false;

    nlohmann::json to_json() const;
};

// decomp must come from an r2m merge over this model's task vectors; u is
// the shared unit response direction
R3Report r3_check(const LinearFeatureModel & model, const CoreDecomposition & decomp, const linalg::Vec & u);

double cone_bound(double eps); // eps / (1 - eps)

struct Prop1Report {
    double eps = 0.0;          // max off-axis over on-axis response component
    double bound = 0.0;        // cone_bound(eps)
    double max_cone_sin = 0.0; // max over tasks of sin angle(delta_rf(theta_star), u)
    bool vacuous = false;      // eps >= 1 or a nonpositive on-axis component: bound says nothing
    bool holds = false;        // !vacuous and max_cone_sin <= bound + 1e-9

    nlohmann::json to_json() const;
};

Prop1Report prop1_check(const LinearFeatureModel & model, const linalg::Vec & theta_star,
                        const CoreDecomposition & decomp, const linalg::Vec & u);

struct HeadModel {
    std::vector<double> c;        // positive per-task scales
    linalg::Vec q;                // shared unit direction
    std::vector<linalg::Vec> w;   // per-task heads; exactly c_i * q when collinear
    linalg::Vec wbar;             // averaged head; exactly mean(c) * q when collinear
    bool collinear = true;
};

// perturb = 0 gives the exactly collinear construction; perturb > 0 adds a
// seeded gaussian offset of that scale to every head
HeadModel make_head_model(const linalg::Vec & q, size_t n, uint64_t seed, double perturb = 0.0);

struct FeatureSet {
    std::vector<linalg::Vec> fake;
    std::vector<linalg::Vec> real;
};

// features phi(x; theta) with x drawn from each task's class distributions
FeatureSet sample_feature_set(const LinearFeatureModel & model, const linalg::Vec & theta,
                              size_t n_per_class_per_task, uint64_t seed);

struct HeadReport {
    double max_scale_dev = 0.0;     // collinear mode: worst |sbar - (cbar/c_i) s_i| relative deviation
    double max_auc_gap = 0.0;       // max |auc(head_i) - auc(averaged head)|
    double pooled_cov_trace = 0.0;  // trace of the pooled within-class feature covariance (diagnostic)
    bool exact_equal = false;       // every per-head AUC bit-identical to the averaged head's
    bool collinear = true;

    nlohmann::json to_json() const;
};

HeadReport head_sufficiency_check(const HeadModel & heads, const FeatureSet & features);

struct TheorySuiteConfig {
    size_t n = 6;
    size_t d = 8;
    size_t p = 16;
    double sigma_a = 1.0;
    double sigma_z = 0.02;
    double alpha = 0.5;
    double rank_frac = 0.7;
    size_t k = 1;
    double eps = 1e-12;
    EtaVariant eta_variant = EtaVariant::core_over_res_norm;
    double gap_perturb = 0.0;
    double head_perturb = 0.0;   // 0 = exact collinear heads
    size_t r1_trials = 100;
    size_t head_samples = 64;    // per class per task
    std::vector<double> alpha_sweep = {0.6, 0.5, 0.4};
    uint64_t seed = 1u;

    static TheorySuiteConfig from_json(const nlohmann::json & j);
    nlohmann::json to_json() const;
};

struct TheoryReport {
    TheorySuiteConfig cfg;
    R2Report r2;
    double r1_max_remainder = 0.0;
    double fd_max_err = 0.0;
    bool r1_holds = false;
    R3Report r3;
    std::vector<std::pair<double, double>> alpha_eps; // (alpha, eps_prime) in sweep order
    bool sweep_monotone = false;
    Prop1Report prop1;
    HeadReport head;

    bool all_pass() const; // a vacuous cone bound reports but does not fail
    nlohmann::json to_json() const;
    std::string render_table() const;
};

TheoryReport run_theory_suite(const TheorySuiteConfig & cfg);

} // namespace realmerge::theory
