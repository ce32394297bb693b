#include "realmerge/merge.hpp"

#include "realmerge/errors.hpp"
#include "realmerge/threading.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace realmerge {

using linalg::Matrix;

const char * merge_method_name(MergeMethod m) {
    switch (m) {
        case MergeMethod::wa:
            return "wa";
        case MergeMethod::ta:
            return "ta";
        case MergeMethod::ties:
            return "ties";
        case MergeMethod::cart:
            return "cart";
        case MergeMethod::r2m:
            return "r2m";
    }
    return "r2m";
}

MergeMethod merge_method_from_name(const std::string & s) {
    if (s == "wa") {
        return MergeMethod::wa;
    }
    if (s == "ta") {
        return MergeMethod::ta;
    }
    if (s == "ties") {
        return MergeMethod::ties;
    }
    if (s == "cart") {
        return MergeMethod::cart;
    }
    if (s == "r2m") {
        return MergeMethod::r2m;
    }
    throw Error(errc::bad_argument, "unknown merge method '" + s + "'");
}

const char * eta_variant_name(EtaVariant v) {
    return v == EtaVariant::core_norm ? "core_norm" : "core_over_res_norm";
}

EtaVariant eta_variant_from_name(const std::string & s) {
    if (s == "core_norm" || s == "core-norm") {
        return EtaVariant::core_norm;
    }
    if (s == "core_over_res_norm" || s == "core-over-res-norm") {
        return EtaVariant::core_over_res_norm;
    }
    throw Error(errc::bad_argument, "unknown eta variant '" + s + "'");
}

void MergeConfig::validate() const {
    // alpha = 0 is meaningful for r2m (pure core update); the scaling methods need it positive
    const bool alpha_ok = method == MergeMethod::r2m ? alpha >= 0.0 : alpha > 0.0;
    if (!alpha_ok) {
        throw Error(errc::bad_argument, "alpha must be positive");
    }
    if (!(rank_frac > 0.0 && rank_frac <= 1.0)) {
        throw Error(errc::bad_argument, "rank_frac must lie in (0, 1]");
    }
    if (k < 1) {
        throw Error(errc::bad_argument, "k must be >= 1");
    }
    if (!(sparsity_p > 0.0 && sparsity_p <= 1.0)) {
        throw Error(errc::bad_argument, "sparsity_p must lie in (0, 1]");
    }
    if (!(eps > 0.0)) {
        throw Error(errc::bad_argument, "eps must be > 0");
    }
    if (threads < 1) {
        throw Error(errc::bad_argument, "threads must be >= 1");
    }
}

namespace {

bool on_grid(double v, std::initializer_list<double> grid) {
    for (double g : grid) {
        if (std::abs(v - g) <= 1e-12) {
            return true;
        }
    }
    return false;
}

std::string fmt_num(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

} // namespace

std::vector<std::string> MergeConfig::off_grid_flags() const {
    std::vector<std::string> flags;
    switch (method) {
        case MergeMethod::wa:
            break;
        case MergeMethod::ta:
            if (!on_grid(alpha, {0.5, 1.0})) {
                flags.push_back("alpha=" + fmt_num(alpha) + " off the ta grid {0.5, 1.0}");
            }
            break;
        case MergeMethod::ties:
            if (!on_grid(sparsity_p, {0.1, 0.3, 0.5, 0.7})) {
                flags.push_back("sparsity_p=" + fmt_num(sparsity_p) + " off the grid {0.1, 0.3, 0.5, 0.7}");
            }
            break;
        case MergeMethod::cart:
            if (!on_grid(alpha, {0.5, 1.0})) {
                flags.push_back("alpha=" + fmt_num(alpha) + " off the cart grid {0.5, 1.0}");
            }
            if (!on_grid(rank_frac, {0.1, 0.3, 0.5, 0.7})) {
                flags.push_back("rank_frac=" + fmt_num(rank_frac) + " off the grid {0.1, 0.3, 0.5, 0.7}");
            }
            break;
        case MergeMethod::r2m:
            if (!on_grid(alpha, {0.4, 0.5, 0.6})) {
                flags.push_back("alpha=" + fmt_num(alpha) + " off the r2m grid {0.4, 0.5, 0.6}");
            }
            if (!on_grid(rank_frac, {0.1, 0.3, 0.5, 0.7})) {
                flags.push_back("rank_frac=" + fmt_num(rank_frac) + " off the grid {0.1, 0.3, 0.5, 0.7}");
            }
            break;
    }
    return flags;
}

nlohmann::json MergeConfig::to_json() const {
    return nlohmann::json{
        {"method", merge_method_name(method)},
        {"alpha", alpha},
        {"rank_frac", rank_frac},
        {"k", k},
        {"sparsity_p", sparsity_p},
        {"eps", eps},
        {"eta_variant", eta_variant_name(eta_variant)},
        {"paper_anchor", paper_anchor},
        {"threads", threads},
    };
}

MergeConfig MergeConfig::from_json(const nlohmann::json & j) {
    if (!j.is_object()) {
        throw Error(errc::bad_argument, "merge config must be a JSON object");
    }
    MergeConfig cfg;
    for (const auto & [key, value] : j.items()) {
        if (key == "method") {
            cfg.method = merge_method_from_name(value.get<std::string>());
        } else if (key == "alpha") {
            cfg.alpha = value.get<double>();
        } else if (key == "rank_frac") {
            cfg.rank_frac = value.get<double>();
        } else if (key == "k") {
            cfg.k = value.get<size_t>();
        } else if (key == "sparsity_p") {
            cfg.sparsity_p = value.get<double>();
        } else if (key == "eps") {
            cfg.eps = value.get<double>();
        } else if (key == "eta_variant") {
            cfg.eta_variant = eta_variant_from_name(value.get<std::string>());
        } else if (key == "paper_anchor") {
            cfg.paper_anchor = value.get<bool>();
        } else if (key == "threads") {
            cfg.threads = value.get<size_t>();
        } else {
            throw Error(errc::bad_argument, "unknown merge config key '" + key + "'");
        }
    }
    cfg.validate();
    return cfg;
}

std::string MergeConfig::method_id() const {
    std::ostringstream os;
    os << merge_method_name(method);
    switch (method) {
        case MergeMethod::wa:
            break;
        case MergeMethod::ta:
            os << "-a" << alpha;
            break;
        case MergeMethod::ties:
            os << "-p" << sparsity_p;
            if (paper_anchor) {
                os << "-anchor";
            }
            break;
        case MergeMethod::cart:
            os << "-a" << alpha << "-r" << rank_frac;
            break;
        case MergeMethod::r2m:
            os << "-a" << alpha << "-r" << rank_frac << "-k" << k;
            break;
    }
    return os.str();
}

std::vector<double> average_head(const HeadSet & hs) {
    if (hs.heads.empty()) {
        throw Error(errc::bad_argument, "average_head: no heads");
    }
    const size_t n = hs.heads[0].size();
    std::vector<double> out(n, 0.0);
    for (const auto & h : hs.heads) {
        if (h.size() != n) {
            throw Error(errc::shape_mismatch, "average_head: heads have different shapes");
        }
        for (size_t i = 0; i < n; i++) {
            out[i] += h[i];
        }
    }
    for (double & x : out) {
        x /= (double) hs.heads.size();
    }
    return out;
}

size_t slice_rank(double rank_frac, size_t rows, size_t cols) {
    const size_t q = std::min(rows, cols);
    long r = std::lround(rank_frac * (double) q);
    if (r < 1) {
        r = 1;
    }
    if ((size_t) r > q) {
        r = (long) q;
    }
    return (size_t) r;
}

namespace {

// Summation order is fixed by sorting on specialist id (stable for ties), so
// merges are invariant under reordering of the input list.
std::vector<TaskVector> sorted_tasks(std::vector<TaskVector> taus) {
    if (taus.empty()) {
        throw Error(errc::bad_argument, "no task vectors given");
    }
    std::stable_sort(taus.begin(), taus.end(),
                     [](const TaskVector & a, const TaskVector & b) { return a.specialist_id < b.specialist_id; });
    for (size_t i = 1; i < taus.size(); i++) {
        if (!same_layout(taus[0], taus[i])) {
            throw Error(errc::layout_mismatch, "task vectors have different layouts");
        }
    }
    return taus;
}

TaskVector mean_of(const std::vector<TaskVector> & taus) {
    TaskVector out = zeros_like(taus[0]);
    for (const TaskVector & t : taus) {
        for (size_t i = 0; i < out.values.size(); i++) {
            out.values[i] += t.values[i];
        }
    }
    const double inv = 1.0 / (double) taus.size();
    for (double & x : out.values) {
        x *= inv;
    }
    out.specialist_id = "";
    return out;
}

// Rank-truncate the attention/mlp slices of delta in place; other
// coordinates pass through. Truncation at full slice rank is the identity,
// kept exact by skipping the SVD.
TaskVector truncate_slices(const TaskVector & delta, double rank_frac, size_t threads) {
    TaskVector out = delta;
    const std::vector<LayerSlice> slices = layout_slices(delta);
    parallel_for(slices.size(), threads, [&](size_t si) {
        const LayerSlice & sl = slices[si];
        const size_t q = std::min(sl.rows, sl.cols);
        const size_t r = slice_rank(rank_frac, sl.rows, sl.cols);
        if (r >= q) {
            return;
        }
        Matrix m(sl.rows, sl.cols,
                 std::vector<double>(delta.values.begin() + sl.offset,
                                     delta.values.begin() + sl.offset + sl.rows * sl.cols));
        Matrix t = linalg::truncate_rank(m, r);
        std::copy(t.data().begin(), t.data().end(), out.values.begin() + sl.offset);
    });
    return out;
}

} // namespace

TaskVector merge_wa(const std::vector<TaskVector> & taus) {
    return mean_of(sorted_tasks(taus));
}

TaskVector merge_ta(const std::vector<TaskVector> & taus, double alpha) {
    if (!(alpha > 0.0)) {
        throw Error(errc::bad_argument, "ta: alpha must be > 0");
    }
    return scaled(merge_wa(taus), alpha);
}

TaskVector ties_trim(const TaskVector & tau, double p) {
    if (!(p > 0.0 && p <= 1.0)) {
        throw Error(errc::bad_argument, "ties_trim: p must lie in (0, 1]");
    }
    const size_t d = tau.dim();
    if (d == 0) {
        return tau;
    }
    // ceil(p*D) computed with a guard so exact grid products like 0.4*5 do
    // not round up from representation error
    size_t keep = (size_t) std::ceil(p * (double) d - 1e-9);
    keep = std::max<size_t>(1, std::min(keep, d));

    std::vector<size_t> idx(d);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
        const double ma = std::abs(tau.values[a]);
        const double mb = std::abs(tau.values[b]);
        if (ma != mb) {
            return ma > mb;
        }
        return a < b;
    });
    TaskVector out = zeros_like(tau);
    out.specialist_id = tau.specialist_id;
    for (size_t i = 0; i < keep; i++) {
        out.values[idx[i]] = tau.values[idx[i]];
    }
    return out;
}

TaskVector merge_ties(const std::vector<TaskVector> & taus, double p, bool paper_anchor) {
    const std::vector<TaskVector> sorted = sorted_tasks(taus);
    const size_t n = sorted.size();
    const size_t d = sorted[0].dim();

    std::vector<TaskVector> trimmed;
    trimmed.reserve(n);
    for (const TaskVector & t : sorted) {
        trimmed.push_back(ties_trim(t, p));
    }

    TaskVector out = zeros_like(sorted[0]);
    if (paper_anchor) {
        // literal origin-shifted form: tau_bar plus the plain sum of trimmed,
        // sign-filtered task vectors
        out = mean_of(sorted);
    }
    for (size_t c = 0; c < d; c++) {
        double sum = 0.0;
        for (const TaskVector & t : trimmed) {
            sum += t.values[c];
        }
        const double elected = sum > 0.0 ? 1.0 : (sum < 0.0 ? -1.0 : 0.0);
        double surv_sum = 0.0;
        size_t surv_cnt = 0;
        if (elected != 0.0) {
            for (const TaskVector & t : trimmed) {
                const double v = t.values[c];
                if (v != 0.0 && ((v > 0.0) == (elected > 0.0))) {
                    surv_sum += v;
                    surv_cnt++;
                }
            }
        }
        if (paper_anchor) {
            out.values[c] += surv_sum;
        } else {
            out.values[c] = surv_cnt > 0 ? surv_sum / (double) surv_cnt : 0.0;
        }
    }
    return out;
}

TaskVector merge_cart(const std::vector<TaskVector> & taus, double eta, double rank_frac, size_t threads) {
    if (taus.size() < 2) {
        throw Error(errc::bad_argument, "cart: needs at least two specialists");
    }
    if (!(eta > 0.0)) {
        throw Error(errc::bad_argument, "cart: eta must be > 0");
    }
    if (!(rank_frac > 0.0 && rank_frac <= 1.0)) {
        throw Error(errc::bad_argument, "cart: rank_frac must lie in (0, 1]");
    }
    const std::vector<TaskVector> sorted = sorted_tasks(taus);
    const TaskVector tau_bar = mean_of(sorted);

    std::vector<TaskVector> trunc(sorted.size());
    parallel_for(sorted.size(), 1, [&](size_t i) {
        TaskVector delta = vaxpy(-1.0, tau_bar, sorted[i]);
        trunc[i] = truncate_slices(delta, rank_frac, threads);
    });

    TaskVector out = tau_bar;
    const double scale = eta / (double) sorted.size();
    for (const TaskVector & t : trunc) {
        for (size_t i = 0; i < out.values.size(); i++) {
            out.values[i] += scale * t.values[i];
        }
    }
    return out;
}

R2mCore r2m_core(const std::vector<TaskVector> & taus, size_t k) {
    if (taus.size() < 2) {
        throw Error(errc::bad_argument, "r2m_core: needs at least two specialists");
    }
    if (k < 1 || k > taus.size() - 1) {
        throw Error(errc::bad_argument, "r2m_core: k must lie in [1, N-1]");
    }
    const std::vector<TaskVector> sorted = sorted_tasks(taus);

    R2mCore core;
    core.tau_bar = mean_of(sorted);

    double mean_norm = 0.0;
    for (const TaskVector & t : sorted) {
        mean_norm += vnorm(t);
    }
    mean_norm /= (double) sorted.size();

    std::vector<linalg::Vec> rows;
    rows.reserve(sorted.size());
    double trace = 0.0;
    for (const TaskVector & t : sorted) {
        TaskVector delta = vaxpy(-1.0, core.tau_bar, t);
        double n2 = 0.0;
        for (double x : delta.values) {
            n2 += x * x;
        }
        trace += n2;
        rows.push_back(std::move(delta.values));
    }

    const double degenerate_cut = 1e-12 * mean_norm;
    bool degenerate = trace == 0.0;
    if (!degenerate) {
        const double sigma1 = linalg::gram_right_singular(rows, 1).s[0];
        degenerate = sigma1 < degenerate_cut;
    }
    if (degenerate) {
        core.degenerate = true;
        core.tau_core = core.tau_bar;
        core.basis.basis = Matrix(core.tau_bar.dim(), 0);
        return core;
    }

    linalg::GramBasis gb = linalg::gram_right_singular(rows, k);
    core.basis.basis = std::move(gb.v);
    core.top_values = std::move(gb.s);

    linalg::Vec projected = linalg::project(core.basis, core.tau_bar.values);
    core.tau_core = core.tau_bar;
    core.tau_core.values = std::move(projected);
    return core;
}

std::vector<TaskVector> r2m_residuals(const std::vector<TaskVector> & taus, const TaskVector & tau_bar,
                                      double rank_frac, size_t threads) {
    if (!(rank_frac > 0.0 && rank_frac <= 1.0)) {
        throw Error(errc::bad_argument, "r2m_residuals: rank_frac must lie in (0, 1]");
    }
    const std::vector<TaskVector> sorted = sorted_tasks(taus);
    std::vector<TaskVector> out(sorted.size());
    parallel_for(sorted.size(), 1, [&](size_t i) {
        TaskVector delta = vaxpy(-1.0, tau_bar, sorted[i]);
        delta.specialist_id = sorted[i].specialist_id;
        out[i] = truncate_slices(delta, rank_frac, threads);
    });
    return out;
}

std::pair<std::vector<TaskVector>, double> r2m_norm_match(const std::vector<TaskVector> & truncated, double eps) {
    if (truncated.empty()) {
        throw Error(errc::bad_argument, "r2m_norm_match: no residuals");
    }
    if (!(eps > 0.0)) {
        throw Error(errc::bad_argument, "r2m_norm_match: eps must be > 0");
    }
    std::vector<double> norms;
    norms.reserve(truncated.size());
    double m_mean = 0.0;
    for (const TaskVector & t : truncated) {
        const double n = vnorm(t);
        norms.push_back(n);
        m_mean += n;
    }
    m_mean /= (double) truncated.size();

    std::vector<TaskVector> matched;
    matched.reserve(truncated.size());
    for (size_t i = 0; i < truncated.size(); i++) {
        matched.push_back(scaled(truncated[i], m_mean / (norms[i] + eps)));
    }
    return {std::move(matched), m_mean};
}

R2mResult r2m_merge(const std::vector<TaskVector> & taus, const MergeConfig & cfg) {
    if (cfg.method != MergeMethod::r2m) {
        throw Error(errc::bad_argument, "r2m_merge: config method is not r2m");
    }
    if (!(cfg.alpha >= 0.0)) {
        throw Error(errc::bad_argument, "r2m_merge: alpha must be >= 0");
    }
    const std::vector<TaskVector> sorted = sorted_tasks(taus);

    R2mCore core = r2m_core(sorted, cfg.k);

    CoreDecomposition d;
    d.tau_bar = core.tau_bar;
    d.top_vectors = core.basis;
    d.top_values = core.top_values;
    d.tau_core = core.tau_core;
    d.degenerate = core.degenerate;
    d.rank_frac = cfg.rank_frac;

    d.residuals.reserve(sorted.size());
    for (const TaskVector & t : sorted) {
        TaskVector delta = vaxpy(-1.0, d.tau_bar, t);
        delta.specialist_id = t.specialist_id;
        d.residuals.push_back(std::move(delta));
    }
    d.truncated = r2m_residuals(sorted, d.tau_bar, cfg.rank_frac, cfg.threads);
    auto [matched, m_mean] = r2m_norm_match(d.truncated, cfg.eps);
    d.matched = std::move(matched);
    d.m_mean = m_mean;
    d.res_merge = mean_of(d.matched);

    const double core_norm = vnorm(d.tau_core);
    const double res_norm = vnorm(d.res_merge);
    d.eta = cfg.eta_variant == EtaVariant::core_norm ? cfg.alpha * core_norm
                                                     : cfg.alpha * core_norm / (res_norm + cfg.eps);

    R2mResult out;
    out.update = vaxpy(d.eta, d.res_merge, d.tau_core);
    out.decomp = std::move(d);
    return out;
}

TaskVector merge_update(const std::vector<TaskVector> & taus, const MergeConfig & cfg, CoreDecomposition * decomp) {
    cfg.validate();
    switch (cfg.method) {
        case MergeMethod::wa:
            return merge_wa(taus);
        case MergeMethod::ta:
            return merge_ta(taus, cfg.alpha);
        case MergeMethod::ties:
            return merge_ties(taus, cfg.sparsity_p, cfg.paper_anchor);
        case MergeMethod::cart:
            return merge_cart(taus, cfg.alpha, cfg.rank_frac, cfg.threads);
        case MergeMethod::r2m: {
            R2mResult r = r2m_merge(taus, cfg);
            if (decomp != nullptr) {
                *decomp = std::move(r.decomp);
            }
            return r.update;
        }
    }
    throw Error(errc::bad_argument, "unknown merge method");
}

TensorArchive merge_models(const TensorArchive & base, const std::vector<const TensorArchive *> & specialists,
                           const MergeConfig & cfg, CoreDecomposition * decomp) {
    if (specialists.empty()) {
        throw Error(errc::bad_argument, "merge_models: no specialists");
    }
    std::vector<TaskVector> taus;
    taus.reserve(specialists.size());
    for (const TensorArchive * s : specialists) {
        taus.push_back(task_vector(*s, base));
    }
    const TaskVector update = merge_update(taus, cfg, decomp);
    TensorArchive merged = apply_update(base, update);

    // heads merge by plain averaging over specialists, in the same id-sorted
    // order as the backbone sums
    std::vector<size_t> order(specialists.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return specialists[a]->meta_value("model_id") < specialists[b]->meta_value("model_id");
    });
    for (const auto & [name, be] : base.entries()) {
        if (be.role != Role::head) {
            continue;
        }
        HeadSet hs;
        for (size_t i : order) {
            const TensorEntry & he = specialists[i]->at(name);
            if (he.shape != be.shape) {
                throw Error(errc::shape_mismatch, "head tensor '" + name + "' has different shapes");
            }
            hs.heads.push_back(he.data);
        }
        merged.at(name).data = average_head(hs);
    }

    merged.meta()["model_id"] = std::string("merged-") + cfg.method_id();
    merged.meta()["merge_method"] = merge_method_name(cfg.method);
    return merged;
}

} // namespace realmerge
