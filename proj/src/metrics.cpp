#include "realmerge/metrics.hpp"

#include "realmerge/errors.hpp"
#include "realmerge/threading.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

namespace realmerge::metrics {

double auc(const std::vector<double> & fake_scores, const std::vector<double> & real_scores) {
    if (fake_scores.empty() || real_scores.empty()) {
        throw Error(errc::bad_argument, "auc: both score lists must be nonempty");
    }
    const size_t nf = fake_scores.size();
    const size_t nr = real_scores.size();
    std::vector<std::pair<double, bool>> pool; // (score, is_fake)
    pool.reserve(nf + nr);
    for (double s : fake_scores) {
        if (!std::isfinite(s)) {
            throw Error(errc::non_finite_value, "auc: non-finite fake score");
        }
        pool.emplace_back(s, true);
    }
    for (double s : real_scores) {
        if (!std::isfinite(s)) {
            throw Error(errc::non_finite_value, "auc: non-finite real score");
        }
        pool.emplace_back(s, false);
    }
    std::sort(pool.begin(), pool.end(),
              [](const auto & a, const auto & b) { return a.first < b.first; });

    // midranks keep every partial sum a half-integer, so the statistic is
    // exact in double and matches brute-force pair counting bit for bit
    double rank_sum_fake = 0.0;
    const size_t n = pool.size();
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && pool[j + 1].first == pool[i].first) {
            j++;
        }
        const double midrank = 0.5 * ((double) (i + 1) + (double) (j + 1));
        for (size_t t = i; t <= j; t++) {
            if (pool[t].second) {
                rank_sum_fake += midrank;
            }
        }
        i = j + 1;
    }
    const double u = rank_sum_fake - 0.5 * (double) nf * (double) (nf + 1);
    return u / ((double) nf * (double) nr);
}

double auc(const ScoreSet & s) {
    return auc(s.fake_scores, s.real_scores);
}

double drop(double auc_specialist, double auc_merged) {
    return auc_specialist - auc_merged;
}

double drop_max(const std::vector<double> & drops) {
    if (drops.empty()) {
        throw Error(errc::bad_argument, "drop_max: empty list");
    }
    return *std::max_element(drops.begin(), drops.end());
}

double gain_unseen(double auc_merged, const std::vector<double> & auc_specialists) {
    if (auc_specialists.empty()) {
        throw Error(errc::bad_argument, "gain_unseen: empty specialist list");
    }
    return auc_merged - *std::max_element(auc_specialists.begin(), auc_specialists.end());
}

const char * class_tag_name(ClassTag tag) {
    switch (tag) {
        case ClassTag::real:
            return "real";
        case ClassTag::own_fake:
            return "own_fake";
        case ClassTag::other_fake:
            return "other_fake";
    }
    return "real";
}

SimilarityResult feature_similarity(const TensorArchive & model_a, const TensorArchive & model_b,
                                    const toy::Dataset & data, ClassTag tag, size_t threads) {
    const std::string own = model_a.meta_value("family_id");
    if (tag != ClassTag::real && own.empty()) {
        throw Error(errc::bad_argument, "feature_similarity: model_a carries no family_id metadata");
    }
    std::vector<const toy::Sample *> selected;
    for (const toy::Sample & s : data.samples) {
        const bool match = tag == ClassTag::real      ? s.label == 0
                           : tag == ClassTag::own_fake ? s.label == 1 && s.family == own
                                                       : s.label == 1 && s.family != own;
        if (match) {
            selected.push_back(&s);
        }
    }
    if (selected.empty()) {
        throw Error(errc::degenerate_input,
                    std::string("feature_similarity: no samples match class tag ") + class_tag_name(tag));
    }

    // cosines land in a preallocated slot per sample; the reduction below
    // runs in index order, so the result is identical across thread counts
    std::vector<double> cos_val(selected.size());
    std::vector<char> usable(selected.size(), 0);
    parallel_for(selected.size(), threads, [&](size_t i) {
        const linalg::Vec fa = toy::toy_features(model_a, selected[i]->x);
        const linalg::Vec fb = toy::toy_features(model_b, selected[i]->x);
        double na = 0.0, nb = 0.0, d = 0.0;
        for (size_t c = 0; c < fa.size(); c++) {
            na += fa[c] * fa[c];
            nb += fb[c] * fb[c];
            d += fa[c] * fb[c];
        }
        if (na == 0.0 || nb == 0.0) {
            return;
        }
        cos_val[i] = d / (std::sqrt(na) * std::sqrt(nb));
        usable[i] = 1;
    });

    SimilarityResult r;
    double acc = 0.0;
    for (size_t i = 0; i < selected.size(); i++) {
        if (usable[i]) {
            acc += cos_val[i];
            r.used++;
        } else {
            r.zero_excluded++;
        }
    }
    if (r.used == 0) {
        throw Error(errc::degenerate_input, "feature_similarity: every selected sample had a zero feature vector");
    }
    r.mean_cos = acc / (double) r.used;
    return r;
}

nlohmann::json EvalReport::to_json() const {
    return nlohmann::json{
        {"method_id", method_id},
        {"config", config},
        {"auc_per_task", auc_per_task},
        {"drop_per_task", drop_per_task},
        {"drop_max", drop_max},
        {"gain_unseen", gain_unseen},
        {"gain_per_task", gain_per_task},
    };
}

std::string render_eval_table(const std::vector<EvalReport> & reports) {
    if (reports.empty()) {
        return "";
    }
    std::vector<std::string> tasks;
    for (const auto & [task, v] : reports[0].auc_per_task) {
        tasks.push_back(task);
    }
    std::vector<std::string> header = {"method"};
    for (const auto & t : tasks) {
        header.push_back("auc:" + t);
    }
    header.insert(header.end(), {"auc_mean", "drop_max", "gain_unseen"});

    auto fmt = [](double v) {
        std::ostringstream os;
        os << std::fixed << std::setprecision(4) << v;
        return os.str();
    };
    std::vector<std::vector<std::string>> rows;
    rows.push_back(header);
    for (const EvalReport & r : reports) {
        std::vector<std::string> row = {r.method_id};
        double mean = 0.0;
        for (const auto & t : tasks) {
            const auto it = r.auc_per_task.find(t);
            const double v = it == r.auc_per_task.end() ? 0.0 : it->second;
            mean += v;
            row.push_back(fmt(v));
        }
        mean /= tasks.empty() ? 1.0 : (double) tasks.size();
        row.push_back(fmt(mean));
        row.push_back(fmt(r.drop_max));
        row.push_back(fmt(r.gain_unseen));
        rows.push_back(std::move(row));
    }

    std::vector<size_t> width(header.size(), 0);
    for (const auto & row : rows) {
        for (size_t c = 0; c < row.size(); c++) {
            width[c] = std::max(width[c], row[c].size());
        }
    }
    std::ostringstream os;
    for (const auto & row : rows) {
        for (size_t c = 0; c < row.size(); c++) {
            os << (c == 0 ? "" : "  ") << std::left << std::setw((int) width[c]) << row[c];
        }
        os << "\n";
    }
    return os.str();
}

} // namespace realmerge::metrics
