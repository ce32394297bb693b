#pragma once

// Scoring metrics: rank-statistic AUC (midrank tie handling), per-task
// retention drop, unseen-transfer gain, and the pre-logit feature
// similarity probe between two checkpoints.

#include "realmerge/archive.hpp"
#include "realmerge/toy_model.hpp"

#include <json.hpp>

#include <map>
#include <string>
#include <vector>

namespace realmerge::metrics {

struct ScoreSet {
    std::vector<double> fake_scores;
    std::vector<double> real_scores;
    std::string task_id;
};

// P(fake score > real score) with ties counted as 1/2, computed by pooled
// sort and midranks; bit-identical to brute-force pair counting
double auc(const std::vector<double> & fake_scores, const std::vector<double> & real_scores);
double auc(const ScoreSet & s);

// retention loss of the merged model on one task: specialist AUC minus
// merged AUC (positive when merging hurt)
double drop(double auc_specialist, double auc_merged);
double drop_max(const std::vector<double> & drops);

// merged AUC on an unseen task minus the best specialist's AUC there
double gain_unseen(double auc_merged, const std::vector<double> & auc_specialists);

enum class ClassTag { real, own_fake, other_fake };
const char * class_tag_name(ClassTag tag);

struct SimilarityResult {
    double mean_cos = 0.0;       // mean cosine of pre-logit features over the selected samples
    size_t used = 0;             // samples that entered the mean
    size_t zero_excluded = 0;    // samples dropped because either feature vector had zero norm
};

// mean cos(features_a(x), features_b(x)) over the samples selected by tag;
// own_fake / other_fake read model_a's "family_id" metadata
SimilarityResult feature_similarity(const TensorArchive & model_a, const TensorArchive & model_b,
                                    const toy::Dataset & data, ClassTag tag, size_t threads = 1);

struct EvalReport {
    std::string method_id;
    nlohmann::json config;
    std::map<std::string, double> auc_per_task;   // seen task id -> merged AUC
    std::map<std::string, double> drop_per_task;  // seen task id -> specialist AUC - merged AUC
    double drop_max = 0.0;
    double gain_unseen = 0.0;                     // mean over unseen tasks
    std::map<std::string, double> gain_per_task;  // unseen task id -> merged - best specialist

    nlohmann::json to_json() const;
};

// aligned-column text table, one row per report: per-task AUC, mean AUC,
// drop_max, gain_unseen
std::string render_eval_table(const std::vector<EvalReport> & reports);

} // namespace realmerge::metrics
