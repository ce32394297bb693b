// realmerge command-line tool.
//
// Subcommands:
//   merge          combine specialist checkpoints into one archive
//   eval           AUC / drop / gain report from score sets
//   probe-sim      pre-logit feature similarity between two checkpoints
//   verify-theory  run the synthetic verification suite
//   protocol       end-to-end toy pipeline (train, merge, evaluate, probe)
//   inspect        dump an archive's index, metadata, and tensor norms
//
// Exit codes: 0 ok, 2 config error, 4 asserted-verdict failure, 3 any other
// data/runtime error. The resolved configuration is echoed before acting.

#include "realmerge/archive.hpp"
#include "realmerge/errors.hpp"
#include "realmerge/merge.hpp"
#include "realmerge/metrics.hpp"
#include "realmerge/task_vector.hpp"
#include "realmerge/theory.hpp"
#include "realmerge/toy.hpp"
#include "realmerge/toy_model.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

using nlohmann::json;
using namespace realmerge;

namespace {

struct Timer {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

    double elapsed_ms() const {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    }
};

json load_json_file(const std::string & path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(errc::io_error, "cannot open " + path);
    }
    json j;
    try {
        in >> j;
    } catch (const json::exception & e) {
        throw Error(errc::malformed_header, path + ": " + e.what());
    }
    return j;
}

void write_text_file(const std::string & path, const std::string & text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error(errc::io_error, "cannot open " + path + " for writing");
    }
    out << text;
    if (!out) {
        throw Error(errc::io_error, "short write to " + path);
    }
}

size_t env_threads() {
    const char * v = std::getenv("REALMERGE_THREADS");
    if (v == nullptr || *v == '\0') {
        return 1;
    }
    char * end = nullptr;
    unsigned long n = std::strtoul(v, &end, 10);
    if (end == nullptr || *end != '\0' || n == 0) {
        throw Error(errc::bad_argument, "REALMERGE_THREADS must be a positive integer");
    }
    return (size_t) n;
}

std::vector<double> json_score_list(const json & j, const std::string & key) {
    if (!j.contains(key) || !j.at(key).is_array()) {
        throw Error(errc::bad_argument, "score set needs a \"" + key + "\" array");
    }
    std::vector<double> out;
    for (const auto & v : j.at(key)) {
        if (!v.is_number()) {
            throw Error(errc::bad_argument, "\"" + key + "\" must contain only numbers");
        }
        out.push_back(v.get<double>());
    }
    return out;
}

// dataset JSON: {"input_dim": n, "samples": [{"x": [...], "label": 0|1, "family": "..."}]}
toy::Dataset load_dataset_json(const std::string & path) {
    json j = load_json_file(path);
    toy::Dataset data;
    if (!j.is_object() || !j.contains("input_dim") || !j.contains("samples")) {
        throw Error(errc::bad_argument, path + ": dataset needs input_dim and samples");
    }
    data.input_dim = j.at("input_dim").get<size_t>();
    for (const auto & js : j.at("samples")) {
        toy::Sample s;
        for (const auto & v : js.at("x")) {
            s.x.push_back(v.get<double>());
        }
        if (s.x.size() != data.input_dim) {
            throw Error(errc::shape_mismatch, path + ": sample x length != input_dim");
        }
        s.label = js.at("label").get<int>();
        if (s.label != 0 && s.label != 1) {
            throw Error(errc::bad_argument, path + ": labels must be 0 or 1");
        }
        if (js.contains("family")) {
            s.family = js.at("family").get<std::string>();
        }
        data.samples.push_back(std::move(s));
    }
    return data;
}

// flags > config JSON > defaults; `given` reports which flags the user set
MergeConfig resolve_merge_config(const CLI::App * cmd, const std::string & config_path,
                                 const std::string & method, double alpha, double rank_frac, size_t k,
                                 double sparsity, const std::string & eta_variant, double eps,
                                 bool paper_anchor, size_t threads) {
    MergeConfig cfg;
    if (!config_path.empty()) {
        cfg = MergeConfig::from_json(load_json_file(config_path));
    }
    if (cmd->count("--method") > 0) {
        cfg.method = merge_method_from_name(method);
    }
    if (cmd->count("--alpha") > 0) {
        cfg.alpha = alpha;
    }
    if (cmd->count("--rank-frac") > 0) {
        cfg.rank_frac = rank_frac;
    }
    if (cmd->count("--k") > 0) {
        cfg.k = k;
    }
    if (cmd->count("--sparsity") > 0) {
        cfg.sparsity_p = sparsity;
    }
    if (cmd->count("--eta-variant") > 0) {
        cfg.eta_variant = eta_variant_from_name(eta_variant);
    }
    if (cmd->count("--eps") > 0) {
        cfg.eps = eps;
    }
    if (cmd->count("--paper-anchor") > 0) {
        cfg.paper_anchor = paper_anchor;
    }
    if (cmd->count("--threads") > 0) {
        cfg.threads = threads;
    } else if (config_path.empty() || cfg.threads == 1) {
        cfg.threads = env_threads();
    }
    cfg.validate();
    return cfg;
}

void echo_config(const json & j) {
    std::printf("config: %s\n", j.dump().c_str());
}

int cmd_merge(const CLI::App * cmd, const std::string & config_path, const std::string & method,
              double alpha, double rank_frac, size_t k, double sparsity, const std::string & eta_variant,
              double eps, bool paper_anchor, size_t threads, const std::string & base_path,
              const std::vector<std::string> & specialist_paths, const std::string & out_path,
              bool deterministic) {
    MergeConfig cfg = resolve_merge_config(cmd, config_path, method, alpha, rank_frac, k, sparsity,
                                           eta_variant, eps, paper_anchor, threads);
    echo_config(cfg.to_json());
    for (const std::string & flag : cfg.off_grid_flags()) {
        std::printf("note: %s\n", flag.c_str());
    }
    if (cfg.method == MergeMethod::ties) {
        std::printf("ties variant: %s\n",
                    cfg.paper_anchor ? "paper-anchor (tau_bar + surviving sign-filtered sums)"
                                     : "disjoint-mean (base anchor)");
    }

    Timer timer;
    TensorArchive base = load_archive(base_path);
    std::vector<TensorArchive> specialists;
    specialists.reserve(specialist_paths.size());
    for (const std::string & p : specialist_paths) {
        specialists.push_back(load_archive(p));
    }
    std::vector<const TensorArchive *> ptrs;
    for (const TensorArchive & s : specialists) {
        ptrs.push_back(&s);
    }

    CoreDecomposition decomp;
    TensorArchive merged = merge_models(base, ptrs, cfg, &decomp);

    if (cfg.method == MergeMethod::r2m) {
        std::printf("r2m: ||tau_core|| = %.6g  m_mean = %.6g  eta = %.6g%s\n", vnorm(decomp.tau_core),
                    decomp.m_mean, decomp.eta, decomp.degenerate ? "  (degenerate: core = tau_bar)" : "");
        for (const LayerSlice & s : layout_slices(decomp.tau_bar)) {
            size_t full = std::min(s.rows, s.cols);
            std::printf("r2m rank: %-16s %zu x %zu -> keep %zu of %zu\n", s.name.c_str(), s.rows, s.cols,
                        slice_rank(cfg.rank_frac, s.rows, s.cols), full);
        }
    }

    save_archive(merged, out_path);
    std::printf("merged %zu specialists -> %s (%zu tensors)\n", specialists.size(), out_path.c_str(),
                merged.tensor_count());
    if (!deterministic) {
        std::printf("elapsed: %.1f ms\n", timer.elapsed_ms());
    }
    return 0;
}

// score-set JSON, either a single {"fake": [...], "real": [...]} pair or
//   {"tasks": {id: {"fake", "real", "specialist_auc"?}},
//    "unseen": {id: {"fake", "real", "specialist_auc": [..]}},
//    "method_id"?}
int cmd_eval(const std::string & scores_path, const std::string & out_path) {
    json j = load_json_file(scores_path);
    echo_config(json{{"scores", scores_path}});

    if (j.contains("fake") || j.contains("real")) {
        double a = metrics::auc(json_score_list(j, "fake"), json_score_list(j, "real"));
        std::printf("auc %.4f\n", a);
        if (!out_path.empty()) {
            write_text_file(out_path, json{{"auc", a}}.dump(2) + "\n");
        }
        return 0;
    }
    if (!j.contains("tasks") || !j.at("tasks").is_object()) {
        throw Error(errc::bad_argument, "score file needs fake/real arrays or a tasks object");
    }

    metrics::EvalReport report;
    report.method_id = j.value("method_id", "eval");
    std::vector<double> drops;
    for (const auto & [task, js] : j.at("tasks").items()) {
        double a = metrics::auc(json_score_list(js, "fake"), json_score_list(js, "real"));
        report.auc_per_task[task] = a;
        if (js.contains("specialist_auc")) {
            report.drop_per_task[task] = metrics::drop(js.at("specialist_auc").get<double>(), a);
            drops.push_back(report.drop_per_task[task]);
        }
    }
    if (!drops.empty()) {
        report.drop_max = metrics::drop_max(drops);
    }
    if (j.contains("unseen")) {
        double sum = 0.0;
        for (const auto & [task, js] : j.at("unseen").items()) {
            double a = metrics::auc(json_score_list(js, "fake"), json_score_list(js, "real"));
            std::vector<double> spec;
            for (const auto & v : js.at("specialist_auc")) {
                spec.push_back(v.get<double>());
            }
            report.gain_per_task[task] = metrics::gain_unseen(a, spec);
            sum += report.gain_per_task[task];
        }
        report.gain_unseen = sum / (double) j.at("unseen").size();
    }

    std::printf("%s", metrics::render_eval_table({report}).c_str());
    if (!out_path.empty()) {
        write_text_file(out_path, report.to_json().dump(2) + "\n");
    }
    return 0;
}

int cmd_probe_sim(const std::string & model_a_path, const std::string & model_b_path,
                  const std::string & data_path, const std::string & tag_name, size_t threads) {
    echo_config(json{{"model_a", model_a_path},
                     {"model_b", model_b_path},
                     {"data", data_path},
                     {"tag", tag_name},
                     {"threads", threads}});
    TensorArchive model_a = load_archive(model_a_path);
    TensorArchive model_b = load_archive(model_b_path);
    toy::Dataset data = load_dataset_json(data_path);

    std::vector<metrics::ClassTag> tags;
    if (tag_name == "all") {
        tags = {metrics::ClassTag::real, metrics::ClassTag::own_fake, metrics::ClassTag::other_fake};
    } else if (tag_name == "real") {
        tags = {metrics::ClassTag::real};
    } else if (tag_name == "own-fake") {
        tags = {metrics::ClassTag::own_fake};
    } else if (tag_name == "other-fake") {
        tags = {metrics::ClassTag::other_fake};
    } else {
        throw Error(errc::bad_argument, "unknown tag: " + tag_name);
    }

    for (metrics::ClassTag tag : tags) {
        metrics::SimilarityResult r = metrics::feature_similarity(model_a, model_b, data, tag, threads);
        std::printf("%-10s  cos %.4f  (n=%zu", metrics::class_tag_name(tag), r.mean_cos, r.used);
        if (r.zero_excluded > 0) {
            std::printf(", %zu zero-norm excluded", r.zero_excluded);
        }
        std::printf(")\n");
    }
    return 0;
}

int cmd_verify_theory(const CLI::App * cmd, const std::string & config_path, size_t n, size_t d, size_t p,
                      double sigma_a, double sigma_z, double alpha, double rank_frac, size_t k,
                      double gap_perturb, double head_perturb, uint64_t seed, const std::string & out_path,
                      bool deterministic) {
    theory::TheorySuiteConfig cfg;
    if (!config_path.empty()) {
        cfg = theory::TheorySuiteConfig::from_json(load_json_file(config_path));
    }
    if (cmd->count("--n") > 0) {
        cfg.n = n;
    }
    if (cmd->count("--d") > 0) {
        cfg.d = d;
    }
    if (cmd->count("--p") > 0) {
        cfg.p = p;
    }
    if (cmd->count("--sigma-a") > 0) {
        cfg.sigma_a = sigma_a;
    }
    if (cmd->count("--sigma-z") > 0) {
        cfg.sigma_z = sigma_z;
    }
    if (cmd->count("--alpha") > 0) {
        cfg.alpha = alpha;
    }
    if (cmd->count("--rank-frac") > 0) {
        cfg.rank_frac = rank_frac;
    }
    if (cmd->count("--k") > 0) {
        cfg.k = k;
    }
    if (cmd->count("--gap-perturb") > 0) {
        cfg.gap_perturb = gap_perturb;
    }
    if (cmd->count("--head-perturb") > 0) {
        cfg.head_perturb = head_perturb;
    }
    if (cmd->count("--seed") > 0) {
        cfg.seed = seed;
    }
    echo_config(cfg.to_json());

    Timer timer;
    theory::TheoryReport report = theory::run_theory_suite(cfg);
    std::printf("%s", report.render_table().c_str());
    if (!out_path.empty()) {
        write_text_file(out_path, report.to_json().dump(2) + "\n");
    }
    if (!deterministic) {
        std::printf("elapsed: %.1f ms\n", timer.elapsed_ms());
    }
    return report.all_pass() ? 0 : 4;
}

int cmd_protocol(const CLI::App * cmd, const std::string & config_path, size_t n_seen, size_t n_unseen,
                 size_t n_train, size_t n_test, size_t epochs, double step_size, double cue_strength,
                 double noise_scale, double stable_scale, double weight_decay, double head_decay,
                 const std::string & decay_curve, double max_final_loss, uint64_t seed, bool incremental,
                 size_t threads, const std::string & out_dir, bool deterministic) {
    toy::ProtocolConfig cfg;
    if (!config_path.empty()) {
        cfg = toy::ProtocolConfig::from_json(load_json_file(config_path));
    }
    if (cmd->count("--n-seen") > 0) {
        cfg.n_seen = n_seen;
    }
    if (cmd->count("--n-unseen") > 0) {
        cfg.n_unseen = n_unseen;
    }
    if (cmd->count("--n-train") > 0) {
        cfg.n_train = n_train;
    }
    if (cmd->count("--n-test") > 0) {
        cfg.n_test = n_test;
    }
    if (cmd->count("--epochs") > 0) {
        cfg.epochs = epochs;
    }
    if (cmd->count("--step") > 0) {
        cfg.step_size = step_size;
    }
    if (cmd->count("--cue-strength") > 0) {
        cfg.cue_strength = cue_strength;
    }
    if (cmd->count("--noise-scale") > 0) {
        cfg.noise_scale = noise_scale;
    }
    if (cmd->count("--stable-scale") > 0) {
        cfg.stable_scale = stable_scale;
    }
    if (cmd->count("--weight-decay") > 0) {
        cfg.weight_decay = weight_decay;
    }
    if (cmd->count("--head-decay") > 0) {
        cfg.head_decay = head_decay;
    }
    if (cmd->count("--decay-curve") > 0) {
        cfg.decay_curve.clear();
        std::stringstream ss(decay_curve);
        std::string piece;
        while (std::getline(ss, piece, ',')) {
            cfg.decay_curve.push_back(std::stod(piece));
        }
    }
    if (cmd->count("--max-final-loss") > 0) {
        cfg.max_final_loss = max_final_loss;
    }
    if (cmd->count("--seed") > 0) {
        cfg.seed = seed;
    }
    if (cmd->count("--incremental") > 0) {
        cfg.incremental = incremental;
    }
    if (cmd->count("--threads") > 0) {
        cfg.threads = threads;
    } else if (cfg.threads == 1) {
        cfg.threads = env_threads();
    }
    echo_config(cfg.to_json());

    Timer timer;
    toy::ProtocolResult result = toy::run_protocol(cfg, out_dir);
    std::printf("%s\n%s", result.table.c_str(), result.similarity_table.c_str());
    if (!result.incremental_reports.empty()) {
        std::printf("\nafter integrating %s:\n%s", result.unseen_families.front().c_str(),
                    metrics::render_eval_table(result.incremental_reports).c_str());
    }
    if (!out_dir.empty()) {
        std::printf("wrote %zu files under %s\n", result.written_files.size(), out_dir.c_str());
    }
    if (!deterministic) {
        std::printf("elapsed: %.1f ms\n", timer.elapsed_ms());
    }
    return 0;
}

int cmd_inspect(const std::string & path) {
    TensorArchive a = load_archive(path);
    std::printf("%s: %zu tensors\n", path.c_str(), a.tensor_count());
    for (const auto & [name, entry] : a.entries()) {
        std::string shape = "[";
        for (size_t i = 0; i < entry.shape.size(); ++i) {
            shape += (i > 0 ? "," : "") + std::to_string(entry.shape[i]);
        }
        shape += "]";
        double norm2 = 0.0;
        for (double v : entry.data) {
            norm2 += v * v;
        }
        std::printf("  %-20s f32 %-12s %-9s numel=%-8zu norm=%.6g\n", name.c_str(), shape.c_str(),
                    role_name(entry.role), entry.numel(), std::sqrt(norm2));
    }
    for (const auto & [key, value] : a.meta()) {
        std::printf("  meta %s = %s\n", key.c_str(), value.c_str());
    }
    return 0;
}

} // namespace

int main(int argc, char ** argv) {
    CLI::App app{"training-free checkpoint merging toolkit"};
    app.require_subcommand(1);

    // shared flag storage; each subcommand registers the flags it honors
    std::string config_path;
    std::string method = "r2m";
    double alpha = 0.5;
    double rank_frac = 0.7;
    size_t k = 1;
    double sparsity = 0.5;
    std::string eta_variant = "core-over-res-norm";
    double eps = 1e-12;
    bool paper_anchor = false;
    size_t threads = 1;
    uint64_t seed = 1;
    bool deterministic = false;

    std::string base_path;
    std::vector<std::string> specialist_paths;
    std::string out_path;

    CLI::App * merge = app.add_subcommand("merge", "merge specialist checkpoints");
    merge->add_option("--base", base_path, "base checkpoint archive")->required();
    merge->add_option("specialists", specialist_paths, "specialist archives")->required();
    merge->add_option("--method", method, "wa | ta | ties | cart | r2m");
    merge->add_option("--alpha", alpha, "global scale (ta/cart/r2m)");
    merge->add_option("--rank-frac", rank_frac, "per-slice retained rank fraction");
    merge->add_option("--k", k, "shared-subspace dimension");
    merge->add_option("--sparsity", sparsity, "ties trim fraction");
    merge->add_option("--eta-variant", eta_variant, "core-norm | core-over-res-norm");
    merge->add_option("--eps", eps, "norm-matching floor");
    merge->add_flag("--paper-anchor", paper_anchor, "ties: anchor at tau_bar plus surviving sums");
    merge->add_option("--threads", threads, "worker cap (REALMERGE_THREADS fallback)");
    merge->add_option("--config", config_path, "JSON merge config (flags override)");
    merge->add_option("--out", out_path, "output archive path")->required();
    merge->add_flag("--deterministic", deterministic, "suppress timing lines");

    std::string scores_path;
    CLI::App * eval = app.add_subcommand("eval", "AUC / drop / gain report from score sets");
    eval->add_option("--scores", scores_path, "score-set JSON")->required();
    eval->add_option("--out", out_path, "write the report JSON here");

    std::string model_a_path;
    std::string model_b_path;
    std::string data_path;
    std::string tag_name = "all";
    CLI::App * probe = app.add_subcommand("probe-sim", "pre-logit feature similarity probe");
    probe->add_option("--model-a", model_a_path, "checkpoint whose family_id anchors own/other")->required();
    probe->add_option("--model-b", model_b_path, "reference checkpoint")->required();
    probe->add_option("--data", data_path, "dataset JSON")->required();
    probe->add_option("--tag", tag_name, "real | own-fake | other-fake | all");
    probe->add_option("--threads", threads, "worker cap (REALMERGE_THREADS fallback)");

    size_t vt_n = 6;
    size_t vt_d = 8;
    size_t vt_p = 16;
    double sigma_a = 1.0;
    double sigma_z = 0.02;
    double gap_perturb = 0.0;
    double head_perturb = 0.0;
    CLI::App * verify = app.add_subcommand("verify-theory", "run the synthetic verification suite");
    verify->add_option("--n", vt_n, "tasks");
    verify->add_option("--d", vt_d, "slice rows");
    verify->add_option("--p", vt_p, "slice cols");
    verify->add_option("--sigma-a", sigma_a, "planted-coefficient scale");
    verify->add_option("--sigma-z", sigma_z, "noise scale");
    verify->add_option("--alpha", alpha, "merge alpha");
    verify->add_option("--rank-frac", rank_frac, "merge rank fraction");
    verify->add_option("--k", k, "shared-subspace dimension");
    verify->add_option("--gap-perturb", gap_perturb, "per-task gap deviation");
    verify->add_option("--head-perturb", head_perturb, "head collinearity deviation (0 = exact)");
    verify->add_option("--seed", seed, "suite seed");
    verify->add_option("--config", config_path, "JSON suite config (flags override)");
    verify->add_option("--out", out_path, "write the report JSON here");
    verify->add_flag("--deterministic", deterministic, "suppress timing lines");

    size_t n_seen = 3;
    size_t n_unseen = 2;
    size_t n_train = 128;
    size_t n_test = 512;
    size_t epochs = 300;
    double step_size = 0.4;
    double cue_strength = 2.0;
    double noise_scale = 1.0;
    double stable_scale = 0.25;
    double weight_decay = 0.6;
    double head_decay = 5.0;
    std::string decay_curve = "1.0,0.1,0.05";
    double max_final_loss = 0.75;
    bool incremental = false;
    std::string out_dir;
    CLI::App * protocol = app.add_subcommand("protocol", "run the toy pipeline end to end");
    protocol->add_option("--n-seen", n_seen, "seen generator families");
    protocol->add_option("--n-unseen", n_unseen, "held-out families");
    protocol->add_option("--n-train", n_train, "training samples per class");
    protocol->add_option("--n-test", n_test, "test samples per class");
    protocol->add_option("--epochs", epochs, "gradient steps");
    protocol->add_option("--step", step_size, "gradient step size");
    protocol->add_option("--cue-strength", cue_strength, "fake cue shift");
    protocol->add_option("--noise-scale", noise_scale, "input noise scale");
    protocol->add_option("--stable-scale", stable_scale, "real-manifold noise std along the stable axis");
    protocol->add_option("--weight-decay", weight_decay, "proximal pull toward the base");
    protocol->add_option("--head-decay", head_decay, "proximal pull on the head tensors");
    protocol->add_option("--decay-curve", decay_curve,
                         "comma-separated weight-decay multipliers across seen positions");
    protocol->add_option("--max-final-loss", max_final_loss, "reject specialists finishing above this loss");
    protocol->add_option("--seed", seed, "protocol seed");
    protocol->add_flag("--incremental", incremental, "integrate the first unseen family by re-merging");
    protocol->add_option("--threads", threads, "worker cap (REALMERGE_THREADS fallback)");
    protocol->add_option("--config", config_path, "JSON protocol config (flags override)");
    protocol->add_option("--out-dir", out_dir, "write archives, reports, and tables here");
    protocol->add_flag("--deterministic", deterministic, "suppress timing lines");

    std::string inspect_path;
    CLI::App * inspect = app.add_subcommand("inspect", "dump archive index, metadata, and norms");
    inspect->add_option("archive", inspect_path, "archive path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError & e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (merge->parsed()) {
            return cmd_merge(merge, config_path, method, alpha, rank_frac, k, sparsity, eta_variant, eps,
                             paper_anchor, threads, base_path, specialist_paths, out_path, deterministic);
        }
        if (eval->parsed()) {
            return cmd_eval(scores_path, out_path);
        }
        if (probe->parsed()) {
            size_t t = probe->count("--threads") > 0 ? threads : env_threads();
            return cmd_probe_sim(model_a_path, model_b_path, data_path, tag_name, t);
        }
        if (verify->parsed()) {
            return cmd_verify_theory(verify, config_path, vt_n, vt_d, vt_p, sigma_a, sigma_z, alpha,
                                     rank_frac, k, gap_perturb, head_perturb, seed, out_path, deterministic);
        }
        if (protocol->parsed()) {
            return cmd_protocol(protocol, config_path, n_seen, n_unseen, n_train, n_test, epochs, step_size,
                                cue_strength, noise_scale, stable_scale, weight_decay, head_decay, decay_curve,
                                max_final_loss, seed, incremental, threads, out_dir, deterministic);
        }
        if (inspect->parsed()) {
            return cmd_inspect(inspect_path);
        }
    } catch (const Error & e) {
        std::fprintf(stderr, "error (%s): %s\n", errc_name(e.code()), e.what());
        switch (e.code()) {
            case errc::bad_argument:
                return 2;
            case errc::verdict_failure:
                return 4;
            default:
                return 3;
        }
    } catch (const std::exception & e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
    return 2;
}
