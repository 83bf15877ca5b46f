// Acceptance suite. Prints one PASS/FAIL line per criterion on stdout and
// per-run details on stderr. Exit status is nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "mos/experiment.hpp"
#include "mos/kernels.hpp"
#include "mos/penalty.hpp"
#include "mos/posthoc.hpp"
#include "test_support.hpp"

using namespace mos;
namespace fs = std::filesystem;

namespace {

// Tolerances and budgets.
constexpr double kGradTolerance = 1e-4;
constexpr std::size_t kGradProbes = 50;
constexpr double kGradBudgetSeconds = 30.0;
constexpr double kClosedFormTolerance = 1e-12;
constexpr std::size_t kRandomPenaltyBatches = 10000;
constexpr std::size_t kMaximinCases = 1000;
constexpr double kOracleGrid = 0.01;
constexpr double kMaximinBudgetSeconds = 60.0;
constexpr double kArgminLift = 0.05;
constexpr double kBaselineGap = 0.03;
constexpr double kPipelineBudgetSeconds = 600.0;
constexpr double kShiftSigmas = 3.0;
constexpr std::uint64_t kSeeds[] = {0, 1, 2, 3, 4};
constexpr std::size_t kMajority = 3;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char *pattern, double a) {
    char buf[128];
    std::snprintf(buf, sizeof buf, pattern, a);
    return buf;
}

std::string slurp(const fs::path &p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

// --- 1 ----------------------------------------------------------------------

Outcome gradient_integrity() {
    const auto start = Clock::now();
    double worst = 0.0;
    std::size_t fewest_probes = kGradProbes * 10;
    std::mt19937_64 rng(2024);
    for (std::size_t k : {3u, 5u})
        for (std::size_t m : {4u, 8u})
            for (double lambda : {0.0, 0.5, 1.0}) {
                MosConfig c;
                c.experts = k;
                c.num_labels = 3;
                c.input_dim = 6;
                c.hidden_dim = 16;
                c.feature_dim = 16;
                c.seed = rng();
                const ModelParams params = init_params(c);
                const Dataset data = testing::random_dataset(m, c.input_dim, 3, rng);
                const JointLossOptions opts{1.0, lambda, set_ell(m, k)};
                GradCheckOptions check;
                check.probes = kGradProbes;
                check.seed = rng();
                const auto r = testing::check_joint_gradient(params, data, all_rows(data), opts, check);
                worst = std::max(worst, r.max_relative_error);
                fewest_probes = std::min(fewest_probes, r.probed);
                std::cerr << "  grad K=" << k << " M=" << m << " lambda=" << lambda
                          << " max_rel_err=" << r.max_relative_error << " probes=" << r.probed
                          << " rejected=" << r.rejected << '\n';
            }
    const double elapsed = seconds_since(start);
    Outcome o;
    o.pass = worst < kGradTolerance && fewest_probes >= kGradProbes && elapsed < kGradBudgetSeconds;
    o.detail = "gradient integrity: max rel err " + fmt("%.2e", worst) + " over 12 configs, >= " +
               std::to_string(fewest_probes) + " probes each, " + fmt("%.1f s", elapsed);
    return o;
}

// --- 2 ----------------------------------------------------------------------

Outcome penalty_closed_forms() {
    auto onehot = [](std::size_t k, std::size_t n) {
        Vector v(n, 0.0);
        v[k] = 1.0;
        return v;
    };
    const std::vector<Vector> distinct = {onehot(0, 2), onehot(1, 2)};
    const std::vector<Vector> same = {onehot(0, 2), onehot(0, 2)};
    const std::vector<Vector> uniform(4, Vector{0.5, 0.5});
    const double v0 = penalty(distinct, 0)->value;
    const double v1 = penalty(same, 0)->value;
    const double v2 = penalty(uniform, 1)->value;
    const double expect2 = std::sqrt(3.0) / std::sqrt(8.0);
    bool exact = std::abs(v0) <= kClosedFormTolerance && std::abs(v1 - 1.0) <= kClosedFormTolerance &&
                 std::abs(v2 - expect2) <= kClosedFormTolerance;

    std::mt19937_64 rng(7);
    std::size_t out_of_range = 0;
    for (std::size_t b = 0; b < kRandomPenaltyBatches; ++b) {
        const std::size_t k = 1 + rng() % 16, m = 2 + rng() % 63, ell = rng() % 40;
        std::vector<Vector> batch;
        for (std::size_t i = 0; i < m; ++i)
            batch.push_back(rng() % 4 == 0 ? onehot(rng() % k, k) : testing::random_simplex(k, rng));
        const double v = penalty(batch, ell)->value;
        if (!(v >= 0.0 && v <= 1.0)) ++out_of_range;
    }
    Outcome o;
    o.pass = exact && out_of_range == 0;
    o.detail = "penalty closed forms: " + fmt("%.3g", v0) + ", " + fmt("%.17g", v1) + ", " + fmt("%.17g", v2) +
               " (expect 0, 1, " + fmt("%.17g", expect2) + "); " + std::to_string(out_of_range) + " of " +
               std::to_string(kRandomPenaltyBatches) + " random batches outside [0,1]";
    return o;
}

// --- 3 ----------------------------------------------------------------------

Outcome maximin_correctness() {
    const auto start = Clock::now();
    std::mt19937_64 rng(99);
    std::size_t compared = 0, mismatches = 0, risk_violations = 0;
    for (std::size_t t = 0; t < kMaximinCases; ++t) {
        const std::size_t k = 1 + rng() % 3, y = 2 + rng() % 3;
        Tensor2 p(k, y);
        for (std::size_t i = 0; i < k; ++i) {
            const Vector row = testing::random_simplex(y, rng);
            std::copy(row.begin(), row.end(), p.row(i).begin());
        }
        const auto arg = aggregate(p, {}, DecisionRule::Argmin);
        for (std::size_t label = 0; label < y; ++label)
            if (worst_case_risk(p, arg.label) > worst_case_risk(p, label)) ++risk_violations;

        Vector scores = arg.scores;
        std::sort(scores.begin(), scores.end(), std::greater<>());
        if (scores[0] - scores[1] <= kOracleGrid) continue;
        ++compared;
        if (minimax_oracle(p, kOracleGrid).label != arg.label) ++mismatches;
    }
    const double elapsed = seconds_since(start);
    Outcome o;
    o.pass = mismatches == 0 && risk_violations == 0 && elapsed < kMaximinBudgetSeconds;
    o.detail = "maximin correctness: " + std::to_string(mismatches) + " oracle mismatches in " +
               std::to_string(compared) + " separated cases, " + std::to_string(risk_violations) +
               " worst-case-risk violations in " + std::to_string(kMaximinCases) + ", " + fmt("%.1f s", elapsed);
    return o;
}

// --- 4 ----------------------------------------------------------------------

Outcome ell_rule() {
    const std::size_t default_ell = set_ell(32, 5);
    std::size_t violations = 0;
    for (std::size_t m = 1; m <= 512; ++m)
        for (std::size_t k = 1; k <= 40; ++k) {
            const std::size_t ell = set_ell(m, k);
            const bool power = ell >= 1 && (ell & (ell - 1)) == 0;
            const bool covers = k * ell >= m;
            const bool smallest = ell == 1 || k * (ell / 2) < m;
            if (!(power && covers && smallest)) ++violations;
        }
    Outcome o;
    o.pass = default_ell == 8 && violations == 0;
    o.detail = "l rule: set_ell(32,5)=" + std::to_string(default_ell) + ", " + std::to_string(violations) +
               " property violations over M<=512, K_min<=40";
    return o;
}

// --- 5 ----------------------------------------------------------------------

Outcome sweep_logic() {
    const std::map<std::size_t, double> stage1 = {{5, 1.084}, {10, 0.560}, {15, 0.802}};
    const std::map<double, double> stage2 = {{0.5, 0.459}, {1.0, 0.671}};
    const CandidateEvaluator injected = [&](std::size_t k, double lambda, std::size_t) {
        return lambda == 0.0 ? SplitLosses{stage1.at(k), 0.0} : SplitLosses{stage2.at(lambda), 0.0};
    };
    const auto r = two_stage_search(SweepGrid{}, injected);
    Outcome o;
    o.pass = r.best_experts == 10 && r.best_lambda == 0.5;
    o.detail = "sweep logic: K*=" + std::to_string(r.best_experts) + " lambda*=" + fmt("%g", r.best_lambda) +
               " (expect 10, 0.5)";
    return o;
}

// --- 6, 7, 9 ------------------------------------------------------------------

struct SeedRun {
    double id_estimated = 0.0;
    double baseline_id = 0.0;
    std::map<std::string, double> ood;
    double id_penalty_mean = 0.0;
    double id_penalty_std = 0.0;
    double ood_penalty_mean = 0.0;
    bool ood_flagged = false;
    bool holdout_flagged = false;
};

struct PipelineResult {
    std::size_t k_star = 0;
    double lambda_star = 0.0;
    std::vector<SeedRun> runs;
    std::size_t ood_reads_during_training = 0;
    std::size_t reads_during_training = 0;
    double seconds = 0.0;
};

ExperimentConfig pipeline_config() {
    ExperimentConfig c = default_experiment();
    c.splits.push_back({"id_holdout", 2000, 0.9, {}});
    c.eval_splits = {"id_dev", "ood_test", "id_holdout"};
    return c;
}

CommandContext context(const ExperimentConfig &c, const fs::path &out, FileLayer &files, std::size_t workers = 1) {
    CommandContext ctx;
    ctx.config = c;
    ctx.config.output_dir = out.string();
    ctx.output_dir = out;
    ctx.files = &files;
    ctx.workers = workers;
    return ctx;
}

PipelineResult run_pipeline(const fs::path &root) {
    const auto start = Clock::now();
    const std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
    PipelineResult result;
    RecordingFileLayer recorder(default_file_layer());

    // Hyperparameters from the two-stage search on the first seed.
    ExperimentConfig config = pipeline_config();
    config.seed = kSeeds[0];
    const fs::path sweep_dir = root / "sweep";
    run_command("gen", context(config, sweep_dir, default_file_layer()));
    run_command("sweep", context(config, sweep_dir, recorder, workers));
    const auto sweep = Json::parse(slurp(sweep_dir / "sweep.json"));
    result.k_star = sweep.at("best_experts").get<std::size_t>();
    result.lambda_star = sweep.at("best_lambda").get<double>();
    std::cerr << "  sweep: K*=" << result.k_star << " lambda*=" << result.lambda_star << '\n';

    for (std::uint64_t seed : kSeeds) {
        ExperimentConfig c = config;
        c.seed = seed;
        c.train.model.experts = result.k_star;
        c.train.lambda = result.lambda_star;
        const fs::path dir = root / ("seed" + std::to_string(seed));
        run_command("gen", context(c, dir, default_file_layer()));
        run_command("train", context(c, dir, recorder));
        run_command("eval", context(c, dir, default_file_layer()));
        run_command("detect", context(c, dir, default_file_layer()));

        ExperimentConfig base = c;
        base.train.model.experts = 1;
        base.train.lambda = 0.0;
        const fs::path base_dir = root / ("baseline" + std::to_string(seed));
        fs::create_directories(base_dir / "data");
        for (const auto &s : c.splits)
            fs::copy_file(split_path(dir, s.name), split_path(base_dir, s.name), fs::copy_options::overwrite_existing);
        run_command("train", context(base, base_dir, recorder));
        run_command("eval", context(base, base_dir, default_file_layer()));

        SeedRun run;
        const auto eval = Json::parse(slurp(dir / "eval.json"));
        const auto detect = Json::parse(slurp(dir / "detect.json"));
        const auto base_eval = Json::parse(slurp(base_dir / "eval.json"));
        for (const auto &r : eval["reports"]) {
            const auto split = r["split"].get<std::string>();
            if (split == "id_dev") {
                run.id_estimated = r["accuracy"]["estimated"].get<double>();
                run.id_penalty_mean = r["penalty"]["mean"].get<double>();
                run.id_penalty_std = r["penalty"]["std"].get<double>();
            } else if (split == "ood_test") {
                for (const auto &[rule, acc] : r["accuracy"].items()) run.ood[rule] = acc.get<double>();
                run.ood_penalty_mean = r["penalty"]["mean"].get<double>();
            }
        }
        for (const auto &r : base_eval["reports"])
            if (r["split"] == "id_dev") run.baseline_id = r["accuracy"]["estimated"].get<double>();
        for (const auto &s : detect["splits"]) {
            if (s["split"] == "ood_test") run.ood_flagged = s["verdict"]["shifted"].get<bool>();
            if (s["split"] == "id_holdout") run.holdout_flagged = s["verdict"]["shifted"].get<bool>();
        }
        std::cerr << "  seed " << seed << ": ID est " << run.id_estimated << " (K=1 " << run.baseline_id
                  << ") | OOD est " << run.ood["estimated"] << " uniform " << run.ood["uniform"] << " argmin "
                  << run.ood["argmin"] << " | L_R ID " << run.id_penalty_mean << " +- " << run.id_penalty_std
                  << " OOD " << run.ood_penalty_mean << " | flags OOD " << run.ood_flagged << " holdout "
                  << run.holdout_flagged << '\n';
        result.runs.push_back(run);
    }
    result.ood_reads_during_training = recorder.reads_matching("ood_test");
    result.reads_during_training = recorder.reads().size();
    result.seconds = seconds_since(start);
    return result;
}

Outcome ood_recovery(const PipelineResult &p) {
    double id = 0, base = 0, est = 0, uni = 0, arg = 0;
    for (const auto &r : p.runs) {
        id += r.id_estimated;
        base += r.baseline_id;
        est += r.ood.at("estimated");
        uni += r.ood.at("uniform");
        arg += r.ood.at("argmin");
    }
    const double n = double(p.runs.size());
    id /= n, base /= n, est /= n, uni /= n, arg /= n;
    Outcome o;
    o.pass = arg >= est + kArgminLift && uni >= est && std::abs(id - base) <= kBaselineGap &&
             p.seconds < kPipelineBudgetSeconds;
    o.detail = "directional OOD recovery (K*=" + std::to_string(p.k_star) + ", lambda*=" + fmt("%g", p.lambda_star) +
               "): OOD argmin " + fmt("%.4f", arg) + " vs estimated " + fmt("%.4f", est) + " (lift " +
               fmt("%+.2f", 100 * (arg - est)) + " pts, need >= +5), uniform " + fmt("%.4f", uni) + ", ID " +
               fmt("%.4f", id) + " vs K=1 " + fmt("%.4f", base) + ", pipeline " + fmt("%.0f s", p.seconds);
    return o;
}

Outcome shift_statistic(const PipelineResult &p) {
    std::size_t separated = 0, flagged = 0, quiet = 0;
    for (const auto &r : p.runs) {
        if (std::abs(r.ood_penalty_mean - r.id_penalty_mean) >= kShiftSigmas * r.id_penalty_std) ++separated;
        if (r.ood_flagged) ++flagged;
        if (!r.holdout_flagged) ++quiet;
    }
    Outcome o;
    o.pass = separated >= kMajority && flagged >= kMajority && quiet >= kMajority;
    o.detail = "shift statistic: gap >= 3 sd in " + std::to_string(separated) + "/5 seeds, OOD flagged " +
               std::to_string(flagged) + "/5, held-out ID unflagged " + std::to_string(quiet) + "/5";
    return o;
}

Outcome ood_isolation(const PipelineResult &p) {
    Outcome o;
    o.pass = p.ood_reads_during_training == 0 && p.reads_during_training > 0;
    o.detail = "OOD isolation: " + std::to_string(p.ood_reads_during_training) + " OOD reads among " +
               std::to_string(p.reads_during_training) + " recorded reads during train and sweep";
    return o;
}

// --- 8 ----------------------------------------------------------------------

/// Output files of a run directory; manifests lose their wall-clock timings.
std::map<std::string, std::string> outputs(const fs::path &dir) {
    std::map<std::string, std::string> files;
    for (const auto &e : fs::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        const auto rel = fs::relative(e.path(), dir).generic_string();
        std::string content = slurp(e.path());
        if (rel.rfind("manifest_", 0) == 0) {
            auto j = Json::parse(content);
            j.erase("timings_ms");
            content = j.dump();
        }
        files[rel] = content;
    }
    return files;
}

Outcome determinism(const fs::path &root) {
    ExperimentConfig c = pipeline_config();
    c.seed = 11;
    c.train_from_sweep = true;
    c.sweep.experts = {5, 10};
    c.sweep.lambdas = {0.0, 0.5};
    c.sweep.repeats = 1;
    const std::size_t workers[] = {1, std::max(2u, std::thread::hardware_concurrency())};
    std::vector<std::map<std::string, std::string>> runs;
    // Same config means same output directory: snapshot, wipe and rerun.
    const fs::path dir = root / "determinism";
    for (std::size_t i = 0; i < 2; ++i) {
        fs::remove_all(dir);
        for (const char *step : {"gen", "sweep", "train", "eval", "detect", "report"})
            run_command(step, context(c, dir, default_file_layer(), workers[i]));
        runs.push_back(outputs(dir));
    }
    std::size_t differing = 0;
    for (const auto &[name, content] : runs[0]) {
        const auto it = runs[1].find(name);
        if (it == runs[1].end() || it->second != content) {
            ++differing;
            std::cerr << "  differs: " << name << '\n';
        }
    }
    Outcome o;
    o.pass = differing == 0 && runs[0].size() == runs[1].size() && !runs[0].empty();
    o.detail = "determinism: " + std::to_string(runs[0].size()) + " outputs from gen/sweep/train/eval/detect/report, " +
               std::to_string(differing) + " differ between reruns";
    return o;
}

void report(int id, const Outcome &o, int &failures) {
    std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << id << "  " << o.detail << std::endl;
    if (!o.pass) ++failures;
}

} // namespace

int main(int argc, char **argv) {
    const fs::path root = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "mos_acceptance";
    fs::remove_all(root);
    int failures = 0;
    report(1, gradient_integrity(), failures);
    report(2, penalty_closed_forms(), failures);
    report(3, maximin_correctness(), failures);
    report(4, ell_rule(), failures);
    report(5, sweep_logic(), failures);
    const PipelineResult pipeline = run_pipeline(root / "pipeline");
    report(6, ood_recovery(pipeline), failures);
    report(7, shift_statistic(pipeline), failures);
    report(8, determinism(root), failures);
    report(9, ood_isolation(pipeline), failures);
    std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
    return failures == 0 ? 0 : 1;
}
