#include "mos/experiment.hpp"

#include <algorithm>
#include <cctype>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>

#include "mos/errors.hpp"
#include "mos/eval.hpp"

namespace mos {

void ExperimentConfig::validate() const {
    if (schema_version != kExperimentSchemaVersion)
        throw ConfigError("config: unsupported schema_version " + std::to_string(schema_version));
    generator.validate();
    std::set<std::string> names;
    for (const auto &s : splits) {
        s.validate(generator);
        if (!names.insert(s.name).second) throw ConfigError("config: duplicate split '" + s.name + "'");
    }
    auto require_split = [&](const std::string &name, const char *role) {
        if (!names.contains(name)) throw ConfigError(std::string("config: ") + role + " split '" + name + "' not defined");
    };
    require_split(train_split, "train");
    require_split(dev_split, "dev");
    for (const auto &s : eval_splits) require_split(s, "eval");
    for (const auto &s : ood_splits) {
        if (s == train_split || s == dev_split)
            throw ConfigError("config: split '" + s + "' cannot be both OOD and a training/dev split");
    }
    if (rules.empty()) throw ConfigError("config: at least one decision rule is required");
    train.validate();
    if (sweep.experts.empty() || sweep.lambdas.empty() || sweep.repeats == 0)
        throw ConfigError("config: sweep grids must be nonempty");
    for (auto k : sweep.experts)
        if (k < 1 || k > kMaxExperts) throw ConfigError("config: sweep expert count out of range");
    if (!(shift_multiplier > 0.0)) throw ConfigError("config: shift_multiplier must be positive");
    if (checkpoint_format != "json" && checkpoint_format != "binary")
        throw ConfigError("config: checkpoint_format must be json or binary");
    if (output_dir.empty()) throw ConfigError("config: output_dir must not be empty");
}

ExperimentConfig default_experiment() {
    ExperimentConfig c;
    c.train.model.input_dim = c.generator.feature_dim();
    c.train.model.num_labels = c.generator.num_labels;
    return c;
}

Json experiment_to_json(const ExperimentConfig &c) {
    std::vector<std::string> rules;
    for (auto r : c.rules) rules.emplace_back(rule_name(r));
    return Json{{"schema_version", c.schema_version},
                {"seed", c.seed},
                {"output_dir", c.output_dir},
                {"generator", c.generator},
                {"splits", c.splits},
                {"train_split", c.train_split},
                {"dev_split", c.dev_split},
                {"ood_splits", c.ood_splits},
                {"eval_splits", c.eval_splits},
                {"rules", rules},
                {"train", c.train},
                {"train_from_sweep", c.train_from_sweep},
                {"sweep", c.sweep},
                {"shift_multiplier", c.shift_multiplier},
                {"control_rule", std::string(rule_name(c.control_rule))},
                {"checkpoint_format", c.checkpoint_format}};
}

ExperimentConfig experiment_from_json(const Json &j) {
    if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
    ExperimentConfig c = default_experiment();
    try {
        c.schema_version = j.value("schema_version", c.schema_version);
        c.seed = j.value("seed", c.seed);
        c.output_dir = j.value("output_dir", c.output_dir);
        if (j.contains("generator")) c.generator = j.at("generator").get<GeneratorConfig>();
        if (j.contains("splits")) c.splits = j.at("splits").get<std::vector<SplitSpec>>();
        c.train_split = j.value("train_split", c.train_split);
        c.dev_split = j.value("dev_split", c.dev_split);
        c.ood_splits = j.value("ood_splits", c.ood_splits);
        c.eval_splits = j.value("eval_splits", c.eval_splits);
        if (j.contains("rules")) {
            c.rules.clear();
            for (const auto &r : j.at("rules")) c.rules.push_back(parse_rule(r.get<std::string>()));
        }
        if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
        c.train_from_sweep = j.value("train_from_sweep", c.train_from_sweep);
        if (j.contains("sweep")) c.sweep = j.at("sweep").get<SweepGrid>();
        c.shift_multiplier = j.value("shift_multiplier", c.shift_multiplier);
        if (j.contains("control_rule")) c.control_rule = parse_rule(j.at("control_rule").get<std::string>());
        c.checkpoint_format = j.value("checkpoint_format", c.checkpoint_format);
    } catch (const Json::exception &e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return c;
}

void apply_override(Json &doc, const std::string &assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects path.to.field=value, got '" + assignment + "'");
    const std::string path = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);

    Json value;
    try {
        value = Json::parse(raw);
    } catch (const Json::exception &) {
        value = raw;
    }

    Json *node = &doc;
    std::istringstream parts(path);
    std::string key;
    std::vector<std::string> keys;
    while (std::getline(parts, key, '.')) keys.push_back(key);
    for (std::size_t i = 0; i < keys.size(); ++i) {
        const auto &k = keys[i];
        const bool last = i + 1 == keys.size();
        if (node->is_array()) {
            if (k.empty() || !std::all_of(k.begin(), k.end(), [](unsigned char ch) { return std::isdigit(ch); }))
                throw ConfigError("--set: '" + k + "' is not an array index in '" + path + "'");
            const auto idx = std::stoul(k);
            if (idx >= node->size()) throw ConfigError("--set: index " + k + " out of range in '" + path + "'");
            node = &(*node)[idx];
        } else {
            if (!node->is_object()) *node = Json::object();
            node = &(*node)[k];
        }
        if (last) *node = value;
    }
}

std::string hex64(std::uint64_t value) {
    static const char *digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[value & 0xf];
        value >>= 4;
    }
    return out;
}

std::uint64_t config_hash(const ExperimentConfig &config) {
    const std::string text = experiment_to_json(config).dump();
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

ExperimentConfig resolve(const ExperimentConfig &config) {
    ExperimentConfig c = config;
    c.generator.seed = derive_seed(c.seed, "gen");
    c.train.seed = derive_seed(c.seed, "train");
    c.train.model.input_dim = c.generator.feature_dim();
    c.train.model.num_labels = c.generator.num_labels;
    if (!c.train.ell && !c.train.ell_k_min && !c.sweep.experts.empty())
        c.train.ell_k_min = *std::min_element(c.sweep.experts.begin(), c.sweep.experts.end());
    c.validate();
    return c;
}

Json manifest_to_json(const RunManifest &m) {
    return Json{{"command", m.command},     {"config_hash", m.config_hash}, {"tool_version", m.tool_version},
                {"seeds", m.seeds},         {"files", m.files},             {"timings_ms", m.timings_ms}};
}

std::filesystem::path split_path(const std::filesystem::path &out, const std::string &split) {
    return out / "data" / (split + ".csv");
}

std::filesystem::path checkpoint_path(const std::filesystem::path &out, const std::string &format) {
    return out / (format == "binary" ? "model.bin" : "model.json");
}

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

struct Step {
    const CommandContext &ctx;
    ExperimentConfig config;
    RunManifest manifest;
    Clock::time_point start = Clock::now();

    Step(const CommandContext &c, const std::string &command) : ctx(c), config(resolve(c.config)) {
        if (!ctx.files) throw UsageError("command context has no file layer");
        manifest.command = command;
        manifest.config_hash = hex64(config_hash(ctx.config));
        manifest.seeds["global"] = config.seed;
    }

    void log(const std::string &line) const {
        if (ctx.log) *ctx.log << line << '\n';
    }

    std::string read(const std::filesystem::path &path) const {
        if (!ctx.files->exists(path)) throw MissingFileError("required input '" + path.string() + "' does not exist");
        return ctx.files->read(path);
    }

    void write(const std::filesystem::path &path, const std::string &content) {
        ctx.files->write(path, content);
        manifest.files.push_back(std::filesystem::relative(path, ctx.output_dir).generic_string());
    }

    void write_json(const std::filesystem::path &path, const Json &j) { write(path, j.dump(2) + "\n"); }

    bool is_ood(const std::string &split) const {
        return std::find(config.ood_splits.begin(), config.ood_splits.end(), split) != config.ood_splits.end();
    }

    Dataset load_split(const std::string &split) const {
        return dataset_from_csv(read(split_path(ctx.output_dir, split)), &config.generator).data;
    }

    /// Only the train and dev splits are reachable from here.
    Dataset load_training_split(const std::string &split) const {
        if (is_ood(split)) throw UsageError("training steps must not read OOD split '" + split + "'");
        return load_split(split);
    }

    ModelParams load_model() const {
        return checkpoint_from_bytes(read(checkpoint_path(ctx.output_dir, config.checkpoint_format)));
    }

    RunManifest finish() {
        manifest.timings_ms["total"] = elapsed_ms(start);
        return manifest;
    }
};

TrainConfig training_config(const Step &step) {
    TrainConfig tc = step.config.train;
    if (step.config.train_from_sweep) {
        const auto sweep = Json::parse(step.read(step.ctx.output_dir / "sweep.json"));
        tc.model.experts = sweep.at("best_experts").get<std::size_t>();
        tc.lambda = sweep.at("best_lambda").get<double>();
    }
    return tc;
}

std::size_t eval_ell(const ExperimentConfig &config, const ModelParams &model) {
    TrainConfig tc = config.train;
    tc.model.experts = model.config.experts;
    return tc.resolved_ell();
}

} // namespace

std::string matrix_to_csv(const Tensor2 &m, const std::string &row_label, const std::vector<std::string> &cols) {
    std::string out = row_label;
    for (const auto &c : cols) out += "," + c;
    out += '\n';
    for (std::size_t r = 0; r < m.rows; ++r) {
        out += std::to_string(r);
        for (double v : m.row(r)) out += "," + format_double(v);
        out += '\n';
    }
    return out;
}

std::string reports_to_csv(const std::vector<SplitReport> &reports) {
    std::string out = "split,rule,accuracy,penalty_mean,penalty_std,penalty_batches\n";
    for (const auto &r : reports)
        for (const auto &[rule, acc] : r.accuracy)
            out += r.split + "," + std::string(rule_name(rule)) + "," + format_double(acc) + "," +
                   format_double(r.penalty.mean) + "," + format_double(r.penalty.std) + "," +
                   std::to_string(r.penalty.batches) + "\n";
    return out;
}

RunManifest run_gen(const CommandContext &ctx) {
    Step step(ctx, "gen");
    // Validate every split before anything is written.
    for (const auto &s : step.config.splits) s.validate(step.config.generator);
    step.manifest.seeds["gen"] = step.config.generator.seed;

    const Generator generator(step.config.generator);
    step.log("gen: core noise " + format_double(generator.core_noise()));
    for (const auto &spec : step.config.splits) {
        const Dataset data = generator.sample(spec);
        DatasetHeader header{spec.name, step.config.generator.seed, step.config.generator};
        step.write(split_path(ctx.output_dir, spec.name), dataset_to_csv(data, header));
        step.log("gen: wrote " + spec.name + " (" + std::to_string(data.size()) + " rows)");
    }
    return step.finish();
}

RunManifest run_train(const CommandContext &ctx) {
    Step step(ctx, "train");
    const TrainConfig tc = training_config(step);
    step.manifest.seeds["train"] = tc.seed;
    const Dataset train = step.load_training_split(step.config.train_split);
    const Dataset dev = step.load_training_split(step.config.dev_split);

    const auto fitted = fit(tc, train, dev, ctx.log);
    const auto path = checkpoint_path(ctx.output_dir, step.config.checkpoint_format);
    step.write(path, step.config.checkpoint_format == "binary" ? checkpoint_to_binary(fitted.model)
                                                               : checkpoint_to_json(fitted.model));
    Json history = fitted.history;
    history["config"] = tc;
    step.write_json(ctx.output_dir / "train_history.json", history);
    return step.finish();
}

RunManifest run_sweep(const CommandContext &ctx) {
    Step step(ctx, "sweep");
    TrainConfig base = step.config.train;
    base.seed = derive_seed(step.config.seed, "sweep");
    step.manifest.seeds["sweep"] = base.seed;
    const Dataset train = step.load_training_split(step.config.train_split);
    const Dataset dev = step.load_training_split(step.config.dev_split);

    const auto evaluator = training_evaluator(base, step.config.sweep, train, dev);
    std::mutex log_mutex;
    auto logged = [&](std::size_t k, double lambda, std::size_t repeat) {
        const auto losses = evaluator(k, lambda, repeat);
        const std::lock_guard lock(log_mutex);
        step.log("sweep: K=" + std::to_string(k) + " lambda=" + format_double(lambda) + " repeat=" +
                 std::to_string(repeat) + " dev L_C+L_R=" + format_double(losses.sum()));
        return losses;
    };
    const auto result = two_stage_search(step.config.sweep, logged, ctx.workers);
    step.write_json(ctx.output_dir / "sweep.json", result);

    std::string csv = "stage,experts,lambda,classification,penalty,sum\n";
    auto rows = [&](const char *stage, const std::vector<SweepCandidate> &cs) {
        for (const auto &c : cs)
            csv += std::string(stage) + "," + std::to_string(c.experts) + "," + format_double(c.lambda) + "," +
                   format_double(c.losses.classification) + "," + format_double(c.losses.penalty) + "," +
                   format_double(c.losses.sum()) + "\n";
    };
    rows("1", result.stage1);
    rows("2", result.stage2);
    step.write(ctx.output_dir / "sweep.csv", csv);
    return step.finish();
}

RunManifest run_eval(const CommandContext &ctx) {
    Step step(ctx, "eval");
    const ModelParams model = step.load_model();
    ReportOptions options;
    options.batch_size = step.config.train.batch_size;
    options.ell = eval_ell(step.config, model);
    options.seed = derive_seed(step.config.seed, "eval");
    step.manifest.seeds["eval"] = options.seed;

    std::vector<SplitReport> reports;
    for (const auto &split : step.config.eval_splits) {
        auto report = evaluate_split(model, step.load_split(split), options);
        std::erase_if(report.accuracy, [&](const auto &kv) {
            return std::find(step.config.rules.begin(), step.config.rules.end(), kv.first) == step.config.rules.end();
        });
        reports.push_back(std::move(report));
    }

    Json j{{"batch_size", options.batch_size}, {"ell", options.ell}, {"reports", reports}};
    step.write_json(ctx.output_dir / "eval.json", j);
    step.write(ctx.output_dir / "eval.csv", reports_to_csv(reports));

    std::vector<std::string> expert_cols;
    for (std::size_t k = 0; k < model.config.experts; ++k) expert_cols.push_back("expert_" + std::to_string(k));
    std::vector<std::string> label_cols;
    for (std::size_t y = 0; y < model.config.num_labels; ++y) label_cols.push_back("label_" + std::to_string(y));

    std::string mix = "split";
    for (const auto &c : expert_cols) mix += "," + c;
    mix += '\n';
    for (const auto &r : reports) {
        mix += r.split;
        for (double v : r.mixture_profile) mix += "," + format_double(v);
        mix += '\n';
    }
    step.write(ctx.output_dir / "profiles" / "mixture_profile.csv", mix);
    for (const auto &r : reports)
        step.write(ctx.output_dir / "profiles" / ("expert_profile_" + r.split + ".csv"),
                   matrix_to_csv(r.expert_profile, "expert", label_cols));
    return step.finish();
}

RunManifest run_detect(const CommandContext &ctx) {
    Step step(ctx, "detect");
    const ModelParams model = step.load_model();
    ReportOptions options;
    options.batch_size = step.config.train.batch_size;
    options.ell = eval_ell(step.config, model);
    options.seed = derive_seed(step.config.seed, "eval");
    step.manifest.seeds["eval"] = options.seed;

    const Dataset reference_data = step.load_split(step.config.dev_split);
    const PenaltyStats reference =
        penalty_statistic(model, reference_data, options.batch_size, options.ell, options.seed);

    Json splits = Json::array();
    std::string csv = "split,reference_mean,reference_std,target_mean,target_std,score,threshold,shifted,rule_used,"
                      "gated_accuracy,estimated_accuracy\n";
    for (const auto &split : step.config.eval_splits) {
        const auto report = evaluate_split(model, step.load_split(split), options);
        const auto gated = gated_accuracy(report, reference, step.config.control_rule, step.config.shift_multiplier);
        splits.push_back(Json{{"split", split},
                              {"verdict", gated.verdict},
                              {"rule_used", std::string(rule_name(gated.rule_used))},
                              {"gated_accuracy", gated.accuracy},
                              {"estimated_accuracy", report.accuracy.at(DecisionRule::Estimated)}});
        csv += split + "," + format_double(reference.mean) + "," + format_double(reference.std) + "," +
               format_double(gated.verdict.target.mean) + "," + format_double(gated.verdict.target.std) + "," +
               format_double(gated.verdict.score) + "," + format_double(gated.verdict.threshold) + "," +
               (gated.verdict.shifted ? "true" : "false") + "," + std::string(rule_name(gated.rule_used)) + "," +
               format_double(gated.accuracy) + "," + format_double(report.accuracy.at(DecisionRule::Estimated)) +
               "\n";
    }
    Json j{{"reference_split", step.config.dev_split},
           {"reference", reference},
           {"control_rule", std::string(rule_name(step.config.control_rule))},
           {"splits", splits}};
    step.write_json(ctx.output_dir / "detect.json", j);
    step.write(ctx.output_dir / "detect.csv", csv);
    return step.finish();
}

RunManifest run_report(const CommandContext &ctx) {
    Step step(ctx, "report");
    Json summary{{"config_hash", step.manifest.config_hash}};
    auto include = [&](const char *key, const char *file) {
        const auto path = ctx.output_dir / file;
        if (ctx.files->exists(path)) summary[key] = Json::parse(step.read(path));
    };
    include("sweep", "sweep.json");
    include("train", "train_history.json");
    include("eval", "eval.json");
    include("detect", "detect.json");
    if (!summary.contains("eval")) throw MissingFileError("report: run `eval` first (eval.json missing)");

    std::string csv = "split,rule,accuracy,shifted,gated_rule,gated_accuracy\n";
    std::map<std::string, Json> detect_by_split;
    if (summary.contains("detect"))
        for (const auto &s : summary["detect"]["splits"]) detect_by_split[s["split"].get<std::string>()] = s;
    for (const auto &r : summary["eval"]["reports"]) {
        const auto split = r["split"].get<std::string>();
        const auto it = detect_by_split.find(split);
        for (const auto &[rule, acc] : r["accuracy"].items()) {
            csv += split + "," + rule + "," + format_double(acc.get<double>()) + ",";
            if (it != detect_by_split.end())
                csv += std::string(it->second["verdict"]["shifted"].get<bool>() ? "true" : "false") + "," +
                       it->second["rule_used"].get<std::string>() + "," +
                       format_double(it->second["gated_accuracy"].get<double>());
            else
                csv += ",,";
            csv += "\n";
        }
    }
    step.write_json(ctx.output_dir / "report.json", summary);
    step.write(ctx.output_dir / "report.csv", csv);
    return step.finish();
}

RunManifest run_command(const std::string &command, const CommandContext &ctx) {
    RunManifest m;
    if (command == "gen")
        m = run_gen(ctx);
    else if (command == "train")
        m = run_train(ctx);
    else if (command == "sweep")
        m = run_sweep(ctx);
    else if (command == "eval")
        m = run_eval(ctx);
    else if (command == "detect")
        m = run_detect(ctx);
    else if (command == "report")
        m = run_report(ctx);
    else
        throw UsageError("unknown command '" + command + "'");
    const auto path = ctx.output_dir / ("manifest_" + command + ".json");
    m.files.push_back(std::filesystem::relative(path, ctx.output_dir).generic_string());
    ctx.files->write(path, manifest_to_json(m).dump(2) + "\n");
    return m;
}

} // namespace mos
